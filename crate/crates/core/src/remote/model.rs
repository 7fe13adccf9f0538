use super::client::{RemoteClient, TokenLogprob};
use crate::error::Result;
use crate::experiments::{NextTokenModel, Prediction};
use crate::sequence::{Alphabet, Token};

/// A remote text model seen through an alphabet: tokens whose text (without
/// surrounding whitespace) names a symbol count toward it, everything else
/// goes to the `other` bucket.
#[derive(Debug)]
pub struct RemoteModel {
    client: RemoteClient,
    alphabet: Alphabet,
}

impl RemoteModel {
    pub fn new(client: RemoteClient, alphabet: Alphabet) -> Self {
        Self { client, alphabet }
    }

    pub fn client(&self) -> &RemoteClient {
        &self.client
    }

    pub fn render(&self, instruction: &str, prompt: &[Token]) -> String {
        let sep = &self.client.config().token_separator;
        let body: Vec<&str> = prompt.iter().map(|t| self.alphabet.token(*t)).collect();
        let body = body.join(sep);
        if instruction.is_empty() {
            body
        } else {
            format!("{instruction} {body}")
        }
    }

    fn symbol(&self, t: &TokenLogprob) -> Option<Token> {
        self.alphabet.index_of(t.token.trim())
    }
}

impl NextTokenModel for RemoteModel {
    fn vocab(&self) -> usize {
        self.alphabet.size()
    }

    fn predict(&self, instruction: &str, prompt: &[Token]) -> Result<Prediction> {
        let list = self
            .client
            .next_token_logprobs(&self.render(instruction, prompt))?;
        let mut probs = vec![0.0; self.alphabet.size()];
        let mut other = 0.0;
        for t in &list {
            match self.symbol(t) {
                Some(s) => probs[s] += t.prob(),
                None => other += t.prob(),
            }
        }
        let margin = match list.as_slice() {
            [a, b, ..] => a.prob() - b.prob(),
            [a] => a.prob(),
            [] => 0.0,
        };
        Ok(Prediction {
            probs,
            other,
            token: self.symbol(&list[0]),
            margin,
        })
    }

    fn describe(&self) -> String {
        format!("remote {} at {}", self.client.config().model, self.client.config().base_url)
    }
}
