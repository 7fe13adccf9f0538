use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a token in its [`Alphabet`].
pub type Token = usize;

/// Finite ordered token set; a token's index is its position in the list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Alphabet {
    tokens: Vec<String>,
}

impl Alphabet {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(Error::invalid("alphabet must be nonempty"));
        }
        for (i, t) in tokens.iter().enumerate() {
            if tokens[..i].contains(t) {
                return Err(Error::invalid(format!("duplicate token {t:?} in alphabet")));
            }
        }
        Ok(Self { tokens })
    }

    /// `{"0", "1"}`
    pub fn binary() -> Self {
        Self {
            tokens: vec!["0".into(), "1".into()],
        }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, index: Token) -> &str {
        &self.tokens[index]
    }

    pub fn index_of(&self, text: &str) -> Option<Token> {
        self.tokens.iter().position(|t| t == text)
    }

    pub fn contains(&self, token: Token) -> bool {
        token < self.tokens.len()
    }

    fn single_chars(&self) -> bool {
        self.tokens.iter().all(|t| t.chars().count() == 1)
    }

    /// Concatenated token texts, space-separated when any token is longer
    /// than one character.
    pub fn render(&self, seq: &[Token]) -> String {
        let sep = if self.single_chars() { "" } else { " " };
        seq.iter().map(|t| self.token(*t)).collect::<Vec<_>>().join(sep)
    }

    /// Inverse of [`Alphabet::render`].
    pub fn parse(&self, text: &str) -> Result<Vec<Token>> {
        let lookup = |piece: &str| {
            self.index_of(piece)
                .ok_or_else(|| Error::TokenOutOfAlphabet(piece.to_string()))
        };
        if self.single_chars() {
            text.chars().map(|c| lookup(&c.to_string())).collect()
        } else {
            text.split_whitespace().map(lookup).collect()
        }
    }
}

impl Default for Alphabet {
    fn default() -> Self {
        Self::binary()
    }
}

impl TryFrom<Vec<String>> for Alphabet {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::new(tokens)
    }
}

impl From<Alphabet> for Vec<String> {
    fn from(a: Alphabet) -> Self {
        a.tokens
    }
}
