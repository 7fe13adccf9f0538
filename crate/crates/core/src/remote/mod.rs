//! Next-token probing of models served behind a completions-style HTTP API.

mod client;
pub mod mock;
mod model;

pub use client::{
    prompt_pair_sensitivity, ApiFlavor, EndpointConfig, PromptPairRow, RemoteClient,
    RequestRecord, TokenLogprob,
};
pub use model::RemoteModel;
