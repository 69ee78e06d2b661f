//! JSON bodies of the `POST /generate` protocol.
//!
//! ```text
//! request:  {"inputs": [string...], "num_return_sequences": int, "max_length": int, "seed": int|null}
//! response: {"outputs": [[string...]...]}
//! ```
//!
//! `outputs[i]` holds the candidates for `inputs[i]`; every string is
//! space-joined lowercase tokens. Status 200 means full success, 503 means
//! the model is still loading and 400 rejects a malformed request.

use serde::{Deserialize, Serialize};

pub const GENERATE_PATH: &str = "/generate";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub inputs: Vec<String>,
    pub num_return_sequences: usize,
    pub max_length: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub outputs: Vec<Vec<String>>,
}
