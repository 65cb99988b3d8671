use serde::{Deserialize, Serialize};

use super::ModelError;

/// Number of coordinate bins shared by x and y.
pub const COORD_BINS: usize = 128;
/// Lower edge of the quantization range in meters.
pub const COORD_MIN: f64 = -32.0;
pub const BIN_SIZE: f64 = 0.5;
pub const HORIZON: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    /// Encoder depth of each branch.
    pub enc_layers: usize,
    pub fusion_layers: usize,
    pub dec_layers: usize,
    pub ffn_mult: usize,
    pub patch: usize,
    pub d_prime: usize,
    pub coord_bins: usize,
    pub horizon: usize,
    pub text_vocab: usize,
    pub max_prompt_len: usize,
}

impl ModelConfig {
    pub fn student(text_vocab: usize) -> Self {
        Self {
            d: 64,
            heads: 4,
            enc_layers: 2,
            fusion_layers: 1,
            dec_layers: 2,
            ffn_mult: 2,
            patch: 16,
            d_prime: 64,
            coord_bins: COORD_BINS,
            horizon: HORIZON,
            text_vocab,
            max_prompt_len: 96,
        }
    }

    pub fn teacher(text_vocab: usize) -> Self {
        Self {
            d: 128,
            enc_layers: 4,
            dec_layers: 4,
            ..Self::student(text_vocab)
        }
    }

    /// The gradcheck configuration: d=8, two heads, two waypoints.
    pub fn tiny(text_vocab: usize) -> Self {
        Self {
            d: 8,
            heads: 2,
            enc_layers: 1,
            fusion_layers: 1,
            dec_layers: 1,
            ffn_mult: 2,
            patch: 8,
            d_prime: 8,
            coord_bins: COORD_BINS,
            horizon: 2,
            text_vocab,
            max_prompt_len: 16,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    /// Coordinate bins plus BOS, EOS and PAD.
    pub fn vocab_coord(&self) -> usize {
        self.coord_bins + 3
    }

    pub fn bos(&self) -> usize {
        self.coord_bins
    }

    pub fn eos(&self) -> usize {
        self.coord_bins + 1
    }

    pub fn pad(&self) -> usize {
        self.coord_bins + 2
    }

    /// Decoder positions: one per coordinate.
    pub fn positions(&self) -> usize {
        2 * self.horizon
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |why: &str| Err(ModelError::InvalidConfig(why.to_string()));
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return bad("d must be a positive multiple of heads");
        }
        if !self.d.is_multiple_of(4) {
            return bad("d must be divisible by 4 for 2-D positional codes");
        }
        if self.patch == 0 || self.d_prime == 0 || self.ffn_mult == 0 {
            return bad("patch, d_prime and ffn_mult must be positive");
        }
        if self.coord_bins == 0 || self.horizon == 0 {
            return bad("coord_bins and horizon must be positive");
        }
        if self.text_vocab < 2 || self.max_prompt_len == 0 {
            return bad("text vocabulary needs at least the OOV id and one word");
        }
        Ok(())
    }
}
