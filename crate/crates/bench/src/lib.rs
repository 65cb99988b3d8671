//! Fixtures shared by the benchmarks.

use v2x_core::scenario::generate_dataset;
use v2x_core::Sample;
use v2x_core::{Model, ModelConfig, RngSeed, TextTokenizer};

pub fn scene() -> Sample {
    generate_dataset(1, RngSeed(0)).remove(0)
}

pub fn student() -> (Model, TextTokenizer) {
    let tok = TextTokenizer::standard();
    let model = Model::init(ModelConfig::student(tok.vocab_size()), RngSeed(1)).expect("student config is valid");
    (model, tok)
}
