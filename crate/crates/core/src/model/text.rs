//! Closed-vocabulary prompt tokenizer.
//!
//! Text is lowercased and split on whitespace; leading `(` and trailing
//! `) , . ; :` are peeled off as their own tokens so that "(2.0, -1.0)."
//! yields `( 2.0 , -1.0 ) .`. Id 0 is the out-of-vocabulary token.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ModelError;

pub const OOV: &str = "<oov>";
pub const OOV_ID: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTokens {
    pub ids: Vec<usize>,
}

impl PromptTokens {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct TextTokenizer {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        let mut s = lower.as_str();
        while let Some(rest) = s.strip_prefix('(') {
            out.push("(".to_string());
            s = rest;
        }
        let mut tail = Vec::new();
        while let Some(c) = s.chars().last().filter(|c| ").,;:".contains(*c)) {
            tail.push(c.to_string());
            s = &s[..s.len() - c.len_utf8()];
        }
        if !s.is_empty() {
            out.push(s.to_string());
        }
        out.extend(tail.into_iter().rev());
    }
    out
}

impl TextTokenizer {
    /// Builds the vocabulary from `words`, deduplicated, in first-seen order after the OOV id.
    pub fn new<S: AsRef<str>>(words: &[S]) -> Self {
        let mut tok = Self {
            words: vec![OOV.to_string()],
            index: HashMap::new(),
        };
        tok.index.insert(OOV.to_string(), OOV_ID);
        for w in words {
            let w = w.as_ref().to_lowercase();
            if !tok.index.contains_key(&w) {
                tok.index.insert(w.clone(), tok.words.len());
                tok.words.push(w);
            }
        }
        tok
    }

    /// Tokenizer over the scenario generator's template vocabulary.
    pub fn standard() -> Self {
        Self::new(&crate::scenario::vocabulary())
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(OOV_ID)
    }

    /// Tokenizes and truncates to `max_len`.
    pub fn encode(&self, text: &str, max_len: usize) -> Result<PromptTokens, ModelError> {
        let mut ids: Vec<usize> = split_words(text).iter().map(|w| self.id(w)).collect();
        if ids.is_empty() {
            return Err(ModelError::EmptyPrompt);
        }
        ids.truncate(max_len);
        Ok(PromptTokens { ids })
    }
}
