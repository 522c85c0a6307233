//! Tokenization, the trainable caption encoder and templated captions.

mod caption;
mod encoder;

pub use caption::{caption_lexicon, parse_caption, referent_for, synth_caption, Action, CaptionLabel, Direction, MotionScript, Referent};
pub use encoder::TextEncoder;

use std::collections::HashMap;

use thiserror::Error;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BEGIN: u32 = 2;
pub const END: u32 = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<begin>", "<end>"];

/// Longest token sequence, counting the begin and end markers.
pub const MAX_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TextError {
    #[error("caption has {len} tokens, limit is {max}")]
    OverLength { len: usize, max: usize },
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
}

/// Lowercases, drops punctuation and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Dense token ids: the four special tokens, then words in sorted order.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set: Vec<String> = words.into_iter().flat_map(tokenize).collect();
        set.sort();
        set.dedup();
        let tokens = SPECIALS.iter().map(|s| s.to_string()).chain(set).collect();
        Self::from_tokens(tokens).expect("built vocabulary is valid")
    }

    /// Vocabulary covering every word the caption templates can emit.
    pub fn from_lexicon() -> Self {
        let lex = caption_lexicon();
        Self::build(lex.iter().map(String::as_str))
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, TextError> {
        if tokens.len() < SPECIALS.len() || tokens[..4] != SPECIALS {
            return Err(TextError::Vocabulary("must start with the four special tokens".into()));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(TextError::Vocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, word: &str) -> u32 {
        self.ids.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Word ids without begin/end markers.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|w| self.id(w)).collect()
    }

    /// One token per line.
    pub fn to_lines(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_lines(text: &str) -> Result<Self, TextError> {
        Self::from_tokens(text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
    }
}

/// A caption with its padded id sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct TextPrompt {
    pub raw: String,
    /// `[begin, words.., end, pad..]`, length `max_len`.
    pub ids: Vec<u32>,
    /// Number of non-pad ids.
    pub valid: usize,
}

impl TextPrompt {
    pub fn new(vocab: &Vocabulary, raw: &str) -> Result<Self, TextError> {
        Self::with_max_len(vocab, raw, MAX_LEN)
    }

    pub fn with_max_len(vocab: &Vocabulary, raw: &str, max_len: usize) -> Result<Self, TextError> {
        let mut ids = vec![BEGIN];
        ids.extend(vocab.encode(raw));
        ids.push(END);
        if ids.len() > max_len {
            return Err(TextError::OverLength {
                len: ids.len(),
                max: max_len,
            });
        }
        let valid = ids.len();
        ids.resize(max_len, PAD);
        Ok(Self {
            raw: raw.to_string(),
            ids,
            valid,
        })
    }

    pub fn valid_ids(&self) -> &[u32] {
        &self.ids[..self.valid]
    }
}
