//! Tokenization, normalization, framing, and the vocabulary.
//!
//! Content is split on `.`, `,`, `:`, `/` and whitespace. Hexadecimal values
//! become `[HEX]`, decimal integers of value 10 or more become `[NUM]`, every
//! sequence is prefixed with `[CLS]`, truncated to a fixed length `u`, and
//! right-padded with `[PAD]`. Out-of-vocabulary tokens encode to the same id
//! as the augmentation mask `[MASK]`, so masking during calibration simulates
//! exactly the unseen-token case the decision boundary must tolerate.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "[PAD]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const MASK_TOKEN: &str = "[MASK]";
pub const HEX_TOKEN: &str = "[HEX]";
pub const NUM_TOKEN: &str = "[NUM]";

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const MASK_ID: u32 = 2;
pub const HEX_ID: u32 = 3;
pub const NUM_ID: u32 = 4;

/// The special tokens in reserved-id order.
pub const SPECIAL_TOKENS: [&str; 5] = [PAD_TOKEN, CLS_TOKEN, MASK_TOKEN, HEX_TOKEN, NUM_TOKEN];

/// One vocabulary word or special placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token(String);

impl Token {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        debug_assert!(!text.is_empty(), "tokens must be non-empty");
        Token(text)
    }

    pub fn pad() -> Self {
        Token(PAD_TOKEN.into())
    }

    pub fn cls() -> Self {
        Token(CLS_TOKEN.into())
    }

    pub fn mask() -> Self {
        Token(MASK_TOKEN.into())
    }

    pub fn text(&self) -> &str {
        &self.0
    }

    pub fn is_special(&self) -> bool {
        SPECIAL_TOKENS.contains(&self.0.as_str())
    }

    pub fn is_pad(&self) -> bool {
        self.0 == PAD_TOKEN
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A normalized, fixed-length token sequence: `[CLS]` first, content tokens,
/// then `[PAD]` suffix out to length `u`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Vec<Token>,
    origin_length: usize,
}

impl TokenSequence {
    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Pre-padding length including the `[CLS]` prefix.
    pub fn origin_length(&self) -> usize {
        self.origin_length
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Positions eligible for masking: everything that is neither the
    /// `[CLS]` prefix nor padding.
    pub fn maskable_positions(&self) -> Vec<usize> {
        (1..self.origin_length).collect()
    }

    /// Copy of this sequence with the given positions replaced by `[MASK]`.
    pub(crate) fn with_masked(&self, positions: &[usize]) -> TokenSequence {
        let mut tokens = self.tokens.clone();
        for &p in positions {
            debug_assert!(p > 0 && p < self.origin_length);
            tokens[p] = Token::mask();
        }
        TokenSequence {
            tokens,
            origin_length: self.origin_length,
        }
    }
}

/// Split content on `.`, `,`, `:`, `/` and whitespace, dropping empty
/// fragments. No normalization happens here.
pub fn tokenize_content(content: &str) -> Vec<Token> {
    content
        .split(|c: char| c == '.' || c == ',' || c == ':' || c == '/' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(Token::new)
        .collect()
}

fn is_hex_literal(s: &str) -> bool {
    if let Some(rest) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        return !rest.is_empty() && rest.chars().all(|c| c.is_ascii_hexdigit());
    }
    s.len() >= 8
        && s.chars().all(|c| c.is_ascii_hexdigit())
        && s.chars().any(|c| c.is_ascii_alphabetic())
}

fn is_large_decimal(s: &str) -> bool {
    if s.is_empty() || !s.chars().all(|c| c.is_ascii_digit()) {
        return false;
    }
    match s.parse::<u128>() {
        Ok(v) => v >= 10,
        // all-digit strings too long for u128 are certainly >= 10
        Err(_) => true,
    }
}

/// Replace hexadecimal values with `[HEX]` and decimal integers of value 10
/// or more with `[NUM]`; everything else passes through unchanged.
pub fn normalize_tokens(tokens: Vec<Token>) -> Vec<Token> {
    tokens
        .into_iter()
        .map(|t| {
            if t.is_special() {
                t
            } else if is_hex_literal(t.text()) {
                Token::new(HEX_TOKEN)
            } else if is_large_decimal(t.text()) {
                Token::new(NUM_TOKEN)
            } else {
                t
            }
        })
        .collect()
}

/// Prefix with `[CLS]`, truncate from the right to length `u`, and pad with
/// `[PAD]` to exactly `u` tokens.
pub fn frame_sequence(tokens: &[Token], u: usize) -> TokenSequence {
    assert!(u >= 2, "frame length must be at least 2");
    let origin_length = (1 + tokens.len()).min(u);
    let mut framed = Vec::with_capacity(u);
    framed.push(Token::cls());
    framed.extend(tokens.iter().take(u - 1).cloned());
    while framed.len() < u {
        framed.push(Token::pad());
    }
    TokenSequence {
        tokens: framed,
        origin_length,
    }
}

/// Tokenize, normalize, and frame one message content.
pub fn prepare_sequence(content: &str, u: usize) -> TokenSequence {
    frame_sequence(&normalize_tokens(tokenize_content(content)), u)
}

/// Bijective word/id map with the five specials at reserved ids 0..=4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    word_to_id: HashMap<String, u32>,
    id_to_word: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    /// A vocabulary holding only the special tokens.
    pub fn new() -> Self {
        let mut vocab = Vocabulary {
            word_to_id: HashMap::new(),
            id_to_word: Vec::new(),
        };
        for special in SPECIAL_TOKENS {
            vocab.insert(special);
        }
        vocab
    }

    fn insert(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.word_to_id.get(word) {
            return id;
        }
        let id = self.id_to_word.len() as u32;
        self.word_to_id.insert(word.to_string(), id);
        self.id_to_word.push(word.to_string());
        id
    }

    pub fn len(&self) -> usize {
        self.id_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_word.is_empty()
    }

    pub fn id_of(&self, text: &str) -> Option<u32> {
        self.word_to_id.get(text).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.id_to_word.get(id as usize).map(|s| s.as_str())
    }

    pub fn contains(&self, text: &str) -> bool {
        self.word_to_id.contains_key(text)
    }

    /// Words in id order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.id_to_word.iter().map(|s| s.as_str())
    }

    /// Rebuild a vocabulary from an id-ordered word list, validating that the
    /// specials sit at their reserved ids and entries are unique.
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let id_to_word: Vec<String> = words.into_iter().collect();
        for (expect_id, special) in SPECIAL_TOKENS.iter().enumerate() {
            if id_to_word.get(expect_id).map(|s| s.as_str()) != Some(*special) {
                return Err(Error::Vocabulary(format!(
                    "special token {special} missing from reserved id {expect_id}"
                )));
            }
        }
        let mut word_to_id = HashMap::with_capacity(id_to_word.len());
        for (id, word) in id_to_word.iter().enumerate() {
            if word.is_empty() {
                return Err(Error::Vocabulary(format!("empty token at id {id}")));
            }
            if word_to_id.insert(word.clone(), id as u32).is_some() {
                return Err(Error::Vocabulary(format!("duplicate token '{word}'")));
            }
        }
        Ok(Vocabulary {
            word_to_id,
            id_to_word,
        })
    }

    /// Persist as versioned text: header `a2log-vocab v1`, then one
    /// `id<TAB>token` per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "a2log-vocab v1").map_err(|e| Error::io(path, e))?;
        for (id, word) in self.id_to_word.iter().enumerate() {
            writeln!(out, "{id}\t{word}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Vocabulary("empty vocabulary file".into()))?
            .map_err(|e| Error::io(path, e))?;
        if header.trim() != "a2log-vocab v1" {
            return Err(Error::Vocabulary(format!(
                "unsupported vocabulary header '{header}'"
            )));
        }
        let mut id_to_word = Vec::new();
        let mut word_to_id = HashMap::new();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let (id_str, word) = line.split_once('\t').ok_or_else(|| {
                Error::Vocabulary(format!("line {}: missing tab separator", n + 2))
            })?;
            let id: u32 = id_str
                .parse()
                .map_err(|_| Error::Vocabulary(format!("line {}: bad id '{id_str}'", n + 2)))?;
            if id as usize != id_to_word.len() {
                return Err(Error::Vocabulary(format!(
                    "ids must be dense and ascending; expected {}, got {id}",
                    id_to_word.len()
                )));
            }
            if word_to_id.insert(word.to_string(), id).is_some() {
                return Err(Error::Vocabulary(format!("duplicate token '{word}'")));
            }
            id_to_word.push(word.to_string());
        }
        for (expect_id, special) in SPECIAL_TOKENS.iter().enumerate() {
            if id_to_word.get(expect_id).map(|s| s.as_str()) != Some(*special) {
                return Err(Error::Vocabulary(format!(
                    "special token {special} missing from reserved id {expect_id}"
                )));
            }
        }
        Ok(Vocabulary {
            word_to_id,
            id_to_word,
        })
    }
}

/// Build the vocabulary over training sequences: the five specials plus every
/// distinct non-special token, ids assigned by first occurrence.
pub fn build_vocabulary(train_sequences: &[TokenSequence]) -> Vocabulary {
    let mut vocab = Vocabulary::new();
    for seq in train_sequences {
        for token in seq.tokens() {
            if !token.is_special() {
                vocab.insert(token.text());
            }
        }
    }
    vocab
}

/// Map a framed sequence to token ids; tokens absent from the vocabulary map
/// to the id of `[MASK]`. Total: always returns ids in `[0, |V|)`.
pub fn encode_ids(seq: &TokenSequence, vocab: &Vocabulary) -> Vec<u32> {
    seq.tokens()
        .iter()
        .map(|t| vocab.id_of(t.text()).unwrap_or(MASK_ID))
        .collect()
}

/// Inverse of [`encode_ids`] for in-vocabulary ids.
pub fn decode_ids(ids: &[u32], vocab: &Vocabulary) -> Result<Vec<Token>> {
    ids.iter()
        .map(|&id| {
            vocab
                .word(id)
                .map(Token::new)
                .ok_or_else(|| Error::Vocabulary(format!("id {id} out of range")))
        })
        .collect()
}
