//! Token vocabulary with reserved PAD/UNK ids and a thin text adapter.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, Clone)]
pub struct Vocab {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
}

impl Vocab {
    pub const PAD: u32 = 0;
    pub const UNK: u32 = 1;

    /// Build from the non-reserved tokens, ids assigned in iteration order
    /// starting at 2.
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut id_to_token = vec!["<pad>".to_string(), "<unk>".to_string()];
        let mut token_to_id = HashMap::new();
        for tok in tokens {
            let tok = tok.into();
            if token_to_id.contains_key(&tok) || tok == "<pad>" || tok == "<unk>" {
                return Err(Error::invalid(format!("duplicate or reserved token {tok:?}")));
            }
            token_to_id.insert(tok.clone(), id_to_token.len() as u32);
            id_to_token.push(tok);
        }
        Ok(Vocab { id_to_token, token_to_id })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // PAD and UNK are always present
    }

    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// One token per line; line number = id - 2 (the reserved ids are not
    /// written).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        for tok in &self.id_to_token[2..] {
            writeln!(f, "{tok}")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let mut tokens = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line?;
            if !line.is_empty() {
                tokens.push(line);
            }
        }
        Vocab::new(tokens)
    }

    /// Split text into ids: whitespace-separated chunks, with any chunk
    /// containing non-ASCII characters split further into codepoints (so
    /// unsegmented CJK text maps to per-character tokens). Unknown tokens
    /// map to UNK.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for chunk in text.split_whitespace() {
            if chunk.is_ascii() {
                ids.push(self.id(chunk));
            } else {
                let mut buf = [0u8; 4];
                for ch in chunk.chars() {
                    ids.push(self.id(ch.encode_utf8(&mut buf)));
                }
            }
        }
        ids
    }
}
