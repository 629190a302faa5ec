//! Input encoders: vocabulary handling, fixed-length token sequences, the
//! n-gram convolutional text encoder, and the multi-scale image front end.

mod image;
mod text;
mod vocab;

pub use image::{encode_image_multiscale, ImageBackend, ImageInput, TinyConvSpec, TinyConvVars};
pub use text::{encode_text, TextEncoderVars};
pub use vocab::Vocab;

use crate::error::{Error, Result};

/// A token sequence of fixed length `l_d`: shorter inputs are PAD-padded,
/// longer ones truncated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<u32>,
}

impl TokenSequence {
    pub fn from_ids(ids: &[u32], l_d: usize) -> Self {
        let mut out = Vec::with_capacity(l_d);
        out.extend(ids.iter().take(l_d).copied());
        out.resize(l_d, Vocab::PAD);
        TokenSequence { ids: out }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub(crate) fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        for &id in &self.ids {
            if id as usize >= vocab_size {
                return Err(Error::TokenOutOfRange { id, vocab_size });
            }
        }
        Ok(())
    }
}
