use alloc::format;

use serde::{Deserialize, Serialize};

use crate::docid::SchemeKind;
use crate::error::{Error, Result};
use crate::tokenizer::NUM_SPECIAL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Output projection tied to the decoder embedding table.
    Standard,
    /// Separate `corpus_size x d_model` projection, one decode step.
    Atomic,
    /// Prefix-adaptive projection produced by an auxiliary decoder stack.
    Pawa,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Standard => "standard",
            HeadKind::Atomic => "atomic",
            HeadKind::Pawa => "pawa",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Layers in each of the encoder and decoder (and the PAWA stack).
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub d_ff: usize,
    pub input_vocab_size: usize,
    /// Decoder vocabulary; for atomic heads, the corpus size.
    pub target_vocab_size: usize,
    pub max_input_len: usize,
    pub max_target_len: usize,
    pub head_kind: HeadKind,
    pub dropout_rate: f64,
    /// Decoder reads and writes the encoder's vocabulary (Naive identifiers).
    pub shared_embeddings: bool,
    pub scheme: SchemeKind,
}

impl ModelConfig {
    /// CPU-sized defaults: 2+2 layers, d_model 128, 4 heads, d_ff 512.
    ///
    /// `scheme_vocab` is the identifier vocabulary of the docid scheme and
    /// `max_id_len` its longest identifier.
    pub fn desk(scheme: SchemeKind, input_vocab_size: usize, scheme_vocab: usize, max_id_len: usize) -> Self {
        let (head_kind, target_vocab_size, shared) = match scheme {
            SchemeKind::Atomic => (HeadKind::Atomic, scheme_vocab, true),
            SchemeKind::Naive => (HeadKind::Standard, input_vocab_size, true),
            SchemeKind::Semantic | SchemeKind::Semantic2D => {
                (HeadKind::Standard, NUM_SPECIAL as usize + scheme_vocab, false)
            }
        };
        ModelConfig {
            num_layers: 2,
            d_model: 128,
            num_heads: 4,
            d_ff: 512,
            input_vocab_size,
            target_vocab_size,
            max_input_len: 128,
            max_target_len: if scheme == SchemeKind::Atomic { 1 } else { max_id_len + 1 },
            head_kind,
            dropout_rate: 0.1,
            shared_embeddings: shared,
            scheme,
        }
    }

    /// T5-Base shaped config (d_model 768, 12+12 layers, 32128 vocab) used for
    /// cost accounting.
    pub fn base(scheme: SchemeKind, corpus_size: usize, id_vocab: usize) -> Self {
        Self::scaled(scheme, corpus_size, id_vocab, 768, 12, 12, 3072)
    }

    /// T5-Large shaped config (d_model 1024, 24+24 layers).
    pub fn large(scheme: SchemeKind, corpus_size: usize, id_vocab: usize) -> Self {
        Self::scaled(scheme, corpus_size, id_vocab, 1024, 24, 16, 4096)
    }

    fn scaled(scheme: SchemeKind, corpus_size: usize, id_vocab: usize, d: usize, layers: usize, heads: usize, ff: usize) -> Self {
        let vocab = 32_128;
        let mut c = match scheme {
            SchemeKind::Atomic => Self::desk(scheme, vocab, corpus_size, 1),
            _ => Self::desk(scheme, vocab, id_vocab, 8),
        };
        c.d_model = d;
        c.num_layers = layers;
        c.num_heads = heads;
        c.d_ff = ff;
        if scheme == SchemeKind::Semantic2D {
            c.head_kind = HeadKind::Pawa;
        }
        c
    }

    pub fn with_pawa(mut self) -> Self {
        self.head_kind = HeadKind::Pawa;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidConfig(m));
        if self.d_model == 0 || self.num_heads == 0 || self.d_model % self.num_heads != 0 {
            return bad(format!("d_model {} must be a positive multiple of num_heads {}", self.d_model, self.num_heads));
        }
        if self.num_layers == 0 || self.d_ff == 0 {
            return bad("num_layers and d_ff must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.input_vocab_size <= NUM_SPECIAL as usize || self.max_input_len == 0 || self.max_target_len == 0 {
            return bad("vocabulary and length limits must be positive".into());
        }
        match (self.head_kind, self.scheme) {
            (HeadKind::Atomic, SchemeKind::Atomic) => {
                if self.max_target_len != 1 {
                    return bad("atomic identifiers are one token long".into());
                }
            }
            (HeadKind::Atomic, s) | (HeadKind::Standard | HeadKind::Pawa, s @ SchemeKind::Atomic) => {
                return bad(format!("head {} does not fit {s} identifiers", self.head_kind.as_str()));
            }
            (HeadKind::Pawa, SchemeKind::Semantic2D) | (HeadKind::Standard, _) => {}
            (HeadKind::Pawa, s) => return bad(format!("PAWA decoding needs 2D semantic identifiers, got {s}")),
        }
        if self.head_kind != HeadKind::Atomic && self.shared_embeddings && self.target_vocab_size != self.input_vocab_size {
            return bad("shared embeddings need equal input and target vocabularies".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_defaults_validate() {
        for s in [SchemeKind::Atomic, SchemeKind::Naive, SchemeKind::Semantic, SchemeKind::Semantic2D] {
            ModelConfig::desk(s, 500, 30, 4).validate().unwrap();
        }
        ModelConfig::desk(SchemeKind::Semantic2D, 500, 120, 4).with_pawa().validate().unwrap();
    }

    #[test]
    fn pawa_requires_2d() {
        let c = ModelConfig::desk(SchemeKind::Semantic, 500, 30, 4).with_pawa();
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn heads_must_divide() {
        let mut c = ModelConfig::desk(SchemeKind::Naive, 500, 256, 4);
        c.num_heads = 3;
        assert!(c.validate().is_err());
    }
}
