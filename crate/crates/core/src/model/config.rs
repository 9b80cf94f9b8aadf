use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderMode {
    /// Mask queries attend only to encoder outputs.
    CrossAttention,
    /// Ablation: mask queries and encoder outputs share one self-attention stream.
    SelfAttention,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    Network,
    Random,
}

impl fmt::Display for DecoderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderMode::CrossAttention => "cross",
            DecoderMode::SelfAttention => "self",
        })
    }
}

impl FromStr for DecoderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross" => Ok(DecoderMode::CrossAttention),
            "self" => Ok(DecoderMode::SelfAttention),
            _ => Err(Error::Invalid(format!("decoder must be cross|self, got {s:?}"))),
        }
    }
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskMode::Network => "network",
            MaskMode::Random => "random",
        })
    }
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "network" => Ok(MaskMode::Network),
            "random" => Ok(MaskMode::Random),
            _ => Err(Error::Invalid(format!("mask mode must be network|random, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_emb: usize,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    pub heads: usize,
    pub d_mlp: usize,
    pub token_dim: usize,
    pub max_tokens: usize,
    pub classifier_hidden: usize,
    pub classes: usize,
    pub decoder_mode: DecoderMode,
    pub mask_mode: MaskMode,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_emb: 96,
            encoder_depth: 4,
            decoder_depth: 2,
            heads: 6,
            d_mlp: 256,
            token_dim: 256,
            max_tokens: 256,
            classifier_hidden: 64,
            classes: 3,
            decoder_mode: DecoderMode::CrossAttention,
            mask_mode: MaskMode::Network,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_emb", self.d_emb),
            ("encoder_depth", self.encoder_depth),
            ("decoder_depth", self.decoder_depth),
            ("heads", self.heads),
            ("d_mlp", self.d_mlp),
            ("token_dim", self.token_dim),
            ("max_tokens", self.max_tokens),
            ("classifier_hidden", self.classifier_hidden),
            ("classes", self.classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Invalid(format!("{name} must be >= 1")));
        }
        if !self.d_emb.is_multiple_of(self.heads) {
            return Err(Error::Invalid(format!(
                "d_emb {} is not divisible by {} heads",
                self.d_emb, self.heads
            )));
        }
        if self.d_emb < 2 {
            return Err(Error::Invalid("d_emb must be >= 2 for layer norm".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_emb / self.heads
    }

    pub fn total_decoder_heads(&self) -> usize {
        self.decoder_depth * self.heads
    }

    /// `key = value` lines, the form stored in checkpoints.
    pub fn to_kv(&self) -> String {
        format!(
            "d_emb = {}\nencoder_depth = {}\ndecoder_depth = {}\nheads = {}\nd_mlp = {}\n\
             token_dim = {}\nmax_tokens = {}\nclassifier_hidden = {}\nclasses = {}\n\
             decoder = {}\nmask_mode = {}\nlayer_norm_eps = {}\n",
            self.d_emb,
            self.encoder_depth,
            self.decoder_depth,
            self.heads,
            self.d_mlp,
            self.token_dim,
            self.max_tokens,
            self.classifier_hidden,
            self.classes,
            self.decoder_mode,
            self.mask_mode,
            self.layer_norm_eps
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("bad config line {line:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field by its config key. Returns `Ok(false)` when the key is
    /// not a model key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let int = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Invalid(format!("{key}: expected an integer, got {v:?}")))
        };
        match key {
            "d_emb" => self.d_emb = int(value)?,
            "encoder_depth" => self.encoder_depth = int(value)?,
            "decoder_depth" => self.decoder_depth = int(value)?,
            "heads" => self.heads = int(value)?,
            "d_mlp" => self.d_mlp = int(value)?,
            "token_dim" => self.token_dim = int(value)?,
            "max_tokens" => self.max_tokens = int(value)?,
            "classifier_hidden" => self.classifier_hidden = int(value)?,
            "classes" => self.classes = int(value)?,
            "decoder" => self.decoder_mode = value.parse()?,
            "mask_mode" => self.mask_mode = value.parse()?,
            "layer_norm_eps" => {
                self.layer_norm_eps = value
                    .parse()
                    .map_err(|_| Error::Invalid(format!("{key}: expected a number")))?
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_expose_twelve_decoder_heads() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.total_decoder_heads(), 12);
    }

    #[test]
    fn kv_round_trip() {
        let c = ModelConfig {
            d_emb: 8,
            heads: 2,
            decoder_mode: DecoderMode::SelfAttention,
            mask_mode: MaskMode::Random,
            ..ModelConfig::default()
        };
        assert_eq!(ModelConfig::from_kv(&c.to_kv()).unwrap(), c);
    }

    #[test]
    fn indivisible_heads_rejected() {
        let c = ModelConfig {
            d_emb: 128,
            heads: 6,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
