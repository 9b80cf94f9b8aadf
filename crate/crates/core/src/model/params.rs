use netmae_autograd::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Norm {
    pub gamma: usize,
    pub beta: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderBlock {
    pub norm1: Norm,
    pub attn: Attention,
    pub norm2: Norm,
    pub mlp: Mlp,
}

/// `norm_kv` normalizes the encoder context; the self-attention ablation
/// leaves it unused.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderBlock {
    pub norm_q: Norm,
    pub norm_kv: Norm,
    pub attn: Attention,
    pub norm2: Norm,
    pub mlp: Mlp,
}

/// Indices of every parameter tensor, in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub embed: Linear,
    pub pos: usize,
    pub mask_token: usize,
    pub encoder: Vec<EncoderBlock>,
    pub decoder: Vec<DecoderBlock>,
    pub decoder_norm: Norm,
    pub recon: Linear,
    pub cls_hidden: Linear,
    pub cls_out: Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Xavier,
    Zeros,
    Ones,
    Normal002,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    inits: Vec<Init>,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape.to_vec());
        self.inits.push(init);
        self.names.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.add(format!("{name}.weight"), &[fan_in, fan_out], Init::Xavier),
            b: self.add(format!("{name}.bias"), &[fan_out], Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            gamma: self.add(format!("{name}.gamma"), &[d], Init::Ones),
            beta: self.add(format!("{name}.beta"), &[d], Init::Zeros),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            out: self.linear(&format!("{name}.out"), d, d),
        }
    }

    fn mlp(&mut self, name: &str, d: usize, hidden: usize) -> Mlp {
        Mlp {
            fc1: self.linear(&format!("{name}.fc1"), d, hidden),
            fc2: self.linear(&format!("{name}.fc2"), hidden, d),
        }
    }
}

fn build(config: &ModelConfig) -> (Layout, Builder) {
    let d = config.d_emb;
    let mut b = Builder {
        names: vec![],
        shapes: vec![],
        inits: vec![],
    };
    let embed = b.linear("embed", config.token_dim, d);
    let pos = b.add("pos_embed".into(), &[config.max_tokens, d], Init::Normal002);
    let mask_token = b.add("mask_token".into(), &[1, d], Init::Normal002);
    let encoder = (0..config.encoder_depth)
        .map(|i| {
            let n = format!("encoder.{i}");
            EncoderBlock {
                norm1: b.norm(&format!("{n}.norm1"), d),
                attn: b.attention(&format!("{n}.attn"), d),
                norm2: b.norm(&format!("{n}.norm2"), d),
                mlp: b.mlp(&format!("{n}.mlp"), d, config.d_mlp),
            }
        })
        .collect();
    let decoder = (0..config.decoder_depth)
        .map(|i| {
            let n = format!("decoder.{i}");
            DecoderBlock {
                norm_q: b.norm(&format!("{n}.norm_q"), d),
                norm_kv: b.norm(&format!("{n}.norm_kv"), d),
                attn: b.attention(&format!("{n}.attn"), d),
                norm2: b.norm(&format!("{n}.norm2"), d),
                mlp: b.mlp(&format!("{n}.mlp"), d, config.d_mlp),
            }
        })
        .collect();
    let decoder_norm = b.norm("decoder.norm", d);
    let recon = b.linear("recon", d, config.token_dim);
    let cls_hidden = b.linear("cls.hidden", d, config.classifier_hidden);
    let cls_out = b.linear("cls.out", config.classifier_hidden, config.classes);
    (
        Layout {
            embed,
            pos,
            mask_token,
            encoder,
            decoder,
            decoder_norm,
            recon,
            cls_hidden,
            cls_out,
        },
        b,
    )
}

/// All learnable parameters plus the configuration that shapes them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    /// Seed the parameters were initialized from.
    pub seed: u64,
    pub layout: Layout,
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl ModelState {
    /// Fresh parameters: Xavier-uniform linear weights, zero biases, unit
    /// norm gains, and N(0, 0.02²) positional table and mask token.
    pub fn init(config: ModelConfig, seed_value: u64) -> Result<Self> {
        config.validate()?;
        let (layout, builder) = build(&config);
        let mut rng = seed::rng(seed_value, "init", 0);
        let normal = Normal::new(0.0, 0.02).expect("valid sd");
        let params = builder
            .shapes
            .iter()
            .zip(&builder.inits)
            .map(|(shape, init)| {
                let n: usize = shape.iter().product();
                let data: Vec<f64> = match init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::Normal002 => (0..n).map(|_| normal.sample(&mut rng)).collect(),
                    Init::Xavier => {
                        let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                        let u = Uniform::new_inclusive(-limit, limit);
                        (0..n).map(|_| u.sample(&mut rng)).collect()
                    }
                };
                Tensor::new(shape, data).expect("builder shape")
            })
            .collect();
        Ok(Self {
            config,
            seed: seed_value,
            layout,
            names: builder.names,
            params,
        })
    }

    /// Rebuilds a state from stored tensors, checking names and shapes
    /// against the layout implied by `config`.
    pub fn from_parts(config: ModelConfig, seed: u64, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let (layout, builder) = build(&config);
        if named.len() != builder.names.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                builder.names.len(),
                named.len()
            )));
        }
        let mut params = Vec::with_capacity(named.len());
        for ((name, t), (want_name, want_shape)) in named.into_iter().zip(builder.names.iter().zip(&builder.shapes)) {
            if &name != want_name || t.shape() != want_shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} {:?} does not match layout entry {want_name} {want_shape:?}",
                    t.shape()
                )));
            }
            params.push(t);
        }
        Ok(Self {
            config,
            seed,
            layout,
            names: builder.names,
            params,
        })
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn param(&self, i: usize) -> &Tensor {
        &self.params[i]
    }

    pub fn param_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.params[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Parameter indices belonging to the classification head.
    pub fn head_indices(&self) -> Vec<usize> {
        let l = &self.layout;
        vec![l.cls_hidden.w, l.cls_hidden.b, l.cls_out.w, l.cls_out.b]
    }

    /// Indices whose name starts with `prefix`.
    pub fn indices_with_prefix(&self, prefix: &str) -> Vec<usize> {
        self.names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.starts_with(prefix))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn zero(&mut self, indices: &[usize]) {
        for &i in indices {
            self.params[i].data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Overwrites every parameter with fresh random draws of the given
    /// scale; used by tests that need generic (non-initial) weights.
    pub fn randomize<R: Rng + ?Sized>(&mut self, rng: &mut R, scale: f64) {
        for p in &mut self.params {
            for x in p.data_mut() {
                *x = rng.gen_range(-scale..scale);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_finite() {
        let c = ModelConfig::default();
        let a = ModelState::init(c.clone(), 5).unwrap();
        let b = ModelState::init(c, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.params().iter().all(|p| p.first_non_finite().is_none()));
        assert_eq!(a.names()[0], "embed.weight");
        assert_eq!(a.param(a.layout.pos).shape(), &[256, 96]);
    }

    #[test]
    fn from_parts_rejects_shape_drift() {
        let a = ModelState::init(ModelConfig::default(), 1).unwrap();
        let mut named: Vec<_> = a.names().iter().cloned().zip(a.params().iter().cloned()).collect();
        named[0].1 = Tensor::zeros(&[3, 3]);
        assert!(ModelState::from_parts(a.config.clone(), 1, named).is_err());
    }
}
