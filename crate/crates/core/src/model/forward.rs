//! Graph construction for the encoder, both decoders and the heads.

use netmae_autograd::{Graph, Tensor, Var};

use super::config::DecoderMode;
use super::params::{Attention, Linear, Mlp, ModelState, Norm};
use crate::data::{MaskPlan, TokenGrid};
use crate::error::{Error, Result};

/// Graph handles for every parameter of a [`ModelState`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps vars already on the tape, one per parameter in declaration order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, i: usize) -> Var {
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Puts every parameter on the tape; those for which `trainable` is true
/// become gradient-tracking leaves.
pub fn bind(g: &mut Graph, state: &ModelState, trainable: impl Fn(usize) -> bool) -> Result<Bound> {
    let vars = state
        .params()
        .iter()
        .enumerate()
        .map(|(i, t)| g.leaf(t.clone(), trainable(i)))
        .collect::<netmae_autograd::Result<Vec<_>>>()?;
    Ok(Bound { vars })
}

/// Cross-attention weights of one decoder pass: `[layer][head]` matrices of
/// shape `masked × unmasked`, with the plan they were captured under.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnRecord {
    pub plan: MaskPlan,
    pub weights: Vec<Vec<Tensor>>,
}

impl AttnRecord {
    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn heads(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }
}

fn linear(g: &mut Graph, b: &Bound, x: Var, lin: Linear) -> Result<Var> {
    let y = g.matmul(x, b.var(lin.w))?;
    Ok(g.add_row(y, b.var(lin.b))?)
}

fn norm(g: &mut Graph, b: &Bound, x: Var, n: Norm, eps: f64) -> Result<Var> {
    Ok(g.layer_norm(x, b.var(n.gamma), b.var(n.beta), eps)?)
}

fn mlp(g: &mut Graph, b: &Bound, x: Var, m: Mlp) -> Result<Var> {
    let h = linear(g, b, x, m.fc1)?;
    let h = g.gelu(h)?;
    linear(g, b, h, m.fc2)
}

/// Multi-head scaled dot-product attention of `queries` over `context`.
/// When `capture` is given, each head's softmax matrix is appended to it.
fn attention(
    g: &mut Graph,
    b: &Bound,
    heads: usize,
    queries: Var,
    context: Var,
    a: Attention,
    mut capture: Option<&mut Vec<Tensor>>,
) -> Result<Var> {
    let d = g.value(queries).cols();
    let dh = d / heads;
    let q = linear(g, b, queries, a.q)?;
    let k = linear(g, b, context, a.k)?;
    let v = linear(g, b, context, a.v)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = g.slice_cols(q, lo, hi)?;
        let kh = g.slice_cols(k, lo, hi)?;
        let vh = g.slice_cols(v, lo, hi)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale)?;
        let weights = g.softmax_rows(scores)?;
        if let Some(buf) = capture.as_deref_mut() {
            buf.push(g.value(weights).clone());
        }
        outs.push(g.matmul(weights, vh)?);
    }
    let joined = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    linear(g, b, joined, a.out)
}

fn check_grid(state: &ModelState, grid: &TokenGrid) -> Result<()> {
    if grid.token_dim() != state.config.token_dim {
        return Err(Error::Dimension(format!(
            "tokens have {} values, model expects {}",
            grid.token_dim(),
            state.config.token_dim
        )));
    }
    if grid.len() > state.config.max_tokens {
        return Err(Error::Dimension(format!(
            "grid has {} tokens, positional table holds {}",
            grid.len(),
            state.config.max_tokens
        )));
    }
    Ok(())
}

/// Linear projection of the selected tokens plus their positional rows.
pub fn embed_rows(g: &mut Graph, state: &ModelState, b: &Bound, grid: &TokenGrid, positions: &[usize]) -> Result<Var> {
    check_grid(state, grid)?;
    let dim = grid.token_dim();
    let mut raw = Vec::with_capacity(positions.len() * dim);
    for &p in positions {
        if p >= grid.len() {
            return Err(Error::Contract(format!(
                "token index {p} outside a grid of {}",
                grid.len()
            )));
        }
        raw.extend_from_slice(grid.token(p));
    }
    let x = g.constant(Tensor::new(&[positions.len(), dim], raw)?)?;
    let proj = linear(g, b, x, state.layout.embed)?;
    let pos = g.gather_rows(b.var(state.layout.pos), positions)?;
    Ok(g.add(proj, pos)?)
}

/// Encoder over the unmasked tokens only. Masked token contents never enter
/// the tape.
pub fn encode(g: &mut Graph, state: &ModelState, b: &Bound, grid: &TokenGrid, plan: &MaskPlan) -> Result<Var> {
    if plan.unmasked.is_empty() {
        return Err(Error::Contract("cannot encode an empty context".into()));
    }
    if plan.total() != grid.len() {
        return Err(Error::Contract(format!(
            "mask plan covers {} tokens, grid has {}",
            plan.total(),
            grid.len()
        )));
    }
    let eps = state.config.layer_norm_eps;
    let heads = state.config.heads;
    let mut x = embed_rows(g, state, b, grid, &plan.unmasked)?;
    for blk in &state.layout.encoder {
        let h = norm(g, b, x, blk.norm1, eps)?;
        let a = attention(g, b, heads, h, h, blk.attn, None)?;
        x = g.add(x, a)?;
        let h = norm(g, b, x, blk.norm2, eps)?;
        let m = mlp(g, b, h, blk.mlp)?;
        x = g.add(x, m)?;
    }
    Ok(x)
}

/// Mask token plus the positional row of every masked index.
fn mask_queries(g: &mut Graph, state: &ModelState, b: &Bound, plan: &MaskPlan) -> Result<Var> {
    if plan.masked.is_empty() {
        return Err(Error::Contract("no masked tokens to reconstruct".into()));
    }
    let ones = g.constant(Tensor::ones(&[plan.masked_count(), 1]))?;
    let tokens = g.matmul(ones, b.var(state.layout.mask_token))?;
    let pos = g.gather_rows(b.var(state.layout.pos), &plan.masked)?;
    Ok(g.add(tokens, pos)?)
}

fn reconstruction_head(g: &mut Graph, state: &ModelState, b: &Bound, x: Var) -> Result<Var> {
    let h = norm(g, b, x, state.layout.decoder_norm, state.config.layer_norm_eps)?;
    linear(g, b, h, state.layout.recon)
}

/// Cross-attention-only decoder: queries attend to `z` and never to each other.
pub fn decode_masked(
    g: &mut Graph,
    state: &ModelState,
    b: &Bound,
    z: Var,
    plan: &MaskPlan,
    capture: bool,
) -> Result<(Var, Option<AttnRecord>)> {
    if state.config.decoder_mode != DecoderMode::CrossAttention {
        return Err(Error::Contract(
            "decode_masked called on a self-attention decoder".into(),
        ));
    }
    if g.value(z).rows() != plan.unmasked_count() {
        return Err(Error::Contract(format!(
            "encoder output has {} rows, plan has {} unmasked tokens",
            g.value(z).rows(),
            plan.unmasked_count()
        )));
    }
    let eps = state.config.layer_norm_eps;
    let heads = state.config.heads;
    let mut q = mask_queries(g, state, b, plan)?;
    let mut weights = Vec::new();
    for blk in &state.layout.decoder {
        let hq = norm(g, b, q, blk.norm_q, eps)?;
        let hkv = norm(g, b, z, blk.norm_kv, eps)?;
        let mut layer = Vec::new();
        let a = attention(g, b, heads, hq, hkv, blk.attn, capture.then_some(&mut layer))?;
        if capture {
            weights.push(layer);
        }
        q = g.add(q, a)?;
        let h = norm(g, b, q, blk.norm2, eps)?;
        let m = mlp(g, b, h, blk.mlp)?;
        q = g.add(q, m)?;
    }
    let out = reconstruction_head(g, state, b, q)?;
    let record = capture.then(|| AttnRecord {
        plan: plan.clone(),
        weights,
    });
    Ok((out, record))
}

/// Ablation decoder: mask queries are stacked on top of `z` and the joint
/// sequence goes through self-attention blocks.
pub fn decode_ablation_self(g: &mut Graph, state: &ModelState, b: &Bound, z: Var, plan: &MaskPlan) -> Result<Var> {
    if state.config.decoder_mode != DecoderMode::SelfAttention {
        return Err(Error::Contract(
            "decode_ablation_self called on a cross-attention decoder".into(),
        ));
    }
    let eps = state.config.layer_norm_eps;
    let heads = state.config.heads;
    let q = mask_queries(g, state, b, plan)?;
    let nq = plan.masked_count();
    let mut s = g.concat_rows(&[q, z])?;
    for blk in &state.layout.decoder {
        let h = norm(g, b, s, blk.norm_q, eps)?;
        let a = attention(g, b, heads, h, h, blk.attn, None)?;
        s = g.add(s, a)?;
        let h = norm(g, b, s, blk.norm2, eps)?;
        let m = mlp(g, b, h, blk.mlp)?;
        s = g.add(s, m)?;
    }
    let rows: Vec<usize> = (0..nq).collect();
    let q_out = g.gather_rows(s, &rows)?;
    reconstruction_head(g, state, b, q_out)
}

/// Encoder, then whichever decoder the config selects.
pub struct Reconstruction {
    pub z: Var,
    pub pred: Var,
    pub attention: Option<AttnRecord>,
}

pub fn reconstruct(
    g: &mut Graph,
    state: &ModelState,
    b: &Bound,
    grid: &TokenGrid,
    plan: &MaskPlan,
    capture: bool,
) -> Result<Reconstruction> {
    let z = encode(g, state, b, grid, plan)?;
    let (pred, attention) = match state.config.decoder_mode {
        DecoderMode::CrossAttention => decode_masked(g, state, b, z, plan, capture)?,
        DecoderMode::SelfAttention => {
            if capture {
                return Err(Error::Contract(
                    "attention capture needs the cross-attention decoder".into(),
                ));
            }
            (decode_ablation_self(g, state, b, z, plan)?, None)
        }
    };
    Ok(Reconstruction { z, pred, attention })
}

/// Masked tokens' true values and their non-pad element mask.
pub fn masked_targets(grid: &TokenGrid, plan: &MaskPlan) -> Result<(Tensor, Tensor)> {
    let dim = grid.token_dim();
    let mut truth = Vec::with_capacity(plan.masked_count() * dim);
    let mut valid = Vec::with_capacity(plan.masked_count() * dim);
    for &i in &plan.masked {
        truth.extend_from_slice(grid.token(i));
        valid.extend_from_slice(grid.valid.row(i));
    }
    let shape = [plan.masked_count(), dim];
    Ok((Tensor::new(&shape, truth)?, Tensor::new(&shape, valid)?))
}

/// Mean squared error over the masked tokens' non-pad elements.
pub fn reconstruction_loss(g: &mut Graph, pred: Var, grid: &TokenGrid, plan: &MaskPlan) -> Result<Var> {
    if plan.masked.is_empty() {
        return Err(Error::Contract("reconstruction loss over no tokens".into()));
    }
    let (truth, valid) = masked_targets(grid, plan)?;
    Ok(g.masked_mse(pred, &truth, &valid)?)
}

/// Mean-pooled encoder output over the fully visible grid, `1 × d_emb`.
pub fn pooled(g: &mut Graph, state: &ModelState, b: &Bound, grid: &TokenGrid) -> Result<Var> {
    let plan = MaskPlan::visible(grid.len());
    let z = encode(g, state, b, grid, &plan)?;
    Ok(g.mean_rows(z)?)
}

/// Classification head applied to a pooled vector.
pub fn classify_pooled(g: &mut Graph, state: &ModelState, b: &Bound, pooled: Var) -> Result<Var> {
    let h = linear(g, b, pooled, state.layout.cls_hidden)?;
    let h = g.gelu(h)?;
    linear(g, b, h, state.layout.cls_out)
}

pub fn classify(g: &mut Graph, state: &ModelState, b: &Bound, grid: &TokenGrid) -> Result<Var> {
    let p = pooled(g, state, b, grid)?;
    classify_pooled(g, state, b, p)
}

/// Inference helpers that build a throwaway tape with no gradient tracking.
impl ModelState {
    fn inference<T>(&self, f: impl FnOnce(&mut Graph, &Bound) -> Result<T>) -> Result<T> {
        let mut g = Graph::new();
        let b = bind(&mut g, self, |_| false)?;
        f(&mut g, &b)
    }

    /// Every token projected and position-encoded, `tokens × d_emb`.
    pub fn embed_tokens(&self, grid: &TokenGrid) -> Result<Tensor> {
        self.inference(|g, b| {
            let all: Vec<usize> = (0..grid.len()).collect();
            let v = embed_rows(g, self, b, grid, &all)?;
            Ok(g.value(v).clone())
        })
    }

    /// Encoder output `Z` over the plan's unmasked tokens.
    pub fn encode(&self, grid: &TokenGrid, plan: &MaskPlan) -> Result<Tensor> {
        self.inference(|g, b| {
            let z = encode(g, self, b, grid, plan)?;
            Ok(g.value(z).clone())
        })
    }

    /// Decodes from a given encoder output with the configured decoder.
    pub fn decode(&self, z: &Tensor, plan: &MaskPlan, capture: bool) -> Result<(Tensor, Option<AttnRecord>)> {
        self.inference(|g, b| {
            let zv = g.constant(z.clone())?;
            match self.config.decoder_mode {
                DecoderMode::CrossAttention => {
                    let (p, rec) = decode_masked(g, self, b, zv, plan, capture)?;
                    Ok((g.value(p).clone(), rec))
                }
                DecoderMode::SelfAttention => {
                    let p = decode_ablation_self(g, self, b, zv, plan)?;
                    Ok((g.value(p).clone(), None))
                }
            }
        })
    }

    /// `(Z, reconstruction, attention)` for one grid and plan.
    pub fn reconstruct(
        &self,
        grid: &TokenGrid,
        plan: &MaskPlan,
        capture: bool,
    ) -> Result<(Tensor, Tensor, Option<AttnRecord>)> {
        self.inference(|g, b| {
            let r = reconstruct(g, self, b, grid, plan, capture)?;
            Ok((g.value(r.z).clone(), g.value(r.pred).clone(), r.attention))
        })
    }

    pub fn reconstruction_loss(&self, grid: &TokenGrid, plan: &MaskPlan) -> Result<f64> {
        self.inference(|g, b| {
            let r = reconstruct(g, self, b, grid, plan, false)?;
            let l = reconstruction_loss(g, r.pred, grid, plan)?;
            Ok(g.value(l).data()[0])
        })
    }

    pub fn logits(&self, grid: &TokenGrid) -> Result<Vec<f64>> {
        self.inference(|g, b| {
            let l = classify(g, self, b, grid)?;
            Ok(g.value(l).data().to_vec())
        })
    }

    /// Mean-pooled encoder output over all tokens and its ℓ2 norm.
    pub fn embedding_summary(&self, grid: &TokenGrid) -> Result<(Vec<f64>, f64)> {
        self.inference(|g, b| {
            let p = pooled(g, self, b, grid)?;
            let v = g.value(p).data().to_vec();
            let n = l2_norm(&v);
            Ok((v, n))
        })
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}
