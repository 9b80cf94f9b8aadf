use rayon::prelude::*;

use crate::analysis::pearson;
use crate::data::{make_mask_plan, NetworkAtlas, PreparedRecording, TokenGrid};
use crate::error::Result;
use crate::model::{masked_targets, ModelState};

/// Per-network reconstruction quality.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconEval {
    /// Mean Pearson r over every scored masked token, per network.
    pub pearson: Vec<f64>,
    /// Mean masked MSE over real elements, per network.
    pub mse: Vec<f64>,
    /// Tokens that entered each mean.
    pub tokens: Vec<usize>,
    /// Tokens skipped because prediction or truth had zero variance.
    pub skipped: Vec<usize>,
}

#[derive(Clone, Debug)]
struct Sums {
    r: Vec<f64>,
    sq: Vec<f64>,
    elems: Vec<usize>,
    tokens: Vec<usize>,
    skipped: Vec<usize>,
}

impl Sums {
    fn new(n: usize) -> Self {
        Self {
            r: vec![0.0; n],
            sq: vec![0.0; n],
            elems: vec![0; n],
            tokens: vec![0; n],
            skipped: vec![0; n],
        }
    }

    fn merge(&mut self, o: &Sums) {
        for i in 0..self.r.len() {
            self.r[i] += o.r[i];
            self.sq[i] += o.sq[i];
            self.elems[i] += o.elems[i];
            self.tokens[i] += o.tokens[i];
            self.skipped[i] += o.skipped[i];
        }
    }
}

/// Pearson r of one predicted token against the truth over its real
/// (non-pad) elements.
pub fn token_pearson(pred: &[f64], truth: &[f64], valid: &[f64]) -> Option<f64> {
    let (p, t): (Vec<f64>, Vec<f64>) = pred
        .iter()
        .zip(truth)
        .zip(valid)
        .filter(|(_, &v)| v != 0.0)
        .map(|((&p, &t), _)| (p, t))
        .unzip();
    pearson(&p, &t)
}

fn score_grid(state: &ModelState, grid: &TokenGrid, atlas: &NetworkAtlas, net: usize, sums: &mut Sums) -> Result<()> {
    let plan = make_mask_plan(atlas, grid, net)?;
    let (_, pred, _) = state.reconstruct(grid, &plan, false)?;
    let (truth, valid) = masked_targets(grid, &plan)?;
    for q in 0..plan.masked_count() {
        let (p, t, v) = (pred.row(q), truth.row(q), valid.row(q));
        for ((a, b), m) in p.iter().zip(t).zip(v) {
            if *m != 0.0 {
                sums.sq[net] += (a - b) * (a - b);
                sums.elems[net] += 1;
            }
        }
        match token_pearson(p, t, v) {
            Some(r) => {
                sums.r[net] += r;
                sums.tokens[net] += 1;
            }
            None => sums.skipped[net] += 1,
        }
    }
    Ok(())
}

/// Masks each network in turn on every segment and scores its
/// reconstruction; recordings run in parallel and merge in input order.
pub fn evaluate_reconstruction(
    state: &ModelState,
    recordings: &[PreparedRecording],
    atlas: &NetworkAtlas,
) -> Result<ReconEval> {
    let n = atlas.network_count();
    let parts: Vec<Sums> = recordings
        .par_iter()
        .map(|rec| {
            let mut s = Sums::new(n);
            for grid in &rec.segments {
                for net in 0..n {
                    score_grid(state, grid, atlas, net, &mut s)?;
                }
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let mut total = Sums::new(n);
    for p in &parts {
        total.merge(p);
    }
    let div = |a: f64, b: usize| if b == 0 { f64::NAN } else { a / b as f64 };
    Ok(ReconEval {
        pearson: (0..n).map(|i| div(total.r[i], total.tokens[i])).collect(),
        mse: (0..n).map(|i| div(total.sq[i], total.elems[i])).collect(),
        tokens: total.tokens,
        skipped: total.skipped,
    })
}
