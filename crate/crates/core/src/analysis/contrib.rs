use rayon::prelude::*;

use crate::data::{make_mask_plan, NetworkAtlas, PreparedRecording, TokenGrid};
use crate::error::{Error, Result};
use crate::model::{AttnRecord, ModelState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadScore {
    pub layer: usize,
    pub head: usize,
    /// Mean row concentration `Σ_k A[q][k]²`, in `(0, 1]`.
    pub score: f64,
}

/// Orders heads by `score` (descending), ties by `(layer, head)`.
fn order_heads(mut scores: Vec<HeadScore>) -> Vec<HeadScore> {
    scores.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.layer.cmp(&b.layer))
            .then(a.head.cmp(&b.head))
    });
    scores
}

/// Ranks every decoder head by mean attention-row concentration over all
/// query rows of all records.
pub fn rank_heads(records: &[AttnRecord]) -> Result<Vec<HeadScore>> {
    let first = records
        .first()
        .ok_or_else(|| Error::Invalid("rank_heads needs at least one record".into()))?;
    let (layers, heads) = (first.layers(), first.heads());
    let mut sums = vec![0.0; layers * heads];
    let mut rows = vec![0usize; layers * heads];
    for r in records {
        if r.layers() != layers || r.heads() != heads {
            return Err(Error::Dimension("records disagree on head layout".into()));
        }
        for (l, layer) in r.weights.iter().enumerate() {
            for (h, a) in layer.iter().enumerate() {
                for q in 0..a.rows() {
                    sums[l * heads + h] += a.row(q).iter().map(|w| w * w).sum::<f64>();
                }
                rows[l * heads + h] += a.rows();
            }
        }
    }
    Ok(order_heads(
        (0..layers * heads)
            .map(|i| HeadScore {
                layer: i / heads,
                head: i % heads,
                score: sums[i] / rows[i].max(1) as f64,
            })
            .collect(),
    ))
}

/// `matrix[source][target]`: share of target's top-head attention mass
/// that lands on source's tokens. Columns sum to 1 and the diagonal is 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ContributionProfile {
    pub matrix: Vec<Vec<f64>>,
    /// Heads aggregated for each target.
    pub head_sets: Vec<Vec<(usize, usize)>>,
    /// Attention records folded in for each target.
    pub sample_count: Vec<usize>,
}

impl ContributionProfile {
    pub fn networks(&self) -> usize {
        self.matrix.len()
    }

    /// Source with the largest contribution to `target` (lowest index on ties).
    pub fn argmax_source(&self, target: usize) -> usize {
        let mut best = 0;
        for i in 0..self.networks() {
            if self.matrix[i][target] > self.matrix[best][target] {
                best = i;
            }
        }
        best
    }
}

/// Per-target, per-head running sums; records can be folded in one at a
/// time and accumulators merged, so no attention matrices are retained.
#[derive(Clone, Debug, PartialEq)]
pub struct ContributionAccumulator {
    networks: usize,
    layers: usize,
    heads: usize,
    /// `[target][layer·heads + head]`
    concentration: Vec<Vec<f64>>,
    /// `[target][layer·heads + head][source]`
    mass: Vec<Vec<Vec<f64>>>,
    rows: Vec<Vec<usize>>,
    records: Vec<usize>,
}

impl ContributionAccumulator {
    pub fn new(networks: usize, layers: usize, heads: usize) -> Self {
        let lh = layers * heads;
        Self {
            networks,
            layers,
            heads,
            concentration: vec![vec![0.0; lh]; networks],
            mass: vec![vec![vec![0.0; networks]; lh]; networks],
            rows: vec![vec![0; lh]; networks],
            records: vec![0; networks],
        }
    }

    /// Folds in one record; `token_network[i]` is the network of flat token `i`.
    pub fn add(&mut self, record: &AttnRecord, token_network: &[usize]) -> Result<()> {
        let target = record
            .plan
            .target_network
            .ok_or_else(|| Error::Invalid("contribution records need a network mask".into()))?;
        if target >= self.networks {
            return Err(Error::Invalid(format!("target network {target} out of range")));
        }
        if record.layers() != self.layers || record.heads() != self.heads {
            return Err(Error::Dimension(format!(
                "record has {}×{} heads, accumulator expects {}×{}",
                record.layers(),
                record.heads(),
                self.layers,
                self.heads
            )));
        }
        let key_nets: Vec<usize> = record.plan.unmasked.iter().map(|&k| token_network[k]).collect();
        for (l, layer) in record.weights.iter().enumerate() {
            for (h, a) in layer.iter().enumerate() {
                let idx = l * self.heads + h;
                let mass = &mut self.mass[target][idx];
                for q in 0..a.rows() {
                    let row = a.row(q);
                    self.concentration[target][idx] += row.iter().map(|w| w * w).sum::<f64>();
                    for (w, &n) in row.iter().zip(&key_nets) {
                        mass[n] += w;
                    }
                }
                self.rows[target][idx] += a.rows();
            }
        }
        self.records[target] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if (self.networks, self.layers, self.heads) != (other.networks, other.layers, other.heads) {
            return Err(Error::Dimension("cannot merge accumulators of different shapes".into()));
        }
        for t in 0..self.networks {
            for i in 0..self.layers * self.heads {
                self.concentration[t][i] += other.concentration[t][i];
                self.rows[t][i] += other.rows[t][i];
                for s in 0..self.networks {
                    self.mass[t][i][s] += other.mass[t][i][s];
                }
            }
            self.records[t] += other.records[t];
        }
        Ok(())
    }

    /// Head ranking for one target from the accumulated concentrations.
    pub fn head_ranking(&self, target: usize) -> Vec<HeadScore> {
        order_heads(
            (0..self.layers * self.heads)
                .map(|i| HeadScore {
                    layer: i / self.heads,
                    head: i % self.heads,
                    score: self.concentration[target][i] / self.rows[target][i].max(1) as f64,
                })
                .collect(),
        )
    }

    /// Profile over the top-`k` heads of each target.
    pub fn finish(&self, k: usize) -> Result<ContributionProfile> {
        let total = self.layers * self.heads;
        if k == 0 || k > total {
            return Err(Error::Invalid(format!(
                "top-{k} heads requested but the decoder has {total}"
            )));
        }
        let n = self.networks;
        let mut matrix = vec![vec![0.0; n]; n];
        let mut head_sets = Vec::with_capacity(n);
        for t in 0..n {
            if self.records[t] == 0 {
                return Err(Error::Invalid(format!("no attention records for target network {t}")));
            }
            let top: Vec<HeadScore> = self.head_ranking(t).into_iter().take(k).collect();
            let mut col = vec![0.0; n];
            for hs in &top {
                let idx = hs.layer * self.heads + hs.head;
                let rows = self.rows[t][idx] as f64;
                for (c, m) in col.iter_mut().zip(&self.mass[t][idx]) {
                    *c += m / rows;
                }
            }
            col[t] = 0.0;
            let sum: f64 = col.iter().sum();
            for (s, c) in col.iter().enumerate() {
                matrix[s][t] = if sum > 0.0 { c / sum } else { 0.0 };
            }
            head_sets.push(top.iter().map(|h| (h.layer, h.head)).collect());
        }
        Ok(ContributionProfile {
            matrix,
            head_sets,
            sample_count: self.records.clone(),
        })
    }
}

/// Network of every flat token in `grid`.
pub fn token_networks(grid: &TokenGrid) -> Vec<usize> {
    (0..grid.len()).map(|i| grid.network_of(i)).collect()
}

/// Profile from records already grouped by target network.
pub fn contribution_profile(
    records: &[AttnRecord],
    token_network: &[usize],
    networks: usize,
    k: usize,
) -> Result<ContributionProfile> {
    let first = records
        .first()
        .ok_or_else(|| Error::Invalid("no attention records".into()))?;
    let mut acc = ContributionAccumulator::new(networks, first.layers(), first.heads());
    for r in records {
        acc.add(r, token_network)?;
    }
    acc.finish(k)
}

/// Masks each network in turn on every segment of every recording,
/// captures decoder attention and folds it into one accumulator.
/// Recordings are processed in parallel and merged in input order.
pub fn collect_contributions(
    state: &ModelState,
    recordings: &[PreparedRecording],
    atlas: &NetworkAtlas,
) -> Result<ContributionAccumulator> {
    let cfg = &state.config;
    let n = atlas.network_count();
    let parts: Vec<ContributionAccumulator> = recordings
        .par_iter()
        .map(|rec| {
            let mut acc = ContributionAccumulator::new(n, cfg.decoder_depth, cfg.heads);
            for grid in &rec.segments {
                let nets = token_networks(grid);
                for target in 0..n {
                    let plan = make_mask_plan(atlas, grid, target)?;
                    let (_, _, record) = state.reconstruct(grid, &plan, true)?;
                    acc.add(&record.expect("capture requested"), &nets)?;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = ContributionAccumulator::new(n, cfg.decoder_depth, cfg.heads);
    for p in &parts {
        total.merge(p)?;
    }
    Ok(total)
}

/// Elementwise `b − a`.
pub fn contribution_delta(a: &ContributionProfile, b: &ContributionProfile) -> Result<Vec<Vec<f64>>> {
    if a.networks() != b.networks() {
        return Err(Error::Dimension(format!(
            "profiles cover {} and {} networks",
            a.networks(),
            b.networks()
        )));
    }
    Ok(a.matrix
        .iter()
        .zip(&b.matrix)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| y - x).collect())
        .collect())
}

/// `(source, target, value)` cells by descending magnitude, ties by index.
pub fn ranked_cells(delta: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    let mut cells: Vec<(usize, usize, f64)> = delta
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, &v)| (i, j, v)))
        .collect();
    cells.sort_by(|a, b| b.2.abs().total_cmp(&a.2.abs()).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    cells
}
