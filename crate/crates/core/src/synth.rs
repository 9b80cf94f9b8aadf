//! Synthetic cohorts from a block-coupled VAR(lag) process with a known
//! network-to-network coupling matrix.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use netmae_autograd::Tensor;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::data::{save_recording, write_manifest, Label, NetworkAtlas, ParcelTimeSeries};
use crate::error::{Error, Result};
use crate::seed;

/// `g[i][j]` is the strength with which network `i` drives network `j`;
/// the diagonal is within-network self-coupling.
pub type Coupling = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingSpec {
    pub parcels_per_network: Vec<usize>,
    pub g: Coupling,
    pub noise_sd: f64,
    pub lag: usize,
    /// Per-label overrides of `g`.
    pub class_profiles: BTreeMap<Label, Coupling>,
    pub spectral_cap: f64,
    /// Source parcels feeding each target parcel within one block.
    pub fan_in: usize,
    pub burn_in: usize,
    /// Seed of the mixing matrices; shared by every class so profiles differ
    /// only through `g`.
    pub mixing_seed: u64,
    /// Relative per-subject jitter applied to every nonzero coupling.
    pub subject_jitter: f64,
}

pub const DESK_PARCELS: [usize; 7] = [16, 32, 48, 16, 32, 16, 32];

impl CouplingSpec {
    /// Uncoupled networks with the given self-coupling on the diagonal.
    pub fn new(parcels_per_network: Vec<usize>, self_coupling: f64) -> Self {
        let n = parcels_per_network.len();
        let g = (0..n)
            .map(|i| (0..n).map(|j| if i == j { self_coupling } else { 0.0 }).collect())
            .collect();
        Self {
            parcels_per_network,
            g,
            noise_sd: 1.0,
            lag: 1,
            class_profiles: BTreeMap::new(),
            spectral_cap: 0.95,
            fan_in: 4,
            burn_in: 200,
            mixing_seed: 0,
            subject_jitter: 0.0,
        }
    }

    /// Desk geometry with one strong driver `source → target`, weak (0.05)
    /// background coupling among the other networks, and a pure-noise
    /// network `noise` that receives nothing. Single-tap readouts.
    pub fn single_driver(source: usize, target: usize, strength: f64, noise: usize) -> Self {
        let mut s = Self::new(DESK_PARCELS.to_vec(), 0.3);
        s.fan_in = 1;
        let n = s.networks();
        for i in 0..n {
            for j in 0..n {
                if i != j && j != noise && i != noise {
                    s.g[i][j] = 0.05;
                }
            }
        }
        s.g[noise][noise] = 0.0;
        s.g[source][target] = strength;
        s
    }

    /// Default cohort of the `demo` command: [`single_driver`](Self::single_driver)
    /// `2 → 5` for every class, with a `0 → 3` edge and the self-coupling
    /// of networks 1 and 4 growing from CN to MCI to AD.
    pub fn desk_cohort() -> Self {
        let mut s = Self::single_driver(2, 5, 0.8, 6);
        for (label, edge, own) in [(Label::Cn, 0.05, 0.3), (Label::Mci, 0.35, 0.55), (Label::Ad, 0.6, 0.8)] {
            let mut g = s.g.clone();
            g[0][3] = edge;
            g[1][1] = own;
            g[4][4] = own;
            s.class_profiles.insert(label, g);
        }
        s
    }

    pub fn networks(&self) -> usize {
        self.parcels_per_network.len()
    }

    pub fn parcels(&self) -> usize {
        self.parcels_per_network.iter().sum()
    }

    /// Coupling used for `label`: its class profile, or the base `g` when no
    /// profiles are defined.
    pub fn coupling_for(&self, label: Label) -> Result<&Coupling> {
        if self.class_profiles.is_empty() {
            return Ok(&self.g);
        }
        self.class_profiles
            .get(&label)
            .ok_or_else(|| Error::Invalid(format!("no coupling profile for label {label}")))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.networks();
        if n == 0 || self.parcels_per_network.contains(&0) {
            return Err(Error::Invalid("every network needs at least one parcel".into()));
        }
        for g in std::iter::once(&self.g).chain(self.class_profiles.values()) {
            check_coupling(g, n)?;
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Invalid(format!("noise_sd {} must be >= 0", self.noise_sd)));
        }
        if self.lag == 0 {
            return Err(Error::Invalid("lag must be >= 1".into()));
        }
        if !(self.spectral_cap > 0.0 && self.spectral_cap < 1.0) {
            return Err(Error::Invalid(format!(
                "spectral_cap {} must lie in (0, 1)",
                self.spectral_cap
            )));
        }
        if self.fan_in == 0 {
            return Err(Error::Invalid("fan_in must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.subject_jitter) {
            return Err(Error::Invalid("subject_jitter must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn atlas(&self, patch_parcels: usize) -> Result<NetworkAtlas> {
        NetworkAtlas::from_sizes(&self.parcels_per_network, patch_parcels)
    }

    /// Plain-text `key = value` form; matrices are rows separated by `;`.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "networks = {}", self.networks());
        let _ = writeln!(s, "parcels_per_network = {}", list(&self.parcels_per_network));
        let _ = writeln!(s, "noise_sd = {}", self.noise_sd);
        let _ = writeln!(s, "lag = {}", self.lag);
        let _ = writeln!(s, "spectral_cap = {}", self.spectral_cap);
        let _ = writeln!(s, "fan_in = {}", self.fan_in);
        let _ = writeln!(s, "burn_in = {}", self.burn_in);
        let _ = writeln!(s, "mixing_seed = {}", self.mixing_seed);
        let _ = writeln!(s, "subject_jitter = {}", self.subject_jitter);
        let _ = writeln!(s, "G = {}", format_matrix(&self.g));
        for (label, g) in &self.class_profiles {
            let _ = writeln!(s, "G.{label} = {}", format_matrix(g));
        }
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut spec = Self::new(vec![], 0.0);
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Invalid(format!("bad ground-truth line {line:?}")))?;
            if !spec.set(k, v)? {
                return Err(Error::Invalid(format!("unknown ground-truth key {k:?}")));
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Sets one field from its `to_kv` key; `Ok(false)` for unknown keys.
    /// `networks` is accepted and ignored (it follows `parcels_per_network`).
    pub fn set(&mut self, k: &str, v: &str) -> Result<bool> {
        let bad = || Error::Invalid(format!("ground truth {k}: bad value {v:?}"));
        match k {
            "networks" => {}
            "parcels_per_network" => {
                self.parcels_per_network = v
                    .split(',')
                    .map(|x| x.trim().parse().map_err(|_| bad()))
                    .collect::<Result<_>>()?
            }
            "noise_sd" => self.noise_sd = v.parse().map_err(|_| bad())?,
            "lag" => self.lag = v.parse().map_err(|_| bad())?,
            "spectral_cap" => self.spectral_cap = v.parse().map_err(|_| bad())?,
            "fan_in" => self.fan_in = v.parse().map_err(|_| bad())?,
            "burn_in" => self.burn_in = v.parse().map_err(|_| bad())?,
            "mixing_seed" => self.mixing_seed = v.parse().map_err(|_| bad())?,
            "subject_jitter" => self.subject_jitter = v.parse().map_err(|_| bad())?,
            "G" => self.g = parse_matrix(v).ok_or_else(bad)?,
            _ => match k.strip_prefix("G.") {
                Some(label) => {
                    let label: Label = label.parse().map_err(Error::Invalid)?;
                    self.class_profiles.insert(label, parse_matrix(v).ok_or_else(bad)?);
                }
                None => return Ok(false),
            },
        }
        Ok(true)
    }
}

fn check_coupling(g: &Coupling, n: usize) -> Result<()> {
    if g.len() != n || g.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension(format!("coupling matrix must be {n}×{n}")));
    }
    if g.iter().flatten().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::Invalid("coupling entries must lie in [0, 1]".into()));
    }
    Ok(())
}

fn format_matrix(g: &Coupling) -> String {
    g.iter()
        .map(|r| r.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_matrix(s: &str) -> Option<Coupling> {
    s.split(';')
        .map(|r| r.split(',').map(|x| x.trim().parse().ok()).collect())
        .collect()
}

/// Largest eigenvalue modulus, from the real Schur form. Falls back to the
/// Gelfand estimate `‖A^k‖^{1/k}` if the QR iteration fails to converge.
pub fn spectral_radius(a: &Tensor) -> f64 {
    let n = a.rows();
    if a.data().iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    let m = DMatrix::from_row_slice(n, n, a.data());
    match m.clone().try_schur(1e-13, 100 * n.max(10)) {
        Some(schur) => schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max),
        None => gelfand_radius(&m, 20),
    }
}

/// `‖A^k‖^{1/k}` with `k = 2^squarings`, normalizing after each squaring.
fn gelfand_radius(m: &DMatrix<f64>, squarings: u32) -> f64 {
    let mut log_norm = m.norm().ln();
    let mut p = m / m.norm();
    for _ in 0..squarings {
        p = &p * &p;
        let s = p.norm();
        if s == 0.0 {
            return 0.0;
        }
        p /= s;
        log_norm = 2.0 * log_norm + s.ln();
    }
    (log_norm / 2f64.powi(squarings as i32)).exp()
}

/// Sparse random readout of network `i`: `fan_in` distinct parcels with
/// positive weights summing to 1. Depends only on `(mixing_seed, i)`.
pub fn network_readout(spec: &CouplingSpec, i: usize) -> Vec<(usize, f64)> {
    let size = spec.parcels_per_network[i];
    let mut rng = seed::rng(spec.mixing_seed, "mixing", i as u64);
    let k = spec.fan_in.min(size);
    let mut taps: Vec<(usize, f64)> = index::sample(&mut rng, size, k)
        .into_iter()
        .map(|q| (q, rng.gen_range(0.5..1.0)))
        .collect();
    taps.sort_by_key(|t| t.0);
    let total: f64 = taps.iter().map(|t| t.1).sum();
    for t in &mut taps {
        t.1 /= total;
    }
    taps
}

/// Block transition matrix for coupling `g`. Block (target `j`, source `i`)
/// is `g[i][j]·1·w_iᵀ`: every parcel of `j` reads the sparse readout `w_i`
/// of network `i` (see [`network_readout`]). Since each readout sums to 1,
/// the nonzero spectrum of `A` is that of `g`, and the readouts
/// `f_i = w_i·x_i` follow `f(t) = gᵀ f(t−lag) + noise`. The whole matrix is
/// shrunk only when its spectral radius exceeds `spectral_cap`; an all-zero
/// `g` yields `A = 0`.
pub fn build_transition(spec: &CouplingSpec, g: &Coupling) -> Result<Tensor> {
    spec.validate()?;
    check_coupling(g, spec.networks())?;
    let sizes = &spec.parcels_per_network;
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    let c = spec.parcels();
    let mut a = Tensor::zeros(&[c, c]);
    let n = spec.networks();
    for i in 0..n {
        let taps = network_readout(spec, i);
        for j in 0..n {
            let strength = g[i][j];
            if strength == 0.0 {
                continue;
            }
            for p in 0..sizes[j] {
                let row = offsets[j] + p;
                for &(q, w) in &taps {
                    a.data_mut()[row * c + offsets[i] + q] = strength * w;
                }
            }
        }
    }
    // The nonzero spectrum of `A` is that of `g`, which is small and well
    // conditioned; `A` itself is highly defective.
    let gt = Tensor::new(&[n, n], g.iter().flatten().copied().collect())?;
    let rho = spectral_radius(&gt);
    if !rho.is_finite() {
        return Err(Error::Invalid("transition matrix has a non-finite spectrum".into()));
    }
    if rho > spec.spectral_cap {
        let s = spec.spectral_cap / rho * (1.0 - 1e-9);
        a = a.map(|x| x * s);
    }
    Ok(a)
}

/// `x_t = A·x_{t−lag} + ε_t` from a zero start; the first `burn_in` steps
/// are discarded.
pub fn generate_series<R: Rng + ?Sized>(
    a: &Tensor,
    noise_sd: f64,
    lag: usize,
    burn_in: usize,
    t_total: usize,
    rng: &mut R,
) -> Result<Tensor> {
    let c = a.rows();
    let steps = burn_in + t_total;
    let normal = Normal::new(0.0, noise_sd).map_err(|e| Error::Invalid(format!("noise_sd: {e}")))?;
    let mut x = vec![0.0; (steps + lag) * c];
    let ad = a.data();
    for t in lag..steps + lag {
        let (past, now) = x.split_at_mut(t * c);
        let prev = &past[(t - lag) * c..(t - lag + 1) * c];
        let cur = &mut now[..c];
        for (r, out) in cur.iter_mut().enumerate() {
            let row = &ad[r * c..(r + 1) * c];
            let drive: f64 = row.iter().zip(prev).map(|(w, v)| w * v).sum();
            *out = drive + if noise_sd > 0.0 { normal.sample(rng) } else { 0.0 };
        }
        if let Some(bad) = cur.iter().position(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                step: t - lag,
                message: format!("parcel {bad} became non-finite"),
            });
        }
    }
    let keep = x.split_off((lag + burn_in) * c);
    Ok(Tensor::new(&[t_total, c], keep)?)
}

/// One recording from transition `a`, seeded by `rng`.
pub fn generate_recording<R: Rng + ?Sized>(
    a: &Tensor,
    spec: &CouplingSpec,
    subject_id: &str,
    session: u32,
    label: Label,
    t_total: usize,
    rng: &mut R,
) -> Result<ParcelTimeSeries> {
    let values = generate_series(a, spec.noise_sd, spec.lag, spec.burn_in, t_total, rng)?;
    ParcelTimeSeries::new(subject_id, session, label, None, values)
}

#[derive(Clone, Debug)]
pub struct SyntheticCohort {
    pub recordings: Vec<ParcelTimeSeries>,
    pub ground_truth: CouplingSpec,
    pub seed: u64,
}

pub fn subject_id(label: Label, index: usize) -> String {
    let prefix = match label {
        Label::Unlabeled => "sub".to_string(),
        l => l.as_str().to_ascii_lowercase(),
    };
    format!("{prefix}-{index:03}")
}

fn jittered<R: Rng + ?Sized>(g: &Coupling, jitter: f64, rng: &mut R) -> Coupling {
    g.iter()
        .map(|r| {
            r.iter()
                .map(|&x| (x * (1.0 + jitter * rng.gen_range(-1.0..=1.0))).clamp(0.0, 1.0))
                .collect()
        })
        .collect()
}

/// `labels × subjects_per_class × sessions` recordings. Each recording's
/// noise comes from its own stream keyed by subject and session.
pub fn gen_cohort(
    spec: &CouplingSpec,
    labels: &[Label],
    subjects_per_class: usize,
    sessions: u32,
    t_total: usize,
    seed_value: u64,
) -> Result<SyntheticCohort> {
    spec.validate()?;
    let mut subjects = Vec::new();
    for &label in labels {
        let g = spec.coupling_for(label)?;
        for s in 0..subjects_per_class {
            subjects.push((label, subject_id(label, subjects.len()), g, s));
        }
    }
    let per_subject: Vec<Vec<ParcelTimeSeries>> = subjects
        .par_iter()
        .map(|(label, id, g, _)| {
            let mut jr = seed::rng(seed_value, "subject-coupling", seed::key(id));
            let a = if spec.subject_jitter > 0.0 {
                build_transition(spec, &jittered(g, spec.subject_jitter, &mut jr))?
            } else {
                build_transition(spec, g)?
            };
            // Baseline age in [60, 85), one year between sessions.
            let age0 = 60.0 + 25.0 * seed::rng(seed_value, "subject-age", seed::key(id)).gen::<f64>();
            (0..sessions)
                .map(|k| {
                    let mut rng = seed::rng(seed_value, "recording", seed::key(&format!("{id}/{k}")));
                    let mut r = generate_recording(&a, spec, id, k, *label, t_total, &mut rng)?;
                    r.age_years = Some(((age0 + k as f64) * 10.0).round() / 10.0);
                    Ok(r)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(SyntheticCohort {
        recordings: per_subject.into_iter().flatten().collect(),
        ground_truth: spec.clone(),
        seed: seed_value,
    })
}

/// Paths written by [`write_cohort`].
#[derive(Clone, Debug)]
pub struct CohortFiles {
    pub manifest: PathBuf,
    pub atlas: PathBuf,
    pub ground_truth: PathBuf,
}

/// Writes `recordings/*.csv`, `atlas.tsv`, `manifest.txt` and
/// `ground_truth.txt` under `dir`.
pub fn write_cohort(cohort: &SyntheticCohort, dir: &Path, patch_parcels: usize) -> Result<CohortFiles> {
    let rec_dir = dir.join("recordings");
    fs::create_dir_all(&rec_dir).map_err(|e| Error::io(&rec_dir, e))?;
    let mut entries = Vec::with_capacity(cohort.recordings.len());
    for r in &cohort.recordings {
        let rel = PathBuf::from("recordings").join(format!("{}_ses{}.csv", r.subject_id, r.session_index));
        save_recording(r, &dir.join(&rel))?;
        entries.push(rel);
    }
    let files = CohortFiles {
        manifest: dir.join("manifest.txt"),
        atlas: dir.join("atlas.tsv"),
        ground_truth: dir.join("ground_truth.txt"),
    };
    write_manifest(&files.manifest, &entries)?;
    cohort.ground_truth.atlas(patch_parcels)?.save(&files.atlas)?;
    let text = format!("seed = {}\n{}", cohort.seed, cohort.ground_truth.to_kv());
    fs::write(&files.ground_truth, text).map_err(|e| Error::io(&files.ground_truth, e))?;
    Ok(files)
}

/// Reads a ground-truth file written by [`write_cohort`].
pub fn read_ground_truth(path: &Path) -> Result<CouplingSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let body: String = text
        .lines()
        .filter(|l| !l.trim_start().starts_with("seed"))
        .map(|l| format!("{l}\n"))
        .collect();
    CouplingSpec::from_kv(&body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_coupling_gives_zero_transition() {
        let spec = CouplingSpec::new(vec![4, 4], 0.0);
        let a = build_transition(&spec, &spec.g).unwrap();
        assert!(a.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn diagonal_coupling_is_block_diagonal() {
        let spec = CouplingSpec::new(vec![3, 5, 4], 0.5);
        let a = build_transition(&spec, &spec.g).unwrap();
        let net = |p: usize| {
            if p < 3 {
                0
            } else if p < 8 {
                1
            } else {
                2
            }
        };
        for r in 0..12 {
            for c in 0..12 {
                if net(r) != net(c) {
                    assert_eq!(a.get2(r, c), 0.0);
                }
            }
        }
        assert!(a.data().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn silent_process_stays_zero() {
        let mut spec = CouplingSpec::new(vec![4, 4], 0.6);
        spec.noise_sd = 0.0;
        let a = build_transition(&spec, &spec.g).unwrap();
        let x = generate_series(&a, 0.0, 1, 10, 30, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ground_truth_text_round_trips() {
        let mut spec = CouplingSpec::single_driver(2, 5, 0.8, 6);
        let mut g = spec.g.clone();
        g[0][1] = 0.4;
        spec.class_profiles.insert(Label::Ad, g);
        spec.class_profiles.insert(Label::Cn, spec.g.clone());
        assert_eq!(CouplingSpec::from_kv(&spec.to_kv()).unwrap(), spec);
    }

    #[test]
    fn missing_class_profile_is_an_error() {
        let mut spec = CouplingSpec::new(vec![4, 4], 0.2);
        spec.class_profiles.insert(Label::Cn, spec.g.clone());
        assert!(gen_cohort(&spec, &[Label::Cn, Label::Ad], 1, 1, 10, 0).is_err());
    }
}
