use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{Label, SegmentSpec};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::synth::CouplingSpec;
use crate::train::TrainConfig;

/// Cohort shape for the `synth` stage.
#[derive(Clone, Debug, PartialEq)]
pub struct CohortSettings {
    pub labels: Vec<Label>,
    pub subjects_per_class: usize,
    pub sessions: u32,
    pub timepoints: usize,
}

/// Every setting of a run, from defaults, a `key = value` file and
/// `--key value` overrides, in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub outdir: PathBuf,
    /// Worker threads; `None` uses every available core.
    pub workers: Option<usize>,
    pub atlas: Option<PathBuf>,
    /// Networks in the atlas file.
    pub networks: usize,
    pub manifest: Option<PathBuf>,
    /// Pretrained weights read by the analysis stages.
    pub checkpoint: Option<PathBuf>,
    pub segment: SegmentSpec,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    /// Keys carry an `ft_` prefix.
    pub finetune: TrainConfig,
    /// Keys carry a `synth.` prefix.
    pub synth: CouplingSpec,
    pub cohort: CohortSettings,
    /// Subject fractions for train, validation and test.
    pub split: (f64, f64, f64),
    /// Heads per target kept in contribution profiles.
    pub top_k: usize,
    /// Label permutations `classify` also fine-tunes on (0 disables the
    /// control).
    pub shuffle_control: usize,
}

impl Default for RunConfig {
    /// Desk-scale settings: every stage of `demo` finishes in minutes on one
    /// core.
    fn default() -> Self {
        let segment = SegmentSpec {
            length: 16,
            segments_per_recording: 48,
            ..SegmentSpec::default()
        };
        let model = ModelConfig {
            d_emb: 48,
            encoder_depth: 2,
            decoder_depth: 2,
            heads: 6,
            d_mlp: 96,
            token_dim: segment.token_dim(),
            max_tokens: 16,
            classifier_hidden: 32,
            ..ModelConfig::default()
        };
        let pretrain = TrainConfig {
            epochs: 20,
            peak_lr: 2e-3,
            ..TrainConfig::default()
        };
        let finetune = TrainConfig {
            epochs: 30,
            peak_lr: 1e-3,
            patience: 10,
            ..TrainConfig::default()
        };
        Self {
            seed: 0,
            outdir: PathBuf::from("netmae-out"),
            workers: None,
            atlas: None,
            networks: 7,
            manifest: None,
            checkpoint: None,
            segment,
            model,
            pretrain,
            finetune,
            synth: CouplingSpec::desk_cohort(),
            cohort: CohortSettings {
                labels: Label::CLASSES.to_vec(),
                subjects_per_class: 20,
                sessions: 1,
                timepoints: 800,
            },
            split: (0.6, 0.2, 0.2),
            top_k: 12,
            shuffle_control: 0,
        }
    }
}

fn path_value(v: &str) -> Option<PathBuf> {
    (!v.is_empty() && v != "none").then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map_or_else(|| "none".to_string(), |p| p.display().to_string())
}

impl RunConfig {
    /// Applies one setting. Unknown keys are validation errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Invalid(format!("{key}: cannot parse {value:?}"));
        let int = || value.parse::<usize>().map_err(|_| bad());
        let real = || value.parse::<f64>().map_err(|_| bad());
        match key {
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "outdir" => self.outdir = PathBuf::from(value),
            "workers" => {
                self.workers = match value {
                    "auto" => None,
                    v => Some(v.parse().map_err(|_| bad())?),
                }
            }
            "atlas" => self.atlas = path_value(value),
            "networks" => self.networks = int()?,
            "manifest" => self.manifest = path_value(value),
            "checkpoint" => self.checkpoint = path_value(value),
            "segment_length" => self.segment.length = int()?,
            "patch_time" => self.segment.patch_time = int()?,
            "patch_parcels" => self.segment.patch_parcels = int()?,
            "segments_per_recording" => self.segment.segments_per_recording = int()?,
            "synth_labels" => {
                self.cohort.labels = value
                    .split(',')
                    .map(|l| l.trim().parse().map_err(Error::Invalid))
                    .collect::<Result<_>>()?
            }
            "synth_subjects_per_class" => self.cohort.subjects_per_class = int()?,
            "synth_sessions" => self.cohort.sessions = value.parse().map_err(|_| bad())?,
            "synth_timepoints" => self.cohort.timepoints = int()?,
            "split_train" => self.split.0 = real()?,
            "split_val" => self.split.1 = real()?,
            "split_test" => self.split.2 = real()?,
            "top_k" => self.top_k = int()?,
            "shuffle_control" => self.shuffle_control = int()?,
            _ => {
                if let Some(k) = key.strip_prefix("synth.") {
                    if self.synth.set(k, value)? {
                        return Ok(());
                    }
                } else if self.model.set(key, value)?
                    || self.pretrain.set("", key, value)?
                    || self.finetune.set("ft_", key, value)?
                {
                    return Ok(());
                }
                return Err(Error::Invalid(format!("unknown config key {key:?}")));
            }
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment line.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                column: 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got {line:?}")))?;
            self.set(k.trim(), v.trim()).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(())
    }

    /// Aligns derived fields and checks every section.
    pub fn finalize(&mut self) -> Result<()> {
        self.segment.validate()?;
        self.model.token_dim = self.segment.token_dim();
        self.pretrain.mask_mode = self.model.mask_mode;
        self.pretrain.seed = self.seed;
        self.finetune.seed = self.seed;
        self.model.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.synth.validate()?;
        if self.workers == Some(0) {
            return Err(Error::Invalid("workers must be >= 1".into()));
        }
        let (a, b, c) = self.split;
        if !(a > 0.0 && b > 0.0 && c > 0.0) {
            return Err(Error::Invalid("split fractions must all be > 0".into()));
        }
        if self.top_k == 0 || self.top_k > self.model.total_decoder_heads() {
            return Err(Error::Invalid(format!(
                "top_k {} must lie in 1..={}",
                self.top_k,
                self.model.total_decoder_heads()
            )));
        }
        if self.cohort.labels.is_empty() || self.cohort.subjects_per_class == 0 || self.cohort.sessions == 0 {
            return Err(Error::Invalid("synthetic cohort must be non-empty".into()));
        }
        Ok(())
    }

    /// Complete `key = value` text; applying it to the defaults reproduces
    /// this config.
    pub fn to_kv(&self) -> String {
        let mut s = String::from("# resolved netmae run configuration\n");
        let labels: Vec<&str> = self.cohort.labels.iter().map(|l| l.as_str()).collect();
        let workers = self.workers.map_or_else(|| "auto".to_string(), |w| w.to_string());
        let _ = write!(
            s,
            "seed = {}\noutdir = {}\nworkers = {workers}\natlas = {}\nnetworks = {}\nmanifest = {}\ncheckpoint = {}\n\
             segment_length = {}\npatch_time = {}\npatch_parcels = {}\nsegments_per_recording = {}\n\
             synth_labels = {}\nsynth_subjects_per_class = {}\nsynth_sessions = {}\nsynth_timepoints = {}\n\
             split_train = {}\nsplit_val = {}\nsplit_test = {}\ntop_k = {}\nshuffle_control = {}\n",
            self.seed,
            self.outdir.display(),
            show_path(&self.atlas),
            self.networks,
            show_path(&self.manifest),
            show_path(&self.checkpoint),
            self.segment.length,
            self.segment.patch_time,
            self.segment.patch_parcels,
            self.segment.segments_per_recording,
            labels.join(","),
            self.cohort.subjects_per_class,
            self.cohort.sessions,
            self.cohort.timepoints,
            self.split.0,
            self.split.1,
            self.split.2,
            self.top_k,
            self.shuffle_control,
        );
        s.push_str(&self.model.to_kv());
        s.push_str(&self.pretrain.to_kv(""));
        s.push_str(&self.finetune.to_kv("ft_"));
        for line in self.synth.to_kv().lines() {
            let _ = writeln!(s, "synth.{line}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_reproduces_the_config() {
        let mut c = RunConfig::default();
        c.set("epochs", "3").unwrap();
        c.set("ft_lr", "0.01").unwrap();
        c.set("synth.G.AD", "0.5,0,0,0,0,0,0;".repeat(7).trim_end_matches(';'))
            .unwrap();
        c.set("decoder", "self").unwrap();
        c.set("checkpoint", "a/b.ckpt").unwrap();
        c.set("shuffle_control", "3").unwrap();
        c.finalize().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        fs::write(&p, c.to_kv()).unwrap();
        let mut d = RunConfig::default();
        d.apply_file(&p).unwrap();
        d.finalize().unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut c = RunConfig::default();
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("epochs", "many").is_err());
        assert!(c.set("synth.nope", "1").is_err());
        c.set("top_k", "13").unwrap();
        assert!(c.finalize().is_err());
    }
}
