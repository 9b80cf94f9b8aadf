use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use super::config::RunConfig;
use crate::analysis::{
    collect_contributions, contribution_delta, describe_delta, format_group_stats, group_stats, norm_trajectories,
    write_classification, write_contributions_csv, write_delta_csv, write_norms_csv, ClassificationReport,
    ContributionAccumulator, ContributionProfile, GroupStats,
};
use crate::data::{
    load_manifest, prepare_all, split_subjects, split_subjects_stratified, CohortSplit, Label, NetworkAtlas,
    ParcelTimeSeries, Part, PreparedRecording,
};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, ModelState};
use crate::synth::{gen_cohort, read_ground_truth, write_cohort, CohortFiles, CouplingSpec};
use crate::train::{
    evaluate_predictions, evaluate_reconstruction, finetune_classifier, permute_labels, predict_recordings, pretrain,
    ReconEval, RecordingPrediction, TrainConfig,
};

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Recordings, atlas and the subject split shared by every stage.
pub struct Inputs {
    pub atlas: NetworkAtlas,
    pub recordings: Vec<ParcelTimeSeries>,
    pub split: CohortSplit,
}

impl Inputs {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let atlas_path = cfg
            .atlas
            .as_ref()
            .ok_or_else(|| Error::Invalid("no atlas given (set `atlas`)".into()))?;
        let manifest = cfg
            .manifest
            .as_ref()
            .ok_or_else(|| Error::Invalid("no manifest given (set `manifest`)".into()))?;
        let atlas = NetworkAtlas::load(atlas_path, cfg.networks, cfg.segment.patch_parcels)?;
        let recordings = load_manifest(manifest, atlas.parcel_count())?;
        if recordings.is_empty() {
            return Err(Error::Invalid(format!(
                "{}: manifest lists no recordings",
                manifest.display()
            )));
        }
        // Stratify when every recording carries a diagnostic label.
        let labeled = recordings.iter().all(|r| r.label.class_index().is_some());
        let split = if labeled {
            split_subjects_stratified(&recordings, cfg.split, cfg.seed)?
        } else {
            split_subjects(&recordings, cfg.split, cfg.seed)?
        };
        Ok(Self {
            atlas,
            recordings,
            split,
        })
    }

    pub fn prepare(&self, cfg: &RunConfig, part: Part) -> Result<Vec<PreparedRecording>> {
        prepare_all(
            self.split.select(&self.recordings, part),
            &self.atlas,
            &cfg.segment,
            cfg.seed,
        )
    }

    pub fn prepare_all(&self, cfg: &RunConfig) -> Result<Vec<PreparedRecording>> {
        prepare_all(&self.recordings, &self.atlas, &cfg.segment, cfg.seed)
    }

    fn split_text(&self) -> String {
        let mut s = String::from("subject,part\n");
        for (part, ids) in [
            ("train", &self.split.train),
            ("val", &self.split.val),
            ("test", &self.split.test),
        ] {
            for id in ids {
                let _ = writeln!(s, "{id},{part}");
            }
        }
        s
    }
}

fn load_model(cfg: &RunConfig) -> Result<ModelState> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Invalid("no checkpoint given (set `checkpoint`)".into()))?;
    let state = load_checkpoint(path)?;
    if state.config.token_dim != cfg.segment.token_dim() {
        return Err(Error::Checkpoint(format!(
            "{} expects {}-value tokens, the segment spec gives {}",
            path.display(),
            state.config.token_dim,
            cfg.segment.token_dim()
        )));
    }
    Ok(state)
}

/// Generates the configured cohort into `outdir`.
pub fn synth_cmd(cfg: &RunConfig) -> Result<CohortFiles> {
    let c = &cfg.cohort;
    let cohort = gen_cohort(
        &cfg.synth,
        &c.labels,
        c.subjects_per_class,
        c.sessions,
        c.timepoints,
        cfg.seed,
    )?;
    let files = write_cohort(&cohort, &cfg.outdir, cfg.segment.patch_parcels)?;
    println!(
        "synth: {} recordings -> {}",
        cohort.recordings.len(),
        files.manifest.display()
    );
    Ok(files)
}

/// Pretrains on the train split (validation picks the best epoch) and
/// writes `model.ckpt`, `history.csv`, `epochs.csv` and `split.csv`.
pub fn pretrain_cmd(cfg: &RunConfig) -> Result<()> {
    let inputs = Inputs::load(cfg)?;
    write(&cfg.outdir.join("split.csv"), &inputs.split_text())?;
    let train = inputs.prepare(cfg, Part::Train)?;
    let val = inputs.prepare(cfg, Part::Val)?;
    let mut model = cfg.model.clone();
    model.max_tokens = model.max_tokens.max(
        train
            .iter()
            .chain(&val)
            .flat_map(|r| r.segments.first())
            .map(|g| g.len())
            .max()
            .unwrap_or(0),
    );
    let init = ModelState::init(model, cfg.seed)?;
    let ckpt = cfg.outdir.join("model.ckpt");
    let tc = TrainConfig {
        checkpoint: Some(ckpt.clone()),
        ..cfg.pretrain.clone()
    };
    let out = pretrain(init, &train, &val, &inputs.atlas, &tc)?;
    out.history.write_csv(&cfg.outdir.join("history.csv"))?;
    let mut epochs = String::from("epoch,train_loss,val_loss\n");
    for e in &out.history.epochs {
        let v = e.validation.map_or_else(String::new, |v| format!("{v:e}"));
        let _ = writeln!(epochs, "{},{:e},{v}", e.epoch, e.train_loss);
    }
    write(&cfg.outdir.join("epochs.csv"), &epochs)?;
    println!(
        "pretrain: {} steps in {:.1}s, final loss {:.4}, best epoch {:?} -> {}",
        out.history.steps.len(),
        out.history.wall_seconds,
        out.history.final_loss().unwrap_or(f64::NAN),
        out.history.best_epoch,
        ckpt.display()
    );
    Ok(())
}

/// Scores every network's reconstruction on the test split and writes
/// `predictability.csv`.
pub fn eval_recon(cfg: &RunConfig) -> Result<ReconEval> {
    let inputs = Inputs::load(cfg)?;
    let state = load_model(cfg)?;
    let test = inputs.prepare(cfg, Part::Test)?;
    let eval = evaluate_reconstruction(&state, &test, &inputs.atlas)?;
    let mut s = String::from("network,name,pearson,mse,tokens,skipped\n");
    for n in 0..inputs.atlas.network_count() {
        let _ = writeln!(
            s,
            "{n},{},{:e},{:e},{},{}",
            inputs.atlas.network_name(n),
            eval.pearson[n],
            eval.mse[n],
            eval.tokens[n],
            eval.skipped[n]
        );
    }
    write(&cfg.outdir.join("predictability.csv"), &s)?;
    println!("eval-recon: predictability {:?}", rounded(&eval.pearson));
    Ok(eval)
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}

/// Contribution profiles for all test recordings and for each label.
#[derive(Clone, Debug)]
pub struct AttnReport {
    pub pooled: ContributionProfile,
    pub by_label: BTreeMap<Label, ContributionProfile>,
}

/// Writes `contributions.csv` (all test recordings),
/// `contributions_<LABEL>.csv`, `delta_<A>_<B>.csv` for each label pair and
/// `delta_summary.txt`.
pub fn attn_report(cfg: &RunConfig) -> Result<AttnReport> {
    let inputs = Inputs::load(cfg)?;
    let state = load_model(cfg)?;
    let test = inputs.prepare(cfg, Part::Test)?;
    let mut groups: BTreeMap<Label, Vec<PreparedRecording>> = BTreeMap::new();
    for r in test {
        groups.entry(r.label).or_default().push(r);
    }
    let (layers, heads) = (state.config.decoder_depth, state.config.heads);
    let n = inputs.atlas.network_count();
    let mut pooled = ContributionAccumulator::new(n, layers, heads);
    let mut by_label = BTreeMap::new();
    for (label, recs) in &groups {
        let acc = collect_contributions(&state, recs, &inputs.atlas)?;
        pooled.merge(&acc)?;
        let profile = acc.finish(cfg.top_k)?;
        write_contributions_csv(&cfg.outdir.join(format!("contributions_{label}.csv")), &profile)?;
        by_label.insert(*label, profile);
    }
    let pooled = pooled.finish(cfg.top_k)?;
    write_contributions_csv(&cfg.outdir.join("contributions.csv"), &pooled)?;
    let names = inputs.atlas.names().to_vec();
    let mut summary = String::new();
    let labels: Vec<&Label> = by_label.keys().collect();
    for (i, a) in labels.iter().enumerate() {
        for b in &labels[i + 1..] {
            let delta = contribution_delta(&by_label[*a], &by_label[*b])?;
            write_delta_csv(&cfg.outdir.join(format!("delta_{a}_{b}.csv")), &delta)?;
            let _ = writeln!(summary, "{b} - {a}:\n{}", describe_delta(&delta, &names, 5));
        }
    }
    write(&cfg.outdir.join("delta_summary.txt"), &summary)?;
    println!(
        "attn-report: {} label group(s), pooled profile over {n} targets",
        by_label.len()
    );
    Ok(AttnReport { pooled, by_label })
}

/// Embedding norms of every recording (`norms.csv`) and Welch tests between
/// labels (`group_stats.txt`).
pub fn norms(cfg: &RunConfig) -> Result<GroupStats> {
    let inputs = Inputs::load(cfg)?;
    let state = load_model(cfg)?;
    let recs = inputs.prepare_all(cfg)?;
    let rows = norm_trajectories(&state, &recs)?;
    write_norms_csv(&cfg.outdir.join("norms.csv"), &rows)?;
    let stats = group_stats(&rows)?;
    write(&cfg.outdir.join("group_stats.txt"), &format_group_stats(&stats))?;
    println!("norms: {} recordings, {} group test(s)", rows.len(), stats.tests.len());
    Ok(stats)
}

fn predictions_csv(preds: &[RecordingPrediction]) -> String {
    let mut s = String::from("subject,session,label,p_cn,p_mci,p_ad\n");
    for p in preds {
        let _ = writeln!(
            s,
            "{},{},{},{:e},{:e},{:e}",
            p.subject, p.session, p.label, p.probs[0], p.probs[1], p.probs[2]
        );
    }
    s
}

/// Classification outcome on the test split.
#[derive(Clone, Debug)]
pub struct ClassifyOutcome {
    pub report: ClassificationReport,
    /// Test metrics after training on subject-permuted labels, one per
    /// permutation.
    pub shuffled: Vec<ClassificationReport>,
    pub warnings: Vec<String>,
}

impl ClassifyOutcome {
    /// Mean balanced accuracy of the label-shuffle runs.
    pub fn shuffled_bacc(&self) -> Option<f64> {
        (!self.shuffled.is_empty())
            .then(|| self.shuffled.iter().map(|r| r.balanced_accuracy).sum::<f64>() / self.shuffled.len() as f64)
    }
}

fn train_and_test(
    cfg: &RunConfig,
    init: &ModelState,
    train: &[PreparedRecording],
    val: &[PreparedRecording],
    test: &[PreparedRecording],
) -> Result<(
    ClassificationReport,
    Vec<RecordingPrediction>,
    Vec<String>,
    crate::train::TrainHistory,
)> {
    let out = finetune_classifier(init.clone(), train, val, &cfg.finetune)?;
    let preds = predict_recordings(&out.state, test)?;
    let report = evaluate_predictions(&preds)?;
    Ok((report, preds, out.warnings, out.history))
}

/// Fine-tunes the classifier from the checkpoint and writes
/// `classification.txt`, `predictions.csv` and `finetune_history.csv`;
/// with `shuffle_control = n > 0` also `classification_shuffled.txt`, the
/// test BAcc of `n` runs on subject-permuted train and validation labels.
pub fn classify(cfg: &RunConfig) -> Result<ClassifyOutcome> {
    let inputs = Inputs::load(cfg)?;
    if !inputs.split.is_disjoint() {
        return Err(Error::Contract("subject splits overlap".into()));
    }
    let init = load_model(cfg)?;
    let train = inputs.prepare(cfg, Part::Train)?;
    let val = inputs.prepare(cfg, Part::Val)?;
    let test = inputs.prepare(cfg, Part::Test)?;
    let (report, preds, warnings, history) = train_and_test(cfg, &init, &train, &val, &test)?;
    write_classification(&cfg.outdir.join("classification.txt"), &report)?;
    write(&cfg.outdir.join("predictions.csv"), &predictions_csv(&preds))?;
    history.write_csv(&cfg.outdir.join("finetune_history.csv"))?;
    println!(
        "classify: test BAcc {:.3}, macro-F1 {:.3}, macro-AUC {}",
        report.balanced_accuracy,
        report.macro_f1,
        report.macro_auc.map_or_else(|| "n/a".into(), |a| format!("{a:.3}"))
    );
    let mut shuffled = Vec::with_capacity(cfg.shuffle_control);
    for k in 0..cfg.shuffle_control as u64 {
        let key = crate::seed::derive(cfg.seed, "shuffle-control", k);
        let strain = permute_labels(&train, key);
        let sval = permute_labels(&val, key.wrapping_add(1));
        let (r, _, _, _) = train_and_test(cfg, &init, &strain, &sval, &test)?;
        shuffled.push(r);
    }
    let outcome = ClassifyOutcome {
        report,
        shuffled,
        warnings,
    };
    if let Some(mean) = outcome.shuffled_bacc() {
        let mut s = String::from("permutation,balanced_accuracy\n");
        for (k, r) in outcome.shuffled.iter().enumerate() {
            let _ = writeln!(s, "{k},{:.6}", r.balanced_accuracy);
        }
        let _ = writeln!(s, "mean,{mean:.6}");
        write(&cfg.outdir.join("classification_shuffled.txt"), &s)?;
        println!(
            "classify: label-shuffle control BAcc {mean:.3} (mean of {})",
            outcome.shuffled.len()
        );
    }
    Ok(outcome)
}

/// What `demo` found.
#[derive(Clone, Debug)]
pub struct DemoSummary {
    pub predictability: Vec<f64>,
    /// `(target, true driver, recovered source)` for the strongest
    /// cross-network entry of the ground truth.
    pub recovery: (usize, usize, usize),
    pub classification: ClassificationReport,
    pub seconds: f64,
}

impl DemoSummary {
    pub fn recovered(&self) -> bool {
        self.recovery.1 == self.recovery.2
    }

    pub fn describe(&self) -> String {
        let (t, d, s) = self.recovery;
        format!(
            "demo: predictability {:?}\n\
             demo: target {t}: true driver {d}, strongest contribution from {s} ({})\n\
             demo: test BAcc {:.3}\n\
             demo: finished in {:.1}s",
            rounded(&self.predictability),
            if self.recovered() { "recovered" } else { "NOT recovered" },
            self.classification.balanced_accuracy,
            self.seconds
        )
    }
}

/// Strongest off-diagonal entry `(source, target)` of the shared coupling.
fn dominant_edge(spec: &CouplingSpec) -> (usize, usize) {
    let n = spec.networks();
    let mut best = (0, 1);
    for i in 0..n {
        for j in 0..n {
            if i != j && spec.g[i][j] > spec.g[best.0][best.1] {
                best = (i, j);
            }
        }
    }
    best
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// synth → pretrain → eval-recon → attn-report → norms → classify, all
/// under `outdir` (the cohort goes to `outdir/cohort`). Also writes
/// `recovery.txt`, checking the strongest ground-truth edge against the
/// pooled contribution profile.
pub fn demo(cfg: &RunConfig) -> Result<DemoSummary> {
    let started = Instant::now();
    let cohort_dir = cfg.outdir.join("cohort");
    let synth_cfg = RunConfig {
        outdir: cohort_dir.clone(),
        ..cfg.clone()
    };
    let files = stage("synth", synth_cmd(&synth_cfg))?;
    let mut run = RunConfig {
        atlas: Some(files.atlas.clone()),
        manifest: Some(files.manifest.clone()),
        networks: cfg.synth.networks(),
        ..cfg.clone()
    };
    stage("pretrain", pretrain_cmd(&run))?;
    run.checkpoint = Some(cfg.outdir.join("model.ckpt"));
    let recon = stage("eval-recon", eval_recon(&run))?;
    let report = stage("attn-report", attn_report(&run))?;
    stage("norms", norms(&run))?;
    let classified = stage("classify", classify(&run))?;

    let truth = stage("ground truth", read_ground_truth(&files.ground_truth))?;
    let (driver, target) = dominant_edge(&truth);
    let found = report.pooled.argmax_source(target);
    let column: Vec<String> = (0..truth.networks())
        .map(|s| format!("{:.4}", report.pooled.matrix[s][target]))
        .collect();
    write(
        &cfg.outdir.join("recovery.txt"),
        &format!(
            "target = {target}\ntrue_driver = {driver}\nrecovered_source = {found}\nrecovered = {}\ncolumn = {}\n",
            driver == found,
            column.join(",")
        ),
    )?;
    Ok(DemoSummary {
        predictability: recon.pearson,
        recovery: (target, driver, found),
        classification: classified.report,
        seconds: started.elapsed().as_secs_f64(),
    })
}
