//! Masked-network pretraining on a small synthetic cohort, with the
//! per-network predictability of the held-out subjects.

use netmae::data::{prepare_all, Label, SegmentSpec};
use netmae::model::{ModelConfig, ModelState};
use netmae::synth::{gen_cohort, CouplingSpec};
use netmae::train::{evaluate_reconstruction, pretrain, TrainConfig};

fn main() -> netmae::Result<()> {
    let spec = CouplingSpec::single_driver(2, 5, 0.8, 6);
    let atlas = spec.atlas(16)?;
    let cohort = gen_cohort(&spec, &[Label::Unlabeled], 24, 1, 400, 1)?;
    let seg = SegmentSpec {
        length: 16,
        segments_per_recording: 24,
        ..SegmentSpec::default()
    };
    let data = prepare_all(&cohort.recordings, &atlas, &seg, 1)?;
    let (train, rest) = data.split_at(20);
    let (val, test) = rest.split_at(2);
    let model = ModelConfig {
        d_emb: 32,
        encoder_depth: 2,
        decoder_depth: 2,
        heads: 4,
        d_mlp: 64,
        token_dim: seg.token_dim(),
        max_tokens: 16,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        epochs: 8,
        batch_size: 8,
        peak_lr: 2e-3,
        verbose: true,
        ..TrainConfig::default()
    };
    let out = pretrain(ModelState::init(model, 1)?, train, val, &atlas, &cfg)?;
    println!(
        "{} steps in {:.1}s, best epoch {:?}",
        out.history.steps.len(),
        out.history.wall_seconds,
        out.history.best_epoch
    );
    let eval = evaluate_reconstruction(&out.best, test, &atlas)?;
    for (n, (r, mse)) in eval.pearson.iter().zip(&eval.mse).enumerate() {
        let note = match n {
            5 => "  driven by network 2",
            6 => "  pure noise",
            _ => "",
        };
        println!("network {n}: r = {r:+.3}, mse = {mse:.3}{note}");
    }
    Ok(())
}
