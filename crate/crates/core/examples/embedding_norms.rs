//! Embedding-norm marker per recording and Welch tests between groups.

use netmae::analysis::format_group_stats;
use netmae::cli::{norms, pretrain_cmd, synth_cmd, RunConfig};

fn main() -> netmae::Result<()> {
    let dir = std::env::temp_dir().join("netmae-example-norms");
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("synth_subjects_per_class", "8"),
        ("synth_timepoints", "400"),
        ("epochs", "6"),
    ] {
        cfg.set(k, v)?;
    }
    cfg.outdir = dir.clone();
    cfg.finalize()?;
    let files = synth_cmd(&cfg)?;
    cfg.atlas = Some(files.atlas);
    cfg.manifest = Some(files.manifest);
    pretrain_cmd(&cfg)?;
    cfg.checkpoint = Some(dir.join("model.ckpt"));
    let stats = norms(&cfg)?;
    print!("{}", format_group_stats(&stats));
    Ok(())
}
