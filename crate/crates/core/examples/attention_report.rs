//! Decoder contribution profiles per diagnostic group and their deltas.
//!
//! Runs the `synth`, `pretrain` and `attn-report` stages on a reduced
//! configuration under the system temp directory.

use netmae::cli::{attn_report, pretrain_cmd, synth_cmd, RunConfig};

fn main() -> netmae::Result<()> {
    let dir = std::env::temp_dir().join("netmae-example-attn");
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("synth_subjects_per_class", "8"),
        ("synth_timepoints", "400"),
        ("epochs", "6"),
        ("workers", "auto"),
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
    let report = attn_report(&cfg)?;
    let m = &report.pooled.matrix;
    println!("pooled contributions into network 5 (driven by network 2):");
    for (i, row) in m.iter().enumerate() {
        println!("  from {i}: {:.3}", row[5]);
    }
    println!(
        "{}",
        std::fs::read_to_string(dir.join("delta_summary.txt")).unwrap_or_default()
    );
    Ok(())
}
