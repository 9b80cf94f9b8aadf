//! A class-conditioned synthetic cohort written in the on-disk formats.

use netmae::data::Label;
use netmae::synth::{build_transition, gen_cohort, spectral_radius, write_cohort, CouplingSpec};

fn main() -> netmae::Result<()> {
    let spec = CouplingSpec::desk_cohort();
    for label in Label::CLASSES {
        let g = spec.coupling_for(label)?;
        let a = build_transition(&spec, g)?;
        println!(
            "{label}: {}x{} transition, spectral radius {:.3}, G[0][3] = {}, G[1][1] = {}",
            a.rows(),
            a.rows(),
            spectral_radius(&a),
            g[0][3],
            g[1][1]
        );
    }
    let cohort = gen_cohort(&spec, &Label::CLASSES, 2, 1, 300, 7)?;
    let dir = std::env::temp_dir().join("netmae-example-cohort");
    let files = write_cohort(&cohort, &dir, 16)?;
    println!(
        "{} recordings -> {} (atlas {}, ground truth {})",
        cohort.recordings.len(),
        files.manifest.display(),
        files.atlas.display(),
        files.ground_truth.display()
    );
    Ok(())
}
