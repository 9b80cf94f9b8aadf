//! Building a run configuration from a file plus overrides, as the command
//! line does, and echoing it back.

use netmae::cli::{parse_args, Invocation};

fn main() -> netmae::Result<()> {
    let file = std::env::temp_dir().join("netmae-example.cfg");
    std::fs::write(
        &file,
        "# overrides\nseed = 11\nepochs = 5\ndecoder = self\nsynth.noise_sd = 0.5\n",
    )
    .map_err(|e| netmae::Error::Invalid(e.to_string()))?;
    let args: Vec<String> = [
        "pretrain",
        "--config",
        file.to_str().unwrap(),
        "--mask-mode",
        "random",
        "--seed=12",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    if let Invocation::Run { command, config } = parse_args(&args)? {
        println!(
            "command {command}: seed {}, mask mode {}, decoder {}",
            config.seed, config.model.mask_mode, config.model.decoder_mode
        );
        print!("{}", config.to_kv());
    }
    Ok(())
}
