//! The `netmae` command line: argument parsing, run configuration and one
//! function per subcommand.

mod commands;
mod config;

use std::fs;
use std::path::PathBuf;

pub use commands::{
    attn_report, classify, demo, eval_recon, norms, pretrain_cmd, synth_cmd, AttnReport, ClassifyOutcome, DemoSummary,
    Inputs,
};
pub use config::{CohortSettings, RunConfig};

use crate::error::{Error, Result};

pub const SUBCOMMANDS: [&str; 7] = [
    "synth",
    "pretrain",
    "eval-recon",
    "attn-report",
    "norms",
    "classify",
    "demo",
];

fn usage() -> String {
    "usage: netmae <subcommand> [--config FILE] [--outdir DIR] [--seed N] [--workers N]\n\
     \x20              [--mask-mode network|random] [--decoder cross|self] [--KEY VALUE ...]\n\
     \n\
     subcommands:\n\
     \x20 synth        generate a synthetic cohort (recordings, manifest, atlas, ground truth)\n\
     \x20 pretrain     masked-network pretraining; writes model.ckpt and history.csv\n\
     \x20 eval-recon   per-network reconstruction predictability on the test split\n\
     \x20 attn-report  decoder contribution profiles per label and their deltas\n\
     \x20 norms        embedding-norm trajectories and Welch tests between labels\n\
     \x20 classify     fine-tune the classifier and report test metrics\n\
     \x20 demo         every stage above on a fresh synthetic cohort\n\
     \n\
     Any config key can be given as --KEY VALUE; the resolved configuration is\n\
     written to <outdir>/resolved_config.txt before any work starts.\n\
     Exit codes: 0 success, 1 invalid input, 2 runtime failure.\n"
        .to_string()
}

/// A parsed command line.
#[derive(Clone, Debug, PartialEq)]
pub enum Invocation {
    Help(Option<String>),
    Run { command: String, config: RunConfig },
}

/// Parses arguments (without the program name). The config file applies
/// first and `--key value` pairs override it in order.
pub fn parse_args(args: &[String]) -> Result<Invocation> {
    let Some(command) = args.first() else {
        return Err(Error::Invalid("missing subcommand".into()));
    };
    if command == "--help" || command == "-h" || command == "help" {
        return Ok(Invocation::Help(None));
    }
    if !SUBCOMMANDS.contains(&command.as_str()) {
        return Err(Error::Invalid(format!("unknown subcommand {command:?}")));
    }
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut config_file: Option<PathBuf> = None;
    let mut rest = args[1..].iter();
    while let Some(flag) = rest.next() {
        if flag == "--help" || flag == "-h" {
            return Ok(Invocation::Help(Some(command.clone())));
        }
        let key = flag
            .strip_prefix("--")
            .filter(|k| !k.is_empty())
            .ok_or_else(|| Error::Invalid(format!("unexpected argument {flag:?}")))?;
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = rest
                    .next()
                    .ok_or_else(|| Error::Invalid(format!("--{key} needs a value")))?;
                (key.to_string(), v.clone())
            }
        };
        let key = match key.as_str() {
            "mask-mode" => "mask_mode".to_string(),
            _ => key.replace('-', "_"),
        };
        if key == "config" {
            config_file = Some(PathBuf::from(value));
        } else {
            pairs.push((key, value));
        }
    }
    let mut config = RunConfig::default();
    if let Some(p) = &config_file {
        config.apply_file(p)?;
    }
    for (k, v) in &pairs {
        config.set(k, v)?;
    }
    config.finalize()?;
    Ok(Invocation::Run {
        command: command.clone(),
        config,
    })
}

fn run(command: &str, config: &RunConfig) -> Result<()> {
    fs::create_dir_all(&config.outdir).map_err(|e| Error::io(&config.outdir, e))?;
    let echo = config.outdir.join("resolved_config.txt");
    fs::write(&echo, config.to_kv()).map_err(|e| Error::io(&echo, e))?;
    let workers = config
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Invalid(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| match command {
        "synth" => synth_cmd(config).map(|_| ()),
        "pretrain" => pretrain_cmd(config),
        "eval-recon" => eval_recon(config).map(|_| ()),
        "attn-report" => attn_report(config).map(|_| ()),
        "norms" => norms(config).map(|_| ()),
        "classify" => classify(config).map(|_| ()),
        "demo" => demo(config).map(|s| {
            println!("{}", s.describe());
        }),
        other => Err(Error::Invalid(format!("unknown subcommand {other:?}"))),
    })
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 for invalid input, 2 for runtime failures.
pub fn dispatch(args: &[String]) -> i32 {
    match parse_args(args) {
        Ok(Invocation::Help(_)) => {
            print!("{}", usage());
            0
        }
        Ok(Invocation::Run { command, config }) => match run(&command, &config) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("netmae {command}: {e}");
                if e.is_validation() {
                    1
                } else {
                    2
                }
            }
        },
        Err(e) => {
            eprintln!("netmae: {e}\n\n{}", usage());
            1
        }
    }
}
