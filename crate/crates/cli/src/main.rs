//! `osgd-lab`: train, evaluate and plot ANN-assisted MIMO detectors.
//!
//! Settings come from the built-in defaults, then `--config FILE`, then the
//! `OSGD_OUTPUT_DIR` environment variable, then per-key flags (`--eta_i 0.002`).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use osgd_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use osgd_core::config::{ExperimentId, RunConfig, KEYS, OUTPUT_DIR_ENV};
use osgd_core::harness::experiments::{eval_options_of, grid_of, run_experiment, system_of, train_from_config};
use osgd_core::harness::report::{read_ber_csv, write_ber_csv, write_ber_svg, write_loss_csv};
use osgd_core::harness::{evaluate_ber, Detector};
use osgd_core::{Error, Result};

fn key_args() -> Vec<Arg> {
    KEYS.iter()
        .map(|key| {
            Arg::new(*key)
                .long(*key)
                .value_name("VALUE")
                .global(true)
                .help_heading("Config keys")
        })
        .collect()
}

fn cli() -> Command {
    Command::new("osgd-lab")
        .about("Continual-learning optimizer lab for neural MIMO detection")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .short('c')
                .value_name("FILE")
                .global(true)
                .help("flat `key = value` config file"),
        )
        .args(key_args())
        .subcommand(Command::new("train").about("Train one detector; writes checkpoint, loss log and config echo"))
        .subcommand(Command::new("eval").about("Evaluate a checkpoint against the exhaustive detector; writes ber.csv"))
        .subcommand(
            Command::new("experiment")
                .about("Run a preset end to end (1: mismatch, 2: sequential, 3: mixture)")
                .arg(Arg::new("id").required(true).value_parser(["1", "2", "3"])),
        )
        .subcommand(
            Command::new("plot")
                .about("Render BER CSV files to SVG next to each input")
                .arg(Arg::new("csv").required(true).action(ArgAction::Append).value_name("CSV"))
                .arg(Arg::new("out").long("out").short('o').value_name("SVG").help("output path (single input only)")),
        )
}

/// Effective configuration, validated before any compute.
fn resolve_config(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read config file {path}: {e}")))?;
        cfg.apply_text(&text)?;
    }
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        cfg.set("output_dir", &dir)?;
    }
    for key in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_config_echo(cfg: &RunConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("config.txt");
    std::fs::write(&path, cfg.to_text())?;
    Ok(path)
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    write_config_echo(cfg)?;
    let (network, optimizer, log) = train_from_config(cfg, cfg.optimizer)?;
    let ckpt = cfg.checkpoint_path();
    if let Some(parent) = ckpt.parent() {
        std::fs::create_dir_all(parent)?;
    }
    save_checkpoint(
        &Checkpoint {
            network,
            optimizer: Some(optimizer),
            metadata: cfg.to_text(),
        },
        &ckpt,
    )?;
    let loss = cfg.output_dir.join("loss.csv");
    write_loss_csv(&log, &cfg.to_comment_block(), &loss)?;
    println!("{}", ckpt.display());
    println!("{}", loss.display());
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let path = cfg.checkpoint_path();
    let ckpt = load_checkpoint(&path)
        .map_err(|e| Error::InvalidInput(format!("cannot load checkpoint {}: {e}", path.display())))?;
    let system = system_of(cfg)?;
    let label = ckpt.optimizer.as_ref().map_or("ann", |o| o.kind().tag());
    let detectors = [
        Detector::Mlsd,
        Detector::Network {
            label,
            net: &ckpt.network,
        },
    ];
    let curve = evaluate_ber(&detectors, &grid_of(cfg), &system, &eval_options_of(cfg))?;
    write_config_echo(cfg)?;
    let out = cfg.output_dir.join("ber.csv");
    write_ber_csv(&curve, &cfg.to_comment_block(), &out)?;
    println!("{}", out.display());
    Ok(())
}

fn cmd_experiment(cfg: &RunConfig, id: &str) -> Result<()> {
    let mut cfg = cfg.clone();
    cfg.experiment = ExperimentId::from_tag(id).expect("clap restricts the id");
    let run = run_experiment(&cfg, &cfg.output_dir)?;
    for f in &run.files {
        println!("{}", f.display());
    }
    Ok(())
}

/// The leading `#` lines of a CSV, which carry the run configuration.
fn comment_lines(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect())
}

fn cmd_plot(m: &ArgMatches) -> Result<()> {
    let inputs: Vec<&String> = m.get_many::<String>("csv").expect("required").collect();
    let out = m.get_one::<String>("out");
    if out.is_some() && inputs.len() > 1 {
        return Err(Error::InvalidInput("--out needs exactly one input CSV".into()));
    }
    for input in inputs {
        let path = Path::new(input);
        let curve = read_ber_csv(path)?;
        let target = out.map_or_else(|| path.with_extension("svg"), PathBuf::from);
        let title = path
            .file_stem()
            .map_or_else(|| "BER".to_string(), |s| s.to_string_lossy().into_owned());
        write_ber_svg(&curve, &title, &comment_lines(path)?, &target)?;
        println!("{}", target.display());
    }
    Ok(())
}

fn run(m: &ArgMatches) -> Result<()> {
    match m.subcommand() {
        Some(("plot", sub)) => cmd_plot(sub),
        Some((name, sub)) => {
            let cfg = resolve_config(sub)?;
            match name {
                "train" => cmd_train(&cfg),
                "eval" => cmd_eval(&cfg),
                "experiment" => cmd_experiment(&cfg, sub.get_one::<String>("id").expect("required")),
                _ => unreachable!("clap rejects unknown subcommands"),
            }
        }
        None => unreachable!("subcommand is required"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = cli().get_matches();
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
