//! End-to-end presets: train one or two detectors, evaluate them against the
//! exhaustive detector and write every artifact to an output directory.
//!
//! | id | training schedule | optimizers   | evaluated K      |
//! |----|-------------------|--------------|------------------|
//! | 1  | K = 0             | adam         | 0, 1, 2, 3, 5    |
//! | 2  | K = 0, then K = 1 | adam, osgd   | 0, 1             |
//! | 3  | K ~ U[0, 5]       | adam, osgd   | 0, 1, 2, 3, 5    |
//!
//! Both optimizers of one preset start from the same initial weights and see
//! the same training batches.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::config::{ExperimentId, RunConfig};
use crate::error::{input_err, Result};
use crate::nn::{Network, NetworkSpec};
use crate::optim::{Optimizer, OptimizerKind};

use super::report::{write_ber_csv, write_ber_svg, write_loss_csv};
use super::{derive_seed, evaluate_ber, train, BerCurve, ChannelMix, ContinualSchedule, Detector, EvalGrid, EvalOptions, LossLog, MimoSystem};

/// Everything an experiment produced, plus the paths it wrote.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub config: RunConfig,
    pub curve: BerCurve,
    pub trained: Vec<TrainedDetector>,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainedDetector {
    pub optimizer: OptimizerKind,
    pub network: Network,
    pub loss_log: LossLog,
}

/// `base` with the schedule, optimizer and evaluation K-list of preset `id`.
pub fn preset(id: ExperimentId, base: &RunConfig) -> RunConfig {
    let mut cfg = base.clone();
    cfg.experiment = id;
    match id {
        ExperimentId::Custom => {}
        ExperimentId::Mismatch => {
            cfg.optimizer = OptimizerKind::Adam;
            cfg.schedule = vec![ChannelMix::Fixed(0.0)];
            cfg.eval_k = vec![0.0, 1.0, 2.0, 3.0, 5.0];
        }
        ExperimentId::Sequential => {
            cfg.optimizer = OptimizerKind::Osgd;
            cfg.schedule = vec![ChannelMix::Fixed(0.0), ChannelMix::Fixed(1.0)];
            cfg.eval_k = vec![0.0, 1.0];
        }
        ExperimentId::Mixture => {
            cfg.optimizer = OptimizerKind::Osgd;
            cfg.schedule = vec![ChannelMix::Uniform { min: 0.0, max: 5.0 }];
            cfg.eval_k = vec![0.0, 1.0, 2.0, 3.0, 5.0];
        }
    }
    cfg
}

/// Optimizers trained by a preset; custom runs use the configured one.
pub fn optimizers_for(cfg: &RunConfig) -> Vec<OptimizerKind> {
    match cfg.experiment {
        ExperimentId::Custom => vec![cfg.optimizer],
        ExperimentId::Mismatch => vec![OptimizerKind::Adam],
        ExperimentId::Sequential | ExperimentId::Mixture => vec![OptimizerKind::Adam, OptimizerKind::Osgd],
    }
}

pub fn system_of(cfg: &RunConfig) -> Result<MimoSystem> {
    MimoSystem::new(cfg.n_tx, cfg.n_rx, cfg.scheme())
}

pub fn grid_of(cfg: &RunConfig) -> EvalGrid {
    EvalGrid {
        k_list: cfg.eval_k.clone(),
        ebn0_list_db: cfg.ebn0_db.clone(),
        min_bit_errors: cfg.min_bit_errors,
        max_blocks: cfg.max_blocks,
    }
}

pub fn eval_options_of(cfg: &RunConfig) -> EvalOptions {
    EvalOptions {
        seed: cfg.seed,
        workers: cfg.effective_workers(),
        chunk_blocks: cfg.eval_chunk,
    }
}

/// Initializes a detector network from the run seed and trains it on the
/// configured schedule.
pub fn train_from_config(cfg: &RunConfig, kind: OptimizerKind) -> Result<(Network, Optimizer, LossLog)> {
    cfg.validate()?;
    let system = system_of(cfg)?;
    let spec = NetworkSpec::mimo_detector(cfg.n_tx, system.scheme.bits_per_symbol());
    let mut net = Network::init(spec, &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0)));
    let mut opt = Optimizer::new(kind, cfg.optim, &net);
    opt.sgd_learning_rate = cfg.sgd_lr;
    let schedule = ContinualSchedule::from_channels(
        &cfg.schedule,
        cfg.train_ebn0_db,
        cfg.batch_size,
        cfg.iterations,
        cfg.seed,
    );
    let log = train(&mut net, &mut opt, &schedule, &system)?;
    Ok((net, opt, log))
}

fn title(cfg: &RunConfig) -> String {
    let what = match cfg.experiment {
        ExperimentId::Custom => "custom run",
        ExperimentId::Mismatch => "Experiment 1: trained on K=0",
        ExperimentId::Sequential => "Experiment 2: trained on K=0 then K=1",
        ExperimentId::Mixture => "Experiment 3: trained on K in [0, 5]",
    };
    format!("{what} ({}x{} {})", cfg.n_tx, cfg.n_rx, cfg.modulation.to_uppercase())
}

/// Runs the experiment selected by `cfg.experiment` (after applying its
/// preset) and writes into `out_dir`:
/// `config.txt`, `<optimizer>.ckpt` and `loss_<optimizer>.csv` per trained
/// network, `ber.csv` and `ber.svg`.
pub fn run_experiment(cfg: &RunConfig, out_dir: &Path) -> Result<ExperimentRun> {
    let cfg = preset(cfg.experiment, cfg);
    cfg.validate()?;
    if cfg.experiment == ExperimentId::Custom {
        return input_err("choose experiment 1, 2 or 3");
    }
    std::fs::create_dir_all(out_dir)?;
    let echo = cfg.to_text();
    let comments = cfg.to_comment_block();
    let mut files = Vec::new();

    let config_path = out_dir.join("config.txt");
    std::fs::write(&config_path, &echo)?;
    files.push(config_path);

    let mut trained = Vec::new();
    for kind in optimizers_for(&cfg) {
        log::info!("training with {}", kind.tag());
        let (network, optimizer, loss_log) = train_from_config(&cfg, kind)?;
        let ckpt_path = out_dir.join(format!("{}.ckpt", kind.tag()));
        save_checkpoint(
            &Checkpoint {
                network: network.clone(),
                optimizer: Some(optimizer),
                metadata: echo.clone(),
            },
            &ckpt_path,
        )?;
        files.push(ckpt_path);
        let loss_path = out_dir.join(format!("loss_{}.csv", kind.tag()));
        write_loss_csv(&loss_log, &comments, &loss_path)?;
        files.push(loss_path);
        trained.push(TrainedDetector {
            optimizer: kind,
            network,
            loss_log,
        });
    }

    let system = system_of(&cfg)?;
    let mut detectors = vec![Detector::Mlsd];
    detectors.extend(trained.iter().map(|t| Detector::Network {
        label: t.optimizer.tag(),
        net: &t.network,
    }));
    let curve = evaluate_ber(&detectors, &grid_of(&cfg), &system, &eval_options_of(&cfg))?;

    let csv_path = out_dir.join("ber.csv");
    write_ber_csv(&curve, &comments, &csv_path)?;
    files.push(csv_path);
    let svg_path = out_dir.join("ber.svg");
    write_ber_svg(&curve, &title(&cfg), &comments, &svg_path)?;
    files.push(svg_path);

    Ok(ExperimentRun {
        config: cfg,
        curve,
        trained,
        files,
    })
}

pub fn run_experiment_1(cfg: &RunConfig, out_dir: &Path) -> Result<ExperimentRun> {
    run_experiment(&preset(ExperimentId::Mismatch, cfg), out_dir)
}

pub fn run_experiment_2(cfg: &RunConfig, out_dir: &Path) -> Result<ExperimentRun> {
    run_experiment(&preset(ExperimentId::Sequential, cfg), out_dir)
}

pub fn run_experiment_3(cfg: &RunConfig, out_dir: &Path) -> Result<ExperimentRun> {
    run_experiment(&preset(ExperimentId::Mixture, cfg), out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.iterations = 3;
        cfg.batch_size = 16;
        cfg.ebn0_db = vec![0.0, 6.0];
        cfg.max_blocks = 200;
        cfg.min_bit_errors = 10;
        cfg.eval_chunk = 100;
        cfg.workers = 1;
        cfg
    }

    #[test]
    fn experiment_one_writes_exactly_five_files() {
        let dir = tempfile::tempdir().unwrap();
        let run = run_experiment_1(&tiny(), dir.path()).unwrap();
        let mut names: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        assert_eq!(names, ["adam.ckpt", "ber.csv", "ber.svg", "config.txt", "loss_adam.csv"]);
        assert_eq!(run.files.len(), 5);
        // |K| x |Eb/N0| x 2 detectors
        assert_eq!(run.curve.points.len(), 5 * 2 * 2);
    }

    #[test]
    fn paired_optimizers_share_data_and_init() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.iterations = 1;
        let run = run_experiment_2(&cfg, dir.path()).unwrap();
        assert_eq!(run.trained.len(), 2);
        // identical first-step loss: same weights, same first batch
        assert_eq!(run.trained[0].loss_log.records[0].loss, run.trained[1].loss_log.records[0].loss);
        assert_eq!(run.curve.points.len(), 2 * 2 * 3);
    }

    #[test]
    fn presets_fix_schedules() {
        let base = RunConfig::default();
        assert_eq!(preset(ExperimentId::Sequential, &base).schedule.len(), 2);
        assert_eq!(
            preset(ExperimentId::Mixture, &base).schedule,
            vec![ChannelMix::Uniform { min: 0.0, max: 5.0 }]
        );
        assert_eq!(optimizers_for(&preset(ExperimentId::Mismatch, &base)), vec![OptimizerKind::Adam]);
        assert!(run_experiment(&base, Path::new("/nonexistent")).is_err());
    }
}
