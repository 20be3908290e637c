//! Training data generation, training loops and Monte-Carlo evaluation.

pub mod eval;
pub mod experiments;
pub mod report;

use std::fmt;

use ndarray::Array2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detect::{write_features, FeatureVector};
use crate::error::{dim_err, Error, Result};
use crate::modem::{ebn0_to_noise_var, receive, sample_channel, ModulationScheme, RicianModel, TransmitBlock};
use crate::nn::{bce_loss, Network};
use crate::optim::Optimizer;

pub use eval::{evaluate_ber, BerCurve, BerPoint, Detector, EvalGrid, EvalOptions};

/// Antenna counts and constellation of the link under study.
#[derive(Debug, Clone, PartialEq)]
pub struct MimoSystem {
    pub n_tx: usize,
    pub n_rx: usize,
    pub scheme: ModulationScheme,
}

impl MimoSystem {
    pub fn new(n_tx: usize, n_rx: usize, scheme: ModulationScheme) -> Result<Self> {
        RicianModel::new(n_rx, n_tx, 0.0)?;
        Ok(Self { n_tx, n_rx, scheme })
    }

    pub fn feature_len(&self) -> usize {
        FeatureVector::len_for(self.n_tx)
    }

    pub fn bits_per_block(&self) -> usize {
        self.n_tx * self.scheme.bits_per_symbol()
    }

    pub fn model(&self, k_factor: f64) -> Result<RicianModel> {
        RicianModel::new(self.n_rx, self.n_tx, k_factor)
    }
}

/// Channel K-factor used by a training task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelMix {
    Fixed(f64),
    /// K drawn uniformly from `[min, max]` for every sample.
    Uniform { min: f64, max: f64 },
}

impl ChannelMix {
    /// Parses `K` or `Kmin:Kmax`.
    pub fn parse(s: &str) -> Option<Self> {
        match s.split_once(':') {
            None => s.trim().parse().ok().map(ChannelMix::Fixed),
            Some((a, b)) => Some(ChannelMix::Uniform {
                min: a.trim().parse().ok()?,
                max: b.trim().parse().ok()?,
            }),
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            ChannelMix::Fixed(k) => k >= 0.0 && k.is_finite(),
            ChannelMix::Uniform { min, max } => min >= 0.0 && max >= min && max.is_finite(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ChannelMix::Fixed(k) => k,
            ChannelMix::Uniform { min, max } => min + (max - min) * rng.random::<f64>(),
        }
    }
}

impl fmt::Display for ChannelMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelMix::Fixed(k) => write!(f, "{k}"),
            ChannelMix::Uniform { min, max } => write!(f, "{min}:{max}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTask {
    pub channel: ChannelMix,
    pub train_ebn0_db: f64,
    pub batch_size: usize,
    pub iteration_budget: u64,
    /// Seeds this task's data stream.
    pub seed: u64,
}

/// Tasks trained one after another on the same network and optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinualSchedule {
    pub tasks: Vec<TrainingTask>,
}

impl ContinualSchedule {
    /// One task per channel spec, all sharing the remaining settings. Task `i`
    /// draws its data from `derive_seed(seed, i + 1)`.
    pub fn from_channels(
        channels: &[ChannelMix],
        train_ebn0_db: f64,
        batch_size: usize,
        iteration_budget: u64,
        seed: u64,
    ) -> Self {
        Self {
            tasks: channels
                .iter()
                .enumerate()
                .map(|(i, &channel)| TrainingTask {
                    channel,
                    train_ebn0_db,
                    batch_size,
                    iteration_budget,
                    seed: derive_seed(seed, i as u64 + 1),
                })
                .collect(),
        }
    }
}

/// Independent 64-bit seed for sub-stream `label` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label);
    rng.next_u64()
}

/// Draws one mini-batch: features (`batch x 2M(M+1)`) and target bits
/// (`batch x M log₂L`, as 0.0/1.0).
pub fn generate_batch<R: Rng + ?Sized>(
    task: &TrainingTask,
    system: &MimoSystem,
    rng: &mut R,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut features = Array2::zeros((task.batch_size, system.feature_len()));
    let mut targets = Array2::zeros((task.batch_size, system.bits_per_block()));
    for i in 0..task.batch_size {
        let model = system.model(task.channel.sample(rng))?;
        let noise_var = ebn0_to_noise_var(task.train_ebn0_db, &system.scheme, &model);
        let h = sample_channel(&model, rng);
        let tx = TransmitBlock::random(&system.scheme, system.n_tx, rng);
        let y = receive(&tx.symbols, &h, noise_var, rng)?;
        let mut row = features.row_mut(i);
        write_features(&h, &y, row.as_slice_mut().expect("row-major"))?;
        for (t, &b) in targets.row_mut(i).iter_mut().zip(&tx.bits) {
            *t = f64::from(b);
        }
    }
    Ok((features, targets))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    /// Optimizer step counter after this update (global across tasks).
    pub step: u64,
    pub task_index: usize,
    pub loss: f64,
    pub effective_lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossLog {
    pub records: Vec<LossRecord>,
}

impl LossLog {
    /// Mean loss over the records `range` of one task.
    pub fn mean_loss(&self, task_index: usize, range: std::ops::Range<usize>) -> Option<f64> {
        let losses: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.task_index == task_index)
            .map(|r| r.loss)
            .collect();
        let slice = losses.get(range)?;
        (!slice.is_empty()).then(|| slice.iter().sum::<f64>() / slice.len() as f64)
    }
}

/// Runs every task of `schedule` in order, `iteration_budget` mini-batches
/// each. Optimizer state (including the step counter and any projection
/// matrices) carries over from one task to the next.
pub fn train(
    net: &mut Network,
    optimizer: &mut Optimizer,
    schedule: &ContinualSchedule,
    system: &MimoSystem,
) -> Result<LossLog> {
    if net.spec().input_dim() != system.feature_len() || net.spec().output_dim() != system.bits_per_block() {
        return dim_err(format!(
            "network {:?} does not fit a {}x{} {} link",
            net.spec().layer_dims(),
            system.n_rx,
            system.n_tx,
            system.scheme.name()
        ));
    }
    let mut log = LossLog::default();
    for (task_index, task) in schedule.tasks.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
        log::info!(
            "task {task_index}: K = {}, {} steps of {} samples",
            task.channel,
            task.iteration_budget,
            task.batch_size
        );
        for _ in 0..task.iteration_budget {
            let (features, targets) = generate_batch(task, system, &mut rng)?;
            let trace = net.forward(features.view())?;
            let loss = if trace.output.iter().all(|p| p.is_finite()) {
                bce_loss(trace.output.view(), targets.view())?
            } else {
                f64::NAN
            };
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss,
                    step: optimizer.t + 1,
                    task: task_index,
                });
            }
            let grads = net.backward(&trace, targets.view())?;
            let inputs = trace.mean_layer_inputs();
            let report = optimizer.step(net, &grads, &inputs)?;
            log.records.push(LossRecord {
                step: optimizer.t,
                task_index,
                loss,
                effective_lr: report.effective_lr,
            });
            if optimizer.t % 1000 == 0 {
                log::info!("step {}: loss {loss:.5}, lr {:.3e}", optimizer.t, report.effective_lr);
            }
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{predict_bits, NetworkSpec};
    use crate::optim::{OptimizerConfig, OptimizerKind};

    fn system() -> MimoSystem {
        MimoSystem::new(4, 8, ModulationScheme::qpsk()).unwrap()
    }

    fn task(channel: ChannelMix, batch: usize, budget: u64) -> TrainingTask {
        TrainingTask {
            channel,
            train_ebn0_db: 8.0,
            batch_size: batch,
            iteration_budget: budget,
            seed: 99,
        }
    }

    #[test]
    fn channel_mix_parsing() {
        assert_eq!(ChannelMix::parse("2.5"), Some(ChannelMix::Fixed(2.5)));
        assert_eq!(ChannelMix::parse("0:5"), Some(ChannelMix::Uniform { min: 0.0, max: 5.0 }));
        assert_eq!(ChannelMix::parse("x"), None);
        assert!(!ChannelMix::Uniform { min: 3.0, max: 1.0 }.is_valid());
        assert!(!ChannelMix::Fixed(-1.0).is_valid());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mix = ChannelMix::Uniform { min: 0.0, max: 5.0 };
        for _ in 0..1000 {
            let k = mix.sample(&mut rng);
            assert!((0.0..=5.0).contains(&k));
        }
    }

    #[test]
    fn batch_shapes_and_determinism() {
        let sys = system();
        let t = task(ChannelMix::Uniform { min: 0.0, max: 5.0 }, 500, 1);
        let (f, s) = generate_batch(&t, &sys, &mut ChaCha8Rng::seed_from_u64(t.seed)).unwrap();
        assert_eq!(f.dim(), (500, 40));
        assert_eq!(s.dim(), (500, 8));
        assert!(s.iter().all(|&b| b == 0.0 || b == 1.0));
        let (f2, s2) = generate_batch(&t, &sys, &mut ChaCha8Rng::seed_from_u64(t.seed)).unwrap();
        assert_eq!((f, s), (f2, s2));
    }

    #[test]
    fn hard_decisions_have_block_length() {
        let sys = system();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::init(NetworkSpec::mimo_detector(4, 2), &mut rng);
        let t = task(ChannelMix::Fixed(0.0), 3, 1);
        let (f, _) = generate_batch(&t, &sys, &mut rng).unwrap();
        let out = net.forward(f.view()).unwrap().output;
        assert_eq!(predict_bits(out.row(0).as_slice().unwrap()).len(), 8);
    }

    #[test]
    fn training_is_deterministic_and_starts_near_chance() {
        let sys = system();
        let schedule = ContinualSchedule::from_channels(&[ChannelMix::Fixed(0.0), ChannelMix::Fixed(1.0)], 8.0, 32, 5, 3);
        let run = || {
            let mut net = Network::init(NetworkSpec::mimo_detector(4, 2), &mut ChaCha8Rng::seed_from_u64(4));
            let mut opt = Optimizer::new(OptimizerKind::Osgd, OptimizerConfig::default(), &net);
            let log = train(&mut net, &mut opt, &schedule, &sys).unwrap();
            (net, log, opt.t)
        };
        let (net_a, log_a, t) = run();
        let (net_b, log_b, _) = run();
        assert_eq!(log_a, log_b);
        assert_eq!(net_a, net_b);
        assert_eq!(t, 10);
        assert_eq!(log_a.records.len(), 10);
        assert_eq!(log_a.records[5].task_index, 1);
        assert_eq!(log_a.records[9].step, 10);
        // untrained sigmoid outputs sit in the same ballpark as a coin flip
        let first = log_a.records[0].loss;
        assert!(first.is_finite() && first > 0.3 && first < 1.5, "{first}");
    }

    #[test]
    fn training_rejects_mismatched_network() {
        let sys = system();
        let mut net = Network::init(NetworkSpec::mimo_detector(2, 2), &mut ChaCha8Rng::seed_from_u64(4));
        let mut opt = Optimizer::new(OptimizerKind::Adam, OptimizerConfig::default(), &net);
        let schedule = ContinualSchedule::from_channels(&[ChannelMix::Fixed(0.0)], 8.0, 4, 1, 3);
        assert!(train(&mut net, &mut opt, &schedule, &sys).is_err());
    }

    #[test]
    fn exploding_updates_abort_training() {
        let sys = system();
        let mut net = Network::init(NetworkSpec::mimo_detector(4, 2), &mut ChaCha8Rng::seed_from_u64(4));
        for layer in net.layers_mut() {
            layer.weight.fill(f64::NAN);
        }
        let mut opt = Optimizer::new(OptimizerKind::Adam, OptimizerConfig::default(), &net);
        let schedule = ContinualSchedule::from_channels(&[ChannelMix::Fixed(0.0)], 8.0, 4, 3, 3);
        let err = train(&mut net, &mut opt, &schedule, &sys).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { step: 1, task: 0, .. }), "{err}");
    }
}
