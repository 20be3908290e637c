//! Monte-Carlo bit-error-rate estimation over block-fading channels.
//!
//! Every detector handed to one [`evaluate_ber`] call sees the same channel,
//! symbol and noise draws. Blocks are produced in fixed-size chunks, each from
//! its own random stream keyed by (grid point, chunk index); chunks are
//! accumulated in index order and the stopping rule is checked after each one,
//! so results do not depend on how many worker threads ran the chunks.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::detect::{count_bit_errors, mlsd, write_features};
use crate::error::{input_err, Result};
use crate::modem::{ebn0_to_noise_var, receive, sample_channel, TransmitBlock};
use crate::nn::Network;

use super::MimoSystem;

/// A detector under test.
#[derive(Debug, Clone, Copy)]
pub enum Detector<'a> {
    /// Exhaustive maximum-likelihood search.
    Mlsd,
    /// Hard decisions on a trained network's output.
    Network { label: &'a str, net: &'a Network },
}

impl Detector<'_> {
    pub fn label(&self) -> &str {
        match self {
            Detector::Mlsd => "mlsd",
            Detector::Network { label, .. } => label,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    pub k_list: Vec<f64>,
    pub ebn0_list_db: Vec<f64>,
    /// Stop a grid point once every detector has at least this many errors.
    pub min_bit_errors: u64,
    /// ... or once this many blocks were sent.
    pub max_blocks: u64,
}

impl EvalGrid {
    pub fn validate(&self) -> Result<()> {
        if self.k_list.is_empty() || self.ebn0_list_db.is_empty() {
            return input_err("evaluation grid needs at least one K and one Eb/N0 value");
        }
        if self.min_bit_errors == 0 || self.max_blocks == 0 {
            return input_err("min_bit_errors and max_blocks must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub seed: u64,
    pub workers: usize,
    pub chunk_blocks: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BerPoint {
    pub detector: String,
    pub k_factor: f64,
    pub ebn0_db: f64,
    pub bits_sent: u64,
    pub bit_errors: u64,
    pub seed: u64,
}

impl BerPoint {
    pub fn ber(&self) -> f64 {
        if self.bits_sent == 0 {
            0.0
        } else {
            self.bit_errors as f64 / self.bits_sent as f64
        }
    }

    /// Binomial standard deviation of the BER estimate.
    pub fn std_error(&self) -> f64 {
        if self.bits_sent == 0 {
            return 0.0;
        }
        let p = self.ber();
        (p * (1.0 - p) / self.bits_sent as f64).sqrt()
    }
}

/// Where a BER curve crosses a target value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Crossing {
    /// Interpolated Eb/N0 in dB.
    At(f64),
    /// The curve stays above the target over the whole grid.
    BeyondGrid,
}

impl Crossing {
    /// dB value, with `BeyondGrid` mapped to +∞.
    pub fn db(self) -> f64 {
        match self {
            Crossing::At(x) => x,
            Crossing::BeyondGrid => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BerCurve {
    pub points: Vec<BerPoint>,
}

impl BerCurve {
    /// Points of one detector at one K, sorted by Eb/N0.
    pub fn series(&self, detector: &str, k_factor: f64) -> Vec<&BerPoint> {
        let mut s: Vec<&BerPoint> = self
            .points
            .iter()
            .filter(|p| p.detector == detector && p.k_factor == k_factor)
            .collect();
        s.sort_by(|a, b| a.ebn0_db.total_cmp(&b.ebn0_db));
        s
    }

    pub fn point(&self, detector: &str, k_factor: f64, ebn0_db: f64) -> Option<&BerPoint> {
        self.points
            .iter()
            .find(|p| p.detector == detector && p.k_factor == k_factor && p.ebn0_db == ebn0_db)
    }

    /// Distinct (detector, K) pairs in first-seen order.
    pub fn series_keys(&self) -> Vec<(String, f64)> {
        let mut keys: Vec<(String, f64)> = Vec::new();
        for p in &self.points {
            if !keys.iter().any(|(d, k)| *d == p.detector && *k == p.k_factor) {
                keys.push((p.detector.clone(), p.k_factor));
            }
        }
        keys
    }

    /// Eb/N0 at which `detector` reaches `target` BER for channel `k_factor`.
    pub fn ebn0_at_ber(&self, detector: &str, k_factor: f64, target: f64) -> Crossing {
        crossing(&self.series(detector, k_factor), target)
    }

    /// dB gap between `detector` and `reference` at `target` BER.
    pub fn gap_db(&self, detector: &str, reference: &str, k_factor: f64, target: f64) -> f64 {
        self.ebn0_at_ber(detector, k_factor, target).db() - self.ebn0_at_ber(reference, k_factor, target).db()
    }
}

/// Log-linear interpolation of the first downward crossing of `target`.
/// A zero-error point counts as half an error for the logarithm.
fn crossing(series: &[&BerPoint], target: f64) -> Crossing {
    let log_ber = |p: &BerPoint| {
        let errors = if p.bit_errors == 0 { 0.5 } else { p.bit_errors as f64 };
        (errors / p.bits_sent.max(1) as f64).log10()
    };
    let t = target.log10();
    let Some(first_below) = series.iter().position(|p| p.ber() <= target) else {
        return Crossing::BeyondGrid;
    };
    let (a, b) = match first_below {
        0 if series.len() >= 2 => (series[0], series[1]),
        0 => return Crossing::At(series[0].ebn0_db),
        i => (series[i - 1], series[i]),
    };
    let (la, lb) = (log_ber(a), log_ber(b));
    if lb >= la {
        return Crossing::At(series[first_below].ebn0_db);
    }
    Crossing::At(a.ebn0_db + (t - la) / (lb - la) * (b.ebn0_db - a.ebn0_db))
}

fn chunk_stream(seed: u64, point: usize, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1u64 << 63) | ((point as u64) << 32) | chunk);
    rng
}

/// Bit errors of every detector on `blocks` fresh blocks.
fn run_chunk(
    detectors: &[Detector<'_>],
    system: &MimoSystem,
    k_factor: f64,
    ebn0_db: f64,
    blocks: usize,
    mut rng: ChaCha8Rng,
) -> Result<Vec<u64>> {
    let model = system.model(k_factor)?;
    let noise_var = ebn0_to_noise_var(ebn0_db, &system.scheme, &model);
    let bits_per_block = system.bits_per_block();
    let mut features = Array2::zeros((blocks, system.feature_len()));
    let mut truth = Vec::with_capacity(blocks * bits_per_block);
    let mut errors = vec![0u64; detectors.len()];
    let has_mlsd = detectors.iter().any(|d| matches!(d, Detector::Mlsd));
    let mut mlsd_errors = 0u64;
    for i in 0..blocks {
        let h = sample_channel(&model, &mut rng);
        let tx = TransmitBlock::random(&system.scheme, system.n_tx, &mut rng);
        let y = receive(&tx.symbols, &h, noise_var, &mut rng)?;
        write_features(&h, &y, features.row_mut(i).as_slice_mut().expect("row-major"))?;
        if has_mlsd {
            let det = mlsd(&h, &y, &system.scheme)?;
            mlsd_errors += count_bit_errors(&tx.bits, &det.bits)? as u64;
        }
        truth.extend_from_slice(&tx.bits);
    }
    for (slot, det) in errors.iter_mut().zip(detectors) {
        *slot = match det {
            Detector::Mlsd => mlsd_errors,
            Detector::Network { net, .. } => {
                let probs = net.predict_proba(features.view())?;
                probs
                    .iter()
                    .zip(&truth)
                    .filter(|(&p, &b)| u8::from(p > 0.5) != b)
                    .count() as u64
            }
        };
    }
    Ok(errors)
}

/// Estimates BER for every detector at every (K, Eb/N0) grid point on paired
/// draws. Rows are ordered by K, then Eb/N0, then detector.
pub fn evaluate_ber(
    detectors: &[Detector<'_>],
    grid: &EvalGrid,
    system: &MimoSystem,
    opts: &EvalOptions,
) -> Result<BerCurve> {
    grid.validate()?;
    if detectors.is_empty() {
        return input_err("no detectors to evaluate");
    }
    for d in detectors {
        if let Detector::Network { net, label } = d {
            if net.spec().input_dim() != system.feature_len() || net.spec().output_dim() != system.bits_per_block() {
                return input_err(format!("network `{label}` does not fit the link dimensions"));
            }
        }
    }
    let workers = opts.workers.max(1);
    let chunk_blocks = opts.chunk_blocks.max(1);
    let bits_per_block = system.bits_per_block() as u64;
    let mut curve = BerCurve::default();
    for (ki, &k) in grid.k_list.iter().enumerate() {
        for (ei, &ebn0) in grid.ebn0_list_db.iter().enumerate() {
            let point = ki * grid.ebn0_list_db.len() + ei;
            let mut blocks = 0u64;
            let mut errors = vec![0u64; detectors.len()];
            let mut next_chunk = 0u64;
            let done = |blocks: u64, errors: &[u64]| {
                blocks >= grid.max_blocks || errors.iter().all(|&e| e >= grid.min_bit_errors)
            };
            while !done(blocks, &errors) {
                // a round of up to `workers` chunks, folded in chunk order
                let mut sizes = Vec::with_capacity(workers);
                let mut planned = blocks;
                while sizes.len() < workers && planned < grid.max_blocks {
                    let n = chunk_blocks.min(grid.max_blocks - planned);
                    sizes.push(n);
                    planned += n;
                }
                let first = next_chunk;
                let results: Vec<Result<Vec<u64>>> = if sizes.len() == 1 {
                    vec![run_chunk(detectors, system, k, ebn0, sizes[0] as usize, chunk_stream(opts.seed, point, first))]
                } else {
                    std::thread::scope(|s| {
                        let handles: Vec<_> = sizes
                            .iter()
                            .enumerate()
                            .map(|(j, &n)| {
                                let rng = chunk_stream(opts.seed, point, first + j as u64);
                                s.spawn(move || run_chunk(detectors, system, k, ebn0, n as usize, rng))
                            })
                            .collect();
                        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
                    })
                };
                for (n, res) in sizes.iter().zip(results) {
                    if done(blocks, &errors) {
                        break;
                    }
                    let chunk_errors = res?;
                    for (e, c) in errors.iter_mut().zip(chunk_errors) {
                        *e += c;
                    }
                    blocks += n;
                    next_chunk += 1;
                }
            }
            log::info!(
                "K = {k}, Eb/N0 = {ebn0} dB: {blocks} blocks, errors {:?}",
                detectors.iter().map(|d| d.label()).zip(&errors).collect::<Vec<_>>()
            );
            for (d, &e) in detectors.iter().zip(&errors) {
                curve.points.push(BerPoint {
                    detector: d.label().to_string(),
                    k_factor: k,
                    ebn0_db: ebn0,
                    bits_sent: blocks * bits_per_block,
                    bit_errors: e,
                    seed: opts.seed,
                });
            }
        }
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modem::ModulationScheme;

    fn pt(ebn0: f64, errors: u64, bits: u64) -> BerPoint {
        BerPoint {
            detector: "x".into(),
            k_factor: 0.0,
            ebn0_db: ebn0,
            bits_sent: bits,
            bit_errors: errors,
            seed: 0,
        }
    }

    #[test]
    fn crossing_interpolates_in_log_domain() {
        let curve = BerCurve {
            points: vec![pt(0.0, 100, 1000), pt(2.0, 1, 1000), pt(4.0, 1, 100_000)],
        };
        // log10 BER goes -1 -> -3 between 0 and 2 dB: hits -2 at 1 dB
        match curve.ebn0_at_ber("x", 0.0, 1e-2) {
            Crossing::At(x) => assert!((x - 1.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        assert_eq!(curve.ebn0_at_ber("x", 0.0, 1e-6), Crossing::BeyondGrid);
        // extrapolated below the first grid point
        match curve.ebn0_at_ber("x", 0.0, 0.5) {
            Crossing::At(x) => assert!(x < 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gap_is_infinite_when_curve_never_crosses() {
        let mut curve = BerCurve {
            points: vec![pt(0.0, 100, 1000), pt(2.0, 1, 10_000)],
        };
        curve.points.push(BerPoint {
            detector: "flat".into(),
            ..pt(0.0, 300, 1000)
        });
        curve.points.push(BerPoint {
            detector: "flat".into(),
            ..pt(2.0, 300, 1000)
        });
        assert!(curve.gap_db("flat", "x", 0.0, 1e-3).is_infinite());
    }

    #[test]
    fn noiseless_mlsd_is_error_free() {
        let sys = MimoSystem::new(4, 8, ModulationScheme::qpsk()).unwrap();
        let grid = EvalGrid {
            k_list: vec![0.0, 5.0],
            ebn0_list_db: vec![400.0],
            min_bit_errors: 1,
            max_blocks: 2000,
        };
        let opts = EvalOptions {
            seed: 3,
            workers: 1,
            chunk_blocks: 500,
        };
        let curve = evaluate_ber(&[Detector::Mlsd], &grid, &sys, &opts).unwrap();
        assert_eq!(curve.points.len(), 2);
        for p in &curve.points {
            assert_eq!(p.bit_errors, 0);
            assert_eq!(p.bits_sent, 2000 * 8);
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let sys = MimoSystem::new(2, 2, ModulationScheme::qpsk()).unwrap();
        let grid = EvalGrid {
            k_list: vec![1.0],
            ebn0_list_db: vec![0.0, 6.0],
            min_bit_errors: 50,
            max_blocks: 5000,
        };
        let run = |workers| {
            evaluate_ber(
                &[Detector::Mlsd],
                &grid,
                &sys,
                &EvalOptions {
                    seed: 9,
                    workers,
                    chunk_blocks: 64,
                },
            )
            .unwrap()
        };
        assert_eq!(run(1), run(3));
    }
}
