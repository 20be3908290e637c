//! Matched-filter front end, network input features and the exhaustive
//! maximum-likelihood detector.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{dim_err, Error, Result};
use crate::modem::{ChannelRealization, ModulationScheme};

/// Largest candidate set the exhaustive detector will enumerate.
pub const MLSD_MAX_CANDIDATES: u64 = 65_536;

/// `H^H y`.
pub fn matched_filter(h: &ChannelRealization, y: &Array1<Complex64>) -> Result<Array1<Complex64>> {
    check_rx_len(h, y)?;
    let (n, m) = h.h.dim();
    let mut out = Array1::zeros(m);
    for j in 0..m {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..n {
            acc += h.h[[i, j]].conj() * y[i];
        }
        out[j] = acc;
    }
    Ok(out)
}

/// `H^H H`, Hermitian positive semidefinite.
pub fn gram(h: &ChannelRealization) -> Array2<Complex64> {
    let (n, m) = h.h.dim();
    let mut g = Array2::zeros((m, m));
    for a in 0..m {
        for b in a..m {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                acc += h.h[[i, a]].conj() * h.h[[i, b]];
            }
            g[[a, b]] = acc;
            g[[b, a]] = acc.conj();
        }
        g[[a, a]].im = 0.0;
    }
    g
}

fn check_rx_len(h: &ChannelRealization, y: &Array1<Complex64>) -> Result<()> {
    if y.len() != h.n_rx() {
        return dim_err(format!(
            "received vector has {} entries, channel has {} receive antennas",
            y.len(),
            h.n_rx()
        ));
    }
    Ok(())
}

/// Real-valued network input built from `H^H H` and `H^H y`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Array1<f64>,
}

impl FeatureVector {
    /// `2M(M+1)`.
    pub fn len_for(n_tx: usize) -> usize {
        2 * n_tx * (n_tx + 1)
    }
}

/// Lays out `[Re vec(G); Im vec(G); Re(H^H y); Im(H^H y)]` where `G = H^H H`
/// and `vec` stacks columns.
pub fn build_features(h: &ChannelRealization, y: &Array1<Complex64>) -> Result<FeatureVector> {
    let mut values = Array1::zeros(FeatureVector::len_for(h.n_tx()));
    write_features(h, y, values.as_slice_mut().expect("contiguous"))?;
    Ok(FeatureVector { values })
}

/// Writes the feature layout of [`build_features`] into `out`.
pub fn write_features(h: &ChannelRealization, y: &Array1<Complex64>, out: &mut [f64]) -> Result<()> {
    let m = h.n_tx();
    if out.len() != FeatureVector::len_for(m) {
        return dim_err(format!(
            "feature buffer has {} slots, need {}",
            out.len(),
            FeatureVector::len_for(m)
        ));
    }
    let g = gram(h);
    let mf = matched_filter(h, y)?;
    let (gram_part, mf_part) = out.split_at_mut(2 * m * m);
    let (g_re, g_im) = gram_part.split_at_mut(m * m);
    for col in 0..m {
        for row in 0..m {
            let v = g[[row, col]];
            g_re[col * m + row] = v.re;
            g_im[col * m + row] = v.im;
        }
    }
    let (mf_re, mf_im) = mf_part.split_at_mut(m);
    for (j, v) in mf.iter().enumerate() {
        mf_re[j] = v.re;
        mf_im[j] = v.im;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub symbols: Array1<Complex64>,
    pub bits: Vec<u8>,
    /// Residual `‖y − H x̂‖²`.
    pub metric: f64,
}

/// Exhaustive maximum-likelihood detection over all `L^M` symbol vectors.
///
/// Candidates are visited in lexicographic bit order (first antenna most
/// significant); a later candidate replaces the incumbent only on a strictly
/// smaller residual.
pub fn mlsd(
    h: &ChannelRealization,
    y: &Array1<Complex64>,
    scheme: &ModulationScheme,
) -> Result<DetectionResult> {
    check_rx_len(h, y)?;
    let (n, m) = h.h.dim();
    let l = scheme.order();
    let candidates = (l as u128).checked_pow(m as u32).unwrap_or(u128::MAX);
    if candidates > MLSD_MAX_CANDIDATES as u128 {
        return Err(Error::SearchSpace {
            candidates,
            cap: MLSD_MAX_CANDIDATES,
        });
    }

    // contrib[(ant * l + label) * n + i] = H[i, ant] * a_label
    let alphabet = scheme.alphabet();
    let mut contrib = vec![Complex64::new(0.0, 0.0); m * l * n];
    for ant in 0..m {
        for (label, a) in alphabet.iter().enumerate() {
            let base = (ant * l + label) * n;
            for i in 0..n {
                contrib[base + i] = h.h[[i, ant]] * a;
            }
        }
    }

    // Depth-first walk; residuals[d] holds y − Σ_{ant<d} H[:,ant] x_ant.
    let mut residuals = vec![Complex64::new(0.0, 0.0); (m + 1) * n];
    residuals[..n].copy_from_slice(y.as_slice().expect("contiguous"));
    let mut labels = vec![0usize; m];
    let mut best_labels = vec![0usize; m];
    let mut best_metric = f64::INFINITY;
    let mut depth = 0usize;
    let mut evaluated = 0u64;
    loop {
        // descend, filling levels depth..m with the current labels
        while depth < m {
            let base = (depth * l + labels[depth]) * n;
            let (done, rest) = residuals.split_at_mut((depth + 1) * n);
            let parent = &done[depth * n..];
            let child = &mut rest[..n];
            for i in 0..n {
                child[i] = parent[i] - contrib[base + i];
            }
            depth += 1;
        }
        let leaf = &residuals[m * n..];
        let metric: f64 = leaf.iter().map(|r| r.norm_sqr()).sum();
        evaluated += 1;
        if metric < best_metric {
            best_metric = metric;
            best_labels.copy_from_slice(&labels);
        }
        // advance to the next candidate in lexicographic order
        let mut level = m;
        loop {
            if level == 0 {
                debug_assert_eq!(evaluated as u128, candidates);
                let symbols = Array1::from_iter(best_labels.iter().map(|&lab| alphabet[lab]));
                let k = scheme.bits_per_symbol();
                let mut bits = vec![0u8; m * k];
                for (lab, chunk) in best_labels.iter().zip(bits.chunks_mut(k)) {
                    scheme.write_label_bits(*lab, chunk);
                }
                return Ok(DetectionResult {
                    symbols,
                    bits,
                    metric: best_metric,
                });
            }
            level -= 1;
            labels[level] += 1;
            if labels[level] < l {
                depth = level;
                break;
            }
            labels[level] = 0;
        }
    }
}

/// Number of candidate vectors [`mlsd`] evaluates for this configuration.
pub fn mlsd_candidate_count(scheme: &ModulationScheme, n_tx: usize) -> u128 {
    (scheme.order() as u128).pow(n_tx as u32)
}

/// Hamming distance between two bit vectors.
pub fn count_bit_errors(truth: &[u8], decision: &[u8]) -> Result<usize> {
    if truth.len() != decision.len() {
        return dim_err(format!(
            "bit vectors differ in length: {} vs {}",
            truth.len(),
            decision.len()
        ));
    }
    Ok(truth.iter().zip(decision).filter(|(a, b)| a != b).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modem::{demap, modulate, receive, sample_channel, RicianModel, TransmitBlock};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn identity(m: usize) -> ChannelRealization {
        ChannelRealization::new(Array2::from_diag(&Array1::from_elem(m, c(1.0, 0.0))))
    }

    #[test]
    fn matched_filter_small_cases() {
        let y = Array1::from(vec![c(1.0, 2.0), c(-0.5, 0.3), c(0.0, -1.0)]);
        assert_eq!(matched_filter(&identity(3), &y).unwrap(), y);
        let h = ChannelRealization::new(Array2::from_elem((1, 1), c(2.0, 0.0)));
        let out = matched_filter(&h, &Array1::from(vec![c(4.0, 0.0)])).unwrap();
        assert_eq!(out[0], c(8.0, 0.0));
        assert!(matched_filter(&h, &y).is_err());
    }

    #[test]
    fn gram_is_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(gram(&identity(4)), identity(4).h);
        let ch = sample_channel(&RicianModel::new(8, 4, 1.0).unwrap(), &mut rng);
        let g = gram(&ch);
        for a in 0..4 {
            for b in 0..4 {
                assert!((g[[a, b]] - g[[b, a]].conj()).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn features_hand_case() {
        let h = ChannelRealization::new(Array2::from_elem((1, 1), c(1.0, 0.0)));
        let f = build_features(&h, &Array1::from(vec![c(2.0, 3.0)])).unwrap();
        assert_eq!(f.values.to_vec(), vec![1.0, 0.0, 2.0, 3.0]);
    }

    #[test]
    fn features_layout_and_zero_channel() {
        let zero = ChannelRealization::new(Array2::zeros((8, 4)));
        let y = Array1::from_elem(8, c(0.3, -0.2));
        let f = build_features(&zero, &y).unwrap();
        assert_eq!(f.values.len(), 40);
        assert!(f.values.iter().all(|&v| v == 0.0));
        assert!(build_features(&zero, &Array1::zeros(7)).is_err());

        // column-major: entry (row 1, col 0) of G sits at index 1, (0, 1) at index 4
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ch = sample_channel(&RicianModel::new(8, 4, 0.0).unwrap(), &mut rng);
        let f = build_features(&ch, &y).unwrap();
        let g = gram(&ch);
        assert_eq!(f.values[1], g[[1, 0]].re);
        assert_eq!(f.values[4], g[[0, 1]].re);
        assert_eq!(f.values[16 + 4], g[[0, 1]].im);
        let mf = matched_filter(&ch, &y).unwrap();
        assert_eq!(f.values[32 + 3], mf[3].re);
        assert_eq!(f.values[36 + 3], mf[3].im);
    }

    #[test]
    fn features_linear_in_received_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ch = sample_channel(&RicianModel::new(8, 4, 3.0).unwrap(), &mut rng);
        let y1 = Array1::from_shape_simple_fn(8, || c(rng.random(), rng.random()));
        let y2 = Array1::from_shape_simple_fn(8, || c(rng.random(), rng.random()));
        let (a, b) = (0.7, -1.9);
        let sum = &y1.mapv(|v| v * a) + &y2.mapv(|v| v * b);
        let f1 = build_features(&ch, &y1).unwrap().values;
        let f2 = build_features(&ch, &y2).unwrap().values;
        let fs = build_features(&ch, &sum).unwrap().values;
        for i in 32..40 {
            assert!((fs[i] - (a * f1[i] + b * f2[i])).abs() < 1e-12);
        }
        for i in 0..32 {
            assert_eq!(fs[i], f1[i]);
        }
    }

    #[test]
    fn mlsd_noiseless_recovery_and_candidate_count() {
        let q = ModulationScheme::qpsk();
        let model = RicianModel::new(8, 4, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        assert_eq!(mlsd_candidate_count(&q, 4), 256);
        for _ in 0..100 {
            let ch = sample_channel(&model, &mut rng);
            let tx = TransmitBlock::random(&q, 4, &mut rng);
            let y = receive(&tx.symbols, &ch, 0.0, &mut rng).unwrap();
            let det = mlsd(&ch, &y, &q).unwrap();
            assert_eq!(det.bits, tx.bits);
            assert_eq!(det.symbols, tx.symbols);
            assert!(det.metric < 1e-24);
            assert_eq!(demap(det.symbols.as_slice().unwrap(), &q), det.bits);
        }
    }

    #[test]
    fn mlsd_ties_resolve_to_lowest_index() {
        // a zero channel makes every candidate tie
        let q = ModulationScheme::qpsk();
        let zero = ChannelRealization::new(Array2::zeros((2, 2)));
        let det = mlsd(&zero, &Array1::zeros(2), &q).unwrap();
        assert_eq!(det.bits, vec![0, 0, 0, 0]);
    }

    #[test]
    fn mlsd_refuses_oversized_search() {
        let q = ModulationScheme::qpsk();
        let ch = ChannelRealization::new(Array2::zeros((9, 9)));
        match mlsd(&ch, &Array1::zeros(9), &q) {
            Err(Error::SearchSpace { candidates, .. }) => assert_eq!(candidates, 262_144),
            other => panic!("expected size error, got {other:?}"),
        }
        // 4^8 = 65536 sits exactly at the cap
        let ch = ChannelRealization::new(Array2::zeros((8, 8)));
        assert!(mlsd(&ch, &Array1::zeros(8), &q).is_ok());
    }

    #[test]
    fn mlsd_beats_random_candidates() {
        let q = ModulationScheme::qpsk();
        let model = RicianModel::new(8, 4, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let ch = sample_channel(&model, &mut rng);
            let tx = TransmitBlock::random(&q, 4, &mut rng);
            let y = receive(&tx.symbols, &ch, 0.8, &mut rng).unwrap();
            let det = mlsd(&ch, &y, &q).unwrap();
            for _ in 0..100 {
                let bits: Vec<u8> = (0..8).map(|_| rng.random_range(0..2)).collect();
                let x = modulate(&bits, &q).unwrap();
                let r = &y - &ch.h.dot(&x);
                let metric: f64 = r.iter().map(|v| v.norm_sqr()).sum();
                assert!(det.metric <= metric + 1e-12);
            }
            let r = &y - &ch.h.dot(&det.symbols);
            let direct: f64 = r.iter().map(|v| v.norm_sqr()).sum();
            assert!((direct - det.metric).abs() < 1e-12 * (1.0 + direct));
        }
    }

    #[test]
    fn bit_error_counting() {
        assert_eq!(count_bit_errors(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap(), 0);
        assert_eq!(count_bit_errors(&[0; 8], &[1; 8]).unwrap(), 8);
        assert_eq!(count_bit_errors(&[0, 1, 1, 0], &[0, 0, 1, 1]).unwrap(), 2);
        assert!(count_bit_errors(&[0, 1], &[0]).is_err());
    }
}
