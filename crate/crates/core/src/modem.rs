//! Baseband MIMO link: constellation mapping, Rician block-fading channels
//! and additive white Gaussian noise.
//!
//! The received block follows `y = H x + v` with `H` an `N x M` complex
//! matrix, `x` a vector of `M` constellation points and `v ~ CN(0, σ_v² I)`.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{dim_err, input_err, Result};

/// A finite constellation with a fixed bit labeling.
///
/// `alphabet[label]` is the point carrying the bit pattern `label`, read
/// most-significant bit first.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationScheme {
    name: &'static str,
    alphabet: Vec<Complex64>,
    bits_per_symbol: usize,
}

impl ModulationScheme {
    /// Gray-mapped QPSK with unit average energy:
    /// `00 -> (1+j)/√2`, `01 -> (-1+j)/√2`, `11 -> (-1-j)/√2`, `10 -> (1-j)/√2`.
    pub fn qpsk() -> Self {
        let a = FRAC_1_SQRT_2;
        Self {
            name: "qpsk",
            alphabet: vec![
                Complex64::new(a, a),
                Complex64::new(-a, a),
                Complex64::new(a, -a),
                Complex64::new(-a, -a),
            ],
            bits_per_symbol: 2,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "qpsk" => Ok(Self::qpsk()),
            other => input_err(format!("unsupported modulation `{other}`")),
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn alphabet(&self) -> &[Complex64] {
        &self.alphabet
    }

    /// Constellation size `L`.
    pub fn order(&self) -> usize {
        self.alphabet.len()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    /// Average symbol energy `σ_x²`.
    pub fn average_energy(&self) -> f64 {
        self.alphabet.iter().map(|a| a.norm_sqr()).sum::<f64>() / self.order() as f64
    }

    /// Label of the bit group `bits` (length `bits_per_symbol`).
    fn label(&self, bits: &[u8]) -> Result<usize> {
        let mut label = 0usize;
        for &b in bits {
            if b > 1 {
                return input_err(format!("bit value {b} is not binary"));
            }
            label = (label << 1) | b as usize;
        }
        Ok(label)
    }

    pub(crate) fn write_label_bits(&self, label: usize, out: &mut [u8]) {
        let n = self.bits_per_symbol;
        for (i, slot) in out.iter_mut().enumerate().take(n) {
            *slot = ((label >> (n - 1 - i)) & 1) as u8;
        }
    }

    /// Index of the constellation point nearest to `z`.
    pub fn nearest_label(&self, z: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, a) in self.alphabet.iter().enumerate() {
            let d = (z - a).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// Maps a bit vector onto constellation points, `bits_per_symbol` bits each.
pub fn modulate(bits: &[u8], scheme: &ModulationScheme) -> Result<Array1<Complex64>> {
    let k = scheme.bits_per_symbol();
    if bits.len() % k != 0 {
        return input_err(format!(
            "{} bits is not a multiple of {k} bits per symbol",
            bits.len()
        ));
    }
    bits.chunks(k)
        .map(|group| scheme.label(group).map(|l| scheme.alphabet[l]))
        .collect::<Result<Vec<_>>>()
        .map(Array1::from)
}

/// Hard-decision inverse of [`modulate`]: each symbol is mapped to the bits of
/// its nearest constellation point.
pub fn demap(symbols: &[Complex64], scheme: &ModulationScheme) -> Vec<u8> {
    let k = scheme.bits_per_symbol();
    let mut bits = vec![0u8; symbols.len() * k];
    for (sym, chunk) in symbols.iter().zip(bits.chunks_mut(k)) {
        scheme.write_label_bits(scheme.nearest_label(*sym), chunk);
    }
    bits
}

/// Rician fading model with unit total power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RicianModel {
    n_rx: usize,
    n_tx: usize,
    k_factor: f64,
}

impl RicianModel {
    /// Total received power per entry, `Ω`.
    pub const TOTAL_POWER: f64 = 1.0;

    pub fn new(n_rx: usize, n_tx: usize, k_factor: f64) -> Result<Self> {
        if n_tx == 0 || n_rx < n_tx {
            return input_err(format!(
                "need n_rx >= n_tx >= 1, got n_rx={n_rx}, n_tx={n_tx}"
            ));
        }
        if !(k_factor >= 0.0 && k_factor.is_finite()) {
            return input_err(format!("Rician K-factor must be finite and >= 0, got {k_factor}"));
        }
        Ok(Self {
            n_rx,
            n_tx,
            k_factor,
        })
    }

    pub fn n_rx(&self) -> usize {
        self.n_rx
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn k_factor(&self) -> f64 {
        self.k_factor
    }

    /// Line-of-sight amplitude `ν = sqrt(KΩ/(K+1))`.
    pub fn nu(&self) -> f64 {
        (self.k_factor * Self::TOTAL_POWER / (self.k_factor + 1.0)).sqrt()
    }

    /// Per-component scatter deviation `σ = sqrt(Ω/(2(K+1)))`.
    pub fn sigma(&self) -> f64 {
        (Self::TOTAL_POWER / (2.0 * (self.k_factor + 1.0))).sqrt()
    }
}

/// One block-fading channel matrix `H` (`n_rx x n_tx`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: Array2<Complex64>,
}

impl ChannelRealization {
    pub fn new(h: Array2<Complex64>) -> Self {
        Self { h }
    }

    pub fn n_rx(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_tx(&self) -> usize {
        self.h.ncols()
    }
}

/// Draws a circularly-symmetric complex Gaussian sample with variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Draws a fresh channel. Each entry is `ν e^{jθ} + sqrt(1/(K+1)) g` with an
/// independent uniform phase `θ` and `g ~ CN(0, 1)`.
pub fn sample_channel<R: Rng + ?Sized>(model: &RicianModel, rng: &mut R) -> ChannelRealization {
    let los = model.nu();
    let scatter_var = RicianModel::TOTAL_POWER / (model.k_factor + 1.0);
    let h = Array2::from_shape_simple_fn((model.n_rx, model.n_tx), || {
        let theta = rng.random::<f64>() * 2.0 * PI;
        Complex64::from_polar(los, theta) + complex_gaussian(rng, scatter_var)
    });
    ChannelRealization { h }
}

/// Rician magnitude density
/// `f(x|ν,σ) = x/σ² · exp(-(x²+ν²)/(2σ²)) · I₀(xν/σ²)`.
pub fn rician_pdf(x: f64, nu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return input_err(format!("sigma must be positive, got {sigma}"));
    }
    if x < 0.0 {
        return input_err(format!("x must be non-negative, got {x}"));
    }
    let s2 = sigma * sigma;
    let z = x * nu.abs() / s2;
    // exp(-(x²+ν²)/2σ²)·I₀(z) = exp(-(x-|ν|)²/2σ²)·e^{-z}I₀(z)
    let d = x - nu.abs();
    Ok(x / s2 * (-(d * d) / (2.0 * s2)).exp() * bessel_i0_scaled(z))
}

/// `e^{-z} I₀(z)` for `z >= 0`.
pub fn bessel_i0_scaled(z: f64) -> f64 {
    if z < 30.0 {
        // power series Σ (z²/4)^k / (k!)²
        let q = z * z / 4.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        while term > sum * 1e-17 {
            term *= q / (k * k);
            sum += term;
            k += 1.0;
        }
        sum * (-z).exp()
    } else {
        // asymptotic expansion
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..=12 {
            let odd = (2 * k - 1) as f64;
            term *= odd * odd / (k as f64 * 8.0 * z);
            sum += term;
        }
        sum / (2.0 * PI * z).sqrt()
    }
}

/// Noise variance per complex receive dimension for a given `Eb/N0`.
///
/// The `M σ_x²` energy received per antenna carries `M log₂L` information bits,
/// so `σ_v² = σ_x² / (log₂L · 10^(Eb/N0 / 10))`.
pub fn ebn0_to_noise_var(ebn0_db: f64, scheme: &ModulationScheme, model: &RicianModel) -> f64 {
    let m = model.n_tx() as f64;
    let energy_per_antenna = m * scheme.average_energy();
    let bits = m * scheme.bits_per_symbol() as f64;
    energy_per_antenna / (bits * 10f64.powf(ebn0_db / 10.0))
}

/// Information bits and the symbols that carry them.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmitBlock {
    pub bits: Vec<u8>,
    pub symbols: Array1<Complex64>,
}

impl TransmitBlock {
    /// Uniformly random bits for `n_tx` symbols.
    pub fn random<R: Rng + ?Sized>(scheme: &ModulationScheme, n_tx: usize, rng: &mut R) -> Self {
        let k = scheme.bits_per_symbol();
        let mut bits = vec![0u8; n_tx * k];
        let mut symbols = Array1::zeros(n_tx);
        for (sym, chunk) in symbols.iter_mut().zip(bits.chunks_mut(k)) {
            let label = rng.random_range(0..scheme.order());
            scheme.write_label_bits(label, chunk);
            *sym = scheme.alphabet[label];
        }
        Self { bits, symbols }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedBlock {
    pub y: Array1<Complex64>,
    pub channel: ChannelRealization,
    pub noise_var: f64,
}

/// Passes `x` through `h` and adds complex Gaussian noise of variance
/// `noise_var` per receive antenna.
pub fn transmit<R: Rng + ?Sized>(
    x: &Array1<Complex64>,
    h: &ChannelRealization,
    noise_var: f64,
    rng: &mut R,
) -> Result<ReceivedBlock> {
    let y = receive(x, h, noise_var, rng)?;
    Ok(ReceivedBlock {
        y,
        channel: h.clone(),
        noise_var,
    })
}

/// Like [`transmit`] but returns only `y`.
pub fn receive<R: Rng + ?Sized>(
    x: &Array1<Complex64>,
    h: &ChannelRealization,
    noise_var: f64,
    rng: &mut R,
) -> Result<Array1<Complex64>> {
    if x.len() != h.n_tx() {
        return dim_err(format!(
            "symbol vector has {} entries, channel has {} transmit antennas",
            x.len(),
            h.n_tx()
        ));
    }
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return input_err(format!("noise variance must be finite and >= 0, got {noise_var}"));
    }
    let mut y = h.h.dot(x);
    if noise_var > 0.0 {
        y.mapv_inplace(|yi| yi + complex_gaussian(rng, noise_var));
    }
    Ok(y)
}
