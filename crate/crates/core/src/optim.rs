//! Parameter update rules: plain SGD, Adam with a clipped fourth-root
//! learning-rate decay, and orthogonal-projection SGD (O-SGD).
//!
//! O-SGD keeps, per layer, a matrix `Ψ` of the size of the layer input. `Ψ` is
//! refreshed with a recursive-least-squares rank-one update from every input
//! it sees and shrinks along the directions of past inputs; weight gradients
//! are multiplied by `Ψᵀ` before the Adam moment update, so new learning lands
//! mostly in the subspace orthogonal to what earlier tasks already used.

use ndarray::{Array1, Array2, ArrayView1, Zip};

use crate::error::{dim_err, input_err, Result};
use crate::nn::{Gradients, LayerParams, Network};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    /// Initial learning rate `η_i`.
    pub eta_i: f64,
    /// Learning-rate floor `η_l`.
    pub eta_l: f64,
    /// RLS forgetting factor `λ`.
    pub lambda: f64,
    /// `Ψ` starts at `I/β`.
    pub beta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            eta_i: 1e-3,
            eta_l: 1e-5,
            lambda: 1.0,
            beta: 100.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    /// Checks every field and names the first offending one.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err((name, format!("must be positive and finite, got {v}")))
            }
        };
        positive("eta_l", self.eta_l)?;
        positive("eta_i", self.eta_i)?;
        if self.eta_l > self.eta_i {
            return Err((
                "eta_l",
                format!("lower bound {} exceeds initial rate {}", self.eta_l, self.eta_i),
            ));
        }
        positive("lambda", self.lambda)?;
        positive("beta", self.beta)?;
        positive("epsilon", self.epsilon)?;
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err((name, format!("must lie in [0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// `η_t = max(η_i / t^{1/4}, η_l)` for `t >= 1`.
pub fn lr_schedule(t: u64, cfg: &OptimizerConfig) -> Result<f64> {
    if t < 1 {
        return input_err("the step counter starts at 1");
    }
    Ok((cfg.eta_i / (t as f64).sqrt().sqrt()).max(cfg.eta_l))
}

/// One RLS update of `Ψ` with input `c`:
/// `p = Ψc/(λ + cᵀΨc)`, `Ψ ← λ⁻¹(Ψ − p cᵀΨ)`, followed by symmetrization.
pub fn psi_update(psi: &mut Array2<f64>, c: ArrayView1<f64>, lambda: f64) -> Result<()> {
    let d = psi.nrows();
    if psi.ncols() != d || c.len() != d {
        return dim_err(format!(
            "Ψ is {:?}, input vector has {} entries",
            psi.dim(),
            c.len()
        ));
    }
    let psi_c = psi.dot(&c);
    let c_psi = c.dot(psi);
    let denom = lambda + c.dot(&psi_c);
    let p = psi_c / denom;
    let inv_lambda = 1.0 / lambda;
    for i in 0..d {
        let pi = p[i];
        let mut row = psi.row_mut(i);
        Zip::from(&mut row)
            .and(&c_psi)
            .for_each(|v, &q| *v = (*v - pi * q) * inv_lambda);
    }
    symmetrize(psi);
    Ok(())
}

fn symmetrize(m: &mut Array2<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = avg;
            m[[j, i]] = avg;
        }
    }
}

/// `∇W · Ψᵀ`.
pub fn project_gradient(weight_grad: &Array2<f64>, psi: &Array2<f64>) -> Result<Array2<f64>> {
    if weight_grad.ncols() != psi.ncols() || psi.nrows() != psi.ncols() {
        return dim_err(format!(
            "gradient {:?} cannot be projected by Ψ {:?}",
            weight_grad.dim(),
            psi.dim()
        ));
    }
    Ok(weight_grad.dot(&psi.t()))
}

/// Regularized projector `I − A(AᵀA + αI)⁻¹Aᵀ` onto the complement of the
/// column space of `A` (`d x T`). Solved with a Cholesky factorization of the
/// `T x T` system; intended for cross-checking the recursive form.
pub fn batch_projector(history: &Array2<f64>, alpha: f64) -> Result<Array2<f64>> {
    if !(alpha > 0.0) {
        return input_err(format!("alpha must be positive, got {alpha}"));
    }
    let (d, t) = history.dim();
    let mut out = Array2::eye(d);
    if t == 0 {
        return Ok(out);
    }
    let mut system = history.t().dot(history);
    for i in 0..t {
        system[[i, i]] += alpha;
    }
    let chol = cholesky(&system)?;
    // X = (AᵀA + αI)⁻¹ Aᵀ, one column of Aᵀ at a time
    let at = history.t().to_owned();
    let mut x = Array2::zeros((t, d));
    for col in 0..d {
        let rhs = at.column(col).to_owned();
        let sol = cholesky_solve(&chol, &rhs);
        x.column_mut(col).assign(&sol);
    }
    out -= &history.dot(&x);
    Ok(out)
}

fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 {
                    return input_err("matrix is not positive definite");
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    y
}

/// First and second moment estimates for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub weight_m: Array2<f64>,
    pub weight_v: Array2<f64>,
    pub bias_m: Array1<f64>,
    pub bias_v: Array1<f64>,
}

impl Moments {
    pub fn zeros_like(layer: &LayerParams) -> Self {
        Self {
            weight_m: Array2::zeros(layer.weight.dim()),
            weight_v: Array2::zeros(layer.weight.dim()),
            bias_m: Array1::zeros(layer.bias.len()),
            bias_v: Array1::zeros(layer.bias.len()),
        }
    }

    fn matches(&self, layer: &LayerParams) -> bool {
        self.weight_m.dim() == layer.weight.dim()
            && self.weight_v.dim() == layer.weight.dim()
            && self.bias_m.len() == layer.bias.len()
            && self.bias_v.len() == layer.bias.len()
    }
}

/// Per-layer O-SGD state: the projection matrix and the Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct OsgdLayerState {
    pub psi: Array2<f64>,
    pub moments: Moments,
}

impl OsgdLayerState {
    pub fn new(layer: &LayerParams, beta: f64) -> Self {
        Self {
            psi: Array2::eye(layer.d_in()) / beta,
            moments: Moments::zeros_like(layer),
        }
    }
}

/// Diagnostics from one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub effective_lr: f64,
    /// Trace of `Ψ` per layer; empty for optimizers without projection.
    pub psi_trace: Vec<f64>,
    pub gradient_norm_before: f64,
    pub gradient_norm_after: f64,
}

/// `ω ← ω − η ∇f(ω)`.
pub fn sgd_step(net: &mut Network, grads: &Gradients, learning_rate: f64) -> Result<()> {
    check_grad_shapes(net, grads)?;
    for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
        layer.weight.scaled_add(-learning_rate, &g.weight);
        layer.bias.scaled_add(-learning_rate, &g.bias);
    }
    Ok(())
}

fn check_grad_shapes(net: &Network, grads: &Gradients) -> Result<()> {
    if net.layers().len() != grads.layers.len() {
        return dim_err(format!(
            "{} gradient layers for {} network layers",
            grads.layers.len(),
            net.layers().len()
        ));
    }
    for (k, (p, g)) in net.layers().iter().zip(&grads.layers).enumerate() {
        if p.weight.dim() != g.weight.dim() || p.bias.len() != g.bias.len() {
            return dim_err(format!("layer {k}: gradient shape does not match parameters"));
        }
    }
    Ok(())
}

/// Bias-corrected moment update shared by Adam and O-SGD.
struct MomentUpdate {
    eta: f64,
    beta1: f64,
    beta2: f64,
    correction1: f64,
    correction2: f64,
    epsilon: f64,
}

impl MomentUpdate {
    fn new(t: u64, cfg: &OptimizerConfig) -> Result<Self> {
        Ok(Self {
            eta: lr_schedule(t, cfg)?,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            correction1: 1.0 - cfg.beta1.powf(t as f64),
            correction2: 1.0 - cfg.beta2.powf(t as f64),
            epsilon: cfg.epsilon,
        })
    }

    #[inline]
    fn apply(&self, w: &mut f64, g: f64, m: &mut f64, v: &mut f64) {
        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
        let m_hat = *m / self.correction1;
        let v_hat = *v / self.correction2;
        *w -= self.eta * m_hat / (self.epsilon + v_hat.sqrt());
    }

    fn layer(&self, layer: &mut LayerParams, weight_grad: &Array2<f64>, bias_grad: &Array1<f64>, mo: &mut Moments) {
        Zip::from(&mut layer.weight)
            .and(weight_grad)
            .and(&mut mo.weight_m)
            .and(&mut mo.weight_v)
            .for_each(|w, &g, m, v| self.apply(w, g, m, v));
        Zip::from(&mut layer.bias)
            .and(bias_grad)
            .and(&mut mo.bias_m)
            .and(&mut mo.bias_v)
            .for_each(|w, &g, m, v| self.apply(w, g, m, v));
    }
}

/// One Adam step at counter value `t` (already incremented, `t >= 1`), using
/// the clipped schedule of [`lr_schedule`].
pub fn adam_step(
    net: &mut Network,
    grads: &Gradients,
    moments: &mut [Moments],
    t: u64,
    cfg: &OptimizerConfig,
) -> Result<StepReport> {
    check_grad_shapes(net, grads)?;
    if moments.len() != net.layers().len()
        || moments.iter().zip(net.layers()).any(|(m, l)| !m.matches(l))
    {
        return dim_err("Adam state does not match the network");
    }
    let upd = MomentUpdate::new(t, cfg)?;
    for ((layer, g), mo) in net.layers_mut().iter_mut().zip(&grads.layers).zip(moments.iter_mut()) {
        upd.layer(layer, &g.weight, &g.bias, mo);
    }
    let norm = grads.weight_norm();
    Ok(StepReport {
        effective_lr: upd.eta,
        psi_trace: Vec::new(),
        gradient_norm_before: norm,
        gradient_norm_after: norm,
    })
}

/// One O-SGD step at counter value `t` (`t >= 1`).
///
/// For every layer `k`: `Ψ_k` absorbs `layer_inputs[k]` (the input of that
/// layer), the weight gradient is replaced by `∇W Ψ_kᵀ`, and the moment update
/// of [`adam_step`] follows. Bias gradients are used unprojected.
pub fn osgd_step(
    net: &mut Network,
    grads: &Gradients,
    layer_inputs: &[Array1<f64>],
    states: &mut [OsgdLayerState],
    t: u64,
    cfg: &OptimizerConfig,
) -> Result<StepReport> {
    check_grad_shapes(net, grads)?;
    let n = net.layers().len();
    if states.len() != n || layer_inputs.len() != n {
        return dim_err(format!(
            "{n} layers, {} states, {} layer inputs",
            states.len(),
            layer_inputs.len()
        ));
    }
    for (k, (s, l)) in states.iter().zip(net.layers()).enumerate() {
        if !s.moments.matches(l) || s.psi.dim() != (l.d_in(), l.d_in()) {
            return dim_err(format!("O-SGD state of layer {k} does not match the network"));
        }
    }
    let upd = MomentUpdate::new(t, cfg)?;
    let mut psi_trace = Vec::with_capacity(n);
    let mut after_sq = 0.0;
    for (k, layer) in net.layers_mut().iter_mut().enumerate() {
        let state = &mut states[k];
        psi_update(&mut state.psi, layer_inputs[k].view(), cfg.lambda)?;
        let projected = project_gradient(&grads.layers[k].weight, &state.psi)?;
        after_sq += projected.iter().map(|v| v * v).sum::<f64>();
        psi_trace.push(state.psi.diag().sum());
        upd.layer(layer, &projected, &grads.layers[k].bias, &mut state.moments);
    }
    Ok(StepReport {
        effective_lr: upd.eta,
        psi_trace,
        gradient_norm_before: grads.weight_norm(),
        gradient_norm_after: after_sq.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Osgd,
}

impl OptimizerKind {
    pub fn tag(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Osgd => "osgd",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "sgd" => Some(OptimizerKind::Sgd),
            "adam" => Some(OptimizerKind::Adam),
            "osgd" => Some(OptimizerKind::Osgd),
            _ => None,
        }
    }
}

/// Per-layer state of an optimizer run.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerStates {
    Sgd,
    Adam(Vec<Moments>),
    Osgd(Vec<OsgdLayerState>),
}

/// An optimizer together with its running state. The step counter is shared
/// by all layers and survives across training tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub cfg: OptimizerConfig,
    /// Fixed rate for plain SGD.
    pub sgd_learning_rate: f64,
    pub t: u64,
    pub states: LayerStates,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, cfg: OptimizerConfig, net: &Network) -> Self {
        let states = match kind {
            OptimizerKind::Sgd => LayerStates::Sgd,
            OptimizerKind::Adam => {
                LayerStates::Adam(net.layers().iter().map(Moments::zeros_like).collect())
            }
            OptimizerKind::Osgd => LayerStates::Osgd(
                net.layers()
                    .iter()
                    .map(|l| OsgdLayerState::new(l, cfg.beta))
                    .collect(),
            ),
        };
        Self {
            cfg,
            sgd_learning_rate: cfg.eta_i,
            t: 0,
            states,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self.states {
            LayerStates::Sgd => OptimizerKind::Sgd,
            LayerStates::Adam(_) => OptimizerKind::Adam,
            LayerStates::Osgd(_) => OptimizerKind::Osgd,
        }
    }

    /// Advances the counter and applies one update. `layer_inputs` holds the
    /// batch-mean input of every layer; only O-SGD reads it.
    pub fn step(
        &mut self,
        net: &mut Network,
        grads: &Gradients,
        layer_inputs: &[Array1<f64>],
    ) -> Result<StepReport> {
        self.t += 1;
        match &mut self.states {
            LayerStates::Sgd => {
                sgd_step(net, grads, self.sgd_learning_rate)?;
                let norm = grads.weight_norm();
                Ok(StepReport {
                    effective_lr: self.sgd_learning_rate,
                    psi_trace: Vec::new(),
                    gradient_norm_before: norm,
                    gradient_norm_after: norm,
                })
            }
            LayerStates::Adam(moments) => adam_step(net, grads, moments, self.t, &self.cfg),
            LayerStates::Osgd(states) => {
                osgd_step(net, grads, layer_inputs, states, self.t, &self.cfg)
            }
        }
    }
}
