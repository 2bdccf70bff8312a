//! Alternating analysis-sparse reconstruction.
//!
//! Minimises
//!
//! ```text
//! ||y - Phi x||^2 + eta * sum_k ( ||w_k * x - a_k||^2 + J(a_k) )
//! ```
//!
//! by alternating a closed-form proximal update of the codes `a_k` with one
//! gradient step on `x`.

use std::io::Write;

use crate::conv::{conv2d_transposed, conv2d_valid, Kernels};
use crate::error::{param_err, Error, Result};
use crate::sensing::{adjoint, back_project, sense, FilterBank, MeasurementSet};
use crate::tensor::{Shape, Tensor};

/// Patch size of the default analysis bank.
pub const DEFAULT_DCT_SIZE: usize = 2;

/// Analysis filters `w_k` applied with stride 1 and periodic extension.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisFilterBank {
    filters: Kernels<f64>,
    /// `sum_k W_k^T W_k = norm_const * I`.
    norm_const: f64,
    /// Channel left out of the regulariser (the DC patch of a DCT bank).
    lowpass: Option<usize>,
}

impl AnalysisFilterBank {
    /// All `n^2` separable DCT-II basis patches, scaled by `1/n` so that the
    /// shifted family is a Parseval frame (`norm_const = 1`). Channel 0, the
    /// local mean, is marked as the unpenalised lowpass.
    pub fn dct(n: usize) -> Result<Self> {
        if n == 0 {
            return param_err("DCT size must be positive");
        }
        let nf = n as f64;
        let basis = |u: usize, i: usize| {
            let a = if u == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            a * (std::f64::consts::PI * (2 * i + 1) as f64 * u as f64 / (2.0 * nf)).cos()
        };
        let mut data = Vec::with_capacity(n * n * n * n);
        for u in 0..n {
            for v in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        data.push(basis(u, i) * basis(v, j) / nf);
                    }
                }
            }
        }
        Ok(Self {
            filters: Kernels::from_vec(n * n, 1, n, data)?,
            norm_const: 1.0,
            lowpass: Some(0),
        })
    }

    /// Custom filters with a declared frame constant.
    pub fn new(filters: Kernels<f64>, norm_const: f64) -> Result<Self> {
        if filters.in_channels() != 1 || filters.out_channels() == 0 {
            return param_err("analysis filters must be a K x 1 x n x n stack");
        }
        if !(norm_const > 0.0) {
            return param_err("frame constant must be positive");
        }
        Ok(Self {
            filters,
            norm_const,
            lowpass: None,
        })
    }

    /// Exclude channel `k` from thresholding and from `J`, or penalise every
    /// channel with `None`.
    pub fn with_lowpass(mut self, lowpass: Option<usize>) -> Result<Self> {
        if let Some(k) = lowpass {
            if k >= self.count() {
                return param_err(format!("lowpass channel {k} out of range"));
            }
        }
        self.lowpass = lowpass;
        Ok(self)
    }

    pub fn lowpass(&self) -> Option<usize> {
        self.lowpass
    }

    pub fn filters(&self) -> &Kernels<f64> {
        &self.filters
    }

    pub fn count(&self) -> usize {
        self.filters.out_channels()
    }

    pub fn size(&self) -> usize {
        self.filters.size()
    }

    pub fn norm_const(&self) -> f64 {
        self.norm_const
    }

    /// `w_k * x` for every `k`, each the size of `x`.
    pub fn analyze(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let padded = pad_periodic(x, self.size() - 1)?;
        conv2d_valid(&padded, self.filters.view(), 1)
    }

    /// `sum_k W_k^T a_k`, the adjoint of [`analyze`](Self::analyze).
    pub fn synthesize(&self, codes: &Tensor<f64>) -> Result<Tensor<f64>> {
        let ext = self.size() - 1;
        let full = conv2d_transposed(
            codes,
            self.filters.view(),
            1,
            (codes.height() + ext, codes.width() + ext),
        )?;
        fold_periodic(&full, ext)
    }
}

impl Default for AnalysisFilterBank {
    fn default() -> Self {
        Self::dct(DEFAULT_DCT_SIZE).expect("default DCT size is valid")
    }
}

fn pad_periodic(x: &Tensor<f64>, ext: usize) -> Result<Tensor<f64>> {
    if x.channels() != 1 {
        return Err(Error::Dimension(format!(
            "analysis transform expects one channel, got {}",
            x.shape()
        )));
    }
    let (h, w) = (x.height(), x.width());
    Ok(Tensor::from_fn(Shape::new(1, h + ext, w + ext), |_, y, xx| {
        x[(0, y % h, xx % w)]
    }))
}

fn fold_periodic(full: &Tensor<f64>, ext: usize) -> Result<Tensor<f64>> {
    let (h, w) = (full.height() - ext, full.width() - ext);
    let mut out = Tensor::zeros(Shape::new(1, h, w));
    for y in 0..full.height() {
        for x in 0..full.width() {
            out[(0, y % h, x % w)] += full[(0, y, x)];
        }
    }
    Ok(out)
}

/// The `K` code maps `a_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCodeStack(pub Tensor<f64>);

impl SparseCodeStack {
    pub fn maps(&self) -> &Tensor<f64> {
        &self.0
    }
}

/// Code regulariser `J`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regularizer {
    /// `J(a) = 2 tau ||a||_1`, proximal map = soft thresholding.
    L1,
    /// Indicator of `a >= 0`, proximal map = `max(., 0)`.
    NonNeg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepMode {
    Fixed,
    /// Halve the step until the x-subproblem shows sufficient decrease.
    Backtracking,
    /// Backtracking from a Nesterov-extrapolated point. The momentum restarts
    /// whenever the objective would rise, so the trace stays monotone.
    Accelerated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub eta: f64,
    pub delta: f64,
    pub tau: f64,
    pub regularizer: Regularizer,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub step_mode: StepMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            delta: 1.0,
            tau: 0.01,
            regularizer: Regularizer::L1,
            max_iters: 400,
            rel_tol: 1e-6,
            step_mode: StepMode::Accelerated,
        }
    }
}

impl SolverConfig {
    /// `max_iters = 0` is accepted and means "return the back-projection".
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return param_err(format!("eta must be > 0, got {}", self.eta));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return param_err(format!("delta must be >= 0, got {}", self.delta));
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return param_err(format!("tau must be >= 0, got {}", self.tau));
        }
        if !(self.rel_tol > 0.0) {
            return param_err(format!("rel_tol must be > 0, got {}", self.rel_tol));
        }
        Ok(())
    }
}

/// `sign(v) * max(|v| - tau, 0)`
pub fn soft_threshold(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

/// Channels `[start, end)` of a code stack skip the prox for the lowpass.
fn penalised(codes: &Tensor<f64>, bank: &AnalysisFilterBank) -> Vec<std::ops::Range<usize>> {
    let plane = codes.shape().plane();
    let total = codes.data().len();
    match bank.lowpass {
        Some(k) => vec![0..k * plane, (k + 1) * plane..total],
        None => vec![0..total],
    }
}

fn prox_in_place(codes: &mut Tensor<f64>, bank: &AnalysisFilterBank, cfg: &SolverConfig) {
    for range in penalised(codes, bank) {
        let part = &mut codes.data_mut()[range];
        match cfg.regularizer {
            Regularizer::L1 => part.iter_mut().for_each(|v| *v = soft_threshold(*v, cfg.tau)),
            Regularizer::NonNeg => part.iter_mut().for_each(|v| *v = v.max(0.0)),
        }
    }
}

/// Closed-form code update `a_k = prox(w_k * x)`.
pub fn update_alpha(x: &Tensor<f64>, bank: &AnalysisFilterBank, cfg: &SolverConfig) -> Result<SparseCodeStack> {
    let mut codes = bank.analyze(x)?;
    prox_in_place(&mut codes, bank, cfg);
    Ok(SparseCodeStack(codes))
}

fn check_codes(x: &Tensor<f64>, codes: &SparseCodeStack, bank: &AnalysisFilterBank) -> Result<()> {
    let expect = Shape::new(bank.count(), x.height(), x.width());
    if codes.0.shape() != expect {
        return Err(Error::Dimension(format!(
            "codes {} do not match expected {expect}",
            codes.0.shape()
        )));
    }
    Ok(())
}

/// Half-gradient of the x-subproblem:
/// `Phi^T(Phi x - y) + eta * sum_k W_k^T (W_k x - a_k)`.
fn x_gradient(
    residual: &MeasurementSet,
    code_residual: &Tensor<f64>,
    sensing: &FilterBank,
    analysis: &AnalysisFilterBank,
    eta: f64,
) -> Result<Tensor<f64>> {
    let mut g = adjoint(residual, sensing)?;
    g.axpy(eta, &analysis.synthesize(code_residual)?)?;
    Ok(g)
}

/// One fixed-step gradient update of `x` with the codes held fixed.
pub fn update_x(
    x_t: &Tensor<f64>,
    alpha: &SparseCodeStack,
    y: &MeasurementSet,
    sensing: &FilterBank,
    analysis: &AnalysisFilterBank,
    cfg: &SolverConfig,
) -> Result<Tensor<f64>> {
    check_codes(x_t, alpha, analysis)?;
    let mut r = sense(x_t, sensing)?;
    r.maps = r.maps.sub(&y.maps)?;
    let d = analysis.analyze(x_t)?.sub(&alpha.0)?;
    let g = x_gradient(&r, &d, sensing, analysis, cfg.eta)?;
    let mut next = x_t.clone();
    next.axpy(-cfg.delta, &g)?;
    Ok(next)
}

/// `(rho, gamma) = (1 - delta (1 + eta), delta eta)`
pub fn simplified_coefficients(delta: f64, eta: f64) -> (f64, f64) {
    (1.0 - delta * (1.0 + eta), delta * eta)
}

/// `rho x_t + delta x0 + gamma x_half`: the x-update with `Phi^T Phi` and
/// `sum_k W_k^T W_k` both replaced by the identity.
pub fn update_x_simplified(
    x_t: &Tensor<f64>,
    x_half: &Tensor<f64>,
    x0: &Tensor<f64>,
    cfg: &SolverConfig,
) -> Result<Tensor<f64>> {
    let (rho, gamma) = simplified_coefficients(cfg.delta, cfg.eta);
    let mut out = x_t.scale(rho);
    out.axpy(cfg.delta, x0)?;
    out.axpy(gamma, x_half)?;
    Ok(out)
}

fn penalty(codes: &Tensor<f64>, bank: &AnalysisFilterBank, cfg: &SolverConfig) -> Result<f64> {
    let mut total = 0.0;
    for range in penalised(codes, bank) {
        let part = &codes.data()[range];
        match cfg.regularizer {
            Regularizer::L1 => total += 2.0 * cfg.tau * part.iter().map(|v| v.abs()).sum::<f64>(),
            Regularizer::NonNeg => {
                if let Some(v) = part.iter().find(|&&v| v < 0.0) {
                    return Err(Error::Infeasible(format!(
                        "negative code {v} under the non-negativity constraint"
                    )));
                }
            }
        }
    }
    Ok(total)
}

/// Full objective value at `(x, alpha)`.
pub fn objective(
    x: &Tensor<f64>,
    alpha: &SparseCodeStack,
    y: &MeasurementSet,
    sensing: &FilterBank,
    analysis: &AnalysisFilterBank,
    cfg: &SolverConfig,
) -> Result<f64> {
    check_codes(x, alpha, analysis)?;
    let data = sense(x, sensing)?.maps.sub(&y.maps)?.norm_sq();
    let fit = analysis.analyze(x)?.sub(&alpha.0)?.norm_sq();
    Ok(data + cfg.eta * (fit + penalty(&alpha.0, analysis, cfg)?))
}

/// One row of the solver trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub rel_change: f64,
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct SolverOutput {
    /// Reconstruction on the sensed (padded) geometry.
    pub image: Tensor<f64>,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
}

impl SolverOutput {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    /// Plain-text trace: a header line, then `iteration,objective,rel_change`.
    pub fn write_trace<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iteration,objective,rel_change")?;
        for e in &self.trace {
            writeln!(out, "{},{:.17e},{:.17e}", e.iteration, e.objective, e.rel_change)?;
        }
        Ok(())
    }
}

/// Smallest step tried before backtracking gives up.
const MIN_STEP: f64 = 1e-20;
/// Armijo fraction for the sufficient-decrease test.
const ARMIJO: f64 = 0.5;

/// Cached quantities at the current iterate.
struct Point {
    x: Tensor<f64>,
    residual: MeasurementSet,
    coeffs: Tensor<f64>,
}

impl Point {
    fn at(x: Tensor<f64>, y: &MeasurementSet, sensing: &FilterBank, analysis: &AnalysisFilterBank) -> Result<Self> {
        let mut residual = sense(&x, sensing)?;
        residual.maps = residual.maps.sub(&y.maps)?;
        let coeffs = analysis.analyze(&x)?;
        Ok(Self {
            x,
            residual,
            coeffs,
        })
    }

    /// x-subproblem value plus the code penalty.
    fn value(&self, codes: &Tensor<f64>, penalty: f64, eta: f64) -> Result<f64> {
        Ok(self.residual.maps.norm_sq() + eta * (self.coeffs.sub(codes)?.norm_sq() + penalty))
    }
}

/// Alternate code and image updates starting from the scaled back-projection.
pub fn reconstruct_iterative(
    y: &MeasurementSet,
    sensing: &FilterBank,
    analysis: &AnalysisFilterBank,
    cfg: &SolverConfig,
) -> Result<SolverOutput> {
    cfg.validate()?;
    y.meta.check_bank(sensing)?;
    let x0 = back_project(y, sensing)?;
    if y.maps.data().iter().all(|&v| v == 0.0) || cfg.max_iters == 0 {
        return Ok(SolverOutput {
            image: x0,
            trace: Vec::new(),
            converged: cfg.max_iters > 0,
        });
    }

    let p = Point::at(x0, y, sensing, analysis)?;
    if cfg.step_mode == StepMode::Accelerated {
        return run_accelerated(p, y, sensing, analysis, cfg);
    }
    let mut p = p;
    let mut step = cfg.delta;
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    let mut best = f64::INFINITY;

    for iteration in 1..=cfg.max_iters {
        let mut codes = p.coeffs.clone();
        prox_in_place(&mut codes, analysis, cfg);
        let pen = penalty(&codes, analysis, cfg)?;
        let d = p.coeffs.sub(&codes)?;
        let g = x_gradient(&p.residual, &d, sensing, analysis, cfg.eta)?;
        let g_sq = g.norm_sq();
        if !g_sq.is_finite() {
            return Err(Error::NonFinite(format!("gradient at iteration {iteration}")));
        }

        let next = match cfg.step_mode {
            StepMode::Fixed => {
                let mut x = p.x.clone();
                x.axpy(-step, &g)?;
                Some(Point::at(x, y, sensing, analysis)?)
            }
            StepMode::Backtracking | StepMode::Accelerated => {
                let current = p.value(&codes, pen, cfg.eta)?;
                let mut accepted = None;
                // let the step recover after a bad stretch
                step = (2.0 * step).min(cfg.delta);
                while step >= MIN_STEP {
                    let mut x = p.x.clone();
                    x.axpy(-step, &g)?;
                    let trial = Point::at(x, y, sensing, analysis)?;
                    let v = trial.value(&codes, pen, cfg.eta)?;
                    if v <= current - 2.0 * ARMIJO * step * g_sq && v <= best {
                        accepted = Some(trial);
                        break;
                    }
                    step *= 0.5;
                }
                accepted
            }
        };

        let Some(next) = next else {
            // no step decreases the objective any further
            converged = true;
            break;
        };
        if !next.x.is_finite() {
            return Err(Error::NonFinite(format!("iterate at iteration {iteration}")));
        }
        let value = next.value(&codes, pen, cfg.eta)?;
        let rel_change = next.x.sub(&p.x)?.norm() / p.x.norm().max(f64::MIN_POSITIVE);
        best = best.min(value);
        trace.push(TraceEntry {
            iteration,
            objective: value,
            rel_change,
            step,
        });
        p = next;
        if rel_change < cfg.rel_tol {
            converged = true;
            break;
        }
    }

    Ok(SolverOutput {
        image: p.x,
        trace,
        converged,
    })
}

/// Objective with the codes set to their optimum for `p.x`, plus those codes.
fn optimal_value(p: &Point, analysis: &AnalysisFilterBank, cfg: &SolverConfig) -> Result<(f64, Tensor<f64>)> {
    let mut codes = p.coeffs.clone();
    prox_in_place(&mut codes, analysis, cfg);
    let pen = penalty(&codes, analysis, cfg)?;
    Ok((p.value(&codes, pen, cfg.eta)?, codes))
}

/// Eliminating the codes leaves a smooth function of `x` alone (the code
/// penalty becomes a Huber-type envelope), and one alternation is a gradient
/// step on it. This runs the same steps with Nesterov extrapolation and a
/// restart whenever the objective would increase.
fn run_accelerated(
    mut p: Point,
    y: &MeasurementSet,
    sensing: &FilterBank,
    analysis: &AnalysisFilterBank,
    cfg: &SolverConfig,
) -> Result<SolverOutput> {
    let (mut value, _) = optimal_value(&p, analysis, cfg)?;
    let mut z = Point::at(p.x.clone(), y, sensing, analysis)?;
    let mut momentum = 1.0f64;
    let mut step = cfg.delta;
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    let mut iteration = 0;

    while iteration < cfg.max_iters {
        let (z_value, codes) = optimal_value(&z, analysis, cfg)?;
        let pen = penalty(&codes, analysis, cfg)?;
        let g = x_gradient(&z.residual, &z.coeffs.sub(&codes)?, sensing, analysis, cfg.eta)?;
        let g_sq = g.norm_sq();
        if !g_sq.is_finite() {
            return Err(Error::NonFinite(format!("gradient at iteration {}", iteration + 1)));
        }
        step = (2.0 * step).min(cfg.delta);
        let mut accepted = None;
        while step >= MIN_STEP {
            let mut x = z.x.clone();
            x.axpy(-step, &g)?;
            let trial = Point::at(x, y, sensing, analysis)?;
            if trial.value(&codes, pen, cfg.eta)? <= z_value - 2.0 * ARMIJO * step * g_sq {
                accepted = Some(trial);
                break;
            }
            step *= 0.5;
        }
        let restarted = momentum == 1.0;
        let Some(u) = accepted else {
            if restarted {
                converged = true;
                break;
            }
            momentum = 1.0;
            z = Point::at(p.x.clone(), y, sensing, analysis)?;
            continue;
        };
        if !u.x.is_finite() {
            return Err(Error::NonFinite(format!("iterate at iteration {}", iteration + 1)));
        }
        let (u_value, _) = optimal_value(&u, analysis, cfg)?;
        if u_value > value {
            if restarted {
                // a plain step from the current iterate cannot rise; this is
                // rounding at the optimum
                converged = true;
                break;
            }
            momentum = 1.0;
            z = Point::at(p.x.clone(), y, sensing, analysis)?;
            continue;
        }
        iteration += 1;
        let diff = u.x.sub(&p.x)?;
        let rel_change = diff.norm() / p.x.norm().max(f64::MIN_POSITIVE);
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let mut zx = u.x.clone();
        zx.axpy((momentum - 1.0) / next_momentum, &diff)?;
        momentum = next_momentum;
        z = Point::at(zx, y, sensing, analysis)?;
        value = u_value;
        trace.push(TraceEntry {
            iteration,
            objective: value,
            rel_change,
            step,
        });
        p = u;
        if rel_change < cfg.rel_tol {
            converged = true;
            break;
        }
    }

    Ok(SolverOutput {
        image: p.x,
        trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::make_filter_bank;

    fn image(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(Shape::new(1, h, w), |_, y, x| {
            if (y / 4 + x / 5) % 2 == 0 { 0.2 } else { 0.7 }
        })
    }

    #[test]
    fn soft_threshold_definition() {
        assert_eq!(soft_threshold(5.0, 2.0), 3.0);
        assert_eq!(soft_threshold(-5.0, 2.0), -3.0);
        assert_eq!(soft_threshold(1.5, 2.0), 0.0);
        assert_eq!(soft_threshold(-2.0, 2.0), 0.0);
        assert_eq!(soft_threshold(0.3, 0.0), 0.3);
    }

    #[test]
    fn zero_image_gives_zero_codes() {
        let bank = AnalysisFilterBank::default();
        let x = Tensor::zeros(Shape::new(1, 12, 12));
        for reg in [Regularizer::L1, Regularizer::NonNeg] {
            let cfg = SolverConfig { regularizer: reg, ..Default::default() };
            let a = update_alpha(&x, &bank, &cfg).unwrap();
            assert_eq!(a.0.shape(), Shape::new(bank.count(), 12, 12));
            assert!(a.0.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn nonneg_kills_negative_coefficients() {
        let bank = AnalysisFilterBank::default();
        let x = Tensor::filled(Shape::new(1, 9, 9), -1.0);
        let cfg = SolverConfig { regularizer: Regularizer::NonNeg, ..Default::default() };
        let a = update_alpha(&x, &bank.clone().with_lowpass(None).unwrap(), &cfg).unwrap();
        // the DC filter response is strictly negative everywhere
        assert!(a.0.channel(0).iter().all(|&v| v == 0.0));
        assert!(a.0.data().iter().all(|&v| v >= 0.0));
        // with the lowpass exempt, the local mean passes through untouched
        let a = update_alpha(&x, &bank, &cfg).unwrap();
        assert!(a.0.channel(0).iter().all(|&v| v < 0.0));
    }

    #[test]
    fn nonneg_objective_rejects_negative_codes() {
        let sensing = make_filter_bank(2, 3, 3, 0).unwrap();
        let analysis = AnalysisFilterBank::dct(2).unwrap();
        let x = image(9, 9);
        let y = sense(&x, &sensing).unwrap();
        let cfg = SolverConfig { regularizer: Regularizer::NonNeg, ..Default::default() };
        let bad = SparseCodeStack(Tensor::filled(Shape::new(4, 9, 9), -0.1));
        assert!(matches!(
            objective(&x, &bad, &y, &sensing, &analysis, &cfg),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn zero_step_leaves_x_unchanged() {
        let sensing = make_filter_bank(2, 5, 3, 4).unwrap();
        let analysis = AnalysisFilterBank::dct(4).unwrap();
        let x = image(11, 11);
        let y = sense(&image(11, 11).map(|v| 1.0 - v), &sensing).unwrap();
        let cfg = SolverConfig { delta: 0.0, ..Default::default() };
        let a = update_alpha(&x, &analysis, &cfg).unwrap();
        assert_eq!(update_x(&x, &a, &y, &sensing, &analysis, &cfg).unwrap(), x);
    }

    #[test]
    fn simplified_coefficients_example() {
        let (rho, gamma) = simplified_coefficients(0.1, 1.0);
        assert!((rho - 0.8).abs() < 1e-15);
        assert!((gamma - 0.1).abs() < 1e-15);
        let v = image(6, 6);
        let cfg = SolverConfig { delta: 0.1, eta: 1.0, ..Default::default() };
        let out = update_x_simplified(&v, &v, &v, &cfg).unwrap();
        for (a, b) in out.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_measurements_short_circuit() {
        let sensing = make_filter_bank(2, 5, 3, 4).unwrap();
        let y = sense(&Tensor::zeros(Shape::new(1, 11, 11)), &sensing).unwrap();
        let out = reconstruct_iterative(&y, &sensing, &AnalysisFilterBank::default(), &SolverConfig::default()).unwrap();
        assert!(out.trace.is_empty());
        assert!(out.image.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn max_iters_zero_returns_back_projection() {
        let sensing = make_filter_bank(2, 5, 3, 4).unwrap();
        let y = sense(&image(11, 11), &sensing).unwrap();
        let cfg = SolverConfig { max_iters: 0, ..Default::default() };
        let out = reconstruct_iterative(&y, &sensing, &AnalysisFilterBank::default(), &cfg).unwrap();
        assert_eq!(out.image, back_project(&y, &sensing).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig { eta: 0.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { tau: -1.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { rel_tol: 0.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig::default().validate().is_ok());
    }

    #[test]
    fn trace_format() {
        let out = SolverOutput {
            image: Tensor::zeros(Shape::new(1, 1, 1)),
            trace: vec![TraceEntry { iteration: 1, objective: 2.5, rel_change: 0.25, step: 1.0 }],
            converged: false,
        };
        let mut buf = Vec::new();
        out.write_trace(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("iteration,objective,rel_change\n1,2.5"));
    }
}
