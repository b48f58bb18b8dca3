//! Projected-gradient max-entropy solver with a certified stopping rule.
//!
//! Minimizes `f(mu) = log Z(mu) + beta <mu, e_hat>` over the unit l-inf ball
//! by
//!
//! ```text
//! mu_{t+1} = clip(mu_t - z_t / (c U)),   z_t = beta (e_hat - e'(mu_t))
//! ```
//!
//! where `e'` is a gradient oracle accurate to `delta_mu` per entry, `U` upper
//! bounds the dual Hessian (default `2 beta^2 m`), and `c > 10`. The solver
//! halts once `||e_hat - e'(mu_t)||_2 < (4c + 1) delta_mu`, which certifies
//!
//! ```text
//! D(sigma(mu)||rho) + D(rho||sigma(mu)) <= 2 (4c + 1) beta delta sqrt(m)
//! ```
//!
//! against the state `rho` that generated the targets, and a trace-norm error
//! of at most the square root of that via Pinsker.

use crate::gibbs::{GibbsError, GibbsModel};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

/// Movement threshold below which an iterate counts as stalled.
pub const STALL_MOVEMENT: f64 = 1e-12;
/// Number of consecutive stalled iterates that halt the solver.
pub const STALL_PATIENCE: usize = 25;

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error(transparent)]
    Gibbs(#[from] GibbsError),
    #[error("bad solver option: {0}")]
    BadOptions(String),
    #[error("gradient oracle: {0}")]
    Oracle(String),
    #[error("target vector has {got} entries, oracle expects {expected}")]
    BadLength { got: usize, expected: usize },
}

/// Source of approximate expectations `e'(mu)` for the current iterate.
pub trait GradientOracle {
    fn m(&self) -> usize;
    fn beta(&self) -> f64;
    /// Per-entry accuracy guarantee of [`Self::expectations`].
    fn delta_mu(&self) -> f64;
    fn expectations(&mut self, mu: &[f64]) -> Result<Vec<f64>, SolverError>;
    /// Exact oracles can expose `log Z(mu)` for objective traces and audits.
    fn log_partition(&mut self, _mu: &[f64]) -> Option<f64> {
        None
    }
}

/// Oracle backed by exact diagonalization of the model.
pub struct ExactEngineOracle {
    model: GibbsModel,
    delta_mu: f64,
}

impl ExactEngineOracle {
    /// `delta_mu` defaults to a conservative numerical-accuracy figure.
    pub fn new(model: GibbsModel) -> Self {
        ExactEngineOracle { model, delta_mu: 1e-9 }
    }

    pub fn with_delta(model: GibbsModel, delta_mu: f64) -> Self {
        ExactEngineOracle { model, delta_mu }
    }

    pub fn model(&self) -> &GibbsModel {
        &self.model
    }
}

impl GradientOracle for ExactEngineOracle {
    fn m(&self) -> usize {
        self.model.m()
    }

    fn beta(&self) -> f64 {
        self.model.beta()
    }

    fn delta_mu(&self) -> f64 {
        self.delta_mu
    }

    fn expectations(&mut self, mu: &[f64]) -> Result<Vec<f64>, SolverError> {
        Ok(self.model.expectations(mu)?.0)
    }

    fn log_partition(&mut self, mu: &[f64]) -> Option<f64> {
        self.model.log_partition(mu).ok()
    }
}

/// Wraps another oracle and adds independent uniform noise in
/// `[-noise, noise]` to every entry on every call. Used to exercise the
/// stopping rule and certificate under a genuinely inexact oracle.
pub struct InjectedNoiseOracle<O: GradientOracle> {
    inner: O,
    noise: f64,
    rng: ChaCha12Rng,
}

impl<O: GradientOracle> InjectedNoiseOracle<O> {
    pub fn new(inner: O, noise: f64, seed: u64) -> Self {
        InjectedNoiseOracle { inner, noise, rng: ChaCha12Rng::seed_from_u64(seed) }
    }
}

impl<O: GradientOracle> GradientOracle for InjectedNoiseOracle<O> {
    fn m(&self) -> usize {
        self.inner.m()
    }

    fn beta(&self) -> f64 {
        self.inner.beta()
    }

    fn delta_mu(&self) -> f64 {
        self.inner.delta_mu() + self.noise
    }

    fn expectations(&mut self, mu: &[f64]) -> Result<Vec<f64>, SolverError> {
        let mut e = self.inner.expectations(mu)?;
        for v in &mut e {
            *v += (self.rng.random::<f64>() * 2.0 - 1.0) * self.noise;
        }
        Ok(e)
    }
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Step-size safety factor; must exceed 10.
    pub c: f64,
    /// Hessian upper bound; `None` selects `2 beta^2 m`.
    pub u: Option<f64>,
    /// Gradient-oracle accuracy; `None` defers to the oracle's own figure.
    pub delta_mu: Option<f64>,
    /// Statistical accuracy of the measured targets `e_hat` (per entry).
    /// Enters the certificate, not the stopping rule.
    pub e_hat_delta: f64,
    pub max_iters: usize,
    /// Record a trace entry every this many iterations (0 = never).
    pub trace_every: usize,
    /// Verify the per-step descent inequality when the oracle is exact.
    pub audit_progress: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            c: 11.0,
            u: None,
            delta_mu: None,
            e_hat_delta: 0.0,
            max_iters: 500_000,
            trace_every: 0,
            audit_progress: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.c > 10.0) {
            return Err(SolverError::BadOptions(format!("c = {} must be > 10", self.c)));
        }
        if let Some(u) = self.u {
            if !(u > 0.0 && u.is_finite()) {
                return Err(SolverError::BadOptions(format!("u = {u}")));
            }
        }
        if let Some(d) = self.delta_mu {
            if !(d > 0.0 && d.is_finite()) {
                return Err(SolverError::BadOptions(format!("delta_mu = {d}")));
            }
        }
        if !(self.e_hat_delta >= 0.0 && self.e_hat_delta.is_finite()) {
            return Err(SolverError::BadOptions(format!(
                "e_hat_delta = {}",
                self.e_hat_delta
            )));
        }
        if self.max_iters == 0 {
            return Err(SolverError::BadOptions("max_iters = 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum HaltReason {
    /// Residual dropped below `(4c + 1) delta_mu`.
    StoppingRule,
    IterationLimit,
    /// Iterates stopped moving while the residual stayed above threshold
    /// (typically the projection pinning the iterate to the boundary).
    Stalled,
}

/// Divergence certificate attached to a solve.
#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub c: f64,
    pub u: f64,
    pub beta: f64,
    pub m: usize,
    pub delta_mu: f64,
    pub e_hat_delta: f64,
    /// `max(delta_mu, e_hat_delta, final_residual / (4c + 1))`; equals
    /// `delta_mu` whenever the stopping rule fired and the targets are exact.
    pub delta_cert: f64,
    /// `2 (4c + 1) beta delta_cert sqrt(m)`
    pub d_sym_bound: f64,
    /// `sqrt(d_sym_bound)` via Pinsker.
    pub trace_dist_bound: f64,
}

fn build_certificate(
    c: f64,
    u: f64,
    beta: f64,
    m: usize,
    delta_mu: f64,
    e_hat_delta: f64,
    final_residual: f64,
) -> Certificate {
    let delta_cert = delta_mu.max(e_hat_delta).max(final_residual / (4.0 * c + 1.0));
    let d_sym_bound = 2.0 * (4.0 * c + 1.0) * beta * delta_cert * (m as f64).sqrt();
    Certificate {
        c,
        u,
        beta,
        m,
        delta_mu,
        e_hat_delta,
        delta_cert,
        d_sym_bound,
        trace_dist_bound: d_sym_bound.sqrt(),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub residual: f64,
    pub step_inf: f64,
    pub objective: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AuditReport {
    pub checked: usize,
    pub violations: usize,
    pub worst_violation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveResult {
    pub mu: Vec<f64>,
    pub iterations: usize,
    pub halt: HaltReason,
    pub final_residual: f64,
    pub certificate: Certificate,
    pub trace: Vec<TraceEntry>,
    pub audit: Option<AuditReport>,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Run the projected-gradient iteration from `mu = 0`.
pub fn solve<O: GradientOracle>(
    oracle: &mut O,
    e_hat: &[f64],
    options: &SolverOptions,
) -> Result<SolveResult, SolverError> {
    options.validate()?;
    let m = oracle.m();
    if e_hat.len() != m {
        return Err(SolverError::BadLength { got: e_hat.len(), expected: m });
    }
    let beta = oracle.beta();
    let c = options.c;
    let u = options.u.unwrap_or(2.0 * beta * beta * m as f64);
    let delta_mu = options.delta_mu.unwrap_or_else(|| oracle.delta_mu());
    if !(delta_mu > 0.0) {
        return Err(SolverError::BadOptions(format!("delta_mu = {delta_mu}")));
    }
    let threshold = (4.0 * c + 1.0) * delta_mu;
    let step = 1.0 / (c * u);

    let mut mu = vec![0.0f64; m];
    let mut trace = Vec::new();
    let mut audit = options.audit_progress.then(AuditReport::default);
    let mut prev_obj: Option<(f64, f64)> = None; // (f(mu_t), ||z_t||^2)
    let mut stall_count = 0usize;
    let mut halt = HaltReason::IterationLimit;
    let mut iterations = options.max_iters;
    let mut final_residual = f64::NAN;

    for t in 0..=options.max_iters {
        let e_cur = oracle.expectations(&mu)?;
        let diff: Vec<f64> = e_hat.iter().zip(&e_cur).map(|(h, e)| h - e).collect();
        let residual = l2(&diff);
        final_residual = residual;

        if let (Some(report), Some(lz)) = (audit.as_mut(), oracle.log_partition(&mu)) {
            let dot: f64 = mu.iter().zip(e_hat).map(|(a, b)| a * b).sum();
            let f_now = lz + beta * dot;
            if let Some((f_prev, z_sq)) = prev_obj {
                report.checked += 1;
                // f(mu_{t+1}) <= f(mu_t) - 9 ||z_t||^2 / (10 c U)
                let allowed = f_prev - 9.0 * z_sq / (10.0 * c * u);
                let violation = f_now - allowed;
                if violation > 1e-10 {
                    report.violations += 1;
                }
                report.worst_violation = report.worst_violation.max(violation);
            }
            let z_sq = beta * beta * diff.iter().map(|d| d * d).sum::<f64>();
            prev_obj = Some((f_now, z_sq));
        }

        if residual < threshold {
            halt = HaltReason::StoppingRule;
            iterations = t;
            break;
        }
        if t == options.max_iters {
            halt = HaltReason::IterationLimit;
            iterations = t;
            break;
        }

        let mut step_inf = 0.0f64;
        for i in 0..m {
            let z = beta * diff[i];
            let next = (mu[i] - step * z).clamp(-1.0, 1.0);
            step_inf = step_inf.max((next - mu[i]).abs());
            mu[i] = next;
        }
        if options.trace_every > 0 && t % options.trace_every == 0 {
            trace.push(TraceEntry {
                iter: t,
                residual,
                step_inf,
                objective: prev_obj.map(|(f, _)| f),
            });
        }
        if step_inf < STALL_MOVEMENT {
            stall_count += 1;
            if stall_count >= STALL_PATIENCE {
                halt = HaltReason::Stalled;
                iterations = t + 1;
                break;
            }
        } else {
            stall_count = 0;
        }
    }

    let certificate = build_certificate(
        c,
        u,
        beta,
        m,
        delta_mu,
        options.e_hat_delta,
        final_residual,
    );
    Ok(SolveResult {
        mu,
        iterations,
        halt,
        final_residual,
        certificate,
        trace,
        audit,
    })
}

/// Worst-case iteration counts for the stated parameters.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct IterationBounds {
    /// `10 c U n log d / (9 beta^2 (4c+1)^2 delta_mu^2)`
    pub general: f64,
    /// `log(n log d / eps) / (-log(1 - 18 L / (10 c U)))` when a strong
    /// convexity constant `L` is available.
    pub strongly_convex: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn iteration_bounds(
    n: usize,
    d: usize,
    beta: f64,
    m: usize,
    c: f64,
    u: Option<f64>,
    delta_mu: f64,
    strong_convexity: Option<(f64, f64)>,
) -> IterationBounds {
    let u = u.unwrap_or(2.0 * beta * beta * m as f64);
    let f_gap = n as f64 * (d as f64).ln();
    let general =
        10.0 * c * u * f_gap / (9.0 * beta * beta * (4.0 * c + 1.0).powi(2) * delta_mu * delta_mu);
    let strongly_convex = strong_convexity.map(|(l, eps)| {
        let rate = 1.0 - 18.0 * l / (10.0 * c * u);
        (f_gap / eps).ln() / (-rate.ln())
    });
    IterationBounds { general, strongly_convex }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::symmetric_divergence;
    use crate::operators::trace_distance;

    fn frozen_model() -> (GibbsModel, Vec<f64>) {
        let model = GibbsModel::from_pauli_strings(2, 0.8, &["Z1", "X1*X2"]).unwrap();
        (model, vec![0.6, -0.4])
    }

    #[test]
    fn single_qubit_exact_recovery() {
        let model = GibbsModel::from_pauli_strings(1, 1.3, &["Z1"]).unwrap();
        let e_hat = vec![-0.477700012168498]; // e(0.4)
        let mut oracle = ExactEngineOracle::new(model);
        let result = solve(&mut oracle, &e_hat, &SolverOptions::default()).unwrap();
        assert_eq!(result.halt, HaltReason::StoppingRule);
        assert!((result.mu[0] - 0.4).abs() < 1e-6, "mu = {}", result.mu[0]);
        assert!(result.iterations > 0);
        assert!(result.final_residual < 45.0 * 1e-9);
    }

    #[test]
    fn halts_immediately_when_target_matches_initial_point() {
        let model = GibbsModel::from_pauli_strings(1, 1.3, &["Z1"]).unwrap();
        // e(0) = 0 for a traceless basis element
        let mut oracle = ExactEngineOracle::new(model);
        let result = solve(&mut oracle, &[0.0], &SolverOptions::default()).unwrap();
        assert_eq!(result.halt, HaltReason::StoppingRule);
        assert_eq!(result.iterations, 0);
        assert_eq!(result.mu, vec![0.0]);
    }

    #[test]
    fn frozen_model_recovery_and_certificate_shape() {
        let (model, lambda) = frozen_model();
        let e_hat = model.expectations(&lambda).unwrap().0;
        let mut oracle = ExactEngineOracle::new(model);
        let result = solve(&mut oracle, &e_hat, &SolverOptions::default()).unwrap();
        assert_eq!(result.halt, HaltReason::StoppingRule);
        for (got, want) in result.mu.iter().zip(&lambda) {
            assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        }
        let cert = &result.certificate;
        // stopping rule fired with exact targets: delta_cert collapses to delta_mu
        assert_eq!(cert.delta_cert, cert.delta_mu);
        let expect_bound =
            2.0 * (4.0 * cert.c + 1.0) * cert.beta * cert.delta_mu * (cert.m as f64).sqrt();
        assert!((cert.d_sym_bound - expect_bound).abs() < 1e-18);
        assert!((cert.trace_dist_bound - expect_bound.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn certificate_is_sound_under_noisy_oracle() {
        let (model, lambda) = frozen_model();
        let e_hat = model.expectations(&lambda).unwrap().0;
        let exact = ExactEngineOracle::with_delta(model.clone(), 1e-12);
        let mut noisy = InjectedNoiseOracle::new(exact, 1e-3, 424242);
        let options = SolverOptions {
            delta_mu: Some(1e-3),
            ..SolverOptions::default()
        };
        let result = solve(&mut noisy, &e_hat, &options).unwrap();
        assert_eq!(result.halt, HaltReason::StoppingRule);
        let sd = symmetric_divergence(&model, &lambda, &result.mu).unwrap();
        assert!(
            sd.sum <= result.certificate.d_sym_bound,
            "true d_sym {} vs bound {}",
            sd.sum,
            result.certificate.d_sym_bound
        );
        let a = model.gibbs_state(&lambda).unwrap();
        let b = model.gibbs_state(&result.mu).unwrap();
        assert!(trace_distance(a.matrix(), b.matrix()) <= result.certificate.trace_dist_bound);
        // parameters should still be close at this noise level
        for (got, want) in result.mu.iter().zip(&lambda) {
            assert!((got - want).abs() < 0.2);
        }
    }

    #[test]
    fn descent_inequality_audit_is_clean() {
        let (model, lambda) = frozen_model();
        let e_hat = model.expectations(&lambda).unwrap().0;
        let mut oracle = ExactEngineOracle::new(model);
        let options = SolverOptions {
            audit_progress: true,
            trace_every: 100,
            ..SolverOptions::default()
        };
        let result = solve(&mut oracle, &e_hat, &options).unwrap();
        let audit = result.audit.expect("audit requested");
        assert!(audit.checked > 0);
        assert_eq!(audit.violations, 0, "worst violation {}", audit.worst_violation);
        assert!(!result.trace.is_empty());
        // residuals in the trace never increase by much (monotone descent)
        for w in result.trace.windows(2) {
            assert!(w[1].residual <= w[0].residual * 1.0001 + 1e-12);
        }
    }

    #[test]
    fn boundary_saturation_is_reported_as_stall() {
        let model = GibbsModel::from_pauli_strings(1, 1.3, &["Z1"]).unwrap();
        let mut oracle = ExactEngineOracle::new(model);
        // no mu in the ball reaches an expectation of 1.5
        let options = SolverOptions {
            max_iters: 20_000,
            ..SolverOptions::default()
        };
        let result = solve(&mut oracle, &[1.5], &options).unwrap();
        assert_eq!(result.halt, HaltReason::Stalled);
        assert_eq!(result.mu[0], -1.0);
        assert!(result.final_residual > 0.5);
    }

    #[test]
    fn iterates_stay_in_the_ball_for_boundary_targets() {
        let (model, _) = frozen_model();
        let e_hat = model.expectations(&[1.0, -1.0]).unwrap().0;
        let mut oracle = ExactEngineOracle::new(model);
        let result = solve(&mut oracle, &e_hat, &SolverOptions::default()).unwrap();
        assert!(result.mu.iter().all(|v| v.abs() <= 1.0));
        assert_eq!(result.halt, HaltReason::StoppingRule);
        for (got, want) in result.mu.iter().zip(&[1.0, -1.0]) {
            assert!((got - want).abs() < 1e-4);
        }
    }

    #[test]
    fn option_validation() {
        let bad_c = SolverOptions { c: 10.0, ..SolverOptions::default() };
        assert!(bad_c.validate().is_err());
        let ok_c = SolverOptions { c: 10.0001, ..SolverOptions::default() };
        assert!(ok_c.validate().is_ok());
        let bad_u = SolverOptions { u: Some(-1.0), ..SolverOptions::default() };
        assert!(bad_u.validate().is_err());
        let bad_d = SolverOptions { delta_mu: Some(0.0), ..SolverOptions::default() };
        assert!(bad_d.validate().is_err());
    }

    #[test]
    fn frozen_iteration_bounds() {
        let b = iteration_bounds(2, 2, 0.8, 2, 11.0, None, 1e-3, Some((0.49, 1e-12)));
        assert!((b.general - 33468.8350558437).abs() < 1e-6, "general {}", b.general);
        let sc = b.strongly_convex.unwrap();
        assert!((sc - 878.5633331095).abs() < 1e-6, "sc {sc}");
        // scaling: halving delta_mu quadruples the general bound
        let b2 = iteration_bounds(2, 2, 0.8, 2, 11.0, None, 5e-4, None);
        assert!((b2.general / b.general - 4.0).abs() < 1e-10);
    }

    #[test]
    fn solver_respects_general_iteration_bound() {
        let (model, lambda) = frozen_model();
        let e_hat = model.expectations(&lambda).unwrap().0;
        let delta_mu = 1e-3;
        let mut oracle = ExactEngineOracle::with_delta(model.clone(), delta_mu);
        let result = solve(&mut oracle, &e_hat, &SolverOptions::default()).unwrap();
        assert_eq!(result.halt, HaltReason::StoppingRule);
        let bound = iteration_bounds(2, 2, model.beta(), 2, 11.0, None, delta_mu, None);
        assert!(
            (result.iterations as f64) <= bound.general.ceil(),
            "{} iterations vs bound {}",
            result.iterations,
            bound.general
        );
    }
}
