//! Gibbs states `sigma(mu) = exp(-beta * H(mu)) / Z(mu)` for a Hamiltonian
//! family `H(mu) = sum_i mu_i E_i` with `||E_i|| <= 1` and `||mu||_inf <= 1`,
//! and the max-entropy dual objective
//!
//! ```text
//! f(mu) = log Z(mu) + beta * <mu, e_target>
//! ```
//!
//! whose gradient is `beta * (e_target - e(mu))` and whose minimizer over the
//! unit ball recovers the state generating `e_target`. Relative entropies of
//! two members of the family obey
//!
//! ```text
//! D(sigma(mu)||sigma(lambda)) + D(sigma(lambda)||sigma(mu))
//!     = -beta * <lambda - mu, e(lambda) - e(mu)>
//! ```
//!
//! which is the workhorse identity behind all certified error bounds here.

use crate::operators::{
    self, embed_local, herm_eig, symmetrize_hermitian, CMat, DensityOperator,
    LocalOperator, OperatorError, PauliString, SiteSystem, HERMITICITY_TOL,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::ops::Deref;
use std::path::Path;

/// Eigenvalues of `rho` below this are dropped from `tr[rho log rho]`.
pub const RELENT_RHO_FLOOR: f64 = 1e-14;
/// `sigma` must have all eigenvalues above this to count as full rank.
pub const FULL_RANK_MIN_EIG: f64 = 1e-12;
/// Slack allowed on `||E_i|| <= 1` and `||mu||_inf <= 1` checks.
pub const NORM_SLACK: f64 = 1e-10;
/// Frobenius tolerance for the pairwise commuting check.
pub const COMMUTING_TOL: f64 = 1e-10;
/// Gram condition number beyond which a near-dependent-basis warning is raised.
pub const GRAM_CONDITION_WARN: f64 = 1e8;

#[derive(Debug, thiserror::Error)]
pub enum GibbsError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("beta must be positive and finite, got {0}")]
    BadBeta(f64),
    #[error("model needs at least one basis element")]
    EmptyBasis,
    #[error("basis element {index} has operator norm {norm:.8} > 1")]
    NormTooLarge { index: usize, norm: f64 },
    #[error("vector has {got} entries, expected {expected}")]
    BadLength { got: usize, expected: usize },
    #[error("parameter {index} = {value:.8} leaves the unit l-inf ball")]
    OutOfBall { index: usize, value: f64 },
    #[error("state is singular (min eigenvalue {eig:.3e}), need full rank")]
    SingularState { eig: f64 },
    #[error("rho is not a density operator: {0}")]
    BadState(String),
    #[error("commuting backend invoked on a non-commuting model")]
    NotCommuting,
    #[error("model file: {0}")]
    File(String),
}

/// Parameter vector in the unit l-inf ball (checked by `model_params`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    /// Validate `||lambda||_inf <= 1` (small numerical slack allowed).
    pub fn model_params(values: Vec<f64>) -> Result<Self, GibbsError> {
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() || value.abs() > 1.0 + NORM_SLACK {
                return Err(GibbsError::OutOfBall { index, value });
            }
        }
        Ok(ParameterVector(values))
    }

    pub fn unchecked(values: Vec<f64>) -> Self {
        ParameterVector(values)
    }
}

impl Deref for ParameterVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Expectation values of the basis elements; entries lie in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExpectationVector(pub Vec<f64>);

impl Deref for ExpectationVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ModelWarning {
    /// Gram matrix of the basis is ill conditioned; estimates of individual
    /// parameters may be unstable even if the state itself is well determined.
    NearlyDependentBasis { condition: f64 },
}

impl std::fmt::Display for ModelWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelWarning::NearlyDependentBasis { condition } => {
                write!(f, "basis Gram matrix condition number {condition:.3e}")
            }
        }
    }
}

/// Backend used to evaluate the dual Hessian `grad^2 log Z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HessianBackend {
    /// Divided differences of the exponential in the eigenbasis of `H(mu)`.
    Spectral,
    /// Closed form `beta^2 (tr[sigma E_i E_j] - e_i e_j)`; commuting models only.
    Commuting,
    /// Central differences of the dual gradient.
    FiniteDiff { step: f64 },
}

/// `exp(-beta H(mu))/Z` family over a fixed local operator basis.
#[derive(Clone, Debug)]
pub struct GibbsModel {
    sys: SiteSystem,
    beta: f64,
    basis: Vec<LocalOperator>,
    embedded: Vec<CMat>,
    commuting: bool,
    gram_condition: f64,
    warnings: Vec<ModelWarning>,
}

impl GibbsModel {
    pub fn new(
        sys: SiteSystem,
        beta: f64,
        basis: Vec<LocalOperator>,
    ) -> Result<Self, GibbsError> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(GibbsError::BadBeta(beta));
        }
        if basis.is_empty() {
            return Err(GibbsError::EmptyBasis);
        }
        let mut checked = Vec::with_capacity(basis.len());
        let mut embedded = Vec::with_capacity(basis.len());
        for (index, op) in basis.into_iter().enumerate() {
            let matrix = symmetrize_hermitian(op.matrix(), HERMITICITY_TOL)?;
            let op = LocalOperator::new(
                op.support().to_vec(),
                matrix,
                op.label().map(str::to_owned),
            )?;
            let full = embed_local(sys, &op)?;
            let norm = operators::operator_norm(&full);
            if norm > 1.0 + NORM_SLACK {
                return Err(GibbsError::NormTooLarge { index, norm });
            }
            checked.push(op);
            embedded.push(full);
        }
        let m = embedded.len();
        let mut commuting = true;
        'outer: for i in 0..m {
            for j in (i + 1)..m {
                let comm = operators::commutator(&embedded[i], &embedded[j]);
                if operators::frobenius_norm(&comm) > COMMUTING_TOL {
                    commuting = false;
                    break 'outer;
                }
            }
        }
        // Linear independence is reported, not enforced: Gram condition number.
        let mut gram = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = (&embedded[i] * &embedded[j]).trace().re;
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let eig = nalgebra::SymmetricEigen::new(gram);
        let gmax = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        let gmin = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        let gram_condition = if gmin <= gmax * 1e-300 {
            f64::INFINITY
        } else {
            gmax / gmin
        };
        let mut warnings = Vec::new();
        if !(gram_condition < GRAM_CONDITION_WARN) {
            warnings.push(ModelWarning::NearlyDependentBasis { condition: gram_condition });
        }
        Ok(GibbsModel {
            sys,
            beta,
            basis: checked,
            embedded,
            commuting,
            gram_condition,
            warnings,
        })
    }

    /// Convenience constructor from Pauli strings on `n` qubits.
    pub fn from_pauli_strings(
        n: usize,
        beta: f64,
        strings: &[&str],
    ) -> Result<Self, GibbsError> {
        let sys = SiteSystem::qubits(n)?;
        let mut ops = Vec::with_capacity(strings.len());
        for s in strings {
            let ps = PauliString::parse(s)?;
            if ps.max_site() > n {
                return Err(GibbsError::Operator(OperatorError::BadSupport {
                    support: ps.support(),
                    n,
                }));
            }
            ops.push(ps.to_local_operator());
        }
        GibbsModel::new(sys, beta, ops)
    }

    pub fn sys(&self) -> SiteSystem {
        self.sys
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn m(&self) -> usize {
        self.embedded.len()
    }

    pub fn basis(&self) -> &[LocalOperator] {
        &self.basis
    }

    pub fn embedded_basis(&self) -> &[CMat] {
        &self.embedded
    }

    pub fn is_commuting(&self) -> bool {
        self.commuting
    }

    pub fn gram_condition(&self) -> f64 {
        self.gram_condition
    }

    pub fn warnings(&self) -> &[ModelWarning] {
        &self.warnings
    }

    fn check_len(&self, v: &[f64]) -> Result<(), GibbsError> {
        if v.len() != self.m() {
            return Err(GibbsError::BadLength { got: v.len(), expected: self.m() });
        }
        Ok(())
    }

    pub fn hamiltonian(&self, mu: &[f64]) -> Result<CMat, GibbsError> {
        self.check_len(mu)?;
        let dim = self.sys.dim();
        let mut h = CMat::zeros(dim, dim);
        for (c, e) in mu.iter().zip(&self.embedded) {
            if *c != 0.0 {
                h += e.scale(*c);
            }
        }
        Ok(h)
    }

    /// Eigendecomposition of `H(mu)` shared by the state and the partition
    /// function, with the max weight factored out for stability.
    fn spectral_data(&self, mu: &[f64]) -> Result<SpectralData, GibbsError> {
        let h = self.hamiltonian(mu)?;
        let (h_vals, vecs) = herm_eig(&h)?;
        let a: Vec<f64> = h_vals.iter().map(|hv| -self.beta * hv).collect();
        let amax = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = a.iter().map(|ai| (ai - amax).exp()).collect();
        let zshift: f64 = weights.iter().sum();
        Ok(SpectralData { a, amax, weights, zshift, vecs })
    }

    /// `log Z(mu) = log tr exp(-beta H(mu))`, computed stably.
    pub fn log_partition(&self, mu: &[f64]) -> Result<f64, GibbsError> {
        let sd = self.spectral_data(mu)?;
        Ok(sd.amax + sd.zshift.ln())
    }

    pub fn gibbs_state(&self, mu: &[f64]) -> Result<DensityOperator, GibbsError> {
        let sd = self.spectral_data(mu)?;
        Ok(DensityOperator::from_trusted(sd.state()))
    }

    /// Expectations `e_i(mu) = tr[sigma(mu) E_i]`.
    pub fn expectations(&self, mu: &[f64]) -> Result<ExpectationVector, GibbsError> {
        let rho = self.gibbs_state(mu)?;
        Ok(self.expectations_of(rho.matrix()))
    }

    /// Expectations of the basis elements in an arbitrary state.
    pub fn expectations_of(&self, rho: &CMat) -> ExpectationVector {
        ExpectationVector(
            self.embedded
                .iter()
                .map(|e| (rho * e).trace().re)
                .collect(),
        )
    }

    /// Dual objective `f(mu) = log Z(mu) + beta <mu, e_target>`.
    pub fn dual_objective(&self, mu: &[f64], e_target: &[f64]) -> Result<f64, GibbsError> {
        self.check_len(e_target)?;
        let lz = self.log_partition(mu)?;
        let dot: f64 = mu.iter().zip(e_target).map(|(a, b)| a * b).sum();
        Ok(lz + self.beta * dot)
    }

    /// Dual gradient `beta * (e_target - e(mu))`.
    pub fn dual_gradient(&self, mu: &[f64], e_target: &[f64]) -> Result<Vec<f64>, GibbsError> {
        self.check_len(e_target)?;
        let e = self.expectations(mu)?;
        Ok(e_target
            .iter()
            .zip(e.iter())
            .map(|(t, c)| self.beta * (t - c))
            .collect())
    }

    /// Dual Hessian `grad^2 log Z` at `mu`.
    pub fn dual_hessian(
        &self,
        mu: &[f64],
        backend: HessianBackend,
    ) -> Result<DMatrix<f64>, GibbsError> {
        match backend {
            HessianBackend::Spectral => self.hessian_spectral(mu),
            HessianBackend::Commuting => self.hessian_commuting(mu),
            HessianBackend::FiniteDiff { step } => self.hessian_fd(mu, step),
        }
    }

    fn hessian_spectral(&self, mu: &[f64]) -> Result<DMatrix<f64>, GibbsError> {
        let sd = self.spectral_data(mu)?;
        let dim = sd.a.len();
        let m = self.m();
        let beta = self.beta;
        let vt = sd.vecs.adjoint();
        let rotated: Vec<CMat> = self.embedded.iter().map(|e| &vt * e * &sd.vecs).collect();
        let means: Vec<f64> = rotated
            .iter()
            .map(|r| (0..dim).map(|k| r[(k, k)].re * sd.weights[k]).sum::<f64>() / sd.zshift)
            .collect();
        // Divided differences of exp at the shifted log-weights, normalized by Z.
        let mut phi = vec![0.0f64; dim * dim];
        for k in 0..dim {
            for l in 0..dim {
                let delta = sd.a[l] - sd.a[k];
                let dd = if delta == 0.0 {
                    sd.weights[k]
                } else if delta > 0.0 {
                    sd.weights[l] * (-(-delta).exp_m1()) / delta
                } else {
                    sd.weights[k] * delta.exp_m1() / delta
                };
                phi[k * dim + l] = dd / sd.zshift;
            }
        }
        let mut hess = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let mut acc = 0.0;
                for k in 0..dim {
                    for l in 0..dim {
                        acc += (rotated[j][(k, l)] * rotated[i][(l, k)]).re * phi[k * dim + l];
                    }
                }
                let v = beta * beta * (acc - means[i] * means[j]);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        Ok(hess)
    }

    fn hessian_commuting(&self, mu: &[f64]) -> Result<DMatrix<f64>, GibbsError> {
        if !self.commuting {
            return Err(GibbsError::NotCommuting);
        }
        let rho = self.gibbs_state(mu)?;
        let m = self.m();
        let e = self.expectations_of(rho.matrix());
        let beta2 = self.beta * self.beta;
        let mut hess = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let cov = (rho.matrix() * &self.embedded[i] * &self.embedded[j]).trace().re
                    - e[i] * e[j];
                let v = beta2 * cov;
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        Ok(hess)
    }

    fn hessian_fd(&self, mu: &[f64], step: f64) -> Result<DMatrix<f64>, GibbsError> {
        self.check_len(mu)?;
        let m = self.m();
        let zero = vec![0.0; m];
        let mut hess = DMatrix::<f64>::zeros(m, m);
        for j in 0..m {
            let mut up = mu.to_vec();
            up[j] += step;
            let mut dn = mu.to_vec();
            dn[j] -= step;
            let gu = self.dual_gradient(&up, &zero)?;
            let gd = self.dual_gradient(&dn, &zero)?;
            for i in 0..m {
                hess[(i, j)] = (gu[i] - gd[i]) / (2.0 * step);
            }
        }
        // symmetrize away the O(step^2) asymmetry
        let sym = (&hess + hess.transpose()).scale(0.5);
        Ok(sym)
    }
}

struct SpectralData {
    a: Vec<f64>,
    amax: f64,
    weights: Vec<f64>,
    zshift: f64,
    vecs: CMat,
}

impl SpectralData {
    fn state(&self) -> CMat {
        let dim = self.a.len();
        let mut scaled = self.vecs.clone();
        for k in 0..dim {
            let p = num_complex::Complex64::new(self.weights[k] / self.zshift, 0.0);
            let mut col = scaled.column_mut(k);
            for e in col.iter_mut() {
                *e *= p;
            }
        }
        &scaled * self.vecs.adjoint()
    }
}

/// Umegaki relative entropy `D(rho || sigma) = tr[rho (log rho - log sigma)]`
/// in nats. `sigma` must be full rank; eigenvalues of `rho` below
/// [`RELENT_RHO_FLOOR`] are clamped out of the entropy term.
pub fn relative_entropy(rho: &CMat, sigma: &CMat) -> Result<f64, GibbsError> {
    let (rvals, _) = herm_eig(rho)?;
    let tr: f64 = rvals.iter().sum();
    if (tr - 1.0).abs() > 1e-8 {
        return Err(GibbsError::BadState(format!("trace {tr:.10} != 1")));
    }
    if rvals.first().copied().unwrap_or(0.0) < operators::EIGENVALUE_FLOOR {
        return Err(GibbsError::BadState(format!(
            "negative eigenvalue {:.3e}",
            rvals[0]
        )));
    }
    let (svals, svecs) = herm_eig(sigma)?;
    let smin = svals.first().copied().unwrap_or(0.0);
    if smin <= FULL_RANK_MIN_EIG {
        return Err(GibbsError::SingularState { eig: smin });
    }
    let entropy: f64 = rvals
        .iter()
        .filter(|&&p| p > RELENT_RHO_FLOOR)
        .map(|&p| p * p.ln())
        .sum();
    let mut log_sigma = svecs.clone();
    for (k, &sv) in svals.iter().enumerate() {
        let lv = num_complex::Complex64::new(sv.ln(), 0.0);
        let mut col = log_sigma.column_mut(k);
        for e in col.iter_mut() {
            *e *= lv;
        }
    }
    let log_sigma = &log_sigma * svecs.adjoint();
    let cross = (rho * log_sigma).trace().re;
    Ok(entropy - cross)
}

/// Both relative entropies between two members of the family and the linear
/// pairing they must equal.
#[derive(Clone, Debug, Serialize)]
pub struct SymmetricDivergence {
    /// `D(sigma(mu) || sigma(lambda))`
    pub forward: f64,
    /// `D(sigma(lambda) || sigma(mu))`
    pub reverse: f64,
    pub sum: f64,
    /// `-beta * <lambda - mu, e(lambda) - e(mu)>`
    pub pairing: f64,
    /// `|sum - pairing|`
    pub residual: f64,
}

pub fn symmetric_divergence(
    model: &GibbsModel,
    lambda: &[f64],
    mu: &[f64],
) -> Result<SymmetricDivergence, GibbsError> {
    let s_lambda = model.gibbs_state(lambda)?;
    let s_mu = model.gibbs_state(mu)?;
    let forward = relative_entropy(s_mu.matrix(), s_lambda.matrix())?;
    let reverse = relative_entropy(s_lambda.matrix(), s_mu.matrix())?;
    let e_lambda = model.expectations_of(s_lambda.matrix());
    let e_mu = model.expectations_of(s_mu.matrix());
    let pairing: f64 = -model.beta()
        * lambda
            .iter()
            .zip(mu.iter())
            .zip(e_lambda.iter().zip(e_mu.iter()))
            .map(|((l, m), (el, em))| (l - m) * (el - em))
            .sum::<f64>();
    let sum = forward + reverse;
    Ok(SymmetricDivergence { forward, reverse, sum, pairing, residual: (sum - pairing).abs() })
}

// ---------------------------------------------------------------------------
// Model file format
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SitesSpec {
    pub n: usize,
    pub d: usize,
}

/// Basis element in a model file: either a Pauli string (qubits) or an
/// explicit complex matrix over a listed support, entries as `[re, im]`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum BasisElementSpec {
    Pauli(String),
    Explicit {
        support: Vec<usize>,
        matrix: Vec<Vec<[f64; 2]>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

/// On-disk model description (`.json` or `.toml`).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelFile {
    pub beta: f64,
    pub sites: SitesSpec,
    pub basis: Vec<BasisElementSpec>,
    pub lambda: Vec<f64>,
}

impl ModelFile {
    pub fn to_model(&self) -> Result<(GibbsModel, ParameterVector), GibbsError> {
        let sys = SiteSystem::new(self.sites.n, self.sites.d)?;
        let mut ops = Vec::with_capacity(self.basis.len());
        for spec in &self.basis {
            match spec {
                BasisElementSpec::Pauli(s) => {
                    if self.sites.d != 2 {
                        return Err(GibbsError::Operator(OperatorError::NotQubits {
                            d: self.sites.d,
                        }));
                    }
                    let ps = PauliString::parse(s)?;
                    if ps.max_site() > self.sites.n {
                        return Err(GibbsError::Operator(OperatorError::BadSupport {
                            support: ps.support(),
                            n: self.sites.n,
                        }));
                    }
                    ops.push(ps.to_local_operator());
                }
                BasisElementSpec::Explicit { support, matrix, label } => {
                    let rows = matrix.len();
                    let mut m = CMat::zeros(rows, rows);
                    for (i, row) in matrix.iter().enumerate() {
                        if row.len() != rows {
                            return Err(GibbsError::File(format!(
                                "matrix row {i} has {} entries, expected {rows}",
                                row.len()
                            )));
                        }
                        for (j, &[re, im]) in row.iter().enumerate() {
                            m[(i, j)] = num_complex::Complex64::new(re, im);
                        }
                    }
                    ops.push(LocalOperator::hermitian(support.clone(), m, label.clone())?);
                }
            }
        }
        let model = GibbsModel::new(sys, self.beta, ops)?;
        if self.lambda.len() != model.m() {
            return Err(GibbsError::BadLength {
                got: self.lambda.len(),
                expected: model.m(),
            });
        }
        let lambda = ParameterVector::model_params(self.lambda.clone())?;
        Ok((model, lambda))
    }

    pub fn from_model(model: &GibbsModel, lambda: &[f64]) -> ModelFile {
        let basis = model
            .basis()
            .iter()
            .map(|op| {
                if let Some(label) = op.label() {
                    if let Ok(ps) = PauliString::parse(label) {
                        if ps.support() == op.support()
                            && operators::frobenius_norm(&(ps.local_matrix() - op.matrix()))
                                < 1e-12
                        {
                            return BasisElementSpec::Pauli(label.to_owned());
                        }
                    }
                }
                let m = op.matrix();
                let matrix = (0..m.nrows())
                    .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
                    .collect();
                BasisElementSpec::Explicit {
                    support: op.support().to_vec(),
                    matrix,
                    label: op.label().map(str::to_owned),
                }
            })
            .collect();
        ModelFile {
            beta: model.beta(),
            sites: SitesSpec { n: model.sys().n(), d: model.sys().d() },
            basis,
            lambda: lambda.to_vec(),
        }
    }

    pub fn load(path: &Path) -> Result<ModelFile, GibbsError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GibbsError::File(format!("{}: {e}", path.display())))?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        if is_toml {
            toml::from_str(&text).map_err(|e| GibbsError::File(format!("{e}")))
        } else {
            serde_json::from_str(&text).map_err(|e| GibbsError::File(format!("{e}")))
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), GibbsError> {
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let text = if is_toml {
            toml::to_string(self).map_err(|e| GibbsError::File(format!("{e}")))?
        } else {
            serde_json::to_string_pretty(self).map_err(|e| GibbsError::File(format!("{e}")))?
        };
        std::fs::write(path, text)
            .map_err(|e| GibbsError::File(format!("{}: {e}", path.display())))
    }
}
