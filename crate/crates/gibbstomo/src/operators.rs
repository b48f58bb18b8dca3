//! Operator primitives on finite tensor-product systems.
//!
//! Sites are 1-indexed; site 1 is the most significant tensor factor, so for
//! qubits the global basis index of `|b_1 b_2 ... b_n>` is the usual binary
//! string read left to right. All matrices are dense `DMatrix<Complex64>`;
//! the total dimension `d^n` is capped (default 4096) at system construction.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use std::fmt;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Default cap on the total Hilbert-space dimension `d^n`.
pub const DEFAULT_DIM_CAP: usize = 4096;
/// Relative Frobenius tolerance for accepting a matrix as Hermitian.
pub const HERMITICITY_TOL: f64 = 1e-12;
/// Absolute tolerance on `tr(rho) = 1` for density operators.
pub const TRACE_TOL: f64 = 1e-10;
/// Density-operator eigenvalues may undershoot zero by at most this much.
pub const EIGENVALUE_FLOOR: f64 = -1e-10;

#[derive(Debug, thiserror::Error)]
pub enum OperatorError {
    #[error("total dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },
    #[error("invalid site system: n = {n}, d = {d}")]
    InvalidSystem { n: usize, d: usize },
    #[error("support must be strictly increasing 1-indexed sites within 1..={n}; got {support:?}")]
    BadSupport { support: Vec<usize>, n: usize },
    #[error("matrix is {rows}x{cols}, expected square of dimension {expected}")]
    BadDimension { rows: usize, cols: usize, expected: usize },
    #[error("matrix is not Hermitian within tolerance (relative deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },
    #[error("trace is {trace:.12}, expected 1 within {TRACE_TOL:e}")]
    BadTrace { trace: f64 },
    #[error("matrix has eigenvalue {eig:.3e} below the density-operator floor")]
    NegativeEigenvalue { eig: f64 },
    #[error("matrix is singular beyond tolerance (min eigenvalue {eig:.3e})")]
    Singular { eig: f64 },
    #[error("cannot parse Pauli string {input:?}: {reason}")]
    PauliParse { input: String, reason: String },
    #[error("Pauli strings require qubit systems (d = 2), got d = {d}")]
    NotQubits { d: usize },
}

/// A register of `n` identical `d`-dimensional sites.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SiteSystem {
    n: usize,
    d: usize,
    dim: usize,
}

impl SiteSystem {
    pub fn new(n: usize, d: usize) -> Result<Self, OperatorError> {
        Self::with_cap(n, d, DEFAULT_DIM_CAP)
    }

    pub fn with_cap(n: usize, d: usize, cap: usize) -> Result<Self, OperatorError> {
        if n == 0 || d < 2 {
            return Err(OperatorError::InvalidSystem { n, d });
        }
        let mut dim: usize = 1;
        for _ in 0..n {
            dim = dim
                .checked_mul(d)
                .ok_or(OperatorError::DimensionCap { dim: usize::MAX, cap })?;
            if dim > cap {
                return Err(OperatorError::DimensionCap { dim, cap });
            }
        }
        Ok(SiteSystem { n, d, dim })
    }

    pub fn qubits(n: usize) -> Result<Self, OperatorError> {
        Self::new(n, 2)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Total Hilbert-space dimension `d^n`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Stride of site `j` (1-indexed) in the global index.
    fn stride(&self, j: usize) -> usize {
        self.d.pow((self.n - j) as u32)
    }
}

fn adjoint_deviation(m: &CMat) -> f64 {
    let diff = m - m.adjoint();
    let scale = frobenius_norm(m).max(1.0);
    frobenius_norm(&diff) / scale
}

/// Accept `m` as Hermitian within [`HERMITICITY_TOL`] and return `(m + m^dag)/2`.
pub fn symmetrize_hermitian(m: &CMat, tol: f64) -> Result<CMat, OperatorError> {
    let deviation = adjoint_deviation(m);
    if deviation > tol {
        return Err(OperatorError::NotHermitian { deviation });
    }
    Ok((m + m.adjoint()).scale(0.5))
}

/// An operator supported on an explicit subset of sites.
///
/// `matrix` acts on the listed sites in order; `support` must be strictly
/// increasing. The matrix is stored as given (no Hermiticity requirement);
/// use [`LocalOperator::hermitian`] for inputs that must be Hermitian.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalOperator {
    support: Vec<usize>,
    matrix: CMat,
    label: Option<String>,
}

impl LocalOperator {
    pub fn new(
        support: Vec<usize>,
        matrix: CMat,
        label: Option<String>,
    ) -> Result<Self, OperatorError> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(OperatorError::BadDimension {
                rows: matrix.nrows(),
                cols: matrix.ncols(),
                expected: matrix.nrows().max(1),
            });
        }
        if !support.windows(2).all(|w| w[0] < w[1]) || support.first().is_some_and(|&s| s == 0) {
            return Err(OperatorError::BadSupport { support, n: 0 });
        }
        Ok(LocalOperator { support, matrix, label })
    }

    /// Like [`LocalOperator::new`] but rejects non-Hermitian matrices and
    /// symmetrizes the accepted ones.
    pub fn hermitian(
        support: Vec<usize>,
        matrix: CMat,
        label: Option<String>,
    ) -> Result<Self, OperatorError> {
        let matrix = symmetrize_hermitian(&matrix, HERMITICITY_TOL)?;
        Self::new(support, matrix, label)
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn weight(&self) -> usize {
        self.support.len()
    }
}

/// Embed a local matrix on `support` into the full `d^n`-dimensional space,
/// acting as identity elsewhere.
pub fn embed_matrix(
    sys: SiteSystem,
    support: &[usize],
    local: &CMat,
) -> Result<CMat, OperatorError> {
    let n = sys.n();
    let d = sys.d();
    if !support.windows(2).all(|w| w[0] < w[1])
        || support.iter().any(|&s| s == 0 || s > n)
    {
        return Err(OperatorError::BadSupport { support: support.to_vec(), n });
    }
    let k = support.len();
    let ldim = d.pow(k as u32);
    if local.nrows() != ldim || local.ncols() != ldim {
        return Err(OperatorError::BadDimension {
            rows: local.nrows(),
            cols: local.ncols(),
            expected: ldim,
        });
    }
    let rest: Vec<usize> = (1..=n).filter(|j| !support.contains(j)).collect();
    let rdim = d.pow(rest.len() as u32);

    // Global offsets for every local index and every rest index.
    let offsets = |sites: &[usize], count: usize| -> Vec<usize> {
        let mut out = vec![0usize; count];
        for (idx, off) in out.iter_mut().enumerate() {
            let mut rem = idx;
            for (t, &site) in sites.iter().enumerate().rev() {
                let digit = rem % d;
                rem /= d;
                let _ = t;
                *off += digit * sys.stride(site);
            }
        }
        out
    };
    let loc_off = offsets(support, ldim);
    let rest_off = offsets(&rest, rdim);

    let mut out = CMat::zeros(sys.dim(), sys.dim());
    for a in 0..ldim {
        for b in 0..ldim {
            let v = local[(a, b)];
            if v.norm_sqr() == 0.0 {
                continue;
            }
            for &r in &rest_off {
                out[(r + loc_off[a], r + loc_off[b])] = v;
            }
        }
    }
    Ok(out)
}

/// Embed a [`LocalOperator`] into the full space.
pub fn embed_local(sys: SiteSystem, op: &LocalOperator) -> Result<CMat, OperatorError> {
    embed_matrix(sys, op.support(), op.matrix())
}

/// Partial trace over `traced_sites` (1-indexed, need not be sorted).
/// Returns the reduced operator on the remaining sites in ascending order.
pub fn partial_trace(
    sys: SiteSystem,
    x: &CMat,
    traced_sites: &[usize],
) -> Result<CMat, OperatorError> {
    let n = sys.n();
    let d = sys.d();
    if x.nrows() != sys.dim() || x.ncols() != sys.dim() {
        return Err(OperatorError::BadDimension {
            rows: x.nrows(),
            cols: x.ncols(),
            expected: sys.dim(),
        });
    }
    let mut traced: Vec<usize> = traced_sites.to_vec();
    traced.sort_unstable();
    traced.dedup();
    if traced.len() != traced_sites.len() || traced.iter().any(|&s| s == 0 || s > n) {
        return Err(OperatorError::BadSupport { support: traced_sites.to_vec(), n });
    }
    let keep: Vec<usize> = (1..=n).filter(|j| !traced.contains(j)).collect();
    let kdim = d.pow(keep.len() as u32);
    let tdim = d.pow(traced.len() as u32);

    let offsets = |sites: &[usize], count: usize| -> Vec<usize> {
        let mut out = vec![0usize; count];
        for (idx, off) in out.iter_mut().enumerate() {
            let mut rem = idx;
            for &site in sites.iter().rev() {
                let digit = rem % d;
                rem /= d;
                *off += digit * sys.stride(site);
            }
        }
        out
    };
    let keep_off = offsets(&keep, kdim);
    let tr_off = offsets(&traced, tdim);

    let mut out = CMat::zeros(kdim, kdim);
    for a in 0..kdim {
        for b in 0..kdim {
            let mut acc = Complex64::new(0.0, 0.0);
            for &t in &tr_off {
                acc += x[(keep_off[a] + t, keep_off[b] + t)];
            }
            out[(a, b)] = acc;
        }
    }
    Ok(out)
}

/// Hermitian eigendecomposition with eigenvalues sorted ascending.
pub fn herm_eig(x: &CMat) -> Result<(Vec<f64>, CMat), OperatorError> {
    let sym = symmetrize_hermitian(x, HERMITICITY_TOL.max(1e-10))?;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals: Vec<f64> = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let dim = x.nrows();
    let mut vecs = CMat::zeros(dim, dim);
    for (col, &i) in idx.iter().enumerate() {
        vecs.set_column(col, &eig.eigenvectors.column(i));
    }
    Ok((vals, vecs))
}

/// Apply a scalar function to a Hermitian matrix through its spectrum.
pub fn herm_fn(x: &CMat, f: impl Fn(f64) -> f64) -> Result<CMat, OperatorError> {
    let (vals, vecs) = herm_eig(x)?;
    let mut scaled = vecs.clone();
    for (col, &v) in vals.iter().enumerate() {
        let fv = Complex64::new(f(v), 0.0);
        let mut c = scaled.column_mut(col);
        for e in c.iter_mut() {
            *e *= fv;
        }
    }
    Ok(&scaled * vecs.adjoint())
}

pub fn frobenius_norm(x: &CMat) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Operator (spectral) norm. Uses `max |eigenvalue|` when the matrix is
/// Hermitian within tolerance, otherwise the largest singular value.
pub fn operator_norm(x: &CMat) -> f64 {
    if adjoint_deviation(x) <= 1e-10 {
        let (vals, _) = herm_eig(x).expect("hermitian within tolerance");
        vals.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    } else {
        let gram = x.adjoint() * x;
        let (vals, _) = herm_eig(&gram).expect("gram matrix is hermitian");
        vals.last().copied().unwrap_or(0.0).max(0.0).sqrt()
    }
}

/// Trace norm (sum of singular values).
pub fn trace_norm(x: &CMat) -> f64 {
    if adjoint_deviation(x) <= 1e-10 {
        let (vals, _) = herm_eig(x).expect("hermitian within tolerance");
        vals.iter().map(|v| v.abs()).sum()
    } else {
        let gram = x.adjoint() * x;
        let (vals, _) = herm_eig(&gram).expect("gram matrix is hermitian");
        vals.iter().map(|v| v.max(0.0).sqrt()).sum()
    }
}

/// Trace distance `|| a - b ||_tr` (no 1/2 factor).
pub fn trace_distance(a: &CMat, b: &CMat) -> f64 {
    trace_norm(&(a - b))
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

/// KMS inner product `<X, Y>_sigma = tr[sigma^(1/2) X^dag sigma^(1/2) Y]`.
pub fn weighted_inner(x: &CMat, y: &CMat, sigma: &CMat) -> Result<Complex64, OperatorError> {
    let (vals, _) = herm_eig(sigma)?;
    if vals.first().copied().unwrap_or(0.0) <= 1e-12 {
        return Err(OperatorError::Singular { eig: vals.first().copied().unwrap_or(0.0) });
    }
    let half = herm_fn(sigma, |v| v.max(0.0).sqrt())?;
    Ok((&half * x.adjoint() * &half * y).trace())
}

/// Weighted 2-norm `|| sigma^(1/4) X sigma^(1/4) ||_fro`; the norm of the KMS
/// inner product above.
pub fn weighted_two_norm(x: &CMat, sigma: &CMat) -> Result<f64, OperatorError> {
    let (vals, _) = herm_eig(sigma)?;
    if vals.first().copied().unwrap_or(0.0) <= 1e-12 {
        return Err(OperatorError::Singular { eig: vals.first().copied().unwrap_or(0.0) });
    }
    let quarter = herm_fn(sigma, |v| v.max(0.0).powf(0.25))?;
    Ok(frobenius_norm(&(&quarter * x * &quarter)))
}

/// A density operator: Hermitian, unit trace, spectrum above the floor.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator {
    matrix: CMat,
}

impl DensityOperator {
    pub fn new(m: CMat) -> Result<Self, OperatorError> {
        let sym = symmetrize_hermitian(&m, HERMITICITY_TOL.max(1e-10))?;
        let tr = sym.trace().re;
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(OperatorError::BadTrace { trace: tr });
        }
        let (vals, _) = herm_eig(&sym)?;
        if let Some(&low) = vals.first() {
            if low < EIGENVALUE_FLOOR {
                return Err(OperatorError::NegativeEigenvalue { eig: low });
            }
        }
        Ok(DensityOperator { matrix: sym })
    }

    /// Wrap a matrix known to be a valid density operator (internal producers).
    pub fn from_trusted(matrix: CMat) -> Self {
        DensityOperator { matrix }
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        herm_eig(&self.matrix).expect("density operator is hermitian").0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn matrix(self) -> CMat {
        let z = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        match self {
            Pauli::X => CMat::from_row_slice(2, 2, &[z, one, one, z]),
            Pauli::Y => CMat::from_row_slice(2, 2, &[z, -i, i, z]),
            Pauli::Z => CMat::from_row_slice(2, 2, &[one, z, z, -one]),
        }
    }

    pub fn letter(self) -> char {
        match self {
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// A product of single-site Pauli factors, e.g. `"Z1*Z2"` or `"X3"`.
/// `"I"` denotes the identity (empty factor list). Sites are 1-indexed,
/// letters case-insensitive, duplicate sites rejected.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PauliString {
    factors: Vec<(usize, Pauli)>,
}

impl PauliString {
    pub fn identity() -> Self {
        PauliString { factors: Vec::new() }
    }

    pub fn new(mut factors: Vec<(usize, Pauli)>) -> Result<Self, OperatorError> {
        factors.sort_by_key(|&(site, _)| site);
        let dup = factors.windows(2).any(|w| w[0].0 == w[1].0);
        if dup || factors.iter().any(|&(site, _)| site == 0) {
            return Err(OperatorError::PauliParse {
                input: format!("{factors:?}"),
                reason: "sites must be distinct and >= 1".into(),
            });
        }
        Ok(PauliString { factors })
    }

    pub fn parse(input: &str) -> Result<Self, OperatorError> {
        let trimmed = input.trim();
        if trimmed.is_empty() {
            return Err(OperatorError::PauliParse {
                input: input.into(),
                reason: "empty string".into(),
            });
        }
        if trimmed.eq_ignore_ascii_case("I") {
            return Ok(Self::identity());
        }
        let mut factors = Vec::new();
        for part in trimmed.split('*') {
            let part = part.trim();
            let mut chars = part.chars();
            let letter = chars.next().ok_or_else(|| OperatorError::PauliParse {
                input: input.into(),
                reason: "empty factor".into(),
            })?;
            let pauli = match letter.to_ascii_uppercase() {
                'X' => Pauli::X,
                'Y' => Pauli::Y,
                'Z' => Pauli::Z,
                other => {
                    return Err(OperatorError::PauliParse {
                        input: input.into(),
                        reason: format!("unknown Pauli letter {other:?}"),
                    })
                }
            };
            let digits: String = chars.collect();
            let site: usize = digits.trim().parse().map_err(|_| OperatorError::PauliParse {
                input: input.into(),
                reason: format!("bad site index {digits:?}"),
            })?;
            if site == 0 {
                return Err(OperatorError::PauliParse {
                    input: input.into(),
                    reason: "sites are 1-indexed".into(),
                });
            }
            factors.push((site, pauli));
        }
        Self::new(factors)
    }

    pub fn factors(&self) -> &[(usize, Pauli)] {
        &self.factors
    }

    pub fn support(&self) -> Vec<usize> {
        self.factors.iter().map(|&(s, _)| s).collect()
    }

    pub fn weight(&self) -> usize {
        self.factors.len()
    }

    pub fn max_site(&self) -> usize {
        self.factors.last().map_or(0, |&(s, _)| s)
    }

    /// True when every factor is `Z` (diagonal in the computational basis).
    pub fn is_diagonal(&self) -> bool {
        self.factors.iter().all(|&(_, p)| p == Pauli::Z)
    }

    /// Dense matrix on the support sites (dimension `2^weight`).
    pub fn local_matrix(&self) -> CMat {
        let mut out = CMat::identity(1, 1);
        for &(_, p) in &self.factors {
            out = out.kronecker(&p.matrix());
        }
        out
    }

    pub fn to_local_operator(&self) -> LocalOperator {
        let label = Some(self.to_string());
        LocalOperator::new(self.support(), self.local_matrix(), label)
            .expect("pauli support is sorted and distinct")
    }

    /// Value of the diagonal string on a spin configuration (`+1/-1` per site).
    /// Only meaningful when [`Self::is_diagonal`] holds.
    pub fn eval_diagonal(&self, spins: &[i8]) -> f64 {
        self.factors
            .iter()
            .map(|&(s, _)| f64::from(spins[s - 1]))
            .product()
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.factors.is_empty() {
            return write!(f, "I");
        }
        let parts: Vec<String> = self
            .factors
            .iter()
            .map(|&(s, p)| format!("{}{}", p.letter(), s))
            .collect();
        write!(f, "{}", parts.join("*"))
    }
}

/// Gaussian Hermitian matrix, `(A + A^dag)/2` with standard normal entries.
pub fn random_hermitian<R: Rng>(dim: usize, rng: &mut R) -> CMat {
    let a = CMat::from_fn(dim, dim, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    (&a + a.adjoint()).scale(0.5)
}

/// Gaussian Hermitian matrix rescaled to unit operator norm.
pub fn random_hermitian_unit<R: Rng>(dim: usize, rng: &mut R) -> CMat {
    let h = random_hermitian(dim, rng);
    let norm = operator_norm(&h);
    if norm > 0.0 {
        h.scale(1.0 / norm)
    } else {
        h
    }
}

/// Hilbert-Schmidt random density matrix `G G^dag / tr`.
pub fn random_density<R: Rng>(dim: usize, rng: &mut R) -> CMat {
    let g = CMat::from_fn(dim, dim, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let gg = &g * g.adjoint();
    let tr = gg.trace().re;
    gg.scale(1.0 / tr)
}

/// Haar-random unitary via QR of a complex Ginibre matrix with the standard
/// phase fix on the diagonal of R.
pub fn random_unitary<R: Rng>(dim: usize, rng: &mut R) -> CMat {
    let g = CMat::from_fn(dim, dim, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    let mut out = q;
    for j in 0..dim {
        let rjj = r[(j, j)];
        let phase = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { Complex64::new(1.0, 0.0) };
        let mut col = out.column_mut(j);
        for e in col.iter_mut() {
            *e *= phase;
        }
    }
    out
}
