//! Petz recovery maps, conditional expectations and Hessian spectrum bounds
//! for commuting models.
//!
//! Everything here is measured in the KMS-weighted two-norm
//! `||X||_{2,sigma} = ||sigma^{1/4} X sigma^{1/4}||_F`, in which a single-site
//! Petz map is a self-adjoint contraction and its fixed-point limit is the
//! orthogonal projection onto the conditional-expectation algebra.

use crate::gibbs::{GibbsError, GibbsModel, HessianBackend};
use crate::operators::{
    embed_local, embed_matrix, herm_eig, operator_norm, partial_trace, CMat, DensityOperator,
    LocalOperator, OperatorError, SiteSystem,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Iteration cap for the Petz fixed-point limit.
pub const PETZ_ITER_CAP: usize = 10_000;
/// Default fixed-point tolerance in the sigma-weighted norm.
pub const PETZ_FIXED_POINT_TOL: f64 = 1e-10;
/// Covariances below this are treated as zero during decay fitting.
pub const COVARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum CommutingError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Gibbs(#[from] GibbsError),
    #[error("bad graph: {0}")]
    BadGraph(String),
    #[error("state is singular (min eigenvalue {eig:.3e})")]
    Singular { eig: f64 },
    #[error("model is not commuting")]
    NotCommuting,
    #[error("H_x is proportional to the identity, the contraction ratio is undefined")]
    ZeroDenominator,
    #[error("Petz iteration did not converge in {iterations} steps (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("basis elements {i} and {j} are not trace-orthogonal (overlap {overlap:.3e})")]
    NotOrthogonal { i: usize, j: usize, overlap: f64 },
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("file error: {0}")]
    File(String),
}

// ---------------------------------------------------------------------------
// Interaction hypergraph
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GraphFile {
    vertices: usize,
    hyperedges: Vec<Vec<usize>>,
}

/// Vertices `1..=n` with hyperedges; the metric is the shortest-path distance
/// in the vertex graph whose edges join vertices sharing a hyperedge.
/// Distances between vertex sets are minimal pairwise distances.
#[derive(Clone, Debug)]
pub struct InteractionHypergraph {
    vertices: usize,
    hyperedges: Vec<Vec<usize>>,
    dist: Vec<Vec<usize>>,
    r0: usize,
    diameter: usize,
}

impl InteractionHypergraph {
    pub fn new(vertices: usize, hyperedges: Vec<Vec<usize>>) -> Result<Self, CommutingError> {
        if vertices == 0 {
            return Err(CommutingError::BadGraph("no vertices".into()));
        }
        let mut edges = Vec::with_capacity(hyperedges.len());
        for (k, edge) in hyperedges.into_iter().enumerate() {
            if edge.is_empty() {
                return Err(CommutingError::BadGraph(format!("hyperedge {k} is empty")));
            }
            if edge.iter().any(|&v| v == 0 || v > vertices) {
                return Err(CommutingError::BadGraph(format!(
                    "hyperedge {k} mentions a vertex outside 1..={vertices}"
                )));
            }
            let mut e = edge;
            e.sort_unstable();
            e.dedup();
            edges.push(e);
        }
        // adjacency from shared hyperedges
        let mut adj = vec![Vec::new(); vertices + 1];
        for edge in &edges {
            for (a, &u) in edge.iter().enumerate() {
                for &v in edge.iter().skip(a + 1) {
                    adj[u].push(v);
                    adj[v].push(u);
                }
            }
        }
        for list in adj.iter_mut() {
            list.sort_unstable();
            list.dedup();
        }
        let mut dist = vec![vec![usize::MAX; vertices + 1]; vertices + 1];
        for start in 1..=vertices {
            let row = &mut dist[start];
            row[start] = 0;
            let mut queue = std::collections::VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if row[v] == usize::MAX {
                        row[v] = row[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
        }
        let diameter = (1..=vertices)
            .flat_map(|u| dist[u][1..=vertices].iter().copied())
            .filter(|&d| d != usize::MAX)
            .max()
            .unwrap_or(0);
        // smallest enclosing-ball radius per hyperedge, maximized
        let r0 = edges
            .iter()
            .map(|edge| {
                (1..=vertices)
                    .map(|v| {
                        edge.iter()
                            .map(|&u| dist[v][u])
                            .max()
                            .expect("nonempty edge")
                    })
                    .min()
                    .expect("nonempty vertex set")
            })
            .max()
            .unwrap_or(0);
        Ok(InteractionHypergraph { vertices, hyperedges: edges, dist, r0, diameter })
    }

    /// Sites plus nearest-neighbor bonds of a spin chain.
    pub fn chain(n: usize, periodic: bool) -> Result<Self, CommutingError> {
        let mut edges: Vec<Vec<usize>> = (1..=n).map(|i| vec![i]).collect();
        for i in 1..n {
            edges.push(vec![i, i + 1]);
        }
        if periodic && n > 2 {
            edges.push(vec![1, n]);
        }
        InteractionHypergraph::new(n, edges)
    }

    /// Hyperedges taken from the supports of a model basis.
    pub fn from_supports(vertices: usize, supports: &[Vec<usize>]) -> Result<Self, CommutingError> {
        InteractionHypergraph::new(vertices, supports.to_vec())
    }

    pub fn vertices(&self) -> usize {
        self.vertices
    }

    pub fn hyperedges(&self) -> &[Vec<usize>] {
        &self.hyperedges
    }

    pub fn r0(&self) -> usize {
        self.r0
    }

    pub fn diameter(&self) -> usize {
        self.diameter
    }

    /// `None` when the vertices are disconnected.
    pub fn distance(&self, u: usize, v: usize) -> Option<usize> {
        let d = self.dist[u][v];
        (d != usize::MAX).then_some(d)
    }

    /// Minimal pairwise distance between two vertex sets.
    pub fn set_distance(&self, a: &[usize], b: &[usize]) -> Option<usize> {
        a.iter()
            .flat_map(|&u| b.iter().map(move |&v| self.dist[u][v]))
            .min()
            .filter(|&d| d != usize::MAX)
    }

    pub fn load(path: &Path) -> Result<Self, CommutingError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CommutingError::File(format!("{}: {e}", path.display())))?;
        let raw: GraphFile = serde_json::from_str(&text)
            .map_err(|e| CommutingError::File(format!("{}: {e}", path.display())))?;
        InteractionHypergraph::new(raw.vertices, raw.hyperedges)
    }

    pub fn save(&self, path: &Path) -> Result<(), CommutingError> {
        let raw = GraphFile { vertices: self.vertices, hyperedges: self.hyperedges.clone() };
        let text = serde_json::to_string_pretty(&raw)
            .map_err(|e| CommutingError::File(e.to_string()))?;
        std::fs::write(path, text)
            .map_err(|e| CommutingError::File(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BallSphere {
    pub ball: usize,
    pub sphere: usize,
}

/// `B(r) = max_v |B(v, r)|` and `S(r) = max_v |{u : d(u, v) = r}|`.
pub fn ball_sphere_counts(graph: &InteractionHypergraph, r: usize) -> BallSphere {
    let n = graph.vertices();
    let mut ball = 0;
    let mut sphere = 0;
    for v in 1..=n {
        let mut b = 0;
        let mut s = 0;
        for u in 1..=n {
            if let Some(d) = graph.distance(v, u) {
                if d <= r {
                    b += 1;
                }
                if d == r {
                    s += 1;
                }
            }
        }
        ball = ball.max(b);
        sphere = sphere.max(s);
    }
    BallSphere { ball, sphere }
}

// ---------------------------------------------------------------------------
// KMS-weighted geometry
// ---------------------------------------------------------------------------

/// Cached `sigma^{1/4}` for repeated weighted-norm evaluations.
pub struct KmsSpace {
    quarter: CMat,
}

impl KmsSpace {
    pub fn new(sigma: &CMat) -> Result<Self, CommutingError> {
        let (vals, vecs) = herm_eig(sigma)?;
        let min = vals.first().copied().unwrap_or(0.0);
        if min <= 1e-12 {
            return Err(CommutingError::Singular { eig: min });
        }
        let mut q = vecs.clone();
        for (k, &v) in vals.iter().enumerate() {
            let c = Complex64::new(v.powf(0.25), 0.0);
            for e in q.column_mut(k).iter_mut() {
                *e *= c;
            }
        }
        Ok(KmsSpace { quarter: &q * vecs.adjoint() })
    }

    /// `<X, Y>_sigma = tr[sigma^{1/2} X^dag sigma^{1/2} Y]`.
    pub fn inner(&self, x: &CMat, y: &CMat) -> Complex64 {
        let xa = &self.quarter * x * &self.quarter;
        let ya = &self.quarter * y * &self.quarter;
        (xa.adjoint() * ya).trace()
    }

    pub fn norm(&self, x: &CMat) -> f64 {
        let xa = &self.quarter * x * &self.quarter;
        crate::operators::frobenius_norm(&xa)
    }
}

/// `||X||_{2,sigma}` without caching.
pub fn weighted_two_norm(sigma: &CMat, x: &CMat) -> Result<f64, CommutingError> {
    Ok(KmsSpace::new(sigma)?.norm(x))
}

// ---------------------------------------------------------------------------
// Petz map and conditional expectation
// ---------------------------------------------------------------------------

/// Single-site Petz coarse graining
/// `X -> I_x (x) [ tr_x(sigma)^{-1/2} tr_x(sigma^{1/2} X sigma^{1/2}) tr_x(sigma)^{-1/2} ]`.
pub struct PetzMap {
    sys: SiteSystem,
    site: usize,
    sqrt_sigma: CMat,
    inv_sqrt_marginal: CMat,
    rest: Vec<usize>,
}

impl PetzMap {
    pub fn new(
        sys: SiteSystem,
        sigma: &DensityOperator,
        site: usize,
    ) -> Result<Self, CommutingError> {
        if site == 0 || site > sys.n() {
            return Err(CommutingError::Operator(OperatorError::BadSupport {
                support: vec![site],
                n: sys.n(),
            }));
        }
        let (vals, vecs) = herm_eig(sigma.matrix())?;
        let min = vals.first().copied().unwrap_or(0.0);
        if min <= 1e-12 {
            return Err(CommutingError::Singular { eig: min });
        }
        let half = |powers: &[f64]| {
            let mut m = vecs.clone();
            for (k, &p) in powers.iter().enumerate() {
                let c = Complex64::new(p, 0.0);
                for e in m.column_mut(k).iter_mut() {
                    *e *= c;
                }
            }
            &m * vecs.adjoint()
        };
        let roots: Vec<f64> = vals.iter().map(|v| v.sqrt()).collect();
        let sqrt_sigma = half(&roots);
        let marginal = partial_trace(sys, sigma.matrix(), &[site])?;
        let (mvals, mvecs) = herm_eig(&marginal)?;
        let mmin = mvals.first().copied().unwrap_or(0.0);
        if mmin <= 1e-12 {
            return Err(CommutingError::Singular { eig: mmin });
        }
        let mut inv = mvecs.clone();
        for (k, &v) in mvals.iter().enumerate() {
            let c = Complex64::new(1.0 / v.sqrt(), 0.0);
            for e in inv.column_mut(k).iter_mut() {
                *e *= c;
            }
        }
        let inv_sqrt_marginal = &inv * mvecs.adjoint();
        let rest: Vec<usize> = (1..=sys.n()).filter(|&j| j != site).collect();
        Ok(PetzMap { sys, site, sqrt_sigma, inv_sqrt_marginal, rest })
    }

    pub fn site(&self) -> usize {
        self.site
    }

    pub fn apply(&self, x: &CMat) -> Result<CMat, CommutingError> {
        let mid = &self.sqrt_sigma * x * &self.sqrt_sigma;
        let red = partial_trace(self.sys, &mid, &[self.site])?;
        let sand = &self.inv_sqrt_marginal * red * &self.inv_sqrt_marginal;
        if self.rest.is_empty() {
            let dim = self.sys.dim();
            Ok(CMat::identity(dim, dim).scale(sand[(0, 0)].re))
        } else {
            Ok(embed_matrix(self.sys, &self.rest, &sand)?)
        }
    }
}

fn vec_index(dim: usize, row: usize, col: usize) -> usize {
    col * dim + row
}

fn superop_matrix(map: &PetzMap, dim: usize) -> Result<CMat, CommutingError> {
    let mut p = CMat::zeros(dim * dim, dim * dim);
    for col in 0..dim {
        for row in 0..dim {
            let mut unit = CMat::zeros(dim, dim);
            unit[(row, col)] = Complex64::new(1.0, 0.0);
            let image = map.apply(&unit)?;
            let k = vec_index(dim, row, col);
            for c in 0..dim {
                for r in 0..dim {
                    p[(vec_index(dim, r, c), k)] = image[(r, c)];
                }
            }
        }
    }
    Ok(p)
}

fn unvec_column(m: &CMat, k: usize, dim: usize) -> CMat {
    let mut out = CMat::zeros(dim, dim);
    for c in 0..dim {
        for r in 0..dim {
            out[(r, c)] = m[(vec_index(dim, r, c), k)];
        }
    }
    out
}

/// Fixed-point limit of the single-site Petz map, reached by iterating until
/// successive images of a spanning operator basis differ by at most `tol` in
/// the sigma-weighted norm.
pub struct ConditionalExpectation {
    sys: SiteSystem,
    superop: CMat,
    iterations: usize,
    residual: f64,
}

impl ConditionalExpectation {
    pub fn apply(&self, x: &CMat) -> Result<CMat, CommutingError> {
        let dim = self.sys.dim();
        if x.nrows() != dim || x.ncols() != dim {
            return Err(CommutingError::BadInput(format!(
                "operator is {}x{}, expected {dim}x{dim}",
                x.nrows(),
                x.ncols()
            )));
        }
        let mut v = nalgebra::DVector::<Complex64>::zeros(dim * dim);
        for c in 0..dim {
            for r in 0..dim {
                v[vec_index(dim, r, c)] = x[(r, c)];
            }
        }
        let image = &self.superop * v;
        let mut out = CMat::zeros(dim, dim);
        for c in 0..dim {
            for r in 0..dim {
                out[(r, c)] = image[vec_index(dim, r, c)];
            }
        }
        Ok(out)
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }
}

pub fn conditional_expectation_site(
    sys: SiteSystem,
    sigma: &DensityOperator,
    site: usize,
    tol: f64,
) -> Result<ConditionalExpectation, CommutingError> {
    let map = PetzMap::new(sys, sigma, site)?;
    let kms = KmsSpace::new(sigma.matrix())?;
    let dim = sys.dim();
    let p = superop_matrix(&map, dim)?;
    let mut current = p.clone();
    let mut iterations = 1;
    let mut residual = f64::INFINITY;
    while iterations < PETZ_ITER_CAP {
        let next = &p * &current;
        iterations += 1;
        let diff = &next - &current;
        residual = (0..dim * dim)
            .map(|k| kms.norm(&unvec_column(&diff, k, dim)))
            .fold(0.0f64, f64::max);
        current = next;
        if residual <= tol {
            return Ok(ConditionalExpectation { sys, superop: current, iterations, residual });
        }
    }
    Err(CommutingError::NonConvergence { iterations, residual })
}

// ---------------------------------------------------------------------------
// Contraction coefficient
// ---------------------------------------------------------------------------

/// One-step Petz contraction ratio
/// `||R_x(H_x) - tr[sigma H_x] I||_{2,sigma} / ||H_x - tr[sigma H_x] I||_{2,sigma}`
/// at the given parameters, with `H_x` the sum of `mu`-weighted basis terms
/// touching site `x`.
pub fn contraction_coefficient(
    model: &GibbsModel,
    mu: &[f64],
    x: usize,
) -> Result<f64, CommutingError> {
    if !model.is_commuting() {
        return Err(CommutingError::NotCommuting);
    }
    if mu.len() != model.m() {
        return Err(CommutingError::BadInput(format!(
            "mu has {} entries, model has {}",
            mu.len(),
            model.m()
        )));
    }
    let sys = model.sys();
    let dim = sys.dim();
    let mut hx = CMat::zeros(dim, dim);
    for (i, (op, full)) in model.basis().iter().zip(model.embedded_basis()).enumerate() {
        if op.support().contains(&x) {
            hx += full.scale(mu[i]);
        }
    }
    let tr = hx.trace().re;
    if tr.abs() > 1e-9 * dim as f64 {
        return Err(CommutingError::BadInput(format!(
            "H_x is not traceless (trace {tr:.3e})"
        )));
    }
    let sigma = model.gibbs_state(mu)?;
    let kms = KmsSpace::new(sigma.matrix())?;
    let mean = (sigma.matrix() * &hx).trace().re;
    let centered = &hx - CMat::identity(dim, dim).scale(mean);
    let den = kms.norm(&centered);
    if den < 1e-12 {
        return Err(CommutingError::ZeroDenominator);
    }
    let petz = PetzMap::new(sys, &sigma, x)?;
    let image = petz.apply(&hx)?;
    let num = kms.norm(&(&image - CMat::identity(dim, dim).scale(mean)));
    Ok(num / den)
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractionSearch {
    /// Largest ratio found; a lower bound on the true maximum over the ball.
    pub c_max: f64,
    pub argmax: Vec<f64>,
    pub evaluations: usize,
}

/// Multistart search for `max_mu c(x, beta)` over the unit l-inf ball:
/// a 5-point grid per coordinate up to 3 parameters, random multistart
/// beyond. Points where `H_x` vanishes are skipped.
pub fn contraction_coefficient_max(
    model: &GibbsModel,
    x: usize,
    seed: u64,
) -> Result<ContractionSearch, CommutingError> {
    if !model.is_commuting() {
        return Err(CommutingError::NotCommuting);
    }
    let m = model.m();
    let points: Vec<Vec<f64>> = if m <= 3 {
        let axis = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let mut pts = vec![Vec::new()];
        for _ in 0..m {
            pts = pts
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&a| {
                        let mut q = p.clone();
                        q.push(a);
                        q
                    })
                })
                .collect();
        }
        pts
    } else {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..250)
            .map(|_| (0..m).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect()
    };
    let results: Vec<(f64, Vec<f64>)> = points
        .par_iter()
        .filter_map(|mu| match contraction_coefficient(model, mu, x) {
            Ok(c) => Some((c, mu.clone())),
            Err(_) => None,
        })
        .collect();
    if results.is_empty() {
        return Err(CommutingError::ZeroDenominator);
    }
    let evaluations = results.len();
    let (c_max, argmax) = results
        .into_iter()
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("nonempty");
    Ok(ContractionSearch { c_max, argmax, evaluations })
}

// ---------------------------------------------------------------------------
// Hessian spectrum bounds
// ---------------------------------------------------------------------------

/// `beta^2 e^{-beta (B(2 r0) + 2 B(4 r0))} d^{-B(2 r0)} (1 - c^2)`.
pub fn hessian_lower_bound(
    beta: f64,
    d: usize,
    graph: &InteractionHypergraph,
    c_beta: f64,
) -> Result<f64, CommutingError> {
    if !(beta > 0.0 && beta.is_finite()) || d < 2 {
        return Err(CommutingError::BadInput(format!("beta = {beta}, d = {d}")));
    }
    if !(0.0..1.0).contains(&c_beta) {
        return Err(CommutingError::BadInput(format!(
            "contraction coefficient {c_beta} outside [0, 1)"
        )));
    }
    let r0 = graph.r0();
    let b2 = ball_sphere_counts(graph, 2 * r0).ball as f64;
    let b4 = ball_sphere_counts(graph, 4 * r0).ball as f64;
    Ok(beta * beta
        * (-beta * (b2 + 2.0 * b4)).exp()
        * (d as f64).powf(-b2)
        * (1.0 - c_beta * c_beta))
}

/// Exponential covariance decay `|cov| <= c ||A|| ||B|| e^{-xi d(A,B)}`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DecaySpec {
    pub c: f64,
    pub xi: f64,
}

impl DecaySpec {
    pub fn new(c: f64, xi: f64) -> Result<Self, CommutingError> {
        if !(c > 0.0 && c.is_finite()) || !(xi > 0.0) {
            return Err(CommutingError::BadInput(format!("c = {c}, xi = {xi}")));
        }
        Ok(DecaySpec { c, xi })
    }
}

/// Gershgorin-style upper bound
/// `c beta^2 B(r0) B(2 r0) d^{2 B(r0)} sum_{r=0..diam} e^{-xi r} S(r)`;
/// the series is truncated at the graph diameter. Callers should combine
/// with the always-valid `2 beta^2 m` by taking the minimum.
pub fn hessian_upper_bound_decay(
    decay: &DecaySpec,
    beta: f64,
    d: usize,
    graph: &InteractionHypergraph,
) -> Result<f64, CommutingError> {
    if !(beta > 0.0 && beta.is_finite()) || d < 2 {
        return Err(CommutingError::BadInput(format!("beta = {beta}, d = {d}")));
    }
    let r0 = graph.r0();
    let b0 = ball_sphere_counts(graph, r0).ball as f64;
    let b2 = ball_sphere_counts(graph, 2 * r0).ball as f64;
    let mut series = 0.0;
    for r in 0..=graph.diameter() {
        let sphere = ball_sphere_counts(graph, r).sphere as f64;
        let weight = if r == 0 { 1.0 } else { (-decay.xi * r as f64).exp() };
        series += weight * sphere;
    }
    Ok(decay.c * beta * beta * b0 * b2 * (d as f64).powf(2.0 * b0) * series)
}

// ---------------------------------------------------------------------------
// Correlation fitting
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct CorrelationFit {
    pub decay: DecaySpec,
    /// RMS residual of the log-linear fit.
    pub residual: f64,
    pub points: usize,
}

/// Least-squares fit of `log(|cov(A,B)| / (||A|| ||B||))` against distance.
/// Requires at least three distinct distances; when every covariance is
/// below [`COVARIANCE_FLOOR`] the correlation length is reported as the
/// `xi = inf` sentinel.
pub fn correlation_fit(
    sys: SiteSystem,
    sigma: &CMat,
    pairs: &[(LocalOperator, LocalOperator, f64)],
) -> Result<CorrelationFit, CommutingError> {
    let distinct = {
        let mut ds: Vec<f64> = pairs.iter().map(|p| p.2).collect();
        ds.sort_by(f64::total_cmp);
        ds.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        ds.len()
    };
    if distinct < 3 {
        return Err(CommutingError::BadInput(format!(
            "need at least 3 distinct distances, got {distinct}"
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (a, b, dist) in pairs {
        let fa = embed_local(sys, a)?;
        let fb = embed_local(sys, b)?;
        let ea = (sigma * &fa).trace().re;
        let eb = (sigma * &fb).trace().re;
        let eab = (sigma * &fa * &fb).trace().re;
        let cov = (eab - ea * eb).abs();
        let scale = operator_norm(a.matrix()) * operator_norm(b.matrix());
        if cov < COVARIANCE_FLOOR || scale < 1e-14 {
            continue;
        }
        xs.push(*dist);
        ys.push((cov / scale).ln());
    }
    if xs.is_empty() {
        return Ok(CorrelationFit {
            decay: DecaySpec { c: COVARIANCE_FLOOR, xi: f64::INFINITY },
            residual: 0.0,
            points: 0,
        });
    }
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let det = n * sxx - sx * sx;
    if det.abs() < 1e-12 {
        return Err(CommutingError::BadInput(
            "degenerate distance design (all usable points at one distance)".into(),
        ));
    }
    let slope = (n * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / n;
    let xi = -slope;
    let c = intercept.exp();
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let pred = intercept + slope * x;
            (y - pred) * (y - pred)
        })
        .sum::<f64>()
        / n)
        .sqrt();
    if xi <= 0.0 {
        // growing or flat correlations: clamp to a tiny decay rate so the
        // spec invariant xi > 0 holds while the bound stays conservative
        return Ok(CorrelationFit {
            decay: DecaySpec { c: c.max(1.0), xi: 1e-6 },
            residual,
            points: xs.len(),
        });
    }
    Ok(CorrelationFit { decay: DecaySpec { c, xi }, residual, points: xs.len() })
}

/// Basis-pair covariate list for [`correlation_fit`]: every unordered pair of
/// model basis elements, at the hypergraph distance between their supports.
pub fn basis_covariance_pairs(
    model: &GibbsModel,
    graph: &InteractionHypergraph,
) -> Result<Vec<(LocalOperator, LocalOperator, f64)>, CommutingError> {
    let basis = model.basis();
    let mut out = Vec::new();
    for i in 0..basis.len() {
        for j in (i + 1)..basis.len() {
            if let Some(d) = graph.set_distance(basis[i].support(), basis[j].support()) {
                out.push((basis[i].clone(), basis[j].clone(), d as f64));
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Bound report
// ---------------------------------------------------------------------------

/// The closed-form lower bound needs a trace-orthogonal, traceless basis.
pub fn check_orthogonal_traceless_basis(model: &GibbsModel) -> Result<(), CommutingError> {
    let dim = model.sys().dim() as f64;
    let embedded = model.embedded_basis();
    for (i, a) in embedded.iter().enumerate() {
        let tr = a.trace().re;
        if tr.abs() > 1e-9 * dim {
            return Err(CommutingError::BadInput(format!(
                "basis element {i} is not traceless (trace {tr:.3e})"
            )));
        }
        for (j, b) in embedded.iter().enumerate().skip(i + 1) {
            let overlap = (a * b).trace().re / dim;
            if overlap.abs() > 1e-9 {
                return Err(CommutingError::NotOrthogonal { i, j, overlap });
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BoundReport {
    #[serde(rename = "L_bound")]
    pub l_bound: f64,
    #[serde(rename = "U_bound")]
    pub u_bound: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub condition_number: f64,
}

/// Sandwich report for a commuting model at `mu`: closed-form lower bound,
/// the tighter of the generic and decay upper bounds, and the exact extreme
/// Hessian eigenvalues.
pub fn bound_report(
    model: &GibbsModel,
    mu: &[f64],
    graph: &InteractionHypergraph,
    c_beta: f64,
    decay: Option<&DecaySpec>,
) -> Result<BoundReport, CommutingError> {
    if !model.is_commuting() {
        return Err(CommutingError::NotCommuting);
    }
    check_orthogonal_traceless_basis(model)?;
    let beta = model.beta();
    let d = model.sys().d();
    let l_bound = hessian_lower_bound(beta, d, graph, c_beta)?;
    let generic = 2.0 * beta * beta * model.m() as f64;
    let u_bound = match decay {
        Some(spec) => generic.min(hessian_upper_bound_decay(spec, beta, d, graph)?),
        None => generic,
    };
    let hess = model.dual_hessian(mu, HessianBackend::Commuting)?;
    let eig = nalgebra::SymmetricEigen::new(hess);
    let lambda_min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let lambda_max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(BoundReport {
        l_bound,
        u_bound,
        lambda_min,
        lambda_max,
        condition_number: lambda_max / lambda_min.max(1e-300),
    })
}
