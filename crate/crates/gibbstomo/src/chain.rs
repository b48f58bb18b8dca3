//! Classical Ising chains handled by transfer matrices, far beyond exact
//! diagonalization sizes.
//!
//! The Boltzmann weight of a spin configuration `s in {+1, -1}^n` is
//!
//! ```text
//! exp(-beta * [sum_i J_i s_i s_{i+1} + sum_i h_i s_i])
//! ```
//!
//! (periodic chains add the closing bond `J_n s_n s_1`). This is the diagonal
//! Gibbs state of the Pauli model with basis `{Z_i} + {Z_i Z_{i+1}}` and
//! parameters `[h_1..h_n, J_1..]`, which fixes the flattening order used
//! throughout. Everything here runs in `O(n)` per evaluation via normalized
//! forward/backward messages; marginals, sampling, and window distributions
//! come from the same pass.

use crate::gibbs::{GibbsError, GibbsModel};
use crate::operators::{
    embed_matrix, random_unitary, CMat, OperatorError, PauliString, SiteSystem,
};
use crate::solver::{solve, GradientOracle, SolveResult, SolverError, SolverOptions};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, thiserror::Error)]
pub enum ChainError {
    #[error("bad chain spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Gibbs(#[from] GibbsError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Nearest-neighbour Ising chain with per-site fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub n: usize,
    pub beta: f64,
    /// Bond couplings; `n - 1` entries open, `n` periodic (last closes the ring).
    pub j: Vec<f64>,
    /// Site fields, `n` entries.
    pub h: Vec<f64>,
    pub periodic: bool,
}

impl ChainSpec {
    pub fn new(
        n: usize,
        beta: f64,
        j: Vec<f64>,
        h: Vec<f64>,
        periodic: bool,
    ) -> Result<Self, ChainError> {
        if n < 2 {
            return Err(ChainError::BadSpec(format!("n = {n} must be >= 2")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(ChainError::BadSpec(format!("beta = {beta}")));
        }
        let bonds = if periodic { n } else { n - 1 };
        if j.len() != bonds {
            return Err(ChainError::BadSpec(format!(
                "{} couplings for {} bonds",
                j.len(),
                bonds
            )));
        }
        if h.len() != n {
            return Err(ChainError::BadSpec(format!("{} fields for {n} sites", h.len())));
        }
        for v in j.iter().chain(h.iter()) {
            if !v.is_finite() || v.abs() > 1.0 + 1e-10 {
                return Err(ChainError::BadSpec(format!(
                    "parameter {v} outside the unit ball"
                )));
            }
        }
        Ok(ChainSpec { n, beta, j, h, periodic })
    }

    pub fn random<R: Rng>(n: usize, beta: f64, periodic: bool, rng: &mut R) -> Self {
        let bonds = if periodic { n } else { n - 1 };
        let j = (0..bonds).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let h = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        ChainSpec::new(n, beta, j, h, periodic).expect("random parameters lie in the ball")
    }

    pub fn bonds(&self) -> usize {
        self.j.len()
    }

    /// Number of basis elements / parameters: `n` fields plus the bonds.
    pub fn m(&self) -> usize {
        self.n + self.bonds()
    }

    /// `[h_1..h_n, J_1..]`
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = self.h.clone();
        out.extend_from_slice(&self.j);
        out
    }

    pub fn from_params(
        n: usize,
        beta: f64,
        periodic: bool,
        params: &[f64],
    ) -> Result<Self, ChainError> {
        let bonds = if periodic { n } else { n - 1 };
        if params.len() != n + bonds {
            return Err(ChainError::BadSpec(format!(
                "{} parameters, expected {}",
                params.len(),
                n + bonds
            )));
        }
        ChainSpec::new(
            n,
            beta,
            params[n..].to_vec(),
            params[..n].to_vec(),
            periodic,
        )
    }

    /// Pauli strings matching [`ChainSpec::flatten_params`].
    pub fn basis_strings(&self) -> Vec<PauliString> {
        let mut out: Vec<PauliString> = (1..=self.n)
            .map(|i| PauliString::parse(&format!("Z{i}")).expect("valid"))
            .collect();
        for b in 1..=self.bonds() {
            let next = if b == self.n { 1 } else { b + 1 };
            out.push(PauliString::parse(&format!("Z{b}*Z{next}")).expect("valid"));
        }
        out
    }

    /// Equivalent dense Pauli model; only feasible at exact-diagonalization
    /// sizes, used for cross-checks.
    pub fn to_model(&self) -> Result<(GibbsModel, Vec<f64>), ChainError> {
        let ops = self.basis_strings().iter().map(|p| p.to_local_operator()).collect();
        let sys = SiteSystem::qubits(self.n)?;
        let model = GibbsModel::new(sys, self.beta, ops)?;
        Ok((model, self.flatten_params()))
    }
}

fn spin(idx: usize) -> f64 {
    1.0 - 2.0 * idx as f64
}

/// Forward/backward messages of an open chain with arbitrary pair factors.
/// `forward[i]` is normalized to sum 1; `backward[i]` to max 1; `log_z`
/// accumulates the discarded forward scales.
struct OpenMessages {
    forward: Vec<[f64; 2]>,
    backward: Vec<[f64; 2]>,
    ts: Vec<[[f64; 2]; 2]>,
    log_z: f64,
}

impl OpenMessages {
    fn build(psi: [f64; 2], ts: Vec<[[f64; 2]; 2]>) -> OpenMessages {
        let len = ts.len() + 1;
        let mut forward: Vec<[f64; 2]> = Vec::with_capacity(len);
        let norm0 = psi[0] + psi[1];
        let mut log_z = norm0.ln();
        forward.push([psi[0] / norm0, psi[1] / norm0]);
        for t in &ts {
            let prev = forward[forward.len() - 1];
            let cur = [
                prev[0] * t[0][0] + prev[1] * t[1][0],
                prev[0] * t[0][1] + prev[1] * t[1][1],
            ];
            let norm = cur[0] + cur[1];
            log_z += norm.ln();
            forward.push([cur[0] / norm, cur[1] / norm]);
        }
        let mut backward = vec![[1.0, 1.0]; len];
        for i in (0..len - 1).rev() {
            let nxt = backward[i + 1];
            let t = &ts[i];
            let mut b = [
                t[0][0] * nxt[0] + t[0][1] * nxt[1],
                t[1][0] * nxt[0] + t[1][1] * nxt[1],
            ];
            let scale = b[0].max(b[1]);
            b = [b[0] / scale, b[1] / scale];
            backward[i] = b;
        }
        OpenMessages { forward, backward, ts, log_z }
    }

    fn len(&self) -> usize {
        self.forward.len()
    }

    /// Joint distribution over an ascending list of positions, first position
    /// most significant; index bit 0 means spin `+1`.
    fn window_marginal(&self, positions: &[usize]) -> Vec<f64> {
        let k = positions.len();
        if k == 0 {
            return vec![1.0];
        }
        debug_assert!(positions.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(*positions.last().unwrap() < self.len());
        // transfer products between consecutive window positions
        let mut bridges = Vec::with_capacity(k.saturating_sub(1));
        for t in 0..k - 1 {
            let mut m = [[1.0, 0.0], [0.0, 1.0]];
            for i in positions[t]..positions[t + 1] {
                let step = &self.ts[i];
                let mut next = [[0.0f64; 2]; 2];
                for a in 0..2 {
                    for b in 0..2 {
                        next[a][b] = m[a][0] * step[0][b] + m[a][1] * step[1][b];
                    }
                }
                let scale = next
                    .iter()
                    .flatten()
                    .cloned()
                    .fold(0.0f64, f64::max);
                for row in &mut next {
                    row[0] /= scale;
                    row[1] /= scale;
                }
                m = next;
            }
            bridges.push(m);
        }
        let mut probs = vec![0.0f64; 1 << k];
        for (config, slot) in probs.iter_mut().enumerate() {
            let bit = |t: usize| (config >> (k - 1 - t)) & 1;
            let mut w = self.forward[positions[0]][bit(0)];
            for t in 0..k - 1 {
                w *= bridges[t][bit(t)][bit(t + 1)];
            }
            w *= self.backward[positions[k - 1]][bit(k - 1)];
            *slot = w;
        }
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }
        probs
    }

    /// Forward-filter backward-sample one configuration (as 0/1 indices).
    fn sample<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        let len = self.len();
        let mut out = vec![0usize; len];
        let last = &self.forward[len - 1];
        out[len - 1] = usize::from(rng.random::<f64>() * (last[0] + last[1]) >= last[0]);
        for i in (0..len - 1).rev() {
            let b = out[i + 1];
            let w0 = self.forward[i][0] * self.ts[i][0][b];
            let w1 = self.forward[i][1] * self.ts[i][1][b];
            out[i] = usize::from(rng.random::<f64>() * (w0 + w1) >= w0);
        }
        out
    }
}

enum EngineMode {
    Open(OpenMessages),
    Periodic {
        /// One clamped sub-chain (sites `2..=n`) per value of `s_1`.
        clamped: [OpenMessages; 2],
        weights: [f64; 2],
        log_z: f64,
    },
}

/// Prepared messages for one chain; all queries afterwards are cheap.
pub struct ChainEngine {
    spec: ChainSpec,
    mode: EngineMode,
}

impl ChainEngine {
    pub fn new(spec: ChainSpec) -> ChainEngine {
        let beta = spec.beta;
        let n = spec.n;
        if !spec.periodic {
            let psi = [(-beta * spec.h[0]).exp(), (beta * spec.h[0]).exp()];
            let ts: Vec<[[f64; 2]; 2]> = (0..n - 1)
                .map(|i| {
                    let mut t = [[0.0f64; 2]; 2];
                    for (a, row) in t.iter_mut().enumerate() {
                        for (b, v) in row.iter_mut().enumerate() {
                            *v = (-beta
                                * (spec.j[i] * spin(a) * spin(b) + spec.h[i + 1] * spin(b)))
                            .exp();
                        }
                    }
                    t
                })
                .collect();
            let msgs = OpenMessages::build(psi, ts);
            return ChainEngine { spec, mode: EngineMode::Open(msgs) };
        }
        // periodic: clamp s_1 and treat sites 2..=n as an open chain, folding
        // both boundary bonds into the nearest factors
        let mut clamped = Vec::with_capacity(2);
        let mut log_weights = [0.0f64; 2];
        for (a_idx, lw) in log_weights.iter_mut().enumerate() {
            let a = spin(a_idx);
            let field = |site: usize| -> f64 {
                // 1-indexed site in 2..=n, including boundary contributions
                let mut f = spec.h[site - 1];
                if site == 2 {
                    f += spec.j[0] * a;
                }
                if site == n {
                    f += spec.j[n - 1] * a;
                }
                f
            };
            let psi0 = field(2);
            let psi = [(-beta * psi0).exp(), (beta * psi0).exp()];
            let ts: Vec<[[f64; 2]; 2]> = (2..n)
                .map(|site| {
                    let fnext = field(site + 1);
                    let mut t = [[0.0f64; 2]; 2];
                    for (ai, row) in t.iter_mut().enumerate() {
                        for (b, v) in row.iter_mut().enumerate() {
                            *v = (-beta
                                * (spec.j[site - 1] * spin(ai) * spin(b) + fnext * spin(b)))
                            .exp();
                        }
                    }
                    t
                })
                .collect();
            let msgs = OpenMessages::build(psi, ts);
            *lw = -beta * spec.h[0] * a + msgs.log_z;
            clamped.push(msgs);
        }
        let lmax = log_weights[0].max(log_weights[1]);
        let w = [
            (log_weights[0] - lmax).exp(),
            (log_weights[1] - lmax).exp(),
        ];
        let total = w[0] + w[1];
        let log_z = lmax + total.ln();
        let [c0, c1]: [OpenMessages; 2] = clamped.try_into().ok().expect("two clamps");
        ChainEngine {
            spec,
            mode: EngineMode::Periodic {
                clamped: [c0, c1],
                weights: [w[0] / total, w[1] / total],
                log_z,
            },
        }
    }

    pub fn spec(&self) -> &ChainSpec {
        &self.spec
    }

    pub fn log_partition(&self) -> f64 {
        match &self.mode {
            EngineMode::Open(m) => m.log_z,
            EngineMode::Periodic { log_z, .. } => *log_z,
        }
    }

    /// `<s_i>` for a 1-indexed site.
    pub fn site_mean(&self, site: usize) -> f64 {
        let p = self.window_marginal(&[site]);
        p[0] - p[1]
    }

    /// `<s_i s_j>` for any two distinct sites.
    pub fn pair_mean(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        let p = self.window_marginal(&[lo, hi]);
        p[0] - p[1] - p[2] + p[3]
    }

    /// Expectations in [`ChainSpec::flatten_params`] order.
    pub fn expectations(&self) -> Vec<f64> {
        let n = self.spec.n;
        let mut out: Vec<f64> = (1..=n).map(|i| self.site_mean(i)).collect();
        for b in 1..=self.spec.bonds() {
            let next = if b == n { 1 } else { b + 1 };
            out.push(self.pair_mean(b, next));
        }
        out
    }

    /// Joint distribution over ascending 1-indexed `sites`; first site most
    /// significant, index bit 0 meaning spin `+1`.
    pub fn window_marginal(&self, sites: &[usize]) -> Vec<f64> {
        assert!(
            sites.windows(2).all(|w| w[0] < w[1])
                && sites.first().is_some_and(|&s| s >= 1)
                && sites.last().is_some_and(|&s| s <= self.spec.n),
            "sites must be ascending within 1..=n"
        );
        match &self.mode {
            EngineMode::Open(m) => {
                let positions: Vec<usize> = sites.iter().map(|&s| s - 1).collect();
                m.window_marginal(&positions)
            }
            EngineMode::Periodic { clamped, weights, .. } => {
                let k = sites.len();
                let has_first = sites[0] == 1;
                let rest: Vec<usize> = sites
                    .iter()
                    .filter(|&&s| s != 1)
                    .map(|&s| s - 2)
                    .collect();
                let mut probs = vec![0.0f64; 1 << k];
                for (a_idx, (msgs, w)) in clamped.iter().zip(weights).enumerate() {
                    let sub = msgs.window_marginal(&rest);
                    for (ci, p) in sub.iter().enumerate() {
                        let full = if has_first {
                            (a_idx << (k - 1)) | ci
                        } else {
                            ci
                        };
                        probs[full] += w * p;
                    }
                }
                probs
            }
        }
    }

    /// Draw spin configurations (`+1/-1` per site).
    pub fn sample<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<Vec<i8>> {
        (0..count)
            .map(|_| match &self.mode {
                EngineMode::Open(m) => {
                    m.sample(rng).into_iter().map(|i| 1 - 2 * i as i8).collect()
                }
                EngineMode::Periodic { clamped, weights, .. } => {
                    let a_idx = usize::from(rng.random::<f64>() >= weights[0]);
                    let mut out = Vec::with_capacity(self.spec.n);
                    out.push(1 - 2 * a_idx as i8);
                    out.extend(
                        clamped[a_idx]
                            .sample(rng)
                            .into_iter()
                            .map(|i| 1 - 2 * i as i8),
                    );
                    out
                }
            })
            .collect()
    }
}

/// Gradient oracle that rebuilds the transfer engine at each iterate.
pub struct ChainOracle {
    n: usize,
    beta: f64,
    periodic: bool,
    delta_mu: f64,
}

impl ChainOracle {
    pub fn new(n: usize, beta: f64, periodic: bool) -> ChainOracle {
        ChainOracle { n, beta, periodic, delta_mu: 1e-9 }
    }
}

impl GradientOracle for ChainOracle {
    fn m(&self) -> usize {
        self.n + if self.periodic { self.n } else { self.n - 1 }
    }

    fn beta(&self) -> f64 {
        self.beta
    }

    fn delta_mu(&self) -> f64 {
        self.delta_mu
    }

    fn expectations(&mut self, mu: &[f64]) -> Result<Vec<f64>, SolverError> {
        let spec = ChainSpec::from_params(self.n, self.beta, self.periodic, mu)
            .map_err(|e| SolverError::Oracle(e.to_string()))?;
        Ok(ChainEngine::new(spec).expectations())
    }

    fn log_partition(&mut self, mu: &[f64]) -> Option<f64> {
        let spec = ChainSpec::from_params(self.n, self.beta, self.periodic, mu).ok()?;
        Some(ChainEngine::new(spec).log_partition())
    }
}

/// Row-sum Hessian bound from the exponential decay of spin covariances:
/// `beta^2 * max_i sum_j 2 tanh(beta)^{max(0, dist(i,j) - 1)}`, capped by the
/// generic `2 beta^2 m`. Much tighter than the cap on long chains, which is
/// what makes large reconstructions converge in reasonable step counts.
pub fn chain_hessian_upper_heuristic(spec: &ChainSpec) -> f64 {
    let n = spec.n;
    let m = spec.m();
    let t = spec.beta.tanh();
    // supports of the basis elements in flatten order
    let supports: Vec<(usize, usize)> = (1..=n)
        .map(|i| (i, i))
        .chain((1..=spec.bonds()).map(|b| (b, if b == n { 1 } else { b + 1 })))
        .collect();
    let site_dist = |a: usize, b: usize| -> usize {
        let d = a.abs_diff(b);
        if spec.periodic {
            d.min(n - d)
        } else {
            d
        }
    };
    let dist = |x: (usize, usize), y: (usize, usize)| -> usize {
        site_dist(x.0, y.0)
            .min(site_dist(x.0, y.1))
            .min(site_dist(x.1, y.0))
            .min(site_dist(x.1, y.1))
    };
    let mut worst = 0.0f64;
    for a in &supports {
        let row: f64 = supports
            .iter()
            .map(|b| {
                let d = dist(*a, *b);
                2.0 * t.powi(d.saturating_sub(1) as i32)
            })
            .sum();
        worst = worst.max(row);
    }
    let b2 = spec.beta * spec.beta;
    (b2 * worst).min(2.0 * b2 * m as f64)
}

/// Reconstructed chain plus the solver record behind it.
pub struct ChainReconstruction {
    pub spec: ChainSpec,
    pub result: SolveResult,
}

/// Fit chain parameters to target expectations (flatten order). When no
/// Hessian bound is supplied, the decay heuristic for a unit-ball chain at
/// this `beta` is used.
pub fn chain_maxent_reconstruct(
    n: usize,
    beta: f64,
    periodic: bool,
    e_hat: &[f64],
    options: &SolverOptions,
) -> Result<ChainReconstruction, ChainError> {
    let mut options = options.clone();
    if options.u.is_none() {
        let bonds = if periodic { n } else { n - 1 };
        let worst = ChainSpec::new(n, beta, vec![1.0; bonds], vec![1.0; n], periodic)?;
        options.u = Some(chain_hessian_upper_heuristic(&worst));
    }
    let mut oracle = ChainOracle::new(n, beta, periodic);
    let result = solve(&mut oracle, e_hat, &options)?;
    let spec = ChainSpec::from_params(n, beta, periodic, &result.mu)?;
    Ok(ChainReconstruction { spec, result })
}

// ---------------------------------------------------------------------------
// Shallow-circuit observables evaluated through lightcone windows
// ---------------------------------------------------------------------------

/// Brickwork circuit on a line: layer `l` applies the same Haar-random
/// two-site gate at every pair `(g, g+1)` with `g = 1 + (l mod 2), +2, ...`.
pub struct BrickworkCircuit {
    pub n: usize,
    /// One 4x4 unitary per layer.
    pub gates: Vec<CMat>,
}

pub fn brickwork_circuit<R: Rng>(n: usize, depth: usize, rng: &mut R) -> BrickworkCircuit {
    let gates = (0..depth).map(|_| random_unitary(4, rng)).collect();
    BrickworkCircuit { n, gates }
}

impl BrickworkCircuit {
    pub fn depth(&self) -> usize {
        self.gates.len()
    }

    fn layer_first_site(&self, layer: usize) -> usize {
        1 + (layer % 2)
    }

    /// Layer unitary restricted to the window `[lo, hi]` (1-indexed global
    /// sites); gates not fully inside the window are dropped.
    fn layer_on_window(&self, layer: usize, lo: usize, hi: usize) -> Result<CMat, ChainError> {
        let w = hi - lo + 1;
        let wsys = SiteSystem::qubits(w)?;
        let mut u = CMat::identity(wsys.dim(), wsys.dim());
        let first = self.layer_first_site(layer);
        let mut g = first;
        while g + 1 <= self.n {
            if g >= lo && g + 1 <= hi {
                let local = g - lo + 1;
                let embedded =
                    embed_matrix(wsys, &[local, local + 1], &self.gates[layer])?;
                u = embedded * u;
            }
            g += 2;
        }
        Ok(u)
    }

    /// Full unitary on all `n` sites; exact-diagonalization sizes only.
    pub fn full_unitary(&self) -> Result<CMat, ChainError> {
        self.layer_product(1, self.n)
    }

    fn layer_product(&self, lo: usize, hi: usize) -> Result<CMat, ChainError> {
        let w = hi - lo + 1;
        let wsys = SiteSystem::qubits(w)?;
        let mut u = CMat::identity(wsys.dim(), wsys.dim());
        for layer in 0..self.depth() {
            u = self.layer_on_window(layer, lo, hi)? * u;
        }
        Ok(u)
    }

    /// Diagonal of `U^dag Z_i U` on the lightcone window of site `i`.
    /// Returns the window start and the `2^w` diagonal entries. Dropping
    /// gates outside the window is exact: they cancel in the conjugation
    /// because the operator support grows by at most one site per layer.
    pub fn evolved_z_diag(&self, i: usize) -> Result<(usize, Vec<f64>), ChainError> {
        let depth = self.depth();
        let lo = i.saturating_sub(depth).max(1);
        let hi = (i + depth).min(self.n);
        let w = hi - lo + 1;
        let wsys = SiteSystem::qubits(w)?;
        let z = crate::operators::Pauli::Z.matrix();
        let mut a = embed_matrix(wsys, &[i - lo + 1], &z)?;
        for layer in (0..depth).rev() {
            let u = self.layer_on_window(layer, lo, hi)?;
            a = u.adjoint() * a * u;
        }
        Ok((lo, (0..wsys.dim()).map(|k| a[(k, k)].re).collect()))
    }
}

/// The averaged Heisenberg-evolved observable `O = n^{-1} sum_i U^dag Z_i U`
/// with all window diagonals precomputed. Identical windows (same offsets and
/// site parity) are computed once; on long chains that is a handful of cases.
pub struct LightconeObservable {
    n: usize,
    /// Per site: window start and an index into `diags`.
    windows: Vec<(usize, usize)>,
    diags: Vec<Vec<f64>>,
}

impl LightconeObservable {
    pub fn new(circuit: &BrickworkCircuit) -> Result<LightconeObservable, ChainError> {
        let depth = circuit.depth();
        let n = circuit.n;
        let mut cache: HashMap<(usize, usize, usize), usize> = HashMap::new();
        let mut windows = Vec::with_capacity(n);
        let mut diags = Vec::new();
        for i in 1..=n {
            let lo = i.saturating_sub(depth).max(1);
            let hi = (i + depth).min(n);
            let key = (i - lo, hi - i, i % 2);
            let idx = match cache.get(&key) {
                Some(&idx) => idx,
                None => {
                    let (got_lo, diag) = circuit.evolved_z_diag(i)?;
                    debug_assert_eq!(got_lo, lo);
                    diags.push(diag);
                    let idx = diags.len() - 1;
                    cache.insert(key, idx);
                    idx
                }
            };
            windows.push((lo, idx));
        }
        Ok(LightconeObservable { n, windows, diags })
    }

    /// `<O>` under the chain state.
    pub fn mean(&self, engine: &ChainEngine) -> f64 {
        assert_eq!(engine.spec().n, self.n, "chain length mismatch");
        let mut total = 0.0;
        for &(lo, idx) in &self.windows {
            let diag = &self.diags[idx];
            let w = diag.len().ilog2() as usize;
            let sites: Vec<usize> = (lo..lo + w).collect();
            let probs = engine.window_marginal(&sites);
            total += probs.iter().zip(diag).map(|(p, d)| p * d).sum::<f64>();
        }
        total / self.n as f64
    }
}

/// `|<O>_truth - <O>_recon|` for the lightcone-averaged observable.
pub struct WindowedError {
    pub mean_true: f64,
    pub mean_recon: f64,
    pub error: f64,
}

pub fn windowed_observable_error(
    truth: &ChainEngine,
    recon: &ChainEngine,
    circuit: &BrickworkCircuit,
) -> Result<WindowedError, ChainError> {
    let obs = LightconeObservable::new(circuit)?;
    let mean_true = obs.mean(truth);
    let mean_recon = obs.mean(recon);
    Ok(WindowedError {
        mean_true,
        mean_recon,
        error: (mean_true - mean_recon).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// Direct enumeration over all configurations; the in-test oracle.
    fn enumerate(spec: &ChainSpec) -> (f64, Vec<f64>) {
        let n = spec.n;
        let mut z = 0.0f64;
        let mut acc = vec![0.0f64; spec.m()];
        for config in 0..(1usize << n) {
            let s: Vec<f64> = (0..n)
                .map(|i| 1.0 - 2.0 * ((config >> (n - 1 - i)) & 1) as f64)
                .collect();
            let mut energy = 0.0;
            for (i, &h) in spec.h.iter().enumerate() {
                energy += h * s[i];
            }
            for (b, &j) in spec.j.iter().enumerate() {
                let next = if b + 1 == n { 0 } else { b + 1 };
                energy += j * s[b] * s[next];
            }
            let w = (-spec.beta * energy).exp();
            z += w;
            for (i, slot) in acc.iter_mut().take(n).enumerate() {
                *slot += w * s[i];
            }
            for b in 0..spec.bonds() {
                let next = if b + 1 == n { 0 } else { b + 1 };
                acc[n + b] += w * s[b] * s[next];
            }
        }
        (z.ln(), acc.into_iter().map(|v| v / z).collect())
    }

    fn frozen_open() -> ChainSpec {
        ChainSpec::new(3, 0.7, vec![0.5, -0.25], vec![0.1, -0.2, 0.3], false).unwrap()
    }

    fn frozen_periodic() -> ChainSpec {
        ChainSpec::new(
            4,
            0.9,
            vec![0.3, -0.6, 0.2, 0.45],
            vec![-0.15, 0.05, 0.25, -0.35],
            true,
        )
        .unwrap()
    }

    #[test]
    fn frozen_open_chain_values() {
        let engine = ChainEngine::new(frozen_open());
        assert!((engine.log_partition() - 2.186257989673532).abs() < 1e-12);
        let e = engine.expectations();
        let expect = [
            -0.104531910682370,
            0.126954257167928,
            -0.179935785414398,
            -0.342790529465257,
            0.140508484580057,
        ];
        for (got, want) in e.iter().zip(expect) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn frozen_periodic_chain_values() {
        let engine = ChainEngine::new(frozen_periodic());
        assert!(
            (engine.log_partition() - 3.120463630290736).abs() < 1e-12,
            "logZ = {}",
            engine.log_partition()
        );
        let e = engine.expectations();
        let expect = [
            0.048521201393692,
            -0.176204742343002,
            -0.286843820862245,
            0.285890020452908,
            -0.237259765205754,
            0.490471100573010,
            -0.193861957668961,
            -0.313001872793288,
        ];
        for (got, want) in e.iter().zip(expect) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn transfer_matches_enumeration_on_random_chains() {
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        for &periodic in &[false, true] {
            for trial in 0..3 {
                let n = 5 + trial;
                let spec = ChainSpec::random(n, 0.4 + 0.5 * trial as f64, periodic, &mut rng);
                let engine = ChainEngine::new(spec.clone());
                let (lz, e) = enumerate(&spec);
                assert!(
                    (engine.log_partition() - lz).abs() < 1e-10,
                    "periodic={periodic} logZ {} vs {lz}",
                    engine.log_partition()
                );
                for (got, want) in engine.expectations().iter().zip(&e) {
                    assert!((got - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn chain_agrees_with_dense_pauli_model() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for &periodic in &[false, true] {
            let spec = ChainSpec::random(5, 0.8, periodic, &mut rng);
            let engine = ChainEngine::new(spec.clone());
            let (model, lambda) = spec.to_model().unwrap();
            assert!(model.is_commuting());
            assert!(
                (engine.log_partition() - model.log_partition(&lambda).unwrap()).abs() < 1e-10
            );
            let qe = model.expectations(&lambda).unwrap();
            for (got, want) in engine.expectations().iter().zip(qe.iter()) {
                assert!((got - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn window_marginals_are_consistent() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for &periodic in &[false, true] {
            let spec = ChainSpec::random(6, 0.9, periodic, &mut rng);
            let engine = ChainEngine::new(spec.clone());
            // full-window marginal against enumeration weights
            let all: Vec<usize> = (1..=6).collect();
            let joint = engine.window_marginal(&all);
            assert!((joint.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let (lz, _) = enumerate(&spec);
            for (config, &p) in joint.iter().enumerate() {
                let s: Vec<f64> = (0..6)
                    .map(|i| 1.0 - 2.0 * ((config >> (5 - i)) & 1) as f64)
                    .collect();
                let mut energy = 0.0;
                for (i, &h) in spec.h.iter().enumerate() {
                    energy += h * s[i];
                }
                for (b, &j) in spec.j.iter().enumerate() {
                    let next = if b + 1 == 6 { 0 } else { b + 1 };
                    energy += j * s[b] * s[next];
                }
                let expect = (-spec.beta * energy - lz).exp();
                assert!((p - expect).abs() < 1e-12, "config {config}");
            }
            // non-contiguous window vs marginalizing the joint
            let pair = engine.window_marginal(&[1, 4]);
            let mut manual = [0.0f64; 4];
            for (config, &p) in joint.iter().enumerate() {
                let b1 = (config >> 5) & 1;
                let b4 = (config >> 2) & 1;
                manual[(b1 << 1) | b4] += p;
            }
            for (got, want) in pair.iter().zip(manual) {
                assert!((got - want).abs() < 1e-12);
            }
            // single-site windows match site means
            for i in 1..=6 {
                let p = engine.window_marginal(&[i]);
                assert!((p[0] - p[1] - engine.site_mean(i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampling_matches_marginals() {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for &periodic in &[false, true] {
            let spec = ChainSpec::random(6, 0.7, periodic, &mut rng);
            let engine = ChainEngine::new(spec);
            let draws = 40_000;
            let samples = engine.sample(draws, &mut rng);
            let exact = engine.expectations();
            let n = 6;
            for i in 0..n {
                let mean: f64 =
                    samples.iter().map(|s| f64::from(s[i])).sum::<f64>() / draws as f64;
                // 5 sigma with variance <= 1
                assert!(
                    (mean - exact[i]).abs() < 5.0 / (draws as f64).sqrt() + 1e-3,
                    "site {i}: {mean} vs {}",
                    exact[i]
                );
            }
            let bonds = engine.spec().bonds();
            for b in 0..bonds {
                let next = if b + 1 == n { 0 } else { b + 1 };
                let mean: f64 = samples
                    .iter()
                    .map(|s| f64::from(s[b] * s[next]))
                    .sum::<f64>()
                    / draws as f64;
                assert!((mean - exact[n + b]).abs() < 5.0 / (draws as f64).sqrt() + 1e-3);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_under_seed() {
        let spec = frozen_open();
        let engine = ChainEngine::new(spec);
        let a = engine.sample(50, &mut ChaCha12Rng::seed_from_u64(5));
        let b = engine.sample(50, &mut ChaCha12Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn reconstruction_recovers_chain_parameters() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let spec = ChainSpec::random(12, 0.7, false, &mut rng);
        let targets = ChainEngine::new(spec.clone()).expectations();
        let options = SolverOptions {
            delta_mu: Some(1e-6),
            ..SolverOptions::default()
        };
        let recon = chain_maxent_reconstruct(12, 0.7, false, &targets, &options).unwrap();
        assert_eq!(recon.result.halt, crate::solver::HaltReason::StoppingRule);
        for (got, want) in recon.spec.flatten_params().iter().zip(spec.flatten_params()) {
            assert!((got - want).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn hessian_heuristic_upper_bounds_exact_hessian() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        for trial in 0..3 {
            let beta = 0.4 + 0.4 * trial as f64;
            let spec = ChainSpec::random(6, beta, false, &mut rng);
            let u = chain_hessian_upper_heuristic(&spec);
            assert!(u <= 2.0 * beta * beta * spec.m() as f64 + 1e-12);
            let (model, lambda) = spec.to_model().unwrap();
            let hess = model
                .dual_hessian(&lambda, crate::gibbs::HessianBackend::Commuting)
                .unwrap();
            let eig = nalgebra::SymmetricEigen::new(hess);
            let lmax = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
            assert!(lmax <= u + 1e-9, "beta={beta}: exact {lmax} vs heuristic {u}");
        }
    }

    #[test]
    fn lightcone_windows_match_full_circuit() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let n = 8;
        let circuit = brickwork_circuit(n, 3, &mut rng);
        let spec = ChainSpec::random(n, 0.6, false, &mut rng);
        let engine = ChainEngine::new(spec.clone());
        // exact: embed the full unitary, conjugate each Z_i, average diagonals
        // against the full configuration distribution
        let u = circuit.full_unitary().unwrap();
        let sys = SiteSystem::qubits(n).unwrap();
        let all: Vec<usize> = (1..=n).collect();
        let probs = engine.window_marginal(&all);
        let mut exact_mean = 0.0;
        for i in 1..=n {
            let z = crate::operators::Pauli::Z.matrix();
            let zi = embed_matrix(sys, &[i], &z).unwrap();
            let evolved = u.adjoint() * &zi * &u;
            for (config, &p) in probs.iter().enumerate() {
                exact_mean += p * evolved[(config, config)].re;
            }
        }
        exact_mean /= n as f64;
        let obs = LightconeObservable::new(&circuit).unwrap();
        let fast = obs.mean(&engine);
        assert!(
            (fast - exact_mean).abs() < 1e-10,
            "windowed {fast} vs exact {exact_mean}"
        );
    }

    #[test]
    fn windowed_error_zero_on_identical_chains_positive_otherwise() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let n = 20;
        let circuit = brickwork_circuit(n, 3, &mut rng);
        let spec = ChainSpec::random(n, 0.8, false, &mut rng);
        let engine = ChainEngine::new(spec.clone());
        let same = windowed_observable_error(&engine, &engine, &circuit).unwrap();
        assert_eq!(same.error, 0.0);
        let mut other = spec.clone();
        other.h[4] = (other.h[4] + 0.4).clamp(-1.0, 1.0);
        other.h[5] = (other.h[5] - 0.4).clamp(-1.0, 1.0);
        let perturbed = windowed_observable_error(
            &engine,
            &ChainEngine::new(other),
            &circuit,
        )
        .unwrap();
        assert!(perturbed.error > 1e-6);
    }

    #[test]
    fn spec_validation_and_round_trip() {
        assert!(ChainSpec::new(1, 1.0, vec![], vec![0.0], false).is_err());
        assert!(ChainSpec::new(3, 1.0, vec![0.1], vec![0.0; 3], false).is_err());
        assert!(ChainSpec::new(3, 1.0, vec![0.1, 1.5], vec![0.0; 3], false).is_err());
        assert!(ChainSpec::new(3, -0.2, vec![0.1, 0.2], vec![0.0; 3], false).is_err());
        let spec = frozen_periodic();
        let params = spec.flatten_params();
        let back = ChainSpec::from_params(4, 0.9, true, &params).unwrap();
        assert_eq!(spec, back);
        assert_eq!(spec.basis_strings().len(), spec.m());
    }
}
