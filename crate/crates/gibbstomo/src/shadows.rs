//! Classical shadows with uniformly random single-qubit Pauli bases.
//!
//! Each snapshot draws a basis `W_j in {X, Y, Z}` per site, measures every
//! site in its basis, and records the bit string. A `k`-local Pauli string is
//! estimated from one snapshot as `3^k * product(outcome signs)` when all its
//! factors were measured in the matching basis and 0 otherwise; batch means
//! are combined with a median to get the usual exponential tail.
//!
//! Sample count for accuracy `epsilon` and failure probability `delta` over
//! `m` observables of locality at most `k`:
//!
//! ```text
//! N = ceil(34 * 4^k * log(2 m / delta) / epsilon^2)
//! K = 2 * ceil(log(2 m / delta)) + 1     (number of batches, odd)
//! ```

use crate::operators::{CMat, Pauli, PauliString, SiteSystem};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// Leading constant in the sample-count bound.
pub const SHADOW_SAMPLE_CONSTANT: f64 = 34.0;
/// Joint basis-outcome tables are precomputed up to this many qubits.
pub const JOINT_TABLE_MAX_QUBITS: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum ShadowError {
    #[error(transparent)]
    Operator(#[from] crate::operators::OperatorError),
    #[error("shadow sampling requires qubits (d = 2), got d = {0}")]
    NotQubits(usize),
    #[error("bad plan input: {0}")]
    BadPlan(String),
    #[error("observable {label} has support beyond n = {n}")]
    ObservableOutOfRange { label: String, n: usize },
    #[error("batch holds {snapshots} snapshots, cannot split into {batches} batches")]
    TooFewSnapshots { snapshots: usize, batches: usize },
    #[error("state matrix is {rows}x{cols}, expected {dim}x{dim}")]
    BadState { rows: usize, cols: usize, dim: usize },
    #[error("shadow file {path}: {reason}")]
    File { path: String, reason: String },
}

/// Snapshot and batch counts for a target accuracy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub snapshots: usize,
    pub batches: usize,
    /// Value of the bound before rounding up.
    pub raw: f64,
}

/// `N = ceil(34 * 4^k * log(2m/delta) / eps^2)`, `K = 2 ceil(log(2m/delta)) + 1`.
pub fn plan_samples(
    m: usize,
    locality: usize,
    epsilon: f64,
    delta: f64,
) -> Result<SamplePlan, ShadowError> {
    if m == 0 {
        return Err(ShadowError::BadPlan("m must be >= 1".into()));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(ShadowError::BadPlan(format!("epsilon = {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(ShadowError::BadPlan(format!("delta = {delta}")));
    }
    let log_term = (2.0 * m as f64 / delta).ln();
    let raw = SHADOW_SAMPLE_CONSTANT * 4f64.powi(locality as i32) * log_term
        / (epsilon * epsilon);
    let snapshots = raw.ceil() as usize;
    let batches = 2 * log_term.ceil() as usize + 1;
    Ok(SamplePlan { snapshots, batches: batches.max(1), raw })
}

/// One randomized measurement: a basis letter and an outcome bit per site.
/// Outcome bit 0 is the `+1` eigenvector of the measured Pauli.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub bases: Vec<Pauli>,
    pub outcomes: Vec<u8>,
}

/// A collection of snapshots on a fixed number of qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowBatch {
    n: usize,
    snapshots: Vec<Snapshot>,
}

#[derive(Serialize, Deserialize)]
struct ShadowHeader {
    format: String,
    n: usize,
    count: usize,
}

impl ShadowBatch {
    pub fn new(n: usize) -> Self {
        ShadowBatch { n, snapshots: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn push(&mut self, snap: Snapshot) {
        debug_assert_eq!(snap.bases.len(), self.n);
        debug_assert_eq!(snap.outcomes.len(), self.n);
        self.snapshots.push(snap);
    }

    /// Text format: one JSON header line, then one `bases TAB bits` line per
    /// snapshot, e.g. `XZY\t010`.
    pub fn save(&self, path: &Path) -> Result<(), ShadowError> {
        let file = |e: std::io::Error| ShadowError::File {
            path: path.display().to_string(),
            reason: e.to_string(),
        };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(file)?);
        let header = ShadowHeader {
            format: "pauli-shadows-v1".into(),
            n: self.n,
            count: self.snapshots.len(),
        };
        let hline = serde_json::to_string(&header).expect("header serializes");
        writeln!(out, "{hline}").map_err(file)?;
        let mut line = String::with_capacity(2 * self.n + 2);
        for snap in &self.snapshots {
            line.clear();
            for &b in &snap.bases {
                line.push(b.letter());
            }
            line.push('\t');
            for &o in &snap.outcomes {
                line.push(if o == 0 { '0' } else { '1' });
            }
            writeln!(out, "{line}").map_err(file)?;
        }
        out.flush().map_err(file)
    }

    pub fn load(path: &Path) -> Result<ShadowBatch, ShadowError> {
        let file = |reason: String| ShadowError::File {
            path: path.display().to_string(),
            reason,
        };
        let handle = std::fs::File::open(path).map_err(|e| file(e.to_string()))?;
        let mut lines = std::io::BufReader::new(handle).lines();
        let hline = lines
            .next()
            .ok_or_else(|| file("empty file".into()))?
            .map_err(|e| file(e.to_string()))?;
        let header: ShadowHeader =
            serde_json::from_str(&hline).map_err(|e| file(format!("bad header: {e}")))?;
        if header.format != "pauli-shadows-v1" {
            return Err(file(format!("unknown format {:?}", header.format)));
        }
        let mut batch = ShadowBatch::new(header.n);
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| file(e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let (bpart, opart) = line
                .split_once('\t')
                .ok_or_else(|| file(format!("line {}: missing tab", lineno + 2)))?;
            if bpart.len() != header.n || opart.len() != header.n {
                return Err(file(format!("line {}: wrong width", lineno + 2)));
            }
            let mut bases = Vec::with_capacity(header.n);
            for c in bpart.chars() {
                bases.push(match c {
                    'X' => Pauli::X,
                    'Y' => Pauli::Y,
                    'Z' => Pauli::Z,
                    other => {
                        return Err(file(format!("line {}: bad basis {other:?}", lineno + 2)))
                    }
                });
            }
            let mut outcomes = Vec::with_capacity(header.n);
            for c in opart.chars() {
                outcomes.push(match c {
                    '0' => 0u8,
                    '1' => 1u8,
                    other => {
                        return Err(file(format!("line {}: bad bit {other:?}", lineno + 2)))
                    }
                });
            }
            batch.push(Snapshot { bases, outcomes });
        }
        if batch.len() != header.count {
            return Err(file(format!(
                "header says {} snapshots, file has {}",
                header.count,
                batch.len()
            )));
        }
        Ok(batch)
    }
}

/// 2x2 rotation taking the eigenbasis of `p` to the computational basis,
/// i.e. `R p R^dag = Z`.
fn basis_rotation(p: Pauli) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let h = CMat::from_row_slice(
        2,
        2,
        &[
            Complex64::new(s, 0.0),
            Complex64::new(s, 0.0),
            Complex64::new(s, 0.0),
            Complex64::new(-s, 0.0),
        ],
    );
    match p {
        Pauli::Z => CMat::identity(2, 2),
        Pauli::X => h,
        Pauli::Y => {
            // H S^dag with S = diag(1, i)
            let mut r = h;
            let mi = Complex64::new(0.0, -1.0);
            r[(0, 1)] *= mi;
            r[(1, 1)] *= mi;
            r
        }
    }
}

fn check_state(rho: &CMat, sys: SiteSystem) -> Result<(), ShadowError> {
    if sys.d() != 2 {
        return Err(ShadowError::NotQubits(sys.d()));
    }
    if rho.nrows() != sys.dim() || rho.ncols() != sys.dim() {
        return Err(ShadowError::BadState {
            rows: rho.nrows(),
            cols: rho.ncols(),
            dim: sys.dim(),
        });
    }
    Ok(())
}

/// Born-rule outcome distribution over the `2^n` bit strings when every site
/// is measured in the given basis. Exact; used by the sampler for small `n`
/// and by tests as the reference distribution.
pub fn basis_outcome_distribution(
    rho: &CMat,
    sys: SiteSystem,
    bases: &[Pauli],
) -> Result<Vec<f64>, ShadowError> {
    check_state(rho, sys)?;
    let n = sys.n();
    assert_eq!(bases.len(), n, "one basis letter per site");
    let mut rot = CMat::identity(1, 1);
    for &b in bases {
        rot = rot.kronecker(&basis_rotation(b));
    }
    let rotated = &rot * rho * rot.adjoint();
    Ok((0..sys.dim()).map(|k| rotated[(k, k)].re.max(0.0)).collect())
}

/// Tables for every basis combination; feasible for `n <= JOINT_TABLE_MAX_QUBITS`.
struct JointTable {
    n: usize,
    /// Per basis combination (index base 3), cumulative outcome distribution.
    cdfs: Vec<Vec<f64>>,
}

impl JointTable {
    fn build(rho: &CMat, sys: SiteSystem) -> Result<Self, ShadowError> {
        let n = sys.n();
        let combos = 3usize.pow(n as u32);
        let mut cdfs = Vec::with_capacity(combos);
        let mut bases = vec![Pauli::X; n];
        for combo in 0..combos {
            let mut rem = combo;
            for site in (0..n).rev() {
                bases[site] = match rem % 3 {
                    0 => Pauli::X,
                    1 => Pauli::Y,
                    _ => Pauli::Z,
                };
                rem /= 3;
            }
            let pdf = basis_outcome_distribution(rho, sys, &bases)?;
            let mut acc = 0.0;
            let cdf: Vec<f64> = pdf
                .iter()
                .map(|p| {
                    acc += p;
                    acc
                })
                .collect();
            cdfs.push(cdf);
        }
        Ok(JointTable { n, cdfs })
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Snapshot {
        let combo = rng.random_range(0..self.cdfs.len());
        let mut rem = combo;
        let mut bases = vec![Pauli::X; self.n];
        for site in (0..self.n).rev() {
            bases[site] = match rem % 3 {
                0 => Pauli::X,
                1 => Pauli::Y,
                _ => Pauli::Z,
            };
            rem /= 3;
        }
        let cdf = &self.cdfs[combo];
        let total = *cdf.last().expect("nonempty cdf");
        let u = rng.random::<f64>() * total;
        let idx = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
        let mut outcomes = vec![0u8; self.n];
        for site in 0..self.n {
            outcomes[site] = ((idx >> (self.n - 1 - site)) & 1) as u8;
        }
        Snapshot { bases, outcomes }
    }
}

/// Measure site by site: rotate the leading site, read its outcome
/// probability from the block trace, condition, and recurse on the rest.
fn sample_sequential<R: Rng>(rho: &CMat, sys: SiteSystem, rng: &mut R) -> Snapshot {
    let n = sys.n();
    let mut bases = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    let mut current = rho.clone();
    for step in 0..n {
        let basis = match rng.random_range(0..3u32) {
            0 => Pauli::X,
            1 => Pauli::Y,
            _ => Pauli::Z,
        };
        bases.push(basis);
        let half = current.nrows() / 2;
        let r = basis_rotation(basis);
        // site under measurement is the most significant factor: 2x2 blocks
        let block = |a: usize, b: usize| current.view((a * half, b * half), (half, half));
        let mut blocks = [
            CMat::zeros(half, half),
            CMat::zeros(half, half),
            CMat::zeros(half, half),
            CMat::zeros(half, half),
        ];
        for a in 0..2 {
            for bidx in 0..2 {
                let mut acc = CMat::zeros(half, half);
                for i in 0..2 {
                    for j in 0..2 {
                        let coeff = r[(a, i)] * r[(bidx, j)].conj();
                        if coeff.norm_sqr() > 0.0 {
                            acc += block(i, j) * coeff;
                        }
                    }
                }
                blocks[2 * a + bidx] = acc;
            }
        }
        let p0 = blocks[0].trace().re.max(0.0);
        let p1 = blocks[3].trace().re.max(0.0);
        let total = p0 + p1;
        let outcome = if total <= 0.0 {
            (rng.random::<f64>() < 0.5) as u8
        } else if rng.random::<f64>() * total < p0 {
            0u8
        } else {
            1u8
        };
        outcomes.push(outcome);
        if step + 1 < n {
            let picked = if outcome == 0 { &blocks[0] } else { &blocks[3] };
            let tr = picked.trace().re;
            current = if tr > 0.0 {
                picked.scale(1.0 / tr)
            } else {
                CMat::identity(half, half).scale(1.0 / half as f64)
            };
        }
    }
    Snapshot { bases, outcomes }
}

/// Draw `count` shadow snapshots of `rho`.
pub fn sample_shadows<R: Rng>(
    rho: &CMat,
    sys: SiteSystem,
    count: usize,
    rng: &mut R,
) -> Result<ShadowBatch, ShadowError> {
    check_state(rho, sys)?;
    let mut batch = ShadowBatch::new(sys.n());
    if sys.n() <= JOINT_TABLE_MAX_QUBITS {
        let table = JointTable::build(rho, sys)?;
        for _ in 0..count {
            batch.push(table.draw(rng));
        }
    } else {
        for _ in 0..count {
            batch.push(sample_sequential(rho, sys, rng));
        }
    }
    Ok(batch)
}

/// Single-snapshot estimator of a Pauli string.
pub fn snapshot_value(snap: &Snapshot, obs: &PauliString) -> f64 {
    let mut sign = 1.0f64;
    for &(site, p) in obs.factors() {
        let idx = site - 1;
        if snap.bases[idx] != p {
            return 0.0;
        }
        if snap.outcomes[idx] == 1 {
            sign = -sign;
        }
    }
    sign * 3f64.powi(obs.weight() as i32)
}

/// Median of `k` near-equal contiguous batch means.
pub fn median_of_means(values: &[f64], k: usize) -> f64 {
    assert!(k >= 1 && values.len() >= k, "need at least k values");
    let n = values.len();
    let base = n / k;
    let rem = n % k;
    let mut means = Vec::with_capacity(k);
    let mut start = 0;
    for b in 0..k {
        let size = base + usize::from(b < rem);
        let chunk = &values[start..start + size];
        means.push(chunk.iter().sum::<f64>() / size as f64);
        start += size;
    }
    means.sort_by(f64::total_cmp);
    if k % 2 == 1 {
        means[k / 2]
    } else {
        0.5 * (means[k / 2 - 1] + means[k / 2])
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ObservableEstimate {
    pub label: String,
    pub estimate: f64,
    pub batch_means: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimateReport {
    pub snapshots: usize,
    pub batches: usize,
    pub estimates: Vec<ObservableEstimate>,
}

impl EstimateReport {
    pub fn values(&self) -> Vec<f64> {
        self.estimates.iter().map(|e| e.estimate).collect()
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), ShadowError> {
        let mut text = String::from("observable,estimate,snapshots,batches\n");
        for e in &self.estimates {
            text.push_str(&format!(
                "{},{:.17},{},{}\n",
                e.label, e.estimate, self.snapshots, self.batches
            ));
        }
        std::fs::write(path, text).map_err(|e| ShadowError::File {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

/// Median-of-means estimates for each observable from one shadow batch.
pub fn estimate(
    batch: &ShadowBatch,
    observables: &[PauliString],
    batches: usize,
) -> Result<EstimateReport, ShadowError> {
    if batch.len() < batches || batches == 0 {
        return Err(ShadowError::TooFewSnapshots {
            snapshots: batch.len(),
            batches,
        });
    }
    for obs in observables {
        if obs.max_site() > batch.n() {
            return Err(ShadowError::ObservableOutOfRange {
                label: obs.to_string(),
                n: batch.n(),
            });
        }
    }
    let estimates = observables
        .iter()
        .map(|obs| {
            let values: Vec<f64> = batch
                .snapshots()
                .iter()
                .map(|s| snapshot_value(s, obs))
                .collect();
            ObservableEstimate {
                label: obs.to_string(),
                estimate: median_of_means(&values, batches),
                batch_means: Vec::new(),
            }
        })
        .collect();
    Ok(EstimateReport {
        snapshots: batch.len(),
        batches,
        estimates,
    })
}

/// Plain empirical mean of diagonal Pauli strings over `+1/-1` spin samples;
/// the classical analogue of [`estimate`] for data from diagonal models.
pub fn estimate_diagonal(samples: &[Vec<i8>], obs: &PauliString) -> f64 {
    assert!(obs.is_diagonal(), "observable must be diagonal");
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| obs.eval_diagonal(s)).sum::<f64>() / samples.len() as f64
}
