//! Config-driven experiment commands shared by the `gibbstomo` binary and
//! the Python bindings.
//!
//! Each command reads one JSON config file, takes every random decision from
//! a single master seed, writes its data files under one output directory and
//! finishes with a `manifest.json` naming all of them. Re-running the same
//! config with the same seed rewrites the data files byte for byte; only the
//! manifest timestamp moves.
//!
//! Error discipline: anything wrong with the config or the files it
//! references is a config error (exit code 2) and is reported before any
//! computation starts. Failures after that point carry a stage tag and exit
//! with code 3.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::{
    brickwork_circuit, chain_maxent_reconstruct, windowed_observable_error, ChainEngine,
    ChainSpec,
};
use crate::commuting::{
    basis_covariance_pairs, bound_report, contraction_coefficient_max, correlation_fit,
    BoundReport, DecaySpec, InteractionHypergraph,
};
use crate::gibbs::{symmetric_divergence, BasisElementSpec, GibbsModel, HessianBackend, ModelFile};
use crate::operators::{trace_distance, CMat, PauliString, SiteSystem};
use crate::shadows::{estimate, estimate_diagonal, plan_samples, sample_shadows};
use crate::solver::{
    solve, AuditReport, Certificate, ExactEngineOracle, HaltReason, SolveResult, SolverOptions,
};
use crate::wasserstein::{tc_constant_local, tc_verify, TcReport, W1Mode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_STAGE: i32 = 3;

/// Largest brickwork depth the sweep accepts; the window dimension is
/// `2^(2 depth + 1)`.
const MAX_SWEEP_DEPTH: usize = 4;
/// Largest product reference for `tc-check` (dense `2^n` matrices).
const MAX_TC_PRODUCT_QUBITS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad config, bad flags, or missing/unreadable referenced files.
    #[error("config error: {0}")]
    Config(String),
    /// A pipeline stage failed after validation passed.
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Stage { .. } => EXIT_STAGE,
        }
    }

    fn stage(stage: &'static str, err: impl std::fmt::Display) -> CliError {
        CliError::Stage { stage, message: err.to_string() }
    }
}

/// Stable per-stage seed: the first eight little-endian bytes of
/// `sha256(le64(master) || label || le64(index))`.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is long enough"))
}

/// Two-sided Hoeffding figure for `m` empirical means of `count` values in
/// `[-1, 1]` at joint confidence `1 - delta`:
/// `sqrt(2 log(2 m / delta) / count)`.
pub fn hoeffding_linf_delta(count: usize, m: usize, delta: f64) -> f64 {
    (2.0 * (2.0 * m as f64 / delta).ln() / count as f64).sqrt()
}

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

fn default_c() -> f64 {
    11.0
}
fn default_max_iters() -> usize {
    200_000
}
fn default_trace_every() -> usize {
    1
}
fn default_samples() -> usize {
    1000
}
fn default_beta() -> f64 {
    1.0
}
fn default_depth() -> usize {
    3
}
fn default_confidence() -> f64 {
    0.05
}
fn default_perturbation() -> f64 {
    0.05
}
fn default_mu_scale() -> f64 {
    0.7
}

/// Top-level experiment description. One file drives one command; sections a
/// command does not use are simply absent. Unknown fields are rejected.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed. Mandatory, here or on the command line; runs never draw
    /// entropy from the clock.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Model file (.json or .toml), resolved relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainConfig>,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tc: Option<TcConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shadows: Option<ShadowsCmdConfig>,
}

/// Chain source: a spec file or a random draw from the master seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub periodic: bool,
}

/// How target expectations are produced.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EstimationConfig {
    /// Exact expectations from the engine; no statistical error.
    #[default]
    Exact,
    /// Classical shadows; quantum models with a Pauli basis only.
    Shadows {
        epsilon: f64,
        delta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        locality: Option<usize>,
        /// Replace the planned snapshot count (calibration experiments).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_override: Option<usize>,
    },
    /// Plain configuration samples; classical chains only.
    Samples {
        count: usize,
        /// Confidence for the Hoeffding error figure entering the
        /// certificate.
        #[serde(default = "default_confidence")]
        delta: f64,
    },
}

/// Solver knobs mapped onto [`SolverOptions`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    /// Stopping accuracy. When data is sampled this defaults to
    /// (estimation accuracy) / (4c + 1), which makes the stopping radius
    /// equal the statistical error without loosening the certificate; with
    /// exact data it defers to the oracle's own figure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_mu: Option<f64>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_trace_every")]
    pub trace_every: usize,
    #[serde(default)]
    pub audit: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            c: default_c(),
            u: None,
            delta_mu: None,
            max_iters: default_max_iters(),
            trace_every: default_trace_every(),
            audit: false,
        }
    }
}

impl SolverConfig {
    fn to_options(&self, e_hat_delta: f64) -> SolverOptions {
        let floor = (e_hat_delta > 0.0).then(|| e_hat_delta / (4.0 * self.c + 1.0));
        SolverOptions {
            c: self.c,
            u: self.u,
            delta_mu: self.delta_mu.or(floor),
            e_hat_delta,
            max_iters: self.max_iters,
            trace_every: self.trace_every,
            audit_progress: self.audit,
        }
    }
}

/// `fig-pinsker` sweep: chain sizes times seeds, one CSV row per pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub ns: Vec<usize>,
    pub seeds_per_n: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_confidence")]
    pub confidence_delta: f64,
    #[serde(default)]
    pub periodic: bool,
}

/// `bounds` command: Hessian sandwich reports over a grid of parameter
/// vectors, optionally swept over beta.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    /// Explicit grid of parameter vectors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mus: Option<Vec<Vec<f64>>>,
    /// Uniform random grid of this many points in the unit cube.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    /// Rebuild the model at each of these inverse temperatures and report at
    /// the file's lambda. Takes precedence over the mu grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    /// Contraction constant; searched at `contraction_site` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contraction_site: Option<usize>,
    /// Fit a covariance decay and use it for the upper bound.
    #[serde(default)]
    pub fit_decay: bool,
    /// Interaction hypergraph file; derived from the basis supports when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<PathBuf>,
}

/// `tc-check` command: transportation-cost verification over an ensemble of
/// perturbed states.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TcConfig {
    pub states: usize,
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// "hamming" (default) or "loc"; the `--w1-mode` flag overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w1_mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loc: Option<LocClassConfig>,
    /// Product reference `tau_p` on `n` qubits; otherwise the model file is
    /// the reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub product: Option<ProductConfig>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocClassConfig {
    pub k: usize,
    pub g: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductConfig {
    pub p: f64,
    pub n: usize,
}

/// `verify` command knobs. `corrupt_hessian` is a fault-injection hook that
/// exercises the failure path of the report; it has no place in real runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_mu_scale")]
    pub mu_scale: f64,
    #[serde(default)]
    pub corrupt_hessian: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { mu_scale: default_mu_scale(), corrupt_hessian: false }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShadowsCmdConfig {
    /// Also write the raw snapshot batch (can be large).
    #[serde(default)]
    pub save_snapshots: bool,
}

// ---------------------------------------------------------------------------
// Manifest and run context
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageSeed {
    pub label: String,
    pub index: u64,
    pub seed: u64,
}

/// Record of one run: what produced it, from which seed, and every file it
/// wrote (itself included). The timestamp is informational; no data file
/// depends on it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_sha256: String,
    pub master_seed: u64,
    pub created_unix: u64,
    pub stage_seeds: Vec<StageSeed>,
    pub outputs: Vec<String>,
}

/// Collects derived seeds and output files while a command runs, then writes
/// the manifest last.
struct RunContext {
    out_dir: PathBuf,
    command: &'static str,
    config_sha256: String,
    master_seed: u64,
    stage_seeds: Vec<StageSeed>,
    outputs: Vec<String>,
}

impl RunContext {
    fn new(prep: &Prepared) -> Result<RunContext, CliError> {
        fs::create_dir_all(&prep.out_dir).map_err(|e| {
            CliError::Config(format!("out dir `{}`: {e}", prep.out_dir.display()))
        })?;
        Ok(RunContext {
            out_dir: prep.out_dir.clone(),
            command: prep.kind.name(),
            config_sha256: prep.config_sha256.clone(),
            master_seed: prep.master_seed,
            stage_seeds: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn seed(&mut self, label: &str, index: u64) -> u64 {
        let seed = derive_seed(self.master_seed, label, index);
        self.stage_seeds.push(StageSeed { label: label.to_owned(), index, seed });
        seed
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        fs::write(self.out_dir.join(name), bytes)
            .map_err(|e| CliError::stage("report", format!("write `{name}`: {e}")))?;
        self.outputs.push(name.to_owned());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)
            .map_err(|e| CliError::stage("report", format!("serialize `{name}`: {e}")))?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    /// Declare a file a library-side writer produced under the out dir.
    fn declare(&mut self, name: &str) {
        self.outputs.push(name.to_owned());
    }

    fn finish(mut self) -> Result<String, CliError> {
        self.outputs.push("manifest.json".to_owned());
        let created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            command: self.command.to_owned(),
            config_sha256: self.config_sha256.clone(),
            master_seed: self.master_seed,
            created_unix,
            stage_seeds: std::mem::take(&mut self.stage_seeds),
            outputs: self.outputs.clone(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| CliError::stage("report", format!("serialize manifest: {e}")))?;
        bytes.push(b'\n');
        fs::write(self.out_dir.join("manifest.json"), bytes)
            .map_err(|e| CliError::stage("report", format!("write manifest: {e}")))?;
        Ok(format!(
            "{}: {} files in {}",
            self.command,
            self.outputs.len(),
            self.out_dir.display()
        ))
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommandKind {
    Reconstruct,
    Verify,
    FigPinsker,
    Bounds,
    TcCheck,
    Shadows,
}

impl CommandKind {
    fn name(self) -> &'static str {
        match self {
            CommandKind::Reconstruct => "reconstruct",
            CommandKind::Verify => "verify",
            CommandKind::FigPinsker => "fig-pinsker",
            CommandKind::Bounds => "bounds",
            CommandKind::TcCheck => "tc-check",
            CommandKind::Shadows => "shadows",
        }
    }
}

struct LoadedModel {
    model: GibbsModel,
    lambda: Vec<f64>,
    /// Present when every basis element is a Pauli string.
    paulis: Option<Vec<PauliString>>,
}

enum ChainSource {
    File(ChainSpec),
    Random { n: usize, beta: f64, periodic: bool },
}

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// A validated run: config parsed, overrides merged, every referenced file
/// loaded. Construction failures are config errors by definition; nothing
/// has been computed or written yet.
pub struct Prepared {
    pub kind: CommandKind,
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub out_dir: PathBuf,
    pub master_seed: u64,
    model: Option<LoadedModel>,
    chain: Option<ChainSource>,
    graph: Option<InteractionHypergraph>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_model(path: &Path) -> Result<LoadedModel, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!(
            "model-load: `{}` does not exist",
            path.display()
        )));
    }
    let file = ModelFile::load(path)
        .map_err(|e| CliError::Config(format!("model-load: `{}`: {e}", path.display())))?;
    if file.basis.is_empty() {
        return Err(CliError::Config(format!(
            "model-load: `{}` declares an empty basis",
            path.display()
        )));
    }
    let (model, lambda) = file
        .to_model()
        .map_err(|e| CliError::Config(format!("model-load: `{}`: {e}", path.display())))?;
    let paulis = file
        .basis
        .iter()
        .map(|b| match b {
            BasisElementSpec::Pauli(s) => PauliString::parse(s).ok(),
            BasisElementSpec::Explicit { .. } => None,
        })
        .collect::<Option<Vec<_>>>();
    Ok(LoadedModel { model, lambda: lambda.0, paulis })
}

fn load_chain(cc: &ChainConfig, base: &Path) -> Result<ChainSource, CliError> {
    if !(cc.beta > 0.0 && cc.beta.is_finite()) {
        return Err(CliError::Config(format!("chain beta = {} must be positive", cc.beta)));
    }
    match (&cc.spec, cc.n) {
        (Some(p), None) => {
            let path = resolve(base, p);
            if !path.exists() {
                return Err(CliError::Config(format!(
                    "chain-load: `{}` does not exist",
                    path.display()
                )));
            }
            let text = fs::read_to_string(&path).map_err(|e| {
                CliError::Config(format!("chain-load: `{}`: {e}", path.display()))
            })?;
            let raw: ChainSpec = serde_json::from_str(&text).map_err(|e| {
                CliError::Config(format!("chain-load: `{}`: {e}", path.display()))
            })?;
            // replay the constructor checks a hand-written file may violate
            let spec = ChainSpec::new(raw.n, raw.beta, raw.j, raw.h, raw.periodic)
                .map_err(|e| CliError::Config(format!("chain-load: `{}`: {e}", path.display())))?;
            Ok(ChainSource::File(spec))
        }
        (None, Some(n)) => {
            if n < 2 {
                return Err(CliError::Config(format!("chain n = {n} must be >= 2")));
            }
            Ok(ChainSource::Random { n, beta: cc.beta, periodic: cc.periodic })
        }
        _ => Err(CliError::Config(
            "chain config needs exactly one of `spec` and `n`".into(),
        )),
    }
}

fn validate_estimation(
    est: &EstimationConfig,
    model: Option<&LoadedModel>,
    chain: Option<&ChainSource>,
) -> Result<(), CliError> {
    match est {
        EstimationConfig::Exact => Ok(()),
        EstimationConfig::Shadows { epsilon, delta, locality, n_override } => {
            let lm = model.ok_or_else(|| {
                CliError::Config(
                    "shadow estimation applies to quantum models; use `samples` for chains"
                        .into(),
                )
            })?;
            if chain.is_some() {
                return Err(CliError::Config(
                    "shadow estimation applies to quantum models; use `samples` for chains"
                        .into(),
                ));
            }
            let paulis = lm.paulis.as_ref().ok_or_else(|| {
                CliError::Config("shadow estimation needs an all-Pauli basis".into())
            })?;
            if !(*epsilon > 0.0 && epsilon.is_finite()) {
                return Err(CliError::Config(format!("epsilon = {epsilon} must be positive")));
            }
            if !(*delta > 0.0 && *delta < 1.0) {
                return Err(CliError::Config(format!("delta = {delta} must lie in (0, 1)")));
            }
            let max_weight = paulis.iter().map(|p| p.weight()).max().unwrap_or(1);
            let locality = locality.unwrap_or(max_weight);
            if locality < max_weight {
                return Err(CliError::Config(format!(
                    "locality = {locality} below the largest basis weight {max_weight}"
                )));
            }
            let plan = plan_samples(lm.model.m(), locality, *epsilon, *delta)
                .map_err(|e| CliError::Config(format!("sampling plan: {e}")))?;
            if let Some(n) = n_override {
                if *n < plan.batches {
                    return Err(CliError::Config(format!(
                        "n_override = {n} below the batch count {}",
                        plan.batches
                    )));
                }
            }
            Ok(())
        }
        EstimationConfig::Samples { count, delta } => {
            if chain.is_none() || model.is_some() {
                return Err(CliError::Config(
                    "sample estimation applies to classical chains".into(),
                ));
            }
            if *count == 0 {
                return Err(CliError::Config("samples count must be >= 1".into()));
            }
            if !(*delta > 0.0 && *delta < 1.0) {
                return Err(CliError::Config(format!("delta = {delta} must lie in (0, 1)")));
            }
            Ok(())
        }
    }
}

fn validate_sweep(sweep: &SweepConfig) -> Result<(), CliError> {
    if sweep.ns.is_empty() {
        return Err(CliError::Config("sweep `ns` must be non-empty".into()));
    }
    for &n in &sweep.ns {
        if n < 2 {
            return Err(CliError::Config(format!("sweep n = {n} must be >= 2")));
        }
    }
    if sweep.seeds_per_n == 0 {
        return Err(CliError::Config("sweep `seeds_per_n` must be >= 1".into()));
    }
    if sweep.samples == 0 {
        return Err(CliError::Config("sweep `samples` must be >= 1".into()));
    }
    if !(sweep.beta > 0.0 && sweep.beta.is_finite()) {
        return Err(CliError::Config(format!("sweep beta = {} must be positive", sweep.beta)));
    }
    if sweep.depth > MAX_SWEEP_DEPTH {
        return Err(CliError::Config(format!(
            "sweep depth = {} above the cap {MAX_SWEEP_DEPTH}",
            sweep.depth
        )));
    }
    if !(sweep.confidence_delta > 0.0 && sweep.confidence_delta < 1.0) {
        return Err(CliError::Config(format!(
            "sweep confidence_delta = {} must lie in (0, 1)",
            sweep.confidence_delta
        )));
    }
    Ok(())
}

fn validate_bounds(bc: &BoundsConfig, lm: &LoadedModel) -> Result<(), CliError> {
    let model = &lm.model;
    if !model.is_commuting() {
        return Err(CliError::Config(
            "bounds requires a commuting model (closed forms are commuting-only)".into(),
        ));
    }
    crate::commuting::check_orthogonal_traceless_basis(model)
        .map_err(|e| CliError::Config(format!("bounds basis check: {e}")))?;
    let sources =
        usize::from(bc.mus.is_some()) + usize::from(bc.grid_points.is_some()) + usize::from(bc.betas.is_some());
    if sources == 0 {
        return Err(CliError::Config(
            "bounds needs one of `mus`, `grid_points`, `betas`".into(),
        ));
    }
    if let Some(mus) = &bc.mus {
        if mus.is_empty() {
            return Err(CliError::Config("bounds `mus` must be non-empty".into()));
        }
        for (i, mu) in mus.iter().enumerate() {
            if mu.len() != model.m() {
                return Err(CliError::Config(format!(
                    "bounds mu[{i}] has {} entries, expected {}",
                    mu.len(),
                    model.m()
                )));
            }
            for &v in mu {
                if !v.is_finite() || v.abs() > 1.0 + 1e-12 {
                    return Err(CliError::Config(format!(
                        "bounds mu[{i}] entry {v} outside the unit ball"
                    )));
                }
            }
        }
    }
    if let Some(g) = bc.grid_points {
        if g == 0 {
            return Err(CliError::Config("bounds `grid_points` must be >= 1".into()));
        }
    }
    if let Some(betas) = &bc.betas {
        if betas.is_empty() {
            return Err(CliError::Config("bounds `betas` must be non-empty".into()));
        }
        for &b in betas {
            if !(b > 0.0 && b.is_finite()) {
                return Err(CliError::Config(format!("bounds beta = {b} must be positive")));
            }
        }
    }
    if let Some(c) = bc.c_beta {
        if !(0.0..1.0).contains(&c) {
            return Err(CliError::Config(format!("bounds c_beta = {c} must lie in [0, 1)")));
        }
    }
    if let Some(site) = bc.contraction_site {
        if site == 0 || site > model.sys().n() {
            return Err(CliError::Config(format!(
                "bounds contraction_site = {site} outside 1..={}",
                model.sys().n()
            )));
        }
    }
    Ok(())
}

fn validate_tc(tc: &TcConfig, model: Option<&LoadedModel>) -> Result<(), CliError> {
    if tc.states == 0 {
        return Err(CliError::Config("tc `states` must be >= 1".into()));
    }
    if !(tc.perturbation > 0.0 && tc.perturbation.is_finite()) {
        return Err(CliError::Config(format!(
            "tc perturbation = {} must be positive",
            tc.perturbation
        )));
    }
    if let Some(a) = tc.alpha {
        if !(a > 0.0 && a.is_finite()) {
            return Err(CliError::Config(format!("tc alpha = {a} must be positive")));
        }
    }
    if let Some(mode) = &tc.w1_mode {
        if mode != "hamming" && mode != "loc" {
            return Err(CliError::Config(format!(
                "tc w1_mode `{mode}` unknown (hamming | loc)"
            )));
        }
    }
    if let Some(lc) = &tc.loc {
        if lc.k == 0 || !(lc.g > 0.0 && lc.g.is_finite()) {
            return Err(CliError::Config(format!(
                "tc loc needs k >= 1 and g > 0, got k = {}, g = {}",
                lc.k, lc.g
            )));
        }
    }
    match (&tc.product, model) {
        (Some(pc), None) => {
            if !(pc.p > 0.0 && pc.p < 1.0) {
                return Err(CliError::Config(format!("tc product p = {} must lie in (0, 1)", pc.p)));
            }
            if pc.n == 0 || pc.n > MAX_TC_PRODUCT_QUBITS {
                return Err(CliError::Config(format!(
                    "tc product n = {} outside 1..={MAX_TC_PRODUCT_QUBITS}",
                    pc.n
                )));
            }
            Ok(())
        }
        (None, Some(_)) => Ok(()),
        (Some(_), Some(_)) => Err(CliError::Config(
            "tc-check takes either `tc.product` or a top-level `model`, not both".into(),
        )),
        (None, None) => Err(CliError::Config(
            "tc-check needs a reference state: `tc.product` or a top-level `model`".into(),
        )),
    }
}

/// Parse, merge overrides, and validate everything the command will need.
pub fn prepare(
    kind: CommandKind,
    config_path: &Path,
    over: &Overrides,
) -> Result<Prepared, CliError> {
    let bytes = fs::read(config_path)
        .map_err(|e| CliError::Config(format!("read `{}`: {e}", config_path.display())))?;
    let config_sha256 = hex_digest(&bytes);
    let mut config: ExperimentConfig = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Config(format!("parse `{}`: {e}", config_path.display())))?;
    if let Some(s) = over.seed {
        config.seed = Some(s);
    }
    if let Some(o) = &over.out {
        config.out_dir = Some(o.clone());
    }
    if let Some(t) = over.threads {
        config.threads = Some(t);
    }
    if let Some(t) = config.threads {
        if t == 0 {
            return Err(CliError::Config("threads must be >= 1".into()));
        }
    }
    let master_seed = config.seed.ok_or_else(|| {
        CliError::Config("master seed required (config `seed` or --seed)".into())
    })?;
    let out_dir = config
        .out_dir
        .clone()
        .ok_or_else(|| CliError::Config("no output directory (config `out_dir` or --out)".into()))?;

    let base = config_path.parent().unwrap_or_else(|| Path::new("."));
    let model = match &config.model {
        Some(p) => Some(load_model(&resolve(base, p))?),
        None => None,
    };
    let chain = match &config.chain {
        Some(cc) => Some(load_chain(cc, base)?),
        None => None,
    };
    let graph = match config.bounds.as_ref().and_then(|b| b.graph.as_ref()) {
        Some(p) => {
            let path = resolve(base, p);
            if !path.exists() {
                return Err(CliError::Config(format!(
                    "graph-load: `{}` does not exist",
                    path.display()
                )));
            }
            Some(InteractionHypergraph::load(&path).map_err(|e| {
                CliError::Config(format!("graph-load: `{}`: {e}", path.display()))
            })?)
        }
        None => None,
    };

    match kind {
        CommandKind::Reconstruct => {
            match (&model, &chain) {
                (Some(_), None) | (None, Some(_)) => {}
                _ => {
                    return Err(CliError::Config(
                        "reconstruct needs exactly one of `model` and `chain`".into(),
                    ))
                }
            }
            validate_estimation(&config.estimation, model.as_ref(), chain.as_ref())?;
        }
        CommandKind::Verify => {
            if model.is_none() {
                return Err(CliError::Config("verify needs a `model`".into()));
            }
            let vc = config.verify.clone().unwrap_or_default();
            if !(vc.mu_scale > 0.0 && vc.mu_scale <= 1.0) {
                return Err(CliError::Config(format!(
                    "verify mu_scale = {} must lie in (0, 1]",
                    vc.mu_scale
                )));
            }
        }
        CommandKind::FigPinsker => {
            let sweep = config
                .sweep
                .as_ref()
                .ok_or_else(|| CliError::Config("fig-pinsker needs a `sweep` section".into()))?;
            validate_sweep(sweep)?;
        }
        CommandKind::Bounds => {
            let bc = config
                .bounds
                .as_ref()
                .ok_or_else(|| CliError::Config("bounds needs a `bounds` section".into()))?;
            let lm = model
                .as_ref()
                .ok_or_else(|| CliError::Config("bounds needs a `model`".into()))?;
            validate_bounds(bc, lm)?;
        }
        CommandKind::TcCheck => {
            let tc = config
                .tc
                .as_ref()
                .ok_or_else(|| CliError::Config("tc-check needs a `tc` section".into()))?;
            validate_tc(tc, model.as_ref())?;
        }
        CommandKind::Shadows => {
            if model.is_none() {
                return Err(CliError::Config("shadows needs a `model`".into()));
            }
            match &config.estimation {
                EstimationConfig::Shadows { .. } => {
                    validate_estimation(&config.estimation, model.as_ref(), None)?;
                }
                _ => {
                    return Err(CliError::Config(
                        "shadows needs estimation mode `shadows`".into(),
                    ))
                }
            }
        }
    }

    Ok(Prepared {
        kind,
        config,
        config_sha256,
        out_dir,
        master_seed,
        model,
        chain,
        graph,
    })
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

// ---------------------------------------------------------------------------
// reconstruct
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ReconstructReport<'a> {
    estimation: &'a str,
    e_hat: &'a [f64],
    e_hat_delta: f64,
    mu: &'a [f64],
    iterations: usize,
    halt: HaltReason,
    final_residual: f64,
    certificate: &'a Certificate,
    #[serde(skip_serializing_if = "Option::is_none")]
    audit: Option<&'a AuditReport>,
}

fn write_solver_outputs(
    ctx: &mut RunContext,
    estimation: &str,
    e_hat: &[f64],
    e_hat_delta: f64,
    result: &SolveResult,
) -> Result<(), CliError> {
    let mut csv = String::from("iter,residual,step_inf,objective\n");
    for t in &result.trace {
        let obj = t.objective.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{},{}", t.iter, t.residual, t.step_inf, obj);
    }
    ctx.write_bytes("trajectory.csv", csv.as_bytes())?;
    ctx.write_json(
        "result.json",
        &ReconstructReport {
            estimation,
            e_hat,
            e_hat_delta,
            mu: &result.mu,
            iterations: result.iterations,
            halt: result.halt,
            final_residual: result.final_residual,
            certificate: &result.certificate,
            audit: result.audit.as_ref(),
        },
    )
}

fn reconstruct_model(prep: &Prepared, lm: &LoadedModel, ctx: &mut RunContext) -> Result<(), CliError> {
    let model = &lm.model;
    let (e_hat, e_hat_delta, label): (Vec<f64>, f64, &str) = match &prep.config.estimation {
        EstimationConfig::Exact => (
            model
                .expectations(&lm.lambda)
                .map_err(|e| CliError::stage("estimate", e))?
                .0,
            0.0,
            "exact",
        ),
        EstimationConfig::Shadows { epsilon, delta, locality, n_override } => {
            let paulis = lm.paulis.as_ref().expect("validated in prepare");
            let max_weight = paulis.iter().map(|p| p.weight()).max().unwrap_or(1);
            let locality = locality.unwrap_or(max_weight);
            let plan = plan_samples(model.m(), locality, *epsilon, *delta)
                .map_err(|e| CliError::stage("estimate", e))?;
            let count = n_override.unwrap_or(plan.snapshots);
            let rho = model
                .gibbs_state(&lm.lambda)
                .map_err(|e| CliError::stage("estimate", e))?;
            let mut rng = ChaCha12Rng::seed_from_u64(ctx.seed("estimate", 0));
            let batch = sample_shadows(rho.matrix(), model.sys(), count, &mut rng)
                .map_err(|e| CliError::stage("estimate", e))?;
            let report = estimate(&batch, paulis, plan.batches)
                .map_err(|e| CliError::stage("estimate", e))?;
            (report.values(), *epsilon, "shadows")
        }
        EstimationConfig::Samples { .. } => unreachable!("validated in prepare"),
    };
    let options = prep.config.solver.to_options(e_hat_delta);
    let mut oracle = ExactEngineOracle::new(model.clone());
    let result = solve(&mut oracle, &e_hat, &options).map_err(|e| CliError::stage("solve", e))?;
    write_solver_outputs(ctx, label, &e_hat, e_hat_delta, &result)?;
    ctx.write_json("model_recon.json", &ModelFile::from_model(model, &result.mu))
}

fn reconstruct_chain(
    prep: &Prepared,
    source: &ChainSource,
    ctx: &mut RunContext,
) -> Result<(), CliError> {
    let spec = match source {
        ChainSource::File(spec) => spec.clone(),
        ChainSource::Random { n, beta, periodic } => {
            let mut rng = ChaCha12Rng::seed_from_u64(ctx.seed("chain", 0));
            ChainSpec::random(*n, *beta, *periodic, &mut rng)
        }
    };
    let engine = ChainEngine::new(spec.clone());
    let strings = spec.basis_strings();
    let (e_hat, e_hat_delta, label): (Vec<f64>, f64, &str) = match &prep.config.estimation {
        EstimationConfig::Exact => (engine.expectations(), 0.0, "exact"),
        EstimationConfig::Samples { count, delta } => {
            let mut rng = ChaCha12Rng::seed_from_u64(ctx.seed("estimate", 0));
            let samples = engine.sample(*count, &mut rng);
            let e = strings.iter().map(|s| estimate_diagonal(&samples, s)).collect();
            (e, hoeffding_linf_delta(*count, strings.len(), *delta), "samples")
        }
        EstimationConfig::Shadows { .. } => unreachable!("validated in prepare"),
    };
    let options = prep.config.solver.to_options(e_hat_delta);
    let recon = chain_maxent_reconstruct(spec.n, spec.beta, spec.periodic, &e_hat, &options)
        .map_err(|e| CliError::stage("solve", e))?;
    write_solver_outputs(ctx, label, &e_hat, e_hat_delta, &recon.result)?;
    ctx.write_json("chain_true.json", &spec)?;
    ctx.write_json("chain_recon.json", &recon.spec)
}

pub fn run_reconstruct(prep: &Prepared) -> Result<String, CliError> {
    let mut ctx = RunContext::new(prep)?;
    match (&prep.model, &prep.chain) {
        (Some(lm), None) => reconstruct_model(prep, lm, &mut ctx)?,
        (None, Some(cs)) => reconstruct_chain(prep, cs, &mut ctx)?,
        _ => unreachable!("validated in prepare"),
    }
    ctx.finish()
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct VerifyItem {
    name: &'static str,
    pass: bool,
    value: f64,
    bound: f64,
    detail: String,
}

#[derive(Serialize)]
struct VerifyReport {
    mu: Vec<f64>,
    items: Vec<VerifyItem>,
    all_pass: bool,
}

/// Invariant suite on a model file. Failed checks are report content, not
/// process errors; the run still exits 0.
pub fn run_verify(prep: &Prepared) -> Result<String, CliError> {
    let lm = prep.model.as_ref().expect("validated in prepare");
    let vc = prep.config.verify.clone().unwrap_or_default();
    let mut ctx = RunContext::new(prep)?;
    let model = &lm.model;
    let m = model.m();
    let beta = model.beta();
    let stage = "invariants";
    let mut rng = ChaCha12Rng::seed_from_u64(ctx.seed("verify", 0));
    let mu: Vec<f64> = (0..m).map(|_| rng.random_range(-vc.mu_scale..=vc.mu_scale)).collect();
    let mut items = Vec::new();

    let div = symmetric_divergence(model, &lm.lambda, &mu).map_err(|e| CliError::stage(stage, e))?;
    let tol = 1e-8 * div.sum.abs().max(1.0);
    items.push(VerifyItem {
        name: "entropy_identity",
        pass: div.residual <= tol,
        value: div.residual,
        bound: tol,
        detail: format!("d_sym = {}", div.sum),
    });

    let e_target = model
        .expectations(&lm.lambda)
        .map_err(|e| CliError::stage(stage, e))?
        .0;
    let grad = model
        .dual_gradient(&mu, &e_target)
        .map_err(|e| CliError::stage(stage, e))?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..m {
        let mut hi = mu.clone();
        hi[i] += h;
        let mut lo = mu.clone();
        lo[i] -= h;
        let fhi = model.dual_objective(&hi, &e_target).map_err(|e| CliError::stage(stage, e))?;
        let flo = model.dual_objective(&lo, &e_target).map_err(|e| CliError::stage(stage, e))?;
        worst = worst.max(((fhi - flo) / (2.0 * h) - grad[i]).abs());
    }
    items.push(VerifyItem {
        name: "gradient_fd",
        pass: worst <= 1e-6,
        value: worst,
        bound: 1e-6,
        detail: format!("central differences, step {h}"),
    });

    let mut hess = model
        .dual_hessian(&mu, HessianBackend::Spectral)
        .map_err(|e| CliError::stage(stage, e))?;
    let cap = 2.0 * beta * beta * m as f64;
    if vc.corrupt_hessian {
        hess[(0, 0)] += 10.0 * cap.max(1.0);
    }
    let eig = hess.symmetric_eigen();
    let mut lmin = f64::INFINITY;
    let mut lmax = f64::NEG_INFINITY;
    for &v in eig.eigenvalues.iter() {
        lmin = lmin.min(v);
        lmax = lmax.max(v);
    }
    items.push(VerifyItem {
        name: "hessian_sandwich",
        pass: lmax <= cap + 1e-9 && lmin >= -1e-9,
        value: lmax,
        bound: cap + 1e-9,
        detail: format!("lambda_min = {lmin}"),
    });

    let s_lambda = model.gibbs_state(&lm.lambda).map_err(|e| CliError::stage(stage, e))?;
    let s_mu = model.gibbs_state(&mu).map_err(|e| CliError::stage(stage, e))?;
    let t = trace_distance(s_lambda.matrix(), s_mu.matrix());
    items.push(VerifyItem {
        name: "pinsker",
        pass: t * t <= div.sum + 1e-12,
        value: t * t,
        bound: div.sum + 1e-12,
        detail: format!("trace distance = {t}"),
    });

    let all_pass = items.iter().all(|i| i.pass);
    ctx.write_json("verify_report.json", &VerifyReport { mu, items, all_pass })?;
    ctx.finish()
}

// ---------------------------------------------------------------------------
// fig-pinsker
// ---------------------------------------------------------------------------

#[derive(Clone, Serialize)]
struct SweepRow {
    n: usize,
    seed_index: usize,
    row_seed: u64,
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_true: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_recon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    d_sym_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    halt: Option<HaltReason>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_residual: Option<f64>,
}

fn failed_row(n: usize, seed_index: usize, row_seed: u64, message: String) -> SweepRow {
    SweepRow {
        n,
        seed_index,
        row_seed,
        status: message.replace(',', ";").replace('\n', " "),
        mean_true: None,
        mean_recon: None,
        error: None,
        d_sym_bound: None,
        bound: None,
        iterations: None,
        halt: None,
        final_residual: None,
    }
}

fn sweep_row(
    sweep: &SweepConfig,
    solver: &SolverConfig,
    n: usize,
    seed_index: usize,
    row_seed: u64,
) -> SweepRow {
    let mut rng = ChaCha12Rng::seed_from_u64(row_seed);
    let spec = ChainSpec::random(n, sweep.beta, sweep.periodic, &mut rng);
    let truth = ChainEngine::new(spec.clone());
    let samples = truth.sample(sweep.samples, &mut rng);
    let strings = spec.basis_strings();
    let e_hat: Vec<f64> = strings.iter().map(|s| estimate_diagonal(&samples, s)).collect();
    let e_hat_delta = hoeffding_linf_delta(sweep.samples, strings.len(), sweep.confidence_delta);
    let mut options = solver.to_options(e_hat_delta);
    options.trace_every = 0;
    let recon = match chain_maxent_reconstruct(spec.n, spec.beta, spec.periodic, &e_hat, &options) {
        Ok(r) => r,
        Err(e) => return failed_row(n, seed_index, row_seed, format!("solve: {e}")),
    };
    let circuit = brickwork_circuit(n, sweep.depth, &mut rng);
    let recon_engine = ChainEngine::new(recon.spec.clone());
    let werr = match windowed_observable_error(&truth, &recon_engine, &circuit) {
        Ok(w) => w,
        Err(e) => return failed_row(n, seed_index, row_seed, format!("window: {e}")),
    };
    let cert = &recon.result.certificate;
    // Pinsker chain: the observable is an average of conjugated Z's, so
    // |<O>_true - <O>_recon| <= ||O|| ||Delta||_1 <= 2 sqrt(D_sym) with
    // ||O|| <= 1.
    let bound = 2.0 * cert.d_sym_bound.sqrt();
    SweepRow {
        n,
        seed_index,
        row_seed,
        status: "ok".into(),
        mean_true: Some(werr.mean_true),
        mean_recon: Some(werr.mean_recon),
        error: Some(werr.error),
        d_sym_bound: Some(cert.d_sym_bound),
        bound: Some(bound),
        iterations: Some(recon.result.iterations),
        halt: Some(recon.result.halt),
        final_residual: Some(recon.result.final_residual),
    }
}

fn opt_cell<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// Chain sweep behind the flatness figure: per (n, seed) draw a chain,
/// sample it, reconstruct, and compare the windowed-observable error with
/// the certified bound. Rows run in parallel; writing stays in row order,
/// and a failed row is recorded without stopping the sweep.
pub fn run_fig_pinsker(prep: &Prepared) -> Result<String, CliError> {
    let sweep = prep.config.sweep.as_ref().expect("validated in prepare");
    let mut ctx = RunContext::new(prep)?;
    let mut tasks = Vec::new();
    let mut row = 0u64;
    for &n in &sweep.ns {
        for s in 0..sweep.seeds_per_n {
            tasks.push((n, s, ctx.seed("row", row)));
            row += 1;
        }
    }
    let solver = &prep.config.solver;
    let rows: Vec<SweepRow> = tasks
        .par_iter()
        .map(|&(n, s, seed)| sweep_row(sweep, solver, n, s, seed))
        .collect();
    let mut csv = String::from(
        "n,seed,mean_true,mean_recon,error,d_sym_bound,bound,iterations,halt,final_residual,status\n",
    );
    for r in &rows {
        let halt = r.halt.map(|h| format!("{h:?}")).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.n,
            r.seed_index,
            opt_cell(&r.mean_true),
            opt_cell(&r.mean_recon),
            opt_cell(&r.error),
            opt_cell(&r.d_sym_bound),
            opt_cell(&r.bound),
            opt_cell(&r.iterations),
            halt,
            opt_cell(&r.final_residual),
            r.status
        );
    }
    ctx.write_bytes("fig_pinsker.csv", csv.as_bytes())?;
    ctx.write_json("fig_pinsker.json", &rows)?;
    ctx.finish()
}

// ---------------------------------------------------------------------------
// bounds
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct BoundsRow {
    index: usize,
    beta: f64,
    mu: Vec<f64>,
    c_beta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    decay: Option<DecaySpec>,
    report: BoundReport,
}

/// Per-beta pieces shared by all grid points at that temperature.
struct BetaContext {
    beta: f64,
    model: GibbsModel,
    c_beta: f64,
    decay: Option<DecaySpec>,
}

fn beta_context(
    prep: &Prepared,
    lm: &LoadedModel,
    graph: &InteractionHypergraph,
    beta: f64,
    ctx: &mut RunContext,
    cache_index: u64,
) -> Result<BetaContext, CliError> {
    let bc = prep.config.bounds.as_ref().expect("validated in prepare");
    let base = &lm.model;
    let model = if beta == base.beta() {
        base.clone()
    } else {
        GibbsModel::new(base.sys(), beta, base.basis().to_vec())
            .map_err(|e| CliError::stage("model", e))?
    };
    let c_beta = match bc.c_beta {
        Some(c) => c,
        None => {
            let site = bc.contraction_site.unwrap_or_else(|| busiest_site(&model));
            contraction_coefficient_max(&model, site, ctx.seed("contraction", cache_index))
                .map_err(|e| CliError::stage("contraction", e))?
                .c_max
        }
    };
    let decay = if bc.fit_decay {
        let sigma = model.gibbs_state(&lm.lambda).map_err(|e| CliError::stage("decay", e))?;
        let pairs = basis_covariance_pairs(&model, graph).map_err(|e| CliError::stage("decay", e))?;
        Some(
            correlation_fit(model.sys(), sigma.matrix(), &pairs)
                .map_err(|e| CliError::stage("decay", e))?
                .decay,
        )
    } else {
        None
    };
    Ok(BetaContext { beta, model, c_beta, decay })
}

/// Site appearing in the most basis supports; ties break toward site 1.
fn busiest_site(model: &GibbsModel) -> usize {
    let n = model.sys().n();
    let mut counts = vec![0usize; n + 1];
    for op in model.basis() {
        for &s in op.support() {
            counts[s] += 1;
        }
    }
    (1..=n).max_by_key(|&s| counts[s]).unwrap_or(1)
}

/// Hessian sandwich reports for a commuting model across a parameter grid.
pub fn run_bounds(prep: &Prepared) -> Result<String, CliError> {
    let bc = prep.config.bounds.as_ref().expect("validated in prepare");
    let lm = prep.model.as_ref().expect("validated in prepare");
    let mut ctx = RunContext::new(prep)?;
    let base = &lm.model;
    let graph = match &prep.graph {
        Some(g) => g.clone(),
        None => {
            let supports: Vec<Vec<usize>> =
                base.basis().iter().map(|op| op.support().to_vec()).collect();
            InteractionHypergraph::from_supports(base.sys().n(), &supports)
                .map_err(|e| CliError::stage("graph", e))?
        }
    };

    let mut points: Vec<(f64, Vec<f64>)> = Vec::new();
    if let Some(betas) = &bc.betas {
        for &b in betas {
            points.push((b, lm.lambda.clone()));
        }
    } else if let Some(mus) = &bc.mus {
        for mu in mus {
            points.push((base.beta(), mu.clone()));
        }
    } else {
        let count = bc.grid_points.expect("validated in prepare");
        let mut rng = ChaCha12Rng::seed_from_u64(ctx.seed("grid", 0));
        for _ in 0..count {
            points.push((
                base.beta(),
                (0..base.m()).map(|_| rng.random_range(-1.0..=1.0)).collect(),
            ));
        }
    }

    let mut contexts: Vec<BetaContext> = Vec::new();
    let mut rows = Vec::with_capacity(points.len());
    let mut csv = String::from(
        "index,beta,c_beta,lambda_min,lambda_max,L_bound,U_bound,condition_number\n",
    );
    for (index, (beta, mu)) in points.iter().enumerate() {
        if !contexts.iter().any(|c| c.beta == *beta) {
            let cache_index = contexts.len() as u64;
            contexts.push(beta_context(prep, lm, &graph, *beta, &mut ctx, cache_index)?);
        }
        let bctx = contexts.iter().find(|c| c.beta == *beta).expect("just inserted");
        let report = bound_report(&bctx.model, mu, &graph, bctx.c_beta, bctx.decay.as_ref())
            .map_err(|e| CliError::stage("bounds", e))?;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            index,
            beta,
            bctx.c_beta,
            report.lambda_min,
            report.lambda_max,
            report.l_bound,
            report.u_bound,
            report.condition_number
        );
        rows.push(BoundsRow {
            index,
            beta: *beta,
            mu: mu.clone(),
            c_beta: bctx.c_beta,
            decay: bctx.decay,
            report,
        });
    }
    ctx.write_bytes("bounds.csv", csv.as_bytes())?;
    ctx.write_json("bounds.json", &rows)?;
    ctx.finish()
}

// ---------------------------------------------------------------------------
// tc-check
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TcCheckReport<'a> {
    mode: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    loc: Option<LocClassConfig>,
    perturbation: f64,
    #[serde(flatten)]
    report: &'a TcReport,
}

/// `(1-p_i, p_i)` per site, tensored into one diagonal density matrix.
fn product_diag_state(ps: &[f64]) -> CMat {
    let mut out = CMat::identity(1, 1);
    for &p in ps {
        let site = CMat::from_diagonal(&DVector::from_vec(vec![
            Complex64::new(1.0 - p, 0.0),
            Complex64::new(p, 0.0),
        ]));
        out = out.kronecker(&site);
    }
    out
}

/// Transportation-cost verification over an ensemble of perturbed states.
pub fn run_tc_check(
    prep: &Prepared,
    flag_alpha: Option<f64>,
    flag_mode: Option<W1ModeArg>,
) -> Result<String, CliError> {
    let tc = prep.config.tc.as_ref().expect("validated in prepare");
    let mode_name = match flag_mode {
        Some(W1ModeArg::Hamming) => "hamming",
        Some(W1ModeArg::Loc) => "loc",
        None => tc.w1_mode.as_deref().unwrap_or("hamming"),
    };
    let mode = match mode_name {
        "hamming" => W1Mode::Hamming,
        "loc" => {
            let lc = tc.loc.ok_or_else(|| {
                CliError::Config("w1 mode `loc` needs the `loc` section with k and g".into())
            })?;
            W1Mode::Local { k: lc.k, g: lc.g }
        }
        other => {
            return Err(CliError::Config(format!("unknown w1 mode `{other}` (hamming | loc)")))
        }
    };
    if let Some(a) = flag_alpha {
        if !(a > 0.0 && a.is_finite()) {
            return Err(CliError::Config(format!("--tc-alpha {a} must be positive")));
        }
    }
    let beta = prep.model.as_ref().map(|lm| lm.model.beta());
    let alpha = match (flag_alpha.or(tc.alpha), &mode) {
        (Some(a), _) => a,
        (None, W1Mode::Hamming) => 0.5,
        (None, W1Mode::Local { k, g }) => {
            let beta = beta.ok_or_else(|| {
                CliError::Config(
                    "deriving alpha for `loc` needs a model's beta; set `alpha` explicitly for product references"
                        .into(),
                )
            })?;
            let constant = tc_constant_local(*k, *g, beta)
                .map_err(|e| CliError::Config(format!("tc constant: {e}")))?;
            1.0 / (2.0 * constant.tc_factor * constant.tc_factor)
        }
    };

    let mut ctx = RunContext::new(prep)?;
    let (sys, sigma): (SiteSystem, CMat) = match (&tc.product, &prep.model) {
        (Some(pc), None) => {
            let sys = SiteSystem::qubits(pc.n).map_err(|e| CliError::stage("reference", e))?;
            (sys, product_diag_state(&vec![pc.p; pc.n]))
        }
        (None, Some(lm)) => {
            let state = lm
                .model
                .gibbs_state(&lm.lambda)
                .map_err(|e| CliError::stage("reference", e))?;
            (lm.model.sys(), state.matrix().clone())
        }
        _ => unreachable!("validated in prepare"),
    };

    let mut ensemble = Vec::with_capacity(tc.states);
    for i in 0..tc.states {
        let mut rng = ChaCha12Rng::seed_from_u64(ctx.seed("state", i as u64));
        let rho = match (&tc.product, &prep.model) {
            (Some(pc), None) => {
                let ps: Vec<f64> = (0..pc.n)
                    .map(|_| {
                        (pc.p + rng.random_range(-tc.perturbation..=tc.perturbation))
                            .clamp(1e-6, 1.0 - 1e-6)
                    })
                    .collect();
                product_diag_state(&ps)
            }
            (None, Some(lm)) => {
                let lam: Vec<f64> = lm
                    .lambda
                    .iter()
                    .map(|&l| {
                        (l + rng.random_range(-tc.perturbation..=tc.perturbation)).clamp(-1.0, 1.0)
                    })
                    .collect();
                lm.model
                    .gibbs_state(&lam)
                    .map_err(|e| CliError::stage("ensemble", e))?
                    .matrix()
                    .clone()
            }
            _ => unreachable!("validated in prepare"),
        };
        ensemble.push(rho);
    }

    let report = tc_verify(sys, &sigma, &ensemble, alpha, mode)
        .map_err(|e| CliError::stage("tc", e))?;
    let mut csv = String::from("state,w1_lower,w1_upper,D,tc_rhs,violated\n");
    for (i, s) in report.states.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            i, s.w1_lower, s.w1_upper, s.relative_entropy, s.tc_rhs, s.violated
        );
    }
    ctx.write_bytes("tc_report.csv", csv.as_bytes())?;
    ctx.write_json(
        "tc_report.json",
        &TcCheckReport {
            mode: mode_name,
            loc: match mode {
                W1Mode::Local { k, g } => Some(LocClassConfig { k, g }),
                W1Mode::Hamming => None,
            },
            perturbation: tc.perturbation,
            report: &report,
        },
    )?;
    ctx.finish()
}

// ---------------------------------------------------------------------------
// shadows
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct PlanReport {
    m: usize,
    locality: usize,
    epsilon: f64,
    delta: f64,
    snapshots: usize,
    batches: usize,
    raw: f64,
    used_snapshots: usize,
}

#[derive(Serialize)]
struct ShadowsReport {
    epsilon: f64,
    delta: f64,
    snapshots: usize,
    batches: usize,
    labels: Vec<String>,
    estimates: Vec<f64>,
    exact: Vec<f64>,
    max_abs_error: f64,
}

/// Plan, draw and evaluate classical shadows of the model's Gibbs state.
pub fn run_shadows(prep: &Prepared) -> Result<String, CliError> {
    let lm = prep.model.as_ref().expect("validated in prepare");
    let (epsilon, delta, locality, n_override) = match &prep.config.estimation {
        EstimationConfig::Shadows { epsilon, delta, locality, n_override } => {
            (*epsilon, *delta, *locality, *n_override)
        }
        _ => unreachable!("validated in prepare"),
    };
    let sc = prep.config.shadows.unwrap_or_default();
    let mut ctx = RunContext::new(prep)?;
    let model = &lm.model;
    let paulis = lm.paulis.as_ref().expect("validated in prepare");
    let locality = locality.unwrap_or_else(|| paulis.iter().map(|p| p.weight()).max().unwrap_or(1));
    let plan = plan_samples(model.m(), locality, epsilon, delta)
        .map_err(|e| CliError::stage("plan", e))?;
    let count = n_override.unwrap_or(plan.snapshots);
    ctx.write_json(
        "plan.json",
        &PlanReport {
            m: model.m(),
            locality,
            epsilon,
            delta,
            snapshots: plan.snapshots,
            batches: plan.batches,
            raw: plan.raw,
            used_snapshots: count,
        },
    )?;
    let rho = model.gibbs_state(&lm.lambda).map_err(|e| CliError::stage("sample", e))?;
    let mut rng = ChaCha12Rng::seed_from_u64(ctx.seed("sample", 0));
    let batch = sample_shadows(rho.matrix(), model.sys(), count, &mut rng)
        .map_err(|e| CliError::stage("sample", e))?;
    if sc.save_snapshots {
        batch
            .save(&ctx.out_dir.join("snapshots.bin"))
            .map_err(|e| CliError::stage("sample", e))?;
        ctx.declare("snapshots.bin");
    }
    let report = estimate(&batch, paulis, plan.batches)
        .map_err(|e| CliError::stage("estimate", e))?;
    report
        .save_csv(&ctx.out_dir.join("estimates.csv"))
        .map_err(|e| CliError::stage("estimate", e))?;
    ctx.declare("estimates.csv");
    let exact = model
        .expectations(&lm.lambda)
        .map_err(|e| CliError::stage("estimate", e))?
        .0;
    let estimates = report.values();
    let max_abs_error = estimates
        .iter()
        .zip(exact.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    ctx.write_json(
        "estimates.json",
        &ShadowsReport {
            epsilon,
            delta,
            snapshots: count,
            batches: plan.batches,
            labels: paulis.iter().map(|p| p.to_string()).collect(),
            estimates,
            exact,
            max_abs_error,
        },
    )?;
    ctx.finish()
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum W1ModeArg {
    Hamming,
    Loc,
}

/// Command-line interface of the `gibbstomo` binary.
#[derive(Debug, Parser)]
#[command(
    name = "gibbstomo",
    version,
    about = "Gibbs-state learning experiments",
    disable_help_subcommand = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; overrides the config.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate expectations, fit the max-entropy model, emit a certificate.
    Reconstruct,
    /// Run the invariant suite on a model file and write a pass/fail report.
    Verify,
    /// Chain sweep: windowed-observable error vs the certified bound.
    FigPinsker,
    /// Hessian sandwich reports for a commuting model over a parameter grid.
    Bounds,
    /// Transportation-cost check over an ensemble of perturbed states.
    TcCheck {
        /// TC constant alpha; overrides the config.
        #[arg(long = "tc-alpha")]
        tc_alpha: Option<f64>,
        /// Wasserstein mode; overrides the config.
        #[arg(long = "w1-mode", value_enum)]
        w1_mode: Option<W1ModeArg>,
    },
    /// Plan, draw and evaluate classical shadows of a model's Gibbs state.
    Shadows,
}

impl Command {
    fn kind(&self) -> CommandKind {
        match self {
            Command::Reconstruct => CommandKind::Reconstruct,
            Command::Verify => CommandKind::Verify,
            Command::FigPinsker => CommandKind::FigPinsker,
            Command::Bounds => CommandKind::Bounds,
            Command::TcCheck { .. } => CommandKind::TcCheck,
            Command::Shadows => CommandKind::Shadows,
        }
    }
}

/// Run a parsed command line and return its summary line.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("missing --config".into()))?;
    let over = Overrides { out: cli.out.clone(), seed: cli.seed, threads: cli.threads };
    let prep = prepare(cli.command.kind(), config_path, &over)?;
    if let Some(k) = prep.config.threads {
        // a second build_global in the same process is a no-op; fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    match &cli.command {
        Command::Reconstruct => run_reconstruct(&prep),
        Command::Verify => run_verify(&prep),
        Command::FigPinsker => run_fig_pinsker(&prep),
        Command::Bounds => run_bounds(&prep),
        Command::TcCheck { tc_alpha, w1_mode } => run_tc_check(&prep, *tc_alpha, *w1_mode),
        Command::Shadows => run_shadows(&prep),
    }
}

/// Entry point used by the binary; maps errors to exit codes.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(err) => {
            eprintln!("gibbstomo: {err}");
            err.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn seed_derivation_matches_frozen_oracle() {
        // sha256(le64(master) || label || le64(index)), first 8 bytes LE
        assert_eq!(derive_seed(7, "estimate", 0), 7981434141413589029);
        assert_eq!(derive_seed(7, "estimate", 1), 3656670720752012);
        assert_eq!(derive_seed(7, "row", 0), 9917554092717824773);
        assert_eq!(derive_seed(123456789, "state", 41), 2517835140763919788);
    }

    #[test]
    fn seed_derivation_separates_labels_and_indices() {
        let base = derive_seed(9, "estimate", 0);
        assert_ne!(base, derive_seed(9, "estimate", 1));
        assert_ne!(base, derive_seed(9, "row", 0));
        assert_ne!(base, derive_seed(10, "estimate", 0));
        // and stays a pure function
        assert_eq!(base, derive_seed(9, "estimate", 0));
    }

    #[test]
    fn hoeffding_figure_matches_frozen_value_and_shrinks() {
        let v = hoeffding_linf_delta(1000, 39, 0.05);
        assert!((v - 0.12126368871384033).abs() < 1e-15, "{v}");
        assert!(hoeffding_linf_delta(4000, 39, 0.05) < v);
        assert!(hoeffding_linf_delta(1000, 39, 0.01) > v);
    }

    #[test]
    fn config_rejects_unknown_fields() {
        let err = serde_json::from_str::<ExperimentConfig>("{\"seedd\": 1}").unwrap_err();
        assert!(err.to_string().contains("seedd"));
    }

    #[test]
    fn prepare_requires_master_seed() {
        let dir = tempdir().unwrap();
        let cfg = dir.path().join("cfg.json");
        std::fs::write(&cfg, "{\"out_dir\": \"x\"}").unwrap();
        let err = prepare(CommandKind::Verify, &cfg, &Overrides::default()).err().unwrap();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn missing_model_file_is_a_config_error_naming_the_stage() {
        let dir = tempdir().unwrap();
        let cfg = dir.path().join("cfg.json");
        std::fs::write(
            &cfg,
            "{\"seed\": 1, \"out_dir\": \"x\", \"model\": \"nope.json\"}",
        )
        .unwrap();
        let err = prepare(CommandKind::Reconstruct, &cfg, &Overrides::default()).err().unwrap();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
        assert!(err.to_string().contains("model-load"), "{err}");
    }

    #[test]
    fn chain_config_requires_exactly_one_source() {
        let both = ChainConfig {
            spec: Some(PathBuf::from("a.json")),
            n: Some(4),
            beta: 1.0,
            periodic: false,
        };
        let err = load_chain(&both, Path::new(".")).err().unwrap();
        assert!(err.to_string().contains("exactly one"), "{err}");
        let neither = ChainConfig { spec: None, n: None, beta: 1.0, periodic: false };
        assert!(load_chain(&neither, Path::new(".")).is_err());
    }

    #[test]
    fn product_diag_state_is_a_density_matrix() {
        let rho = product_diag_state(&[0.25, 0.5]);
        assert_eq!(rho.nrows(), 4);
        let trace: f64 = (0..4).map(|i| rho[(i, i)].re).sum();
        assert!((trace - 1.0).abs() < 1e-14);
        // diagonal entries follow the product rule
        assert!((rho[(0, 0)].re - 0.75 * 0.5).abs() < 1e-14);
        assert!((rho[(3, 3)].re - 0.25 * 0.5).abs() < 1e-14);
    }
}
