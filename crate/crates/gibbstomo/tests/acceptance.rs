//! Acceptance suite: each test exercises one end-to-end guarantee at its
//! stated tolerance and prints a single `ACCEPTANCE <label>: PASS|FAIL`
//! line before asserting, so a full run yields one line per guarantee.

use gibbstomo::commuting::{
    basis_covariance_pairs, bound_report, contraction_coefficient, contraction_coefficient_max,
    correlation_fit, hessian_upper_bound_decay, InteractionHypergraph,
};
use gibbstomo::gibbs::symmetric_divergence;
use gibbstomo::operators::{embed_matrix, Pauli};
use gibbstomo::shadows::{
    basis_outcome_distribution, estimate, plan_samples, sample_shadows, snapshot_value, Snapshot,
};
use gibbstomo::solver::{iteration_bounds, solve, ExactEngineOracle, HaltReason, SolverOptions};
use gibbstomo::wasserstein::{
    lip_diff, lip_hamming_exact, lip_hamming_upper, lr_growth_1d, shallow_surrogate,
    tc_constant_local, tc_verify, w1_bounds, DifferentialStructure, QuasiLocalClass, W1Mode,
};
use gibbstomo::{CMat, GibbsModel, HessianBackend, LocalOperator, PauliString, SiteSystem};
use nalgebra::SymmetricEigen;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::process::Command;
use std::time::Instant;

fn finish(label: &str, fails: Vec<String>) {
    if fails.is_empty() {
        println!("ACCEPTANCE {label}: PASS");
    } else {
        println!("ACCEPTANCE {label}: FAIL ({})", fails.join("; "));
    }
    assert!(fails.is_empty(), "{label}: {}", fails.join("; "));
}

struct Instance {
    model: GibbsModel,
    lambda: Vec<f64>,
    mu: Vec<f64>,
    commuting: bool,
}

/// Random models with n <= 4 sites, m <= 8 unit-norm Pauli basis elements
/// and beta <= 2; even indices are diagonal (commuting), odd ones draw
/// letters from {X, Y, Z}.
fn random_instances(count: usize, seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for idx in 0..count {
        let n = rng.random_range(1..=4usize);
        let target_m = rng.random_range(1..=8usize);
        let commuting = idx % 2 == 0;
        let mut labels: Vec<String> = Vec::new();
        for _ in 0..64 {
            if labels.len() == target_m {
                break;
            }
            let letter = |rng: &mut ChaCha12Rng| {
                if commuting {
                    'Z'
                } else {
                    ['X', 'Y', 'Z'][rng.random_range(0..3usize)]
                }
            };
            let weight = if n == 1 { 1 } else { rng.random_range(1..=2usize) };
            let label = if weight == 1 {
                let s = rng.random_range(1..=n);
                format!("{}{s}", letter(&mut rng))
            } else {
                let a = rng.random_range(1..=n);
                let mut b = rng.random_range(1..=n);
                while b == a {
                    b = rng.random_range(1..=n);
                }
                let (lo, hi) = (a.min(b), a.max(b));
                format!("{}{lo}*{}{hi}", letter(&mut rng), letter(&mut rng))
            };
            if !labels.contains(&label) {
                labels.push(label);
            }
        }
        let beta = 0.1 + 1.9 * rng.random::<f64>();
        let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        let model = GibbsModel::from_pauli_strings(n, beta, &refs).unwrap();
        let m = model.m();
        let lambda: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let mu: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        out.push(Instance { model, lambda, mu, commuting });
    }
    out
}

const ISING4_STRINGS: [&str; 7] = ["Z1", "Z2", "Z3", "Z4", "Z1*Z2", "Z2*Z3", "Z3*Z4"];

fn ising4_supports() -> Vec<Vec<usize>> {
    vec![
        vec![1],
        vec![2],
        vec![3],
        vec![4],
        vec![1, 2],
        vec![2, 3],
        vec![3, 4],
    ]
}

/// Fields then couplings, matching `ISING4_STRINGS`.
fn ising4_params(h: [f64; 4], j: [f64; 3]) -> Vec<f64> {
    h.iter().chain(j.iter()).copied().collect()
}

fn product_diag(ps: &[f64]) -> CMat {
    let mut acc = CMat::identity(1, 1);
    for &p in ps {
        let mut site = CMat::zeros(2, 2);
        site[(0, 0)] = Complex64::new(1.0 - p, 0.0);
        site[(1, 1)] = Complex64::new(p, 0.0);
        acc = acc.kronecker(&site);
    }
    acc
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

// ---------------------------------------------------------------------------
// 1. Entropy identity on random models
// ---------------------------------------------------------------------------

#[test]
fn entropy_identity_on_random_models() {
    let start = Instant::now();
    let mut fails = Vec::new();
    let instances = random_instances(50, 20260825);
    let commuting = instances.iter().filter(|i| i.commuting).count();
    if commuting < 10 || instances.len() - commuting < 10 {
        fails.push(format!("instance mix is degenerate ({commuting}/50 commuting)"));
    }
    for (idx, inst) in instances.iter().enumerate() {
        let sd = symmetric_divergence(&inst.model, &inst.lambda, &inst.mu).unwrap();
        let tol = 1e-8 * sd.sum.abs().max(1.0);
        if sd.residual > tol {
            fails.push(format!(
                "instance {idx}: |D_sym - pairing| = {:.3e} > {:.3e}",
                sd.residual, tol
            ));
        }
        if !(sd.forward >= -1e-12 && sd.reverse >= -1e-12) {
            fails.push(format!("instance {idx}: negative relative entropy"));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    if elapsed > 60.0 {
        fails.push(format!("runtime {elapsed:.1}s exceeds 60s"));
    }
    finish("entropy_identity", fails);
}

// ---------------------------------------------------------------------------
// 2. Gradient and Hessian oracles
// ---------------------------------------------------------------------------

#[test]
fn gradient_and_hessian_oracles() {
    let mut fails = Vec::new();
    let instances = random_instances(50, 20260825);

    // gradient vs central finite differences of the dual objective
    for (idx, inst) in instances.iter().take(20).enumerate() {
        let model = &inst.model;
        let e_target = model.expectations(&inst.lambda).unwrap().0;
        let grad = model.dual_gradient(&inst.mu, &e_target).unwrap();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..model.m() {
            let mut up = inst.mu.clone();
            let mut dn = inst.mu.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (model.dual_objective(&up, &e_target).unwrap()
                - model.dual_objective(&dn, &e_target).unwrap())
                / (2.0 * h);
            worst = worst.max((fd - grad[i]).abs());
        }
        if worst > 1e-6 {
            fails.push(format!("instance {idx}: gradient vs FD off by {worst:.3e}"));
        }
    }

    // spectral Hessian vs central finite differences of the gradient
    for (idx, inst) in instances.iter().take(10).enumerate() {
        let model = &inst.model;
        let m = model.m();
        let e_target = vec![0.0; m];
        let hess = model.dual_hessian(&inst.mu, HessianBackend::Spectral).unwrap();
        let h = 1e-4;
        let mut worst = 0.0f64;
        for i in 0..m {
            let mut up = inst.mu.clone();
            let mut dn = inst.mu.clone();
            up[i] += h;
            dn[i] -= h;
            let gu = model.dual_gradient(&up, &e_target).unwrap();
            let gd = model.dual_gradient(&dn, &e_target).unwrap();
            for j in 0..m {
                let fd = (gu[j] - gd[j]) / (2.0 * h);
                worst = worst.max((fd - hess[(i, j)]).abs());
            }
        }
        if worst > 1e-5 {
            fails.push(format!("instance {idx}: Hessian vs FD off by {worst:.3e}"));
        }
    }

    // commuting closed form vs the spectral backend
    for (idx, inst) in instances.iter().enumerate().filter(|(_, i)| i.commuting) {
        let model = &inst.model;
        let spectral = model.dual_hessian(&inst.mu, HessianBackend::Spectral).unwrap();
        let closed = model.dual_hessian(&inst.mu, HessianBackend::Commuting).unwrap();
        let worst = (&spectral - &closed).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if worst > 1e-8 {
            fails.push(format!(
                "instance {idx}: commuting vs spectral Hessian off by {worst:.3e}"
            ));
        }
    }

    finish("oracles", fails);
}

// ---------------------------------------------------------------------------
// 3. Hessian sandwich
// ---------------------------------------------------------------------------

#[test]
fn hessian_sandwich() {
    let mut fails = Vec::new();

    // generic cap on every instance
    for (idx, inst) in random_instances(50, 20260825).iter().enumerate() {
        let model = &inst.model;
        let hess = model.dual_hessian(&inst.mu, HessianBackend::Spectral).unwrap();
        let eig = SymmetricEigen::new(hess);
        let lmax = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let cap = 2.0 * model.beta() * model.beta() * model.m() as f64;
        if lmax > cap + 1e-9 {
            fails.push(format!("instance {idx}: lambda_max {lmax:.6} > {cap:.6}"));
        }
    }

    // four-site Ising chains with an orthogonal traceless basis: closed-form
    // lower bound and fitted-decay upper bound sandwich the exact eigenvalues
    let model = GibbsModel::from_pauli_strings(4, 1.0, &ISING4_STRINGS).unwrap();
    let graph = InteractionHypergraph::from_supports(4, &ising4_supports()).unwrap();
    let search = contraction_coefficient_max(&model, 2, 31).unwrap();
    if !(0.0..1.0).contains(&search.c_max) {
        fails.push(format!("contraction search gave c = {}", search.c_max));
    }
    let chains = [
        ising4_params([0.3, -0.2, 0.25, -0.15], [0.6, 0.5, 0.7]),
        ising4_params([0.1, 0.2, -0.1, 0.15], [0.8, 0.7, 0.75]),
        ising4_params([0.4, -0.3, 0.2, -0.25], [-0.5, 0.6, -0.55]),
    ];
    let pairs = basis_covariance_pairs(&model, &graph).unwrap();
    for (idx, lambda) in chains.iter().enumerate() {
        let sigma = model.gibbs_state(lambda).unwrap();
        let fit = correlation_fit(model.sys(), sigma.matrix(), &pairs).unwrap();
        if !fit.decay.xi.is_finite() {
            fails.push(format!("chain {idx}: correlation fit degenerated"));
            continue;
        }
        let report = bound_report(&model, lambda, &graph, search.c_max, Some(&fit.decay)).unwrap();
        let u_decay = hessian_upper_bound_decay(&fit.decay, 1.0, 2, &graph).unwrap();
        if report.l_bound > report.lambda_min + 1e-12 {
            fails.push(format!(
                "chain {idx}: lower bound {:.3e} exceeds lambda_min {:.3e}",
                report.l_bound, report.lambda_min
            ));
        }
        if report.lambda_max > u_decay + 1e-9 {
            fails.push(format!(
                "chain {idx}: lambda_max {:.4} exceeds decay bound {:.4}",
                report.lambda_max, u_decay
            ));
        }
        if report.l_bound <= 0.0 {
            fails.push(format!("chain {idx}: lower bound is not positive"));
        }
    }

    finish("hessian_sandwich", fails);
}

// ---------------------------------------------------------------------------
// 4. Solver guarantee with exact gradients
// ---------------------------------------------------------------------------

#[test]
fn solver_guarantee() {
    let mut fails = Vec::new();
    let configs: [(usize, &[&str], f64); 8] = [
        (2, &["Z1", "Z2", "Z1*Z2"], 0.6),
        (2, &["Z1", "X1*X2", "Z1*Z2"], 0.8),
        (3, &["Z1", "Z2", "Z3", "Z1*Z2", "Z2*Z3"], 1.0),
        (3, &["X1", "Z2", "X1*Z3", "Z2*Z3"], 0.5),
        (2, &["X1", "Y2", "Z1*Z2"], 0.9),
        (3, &["Z1*Z2", "Z2*Z3"], 1.2),
        (2, &["X1*X2", "Y1*Y2", "Z1*Z2"], 0.7),
        (3, &["Z1", "X2", "Y3", "Z1*X2"], 0.4),
    ];
    let delta_mu = 1e-6;
    let c = 11.0;
    let mut rng = ChaCha12Rng::seed_from_u64(4242);
    for (idx, (n, strings, beta)) in configs.iter().enumerate() {
        let model = GibbsModel::from_pauli_strings(*n, *beta, strings).unwrap();
        let m = model.m();
        let lambda: Vec<f64> = (0..m).map(|_| 0.9 * (rng.random::<f64>() * 2.0 - 1.0)).collect();
        let e_hat = model.expectations(&lambda).unwrap().0;
        let mut oracle = ExactEngineOracle::with_delta(model.clone(), delta_mu);
        let options = SolverOptions {
            c,
            audit_progress: true,
            max_iters: 1_000_000,
            ..SolverOptions::default()
        };
        let result = solve(&mut oracle, &e_hat, &options).unwrap();
        if result.halt != HaltReason::StoppingRule {
            fails.push(format!("instance {idx}: halted by {:?}", result.halt));
            continue;
        }
        let d_bound = 2.0 * (4.0 * c + 1.0) * beta * delta_mu * (m as f64).sqrt();
        let sd = symmetric_divergence(&model, &lambda, &result.mu).unwrap();
        if sd.sum > d_bound {
            fails.push(format!(
                "instance {idx}: D_sym {:.3e} exceeds certificate {:.3e}",
                sd.sum, d_bound
            ));
        }
        let bound = iteration_bounds(*n, 2, *beta, m, c, None, delta_mu, None);
        if (result.iterations as f64) > bound.general {
            fails.push(format!(
                "instance {idx}: {} iterations exceed the general bound {:.3e}",
                result.iterations, bound.general
            ));
        }
        match result.audit {
            Some(audit) => {
                if audit.violations != 0 {
                    fails.push(format!(
                        "instance {idx}: {} progress violations (worst {:.3e})",
                        audit.violations, audit.worst_violation
                    ));
                }
                if audit.checked != result.iterations {
                    fails.push(format!(
                        "instance {idx}: audited {} of {} steps",
                        audit.checked, result.iterations
                    ));
                }
            }
            None => fails.push(format!("instance {idx}: no audit report")),
        }
    }
    finish("solver_guarantee", fails);
}

// ---------------------------------------------------------------------------
// 5. Shadow calibration
// ---------------------------------------------------------------------------

#[test]
fn shadow_calibration() {
    let mut fails = Vec::new();

    // planned sample count keeps the l_inf failure rate within its budget
    let sys = SiteSystem::qubits(2).unwrap();
    let model = GibbsModel::from_pauli_strings(2, 0.8, &["Z1", "X1*X2", "Z1*Z2"]).unwrap();
    let lambda = vec![0.6, -0.4, 0.3];
    let rho = model.gibbs_state(&lambda).unwrap();
    let observables: Vec<PauliString> = ["Z1", "X1*X2", "Z1*Z2"]
        .iter()
        .map(|s| PauliString::parse(s).unwrap())
        .collect();
    let exact = model.expectations_of(rho.matrix()).0;
    let epsilon = 0.1;
    let plan = plan_samples(observables.len(), 2, epsilon, 0.05).unwrap();
    if plan.snapshots != 260_440 || plan.batches != 11 {
        fails.push(format!(
            "plan changed: N = {}, K = {}",
            plan.snapshots, plan.batches
        ));
    }
    let trials = 200;
    let mut failures = 0usize;
    for trial in 0..trials {
        let mut rng = ChaCha12Rng::seed_from_u64(0x5AD0 + trial as u64);
        let batch = sample_shadows(rho.matrix(), sys, plan.snapshots, &mut rng).unwrap();
        let report = estimate(&batch, &observables, plan.batches).unwrap();
        let err = report
            .values()
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if err > epsilon {
            failures += 1;
        }
    }
    let budget = 0.05 + 0.03;
    if (failures as f64) > budget * trials as f64 {
        fails.push(format!("{failures}/{trials} trials missed epsilon"));
    }

    // exact unbiasedness by enumeration over all bases and outcomes
    let sys1 = SiteSystem::qubits(1).unwrap();
    let blochs = [(0.3, 0.5, -0.2), (0.6, 0.0, 0.8), (-0.4, 0.25, 0.55)];
    for (state_idx, (bx, by, bz)) in blochs.iter().enumerate() {
        let rho1 = (CMat::identity(2, 2)
            + Pauli::X.matrix().scale(*bx)
            + Pauli::Y.matrix().scale(*by)
            + Pauli::Z.matrix().scale(*bz))
        .scale(0.5);
        for (letter, pauli) in [("X1", Pauli::X), ("Y1", Pauli::Y), ("Z1", Pauli::Z)] {
            let obs = PauliString::parse(letter).unwrap();
            let exact = (&rho1 * pauli.matrix()).trace().re;
            let mut mean = 0.0f64;
            for basis in [Pauli::X, Pauli::Y, Pauli::Z] {
                let dist = basis_outcome_distribution(&rho1, sys1, &[basis]).unwrap();
                for (outcome, p) in dist.iter().enumerate() {
                    let snap = Snapshot { bases: vec![basis], outcomes: vec![outcome as u8] };
                    mean += p / 3.0 * snapshot_value(&snap, &obs);
                }
            }
            if (mean - exact).abs() > 1e-12 {
                fails.push(format!(
                    "state {state_idx}, {letter}: enumerated mean off by {:.3e}",
                    (mean - exact).abs()
                ));
            }
        }
    }

    finish("shadow_calibration", fails);
}

// ---------------------------------------------------------------------------
// 6. Windowed-observable sweep through the fig-pinsker command
// ---------------------------------------------------------------------------

#[test]
fn fig_pinsker_error_flatness() {
    let mut fails = Vec::new();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fig.json");
    let out = dir.path().join("out");
    std::fs::write(
        &cfg,
        r#"{"seed": 90210,
 "sweep": {"ns": [20, 200], "seeds_per_n": 20, "samples": 1000, "beta": 1.0, "depth": 3}}
"#,
    )
    .unwrap();
    let start = Instant::now();
    let output = Command::new(env!("CARGO_BIN_EXE_gibbstomo"))
        .args([
            "fig-pinsker",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    if !output.status.success() {
        fails.push(format!(
            "command failed: {}",
            String::from_utf8_lossy(&output.stderr).trim()
        ));
    }
    if elapsed > 600.0 {
        fails.push(format!("runtime {elapsed:.0}s exceeds 600s"));
    }
    let mut errors_small = Vec::new();
    let mut errors_large = Vec::new();
    if output.status.success() {
        let csv = std::fs::read_to_string(out.join("fig_pinsker.csv")).unwrap();
        for line in csv.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            let n: usize = fields[0].parse().unwrap();
            if fields[10] != "ok" {
                fails.push(format!("row n = {n} seed {} failed: {}", fields[1], fields[10]));
                continue;
            }
            let error: f64 = fields[4].parse().unwrap();
            let bound: f64 = fields[6].parse().unwrap();
            if bound < error {
                fails.push(format!(
                    "row n = {n} seed {}: bound {bound:.4} below error {error:.4}",
                    fields[1]
                ));
            }
            match n {
                20 => errors_small.push(error),
                200 => errors_large.push(error),
                other => fails.push(format!("unexpected row n = {other}")),
            }
        }
        if errors_small.len() != 20 || errors_large.len() != 20 {
            fails.push(format!(
                "expected 20 rows per size, got {} and {}",
                errors_small.len(),
                errors_large.len()
            ));
        } else {
            let med_small = median(&errors_small);
            let med_large = median(&errors_large);
            if med_large > 2.0 * med_small + 1e-12 {
                fails.push(format!(
                    "median error grew: {med_large:.4} at n = 200 vs {med_small:.4} at n = 20"
                ));
            }
        }
    }
    finish("fig_pinsker", fails);
}

// ---------------------------------------------------------------------------
// 7. Transportation-cost verification
// ---------------------------------------------------------------------------

#[test]
fn transportation_cost_verification() {
    let mut fails = Vec::new();

    // product reference on 8 qubits at alpha = 1/2
    let sys8 = SiteSystem::qubits(8).unwrap();
    let sigma = product_diag(&[0.3; 8]);
    let mut rng = ChaCha12Rng::seed_from_u64(747);
    let ensemble: Vec<CMat> = (0..100)
        .map(|_| {
            let ps: Vec<f64> = (0..8)
                .map(|_| {
                    (0.3 + 0.05 * (rng.random::<f64>() * 2.0 - 1.0)).clamp(1e-6, 1.0 - 1e-6)
                })
                .collect();
            product_diag(&ps)
        })
        .collect();
    match tc_verify(sys8, &sigma, &ensemble, 0.5, W1Mode::Hamming) {
        Ok(report) => {
            if report.violations != 0 {
                fails.push(format!("product ensemble: {} violations", report.violations));
            }
            if report.states.len() != 100 {
                fails.push("product ensemble size mismatch".into());
            }
            for (i, s) in report.states.iter().enumerate() {
                if s.w1_lower > s.w1_upper + 1e-9 {
                    fails.push(format!("product state {i}: bracket inverted"));
                }
            }
        }
        Err(e) => fails.push(format!("product tc_verify failed: {e}")),
    }

    // critical temperature of the (2, 1) quasi-local class
    let tc0 = tc_constant_local(2, 1.0, 0.0).unwrap();
    let direct = 1.0 / (8.0 * std::f64::consts::E.powi(3) * 2.0);
    if tc0.beta_c != direct {
        fails.push(format!("beta_c = {} is not the closed form {direct}", tc0.beta_c));
    }
    if (tc0.beta_c - 0.003111691772991).abs() > 2e-15 {
        fails.push(format!("beta_c = {:.15} drifted from its frozen value", tc0.beta_c));
    }

    // quasi-local verification on 6 qubits at half the critical temperature
    let beta = tc0.beta_c / 2.0;
    let tc = tc_constant_local(2, 1.0, beta).unwrap();
    if (tc.tc_factor - 35.853512562704516).abs() > 1e-12 {
        fails.push(format!("tc_factor = {:.12} drifted", tc.tc_factor));
    }
    let alpha = 1.0 / (2.0 * tc.tc_factor * tc.tc_factor);
    let strings = ["Z1*Z2", "Z2*Z3", "Z3*Z4", "Z4*Z5", "Z5*Z6"];
    let model = GibbsModel::from_pauli_strings(6, beta, &strings).unwrap();
    let base = vec![0.4; 5];
    let zz = Pauli::Z.matrix().kronecker(&Pauli::Z.matrix());
    let terms: Vec<LocalOperator> = base
        .iter()
        .enumerate()
        .map(|(i, &l)| LocalOperator::new(vec![i + 1, i + 2], zz.scale(l), None).unwrap())
        .collect();
    let class = QuasiLocalClass::new(2, 1.0).unwrap();
    if !class.admits(model.sys(), &terms) {
        fails.push("chain Hamiltonian left the (2, 1) class".into());
    }
    let sigma6 = model.gibbs_state(&base).unwrap();
    let ensemble6: Vec<CMat> = (0..20)
        .map(|_| {
            let lambda: Vec<f64> = base
                .iter()
                .map(|l| l + 0.08 * (rng.random::<f64>() * 2.0 - 1.0))
                .collect();
            model.gibbs_state(&lambda).unwrap().matrix().clone()
        })
        .collect();
    match tc_verify(
        model.sys(),
        sigma6.matrix(),
        &ensemble6,
        alpha,
        W1Mode::Local { k: 2, g: 1.0 },
    ) {
        Ok(report) => {
            if report.violations != 0 {
                fails.push(format!("quasi-local ensemble: {} violations", report.violations));
            }
        }
        Err(e) => fails.push(format!("quasi-local tc_verify failed: {e}")),
    }

    finish("tc_verification", fails);
}

// ---------------------------------------------------------------------------
// 8. Shallow-circuit surrogate divergence
// ---------------------------------------------------------------------------

#[test]
fn shallow_surrogate_divergence() {
    let mut fails = Vec::new();
    let eps = 0.01;
    for n in [1usize, 8, 64] {
        let s = shallow_surrogate(eps, n).unwrap();
        let closed = (1.0 + (-2.0 * s.beta_eps).exp()).ln();
        if (s.d_exact_per_qubit - closed).abs() > 1e-12 {
            fails.push(format!(
                "n = {n}: exact per-qubit divergence {:.3e} != closed form {closed:.3e}",
                s.d_exact_per_qubit
            ));
        }
        if s.d_exact_per_qubit > eps {
            fails.push(format!("n = {n}: per-qubit divergence exceeds eps"));
        }
        if s.d_total > eps * n as f64 {
            fails.push(format!("n = {n}: total divergence exceeds eps * n"));
        }
        if (s.stated_bound - eps * n as f64).abs() > 1e-15 {
            fails.push(format!("n = {n}: quoted bound is not eps * n"));
        }
        if s.d_total > s.stated_bound {
            fails.push(format!("n = {n}: exact divergence exceeds the quoted bound"));
        }
    }
    finish("shallow_surrogate", fails);
}

// ---------------------------------------------------------------------------
// 9. Commuting contraction coefficient with a classical cross-check
// ---------------------------------------------------------------------------

/// Classical contraction of the single-site heat-bath step for the 4-site
/// Ising chain: the weighted L2 contraction of `H_x` under conditioning on
/// the complement spins. Independent of the operator-algebra code path.
fn classical_contraction(beta: f64, h: &[f64; 4], j: &[f64; 3], x: usize) -> f64 {
    let n = 4usize;
    let spin = |cfg: usize, site: usize| -> f64 {
        if (cfg >> (n - site)) & 1 == 1 {
            -1.0
        } else {
            1.0
        }
    };
    let dim = 1usize << n;
    let mut weights = vec![0.0f64; dim];
    let mut local = vec![0.0f64; dim];
    for cfg in 0..dim {
        let mut energy = 0.0;
        for (i, hv) in h.iter().enumerate() {
            energy += hv * spin(cfg, i + 1);
        }
        for (b, jv) in j.iter().enumerate() {
            energy += jv * spin(cfg, b + 1) * spin(cfg, b + 2);
        }
        weights[cfg] = (-beta * energy).exp();
        let mut f = h[x - 1] * spin(cfg, x);
        for (b, jv) in j.iter().enumerate() {
            if b + 1 == x || b + 2 == x {
                f += jv * spin(cfg, b + 1) * spin(cfg, b + 2);
            }
        }
        local[cfg] = f;
    }
    let z: f64 = weights.iter().sum();
    let mean: f64 = weights.iter().zip(&local).map(|(w, f)| w * f).sum::<f64>() / z;
    let flip = 1usize << (n - x);
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for cfg in 0..dim {
        let partner = cfg ^ flip;
        let cond = (weights[cfg] * local[cfg] + weights[partner] * local[partner])
            / (weights[cfg] + weights[partner]);
        num += weights[cfg] / z * (cond - mean) * (cond - mean);
        den += weights[cfg] / z * (local[cfg] - mean) * (local[cfg] - mean);
    }
    (num / den).sqrt()
}

#[test]
fn commuting_contraction_cross_check() {
    let mut fails = Vec::new();
    let model = GibbsModel::from_pauli_strings(4, 1.0, &ISING4_STRINGS).unwrap();
    let search = contraction_coefficient_max(&model, 2, 99).unwrap();
    if !(0.0..1.0).contains(&search.c_max) {
        fails.push(format!("searched c(x, beta) = {} outside [0, 1)", search.c_max));
    }
    let mut points: Vec<Vec<f64>> = vec![
        ising4_params([0.2, 0.2, 0.2, 0.2], [0.8, 0.8, 0.8]),
        ising4_params([0.35, -0.2, 0.5, 0.1], [0.45, -0.6, 0.3]),
    ];
    points.push(search.argmax.clone());
    for (idx, mu) in points.iter().enumerate() {
        let quantum = contraction_coefficient(&model, mu, 2).unwrap();
        let classical = classical_contraction(
            1.0,
            &[mu[0], mu[1], mu[2], mu[3]],
            &[mu[4], mu[5], mu[6]],
            2,
        );
        if (quantum - classical).abs() > 1e-8 {
            fails.push(format!(
                "point {idx}: quantum {quantum:.12} vs classical {classical:.12}"
            ));
        }
        if !(0.0..1.0).contains(&quantum) {
            fails.push(format!("point {idx}: coefficient {quantum} outside [0, 1)"));
        }
    }
    finish("commuting_contraction", fails);
}

// ---------------------------------------------------------------------------
// 10. Lipschitz worked examples
// ---------------------------------------------------------------------------

#[test]
fn lipschitz_worked_examples() {
    let mut fails = Vec::new();

    // sum of Z's: the exact method pins 2 sqrt(n) for n <= 4
    for n in [2usize, 3, 4] {
        let sys = SiteSystem::qubits(n).unwrap();
        let z = Pauli::Z.matrix();
        let mut o = CMat::zeros(sys.dim(), sys.dim());
        for i in 1..=n {
            o += embed_matrix(sys, &[i], &z).unwrap();
        }
        let target = 2.0 * (n as f64).sqrt();
        let bracket = lip_hamming_exact(sys, &o, 5e-3).unwrap();
        if (bracket.lower - target).abs() > 5e-3 || (bracket.upper - target).abs() > 5e-3 {
            fails.push(format!(
                "n = {n}: exact bracket [{:.5}, {:.5}] misses {target:.5}",
                bracket.lower, bracket.upper
            ));
        }
    }

    // locality bound equals 2 sqrt(n) for every size, and a one-site flip
    // witness certifies the matching lower bound through the W1 bracket
    for n in [2usize, 3, 5, 6, 9, 12] {
        let sys = SiteSystem::qubits(n).unwrap();
        let terms: Vec<LocalOperator> = (1..=n)
            .map(|i| LocalOperator::new(vec![i], Pauli::Z.matrix(), None).unwrap())
            .collect();
        let upper = lip_hamming_upper(sys, &terms).unwrap();
        let target = 2.0 * (n as f64).sqrt();
        if (upper - target).abs() > 1e-9 {
            fails.push(format!("n = {n}: locality bound {upper:.9} != {target:.9}"));
        }
        if n <= 5 {
            let dim = sys.dim();
            let mut ground = CMat::zeros(dim, dim);
            ground[(0, 0)] = Complex64::new(1.0, 0.0);
            let flipped_idx = 1usize << (n - 1);
            let mut flipped = CMat::zeros(dim, dim);
            flipped[(flipped_idx, flipped_idx)] = Complex64::new(1.0, 0.0);
            let w1 = w1_bounds(sys, &ground, &flipped, W1Mode::Hamming, None).unwrap();
            let z = Pauli::Z.matrix();
            let mut o = CMat::zeros(dim, dim);
            for i in 1..=n {
                o += embed_matrix(sys, &[i], &z).unwrap();
            }
            let moved = ((&o * (&ground - &flipped)).trace().re).abs();
            let witness = moved / w1.upper;
            if (witness - target).abs() > 1e-9 {
                fails.push(format!(
                    "n = {n}: witness ratio {witness:.9} does not match {target:.9}"
                ));
            }
        }
    }

    // differential Lipschitz seminorm of the identity vanishes
    let sys2 = SiteSystem::qubits(2).unwrap();
    let ds = DifferentialStructure::pauli_maximally_mixed(sys2).unwrap();
    let id_norm = lip_diff(&ds, &CMat::identity(4, 4)).unwrap();
    if id_norm.abs() > 1e-12 {
        fails.push(format!("lip_diff of the identity is {id_norm:.3e}"));
    }

    // Lieb-Robinson growth profile: exact value at t = 0, monotone in t
    for (k, v, mu, n, expect) in [(3usize, 1.2, 0.8, 12usize, 9.0), (2, 0.9, 0.5, 11, 6.0)] {
        let at_zero = lr_growth_1d(k, v, mu, 0.0, n).unwrap();
        if (at_zero - expect).abs() > 1e-12 {
            fails.push(format!("lr growth at t = 0 is {at_zero} not {expect}"));
        }
        let ts = [0.0, 0.4, 0.9, 1.5, 2.2, 3.0];
        let values: Vec<f64> = ts
            .iter()
            .map(|&t| lr_growth_1d(k, v, mu, t, n).unwrap())
            .collect();
        if !values.windows(2).all(|w| w[1] > w[0]) {
            fails.push(format!("lr growth is not increasing for k = {k}"));
        }
    }

    finish("lipschitz_examples", fails);
}
