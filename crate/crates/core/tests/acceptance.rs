//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use imq_core::cli::{parse_config, run_experiment, Overrides};
use imq_core::collocation::{build_matrix, dense_invert, neumann_inverse, CoefficientVector, CollocationMatrix};
use imq_core::decay::{envelope_of, fit_exponent, power_bound_check, LagKind};
use imq_core::fundamental::{bound_plateau, envelope_fit_fundamental, make_fundamental, weighted_series_eval, FundamentalSet};
use imq_core::interp::{make_interpolant, EvalPath};
use imq_core::kernel::{partial_fraction_split, KernelParams};
use imq_core::nodes::NodeWindow;
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn lattice(n: usize, alpha: f64, k: u32) -> CollocationMatrix<f64> {
    build_matrix(KernelParams::new(alpha, k).unwrap(), Arc::new(NodeWindow::lattice(n))).unwrap()
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn config(text: &str) -> imq_core::cli::ExperimentConfig {
    parse_config(text, Path::new("."), &Overrides::default()).expect("valid config")
}

fn cardinality() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for (label, nodes) in [("lattice", r#""lattice""#), ("jitter", r#"{"jitter":{"delta":0.25,"seed":1}}"#)] {
        let cfg = config(&format!(r#"{{"experiment":"cardinality","alpha":2,"k":2,"N":100,"nodes":{nodes}}}"#));
        let rep = run_experiment(&cfg).map_err(|e| e.to_string())?;
        let dev = rep.result_f64("max_abs_deviation").unwrap();
        ok &= dev <= 1e-8;
        parts.push(format!("{label} {dev:.2e}"));
    }
    let elapsed = start.elapsed();
    ok &= elapsed <= Duration::from_secs(30);
    ensure(ok, format!("max |L_m(x_j) - delta| {} (<= 1e-8), {:.2}s (<= 30s)", parts.join(", "), elapsed.as_secs_f64()))
}

fn hand_oracles() -> Outcome {
    let two: CollocationMatrix<f64> = build_matrix(
        KernelParams::new(1.0, 1).unwrap(),
        Arc::new(NodeWindow::with_center(vec![0.0, 1.0], 0).unwrap()),
    )
    .unwrap();
    let inv = dense_invert(&two).map_err(|e| e.to_string())?;
    let expect: [[f64; 2]; 2] = [[4.0 / 3.0, -2.0 / 3.0], [-2.0 / 3.0, 4.0 / 3.0]];
    let mut err2: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            err2 = err2.max((inv.entries.get(i, j) - expect[i][j]).abs());
        }
    }
    let l = make_fundamental(&lattice(1, 1.0, 1), 0).map_err(|e| e.to_string())?;
    let err3 = l
        .coeffs()
        .iter()
        .zip([-5.0 / 7.0, 12.0 / 7.0, -5.0 / 7.0])
        .fold(0.0f64, |m, (c, e)| m.max((c - e).abs()));
    ensure(err2 <= 1e-12 && err3 <= 1e-12, format!("2-node inverse err {err2:.2e}, 3-node coeff err {err3:.2e} (<= 1e-12)"))
}

fn partial_fractions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let alpha: f64 = rng.gen_range(0.5..=5.0);
        let m = rng.gen_range(1..=100u32);
        let j = rng.gen_range(0..=m);
        let (lhs, rhs) = partial_fraction_split(alpha, m, j).map_err(|e| e.to_string())?;
        worst = worst.max((lhs - rhs).abs() / lhs);
    }
    let mut exact = true;
    for (m, j, den) in [(2u32, 1u32, 4i64), (2, 0, 5), (4, 1, 20)] {
        let one = BigRational::from_integer(BigInt::from(1));
        let (lhs, rhs) = partial_fraction_split(one, m, j).map_err(|e| e.to_string())?;
        let want = BigRational::new(BigInt::from(1), BigInt::from(den));
        exact &= lhs == want && rhs == want;
    }
    ensure(worst <= 1e-12 && exact, format!("max relative discrepancy {worst:.2e} (<= 1e-12), hand cases exact: {exact}"))
}

fn inverse_decay() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for k in [1u32, 2] {
        let start = Instant::now();
        let m = lattice(200, 2.0, k);
        let w = m.window();
        let inv = dense_invert(&m).map_err(|e| e.to_string())?;
        let env = envelope_of(&inv.entries, w, 0, w.core(50), LagKind::IndexDistance).map_err(|e| e.to_string())?;
        let fit = fit_exponent(&env, 20.0, 80.0).map_err(|e| e.to_string())?;
        let kf = f64::from(k);
        let elapsed = start.elapsed();
        ok &= fit.exponent <= -2.0 * kf + 0.5 && fit.exponent <= -(2.0 * kf - 2.0) - 0.5;
        ok &= elapsed <= Duration::from_secs(120);
        parts.push(format!("k={k}: {:.3} (<= {:.1}) {:.2}s", fit.exponent, (-2.0 * kf + 0.5).min(-(2.0 * kf - 2.0) - 0.5), elapsed.as_secs_f64()));
    }
    ensure(ok, format!("alpha=2 N=200 lags [20,80] exponents {}", parts.join(", ")))
}

fn fundamental_decay() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for k in [1u32, 2] {
        let m = lattice(200, 2.0, k);
        let l = make_fundamental(&m, 0).map_err(|e| e.to_string())?;
        let fit = envelope_fit_fundamental(&l, 10.0, 60.0, 5001, m.window().core(50)).map_err(|e| e.to_string())?;
        let plateau = bound_plateau(&l, (5.0, 10.0), (5.0, 50.0), 0.01);
        ok &= fit.exponent <= -2.0 * f64::from(k) + 0.5 && plateau.far_max <= 2.0 * plateau.near_max;
        parts.push(format!("k={k}: exponent {:.3}, plateau ratio {:.3}", fit.exponent, plateau.ratio));
    }
    ensure(ok, format!("{} (exponent <= -2k+0.5, ratio <= 2)", parts.join("; ")))
}

fn lemma_power() -> Outcome {
    let mut ratios = Vec::new();
    for n in [150usize, 300] {
        let m = lattice(n, 2.0, 1);
        let w = m.window();
        let rep = power_bound_check(m.entries(), 2, m.params(), w, w.core(n / 4)).map_err(|e| e.to_string())?;
        ratios.push(rep.max_ratio);
    }
    let change = (ratios[1] - ratios[0]).abs() / ratios[0];
    ensure(change <= 0.10, format!("R = A, n = 2: {:.6} -> {:.6}, change {:.2e} (<= 0.10)", ratios[0], ratios[1], change))
}

fn neumann() -> Outcome {
    let m = lattice(100, 3.0, 1);
    let direct = dense_invert(&m).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut last = f64::INFINITY;
    let mut parts = Vec::new();
    for n in [5usize, 10, 20] {
        let (approx, state) = neumann_inverse(&m, n).map_err(|e| e.to_string())?;
        let err = approx.entries.max_abs_diff(&direct.entries);
        ok &= state.convergent && err <= state.remainder_bound && err < last;
        last = err;
        parts.push(format!("n={n}: {err:.4e} <= {:.4e}", state.remainder_bound));
    }
    ensure(ok, format!("{} (strictly decreasing)", parts.join(", ")))
}

fn interpolation_paths() -> Outcome {
    let m = lattice(100, 2.0, 2);
    let set = Arc::new(FundamentalSet::from_matrix(&m).map_err(|e| e.to_string())?);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let y: Vec<f64> = (0..m.size()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let interp = make_interpolant(&m, CoefficientVector(y)).map_err(|e| e.to_string())?.with_fundamentals(set).map_err(|e| e.to_string())?;
    let core = m.default_core();
    let (lo, hi) = m.window().hull(core);
    let mut gap: f64 = 0.0;
    for _ in 0..100 {
        let x = rng.gen_range(lo..=hi);
        let d = interp.eval(x, EvalPath::Direct).map_err(|e| e.to_string())?;
        let v = interp.eval(x, EvalPath::ViaFundamentals).map_err(|e| e.to_string())?;
        gap = gap.max((d - v).abs());
    }
    let node = interp.node_residual(core);
    ensure(gap <= 1e-10 && node <= 1e-8, format!("path gap {gap:.2e} (<= 1e-10), node residual {node:.2e} (<= 1e-8)"))
}

fn stability() -> Outcome {
    let leb = run_experiment(&config(r#"{"experiment":"lebesgue","alpha":2,"k":2,"N":100}"#)).map_err(|e| e.to_string())?;
    let drift = leb.result_f64("drift").unwrap();
    let node = leb.result_f64("node_deviation").unwrap();
    let st = run_experiment(&config(r#"{"experiment":"stability","alpha":2,"k":2,"N":100,"trials":50}"#)).map_err(|e| e.to_string())?;
    let mut ok = drift <= 0.05 && node <= 1e-8;
    let mut parts = Vec::new();
    for rec in st.result("norms").and_then(|v| v.as_array()).unwrap() {
        let d = rec["drift"].as_f64().unwrap();
        ok &= d <= 0.05;
        parts.push(format!("p={} ratio {:.4} drift {:.1e}", rec["p"].as_str().unwrap(), rec["max_ratio"].as_f64().unwrap(), d));
    }
    ok &= parts.len() == 3;
    ensure(ok, format!("cell sup drift {drift:.1e}, |Lambda(x_j) - 1| {node:.1e}; {} (drift <= 0.05)", parts.join(", ")))
}

fn growing_series() -> Outcome {
    let k = 2u32;
    let sets: Vec<FundamentalSet<f64>> = [150usize, 200]
        .iter()
        .map(|&n| FundamentalSet::from_matrix(&lattice(n, 2.0, k)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let weights = |set: &FundamentalSet<f64>| {
        let w = set.window();
        CoefficientVector((0..w.len()).map(|s| (w.logical(s).unsigned_abs() as f64).powi(2 * k as i32 - 2)).collect())
    };
    let b: Vec<CoefficientVector<f64>> = sets.iter().map(weights).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let x = rng.gen_range(5.0..=100.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let a = weighted_series_eval(&sets[0], &b[0], x).map_err(|e| e.to_string())?.value;
        let c = weighted_series_eval(&sets[1], &b[1], x).map_err(|e| e.to_string())?.value;
        worst = worst.max((c - a).abs() / a.abs());
    }
    let w = sets[1].window();
    let mut node: f64 = 0.0;
    for j in w.core(50).indices() {
        let v = weighted_series_eval(&sets[1], &b[1], w.at(j)).map_err(|e| e.to_string())?.value;
        node = node.max((v - (j * j) as f64).abs());
    }
    ensure(worst <= 1e-4 && node <= 1e-6, format!("relative change {worst:.2e} (<= 1e-4), node error {node:.2e} (<= 1e-6)"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let exe = env!("CARGO_BIN_EXE_imq");
    let names = [
        "cardinality",
        "decay-inverse",
        "decay-fundamental",
        "neumann",
        "lemma2",
        "interpolate",
        "lebesgue",
        "stability",
    ];
    let mut same = 0;
    for name in names {
        let cfg = dir.path().join(format!("{name}.json"));
        std::fs::write(&cfg, format!(r#"{{"experiment":"{name}","seed":7}}"#)).map_err(|e| e.to_string())?;
        let mut reports = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("{name}-{run}"));
            let status = Command::new(exe)
                .args([name, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
                .output()
                .map_err(|e| e.to_string())?;
            if status.status.code() != Some(0) {
                return Err(format!("{name} exited with {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stderr)));
            }
            reports.push(std::fs::read(out.join("report.json")).map_err(|e| e.to_string())?);
        }
        if reports[0] == reports[1] {
            same += 1;
        }
    }
    ensure(same == names.len(), format!("{same}/{} experiments byte-identical across two runs", names.len()))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 11] = [
        (1, "cardinality", cardinality),
        (2, "hand oracles", hand_oracles),
        (3, "partial fractions", partial_fractions),
        (4, "inverse decay", inverse_decay),
        (5, "fundamental decay", fundamental_decay),
        (6, "power bound stability", lemma_power),
        (7, "neumann inverse", neumann),
        (8, "interpolation paths", interpolation_paths),
        (9, "stability surrogates", stability),
        (10, "growing series", growing_series),
        (11, "determinism", determinism),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(detail) => println!("PASS  {id:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {id:>2} {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
