//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Runs without the libtest harness so
//! the report is always visible.

use std::collections::BTreeMap;
use std::io::Write;
use std::process::ExitCode;
use std::time::Instant;

use ewrls::data::{gen_nonlinear_ar, lag_embed, read_csv_series, standardize_causal, ColumnRef};
use ewrls::harness::{
    bandwidth_grid, bench_runtime, build_model, default_grid, prequential_run, sweep_dimensions, walk_forward, FoldKind,
    FoldSpec, ModelKind, ModelParams, RunOptions, SweepConfig, SweepRow, WalkForwardReport, GRID_WINDOWS,
};
use ewrls::verify::{gramian_identity, oracle_max_deviation, penrose_fuzz};

const SEED: u64 = 1;
const WINDOW: usize = 20;

// Criterion 1
const ORACLE_DIMS: [usize; 4] = [8, 20, 64, 1024];
const ORACLE_STEPS: usize = 500;
const ORACLE_TOL: f64 = 1e-6;
const ORACLE_BUDGET_S: f64 = 60.0;
// Criteria 2 to 5
const SWEEP_STEPS: usize = 10_000;
const TRAIN_TOL: f64 = 1e-8;
const TAIL_BAND: (f64, f64) = (0.44, 0.66);
const PEAK_FLOOR: f64 = 50.0;
const DESCENT_NOISE: f64 = 0.05;
const SWEEP_BUDGET_S: f64 = 20.0 * 60.0;
const COND_TAIL_BAND: (f64, f64) = (3.0, 7.1);
const COND_SMALL_FLOOR: f64 = 15.0;
// Criterion 6
const GRAM_STEPS: usize = 1000;
const GRAM_TOL: f64 = 1e-8;
// Criterion 7
const BENCH_STEPS: usize = 1000;
const BENCH_REPS: usize = 10;
const BENCH_RATIO: (f64, f64) = (1.5, 3.0);
// Criterion 8
const PAIRED_DIM: usize = 1 << 10;
const PAIRED_MAX_TOL: f64 = 1e-5;
// Criterion 9
const WF_LAGS: usize = 7;
const WF_DIM: usize = 64;
const WF_BANDWIDTHS: usize = 6;
const WF_VAL_LEN: usize = 500;
const WF_TEST_LEN: usize = 500;
// Criterion 10
const PENROSE_DIMS: [usize; 4] = [4, 20, 64, 512];
const PENROSE_STEPS: usize = 1000;
const PENROSE_TOL: f64 = 1e-8;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, passed: bool, detail: String) {
        if !passed {
            self.failures += 1;
        }
        let status = if passed { "PASS" } else { "FAIL" };
        println!("[{status}] criterion {id:>2} {name}: {detail}");
        let _ = std::io::stdout().flush();
    }

    fn error(&mut self, id: u32, name: &str, err: impl std::fmt::Display) {
        self.line(id, name, false, format!("error: {err}"));
    }
}

fn pow2(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|k| 1usize << k).collect()
}

fn sweep(lambda: f64, dims: Vec<usize>) -> ewrls::Result<(BTreeMap<usize, SweepRow>, f64)> {
    let cfg = SweepConfig { dims, lambda, steps: SWEEP_STEPS, window: WINDOW, seed: SEED, ..SweepConfig::default() };
    let start = Instant::now();
    let rows = sweep_dimensions(&cfg)?;
    Ok((rows.into_iter().map(|r| (r.dim, r)).collect(), start.elapsed().as_secs_f64()))
}

fn criterion_1(rep: &mut Report) {
    let name = "oracle equivalence";
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for &lambda in &[1.0, 0.9] {
        for &d in &ORACLE_DIMS {
            match oracle_max_deviation(WINDOW, d, lambda, ORACLE_STEPS, SEED, None) {
                Ok(dev) => {
                    worst = worst.max(dev);
                    parts.push(format!("D={d}/l={lambda}:{dev:.1e}"));
                }
                Err(e) => return rep.error(1, name, e),
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    rep.line(
        1,
        name,
        worst <= ORACLE_TOL && secs <= ORACLE_BUDGET_S,
        format!("max dev {worst:.2e} <= {ORACLE_TOL:.0e}, {secs:.1} s <= {ORACLE_BUDGET_S} s [{}]", parts.join(" ")),
    );
}

fn train_check(rows: &BTreeMap<usize, SweepRow>) -> (bool, f64) {
    let worst = pow2(5, 14).iter().map(|d| rows[d].train.mean).fold(0.0, f64::max);
    let clean = pow2(5, 14).iter().all(|d| rows[d].train.non_finite == 0);
    (clean && worst <= TRAIN_TOL, worst)
}

fn criteria_2_to_4(rep: &mut Report) {
    let mut dims = pow2(4, 14);
    dims.push(WINDOW);
    let (rows, secs) = match sweep(1.0, dims) {
        Ok(r) => r,
        Err(e) => {
            for (id, name) in [(2, "interpolation regime"), (3, "double descent"), (4, "condition numbers")] {
                rep.error(id, name, &e);
            }
            return;
        }
    };

    let (ok, worst) = train_check(&rows);
    rep.line(2, "interpolation regime", ok, format!("max train mean over D=2^5..2^14 {worst:.2e} <= {TRAIN_TOL:.0e}"));

    let tail = rows[&(1 << 14)].test.mean;
    let peak = &rows[&WINDOW];
    let descent: Vec<f64> = pow2(5, 8).iter().map(|d| rows[d].test.mean).collect();
    let descending = descent.windows(2).all(|w| w[1] < w[0] * (1.0 + DESCENT_NOISE));
    let ok = (TAIL_BAND.0..=TAIL_BAND.1).contains(&tail) && peak.test.mean >= PEAK_FLOOR && descending && secs <= SWEEP_BUDGET_S;
    rep.line(
        3,
        "double descent",
        ok,
        format!(
            "test mean D=2^14 {tail:.4} in [{}, {}]; D=N {:.2} >= {PEAK_FLOOR} (median {:.3}); D=2^5..2^8 {:?} decreasing within {}%; sweep {secs:.0} s <= {SWEEP_BUDGET_S} s",
            TAIL_BAND.0,
            TAIL_BAND.1,
            peak.test.mean,
            peak.test_median,
            descent.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
            DESCENT_NOISE * 100.0
        ),
    );

    let big = &rows[&(1 << 14)];
    let small = &rows[&(1 << 4)];
    let big_cond = if big.cond_infinite { f64::INFINITY } else { big.cond.mean };
    let small_cond = if small.cond_infinite { f64::INFINITY } else { small.cond.mean };
    let ok = (COND_TAIL_BAND.0..=COND_TAIL_BAND.1).contains(&big_cond) && small_cond >= COND_SMALL_FLOOR && peak.cond_infinite;
    rep.line(
        4,
        "condition numbers",
        ok,
        format!(
            "mean kappa D=2^14 {big_cond:.4} in [{}, {}]; D=2^4 {small_cond:.2} >= {COND_SMALL_FLOOR}; D=N sentinel infinite: {} (raw mean {:.3e})",
            COND_TAIL_BAND.0, COND_TAIL_BAND.1, peak.cond_infinite, peak.cond.mean
        ),
    );
}

fn criterion_5(rep: &mut Report) {
    let name = "forgetting-factor invariance";
    let mut dims = pow2(5, 14);
    dims.push(WINDOW);
    let (rows, _) = match sweep(0.9, dims) {
        Ok(r) => r,
        Err(e) => return rep.error(5, name, e),
    };
    let (train_ok, worst) = train_check(&rows);
    let tail = rows[&(1 << 14)].test.mean;
    let peak = rows[&WINDOW].test.mean;
    let ok = train_ok && (TAIL_BAND.0..=TAIL_BAND.1).contains(&tail) && peak >= PEAK_FLOOR;
    rep.line(
        5,
        name,
        ok,
        format!(
            "lambda=0.9: max train mean {worst:.2e} <= {TRAIN_TOL:.0e}; test mean D=2^14 {tail:.4} in [{}, {}]; D=N {peak:.2} >= {PEAK_FLOOR}",
            TAIL_BAND.0, TAIL_BAND.1
        ),
    );
}

fn criterion_6(rep: &mut Report) {
    let name = "weighted Gramian downdate identity";
    match gramian_identity(WINDOW, 64, 0.9, GRAM_STEPS, SEED) {
        Ok(v) => rep.line(6, name, v <= GRAM_TOL, format!("max relative violation {v:.2e} <= {GRAM_TOL:.0e} over {GRAM_STEPS} steps")),
        Err(e) => rep.error(6, name, e),
    }
}

fn criterion_7(rep: &mut Report) {
    let name = "runtime scaling";
    let cfg = SweepConfig {
        dims: pow2(9, 14),
        steps: BENCH_STEPS,
        track_condition: false,
        workers: 1,
        seed: SEED,
        ..SweepConfig::default()
    };
    let rows = match bench_runtime(&cfg, BENCH_REPS) {
        Ok(r) => r,
        Err(e) => return rep.error(7, name, e),
    };
    let ratios: Vec<f64> = rows.windows(2).map(|w| w[1].mean_ms / w[0].mean_ms).collect();
    let ok = ratios.iter().all(|r| (BENCH_RATIO.0..=BENCH_RATIO.1).contains(r));
    let ms: Vec<String> = rows.iter().map(|r| format!("{:.1}", r.mean_ms)).collect();
    let rs: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    rep.line(
        7,
        name,
        ok,
        format!(
            "doubling ratios D=2^9..2^14 [{}] in [{}, {}] (ms per {BENCH_STEPS} steps: {}, {BENCH_REPS} reps)",
            rs.join(", "),
            BENCH_RATIO.0,
            BENCH_RATIO.1,
            ms.join(", ")
        ),
    );
}

fn criterion_8(rep: &mut Report) {
    let name = "stability vs covariance form";
    let cfg = SweepConfig { steps: SWEEP_STEPS, seed: SEED, ..SweepConfig::default() };
    let run = || -> ewrls::Result<(f64, f64, f64, u64)> {
        let stream = cfg.stream()?;
        let (init, eval) = stream.split_at(cfg.window);
        let opts = RunOptions { track_condition: false, oracle: true };
        let abo_params = ModelParams::abo(cfg.window, PAIRED_DIM, cfg.bandwidth, 1.0, cfg.lags, SEED);
        let mut abo = build_model(&abo_params, init)?;
        let abo_res = prequential_run(abo.as_mut(), eval, opts)?;
        let mut cov = build_model(&abo_params.with_kind(ModelKind::CovRls), init)?;
        let cov_res = prequential_run(cov.as_mut(), eval, opts)?;
        Ok((abo_res.oracle_median(), abo_res.oracle_max(), cov_res.oracle_median(), cov_res.divergences))
    };
    match run() {
        Ok((abo_med, abo_max, cov_med, divergences)) => rep.line(
            8,
            name,
            cov_med >= abo_med && abo_max <= PAIRED_MAX_TOL,
            format!(
                "D=2^10: median dev covariance {cov_med:.2e} >= ABO {abo_med:.2e}; ABO max {abo_max:.2e} <= {PAIRED_MAX_TOL:.0e} (covariance divergences {divergences})"
            ),
        ),
        Err(e) => rep.error(8, name, e),
    }
}

fn folds_are_disjoint(spec: &FoldSpec) -> bool {
    let folds = spec.folds();
    let tests: Vec<_> = folds.iter().filter(|f| f.kind == FoldKind::Test).collect();
    let overlaps = |a: &ewrls::harness::Fold, b: &ewrls::harness::Fold| a.start < b.end && b.start < a.end;
    let test_pairs_ok = tests.iter().enumerate().all(|(i, a)| tests[i + 1..].iter().all(|b| !overlaps(a, b)));
    let vs_val_ok = tests.iter().all(|t| folds.iter().filter(|f| f.kind == FoldKind::Validation).all(|v| !overlaps(t, v)));
    let warm_ok = folds.iter().all(|f| f.start >= spec.warmup);
    let test_warm_ok = tests
        .iter()
        .all(|t| folds.iter().filter(|f| f.end <= t.start).all(|f| f.end + spec.warmup <= t.start));
    test_pairs_ok && vs_val_ok && warm_ok && test_warm_ok
}

fn selection_is_argmin(report: &WalkForwardReport) -> bool {
    let best = report.grid.iter().map(|g| g.val_mse).fold(f64::INFINITY, f64::min);
    let first_best = report.grid.iter().find(|g| g.val_mse == best).map(|g| &g.params);
    first_best == Some(&report.selected)
}

fn criterion_9(rep: &mut Report) {
    let name = "walk-forward on synthetic CSV";
    let run = || -> Result<(bool, String), Box<dyn std::error::Error>> {
        let dir = tempfile::tempdir()?;
        let path = dir.path().join("synthetic.csv");
        let series = gen_nonlinear_ar(10_500, SEED)?;
        let mut text = String::from("value\n");
        for v in &series.values {
            text.push_str(&format!("{v:?}\n"));
        }
        std::fs::write(&path, text)?;
        let loaded = read_csv_series(&path, &ColumnRef::parse("value"))?;
        let stream = lag_embed(&standardize_causal(&loaded.values), WF_LAGS)?;

        let warmup = *GRID_WINDOWS.iter().max().unwrap();
        let spec = FoldSpec::standard(warmup, WF_VAL_LEN, WF_TEST_LEN);
        let abo_base = ModelParams::abo(GRID_WINDOWS[0], WF_DIM, 1.0, 1.0, WF_LAGS, SEED);
        let abo_grid = default_grid(&abo_base, &GRID_WINDOWS, &bandwidth_grid(WF_BANDWIDTHS));
        let qrd_grid = default_grid(&abo_base.with_kind(ModelKind::QrdRls), &GRID_WINDOWS, &[1.0]);
        let abo = walk_forward(&spec, &stream, &abo_grid, 0)?;
        let qrd = walk_forward(&spec, &stream, &qrd_grid, 0)?;

        let disjoint = folds_are_disjoint(&spec);
        let selected = selection_is_argmin(&abo) && selection_is_argmin(&qrd);
        let ordering = abo.mean_test_mse < qrd.mean_test_mse;
        let detail = format!(
            "folds disjoint and warmed: {disjoint}; selection is grid argmin: {selected}; test ResMSE ABO {:.4} (W={}, sigma={:.3}, D={WF_DIM}) < QRD-RLS {:.4} (W={}): {ordering}",
            abo.mean_test_mse, abo.selected.window, abo.selected.bandwidth, qrd.mean_test_mse, qrd.selected.window
        );
        Ok((disjoint && selected && ordering, detail))
    };
    match run() {
        Ok((passed, detail)) => rep.line(9, name, passed, detail),
        Err(e) => rep.error(9, name, e),
    }
}

fn criterion_10(rep: &mut Report) {
    let name = "Penrose axioms under fuzzing";
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (i, &d) in PENROSE_DIMS.iter().enumerate() {
        let lambda = if i % 2 == 0 { 1.0 } else { 0.9 };
        match penrose_fuzz(WINDOW, d, lambda, PENROSE_STEPS, SEED.wrapping_add(d as u64), None) {
            Ok((p, _)) => {
                worst = worst.max(p);
                parts.push(format!("D={d}:{p:.1e}"));
            }
            Err(e) => return rep.error(10, name, e),
        }
    }
    rep.line(
        10,
        name,
        worst <= PENROSE_TOL,
        format!("max residual {worst:.2e} <= {PENROSE_TOL:.0e} over {PENROSE_STEPS} steps [{}]", parts.join(" ")),
    );
}

fn main() -> ExitCode {
    // Allow `cargo test -- <filter>` style invocations to skip the suite.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }
    let start = Instant::now();
    let mut rep = Report { failures: 0 };
    criterion_1(&mut rep);
    criteria_2_to_4(&mut rep);
    criterion_5(&mut rep);
    criterion_6(&mut rep);
    criterion_7(&mut rep);
    criterion_8(&mut rep);
    criterion_9(&mut rep);
    criterion_10(&mut rep);
    println!("acceptance: {} of 10 criteria passed in {:.0} s", 10 - rep.failures, start.elapsed().as_secs_f64());
    if rep.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
