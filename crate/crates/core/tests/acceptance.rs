//! Acceptance suite. Runs every criterion and prints one PASS/FAIL line each.
//! With `ACCEPTANCE_STRICT=1` set, any failure makes the process exit non-zero.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use thresh_core::calibrate::{
    self, build_grid, evaluate_at, is_assigned, select_threshold, softmax_probs, sweep,
    top_two_gap, Target, ThresholdGrid, ThresholdSelection,
};
use thresh_core::dataset::{self, FeatureMatrix, LabeledDataset, SplitSpec};
use thresh_core::experiment::{
    compare_naive, naive_comparison_config, run_calibration_pipeline, DataSource, RunConfig,
    SplitSizes, StudyOptions, DIMENSION_STUDY_SEPARATION,
};
use thresh_core::model::{fit_gmm, score, Component, FitOptions, GmmParams, ScoreMatrix};
use thresh_core::simulate::{estimate_tvd, MixtureScenario};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Every selection made by the runs, with the target it was made for.
type Selections = Vec<(Target, ThresholdSelection)>;

fn random_scores(rng: &mut ChaCha8Rng, n: usize, k: usize) -> ScoreMatrix {
    let coarse = rng.random_bool(0.3);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..k)
                .map(|_| {
                    if coarse {
                        // small integers force ties between gaps and between classes
                        f64::from(rng.random_range(-3i32..=3))
                    } else {
                        rng.random_range(-20.0..20.0)
                    }
                })
                .collect()
        })
        .collect();
    ScoreMatrix::from_rows(&rows).unwrap()
}

fn random_truth(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(1..=k)).collect()
}

fn ionosphere_config(target: Target) -> RunConfig {
    let mut cfg = RunConfig::new(
        "ionosphere",
        DataSource::Dataset(dataset::ionosphere()),
        SplitSizes::new(151, 100, 100),
        target,
    );
    cfg.n_resamples = 100;
    cfg.seed = 2024;
    cfg
}

fn criterion_1(sel: &mut Selections) -> Outcome {
    let start = Instant::now();
    let report = run_calibration_pipeline(&ionosphere_config(Target::mcp(0.15))).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let arm = &report.arms[0];
    sel.extend(arm.runs.iter().map(|r| (arm.target, r.selection)));
    let rate = arm.test_success_rate();
    let pa = arm.test_pa_or_ae;
    outcome(
        rate >= 0.8 && (0.6..=0.95).contains(&pa) && elapsed < 30.0,
        format!(
            "test MCP <= .15 in {:.0}% of 100 splits, mean test PA {pa:.3}, mean test MCP {:.3}, {elapsed:.1}s",
            rate * 100.0,
            arm.test_metric
        ),
    )
}

fn criterion_2(sel: &mut Selections) -> Outcome {
    let report = run_calibration_pipeline(&ionosphere_config(Target::mcl(300.0))).unwrap();
    let arm = &report.arms[0];
    sel.extend(arm.runs.iter().map(|r| (arm.target, r.selection)));
    let rate = arm.test_success_rate();
    let ln2 = 2f64.ln();
    let in_range = |v: f64| (0.0..=ln2).contains(&v);
    let curves = arm.curves.as_ref().unwrap();
    let ae_ok = arm.runs.iter().all(|r| {
        in_range(r.selection.achieved.ae)
            && in_range(r.test.ae)
            && in_range(r.train_laxest.ae)
            && in_range(r.selection_laxest.ae)
    }) && [&curves.train, curves.calib.as_ref().unwrap(), &curves.test]
        .iter()
        .all(|c| c.ae_mean.iter().all(|&v| in_range(v)));
    outcome(
        rate >= 0.8 && ae_ok,
        format!(
            "test MCL <= 300 in {:.0}% of splits, mean test MCL {:.1}, mean test AE {:.4}, AE within [0, ln 2]: {ae_ok}",
            rate * 100.0,
            arm.test_metric,
            arm.test_pa_or_ae
        ),
    )
}

fn criterion_3(sel: &mut Selections) -> Outcome {
    let start = Instant::now();
    let opts = StudyOptions {
        seed: 3,
        ..StudyOptions::default()
    };
    let report = compare_naive(&naive_comparison_config(&opts)).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let thr = &report.arms[0];
    let naive = &report.arms[1];
    for arm in &report.arms {
        sel.extend(arm.runs.iter().map(|r| (arm.target, r.selection)));
    }
    let pass = thr.n_resamples == 50
        && thr.test_metric <= 0.25
        && naive.test_metric >= thr.test_metric + 0.05
        && naive.test_pa_or_ae >= 0.95
        && elapsed < 60.0;
    outcome(
        pass,
        format!(
            "thresholding MCP {:.3} / PA {:.3}; naive MCP {:.3} / PA {:.3}; {elapsed:.1}s",
            thr.test_metric, thr.test_pa_or_ae, naive.test_metric, naive.test_pa_or_ae
        ),
    )
}

fn criterion_4(sel: &mut Selections) -> Outcome {
    let mut sc = MixtureScenario::new(100, DIMENSION_STUDY_SEPARATION, 0.5, 500, 17);
    sc.center_seed = 17;
    let mut cfg = RunConfig::new(
        "d100",
        DataSource::Simulated(sc),
        SplitSizes::new(300, 100, 100),
        Target::mcp(0.2),
    );
    cfg.n_resamples = 20;
    cfg.seed = 17;
    let report = run_calibration_pipeline(&cfg).unwrap();
    let arm = &report.arms[0];
    sel.extend(arm.runs.iter().map(|r| (arm.target, r.selection)));
    let hits = arm
        .runs
        .iter()
        .filter(|r| r.train_laxest.mcp <= 0.02 && r.selection_laxest.mcp >= 0.15)
        .count();
    let mean = |f: &dyn Fn(&thresh_core::experiment::SplitOutcome) -> f64| {
        arm.runs.iter().map(f).sum::<f64>() / arm.runs.len() as f64
    };
    outcome(
        hits as f64 >= 0.9 * arm.runs.len() as f64 && arm.runs.len() == 20,
        format!(
            "signature in {hits}/20 seeds; mean laxest MCP train {:.3}, hold-out {:.3}",
            mean(&|r| r.train_laxest.mcp),
            mean(&|r| r.selection_laxest.mcp)
        ),
    )
}

/// Log-probabilities written out directly: `log p_j = -log sum_i exp((l_i - l_j) / t)`
/// with the sum shifted to the row maximum.
fn brute_log_probs(row: &[f64], t: f64) -> Vec<f64> {
    let k = row.len();
    if t.is_infinite() {
        return vec![-(k as f64).ln(); k];
    }
    let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let norm: f64 = row.iter().map(|&l| ((l - top) / t).exp()).sum();
    (0..k).map(|j| (row[j] - top) / t - norm.ln()).collect()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = 0;
    let mut worst = 0.0f64;
    let mut thresholds = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..=50);
        let k = rng.random_range(2..=4);
        let scores = random_scores(&mut rng, n, k);
        let truth = random_truth(&mut rng, n, k);
        let grid = build_grid(&scores, calibrate::DEFAULT_EPSILON).unwrap();
        let curve = sweep(&scores, &truth, &grid).unwrap();
        for (rec, &t) in curve.records.iter().zip(grid.values()) {
            thresholds += 1;
            let (mut c, mut wrong, mut mcl, mut ent) = (0usize, 0usize, 0.0, 0.0);
            for (i, row) in scores.rows().enumerate() {
                let mut best = 0;
                for j in 1..k {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                let mut sorted = row.to_vec();
                sorted.sort_by(|a, b| b.total_cmp(a));
                let gap = sorted[0] - sorted[1];
                if t.is_finite() && gap >= t {
                    c += 1;
                    if best + 1 != truth[i] {
                        wrong += 1;
                    }
                }
                let lp = brute_log_probs(row, t);
                mcl -= lp[truth[i] - 1];
                ent -= lp
                    .iter()
                    .map(|&l| {
                        if l == f64::NEG_INFINITY {
                            0.0
                        } else {
                            l.exp() * l
                        }
                    })
                    .sum::<f64>();
            }
            let mcp = if c == 0 { 0.0 } else { wrong as f64 / c as f64 };
            let pa = c as f64 / n as f64;
            let ae = ent / n as f64;
            worst = worst
                .max((rec.mcl - mcl).abs() / mcl.abs().max(1.0))
                .max((rec.ae - ae).abs() / ae.abs().max(1.0));
            let exact = rec.n_assigned == c
                && rec.n_misclassified == wrong
                && rec.mcp == mcp
                && rec.pa == pa;
            if !exact || !close(rec.mcl, mcl, 1e-10) || !close(rec.ae, ae, 1e-10) || rec.t != t {
                failures += 1;
            }
        }
    }
    outcome(
        failures == 0,
        format!("{thresholds} thresholds over 200 instances, {failures} mismatches, worst MCL/AE relative error {worst:.2e}"),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut problems = Vec::new();
    let mut worst_inf = 0.0f64;
    let mut t20 = vec![1e-12];
    t20.extend((0..18).map(|i| 10f64.powf(-3.0 + i as f64 * 5.0 / 17.0)));
    t20.push(f64::INFINITY);
    let grid20 = ThresholdGrid::new(t20).unwrap();
    for trial in 0..1000 {
        let n = rng.random_range(1..=60);
        let k = rng.random_range(2..=6);
        let scores = random_scores(&mut rng, n, k);
        let truth = random_truth(&mut rng, n, k);
        let grid = build_grid(&scores, calibrate::DEFAULT_EPSILON).unwrap();
        let curve = sweep(&scores, &truth, &grid).unwrap();
        let gaps: Vec<f64> = scores.rows().map(|r| top_two_gap(r).unwrap().1).collect();
        for m in 1..grid.len() {
            let (lo, hi) = (grid.values()[m - 1], grid.values()[m]);
            if curve.records[m].pa > curve.records[m - 1].pa {
                problems.push(format!("trial {trial}: PA increased"));
            }
            if gaps
                .iter()
                .any(|&g| is_assigned(g, hi) && !is_assigned(g, lo))
            {
                problems.push(format!("trial {trial}: nesting broken"));
            }
        }
        let c20 = sweep(&scores, &truth, &grid20).unwrap();
        for m in 1..grid20.len() {
            if c20.records[m].ae < c20.records[m - 1].ae {
                problems.push(format!(
                    "trial {trial}: AE decreased by {:e}",
                    c20.records[m - 1].ae - c20.records[m].ae
                ));
            }
        }
        let last = c20.records.last().unwrap().ae;
        worst_inf = worst_inf.max((last - (k as f64).ln()).abs());
    }
    let pass = problems.is_empty() && worst_inf <= 1e-12;
    outcome(
        pass,
        format!(
            "1000 matrices, {} violations{}, max |AE(inf) - ln k| {worst_inf:.1e}",
            problems.len(),
            problems
                .first()
                .map(|p| format!(" (first: {p})"))
                .unwrap_or_default()
        ),
    )
}

fn criterion_7() -> Outcome {
    let p = softmax_probs(&[0.0, -1.0], 1.0).unwrap();
    let example = (p[0] - 0.7311).abs() <= 1e-4 && (p[1] - 0.2689).abs() <= 1e-4;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_sum = 0.0f64;
    let mut worst_shift = 0.0f64;
    let mut non_finite = 0;
    for _ in 0..10_000 {
        let k = rng.random_range(2..=8);
        let scale = 10f64.powf(rng.random_range(-2.0..=8.0));
        let row: Vec<f64> = (0..k)
            .map(|_| rng.random_range(-1.0..=1.0) * scale)
            .collect();
        let t = if rng.random_bool(0.05) {
            f64::INFINITY
        } else {
            10f64.powf(rng.random_range(-12.0..=6.0))
        };
        let p = softmax_probs(&row, t).unwrap();
        if p.iter().any(|v| !v.is_finite()) {
            non_finite += 1;
        }
        worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
        let c = rng.random_range(-5.0..=5.0);
        let shifted: Vec<f64> = row.iter().map(|v| v + c).collect();
        let q = softmax_probs(&shifted, 1.0).unwrap();
        let p1 = softmax_probs(&row, 1.0).unwrap();
        if row.iter().all(|v| v.abs() < 1e3) {
            worst_shift = worst_shift.max(
                p1.iter()
                    .zip(&q)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
            );
        }
    }
    outcome(
        example && worst_sum <= 1e-12 && worst_shift <= 1e-12 && non_finite == 0,
        format!(
            "(0,-1) -> ({:.6}, {:.6}); max |sum - 1| {worst_sum:.1e}; max shift change {worst_shift:.1e}; {non_finite} non-finite rows",
            p[0], p[1]
        ),
    )
}

fn direct_log_density(c: &Component, x: &[f64]) -> f64 {
    // explicit inverse and determinant by cofactors, d <= 3
    let d = c.dim();
    let s = &c.covariance;
    let (det, inv): (f64, Vec<Vec<f64>>) = match d {
        1 => (s[0][0], vec![vec![1.0 / s[0][0]]]),
        2 => {
            let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
            (
                det,
                vec![
                    vec![s[1][1] / det, -s[0][1] / det],
                    vec![-s[1][0] / det, s[0][0] / det],
                ],
            )
        }
        3 => {
            let cof = |i: usize, j: usize| {
                let r: Vec<usize> = (0..3).filter(|&a| a != i).collect();
                let q: Vec<usize> = (0..3).filter(|&a| a != j).collect();
                let m = s[r[0]][q[0]] * s[r[1]][q[1]] - s[r[0]][q[1]] * s[r[1]][q[0]];
                if (i + j).is_multiple_of(2) {
                    m
                } else {
                    -m
                }
            };
            let det = (0..3).map(|j| s[0][j] * cof(0, j)).sum::<f64>();
            let inv = (0..3)
                .map(|i| (0..3).map(|j| cof(j, i) / det).collect())
                .collect();
            (det, inv)
        }
        _ => unreachable!(),
    };
    let diff: Vec<f64> = x.iter().zip(&c.mean).map(|(a, b)| a - b).collect();
    let mut quad = 0.0;
    for i in 0..d {
        for j in 0..d {
            quad += diff[i] * inv[i][j] * diff[j];
        }
    }
    c.weight.ln() - 0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + det.ln() + quad)
}

fn criterion_8() -> Outcome {
    let truth = GmmParams::new(vec![
        Component::isotropic(vec![0.0; 5], 1.0, 0.5),
        Component::isotropic(vec![3.0, 0.0, 0.0, 0.0, 0.0], 1.0, 0.5),
    ])
    .unwrap();
    let densities: Vec<_> = truth
        .components
        .iter()
        .map(|c| c.density().unwrap())
        .collect();
    let mut good = 0;
    let mut worst_mean = 0.0f64;
    let mut worst_weight = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let mut data = Vec::with_capacity(50_000);
        let mut labels = Vec::with_capacity(10_000);
        for _ in 0..10_000 {
            let l = if rng.random_bool(0.5) { 1 } else { 2 };
            data.extend(densities[l - 1].sample(&mut rng));
            labels.push(l);
        }
        let ds = LabeledDataset::new(
            FeatureMatrix::from_row_major(10_000, 5, data).unwrap(),
            labels,
            2,
        )
        .unwrap();
        let fit = fit_gmm(&ds, &FitOptions::default()).unwrap();
        let mut ok = true;
        for (f, t) in fit.components.iter().zip(&truth.components) {
            let dm = f
                .mean
                .iter()
                .zip(&t.mean)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let dw = (f.weight - t.weight).abs();
            worst_mean = worst_mean.max(dm);
            worst_weight = worst_weight.max(dw);
            ok &= dm <= 0.1 && dw <= 0.02;
        }
        good += usize::from(ok);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut worst_rel = 0.0f64;
    for d in 1..=3 {
        for _ in 0..20 {
            let data: Vec<f64> = (0..60 * d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let labels: Vec<usize> = (0..60).map(|i| 1 + i % 3).collect();
            let ds = LabeledDataset::new(
                FeatureMatrix::from_row_major(60, d, data).unwrap(),
                labels,
                3,
            )
            .unwrap();
            let fit = fit_gmm(&ds, &FitOptions::default()).unwrap();
            let x = FeatureMatrix::from_row_major(
                10,
                d,
                (0..10 * d).map(|_| rng.random_range(-5.0..5.0)).collect(),
            )
            .unwrap();
            let s = score(&fit, &x).unwrap();
            for (i, row) in x.rows().enumerate() {
                for (j, c) in fit.components.iter().enumerate() {
                    let direct = direct_log_density(c, row);
                    worst_rel = worst_rel.max((s.row(i)[j] - direct).abs() / direct.abs().max(1.0));
                }
            }
        }
    }
    outcome(
        good >= 95 && worst_rel <= 1e-10,
        format!(
            "recovered in {good}/100 seeds (worst mean error {worst_mean:.3}, weight error {worst_weight:.4}); worst score relative error {worst_rel:.1e}"
        ),
    )
}

fn criterion_9() -> Outcome {
    let f = Component::isotropic(vec![0.2, -1.0], 0.7, 1.0);
    let same = estimate_tvd(&f, &f, 1000, 9).unwrap();
    let zero = same.estimate == 0.0;

    let a = Component::isotropic(vec![0.0], 1.0, 1.0);
    let b = Component::isotropic(vec![3.0], 1.0, 1.0);
    let est = estimate_tvd(&a, &b, 100_000, 99).unwrap();
    let exact = 2.0 * Normal::standard().cdf(1.5) - 1.0;
    let z = (est.estimate - exact).abs() / est.std_error;

    let by_sep: Vec<f64> = [0.0, 1.0, 2.0, 4.0]
        .iter()
        .map(|&s| {
            let g = Component::isotropic(vec![s], 1.0, 1.0);
            estimate_tvd(&a, &g, 100_000, 5).unwrap().estimate
        })
        .collect();
    let monotone = by_sep.windows(2).all(|w| w[1] > w[0]);
    outcome(
        zero && z <= 3.0 && monotone,
        format!(
            "f=g gives {}; N(0,1) vs N(3,1): {:.4} +/- {:.4} vs {exact:.4} ({z:.2} SE); by separation {:?}",
            same.estimate,
            est.estimate,
            est.std_error,
            by_sep.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    )
}

fn criterion_10(mut sel: Selections) -> Outcome {
    // direct recomputation on ionosphere hold-out sets
    let data = dataset::ionosphere();
    let mut recomputed = 0;
    let mut mismatched = 0;
    for seed in 0..20 {
        let (train, calib, _) =
            dataset::split(&data, &SplitSpec::new(151, 100, 100, seed)).unwrap();
        let params = fit_gmm(&train, &FitOptions::default()).unwrap();
        let scores = score(&params, calib.features()).unwrap();
        let grid = build_grid(&scores, calibrate::DEFAULT_EPSILON).unwrap();
        let curve = sweep(&scores, calib.labels(), &grid).unwrap();
        for target in [
            Target::mcp(0.1),
            Target::mcp(0.0),
            Target::mcl(50.0),
            Target::mcl(1e-9),
            Target::mcp(-0.5),
        ] {
            let s = select_threshold(&curve, target);
            if s.feasible {
                let again = evaluate_at(&scores, calib.labels(), s.t_star).unwrap();
                recomputed += 1;
                if again != s.achieved || !target.is_met_by(&again) {
                    mismatched += 1;
                }
            }
            sel.push((target, s));
        }
    }
    let total = sel.len();
    let mut feasible = 0;
    let mut bad = 0;
    let mut infeasible = 0;
    for (target, s) in &sel {
        if s.feasible {
            feasible += 1;
            if s.achieved.t != s.t_star || target.metric(&s.achieved) > target.value {
                bad += 1;
            }
        } else {
            infeasible += 1;
            if s.t_star != f64::INFINITY {
                bad += 1;
            }
        }
    }
    outcome(
        bad == 0 && mismatched == 0 && infeasible > 0,
        format!(
            "{total} selections: {feasible} feasible, {infeasible} infeasible, {bad} violations; {recomputed} re-evaluated directly, {mismatched} mismatches"
        ),
    )
}

fn main() {
    let mut selections = Selections::new();
    let names = [
        "1 ionosphere MCP pipeline",
        "2 ionosphere MCL pipeline",
        "3 naive comparison direction",
        "4 overfitting signature",
        "5 sweep-oracle equivalence",
        "6 monotonicity suite",
        "7 softmax correctness",
        "8 GMM recovery",
        "9 TVD estimator",
        "10 selection guarantee",
    ];
    let mut results = vec![
        criterion_1(&mut selections),
        criterion_2(&mut selections),
        criterion_3(&mut selections),
        criterion_4(&mut selections),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
        criterion_9(),
    ];
    results.push(criterion_10(selections));

    let mut failed = 0;
    for (name, r) in names.iter().zip(&results) {
        let tag = if r.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!r.pass);
        println!("[{tag}] criterion {name}: {}", r.detail);
    }
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
