use std::fmt::Write as _;

use thresh_core::calibrate::{build_grid, sweep, SweepOptions, Target};
use thresh_core::dataset::{self, LabeledDataset, SplitSpec};
use thresh_core::experiment::{
    compare_naive, naive_comparison_config, naive_split, resample_average,
    run_calibration_pipeline, run_dimension_study, run_ozone_full_study, run_ozone_reduced_study,
    run_separation_study, run_study, thresholding_split, DataSource, PipelineSettings, RunConfig,
    SplitSizes, Study, StudyOptions,
};
use thresh_core::model::{fit_gmm, FitOptions, ScoreMatrix};
use thresh_core::simulate::{self, MixtureScenario};

fn ionosphere_splits(seed: u64) -> (LabeledDataset, LabeledDataset, LabeledDataset) {
    dataset::split(&dataset::ionosphere(), &SplitSpec::new(151, 100, 100, seed)).unwrap()
}

fn simulated(
    dim: usize,
    separation: f64,
    n: usize,
    split: SplitSizes,
    target: Target,
) -> RunConfig {
    let mut sc = MixtureScenario::new(dim, separation, 0.5, n, 4);
    sc.center_seed = 4;
    let mut cfg = RunConfig::new("sim", DataSource::Simulated(sc), split, target);
    cfg.seed = 4;
    cfg
}

#[test]
fn identical_configs_give_identical_reports() {
    let mut cfg = simulated(5, 2.0, 120, SplitSizes::new(60, 30, 30), Target::mcp(0.2));
    cfg.n_resamples = 6;
    cfg.oracle = true;
    cfg.naive = true;
    let a = run_calibration_pipeline(&cfg).unwrap();
    let b = run_calibration_pipeline(&cfg).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let (mut ta, mut tb) = (Vec::new(), Vec::new());
    a.write_table_csv(&mut ta).unwrap();
    b.write_table_csv(&mut tb).unwrap();
    assert_eq!(ta, tb);
    let (ca, cb) = (
        a.arms[0].curves.as_ref().unwrap(),
        b.arms[0].curves.as_ref().unwrap(),
    );
    let (mut wa, mut wb) = (Vec::new(), Vec::new());
    ca.test.write_csv(&mut wa).unwrap();
    cb.test.write_csv(&mut wb).unwrap();
    assert_eq!(wa, wb);
}

#[test]
fn report_independent_of_thread_count() {
    let mut cfg = simulated(4, 2.0, 100, SplitSizes::new(50, 25, 25), Target::mcp(0.2));
    cfg.n_resamples = 8;
    let parallel = run_calibration_pipeline(&cfg).unwrap().to_json().unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let serial = pool.install(|| run_calibration_pipeline(&cfg).unwrap().to_json().unwrap());
    assert_eq!(parallel, serial);
}

#[test]
fn threshold_does_not_depend_on_test_rows() {
    let settings = PipelineSettings {
        target: Target::mcp(0.15),
        ..PipelineSettings::default()
    };
    let (train, calib, test) = ionosphere_splits(11);
    let scorer = fit_gmm(&train, &FitOptions::default())
        .unwrap()
        .scorer()
        .unwrap();
    let (base, _) = thresholding_split(&scorer, &train, &calib, &test, &settings).unwrap();

    let reversed: Vec<usize> = (0..test.n()).rev().collect();
    let permuted = test.select_rows(&reversed);
    let (again, _) = thresholding_split(&scorer, &train, &calib, &permuted, &settings).unwrap();
    assert_eq!(base.selection, again.selection);
    assert_eq!(base.test, again.test);

    let other = test.select_rows(&(0..40).collect::<Vec<_>>());
    let (partial, _) = thresholding_split(&scorer, &train, &calib, &other, &settings).unwrap();
    assert_eq!(base.selection, partial.selection);
    assert_ne!(base.test.n_assigned, partial.test.n_assigned);
}

#[test]
fn single_resample_average_equals_raw_curves() {
    let settings = PipelineSettings::default();
    let (train, calib, test) = ionosphere_splits(3);
    let scorer = fit_gmm(&train, &FitOptions::default())
        .unwrap()
        .scorer()
        .unwrap();
    let (_, scores) = thresholding_split(&scorer, &train, &calib, &test, &settings).unwrap();
    let raw = scores.curves(&SweepOptions::default()).unwrap();
    let avg = resample_average(std::slice::from_ref(&scores), &SweepOptions::default()).unwrap();
    let calib_avg = avg.calib.unwrap();
    assert_eq!(calib_avg.grid, scores.grid);
    for (j, rec) in raw.calib.unwrap().records.iter().enumerate() {
        assert_eq!(calib_avg.mcp_mean[j], rec.mcp);
        assert_eq!(calib_avg.pa_mean[j], rec.pa);
        assert_eq!(calib_avg.mcl_mean[j], rec.mcl);
        assert_eq!(calib_avg.ae_mean[j], rec.ae);
        assert_eq!(calib_avg.pa_sd[j], 0.0);
    }
    for (j, rec) in raw.test.records.iter().enumerate() {
        assert_eq!(avg.test.pa_mean[j], rec.pa);
    }
}

#[test]
fn averaged_step_curve_matches_lookup_at_reference_thresholds() {
    let mut cfg = simulated(3, 1.5, 90, SplitSizes::new(40, 25, 25), Target::mcp(0.2));
    cfg.n_resamples = 3;
    let report = run_calibration_pipeline(&cfg).unwrap();
    let curves = report.arms[0].curves.as_ref().unwrap();
    // PA in [0, 1], non-increasing along the grid
    let pa = &curves.calib.as_ref().unwrap().pa_mean;
    assert!(pa.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(*pa.last().unwrap(), 0.0);
    assert!(curves.test.grid.len() <= 200);
}

#[test]
fn naive_arm_fits_on_train_plus_holdout() {
    let cfg = naive_comparison_config(&StudyOptions {
        n_resamples: Some(3),
        ..StudyOptions::default()
    });
    let report = compare_naive(&cfg).unwrap();
    assert_eq!(report.arms.len(), 2);
    let (thr, naive) = (&report.arms[0], &report.arms[1]);
    assert_eq!(naive.name, "naive-comparison/naive");
    assert!(thr.runs.iter().all(|r| r.n_fit == 45));
    assert!(naive.runs.iter().all(|r| r.n_fit == 60));
    for (a, b) in thr.runs.iter().zip(&naive.runs) {
        assert_eq!(a.seed, b.seed);
    }
}

#[test]
fn naive_split_selects_on_its_training_curve() {
    let (train, calib, test) = ionosphere_splits(5);
    let settings = PipelineSettings {
        target: Target::mcp(0.2),
        ..PipelineSettings::default()
    };
    let (out, scores) = naive_split(&train, &calib, &test, &settings).unwrap();
    assert_eq!(out.n_fit, 251);
    assert!(scores.calib.is_none());
    let curve = sweep(&scores.train.0, &scores.train.1, &scores.grid).unwrap();
    assert_eq!(
        out.selection.achieved,
        *curve.at(out.selection.t_star).unwrap()
    );
}

#[test]
fn perfectly_separated_scenario_has_no_errors() {
    let mut cfg = simulated(
        2,
        100.0,
        150,
        SplitSizes::new(90, 30, 30),
        Target::mcp(0.25),
    );
    cfg.oracle = true;
    cfg.naive = true;
    let report = run_calibration_pipeline(&cfg).unwrap();
    for arm in &report.arms {
        assert_eq!(arm.test_metric, 0.0, "{}", arm.name);
        assert_eq!(arm.test_pa_or_ae, 1.0, "{}", arm.name);
    }
}

#[test]
fn vacuous_and_strict_targets() {
    let lax = run_calibration_pipeline(&simulated(
        4,
        1.0,
        100,
        SplitSizes::new(50, 25, 25),
        Target::mcp(1.0),
    ))
    .unwrap();
    let run = &lax.arms[0].runs[0];
    assert_eq!(
        run.selection.t_star,
        thresh_core::calibrate::DEFAULT_EPSILON
    );
    assert_eq!(run.selection.achieved, run.selection_laxest);

    let strict = run_calibration_pipeline(&simulated(
        4,
        1.0,
        100,
        SplitSizes::new(50, 25, 25),
        Target::mcp(0.0),
    ))
    .unwrap();
    let s = strict.arms[0].runs[0].selection;
    assert!(s.feasible);
    assert_eq!(s.achieved.mcp, 0.0);

    let impossible = run_calibration_pipeline(&simulated(
        4,
        1.0,
        100,
        SplitSizes::new(50, 25, 25),
        Target::mcl(1e-9),
    ))
    .unwrap();
    let s = impossible.arms[0].runs[0].selection;
    assert!(!s.feasible);
    assert_eq!(s.t_star, f64::INFINITY);
    assert_eq!(impossible.arms[0].feasible_fraction, 0.0);
}

#[test]
fn grid_comes_from_holdout_scores() {
    let settings = PipelineSettings::default();
    let (train, calib, test) = ionosphere_splits(8);
    let params = fit_gmm(&train, &FitOptions::default()).unwrap();
    let scorer = params.scorer().unwrap();
    let (_, scores) = thresholding_split(&scorer, &train, &calib, &test, &settings).unwrap();
    let calib_scores: ScoreMatrix = thresh_core::model::score(&params, calib.features()).unwrap();
    assert_eq!(
        scores.grid,
        build_grid(&calib_scores, settings.epsilon).unwrap()
    );
}

#[test]
fn separation_study_orders_difficulty() {
    let report = run_separation_study(&StudyOptions {
        n_resamples: Some(4),
        seed: 1,
        ..StudyOptions::default()
    })
    .unwrap();
    let names: Vec<&str> = report.arms.iter().map(|a| a.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "easy",
            "easy/oracle",
            "medium",
            "medium/oracle",
            "hard",
            "hard/oracle"
        ]
    );
    let lax = |name: &str| {
        let a = report.arm(name).unwrap();
        a.runs.iter().map(|r| r.test_laxest.mcp).sum::<f64>() / a.runs.len() as f64
    };
    assert!(lax("easy/oracle") < lax("medium/oracle"));
    assert!(lax("medium/oracle") < lax("hard/oracle"));
    assert!(report.arm("easy").unwrap().test_pa_or_ae > report.arm("hard").unwrap().test_pa_or_ae);
}

#[test]
fn dimension_study_reports_comparable_tvd() {
    let report = run_dimension_study(&StudyOptions {
        n_resamples: Some(2),
        tvd_samples: 20_000,
        ..StudyOptions::default()
    })
    .unwrap();
    let tvd: Vec<f64> = ["d10", "d20", "d100"]
        .iter()
        .map(|n| report.arm(n).unwrap().tvd.unwrap().estimate)
        .collect();
    for a in &tvd {
        for b in &tvd {
            assert!((a / b - 1.0).abs() <= 0.25, "{tvd:?}");
        }
    }
    let d100 = report.arm("d100").unwrap();
    assert!(d100.runs.iter().all(|r| r.train_laxest.mcp <= 0.02));
}

#[test]
fn ionosphere_study_runs_both_targets_on_the_same_split() {
    let report = run_study(Study::Ionosphere, &StudyOptions::default()).unwrap();
    let (mcp, mcl) = (
        report.arm("ionosphere-mcp").unwrap(),
        report.arm("ionosphere-mcl").unwrap(),
    );
    assert_eq!(mcp.runs[0].seed, mcl.runs[0].seed);
    assert_eq!(
        mcp.runs[0].test_laxest.n_assigned,
        mcl.runs[0].test_laxest.n_assigned
    );
    assert!(mcp.holdout_metric <= 0.15);
    assert!(mcl.holdout_metric <= 300.0);
    assert!((0.0..=2f64.ln()).contains(&mcl.test_pa_or_ae));
}

/// Synthetic file in the ozone layout: date, 72 features, 0/1 class, `?` gaps.
fn synthetic_ozone(rows: usize, positives: usize) -> tempfile::NamedTempFile {
    let (data, _) = simulate::generate(&MixtureScenario::new(72, 3.0, 1.0, rows, 21)).unwrap();
    let mut text = String::new();
    let mut pos = 0;
    for i in 0..rows {
        let label = if pos < positives && data.labels()[i] == 2 {
            pos += 1;
            1
        } else {
            0
        };
        write!(text, "1/{}/1998", 1 + i % 28).unwrap();
        for (j, v) in data.features().row(i).iter().enumerate() {
            if i % 97 == 5 && j == 10 {
                text.push_str(",?");
            } else {
                let shift = if label == 1 { 0.0 } else { -1.0 };
                write!(text, ",{}", v + shift * f64::from(u8::from(j < 3))).unwrap();
            }
        }
        writeln!(text, ",{label}").unwrap();
    }
    let file = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(file.path(), text).unwrap();
    file
}

#[test]
fn ozone_reduced_study_on_synthetic_file() {
    let file = synthetic_ozone(400, 60);
    let opts = StudyOptions {
        data_path: Some(file.path().to_path_buf()),
        ..StudyOptions::default()
    };
    let report = run_ozone_reduced_study(&opts).unwrap();
    let arm = &report.arms[0];
    assert_eq!(arm.target, Target::mcp(0.2));
    assert_eq!(arm.runs[0].n_fit, 100);
    assert!(arm.runs[0].test_laxest.n_assigned <= 50);
}

#[test]
fn ozone_full_study_on_synthetic_file() {
    let file = synthetic_ozone(1900, 130);
    let opts = StudyOptions {
        data_path: Some(file.path().to_path_buf()),
        ..StudyOptions::default()
    };
    let report = run_ozone_full_study(&opts).unwrap();
    let arm = &report.arms[0];
    assert_eq!(arm.target, Target::mcp(0.02));
    assert_eq!(arm.runs[0].n_fit, 616);
}
