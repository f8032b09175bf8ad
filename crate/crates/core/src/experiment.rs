//! Experiment runners: the end-to-end calibration pipeline, resample
//! averaging, the naive no-hold-out baseline and the named studies
//! (separation, dimension, naive comparison, ionosphere, ozone).
//!
//! Each resample runs on its own seed derived from the run seed, so
//! resamples execute in parallel and are merged by index.

use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{
    self, build_grid, build_grid_pooled, evaluate_at_with, select_threshold, sweep_with,
    CalibrationCurve, CurveRecord, SweepOptions, Target, TargetKind, ThresholdGrid,
    ThresholdSelection,
};
use crate::dataset::{self, CsvSchema, LabeledDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{fit_gmm, FitOptions, GmmParams, ScoreMatrix, Scorer};
use crate::rng::child_seed;
use crate::serde_ext;
use crate::simulate::{self, estimate_tvd, MixtureScenario, TvdEstimate};

/// Number of thresholds in the common grid used to average resampled curves.
pub const REFERENCE_GRID_SIZE: usize = 200;

#[derive(Debug, Clone)]
pub enum DataSource {
    Simulated(MixtureScenario),
    Dataset(LabeledDataset),
    Csv { path: PathBuf, schema: CsvSchema },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub n_train: usize,
    pub n_calib: usize,
    pub n_test: usize,
    #[serde(default)]
    pub stratified: bool,
}

impl SplitSizes {
    pub fn new(n_train: usize, n_calib: usize, n_test: usize) -> Self {
        SplitSizes {
            n_train,
            n_calib,
            n_test,
            stratified: false,
        }
    }

    fn with_seed(self, seed: u64) -> SplitSpec {
        SplitSpec {
            n_train: self.n_train,
            n_calib: self.n_calib,
            n_test: self.n_test,
            seed,
            stratified: self.stratified,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalancedSubsample {
    pub take_all_class: usize,
    pub n_other: usize,
}

/// Which scores the threshold grid is enumerated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GridSource {
    /// Hold-out scores only.
    #[default]
    Calibration,
    /// Training, hold-out and test scores together.
    Pooled,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub name: String,
    pub source: DataSource,
    pub split: SplitSizes,
    pub epsilon: f64,
    pub fit: FitOptions,
    pub target: Target,
    pub n_resamples: usize,
    pub seed: u64,
    /// Add an arm scored with the generating parameters (simulations only).
    pub oracle: bool,
    /// Add the naive arm: fit on train + hold-out, select on its own
    /// training curve.
    pub naive: bool,
    pub screen_top_k: Option<usize>,
    pub balanced: Option<BalancedSubsample>,
    pub grid_source: GridSource,
    pub sweep: SweepOptions,
    /// Simulations only: draw a fresh sample per resample instead of
    /// re-splitting one sample.
    pub regenerate: bool,
}

impl RunConfig {
    pub fn new(
        name: impl Into<String>,
        source: DataSource,
        split: SplitSizes,
        target: Target,
    ) -> Self {
        RunConfig {
            name: name.into(),
            source,
            split,
            epsilon: calibrate::DEFAULT_EPSILON,
            fit: FitOptions::default(),
            target,
            n_resamples: 1,
            seed: 0,
            oracle: false,
            naive: false,
            screen_top_k: None,
            balanced: None,
            grid_source: GridSource::Calibration,
            sweep: SweepOptions::default(),
            regenerate: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_resamples == 0 {
            return Err(Error::InvalidArgument(
                "n_resamples must be at least 1".into(),
            ));
        }
        if self.split.n_train == 0 || self.split.n_calib == 0 || self.split.n_test == 0 {
            return Err(Error::InvalidArgument(
                "the pipeline needs non-empty training, hold-out and test sets".into(),
            ));
        }
        if self.oracle && !matches!(self.source, DataSource::Simulated(_)) {
            return Err(Error::InvalidArgument(
                "oracle curves need a simulated data source".into(),
            ));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        Ok(())
    }

    fn pipeline(&self) -> PipelineSettings {
        PipelineSettings {
            epsilon: self.epsilon,
            fit: self.fit,
            target: self.target,
            grid_source: self.grid_source,
            sweep: self.sweep,
        }
    }
}

/// Settings of a single calibrate-and-apply pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineSettings {
    pub epsilon: f64,
    pub fit: FitOptions,
    pub target: Target,
    pub grid_source: GridSource,
    pub sweep: SweepOptions,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            epsilon: calibrate::DEFAULT_EPSILON,
            fit: FitOptions::default(),
            target: Target::mcp(0.1),
            grid_source: GridSource::Calibration,
            sweep: SweepOptions::default(),
        }
    }
}

/// Result of one arm on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub resample: usize,
    pub seed: u64,
    /// Rows used to fit the scorer (0 for oracle arms).
    pub n_fit: usize,
    pub selection: ThresholdSelection,
    /// Test metrics at the selected threshold.
    pub test: CurveRecord,
    /// Metrics at the laxest grid threshold.
    pub train_laxest: CurveRecord,
    pub selection_laxest: CurveRecord,
    pub test_laxest: CurveRecord,
}

/// Scores kept from one split for curve construction.
#[derive(Debug, Clone)]
pub struct SplitScores {
    pub grid: ThresholdGrid,
    pub train: (ScoreMatrix, Vec<usize>),
    /// Hold-out scores; absent for the naive arm.
    pub calib: Option<(ScoreMatrix, Vec<usize>)>,
    pub test: (ScoreMatrix, Vec<usize>),
}

impl SplitScores {
    pub fn curves(&self, sweep: &SweepOptions) -> Result<SplitCurves> {
        let run = |(s, t): &(ScoreMatrix, Vec<usize>)| sweep_with(s, t, &self.grid, sweep);
        Ok(SplitCurves {
            train: run(&self.train)?,
            calib: self.calib.as_ref().map(run).transpose()?,
            test: run(&self.test)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SplitCurves {
    pub train: CalibrationCurve,
    pub calib: Option<CalibrationCurve>,
    pub test: CalibrationCurve,
}

fn scores_with_truth(
    scorer: &dyn Scorer,
    data: &LabeledDataset,
) -> Result<(ScoreMatrix, Vec<usize>)> {
    Ok((scorer.score(data.features())?, data.labels().to_vec()))
}

/// Calibrate a fitted scorer on `calib` and apply the threshold to `test`.
///
/// The grid and `t*` depend on `train` and `calib` only, except that a
/// pooled grid also enumerates test gaps.
pub fn thresholding_split(
    scorer: &dyn Scorer,
    train: &LabeledDataset,
    calib: &LabeledDataset,
    test: &LabeledDataset,
    settings: &PipelineSettings,
) -> Result<(SplitOutcome, SplitScores)> {
    let train_s = scores_with_truth(scorer, train)?;
    let calib_s = scores_with_truth(scorer, calib)?;
    let test_s = scores_with_truth(scorer, test)?;
    let grid = match settings.grid_source {
        GridSource::Calibration => build_grid(&calib_s.0, settings.epsilon)?,
        GridSource::Pooled => {
            build_grid_pooled(&[&train_s.0, &calib_s.0, &test_s.0], settings.epsilon)?
        }
    };
    let calib_curve = sweep_with(&calib_s.0, &calib_s.1, &grid, &settings.sweep)?;
    let selection = select_threshold(&calib_curve, settings.target);
    let laxest = grid.values()[0];
    let eval =
        |(s, t): &(ScoreMatrix, Vec<usize>), at: f64| evaluate_at_with(s, t, at, &settings.sweep);
    let outcome = SplitOutcome {
        resample: 0,
        seed: 0,
        n_fit: train.n(),
        selection,
        test: eval(&test_s, selection.t_star)?,
        train_laxest: eval(&train_s, laxest)?,
        selection_laxest: *calib_curve.laxest(),
        test_laxest: eval(&test_s, laxest)?,
    };
    Ok((
        outcome,
        SplitScores {
            grid,
            train: train_s,
            calib: Some(calib_s),
            test: test_s,
        },
    ))
}

/// Naive baseline: fit on `train` and `calib` together and pick `t*` from
/// the training curve of that fit; no independent hold-out.
pub fn naive_split(
    train: &LabeledDataset,
    calib: &LabeledDataset,
    test: &LabeledDataset,
    settings: &PipelineSettings,
) -> Result<(SplitOutcome, SplitScores)> {
    let combined = train.concat(calib)?;
    let params = fit_gmm(&combined, &settings.fit)?;
    let scorer = params.scorer()?;
    let train_s = scores_with_truth(&scorer, &combined)?;
    let test_s = scores_with_truth(&scorer, test)?;
    let grid = match settings.grid_source {
        GridSource::Calibration => build_grid(&train_s.0, settings.epsilon)?,
        GridSource::Pooled => build_grid_pooled(&[&train_s.0, &test_s.0], settings.epsilon)?,
    };
    let train_curve = sweep_with(&train_s.0, &train_s.1, &grid, &settings.sweep)?;
    let selection = select_threshold(&train_curve, settings.target);
    let laxest = grid.values()[0];
    let eval =
        |(s, t): &(ScoreMatrix, Vec<usize>), at: f64| evaluate_at_with(s, t, at, &settings.sweep);
    let outcome = SplitOutcome {
        resample: 0,
        seed: 0,
        n_fit: combined.n(),
        selection,
        test: eval(&test_s, selection.t_star)?,
        train_laxest: *train_curve.laxest(),
        selection_laxest: *train_curve.laxest(),
        test_laxest: eval(&test_s, laxest)?,
    };
    Ok((
        outcome,
        SplitScores {
            grid,
            train: train_s,
            calib: None,
            test: test_s,
        },
    ))
}

/// Run `task` for resamples `0..n_resamples`, each with its own derived
/// seed, in parallel; results come back in resample order.
pub fn resample_map<T, F>(n_resamples: usize, seed: u64, task: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync,
{
    (0..n_resamples)
        .into_par_iter()
        .map(|r| task(r, child_seed(seed, r as u64)))
        .collect()
}

/// Pointwise mean and standard deviation of curves on a shared grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedCurve {
    pub grid: ThresholdGrid,
    pub n_curves: usize,
    pub mcp_mean: Vec<f64>,
    pub mcp_sd: Vec<f64>,
    pub pa_mean: Vec<f64>,
    pub pa_sd: Vec<f64>,
    pub mcl_mean: Vec<f64>,
    pub mcl_sd: Vec<f64>,
    pub ae_mean: Vec<f64>,
    pub ae_sd: Vec<f64>,
}

impl AveragedCurve {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "t", "mcp_mean", "mcp_sd", "pa_mean", "pa_sd", "mcl_mean", "mcl_sd", "ae_mean", "ae_sd",
        ])?;
        for (i, &t) in self.grid.values().iter().enumerate() {
            let row = [
                t,
                self.mcp_mean[i],
                self.mcp_sd[i],
                self.pa_mean[i],
                self.pa_sd[i],
                self.mcl_mean[i],
                self.mcl_sd[i],
                self.ae_mean[i],
                self.ae_sd[i],
            ];
            w.write_record(row.iter().map(|&v| serde_ext::render(v)))?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Common grid for a set of resampled grids: `size - 1` evenly spaced
/// quantiles of all their finite thresholds, then `+inf`.
pub fn reference_grid(grids: &[&ThresholdGrid], size: usize) -> Result<ThresholdGrid> {
    let mut pooled: Vec<f64> = grids
        .iter()
        .flat_map(|g| g.values().iter().copied().filter(|t| t.is_finite()))
        .collect();
    if pooled.is_empty() {
        return Err(Error::InvalidGrid("no finite thresholds to pool".into()));
    }
    pooled.sort_by(f64::total_cmp);
    pooled.dedup();
    let m = size.saturating_sub(1).max(1);
    let mut values: Vec<f64> = if pooled.len() <= m {
        pooled
    } else {
        (0..m)
            .map(|i| {
                let pos = (i as f64 * (pooled.len() - 1) as f64 / (m - 1).max(1) as f64).round();
                pooled[pos as usize]
            })
            .collect()
    };
    values.dedup();
    values.push(f64::INFINITY);
    ThresholdGrid::new(values)
}

/// Average `(scores, truth)` sets by sweeping each on `grid` and taking the
/// pointwise mean and (population) standard deviation.
pub fn average_curves(
    sets: &[&(ScoreMatrix, Vec<usize>)],
    grid: &ThresholdGrid,
    sweep: &SweepOptions,
) -> Result<AveragedCurve> {
    let curves = sets
        .par_iter()
        .map(|(s, t)| sweep_with(s, t, grid, sweep))
        .collect::<Result<Vec<_>>>()?;
    let n = curves.len() as f64;
    let m = grid.len();
    let stat = |f: &dyn Fn(&CurveRecord) -> f64| -> (Vec<f64>, Vec<f64>) {
        let mut mean = vec![0.0; m];
        let mut sd = vec![0.0; m];
        for j in 0..m {
            let vals: Vec<f64> = curves.iter().map(|c| f(&c.records[j])).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mu = (vals.iter().sum::<f64>() / n).clamp(lo, hi);
            let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            mean[j] = mu;
            sd[j] = if var.is_finite() {
                var.sqrt()
            } else {
                f64::NAN
            };
        }
        (mean, sd)
    };
    let (mcp_mean, mcp_sd) = stat(&|r| r.mcp);
    let (pa_mean, pa_sd) = stat(&|r| r.pa);
    let (mcl_mean, mcl_sd) = stat(&|r| r.mcl);
    let (ae_mean, ae_sd) = stat(&|r| r.ae);
    Ok(AveragedCurve {
        grid: grid.clone(),
        n_curves: curves.len(),
        mcp_mean,
        mcp_sd,
        pa_mean,
        pa_sd,
        mcl_mean,
        mcl_sd,
        ae_mean,
        ae_sd,
    })
}

/// Average the train / hold-out / test curves of several splits on a common
/// reference grid built from their own grids.
pub fn resample_average(splits: &[SplitScores], sweep: &SweepOptions) -> Result<ArmCurves> {
    let grids: Vec<&ThresholdGrid> = splits.iter().map(|s| &s.grid).collect();
    let grid = reference_grid(&grids, REFERENCE_GRID_SIZE)?;
    let train: Vec<_> = splits.iter().map(|s| &s.train).collect();
    let test: Vec<_> = splits.iter().map(|s| &s.test).collect();
    let calib: Vec<_> = splits.iter().filter_map(|s| s.calib.as_ref()).collect();
    Ok(ArmCurves {
        train: average_curves(&train, &grid, sweep)?,
        calib: if calib.is_empty() {
            None
        } else {
            Some(average_curves(&calib, &grid, sweep)?)
        },
        test: average_curves(&test, &grid, sweep)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmCurves {
    pub train: AveragedCurve,
    pub calib: Option<AveragedCurve>,
    pub test: AveragedCurve,
}

/// One row of a results table, averaged over resamples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub name: String,
    pub target: Target,
    pub n_resamples: usize,
    /// Hold-out value of the target metric at `t*` (MCP or MCL).
    pub holdout_metric: f64,
    /// Hold-out PA for MCP targets, AE for MCL targets.
    pub holdout_pa_or_ae: f64,
    pub test_metric: f64,
    pub test_pa_or_ae: f64,
    /// Median selected threshold over resamples.
    #[serde(with = "serde_ext")]
    pub t_star: f64,
    pub feasible_fraction: f64,
    pub runs: Vec<SplitOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tvd: Option<TvdEstimate>,
    #[serde(skip)]
    pub curves: Option<ArmCurves>,
}

impl ArmReport {
    fn from_runs(name: String, target: Target, runs: Vec<SplitOutcome>) -> Self {
        let n = runs.len() as f64;
        let metric = |r: &CurveRecord| target.metric(r);
        let side = |r: &CurveRecord| match target.kind {
            TargetKind::Mcp => r.pa,
            TargetKind::Mcl => r.ae,
        };
        let mean = |f: &dyn Fn(&SplitOutcome) -> f64| runs.iter().map(f).sum::<f64>() / n;
        let mut t: Vec<f64> = runs.iter().map(|r| r.selection.t_star).collect();
        t.sort_by(f64::total_cmp);
        let t_star = if t.len() % 2 == 1 {
            t[t.len() / 2]
        } else {
            let (a, b) = (t[t.len() / 2 - 1], t[t.len() / 2]);
            if a == b {
                a
            } else {
                a + (b - a) / 2.0
            }
        };
        ArmReport {
            holdout_metric: mean(&|r| metric(&r.selection.achieved)),
            holdout_pa_or_ae: mean(&|r| side(&r.selection.achieved)),
            test_metric: mean(&|r| metric(&r.test)),
            test_pa_or_ae: mean(&|r| side(&r.test)),
            t_star,
            feasible_fraction: mean(&|r| f64::from(u8::from(r.selection.feasible))),
            n_resamples: runs.len(),
            name,
            target,
            runs,
            tvd: None,
            curves: None,
        }
    }

    /// Fraction of resamples whose test metric meets the target.
    pub fn test_success_rate(&self) -> f64 {
        let ok = self
            .runs
            .iter()
            .filter(|r| self.target.is_met_by(&r.test))
            .count();
        ok as f64 / self.runs.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub arms: Vec<ArmReport>,
}

impl ExperimentReport {
    pub fn arm(&self, name: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Results table: one row per arm.
    pub fn write_table_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "arm",
            "target_kind",
            "target",
            "holdout_metric",
            "holdout_pa_or_ae",
            "test_metric",
            "test_pa_or_ae",
            "t_star",
            "n_resamples",
            "feasible_fraction",
        ])?;
        for a in &self.arms {
            let kind = match a.target.kind {
                TargetKind::Mcp => "mcp",
                TargetKind::Mcl => "mcl",
            };
            w.write_record([
                a.name.clone(),
                kind.to_string(),
                serde_ext::render(a.target.value),
                serde_ext::render(a.holdout_metric),
                serde_ext::render(a.holdout_pa_or_ae),
                serde_ext::render(a.test_metric),
                serde_ext::render(a.test_pa_or_ae),
                serde_ext::render(a.t_star),
                a.n_resamples.to_string(),
                serde_ext::render(a.feasible_fraction),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    fn merge(name: impl Into<String>, parts: Vec<ExperimentReport>) -> Self {
        ExperimentReport {
            name: name.into(),
            arms: parts.into_iter().flat_map(|p| p.arms).collect(),
        }
    }
}

struct Prepared {
    train: LabeledDataset,
    calib: LabeledDataset,
    test: LabeledDataset,
    truth: Option<GmmParams>,
}

fn load_source(source: &DataSource) -> Result<Option<LabeledDataset>> {
    Ok(match source {
        DataSource::Simulated(_) => None,
        DataSource::Dataset(d) => Some(d.clone()),
        DataSource::Csv { path, schema } => Some(dataset::load_csv(path, schema)?),
    })
}

fn prepare(
    config: &RunConfig,
    base: Option<&LabeledDataset>,
    r: usize,
    seed: u64,
) -> Result<Prepared> {
    let (data, truth) = match (&config.source, base) {
        (DataSource::Simulated(sc), _) => {
            let sc = if config.regenerate {
                MixtureScenario {
                    seed: child_seed(sc.seed, r as u64),
                    ..*sc
                }
            } else {
                *sc
            };
            let (d, p) = simulate::generate(&sc)?;
            (d, Some(p))
        }
        (_, Some(d)) => (d.clone(), None),
        (_, None) => unreachable!("non-simulated sources are loaded up front"),
    };
    let data = match config.balanced {
        Some(b) => {
            dataset::subsample_balanced(&data, b.take_all_class, b.n_other, child_seed(seed, 1))?
        }
        None => data,
    };
    let (train, calib, test) = dataset::split(&data, &config.split.with_seed(seed))?;
    let (train, calib, test) = match config.screen_top_k {
        Some(top_k) => {
            let s = dataset::screen_features(&train, &[calib, test], top_k)?;
            let mut others = s.others.into_iter();
            let calib = others.next().expect("two companions");
            let test = others.next().expect("two companions");
            (s.train, calib, test)
        }
        None => (train, calib, test),
    };
    Ok(Prepared {
        train,
        calib,
        test,
        truth,
    })
}

struct ResampleResult {
    fitted: (SplitOutcome, SplitScores),
    oracle: Option<(SplitOutcome, SplitScores)>,
    naive: Option<(SplitOutcome, SplitScores)>,
}

/// Fit on train, calibrate on hold-out, apply to test; repeated over
/// resamples. Produces the thresholding arm plus the optional oracle and
/// naive arms, with curves averaged on a common grid.
pub fn run_calibration_pipeline(config: &RunConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let base = load_source(&config.source)?;
    let settings = config.pipeline();

    let results = resample_map(config.n_resamples, config.seed, |r, seed| {
        let p = prepare(config, base.as_ref(), r, seed)?;
        let params = fit_gmm(&p.train, &config.fit)?;
        let scorer = params.scorer()?;
        let tag = |(mut o, s): (SplitOutcome, SplitScores)| {
            o.resample = r;
            o.seed = seed;
            (o, s)
        };
        let fitted = tag(thresholding_split(
            &scorer, &p.train, &p.calib, &p.test, &settings,
        )?);
        let oracle = match (&p.truth, config.oracle) {
            (Some(truth), true) => {
                let (mut o, s) =
                    thresholding_split(&truth.scorer()?, &p.train, &p.calib, &p.test, &settings)?;
                o.n_fit = 0;
                Some(tag((o, s)))
            }
            _ => None,
        };
        let naive = if config.naive {
            Some(tag(naive_split(&p.train, &p.calib, &p.test, &settings)?))
        } else {
            None
        };
        Ok(ResampleResult {
            fitted,
            oracle,
            naive,
        })
    })?;

    let mut fitted = Vec::new();
    let mut oracle = Vec::new();
    let mut naive = Vec::new();
    for r in results {
        fitted.push(r.fitted);
        oracle.extend(r.oracle);
        naive.extend(r.naive);
    }

    let mut arms = Vec::new();
    for (suffix, parts) in [("", fitted), ("/oracle", oracle), ("/naive", naive)] {
        if parts.is_empty() {
            continue;
        }
        let (runs, scores): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        let mut arm = ArmReport::from_runs(format!("{}{suffix}", config.name), config.target, runs);
        arm.curves = Some(resample_average(&scores, &config.sweep)?);
        arms.push(arm);
    }
    Ok(ExperimentReport {
        name: config.name.clone(),
        arms,
    })
}

// ---------------------------------------------------------------------------
// Named studies

/// Options shared by the named studies.
#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub seed: u64,
    /// `None` uses each study's default.
    pub n_resamples: Option<usize>,
    pub epsilon: f64,
    pub fit: FitOptions,
    /// Overrides the study's default target.
    pub target: Option<Target>,
    pub data_path: Option<PathBuf>,
    pub tvd_samples: usize,
    pub oracle: bool,
    pub screen_top_k: Option<usize>,
    pub grid_source: GridSource,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            seed: 0,
            n_resamples: None,
            epsilon: calibrate::DEFAULT_EPSILON,
            fit: FitOptions::default(),
            target: None,
            data_path: None,
            tvd_samples: 10_000,
            oracle: true,
            screen_top_k: None,
            grid_source: GridSource::Calibration,
        }
    }
}

impl StudyOptions {
    fn config(
        &self,
        name: &str,
        source: DataSource,
        split: SplitSizes,
        target: Target,
        resamples: usize,
    ) -> RunConfig {
        RunConfig {
            epsilon: self.epsilon,
            fit: self.fit,
            n_resamples: self.n_resamples.unwrap_or(resamples),
            seed: self.seed,
            grid_source: self.grid_source,
            ..RunConfig::new(name, source, split, self.target.unwrap_or(target))
        }
    }
}

/// Center separations (at variance .5) for the easy / medium / hard arms.
pub const SEPARATIONS: [(&str, f64); 3] = [("easy", 4.0), ("medium", 2.0), ("hard", 0.75)];

/// Difficulty from component overlap: d = 30, variance .5, n = 150 split
/// 90 / 30 / 30, target MCP .25, fitted and oracle arms.
pub fn run_separation_study(opts: &StudyOptions) -> Result<ExperimentReport> {
    let parts = SEPARATIONS
        .iter()
        .map(|&(name, sep)| {
            let mut sc = MixtureScenario::new(30, sep, 0.5, 150, opts.seed);
            sc.center_seed = opts.seed;
            let mut cfg = opts.config(
                name,
                DataSource::Simulated(sc),
                SplitSizes::new(90, 30, 30),
                Target::mcp(0.25),
                20,
            );
            cfg.oracle = opts.oracle;
            run_calibration_pipeline(&cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport::merge("separation", parts))
}

/// `(name, dimension, variance)` of the dimension-study arms.
pub const DIMENSIONS: [(&str, usize, f64); 3] =
    [("d10", 10, 0.8), ("d20", 20, 0.75), ("d100", 100, 0.5)];

/// Separation shared by every dimension-study arm.
pub const DIMENSION_STUDY_SEPARATION: f64 = 2.0;

/// Difficulty from dimension: d in {10, 20, 100} with variances
/// (.8, .75, .5), shared centers, n = 500 split 300 / 100 / 100, target MCP
/// .2. Each arm also reports the component TVD.
pub fn run_dimension_study(opts: &StudyOptions) -> Result<ExperimentReport> {
    let parts = DIMENSIONS
        .iter()
        .map(|&(name, dim, variance)| {
            let mut sc =
                MixtureScenario::new(dim, DIMENSION_STUDY_SEPARATION, variance, 500, opts.seed);
            sc.center_seed = opts.seed;
            let mut cfg = opts.config(
                name,
                DataSource::Simulated(sc),
                SplitSizes::new(300, 100, 100),
                Target::mcp(0.2),
                20,
            );
            cfg.oracle = opts.oracle;
            let mut report = run_calibration_pipeline(&cfg)?;
            let truth = sc.true_params()?;
            let tvd = estimate_tvd(
                &truth.components[0],
                &truth.components[1],
                opts.tvd_samples,
                child_seed(opts.seed, 0x7476),
            )?;
            for arm in &mut report.arms {
                arm.tvd = Some(tvd);
            }
            Ok(report)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport::merge("dimension", parts))
}

/// Configuration of the naive comparison: d = 15, medium separation,
/// 45 training / 15 hold-out / 15 test points, target MCP .2, 50 resamples.
pub fn naive_comparison_config(opts: &StudyOptions) -> RunConfig {
    let mut sc = MixtureScenario::new(15, SEPARATIONS[1].1, 0.5, 75, opts.seed);
    sc.center_seed = opts.seed;
    let mut cfg = opts.config(
        "naive-comparison",
        DataSource::Simulated(sc),
        SplitSizes::new(45, 15, 15),
        Target::mcp(0.2),
        50,
    );
    cfg.naive = true;
    cfg
}

/// Thresholding with a hold-out set against the naive baseline that fits on
/// train + hold-out and selects on its own training curve.
pub fn compare_naive(config: &RunConfig) -> Result<ExperimentReport> {
    let mut cfg = config.clone();
    cfg.naive = true;
    run_calibration_pipeline(&cfg)
}

fn csv_source(
    path: &Option<PathBuf>,
    schema: CsvSchema,
    fallback: Option<LabeledDataset>,
) -> Result<DataSource> {
    match (path, fallback) {
        (Some(p), _) => Ok(DataSource::Csv {
            path: p.clone(),
            schema,
        }),
        (None, Some(d)) => Ok(DataSource::Dataset(d)),
        (None, None) => Err(Error::InvalidArgument(
            "this study needs a data file (--data)".into(),
        )),
    }
}

/// Ionosphere: 151 / 100 / 100 split; MCP target .15 and MCL target 300
/// on the same splits.
pub fn run_ionosphere_study(opts: &StudyOptions) -> Result<ExperimentReport> {
    let source = csv_source(
        &opts.data_path,
        CsvSchema::ionosphere(),
        Some(dataset::ionosphere()),
    )?;
    let split = SplitSizes::new(151, 100, 100);
    let targets = match opts.target {
        Some(t) => vec![t],
        None => vec![Target::mcp(0.15), Target::mcl(300.0)],
    };
    let parts = targets
        .into_iter()
        .map(|target| {
            let name = match target.kind {
                TargetKind::Mcp => "ionosphere-mcp",
                TargetKind::Mcl => "ionosphere-mcl",
            };
            let mut cfg = opts.config(name, source.clone(), split, target, 1);
            cfg.target = target;
            run_calibration_pipeline(&cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport::merge("ionosphere", parts))
}

/// Ozone with every feature and complete row: 616 / 616 / 616 stratified
/// split, target MCP .02.
pub fn run_ozone_full_study(opts: &StudyOptions) -> Result<ExperimentReport> {
    let source = csv_source(&opts.data_path, CsvSchema::ozone(), None)?;
    let split = SplitSizes {
        stratified: true,
        ..SplitSizes::new(616, 616, 616)
    };
    let mut cfg = opts.config("ozone-full", source, split, Target::mcp(0.02), 1);
    cfg.screen_top_k = opts.screen_top_k;
    run_calibration_pipeline(&cfg)
}

/// Ozone reduced: all ozone days plus 143 random other days (200 rows),
/// 100 / 50 / 50 split, top-20 marginal-correlation screening on the
/// training rows, target MCP .2.
pub fn run_ozone_reduced_study(opts: &StudyOptions) -> Result<ExperimentReport> {
    let source = csv_source(&opts.data_path, CsvSchema::ozone(), None)?;
    let mut cfg = opts.config(
        "ozone-reduced",
        source,
        SplitSizes::new(100, 50, 50),
        Target::mcp(0.2),
        1,
    );
    cfg.balanced = Some(BalancedSubsample {
        take_all_class: 2,
        n_other: 143,
    });
    cfg.screen_top_k = Some(opts.screen_top_k.unwrap_or(20));
    run_calibration_pipeline(&cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    Separation,
    Dimension,
    Naive,
    Ionosphere,
    OzoneFull,
    OzoneReduced,
}

impl std::str::FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "separation" => Study::Separation,
            "dimension" => Study::Dimension,
            "naive" => Study::Naive,
            "ionosphere" => Study::Ionosphere,
            "ozone-full" => Study::OzoneFull,
            "ozone-reduced" => Study::OzoneReduced,
            other => return Err(Error::InvalidArgument(format!("unknown study {other:?}"))),
        })
    }
}

pub fn run_study(study: Study, opts: &StudyOptions) -> Result<ExperimentReport> {
    match study {
        Study::Separation => run_separation_study(opts),
        Study::Dimension => run_dimension_study(opts),
        Study::Naive => compare_naive(&naive_comparison_config(opts)),
        Study::Ionosphere => run_ionosphere_study(opts),
        Study::OzoneFull => run_ozone_full_study(opts),
        Study::OzoneReduced => run_ozone_reduced_study(opts),
    }
}
