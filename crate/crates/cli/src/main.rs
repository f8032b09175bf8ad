#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use thresh_core::calibrate::{self, Target, ThresholdSelection};
use thresh_core::dataset::{self, CsvSchema, LabeledDataset, SplitSpec};
use thresh_core::experiment::{
    self, ExperimentReport, GridSource, SplitSizes, Study, StudyOptions,
};
use thresh_core::model::{self, Component, CovarianceKind, FitOptions, GmmParams};
use thresh_core::simulate::{self, MixtureScenario};

#[derive(Parser)]
#[command(
    name = "thresh",
    version,
    about = "Selective classification by score-gap thresholding"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a two-component Gaussian mixture sample from a scenario file.
    Simulate(SimulateArgs),
    /// Fit a Gaussian mixture classifier to a labeled CSV.
    Fit(FitArgs),
    /// Pick a threshold on hold-out data for an MCP or MCL target.
    Calibrate(CalibrateArgs),
    /// Label new rows with a calibrated threshold (0 = abstain).
    Apply(ApplyArgs),
    /// Run a named study and write its tables and curves.
    Study(StudyArgs),
    /// Monte-Carlo total variation distance between two components.
    Tvd(TvdArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    /// Header row, numeric features, integer label last.
    Echo,
    /// No header, integer label last.
    Plain,
    /// UCI ionosphere: no header, `g`/`b` label last.
    Ionosphere,
    /// UCI ozone: date column, `0`/`1` label last, `?` rows dropped.
    Ozone,
}

impl Format {
    fn schema(self) -> CsvSchema {
        match self {
            Format::Echo => CsvSchema::echo(),
            Format::Plain => CsvSchema::default(),
            Format::Ionosphere => CsvSchema::ionosphere(),
            Format::Ozone => CsvSchema::ozone(),
        }
    }
}

#[derive(Args)]
struct FitFlags {
    /// Relative ridge added to each covariance diagonal.
    #[arg(long, default_value_t = 1e-6)]
    ridge: f64,
    /// Fit diagonal covariances only.
    #[arg(long)]
    diagonal: bool,
}

impl FitFlags {
    fn options(&self) -> Result<FitOptions> {
        if !(self.ridge >= 0.0) {
            bail!("--ridge must be non-negative");
        }
        Ok(FitOptions {
            ridge: self.ridge,
            covariance: if self.diagonal {
                CovarianceKind::Diagonal
            } else {
                CovarianceKind::Full
            },
            ..FitOptions::default()
        })
    }
}

#[derive(Args)]
struct TargetFlags {
    /// Target misclassification proportion.
    #[arg(long, conflicts_with = "target_r")]
    target_q: Option<f64>,
    /// Target multinomial classification loss.
    #[arg(long)]
    target_r: Option<f64>,
}

impl TargetFlags {
    fn target(&self) -> Option<Target> {
        match (self.target_q, self.target_r) {
            (Some(q), _) => Some(Target::mcp(q)),
            (_, Some(r)) => Some(Target::mcl(r)),
            _ => None,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML scenario file.
    scenario: PathBuf,
    /// Overrides the scenario's sample seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    train: PathBuf,
    #[arg(long, value_enum, default_value = "echo")]
    format: Format,
    #[command(flatten)]
    fit: FitFlags,
    /// Model JSON output path.
    #[arg(long, short, default_value = "model.json")]
    output: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    model: PathBuf,
    calib: PathBuf,
    #[arg(long, value_enum, default_value = "echo")]
    format: Format,
    #[command(flatten)]
    target: TargetFlags,
    #[arg(long, default_value_t = calibrate::DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct ApplyArgs {
    model: PathBuf,
    selection: PathBuf,
    test: PathBuf,
    #[arg(long, value_enum, default_value = "echo")]
    format: Format,
    /// Labels CSV output path.
    #[arg(long, short, default_value = "labels.csv")]
    output: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(value_parser = parse_study)]
    name: Study,
    /// Data file for the real-data studies.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    resamples: Option<usize>,
    #[command(flatten)]
    target: TargetFlags,
    #[command(flatten)]
    fit: FitFlags,
    #[arg(long, default_value_t = calibrate::DEFAULT_EPSILON)]
    epsilon: f64,
    /// Add arms scored with the generating parameters (simulations).
    #[arg(long)]
    oracle: bool,
    /// Keep this many features by marginal correlation.
    #[arg(long)]
    top_k: Option<usize>,
    /// Enumerate thresholds from train, hold-out and test scores together.
    #[arg(long)]
    pooled_grid: bool,
    #[arg(long, default_value_t = 10_000)]
    tvd_samples: usize,
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct TvdArgs {
    /// Component JSON `{mean, covariance, weight}` for f.
    f: PathBuf,
    /// Component JSON for g (the sampling density).
    g: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the literal `|f/g - 1|` integrand.
    #[arg(long)]
    literal: bool,
}

fn parse_study(s: &str) -> Result<Study, String> {
    s.parse().map_err(|e: thresh_core::Error| e.to_string())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    dim: usize,
    separation: f64,
    variance: f64,
    #[serde(default = "even")]
    weights: [f64; 2],
    n: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    center_seed: u64,
    split: Option<SplitSizes>,
}

fn even() -> [f64; 2] {
    [0.5, 0.5]
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load(path: &Path, format: Format) -> Result<LabeledDataset> {
    dataset::load_csv(path, &format.schema()).with_context(|| format!("loading {}", path.display()))
}

fn load_model(path: &Path) -> Result<GmmParams> {
    GmmParams::from_json(&read(path)?).with_context(|| format!("parsing model {}", path.display()))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let file: ScenarioFile = toml::from_str(&read(&args.scenario)?)
        .with_context(|| format!("parsing {}", args.scenario.display()))?;
    let scenario = MixtureScenario {
        dim: file.dim,
        separation: file.separation,
        variance: file.variance,
        weights: file.weights,
        n: file.n,
        seed: args.seed.unwrap_or(file.seed),
        center_seed: file.center_seed,
    };
    let (data, params) = simulate::generate(&scenario)?;
    create_dir(&args.output_dir)?;
    match file.split {
        Some(s) => {
            let spec = SplitSpec {
                stratified: s.stratified,
                ..SplitSpec::new(s.n_train, s.n_calib, s.n_test, scenario.seed)
            };
            let (train, calib, test) = dataset::split(&data, &spec)?;
            for (name, part) in [("train", &train), ("calib", &calib), ("test", &test)] {
                dataset::save_csv(part, args.output_dir.join(format!("{name}.csv")))?;
            }
        }
        None => dataset::save_csv(&data, args.output_dir.join("data.csv"))?,
    }
    write(&args.output_dir.join("oracle.json"), params.to_json()?)?;
    Ok(())
}

fn fit(args: FitArgs) -> Result<()> {
    let train = load(&args.train, args.format)?;
    let params = model::fit_gmm(&train, &args.fit.options()?)?;
    write(&args.output, params.to_json()?)
}

fn calibrate_cmd(args: CalibrateArgs) -> Result<()> {
    let Some(target) = args.target.target() else {
        bail!("give a target with --target-q or --target-r");
    };
    let params = load_model(&args.model)?;
    let calib = load(&args.calib, args.format)?;
    let scores = model::score(&params, calib.features())?;
    let grid = calibrate::build_grid(&scores, args.epsilon)?;
    let curve = calibrate::sweep(&scores, calib.labels(), &grid)?;
    let selection = calibrate::select_threshold(&curve, target);
    create_dir(&args.output_dir)?;
    write(
        &args.output_dir.join("selection.json"),
        selection.to_json()?,
    )?;
    let mut buf = Vec::new();
    curve.write_csv(&mut buf)?;
    write(&args.output_dir.join("curve.csv"), buf)?;
    println!("{}", selection.to_json()?);
    Ok(())
}

fn apply(args: ApplyArgs) -> Result<()> {
    let params = load_model(&args.model)?;
    let selection = ThresholdSelection::from_json(&read(&args.selection)?)
        .with_context(|| format!("parsing selection {}", args.selection.display()))?;
    let test = load(&args.test, args.format)?;
    let scores = model::score(&params, test.features())?;
    let out = calibrate::apply_threshold(&scores, selection.t_star);
    let mut text = String::from("index,label,gap\n");
    for (i, (label, gap)) in out.labels.iter().zip(&out.gaps).enumerate() {
        text.push_str(&format!(
            "{i},{label},{}\n",
            thresh_core::serde_ext::render(*gap)
        ));
    }
    write(&args.output, text)?;
    let record = calibrate::evaluate_at(&scores, test.labels(), selection.t_star)?;
    println!("{}", serde_json::to_string_pretty(&record)?);
    Ok(())
}

fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write(&dir.join("report.json"), report.to_json()?)?;
    let mut table = Vec::new();
    report.write_table_csv(&mut table)?;
    write(&dir.join("table.csv"), table)?;
    let curves_dir = dir.join("curves");
    create_dir(&curves_dir)?;
    for arm in &report.arms {
        let Some(curves) = &arm.curves else { continue };
        let stem = arm.name.replace('/', "_");
        let parts = [
            ("train", Some(&curves.train)),
            ("calib", curves.calib.as_ref()),
            ("test", Some(&curves.test)),
        ];
        for (part, curve) in parts {
            let Some(curve) = curve else { continue };
            let mut buf = Vec::new();
            curve.write_csv(&mut buf)?;
            write(&curves_dir.join(format!("{stem}_{part}.csv")), buf)?;
        }
    }
    Ok(())
}

fn study(args: StudyArgs) -> Result<()> {
    let opts = StudyOptions {
        seed: args.seed,
        n_resamples: args.resamples,
        epsilon: args.epsilon,
        fit: args.fit.options()?,
        target: args.target.target(),
        data_path: args.data,
        tvd_samples: args.tvd_samples,
        oracle: args.oracle,
        screen_top_k: args.top_k,
        grid_source: if args.pooled_grid {
            GridSource::Pooled
        } else {
            GridSource::Calibration
        },
    };
    let report = experiment::run_study(args.name, &opts)?;
    write_report(&report, &args.output_dir)?;
    let mut table = Vec::new();
    report.write_table_csv(&mut table)?;
    print!("{}", String::from_utf8(table)?);
    Ok(())
}

fn tvd(args: TvdArgs) -> Result<()> {
    let parse = |p: &Path| -> Result<Component> {
        serde_json::from_str(&read(p)?)
            .with_context(|| format!("parsing component {}", p.display()))
    };
    let integrand = if args.literal {
        simulate::TvdIntegrand::Literal
    } else {
        simulate::TvdIntegrand::Bounded
    };
    let est = simulate::estimate_tvd_with(
        &parse(&args.f)?,
        &parse(&args.g)?,
        args.samples,
        args.seed,
        integrand,
    )?;
    println!("{}", serde_json::to_string_pretty(&est)?);
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Apply(a) => apply(a),
        Command::Study(a) => study(a),
        Command::Tvd(a) => tvd(a),
    }
}
