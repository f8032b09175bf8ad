//! Selective classification with a calibrated abstention threshold.
//!
//! Fit any score-producing classifier (a supervised Gaussian mixture is
//! built in), sweep a threshold on the gap between each point's two best
//! class scores over a hold-out set, choose the threshold that meets a
//! target misclassification proportion or softmax loss, and apply it to new
//! data. Points whose gap falls below the threshold are left unclassified.
//!
//! ```
//! use thresh_core::{calibrate, dataset, model};
//!
//! let data = dataset::ionosphere();
//! let spec = dataset::SplitSpec::new(151, 100, 100, 7);
//! let (train, calib, test) = dataset::split(&data, &spec).unwrap();
//!
//! let params = model::fit_gmm(&train, &model::FitOptions::default()).unwrap();
//! let calib_scores = model::score(&params, calib.features()).unwrap();
//! let grid = calibrate::build_grid(&calib_scores, calibrate::DEFAULT_EPSILON).unwrap();
//! let curve = calibrate::sweep(&calib_scores, calib.labels(), &grid).unwrap();
//! let selection = calibrate::select_threshold(&curve, calibrate::Target::mcp(0.15));
//!
//! let test_scores = model::score(&params, test.features()).unwrap();
//! let assigned = calibrate::apply_threshold(&test_scores, selection.t_star);
//! assert_eq!(assigned.labels.len(), 100);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod model;
pub mod rng;
pub mod serde_ext;
pub mod simulate;

pub use calibrate::{
    apply_threshold, build_grid, select_threshold, sweep, AssignmentResult, CalibrationCurve,
    CurveRecord, Target, TargetKind, ThresholdGrid, ThresholdSelection,
};
pub use dataset::{CsvSchema, FeatureMatrix, LabeledDataset, SplitSpec};
pub use error::{Error, Result};
pub use experiment::{
    compare_naive, resample_average, run_calibration_pipeline, run_dimension_study,
    run_separation_study, ExperimentReport, RunConfig,
};
pub use model::{fit_gmm, Component, FitOptions, GmmParams, ScoreMatrix, Scorer};
pub use simulate::{MixtureScenario, TvdEstimate};
