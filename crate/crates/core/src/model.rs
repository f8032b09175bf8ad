//! Supervised Gaussian mixture fitting and per-class log-likelihood scores.
//!
//! The calibration layer only needs a [`Scorer`]: anything that maps a
//! feature matrix to an `n x k` table of scores where larger means more
//! confident. The built-in scorer is the maximum-likelihood classifier of a
//! Gaussian mixture whose components are estimated from labeled data.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureMatrix, LabeledDataset};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Row-major `n x k` score table. Entries are finite or `-inf`; every row
/// has at least one finite entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    data: Vec<f64>,
    n: usize,
    k: usize,
}

impl ScoreMatrix {
    pub fn new(n: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * k {
            return Err(Error::DimensionMismatch {
                expected: n * k,
                actual: data.len(),
            });
        }
        if k == 0 {
            return Err(Error::TooFewClasses(0));
        }
        for (i, row) in data.chunks(k).enumerate() {
            if let Some(&bad) = row.iter().find(|v| v.is_nan() || **v == f64::INFINITY) {
                return Err(Error::InvalidScore { row: i, value: bad });
            }
            if !row.iter().any(|v| v.is_finite()) {
                return Err(Error::NoFiniteScore(i));
            }
        }
        Ok(ScoreMatrix { data, n, k })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * k);
        for row in rows {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), k, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.n).map(move |i| self.row(i))
    }

    pub fn select_rows(&self, idx: &[usize]) -> ScoreMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.k);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        ScoreMatrix {
            data,
            n: idx.len(),
            k: self.k,
        }
    }
}

/// A fitted classifier that produces per-class scores.
pub trait Scorer: Send + Sync {
    fn n_classes(&self) -> usize;

    fn dim(&self) -> usize;

    fn score(&self, x: &FeatureMatrix) -> Result<ScoreMatrix>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub weight: f64,
}

impl Component {
    pub fn isotropic(mean: Vec<f64>, variance: f64, weight: f64) -> Self {
        let d = mean.len();
        let covariance = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| if i == j { variance } else { 0.0 })
                    .collect()
            })
            .collect();
        Component {
            mean,
            covariance,
            weight,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.covariance[i][j])
    }

    /// Normalized density of this component (weight ignored).
    pub fn density(&self) -> Option<GaussianDensity> {
        GaussianDensity::new(&self.mean, &self.covariance_matrix())
    }
}

/// Gaussian mixture parameters: one mean, covariance and weight per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub dim: usize,
    pub components: Vec<Component>,
}

impl GmmParams {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let params = GmmParams {
            dim: components.first().map_or(0, Component::dim),
            components,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::TooFewClasses(0));
        }
        let mut total = 0.0;
        for (j, c) in self.components.iter().enumerate() {
            if c.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    actual: c.dim(),
                });
            }
            if c.covariance.len() != self.dim || c.covariance.iter().any(|r| r.len() != self.dim) {
                return Err(Error::InvalidArgument(format!(
                    "covariance of component {} is not {d}x{d}",
                    j + 1,
                    d = self.dim
                )));
            }
            if !(c.weight >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "component {} has negative weight {}",
                    j + 1,
                    c.weight
                )));
            }
            let sym = (0..self.dim).all(|a| {
                (0..a).all(|b| {
                    let (x, y) = (c.covariance[a][b], c.covariance[b][a]);
                    (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0)
                })
            });
            if !sym {
                return Err(Error::InvalidArgument(format!(
                    "covariance of component {} is not symmetric",
                    j + 1
                )));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    /// Factorize every component covariance for scoring.
    pub fn scorer(&self) -> Result<GmmScorer> {
        self.validate()?;
        let densities = self
            .components
            .iter()
            .enumerate()
            .map(|(j, c)| {
                c.density()
                    .ok_or(Error::NotPositiveDefinite { component: j + 1 })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GmmScorer {
            log_weights: self.components.iter().map(|c| c.weight.ln()).collect(),
            densities,
            dim: self.dim,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: GmmParams = serde_json::from_str(text)?;
        params.validate()?;
        Ok(params)
    }
}

/// Multivariate normal density held as its Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    lower: DMatrix<f64>,
    log_det: f64,
}

impl GaussianDensity {
    /// `None` when the covariance is not positive definite.
    pub fn new(mean: &[f64], covariance: &DMatrix<f64>) -> Option<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return None;
        }
        let chol = covariance.clone().cholesky()?;
        let lower = chol.unpack();
        let log_det = 2.0 * lower.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return None;
        }
        Some(GaussianDensity {
            mean: DVector::from_column_slice(mean),
            lower,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    fn log_norm(&self) -> f64 {
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det)
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let centered = DVector::from_iterator(
            self.dim(),
            x.iter().zip(self.mean.iter()).map(|(a, m)| a - m),
        );
        let z = self
            .lower
            .solve_lower_triangular(&centered)
            .expect("Cholesky factor has a positive diagonal");
        self.log_norm() - 0.5 * z.norm_squared()
    }

    /// Log-density of every row of `x`, solving all rows in one triangular
    /// solve.
    pub fn log_density_rows(&self, x: &FeatureMatrix) -> Vec<f64> {
        let d = self.dim();
        let centered = DMatrix::from_fn(d, x.nrows(), |r, c| x.row(c)[r] - self.mean[r]);
        let z = self
            .lower
            .solve_lower_triangular(&centered)
            .expect("Cholesky factor has a positive diagonal");
        let norm = self.log_norm();
        z.column_iter()
            .map(|col| norm - 0.5 * col.norm_squared())
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        (&self.lower * z + &self.mean).iter().copied().collect()
    }
}

/// Maximum-likelihood scorer: `score[i][j] = log w_j + log N(x_i | mu_j, S_j)`.
#[derive(Debug, Clone)]
pub struct GmmScorer {
    densities: Vec<GaussianDensity>,
    log_weights: Vec<f64>,
    dim: usize,
}

impl Scorer for GmmScorer {
    fn n_classes(&self) -> usize {
        self.densities.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, x: &FeatureMatrix) -> Result<ScoreMatrix> {
        if x.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.ncols(),
            });
        }
        let k = self.densities.len();
        let mut data = vec![0.0; x.nrows() * k];
        for (j, (dens, &lw)) in self.densities.iter().zip(&self.log_weights).enumerate() {
            let col = dens.log_density_rows(x);
            for (i, v) in col.into_iter().enumerate() {
                data[i * k + j] = if lw == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    lw + v
                };
            }
        }
        ScoreMatrix::new(x.nrows(), k, data)
    }
}

/// Log-likelihood scores of `x` under `params`.
pub fn score(params: &GmmParams, x: &FeatureMatrix) -> Result<ScoreMatrix> {
    params.scorer()?.score(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CovarianceKind {
    #[default]
    Full,
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Relative ridge: `ridge * trace(S) / d` is added to the diagonal.
    pub ridge: f64,
    pub covariance: CovarianceKind,
    /// Subtract the class mean before forming the scatter matrix. Turning
    /// this off gives the raw second-moment estimate `Y'Y / (n_j - 1)`.
    pub centered: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            ridge: 1e-6,
            covariance: CovarianceKind::Full,
            centered: true,
        }
    }
}

impl FitOptions {
    pub fn with_ridge(ridge: f64) -> Self {
        FitOptions {
            ridge,
            ..FitOptions::default()
        }
    }
}

/// Estimate one Gaussian per class from labeled rows.
///
/// Means are class averages, covariances use the `n_j - 1` denominator and
/// get a trace-scaled ridge (an absolute `ridge` when the trace is zero),
/// weights are class frequencies.
pub fn fit_gmm(train: &LabeledDataset, options: &FitOptions) -> Result<GmmParams> {
    if !(options.ridge >= 0.0) || !options.ridge.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "ridge must be a non-negative number, got {}",
            options.ridge
        )));
    }
    let k = train.k();
    if k < 1 {
        return Err(Error::TooFewClasses(k));
    }
    if train.labels().contains(&0) {
        return Err(Error::InvalidDataset(
            "training labels must be in 1..=k".into(),
        ));
    }
    let counts = train.class_counts();
    if let Some(class) = (1..=k).find(|&c| counts[c] < 2) {
        return Err(Error::ClassTooSmall {
            class,
            count: counts[class],
        });
    }

    let d = train.d();
    let n = train.n() as f64;
    let mut components = Vec::with_capacity(k);
    #[allow(clippy::needless_range_loop)]
    for class in 1..=k {
        let rows: Vec<&[f64]> = train
            .features()
            .rows()
            .zip(train.labels())
            .filter(|(_, &l)| l == class)
            .map(|(r, _)| r)
            .collect();
        let nj = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nj);

        let mut cov = DMatrix::<f64>::zeros(d, d);
        let mut y = DVector::<f64>::zeros(d);
        for r in &rows {
            for a in 0..d {
                y[a] = if options.centered {
                    r[a] - mean[a]
                } else {
                    r[a]
                };
            }
            cov.syger(1.0, &y, &y, 1.0);
        }
        cov /= nj - 1.0;
        // syger fills the lower triangle only
        cov.fill_upper_triangle_with_lower_triangle();
        if options.covariance == CovarianceKind::Diagonal {
            cov = DMatrix::from_diagonal(&cov.diagonal());
        }
        let trace = cov.trace();
        let ridge = if trace > 0.0 {
            options.ridge * trace / d as f64
        } else {
            options.ridge
        };
        for a in 0..d {
            cov[(a, a)] += ridge;
        }
        if GaussianDensity::new(&mean, &cov).is_none() {
            return Err(Error::NotPositiveDefinite { component: class });
        }

        components.push(Component {
            mean,
            covariance: (0..d)
                .map(|a| cov.row(a).iter().copied().collect())
                .collect(),
            weight: counts[class] as f64 / n,
        });
    }
    Ok(GmmParams { dim: d, components })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapAssignment {
    /// Arg-max class per row, `1..=k`.
    pub labels: Vec<usize>,
    /// Row had more than one maximal score; the lowest class won.
    pub ties: Vec<bool>,
}

/// Per-row arg-max of the scores, ties going to the lowest class index.
pub fn classify_map(scores: &ScoreMatrix) -> MapAssignment {
    let mut labels = Vec::with_capacity(scores.n());
    let mut ties = Vec::with_capacity(scores.n());
    for row in scores.rows() {
        let (best, max) = argmax(row);
        labels.push(best + 1);
        ties.push(row.iter().filter(|&&v| v == max).count() > 1);
    }
    MapAssignment { labels, ties }
}

/// Index and value of the first maximal entry.
pub(crate) fn argmax(row: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    (best, row[best])
}
