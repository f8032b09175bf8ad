//! Two-component Gaussian mixtures with controllable difficulty, and a
//! Monte-Carlo estimate of the total variation distance between components.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureMatrix, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::{self, Component, GmmParams, ScoreMatrix};
use crate::rng;

/// Two isotropic components whose centers sit at `±separation / 2` along a
/// random direction in the plane of the first two coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureScenario {
    pub dim: usize,
    pub separation: f64,
    pub variance: f64,
    pub weights: [f64; 2],
    pub n: usize,
    /// Seed for the sampled points.
    pub seed: u64,
    /// Seed for the center direction; keep it fixed to compare arms on the
    /// same centers.
    #[serde(default)]
    pub center_seed: u64,
}

impl MixtureScenario {
    pub fn new(dim: usize, separation: f64, variance: f64, n: usize, seed: u64) -> Self {
        MixtureScenario {
            dim,
            separation,
            variance,
            weights: [0.5, 0.5],
            n,
            seed,
            center_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if !(self.variance > 0.0) || !self.variance.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "variance must be positive, got {}",
                self.variance
            )));
        }
        if !(self.separation >= 0.0) || !self.separation.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "separation must be non-negative, got {}",
                self.separation
            )));
        }
        let [a, b] = self.weights;
        if !(a >= 0.0 && b >= 0.0) || ((a + b) - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "weights ({a}, {b}) must be non-negative and sum to 1"
            )));
        }
        Ok(())
    }

    /// Generating parameters for this scenario.
    pub fn true_params(&self) -> Result<GmmParams> {
        self.validate()?;
        let mut crng = rng::substream(self.center_seed, 0x63656e74);
        let mut u = vec![0.0; self.dim];
        if self.dim == 1 {
            u[0] = if crng.random::<bool>() { 1.0 } else { -1.0 };
        } else {
            let theta = crng.random_range(0.0..std::f64::consts::TAU);
            u[0] = theta.cos();
            u[1] = theta.sin();
        }
        let half = self.separation / 2.0;
        let mu1: Vec<f64> = u.iter().map(|v| half * v).collect();
        let mu2: Vec<f64> = u.iter().map(|v| -half * v).collect();
        GmmParams::new(vec![
            Component::isotropic(mu1, self.variance, self.weights[0]),
            Component::isotropic(mu2, self.variance, self.weights[1]),
        ])
    }
}

/// Draw `n` labeled points from the scenario; also returns the generating
/// parameters.
pub fn generate(scenario: &MixtureScenario) -> Result<(LabeledDataset, GmmParams)> {
    let params = scenario.true_params()?;
    let densities: Vec<_> = params
        .components
        .iter()
        .map(|c| {
            c.density()
                .expect("isotropic covariance is positive definite")
        })
        .collect();
    let mut rng = rng::seeded(scenario.seed);
    let mut data = Vec::with_capacity(scenario.n * scenario.dim);
    let mut labels = Vec::with_capacity(scenario.n);
    for _ in 0..scenario.n {
        let label = if rng.random::<f64>() < scenario.weights[0] {
            1
        } else {
            2
        };
        data.extend(densities[label - 1].sample(&mut rng));
        labels.push(label);
    }
    let features = FeatureMatrix::from_row_major(scenario.n, scenario.dim, data)?;
    Ok((LabeledDataset::new(features, labels, 2)?, params))
}

/// Scores under the generating parameters.
pub fn oracle_scores(true_params: &GmmParams, x: &FeatureMatrix) -> Result<ScoreMatrix> {
    model::score(true_params, x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvdEstimate {
    /// Half the importance-sampling mean, i.e. the total variation distance.
    pub estimate: f64,
    pub std_error: f64,
    /// `E_g |f/g - 1|` before halving.
    pub raw_expectation: f64,
    pub n_samples: usize,
}

/// Integrand used by [`estimate_tvd_with`]. Both estimate `E_g |f/g - 1|`
/// with `x ~ g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TvdIntegrand {
    /// `2 (1 - f/g)+`, which has the same expectation because `E_g[f/g - 1] = 0`
    /// and stays in `[0, 2]`.
    #[default]
    Bounded,
    /// `|f/g - 1|` as written; unbounded and heavy-tailed for distant components.
    Literal,
}

/// Monte-Carlo total variation distance between two component densities,
/// sampling from `g`; ratios are taken in the log domain.
pub fn estimate_tvd(
    f: &Component,
    g: &Component,
    n_samples: usize,
    seed: u64,
) -> Result<TvdEstimate> {
    estimate_tvd_with(f, g, n_samples, seed, TvdIntegrand::default())
}

pub fn estimate_tvd_with(
    f: &Component,
    g: &Component,
    n_samples: usize,
    seed: u64,
    integrand: TvdIntegrand,
) -> Result<TvdEstimate> {
    if f.dim() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            actual: g.dim(),
        });
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument(
            "n_samples must be at least 1".into(),
        ));
    }
    let fd = f
        .density()
        .ok_or(Error::NotPositiveDefinite { component: 1 })?;
    let gd = g
        .density()
        .ok_or(Error::NotPositiveDefinite { component: 2 })?;
    let mut rng = rng::seeded(seed);

    // Welford running mean and variance
    let (mut mean, mut m2) = (0.0, 0.0);
    for i in 0..n_samples {
        let x = gd.sample(&mut rng);
        let r = (fd.log_density(&x) - gd.log_density(&x)).exp_m1();
        let v = match integrand {
            TvdIntegrand::Bounded => 2.0 * (-r).max(0.0),
            TvdIntegrand::Literal => r.abs(),
        };
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let sd = if n_samples > 1 {
        (m2 / (n_samples - 1) as f64).sqrt()
    } else {
        0.0
    };
    let se = sd / (n_samples as f64).sqrt();
    Ok(TvdEstimate {
        estimate: mean / 2.0,
        std_error: se / 2.0,
        raw_expectation: mean,
        n_samples,
    })
}
