//! Threshold calibration on the top-two score gap.
//!
//! A point is classified to its arg-max class only when the gap between its
//! best and second-best score is at least `t`; otherwise it abstains (label
//! 0). Sweeping `t` over a grid on a hold-out set traces misclassification
//! proportion (MCP) against probability of assignment (PA), and the
//! tempered-softmax loss (MCL) against average entropy (AE). A threshold is
//! then picked to meet a target on one of the two losses and reused on new
//! data.
//!
//! Conventions:
//! - assigned iff `t` is finite and `gap >= t`; `t = +inf` assigns nothing
//! - MCP of an empty assigned set is 0 (the record is flagged `empty`)
//! - the softmax temperature is the threshold itself, `p_j ∝ exp(score_j / t)`

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, ScoreMatrix};
use crate::serde_ext;

/// Smallest finite threshold used when a grid is built from data.
pub const DEFAULT_EPSILON: f64 = 1e-12;

/// Arg-max class (1-based) and `max - second max` of one score row.
///
/// Duplicate maxima give a gap of 0; a finite maximum over a `-inf`
/// runner-up gives `+inf`.
pub fn top_two_gap(row: &[f64]) -> Result<(usize, f64)> {
    if row.len() < 2 {
        return Err(Error::TooFewClasses(row.len()));
    }
    let (best, max) = argmax(row);
    if !max.is_finite() {
        return Err(Error::InvalidArgument(
            "score row has no finite entry".into(),
        ));
    }
    let second = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != best)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((best + 1, max - second))
}

/// `true` when a point with this gap is classified at threshold `t`.
#[inline]
pub fn is_assigned(gap: f64, t: f64) -> bool {
    t.is_finite() && gap >= t
}

/// Strictly increasing thresholds starting at or above 0 and ending at `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ThresholdGrid(Vec<f64>);

impl ThresholdGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidGrid("needs at least two thresholds".into()));
        }
        if !(values[0] >= 0.0) {
            return Err(Error::InvalidGrid(format!(
                "first threshold {} is negative",
                values[0]
            )));
        }
        if values.last() != Some(&f64::INFINITY) {
            return Err(Error::InvalidGrid("last threshold must be +inf".into()));
        }
        if let Some(w) = values.windows(2).find(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidGrid(format!(
                "thresholds not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(ThresholdGrid(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<String>> for ThresholdGrid {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        let values = v
            .iter()
            .map(|s| {
                serde_ext::parse(s)
                    .ok_or_else(|| Error::InvalidGrid(format!("cannot parse threshold {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        ThresholdGrid::new(values)
    }
}

impl From<ThresholdGrid> for Vec<String> {
    fn from(g: ThresholdGrid) -> Self {
        g.0.into_iter().map(serde_ext::render).collect()
    }
}

/// Grid made of `epsilon`, every distinct finite gap at or above `epsilon`,
/// and `+inf`. Each finite grid value is a point where some row leaves the
/// assigned set, so a sweep on this grid sees every achievable assigned set.
pub fn build_grid(scores: &ScoreMatrix, epsilon: f64) -> Result<ThresholdGrid> {
    build_grid_pooled(&[scores], epsilon)
}

/// As [`build_grid`], over the rows of several score matrices.
pub fn build_grid_pooled(scores: &[&ScoreMatrix], epsilon: f64) -> Result<ThresholdGrid> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be a positive finite number, got {epsilon}"
        )));
    }
    let mut values = vec![epsilon];
    for s in scores {
        if s.k() < 2 {
            return Err(Error::TooFewClasses(s.k()));
        }
        for row in s.rows() {
            let (_, gap) = top_two_gap(row)?;
            if gap.is_finite() && gap >= epsilon {
                values.push(gap);
            }
        }
    }
    values.sort_by(f64::total_cmp);
    values.dedup();
    values.push(f64::INFINITY);
    ThresholdGrid::new(values)
}

/// Metrics of one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    #[serde(with = "serde_ext")]
    pub t: f64,
    pub mcp: f64,
    pub pa: f64,
    pub n_assigned: usize,
    pub n_misclassified: usize,
    #[serde(with = "serde_ext")]
    pub mcl: f64,
    #[serde(with = "serde_ext")]
    pub ae: f64,
    /// Nothing assigned; `mcp` is 0 by convention.
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub n: usize,
    pub k: usize,
    pub records: Vec<CurveRecord>,
}

impl CalibrationCurve {
    pub fn records(&self) -> &[CurveRecord] {
        &self.records
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    /// Record at `t` for the step metrics (MCP, PA, counts): the record of
    /// the smallest grid value at or above `t`, which has the same assigned
    /// set. MCL and AE vary between grid values; the returned record carries
    /// their values at that grid value.
    pub fn at(&self, t: f64) -> Option<&CurveRecord> {
        let pos = self.records.partition_point(|r| r.t < t);
        self.records.get(pos)
    }

    pub fn laxest(&self) -> &CurveRecord {
        &self.records[0]
    }

    /// CSV with header `t,mcp,pa,n_assigned,mcl,ae`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "mcp", "pa", "n_assigned", "mcl", "ae"])?;
        for r in &self.records {
            w.write_record([
                serde_ext::render(r.t),
                serde_ext::render(r.mcp),
                serde_ext::render(r.pa),
                r.n_assigned.to_string(),
                serde_ext::render(r.mcl),
                serde_ext::render(r.ae),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EntropyFormula {
    /// `-sum_j p_j log p_j`, bounded by `log k`.
    #[default]
    Shannon,
    /// `-sum_j log p_j` without the probability weights.
    UnweightedLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepOptions {
    pub entropy: EntropyFormula,
}

fn check_truth(scores: &ScoreMatrix, truth: &[usize]) -> Result<()> {
    if scores.n() != truth.len() {
        return Err(Error::LengthMismatch {
            left: scores.n(),
            right: truth.len(),
        });
    }
    if scores.k() < 2 {
        return Err(Error::TooFewClasses(scores.k()));
    }
    if let Some((row, &label)) = truth
        .iter()
        .enumerate()
        .find(|(_, &l)| l == 0 || l > scores.k())
    {
        return Err(Error::InvalidTruth {
            row,
            label,
            k: scores.k(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

pub fn sweep(
    scores: &ScoreMatrix,
    truth: &[usize],
    grid: &ThresholdGrid,
) -> Result<CalibrationCurve> {
    sweep_with(scores, truth, grid, &SweepOptions::default())
}

/// Evaluate every threshold of `grid` on labeled scores.
///
/// Rows are ordered by gap once; MCP and PA then come from running counts
/// while walking the grid from the strictest threshold down. MCL and AE are
/// recomputed per threshold.
pub fn sweep_with(
    scores: &ScoreMatrix,
    truth: &[usize],
    grid: &ThresholdGrid,
    options: &SweepOptions,
) -> Result<CalibrationCurve> {
    check_truth(scores, truth)?;
    let n = scores.n();
    let mut ranked: Vec<(f64, bool)> = scores
        .rows()
        .zip(truth)
        .map(|(row, &z)| top_two_gap(row).map(|(j, gap)| (gap, j != z)))
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));

    let thresholds = grid.values();
    let mut records = Vec::with_capacity(thresholds.len());
    let (mut assigned, mut wrong) = (0usize, 0usize);
    for &t in thresholds.iter().rev() {
        while assigned < n && is_assigned(ranked[assigned].0, t) {
            wrong += usize::from(ranked[assigned].1);
            assigned += 1;
        }
        let (loss, entropy) = softmax_metrics(scores, truth, t, options.entropy)?;
        records.push(CurveRecord {
            t,
            mcp: if assigned == 0 {
                0.0
            } else {
                wrong as f64 / assigned as f64
            },
            pa: assigned as f64 / n as f64,
            n_assigned: assigned,
            n_misclassified: wrong,
            mcl: loss,
            ae: entropy,
            empty: assigned == 0,
        });
    }
    records.reverse();
    Ok(CalibrationCurve {
        n,
        k: scores.k(),
        records,
    })
}

/// Metrics of a single threshold, e.g. a selected `t*` on test data.
pub fn evaluate_at(scores: &ScoreMatrix, truth: &[usize], t: f64) -> Result<CurveRecord> {
    evaluate_at_with(scores, truth, t, &SweepOptions::default())
}

pub fn evaluate_at_with(
    scores: &ScoreMatrix,
    truth: &[usize],
    t: f64,
    options: &SweepOptions,
) -> Result<CurveRecord> {
    check_truth(scores, truth)?;
    let assignment = apply_threshold(scores, t);
    let (mut assigned, mut wrong) = (0usize, 0usize);
    for (&label, &z) in assignment.labels.iter().zip(truth) {
        if label != 0 {
            assigned += 1;
            wrong += usize::from(label != z);
        }
    }
    let (loss, entropy) = softmax_metrics(scores, truth, t, options.entropy)?;
    Ok(CurveRecord {
        t,
        mcp: if assigned == 0 {
            0.0
        } else {
            wrong as f64 / assigned as f64
        },
        pa: assigned as f64 / scores.n() as f64,
        n_assigned: assigned,
        n_misclassified: wrong,
        mcl: loss,
        ae: entropy,
        empty: assigned == 0,
    })
}

/// Log-probabilities of the softmax of `row / t`.
///
/// `t = +inf` gives the uniform distribution. Computed as
/// `z - logsumexp(z)` with `z = (row - max) / t`, so the top entry is
/// exactly 0 before normalization even for tiny `t`.
pub fn log_softmax(row: &[f64], t: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; row.len()];
    log_softmax_into(row, t, &mut out)?;
    Ok(out)
}

fn log_softmax_into(row: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
    if !(t > 0.0) {
        return Err(Error::NonPositiveThreshold(t));
    }
    let k = row.len();
    if k == 0 {
        return Err(Error::TooFewClasses(0));
    }
    if t == f64::INFINITY {
        out.fill(-(k as f64).ln());
        return Ok(());
    }
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::INFINITY {
        // the limit splits mass over the infinite entries
        let top = row.iter().filter(|&&v| v == f64::INFINITY).count() as f64;
        for (o, &v) in out.iter_mut().zip(row) {
            *o = if v == f64::INFINITY {
                -top.ln()
            } else {
                f64::NEG_INFINITY
            };
        }
        return Ok(());
    }
    if !m.is_finite() {
        return Err(Error::InvalidArgument(
            "score row has no finite entry".into(),
        ));
    }
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - m) / t;
    }
    let lse = out.iter().map(|&v| v.exp()).sum::<f64>().ln();
    for o in out.iter_mut() {
        *o -= lse;
    }
    Ok(())
}

/// Softmax threshold probabilities of one score row at threshold `t`.
pub fn softmax_probs(row: &[f64], t: f64) -> Result<Vec<f64>> {
    Ok(log_softmax(row, t)?.into_iter().map(f64::exp).collect())
}

/// `n x k` table of log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityTable {
    log_probs: Vec<f64>,
    n: usize,
    k: usize,
}

impl ProbabilityTable {
    pub fn from_probs(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        let mut log_probs = Vec::with_capacity(rows.len() * k);
        for row in rows {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    actual: row.len(),
                });
            }
            log_probs.extend(row.iter().map(|p| p.ln()));
        }
        Ok(ProbabilityTable {
            log_probs,
            n: rows.len(),
            k,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn log_row(&self, i: usize) -> &[f64] {
        &self.log_probs[i * self.k..(i + 1) * self.k]
    }

    pub fn prob_row(&self, i: usize) -> Vec<f64> {
        self.log_row(i).iter().map(|v| v.exp()).collect()
    }
}

pub fn softmax_table(scores: &ScoreMatrix, t: f64) -> Result<ProbabilityTable> {
    let k = scores.k();
    let mut log_probs = vec![0.0; scores.n() * k];
    for (row, out) in scores.rows().zip(log_probs.chunks_exact_mut(k)) {
        log_softmax_into(row, t, out)?;
    }
    Ok(ProbabilityTable {
        log_probs,
        n: scores.n(),
        k: scores.k(),
    })
}

/// Multinomial classification loss `-sum_i log p_{i, truth_i}`.
pub fn mcl(probs: &ProbabilityTable, truth: &[usize]) -> Result<f64> {
    if probs.n() != truth.len() {
        return Err(Error::LengthMismatch {
            left: probs.n(),
            right: truth.len(),
        });
    }
    let mut total = 0.0;
    for (i, &z) in truth.iter().enumerate() {
        if z == 0 || z > probs.k() {
            return Err(Error::InvalidTruth {
                row: i,
                label: z,
                k: probs.k(),
            });
        }
        total -= probs.log_row(i)[z - 1];
    }
    Ok(total)
}

fn row_entropy(log_row: &[f64], formula: EntropyFormula, max: f64) -> f64 {
    match formula {
        EntropyFormula::Shannon => {
            let h: f64 = log_row
                .iter()
                .filter(|lp| lp.is_finite())
                .map(|&lp| -lp.exp() * lp)
                .sum();
            h.clamp(0.0, max)
        }
        EntropyFormula::UnweightedLog => -log_row.iter().sum::<f64>(),
    }
}

fn mean_entropy(total: f64, n: usize, formula: EntropyFormula, max: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mean = total / n as f64;
    match formula {
        EntropyFormula::Shannon => mean.clamp(0.0, max),
        EntropyFormula::UnweightedLog => mean,
    }
}

/// Mean per-row entropy of the probability table, `0 log 0 = 0`.
pub fn average_entropy(probs: &ProbabilityTable, formula: EntropyFormula) -> f64 {
    let max = (probs.k() as f64).ln();
    let total: f64 = (0..probs.n())
        .map(|i| row_entropy(probs.log_row(i), formula, max))
        .sum();
    mean_entropy(total, probs.n(), formula, max)
}

/// MCL and AE at `t` in one pass, without materializing the table. Matches
/// `mcl` and `average_entropy` over `softmax_table` bit for bit.
fn softmax_metrics(
    scores: &ScoreMatrix,
    truth: &[usize],
    t: f64,
    formula: EntropyFormula,
) -> Result<(f64, f64)> {
    let k = scores.k();
    let max = (k as f64).ln();
    let mut buf = vec![0.0; k];
    let (mut loss, mut total) = (0.0, 0.0);
    for (row, &z) in scores.rows().zip(truth) {
        log_softmax_into(row, t, &mut buf)?;
        loss -= buf[z - 1];
        total += row_entropy(&buf, formula, max);
    }
    Ok((loss, mean_entropy(total, scores.n(), formula, max)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Mcp,
    Mcl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub kind: TargetKind,
    pub value: f64,
}

impl Target {
    pub fn mcp(q: f64) -> Self {
        Target {
            kind: TargetKind::Mcp,
            value: q,
        }
    }

    pub fn mcl(r: f64) -> Self {
        Target {
            kind: TargetKind::Mcl,
            value: r,
        }
    }

    pub fn metric(&self, record: &CurveRecord) -> f64 {
        match self.kind {
            TargetKind::Mcp => record.mcp,
            TargetKind::Mcl => record.mcl,
        }
    }

    pub fn is_met_by(&self, record: &CurveRecord) -> bool {
        self.metric(record) <= self.value
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSelection {
    #[serde(with = "serde_ext")]
    pub t_star: f64,
    pub target_kind: TargetKind,
    pub target_value: f64,
    pub feasible: bool,
    pub achieved: CurveRecord,
}

impl ThresholdSelection {
    pub fn target(&self) -> Target {
        Target {
            kind: self.target_kind,
            value: self.target_value,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Pick `t*` from a calibration curve.
///
/// Among records whose target metric is at most the target, take the one
/// with the largest PA; ties go to the larger metric, then the smaller `t`.
/// With no feasible record the selection is `t* = +inf`, `feasible = false`.
pub fn select_threshold(curve: &CalibrationCurve, target: Target) -> ThresholdSelection {
    let best = curve
        .records
        .iter()
        .filter(|r| target.is_met_by(r))
        .reduce(|best, r| {
            let better = r.pa > best.pa
                || (r.pa == best.pa && target.metric(r) > target.metric(best))
                || (r.pa == best.pa && target.metric(r) == target.metric(best) && r.t < best.t);
            if better {
                r
            } else {
                best
            }
        });
    match best {
        Some(r) => ThresholdSelection {
            t_star: r.t,
            target_kind: target.kind,
            target_value: target.value,
            feasible: true,
            achieved: *r,
        },
        None => {
            let last = curve
                .records
                .last()
                .copied()
                .expect("calibration curves are never empty");
            ThresholdSelection {
                t_star: f64::INFINITY,
                target_kind: target.kind,
                target_value: target.value,
                feasible: false,
                achieved: last,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    /// Arg-max class, or 0 where the gap is below the threshold.
    pub labels: Vec<usize>,
    pub gaps: Vec<f64>,
}

impl AssignmentResult {
    pub fn n_assigned(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

/// Classify rows whose top-two gap reaches `t_star`, abstain on the rest.
pub fn apply_threshold(scores: &ScoreMatrix, t_star: f64) -> AssignmentResult {
    let mut labels = Vec::with_capacity(scores.n());
    let mut gaps = Vec::with_capacity(scores.n());
    for row in scores.rows() {
        let (best, max) = argmax(row);
        let second = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != best)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let gap = max - second;
        labels.push(if is_assigned(gap, t_star) {
            best + 1
        } else {
            0
        });
        gaps.push(gap);
    }
    AssignmentResult { labels, gaps }
}
