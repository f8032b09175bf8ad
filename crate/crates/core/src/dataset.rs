//! Labeled datasets: CSV ingestion, seeded splitting, class-balanced
//! subsampling and marginal-correlation feature screening.
//!
//! Classes are numbered `1..=k`. Label `0` is reserved for "not classified"
//! and only appears in assignment output or in unlabeled input files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Label value meaning "abstained / unassigned".
pub const ABSTAIN: usize = 0;

/// Dense row-major `n x d` matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    nrows: usize,
    ncols: usize,
}

impl FeatureMatrix {
    pub fn from_row_major(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::DimensionMismatch {
                expected: nrows * ncols,
                actual: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite feature value at row {}, column {}",
                pos / ncols.max(1),
                pos % ncols.max(1)
            )));
        }
        Ok(FeatureMatrix { data, nrows, ncols })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for row in rows {
            if row.len() != ncols {
                return Err(Error::DimensionMismatch {
                    expected: ncols,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(rows.len(), ncols, data)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.nrows).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.ncols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            data,
            nrows: idx.len(),
            ncols: self.ncols,
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(self.nrows * cols.len());
        for row in self.rows() {
            data.extend(cols.iter().map(|&c| row[c]));
        }
        FeatureMatrix {
            data,
            nrows: self.nrows,
            ncols: cols.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: FeatureMatrix,
    labels: Vec<usize>,
    k: usize,
    feature_names: Option<Vec<String>>,
}

impl LabeledDataset {
    /// Build a dataset, checking that every label lies in `0..=k` and `d >= 1`.
    ///
    /// Empty datasets are accepted here because splits may legitimately
    /// produce them; the loaders reject empty input.
    pub fn new(features: FeatureMatrix, labels: Vec<usize>, k: usize) -> Result<Self> {
        if features.ncols() == 0 {
            return Err(Error::InvalidDataset(
                "dataset has no feature columns".into(),
            ));
        }
        if labels.len() != features.nrows() {
            return Err(Error::LengthMismatch {
                left: features.nrows(),
                right: labels.len(),
            });
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l > k) {
            return Err(Error::InvalidDataset(format!(
                "row {row} has label {label} outside 0..={k}"
            )));
        }
        Ok(LabeledDataset {
            features,
            labels,
            k,
            feature_names: None,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                actual: names.len(),
            });
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn is_empty(&self) -> bool {
        self.n() == 0
    }

    /// Row counts per class; index 0 counts unlabeled rows.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k + 1];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn select_rows(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            k: self.k,
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_columns(cols),
            labels: self.labels.clone(),
            k: self.k,
            feature_names: self
                .feature_names
                .as_ref()
                .map(|names| cols.iter().map(|&c| names[c].clone()).collect()),
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        if self.d() != other.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                actual: other.d(),
            });
        }
        let mut data = self.features.as_slice().to_vec();
        data.extend_from_slice(other.features.as_slice());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(LabeledDataset {
            features: FeatureMatrix {
                data,
                nrows: self.n() + other.n(),
                ncols: self.d(),
            },
            labels,
            k: self.k.max(other.k),
            feature_names: self.feature_names.clone(),
        })
    }
}

// ---------------------------------------------------------------------------
// CSV

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
    Last,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_column: LabelColumn,
    /// Text-to-class mapping. `None` parses labels as integers directly.
    pub label_map: Option<BTreeMap<String, usize>>,
    pub missing_token: String,
    pub drop_missing: bool,
    pub has_header: bool,
    /// Columns skipped entirely (e.g. a date stamp).
    pub ignore_columns: Vec<usize>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            label_column: LabelColumn::Last,
            label_map: None,
            missing_token: "?".into(),
            drop_missing: false,
            has_header: false,
            ignore_columns: Vec::new(),
        }
    }
}

impl CsvSchema {
    /// UCI ionosphere layout: 34 numeric columns then `g`/`b`.
    pub fn ionosphere() -> Self {
        CsvSchema {
            label_map: Some(label_map(&[("g", 1), ("b", 2)])),
            ..CsvSchema::default()
        }
    }

    /// UCI ozone (eight-hour) layout: date, 72 numeric columns, `0`/`1`
    /// class, `?` for missing. Ozone days map to class 2.
    pub fn ozone() -> Self {
        CsvSchema {
            label_map: Some(label_map(&[("0", 1), ("1", 2)])),
            drop_missing: true,
            ignore_columns: vec![0],
            ..CsvSchema::default()
        }
    }

    /// Layout produced by [`write_csv`].
    pub fn echo() -> Self {
        CsvSchema {
            has_header: true,
            ..CsvSchema::default()
        }
    }

    fn class_count(&self) -> Result<Option<usize>> {
        let Some(map) = &self.label_map else {
            return Ok(None);
        };
        let values: BTreeSet<usize> = map.values().copied().collect();
        let k = map.len();
        if values.len() != k || values != (1..=k).collect() {
            return Err(Error::InvalidArgument(
                "label map must be a bijection onto 1..=k".into(),
            ));
        }
        Ok(Some(k))
    }
}

pub fn label_map(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
    pairs.iter().map(|&(s, c)| (s.to_string(), c)).collect()
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<LabeledDataset> {
    let fixed_k = schema.class_count()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut records = rdr.records();
    let header = if schema.has_header {
        match records.next() {
            Some(rec) => Some(rec?),
            None => return Err(Error::EmptyDataset),
        }
    } else {
        None
    };

    let mut width = header.as_ref().map(|h| h.len());
    let mut label_col: Option<usize> = None;
    let mut feature_cols: Vec<usize> = Vec::new();
    let mut data = Vec::new();
    let mut labels = Vec::new();

    for (i, rec) in records.enumerate() {
        let rec = rec?;
        let line = i + 1 + usize::from(schema.has_header);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::InvalidDataset(format!(
                "line {line} has {} fields, expected {w}",
                rec.len()
            )));
        }
        if label_col.is_none() {
            let lc = resolve_label_column(&schema.label_column, header.as_ref(), w)?;
            feature_cols = (0..w)
                .filter(|c| *c != lc && !schema.ignore_columns.contains(c))
                .collect();
            label_col = Some(lc);
        }
        let lc = label_col.unwrap_or_default();

        let has_missing = rec
            .iter()
            .enumerate()
            .any(|(c, v)| v == schema.missing_token && !schema.ignore_columns.contains(&c));
        if has_missing && schema.drop_missing {
            continue;
        }

        for &c in &feature_cols {
            let cell = &rec[c];
            let value: f64 = cell.parse().map_err(|_| Error::UnparseableCell {
                row: line,
                column: c,
                value: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(Error::UnparseableCell {
                    row: line,
                    column: c,
                    value: cell.to_string(),
                });
            }
            data.push(value);
        }

        let text = &rec[lc];
        let label = match &schema.label_map {
            Some(map) => map.get(text).copied(),
            None => text.parse::<usize>().ok(),
        };
        labels.push(label.ok_or_else(|| Error::UnknownLabel {
            row: line,
            label: text.to_string(),
        })?);
    }

    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = match fixed_k {
        Some(k) => k,
        None => labels.iter().copied().max().unwrap_or(0),
    };
    if k == 0 {
        return Err(Error::InvalidDataset("no class labels present".into()));
    }
    let features = FeatureMatrix::from_row_major(labels.len(), feature_cols.len(), data)?;
    let dataset = LabeledDataset::new(features, labels, k)?;
    match header {
        Some(h) => {
            let names = feature_cols.iter().map(|&c| h[c].to_string()).collect();
            dataset.with_feature_names(names)
        }
        None => Ok(dataset),
    }
}

fn resolve_label_column(
    column: &LabelColumn,
    header: Option<&csv::StringRecord>,
    width: usize,
) -> Result<usize> {
    match column {
        LabelColumn::Last => width
            .checked_sub(1)
            .ok_or_else(|| Error::MissingLabelColumn("last".into())),
        LabelColumn::Index(i) if *i < width => Ok(*i),
        LabelColumn::Index(i) => Err(Error::MissingLabelColumn(i.to_string())),
        LabelColumn::Name(name) => header
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| Error::MissingLabelColumn(name.clone())),
    }
}

/// Write `data` with a header row and the label in the last column. Values
/// are rendered with 17 significant digits so that reloading is exact.
pub fn write_csv<W: Write>(data: &LabeledDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = match data.feature_names() {
        Some(names) => names.to_vec(),
        None => (1..=data.d()).map(|j| format!("x{j}")).collect(),
    };
    header.push("label".into());
    wtr.write_record(&header)?;
    let mut fields = Vec::with_capacity(data.d() + 1);
    for (row, label) in data.features().rows().zip(data.labels()) {
        fields.clear();
        fields.extend(row.iter().map(|v| format!("{v:.16e}")));
        fields.push(label.to_string());
        wtr.write_record(&fields)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_csv(data: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(data, std::io::BufWriter::new(file))
}

/// The UCI ionosphere data (351 radar returns, 34 features, good = 1, bad = 2).
pub fn ionosphere() -> LabeledDataset {
    const RAW: &str = include_str!("../data/ionosphere.data");
    read_csv(RAW.as_bytes(), &CsvSchema::ionosphere()).expect("bundled ionosphere data is valid")
}

// ---------------------------------------------------------------------------
// Splitting

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_train: usize,
    pub n_calib: usize,
    pub n_test: usize,
    pub seed: u64,
    /// Allocate each part proportionally to the class frequencies.
    #[serde(default)]
    pub stratified: bool,
}

impl SplitSpec {
    pub fn new(n_train: usize, n_calib: usize, n_test: usize, seed: u64) -> Self {
        SplitSpec {
            n_train,
            n_calib,
            n_test,
            seed,
            stratified: false,
        }
    }

    pub fn total(&self) -> usize {
        self.n_train + self.n_calib + self.n_test
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.n_train == 0 {
            return Err(Error::InvalidArgument("n_train must be at least 1".into()));
        }
        if self.total() > n {
            return Err(Error::SplitTooLarge {
                requested: self.total(),
                available: n,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub calib: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(labels: &[usize], spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate(labels.len())?;
    let mut rng = rng::seeded(spec.seed);
    let sizes = [spec.n_train, spec.n_calib, spec.n_test];

    let mut parts: [Vec<usize>; 3] = Default::default();
    if spec.stratified {
        let k = labels.iter().copied().max().unwrap_or(0);
        let mut pools: Vec<Vec<usize>> = vec![Vec::new(); k + 1];
        for (i, &l) in labels.iter().enumerate() {
            pools[l].push(i);
        }
        for pool in &mut pools {
            pool.shuffle(&mut rng);
        }
        for (part, &size) in parts.iter_mut().zip(&sizes) {
            let available: Vec<usize> = pools.iter().map(Vec::len).collect();
            for (class, take) in proportional_quota(&available, size).into_iter().enumerate() {
                let at = pools[class].len() - take;
                part.extend(pools[class].drain(at..));
            }
            part.shuffle(&mut rng);
        }
    } else {
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.shuffle(&mut rng);
        let mut start = 0;
        for (part, &size) in parts.iter_mut().zip(&sizes) {
            part.extend_from_slice(&order[start..start + size]);
            start += size;
        }
    }
    let [train, calib, test] = parts;
    Ok(SplitIndices { train, calib, test })
}

/// Largest-remainder allocation of `size` draws across pools, never taking
/// more than a pool holds.
fn proportional_quota(available: &[usize], size: usize) -> Vec<usize> {
    let total: usize = available.iter().sum();
    if total == 0 {
        return vec![0; available.len()];
    }
    let mut quota: Vec<usize> = available.iter().map(|&a| a * size / total).collect();
    let mut remaining = size - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..available.len()).collect();
    // remainder of a*size/total, compared exactly as a*size mod total
    order.sort_by(|&a, &b| {
        let ra = available[a] * size % total;
        let rb = available[b] * size % total;
        rb.cmp(&ra).then(a.cmp(&b))
    });
    while remaining > 0 {
        let before = remaining;
        for &c in &order {
            if remaining == 0 {
                break;
            }
            if quota[c] < available[c] {
                quota[c] += 1;
                remaining -= 1;
            }
        }
        if before == remaining {
            break;
        }
    }
    quota
}

pub fn split(
    data: &LabeledDataset,
    spec: &SplitSpec,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    let idx = split_indices(data.labels(), spec)?;
    Ok((
        data.select_rows(&idx.train),
        data.select_rows(&idx.calib),
        data.select_rows(&idx.test),
    ))
}

/// All rows of `take_all_class` plus `n_other` random rows from the other
/// classes, returned in shuffled order.
pub fn subsample_balanced(
    data: &LabeledDataset,
    take_all_class: usize,
    n_other: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    let (mut keep, mut others): (Vec<usize>, Vec<usize>) =
        (0..data.n()).partition(|&i| data.labels()[i] == take_all_class);
    if keep.is_empty() {
        return Err(Error::ClassAbsent(take_all_class));
    }
    if n_other > others.len() {
        return Err(Error::SubsampleTooLarge {
            requested: n_other,
            available: others.len(),
        });
    }
    let mut rng = rng::seeded(seed);
    others.shuffle(&mut rng);
    keep.extend_from_slice(&others[..n_other]);
    keep.shuffle(&mut rng);
    Ok(data.select_rows(&keep))
}

// ---------------------------------------------------------------------------
// Feature screening

#[derive(Debug, Clone)]
pub struct Screening {
    pub train: LabeledDataset,
    pub others: Vec<LabeledDataset>,
    /// Selected column indices in original order.
    pub selected: Vec<usize>,
    /// Pearson correlation of every original column with the labels.
    pub correlations: Vec<f64>,
}

/// Keep the `top_k` columns of `train` with the largest absolute Pearson
/// correlation to the binary labels, and project `others` the same way.
pub fn screen_features(
    train: &LabeledDataset,
    others: &[LabeledDataset],
    top_k: usize,
) -> Result<Screening> {
    if train.k() != 2 || train.labels().iter().any(|&l| l != 1 && l != 2) {
        return Err(Error::NonBinaryLabels(train.k()));
    }
    if top_k == 0 || top_k > train.d() {
        return Err(Error::InvalidArgument(format!(
            "top_k must be in 1..={}, got {top_k}",
            train.d()
        )));
    }
    if let Some(o) = others.iter().find(|o| o.d() != train.d()) {
        return Err(Error::DimensionMismatch {
            expected: train.d(),
            actual: o.d(),
        });
    }

    let y: Vec<f64> = train.labels().iter().map(|&l| (l - 1) as f64).collect();
    let correlations: Vec<f64> = (0..train.d())
        .map(|j| pearson(&train.features().column(j), &y))
        .collect();

    let mut ranked: Vec<usize> = (0..train.d()).collect();
    ranked.sort_by(|&a, &b| {
        correlations[b]
            .abs()
            .total_cmp(&correlations[a].abs())
            .then(a.cmp(&b))
    });
    let mut selected = ranked[..top_k].to_vec();
    selected.sort_unstable();

    Ok(Screening {
        train: train.select_columns(&selected),
        others: others.iter().map(|o| o.select_columns(&selected)).collect(),
        selected,
        correlations,
    })
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if x.is_empty() || constant(x) || constant(y) {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}
