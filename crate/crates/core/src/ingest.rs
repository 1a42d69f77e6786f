//! Tabular dataset loading, median imputation, stratified splitting and
//! subset filtering.
//!
//! A [`Dataset`] is immutable once built; every operation here returns a new
//! value rather than editing in place.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("schema is invalid: {0}")]
    InvalidSchema(String),
    #[error("column `{0}` is missing from the header")]
    MissingColumn(String),
    #[error("unparseable cells: {}", format_cells(.0))]
    UnparseableCells(Vec<CellError>),
    #[error("file has no data rows")]
    EmptyFile,
    #[error("column `{0}` is flagged zero-means-missing but every value is zero")]
    AllMissingColumn(String),
    #[error("class `{0}` has fewer than 2 rows")]
    ClassTooSmall(String),
    #[error("test fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("io error: {0}")]
    Io(String),
}

/// Location of a cell that could not be parsed. `row` counts data rows from 1
/// (the header is not counted).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellError {
    pub row: usize,
    pub column: String,
}

fn format_cells(cells: &[CellError]) -> String {
    cells
        .iter()
        .map(|c| format!("({}, {})", c.row, c.column))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Integer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub feature_names: Vec<String>,
    pub feature_kinds: Vec<FeatureKind>,
    pub outcome_name: String,
    pub outcome_labels: Vec<String>,
    /// Human name of the positive outcome, used as the predicate target
    /// (e.g. `Diabetes`).
    #[serde(default = "default_target")]
    pub target_name: String,
    pub zero_means_missing: Vec<bool>,
    #[serde(default)]
    pub feature_aliases: BTreeMap<String, String>,
    pub mutability: Vec<bool>,
    /// Absolute slack used by EQ constraints, per feature. Defaults to 0.
    #[serde(default)]
    pub eq_tolerance: Vec<f64>,
}

fn default_target() -> String {
    "Outcome".to_string()
}

impl DatasetSchema {
    /// A schema of continuous, mutable features with no aliases and no
    /// missing-value encoding. Handy for synthetic fixtures.
    pub fn numeric(names: &[&str]) -> Self {
        let n = names.len();
        DatasetSchema {
            feature_names: names.iter().map(|s| s.to_string()).collect(),
            feature_kinds: vec![FeatureKind::Continuous; n],
            outcome_name: "Outcome".into(),
            outcome_labels: vec!["0".into(), "1".into()],
            target_name: "Outcome".into(),
            zero_means_missing: vec![false; n],
            feature_aliases: BTreeMap::new(),
            mutability: vec![true; n],
            eq_tolerance: vec![0.0; n],
        }
    }

    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        let mut schema: DatasetSchema =
            serde_json::from_str(text).map_err(|e| IngestError::InvalidSchema(e.to_string()))?;
        if schema.eq_tolerance.is_empty() {
            schema.eq_tolerance = vec![0.0; schema.feature_names.len()];
        }
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| IngestError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let n = self.feature_names.len();
        let bad = |msg: String| Err(IngestError::InvalidSchema(msg));
        if n == 0 {
            return bad("no features declared".into());
        }
        for (field, len) in [
            ("feature_kinds", self.feature_kinds.len()),
            ("zero_means_missing", self.zero_means_missing.len()),
            ("mutability", self.mutability.len()),
            ("eq_tolerance", self.eq_tolerance.len()),
        ] {
            if len != n {
                return bad(format!("{field} has {len} entries, expected {n}"));
            }
        }
        let mut seen = HashMap::new();
        for name in &self.feature_names {
            if seen.insert(name.to_lowercase(), ()).is_some() {
                return bad(format!("duplicate feature name `{name}`"));
            }
        }
        if self.feature_names.iter().any(|f| f == &self.outcome_name) {
            return bad(format!("outcome `{}` is also a feature", self.outcome_name));
        }
        if self.outcome_labels.len() != 2 {
            return bad("exactly two outcome labels are supported".into());
        }
        if self.eq_tolerance.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return bad("eq_tolerance values must be finite and non-negative".into());
        }
        let mut normalized: HashMap<String, &str> = HashMap::new();
        for (alias, canonical) in &self.feature_aliases {
            if self.index_of_exact(canonical).is_none() {
                return bad(format!("alias `{alias}` points at unknown feature `{canonical}`"));
            }
            let key = normalize_alias(alias);
            if let Some(prev) = normalized.insert(key, canonical.as_str()) {
                if prev != canonical {
                    return bad(format!("alias `{alias}` maps to more than one feature"));
                }
            }
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn index_of_exact(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    /// Resolves a canonical name or any alias (case and whitespace
    /// insensitive) to a feature index.
    pub fn resolve(&self, name: &str) -> Option<usize> {
        let key = normalize_alias(name);
        if let Some(i) = self
            .feature_names
            .iter()
            .position(|f| normalize_alias(f) == key)
        {
            return Some(i);
        }
        self.feature_aliases
            .iter()
            .find(|(alias, _)| normalize_alias(alias) == key)
            .and_then(|(_, canonical)| self.index_of_exact(canonical))
    }

    pub fn canonical(&self, name: &str) -> Option<&str> {
        self.resolve(name).map(|i| self.feature_names[i].as_str())
    }

    /// All surface forms (canonical names and aliases) with their feature
    /// index, longest first.
    pub fn surface_forms(&self) -> Vec<(String, usize)> {
        let mut forms: Vec<(String, usize)> = self
            .feature_names
            .iter()
            .enumerate()
            .map(|(i, f)| (normalize_alias(f), i))
            .collect();
        for (alias, canonical) in &self.feature_aliases {
            if let Some(i) = self.index_of_exact(canonical) {
                forms.push((normalize_alias(alias), i));
            }
        }
        forms.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        forms.dedup();
        forms
    }

    pub fn label_index(&self, label: &str) -> Option<u8> {
        let t = label.trim();
        self.outcome_labels
            .iter()
            .position(|l| l == t)
            .or_else(|| {
                let v: f64 = t.parse().ok()?;
                self.outcome_labels
                    .iter()
                    .position(|l| l.parse::<f64>().ok() == Some(v))
            })
            .map(|i| i as u8)
    }
}

fn normalize_alias(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: DatasetSchema,
    pub rows: Vec<Vec<f64>>,
    /// Class index into `schema.outcome_labels` (0 = negative, 1 = positive).
    pub outcomes: Vec<u8>,
    pub row_ids: Vec<u64>,
}

impl Dataset {
    pub fn new(
        schema: DatasetSchema,
        rows: Vec<Vec<f64>>,
        outcomes: Vec<u8>,
    ) -> Result<Self, IngestError> {
        let ids = (0..rows.len() as u64).collect();
        Self::with_ids(schema, rows, outcomes, ids)
    }

    pub fn with_ids(
        schema: DatasetSchema,
        rows: Vec<Vec<f64>>,
        outcomes: Vec<u8>,
        row_ids: Vec<u64>,
    ) -> Result<Self, IngestError> {
        let m = schema.n_features();
        if rows.len() != outcomes.len() || rows.len() != row_ids.len() {
            return Err(IngestError::InvalidSchema(
                "rows, outcomes and row_ids differ in length".into(),
            ));
        }
        if rows.iter().any(|r| r.len() != m) {
            return Err(IngestError::InvalidSchema(format!(
                "every row must have {m} values"
            )));
        }
        if row_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(IngestError::InvalidSchema(
                "row ids must be strictly increasing".into(),
            ));
        }
        Ok(Dataset {
            schema,
            rows,
            outcomes,
            row_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.schema.n_features()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// Rows selected by position, keeping ids ascending.
    pub fn select(&self, positions: &[usize]) -> Dataset {
        let mut positions = positions.to_vec();
        positions.sort_unstable();
        positions.dedup();
        Dataset {
            schema: self.schema.clone(),
            rows: positions.iter().map(|&i| self.rows[i].clone()).collect(),
            outcomes: positions.iter().map(|&i| self.outcomes[i]).collect(),
            row_ids: positions.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }

    pub fn feature_means(&self) -> Vec<f64> {
        (0..self.n_features())
            .map(|j| mean(&self.column(j)))
            .collect()
    }

    pub fn feature_medians(&self) -> Vec<f64> {
        (0..self.n_features())
            .map(|j| median(&self.column(j)))
            .collect()
    }

    /// Sample standard deviations per feature.
    pub fn feature_stds(&self) -> Vec<f64> {
        (0..self.n_features())
            .map(|j| sample_std(&self.column(j)))
            .collect()
    }

    pub fn feature_ranges(&self) -> Vec<(f64, f64)> {
        (0..self.n_features())
            .map(|j| {
                let c = self.column(j);
                (
                    c.iter().cloned().fold(f64::INFINITY, f64::min),
                    c.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                )
            })
            .collect()
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Median; even-length inputs average the two central values.
pub(crate) fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub(crate) fn sample_std(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(v);
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (n - 1) as f64).sqrt()
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Dataset, IngestError> {
    let mut text = String::new();
    File::open(path.as_ref())
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| IngestError::Io(format!("{}: {e}", path.as_ref().display())))?;
    parse_csv(&text, schema)
}

/// Parses CSV text with a header row. Header cells may use canonical names
/// or aliases, in any order; extra columns are ignored.
pub fn parse_csv(text: &str, schema: &DatasetSchema) -> Result<Dataset, IngestError> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Io(e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(IngestError::EmptyFile);
    }

    let mut feature_cols = vec![None; schema.n_features()];
    let mut outcome_col = None;
    for (c, h) in headers.iter().enumerate() {
        if normalize_alias(h) == normalize_alias(&schema.outcome_name) {
            outcome_col = Some(c);
        } else if let Some(j) = schema.resolve(h) {
            feature_cols[j].get_or_insert(c);
        }
    }
    for (j, col) in feature_cols.iter().enumerate() {
        if col.is_none() {
            return Err(IngestError::MissingColumn(schema.feature_names[j].clone()));
        }
    }
    let outcome_col =
        outcome_col.ok_or_else(|| IngestError::MissingColumn(schema.outcome_name.clone()))?;

    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    let mut bad = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| IngestError::Io(e.to_string()))?;
        let row_no = r + 1;
        let mut row = Vec::with_capacity(schema.n_features());
        let mut ok = true;
        for (j, col) in feature_cols.iter().enumerate() {
            match record.get(col.unwrap()).and_then(|s| s.parse::<f64>().ok()) {
                Some(v) if v.is_finite() => row.push(v),
                _ => {
                    ok = false;
                    bad.push(CellError {
                        row: row_no,
                        column: schema.feature_names[j].clone(),
                    });
                }
            }
        }
        match record.get(outcome_col).and_then(|s| schema.label_index(s)) {
            Some(y) if ok => {
                rows.push(row);
                outcomes.push(y);
            }
            Some(_) => {}
            None => bad.push(CellError {
                row: row_no,
                column: schema.outcome_name.clone(),
            }),
        }
    }
    if !bad.is_empty() {
        return Err(IngestError::UnparseableCells(bad));
    }
    if rows.is_empty() {
        return Err(IngestError::EmptyFile);
    }
    Dataset::new(schema.clone(), rows, outcomes)
}

/// Replaces zeros in every zero-means-missing column by the median of that
/// column's non-zero values.
pub fn impute_medians(ds: &Dataset) -> Result<Dataset, IngestError> {
    let mut out = ds.clone();
    for (j, flagged) in ds.schema.zero_means_missing.iter().enumerate() {
        if !flagged {
            continue;
        }
        let present: Vec<f64> = ds.column(j).into_iter().filter(|v| *v != 0.0).collect();
        if present.is_empty() {
            if ds.is_empty() {
                continue;
            }
            return Err(IngestError::AllMissingColumn(ds.schema.feature_names[j].clone()));
        }
        let fill = median(&present);
        for row in out.rows.iter_mut() {
            if row[j] == 0.0 {
                row[j] = fill;
            }
        }
    }
    Ok(out)
}

/// Deterministic stratified split. The test set receives `ceil(n * f)` rows,
/// allocated to classes by largest remainder.
pub fn split(
    ds: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), IngestError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(IngestError::InvalidFraction(test_fraction));
    }
    let n_classes = ds.schema.outcome_labels.len();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in ds.outcomes.iter().enumerate() {
        by_class[y as usize].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if members.len() < 2 {
            return Err(IngestError::ClassTooSmall(ds.schema.outcome_labels[c].clone()));
        }
    }

    let total_test = (ds.len() as f64 * test_fraction - 1e-9).ceil() as usize;
    let quotas: Vec<f64> = by_class
        .iter()
        .map(|m| m.len() as f64 * test_fraction)
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..n_classes).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: usize = counts.iter().sum();
    for &c in order.iter().cycle().take(n_classes * 2) {
        if assigned >= total_test {
            break;
        }
        counts[c] += 1;
        assigned += 1;
    }
    for (c, members) in by_class.iter().enumerate() {
        counts[c] = counts[c].clamp(1, members.len() - 1);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, members) in by_class.iter().enumerate() {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        test.extend_from_slice(&shuffled[..counts[c]]);
        train.extend_from_slice(&shuffled[counts[c]..]);
    }
    Ok((ds.select(&train), ds.select(&test)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintOp {
    #[serde(rename = "EQ")]
    Eq,
    #[serde(rename = "LT")]
    Lt,
    #[serde(rename = "LE")]
    Le,
    #[serde(rename = "GT")]
    Gt,
    #[serde(rename = "GE")]
    Ge,
    #[serde(rename = "RANGE")]
    Range,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConstraint {
    pub feature: String,
    pub op: ConstraintOp,
    pub value: f64,
    /// Upper bound, only meaningful for RANGE (where `value` is the lower bound).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub high: Option<f64>,
    #[serde(default)]
    pub tolerance: f64,
}

impl FeatureConstraint {
    pub fn new(feature: impl Into<String>, op: ConstraintOp, value: f64) -> Self {
        FeatureConstraint {
            feature: feature.into(),
            op,
            value,
            high: None,
            tolerance: 0.0,
        }
    }

    pub fn eq(feature: impl Into<String>, value: f64) -> Self {
        Self::new(feature, ConstraintOp::Eq, value)
    }

    pub fn range(feature: impl Into<String>, low: f64, high: f64) -> Self {
        FeatureConstraint {
            high: Some(high),
            ..Self::new(feature, ConstraintOp::Range, low)
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn matches(&self, x: f64) -> bool {
        match self.op {
            ConstraintOp::Eq => (x - self.value).abs() <= self.tolerance,
            ConstraintOp::Lt => x < self.value,
            ConstraintOp::Le => x <= self.value,
            ConstraintOp::Gt => x > self.value,
            ConstraintOp::Ge => x >= self.value,
            ConstraintOp::Range => x >= self.value && x <= self.high.unwrap_or(self.value),
        }
    }

    pub fn validate(&self, schema: &DatasetSchema) -> Result<usize, IngestError> {
        let j = schema
            .resolve(&self.feature)
            .ok_or_else(|| IngestError::UnknownFeature(self.feature.clone()))?;
        if self.op == ConstraintOp::Range {
            match self.high {
                Some(h) if h >= self.value => {}
                _ => {
                    return Err(IngestError::InvalidSchema(format!(
                        "RANGE on `{}` needs low <= high",
                        self.feature
                    )))
                }
            }
        }
        if !(self.tolerance >= 0.0) {
            return Err(IngestError::InvalidSchema("negative tolerance".into()));
        }
        Ok(j)
    }
}

impl fmt::Display for FeatureConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sym = match self.op {
            ConstraintOp::Eq => "=",
            ConstraintOp::Lt => "<",
            ConstraintOp::Le => "<=",
            ConstraintOp::Gt => ">",
            ConstraintOp::Ge => ">=",
            ConstraintOp::Range => {
                return write!(
                    f,
                    "{} in [{}, {}]",
                    self.feature,
                    self.value,
                    self.high.unwrap_or(self.value)
                )
            }
        };
        write!(f, "{} {} {}", self.feature, sym, self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub feature: String,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSummary {
    pub match_count: usize,
    pub total_count: usize,
    /// In schema feature order.
    pub per_feature_stats: Vec<FeatureStats>,
    pub outcome_rate: f64,
    pub fallback_used: bool,
}

impl SubsetSummary {
    pub fn stats(&self, feature: &str) -> Option<&FeatureStats> {
        self.per_feature_stats.iter().find(|s| s.feature == feature)
    }
}

pub fn summarize_stats(ds: &Dataset) -> Result<SubsetSummary, IngestError> {
    if ds.is_empty() {
        return Err(IngestError::EmptyDataset);
    }
    let per_feature_stats = ds
        .schema
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col = ds.column(j);
            FeatureStats {
                feature: name.clone(),
                mean: mean(&col),
                median: median(&col),
                std: sample_std(&col),
                min: col.iter().cloned().fold(f64::INFINITY, f64::min),
                max: col.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    let positives = ds.outcomes.iter().filter(|&&y| y == 1).count();
    Ok(SubsetSummary {
        match_count: ds.len(),
        total_count: ds.len(),
        per_feature_stats,
        outcome_rate: positives as f64 / ds.len() as f64,
        fallback_used: false,
    })
}

/// Rows satisfying every constraint. When nothing matches, the full dataset
/// is returned and the summary describes it with `fallback_used = true`.
pub fn filter_subset(
    ds: &Dataset,
    constraints: &[FeatureConstraint],
) -> Result<(Dataset, SubsetSummary), IngestError> {
    let resolved: Vec<(usize, &FeatureConstraint)> = constraints
        .iter()
        .map(|c| c.validate(&ds.schema).map(|j| (j, c)))
        .collect::<Result<_, _>>()?;
    let positions: Vec<usize> = (0..ds.len())
        .filter(|&i| resolved.iter().all(|(j, c)| c.matches(ds.rows[i][*j])))
        .collect();
    if positions.is_empty() {
        let mut summary = summarize_stats(ds)?;
        summary.match_count = 0;
        summary.fallback_used = true;
        return Ok((ds.clone(), summary));
    }
    let subset = ds.select(&positions);
    let mut summary = summarize_stats(&subset)?;
    summary.total_count = ds.len();
    Ok((subset, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema2() -> DatasetSchema {
        let mut s = DatasetSchema::numeric(&["A", "Glucose"]);
        s.zero_means_missing = vec![true, false];
        s
    }

    #[test]
    fn imputes_zero_with_nonzero_median() {
        let ds = Dataset::new(
            schema2(),
            vec![vec![0.0, 1.0], vec![2.0, 0.0], vec![4.0, 1.0], vec![6.0, 1.0]],
            vec![0, 1, 0, 1],
        )
        .unwrap();
        let out = impute_medians(&ds).unwrap();
        assert_eq!(out.column(0), vec![4.0, 2.0, 4.0, 6.0]);
        // unflagged column keeps its zero
        assert_eq!(out.column(1), vec![1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn imputation_without_zeros_is_noop() {
        let ds = Dataset::new(
            schema2(),
            vec![vec![1.0, 1.0], vec![2.0, 1.0], vec![3.0, 1.0]],
            vec![0, 1, 0],
        )
        .unwrap();
        assert_eq!(impute_medians(&ds).unwrap(), ds);
    }

    #[test]
    fn all_zero_flagged_column_is_an_error() {
        let ds = Dataset::new(schema2(), vec![vec![0.0, 1.0], vec![0.0, 2.0]], vec![0, 1]).unwrap();
        assert_eq!(
            impute_medians(&ds),
            Err(IngestError::AllMissingColumn("A".into()))
        );
    }

    #[test]
    fn header_only_file_is_empty() {
        let s = DatasetSchema::numeric(&["A"]);
        assert_eq!(parse_csv("A,Outcome\n", &s), Err(IngestError::EmptyFile));
        assert_eq!(parse_csv("", &s), Err(IngestError::EmptyFile));
    }

    #[test]
    fn bad_cell_reports_row_and_column() {
        let s = DatasetSchema::numeric(&["Age", "Glucose"]);
        let text = "Age,Glucose,Outcome\n30,100,0\n40,high,1\n50,120,0\n";
        assert_eq!(
            parse_csv(text, &s),
            Err(IngestError::UnparseableCells(vec![CellError {
                row: 2,
                column: "Glucose".into()
            }]))
        );
    }

    #[test]
    fn missing_column_is_reported() {
        let s = DatasetSchema::numeric(&["Age", "Glucose"]);
        assert_eq!(
            parse_csv("Age,Outcome\n1,0\n", &s),
            Err(IngestError::MissingColumn("Glucose".into()))
        );
    }

    #[test]
    fn header_accepts_aliases_in_any_order() {
        let mut s = DatasetSchema::numeric(&["DiabetesPedigreeFunction", "Age"]);
        s.feature_aliases
            .insert("DPF".into(), "DiabetesPedigreeFunction".into());
        let ds = parse_csv("Outcome,age,dpf\n1,30,0.5\n", &s).unwrap();
        assert_eq!(ds.rows, vec![vec![0.5, 30.0]]);
        assert_eq!(ds.outcomes, vec![1]);
    }

    #[test]
    fn schema_rejects_dangling_alias_and_outcome_clash() {
        let mut s = DatasetSchema::numeric(&["A"]);
        s.feature_aliases.insert("x".into(), "Nope".into());
        assert!(s.validate().is_err());
        let mut s = DatasetSchema::numeric(&["A"]);
        s.outcome_name = "A".into();
        assert!(s.validate().is_err());
    }

    #[test]
    fn single_row_stats() {
        let ds = Dataset::new(DatasetSchema::numeric(&["A"]), vec![vec![7.5]], vec![1]).unwrap();
        let s = summarize_stats(&ds).unwrap();
        let a = &s.per_feature_stats[0];
        assert_eq!((a.mean, a.median, a.min, a.max, a.std), (7.5, 7.5, 7.5, 7.5, 0.0));
        assert_eq!(s.outcome_rate, 1.0);
    }

    #[test]
    fn two_row_sample_std() {
        let ds = Dataset::new(
            DatasetSchema::numeric(&["A"]),
            vec![vec![1.0], vec![3.0]],
            vec![0, 1],
        )
        .unwrap();
        let a = summarize_stats(&ds).unwrap().per_feature_stats[0].clone();
        assert_eq!(a.mean, 2.0);
        // sample std of {1, 3}: sqrt(((1-2)^2 + (3-2)^2) / 1) = sqrt(2)
        assert!((a.std - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_stats_error() {
        let ds = Dataset::new(DatasetSchema::numeric(&["A"]), vec![], vec![]).unwrap();
        assert_eq!(summarize_stats(&ds), Err(IngestError::EmptyDataset));
    }

    #[test]
    fn even_median_averages_central_pair() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn split_one_class_is_rejected() {
        let ds = Dataset::new(
            DatasetSchema::numeric(&["A"]),
            (0..10).map(|i| vec![i as f64]).collect(),
            vec![0; 10],
        )
        .unwrap();
        assert_eq!(split(&ds, 0.2, 1), Err(IngestError::ClassTooSmall("1".into())));
        assert_eq!(split(&ds, 1.0, 1), Err(IngestError::InvalidFraction(1.0)));
    }

    #[test]
    fn filter_unknown_feature() {
        let ds = Dataset::new(DatasetSchema::numeric(&["A"]), vec![vec![1.0]], vec![0]).unwrap();
        assert_eq!(
            filter_subset(&ds, &[FeatureConstraint::eq("B", 1.0)]).unwrap_err(),
            IngestError::UnknownFeature("B".into())
        );
    }

    #[test]
    fn eq_tolerance_and_range() {
        let ds = Dataset::new(
            DatasetSchema::numeric(&["A"]),
            vec![vec![1.0], vec![1.4], vec![2.0], vec![3.0]],
            vec![0, 1, 0, 1],
        )
        .unwrap();
        let (sub, s) = filter_subset(&ds, &[FeatureConstraint::eq("A", 1.2).with_tolerance(0.25)]).unwrap();
        assert_eq!(sub.row_ids, vec![0, 1]);
        assert_eq!((s.match_count, s.total_count, s.fallback_used), (2, 4, false));
        let (sub, _) = filter_subset(&ds, &[FeatureConstraint::range("A", 1.4, 2.0)]).unwrap();
        assert_eq!(sub.row_ids, vec![1, 2]);
    }
}
