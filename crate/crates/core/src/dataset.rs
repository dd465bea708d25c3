//! Classification datasets: CSV ingestion, the XOR3 generator, fold plans
//! and the per-feature index of candidate split values.
//!
//! Cells live in one row-major `f64` matrix. Continuous cells hold their
//! value, nominal cells hold a dense category id, and cells carrying the
//! sentinel marker are stored as `NaN`. `NaN` never satisfies a threshold or
//! category predicate, so flagged cells always route right.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::seed::{self, Stream};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: unknown category {value:?} in column {column:?}")]
    UnknownCategory {
        line: usize,
        column: String,
        value: String,
    },
    #[error("label column {0:?} must be categorical")]
    LabelNotCategorical(String),
    #[error("schema line {line}: {reason}")]
    Schema { line: usize, reason: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("feature {0:?} has no usable values")]
    EmptyFeature(String),
    #[error("fold count {k} out of range for {n} points (need 2 <= k <= n)")]
    FoldCount { k: usize, n: usize },
    #[error("XOR3 needs at least 4 points, got {0}")]
    TooFewPoints(usize),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Continuous,
    /// Categorical with the given number of categories.
    Nominal(usize),
}

impl FeatureKind {
    pub fn is_nominal(self) -> bool {
        matches!(self, FeatureKind::Nominal(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    /// Category labels in id order; empty for continuous features.
    pub categories: Vec<String>,
}

impl Feature {
    pub fn continuous(name: impl Into<String>) -> Self {
        Feature {
            name: name.into(),
            kind: FeatureKind::Continuous,
            categories: Vec::new(),
        }
    }

    pub fn nominal(name: impl Into<String>, categories: Vec<String>) -> Self {
        Feature {
            name: name.into(),
            kind: FeatureKind::Nominal(categories.len()),
            categories,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<Feature>,
    values: Vec<f64>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    sentinel: Option<f64>,
}

impl Dataset {
    /// Builds a dataset from row-major `values` (`labels.len()` rows) and
    /// 0-based class ids into `class_names`.
    pub fn new(
        features: Vec<Feature>,
        values: Vec<f64>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        sentinel: Option<f64>,
    ) -> Result<Self> {
        let n = labels.len();
        let m = features.len();
        if n < 2 {
            return Err(DatasetError::Invalid(format!("need at least 2 rows, got {n}")));
        }
        if m < 1 {
            return Err(DatasetError::Invalid("need at least one feature".into()));
        }
        if class_names.len() < 2 {
            return Err(DatasetError::Invalid(format!(
                "need at least 2 classes, got {}",
                class_names.len()
            )));
        }
        if values.len() != n * m {
            return Err(DatasetError::Invalid(format!(
                "value matrix has {} cells, expected {n}x{m}",
                values.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= class_names.len()) {
            return Err(DatasetError::Invalid(format!("label id {bad} out of range")));
        }
        for (j, f) in features.iter().enumerate() {
            match f.kind {
                FeatureKind::Nominal(count) => {
                    if count < 2 {
                        return Err(DatasetError::Invalid(format!(
                            "nominal feature {:?} needs at least 2 categories",
                            f.name
                        )));
                    }
                    for i in 0..n {
                        let v = values[i * m + j];
                        if !v.is_nan() && (v < 0.0 || v.fract() != 0.0 || v as usize >= count) {
                            return Err(DatasetError::Invalid(format!(
                                "row {i}: category id {v} outside feature {:?}",
                                f.name
                            )));
                        }
                    }
                }
                FeatureKind::Continuous => {
                    if let Some(i) = (0..n).find(|&i| values[i * m + j].is_infinite()) {
                        return Err(DatasetError::Invalid(format!(
                            "row {i}: non-finite value in feature {:?}",
                            f.name
                        )));
                    }
                }
            }
        }
        Ok(Dataset {
            features,
            values,
            labels,
            class_names,
            sentinel,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn m(&self) -> usize {
        self.features.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn kinds(&self) -> Vec<FeatureKind> {
        self.features.iter().map(|f| f.kind).collect()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn sentinel(&self) -> Option<f64> {
        self.sentinel
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.m();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m() + j]
    }

    /// 0-based class id of row `i`.
    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn is_flagged(&self, i: usize, j: usize) -> bool {
        self.value(i, j).is_nan()
    }

    pub fn flagged_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    /// Fraction of rows with class id `class`.
    pub fn class_proportion(&self, class: usize) -> f64 {
        self.labels.iter().filter(|&&c| c == class).count() as f64 / self.n() as f64
    }

    /// Rows `indices` in the given order, sharing this dataset's schema.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(indices.len() * self.m());
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Dataset {
            features: self.features.clone(),
            values,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            sentinel: self.sentinel,
        }
    }

    /// Writes the rows as CSV, label last, using category and class names.
    /// Flagged cells are written back as the sentinel value.
    pub fn write_csv<W: Write>(&self, out: W, header: bool) -> Result<()> {
        let mut w = csv::WriterBuilder::new().from_writer(out);
        if header {
            let mut names: Vec<&str> = self.features.iter().map(|f| f.name.as_str()).collect();
            names.push("class");
            w.write_record(&names)?;
        }
        let mut record = Vec::with_capacity(self.m() + 1);
        for i in 0..self.n() {
            record.clear();
            for (j, f) in self.features.iter().enumerate() {
                let v = self.value(i, j);
                let cell = if v.is_nan() {
                    format_value(self.sentinel.unwrap_or(f64::NAN))
                } else {
                    match f.kind {
                        FeatureKind::Continuous => format_value(v),
                        FeatureKind::Nominal(_) => f.categories[v as usize].clone(),
                    }
                };
                record.push(cell);
            }
            record.push(self.class_names[self.labels[i]].clone());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Row/column counts plus a SHA-256 of the headerless CSV rendering.
    pub fn fingerprint(&self) -> Fingerprint {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, false)
            .expect("writing to a Vec cannot fail");
        let digest = Sha256::digest(&buf);
        let mut sha256 = String::with_capacity(64);
        for b in digest.iter() {
            let _ = write!(sha256, "{b:02x}");
        }
        Fingerprint {
            rows: self.n(),
            columns: self.m(),
            sha256,
        }
    }
}

fn format_value(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub rows: usize,
    pub columns: usize,
    pub sha256: String,
}

// ---------------------------------------------------------------------------
// Schema sidecar

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Continuous,
    Nominal,
    Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Closed category set, when declared.
    pub categories: Option<Vec<String>>,
}

/// Column declarations, one per CSV column, the label column last.
///
/// Text form is one line per column: `name,kind[,cat1|cat2|...]` where kind
/// is `continuous`, `nominal` or `label`. Blank lines and lines starting with
/// `#` are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn parse(text: &str) -> Result<Schema> {
        let mut columns = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| DatasetError::Schema {
                line: idx + 1,
                reason,
            };
            let mut parts = line.splitn(3, ',').map(str::trim);
            let name = parts.next().unwrap_or_default();
            if name.is_empty() {
                return Err(err("missing column name".into()));
            }
            let kind = match parts.next() {
                Some("continuous") => ColumnKind::Continuous,
                Some("nominal") => ColumnKind::Nominal,
                Some("label") => ColumnKind::Label,
                Some(other) => return Err(err(format!("unknown kind {other:?}"))),
                None => return Err(err("missing kind".into())),
            };
            let categories = match parts.next() {
                Some(list) if !list.is_empty() => {
                    if kind == ColumnKind::Continuous {
                        return Err(err("continuous column cannot list categories".into()));
                    }
                    let cats: Vec<String> = list.split('|').map(|c| c.trim().to_string()).collect();
                    let mut seen = std::collections::HashSet::new();
                    if let Some(dup) = cats.iter().find(|c| !seen.insert(c.as_str())) {
                        return Err(err(format!("duplicate category {dup:?}")));
                    }
                    Some(cats)
                }
                _ => None,
            };
            columns.push(ColumnSpec {
                name: name.to_string(),
                kind,
                categories,
            });
        }
        if columns.len() < 2 {
            return Err(DatasetError::Schema {
                line: 0,
                reason: "need at least one feature column and a label column".into(),
            });
        }
        if let Some(c) = columns[..columns.len() - 1]
            .iter()
            .find(|c| c.kind == ColumnKind::Label)
        {
            return Err(DatasetError::Schema {
                line: 0,
                reason: format!("only the last column may be the label, found {:?}", c.name),
            });
        }
        let label = columns.last().expect("checked above");
        if label.kind == ColumnKind::Continuous {
            return Err(DatasetError::LabelNotCategorical(label.name.clone()));
        }
        Ok(Schema { columns })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Schema> {
        Schema::parse(&std::fs::read_to_string(path)?)
    }

    /// The closed schema describing `d` exactly.
    pub fn of(d: &Dataset) -> Schema {
        let mut columns: Vec<ColumnSpec> = d
            .features
            .iter()
            .map(|f| ColumnSpec {
                name: f.name.clone(),
                kind: if f.kind.is_nominal() {
                    ColumnKind::Nominal
                } else {
                    ColumnKind::Continuous
                },
                categories: f.kind.is_nominal().then(|| f.categories.clone()),
            })
            .collect();
        columns.push(ColumnSpec {
            name: "class".into(),
            kind: ColumnKind::Label,
            categories: Some(d.class_names.clone()),
        });
        Schema { columns }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.columns {
            let kind = match c.kind {
                ColumnKind::Continuous => "continuous",
                ColumnKind::Nominal => "nominal",
                ColumnKind::Label => "label",
            };
            out.push_str(&c.name);
            out.push(',');
            out.push_str(kind);
            if let Some(cats) = &c.categories {
                out.push(',');
                out.push_str(&cats.join("|"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CsvOptions {
    pub has_header: bool,
    pub sentinel: Option<f64>,
}

/// Category dictionary for one nominal or label column.
struct Categories {
    names: Vec<String>,
    ids: HashMap<String, usize>,
    closed: bool,
}

impl Categories {
    fn new(declared: Option<&Vec<String>>) -> Self {
        let names = declared.cloned().unwrap_or_default();
        let ids = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Categories {
            names,
            ids,
            closed: declared.is_some(),
        }
    }

    fn id(&mut self, value: &str) -> Option<usize> {
        if let Some(&id) = self.ids.get(value) {
            return Some(id);
        }
        if self.closed {
            return None;
        }
        let id = self.names.len();
        self.names.push(value.to_string());
        self.ids.insert(value.to_string(), id);
        Some(id)
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema, opts: CsvOptions) -> Result<Dataset> {
    read_csv(std::fs::File::open(path)?, schema, opts)
}

/// Parses CSV rows against `schema`. Open category sets (and the label set
/// when undeclared) are numbered in order of first appearance.
pub fn read_csv<R: Read>(input: R, schema: &Schema, opts: CsvOptions) -> Result<Dataset> {
    let width = schema.columns.len();
    let m = width - 1;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut dicts: Vec<Option<Categories>> = schema.columns[..m]
        .iter()
        .map(|c| (c.kind == ColumnKind::Nominal).then(|| Categories::new(c.categories.as_ref())))
        .collect();
    let mut label_dict = Categories::new(schema.columns[m].categories.as_ref());
    let is_sentinel = |cell: &str| {
        opts.sentinel
            .is_some_and(|s| cell.parse::<f64>().is_ok_and(|v| v == s))
    };

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let line = row + 1 + usize::from(opts.has_header);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != width {
            return Err(DatasetError::MalformedRow {
                line,
                reason: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for (j, cell) in record.iter().take(m).enumerate() {
            let spec = &schema.columns[j];
            let value = if is_sentinel(cell) {
                f64::NAN
            } else if let Some(dict) = dicts[j].as_mut() {
                match dict.id(cell) {
                    Some(id) => id as f64,
                    None => {
                        return Err(DatasetError::UnknownCategory {
                            line,
                            column: spec.name.clone(),
                            value: cell.to_string(),
                        })
                    }
                }
            } else {
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => v,
                    _ => {
                        return Err(DatasetError::MalformedRow {
                            line,
                            reason: format!("column {:?}: {cell:?} is not a number", spec.name),
                        })
                    }
                }
            };
            values.push(value);
        }
        let label = &record[m];
        match label_dict.id(label) {
            Some(id) => labels.push(id),
            None => {
                return Err(DatasetError::UnknownCategory {
                    line,
                    column: schema.columns[m].name.clone(),
                    value: label.to_string(),
                })
            }
        }
    }

    let features = schema.columns[..m]
        .iter()
        .zip(dicts)
        .map(|(spec, dict)| match dict {
            Some(d) => Feature::nominal(spec.name.clone(), d.names),
            None => Feature::continuous(spec.name.clone()),
        })
        .collect();
    Dataset::new(features, values, labels, label_dict.names, opts.sentinel)
}

// ---------------------------------------------------------------------------
// XOR3

/// `x1, x2 ~ U(-0.5, 0.5)`, `x3 ~ N(0, 0.2)`; class 1 when `x1 * x2 > 0`,
/// class 2 otherwise (including the measure-zero case of a zero product).
pub fn gen_xor3(n: usize, seed: u64) -> Result<Dataset> {
    if n < 4 {
        return Err(DatasetError::TooFewPoints(n));
    }
    let mut rng = seed::rng(seed::derive(seed, Stream::Generator, 0));
    let uniform = Uniform::new(-0.5, 0.5).expect("valid bounds");
    let noise = Normal::new(0.0, 0.2).expect("valid sd");
    let mut values = Vec::with_capacity(3 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x1: f64 = uniform.sample(&mut rng);
        let x2: f64 = uniform.sample(&mut rng);
        let x3: f64 = noise.sample(&mut rng);
        values.extend_from_slice(&[x1, x2, x3]);
        labels.push(xor3_class(x1, x2));
    }
    let features = vec![
        Feature::continuous("x1"),
        Feature::continuous("x2"),
        Feature::continuous("x3"),
    ];
    Dataset::new(features, values, labels, vec!["1".into(), "2".into()], None)
}

/// 0-based class id of the XOR3 labelling rule.
pub fn xor3_class(x1: f64, x2: f64) -> usize {
    if x1 * x2 > 0.0 {
        0
    } else {
        1
    }
}

// ---------------------------------------------------------------------------
// Folds

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold_count: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Shuffles `0..n` and deals it into `k` folds whose sizes differ by at most
/// one (the first `n % k` folds get the extra point).
pub fn kfold_split(d: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    kfold_indices(d.n(), k, seed)
}

pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(DatasetError::FoldCount { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(seed::derive(seed, Stream::Folds, 0));
    order.shuffle(&mut rng);
    let base = n / k;
    let extra = n % k;
    let mut start = 0;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut test = order[start..start + size].to_vec();
        test.sort_unstable();
        let mut train: Vec<usize> = order[..start]
            .iter()
            .chain(&order[start + size..])
            .copied()
            .collect();
        train.sort_unstable();
        folds.push(Fold { train, test });
        start += size;
    }
    Ok(FoldPlan {
        fold_count: k,
        seed,
        folds,
    })
}

// ---------------------------------------------------------------------------
// Feature index

/// Distinct observed values of one feature, strictly increasing. For nominal
/// features these are the observed category ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureValues {
    pub kind: FeatureKind,
    pub values: Vec<f64>,
}

impl FeatureValues {
    pub fn distinct_count(&self) -> usize {
        self.values.len()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureIndex {
    features: Vec<FeatureValues>,
}

impl FeatureIndex {
    pub fn get(&self, j: usize) -> &FeatureValues {
        &self.features[j]
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeatureValues> {
        self.features.iter()
    }
}

/// Sentinel-flagged cells are skipped.
pub fn feature_index(d: &Dataset) -> Result<FeatureIndex> {
    let mut features = Vec::with_capacity(d.m());
    for (j, f) in d.features().iter().enumerate() {
        let mut values: Vec<f64> = (0..d.n())
            .map(|i| d.value(i, j))
            .filter(|v| !v.is_nan())
            .collect();
        if values.is_empty() {
            return Err(DatasetError::EmptyFeature(f.name.clone()));
        }
        values.sort_by(f64::total_cmp);
        values.dedup();
        features.push(FeatureValues {
            kind: f.kind,
            values,
        });
    }
    Ok(FeatureIndex { features })
}
