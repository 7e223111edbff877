//! Datasets, label encodings and CSV interchange.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Anything that assigns class weights to samples: crisp one-hot labels or
/// soft labelings on the simplex. Rows are samples, columns are classes.
pub trait Labeling {
    fn weights(&self) -> &DMatrix<f64>;

    fn n_samples(&self) -> usize {
        self.weights().nrows()
    }

    fn n_classes(&self) -> usize {
        self.weights().ncols()
    }
}

impl Labeling for DMatrix<f64> {
    fn weights(&self) -> &DMatrix<f64> {
        self
    }
}

/// Feature matrix with optional class labels in `1..=n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: DMatrix<f64>,
    pub labels: Option<Vec<usize>>,
    pub n_classes: usize,
    /// Original label token for each class index (`class_values[k - 1]`).
    pub class_values: Vec<String>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels.as_deref().ok_or(Error::Unlabeled)
    }

    pub fn one_hot(&self) -> Result<LabelMatrix> {
        one_hot(self.labels()?, self.n_classes)
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let features = self.features.select_rows(indices);
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Dataset {
            name: self.name.clone(),
            features,
            labels,
            n_classes: self.n_classes,
            class_values: self.class_values.clone(),
            feature_names: self.feature_names.clone(),
        }
    }
}

/// One-hot encoded crisp labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix(DMatrix<f64>);

impl LabelMatrix {
    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Recovers the `1..=K` label vector.
    pub fn labels(&self) -> Vec<usize> {
        row_argmax(&self.0).into_iter().map(|k| k + 1).collect()
    }
}

impl Labeling for LabelMatrix {
    fn weights(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub fn one_hot(labels: &[usize], n_classes: usize) -> Result<LabelMatrix> {
    let mut out = DMatrix::zeros(labels.len(), n_classes);
    for (i, &label) in labels.iter().enumerate() {
        if label == 0 || label > n_classes {
            return Err(Error::LabelOutOfRange {
                index: i,
                label,
                classes: n_classes,
            });
        }
        out[(i, label - 1)] = 1.0;
    }
    Ok(LabelMatrix(out))
}

/// Appends a constant column of ones.
pub fn augment_bias(features: &DMatrix<f64>) -> DMatrix<f64> {
    features.clone().insert_column(features.ncols(), 1.0)
}

/// Zero-based index of the largest entry in each row; ties go to the lower index.
pub fn row_argmax(m: &DMatrix<f64>) -> Vec<usize> {
    m.row_iter()
        .map(|row| {
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    /// Zero-based column index.
    Index(usize),
    Last,
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub has_header: bool,
    pub label_column: Option<LabelColumn>,
    pub missing_markers: BTreeSet<String>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            has_header: false,
            label_column: None,
            missing_markers: ["", "?", "NA"].iter().map(|s| s.to_string()).collect(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_csv(file, &name, opts)
}

pub fn read_csv<R: Read>(reader: R, name: &str, opts: &CsvOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);

    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        records.push((line, rec));
    }

    let header = if opts.has_header && !records.is_empty() {
        Some(records.remove(0).1)
    } else {
        None
    };
    let Some((_, first)) = records.first() else {
        return Err(Error::EmptyData);
    };
    let width = header.as_ref().map_or(first.len(), |h| h.len());

    for (line, rec) in &records {
        if rec.len() != width {
            return Err(Error::RaggedRow {
                line: *line,
                expected: width,
                found: rec.len(),
            });
        }
    }

    let label_idx = match &opts.label_column {
        None => None,
        Some(LabelColumn::Last) => Some(width - 1),
        Some(LabelColumn::Index(i)) => {
            if *i >= width {
                return Err(Error::MissingLabelColumn(i.to_string()));
            }
            Some(*i)
        }
        Some(LabelColumn::Name(col)) => {
            let pos = header
                .as_ref()
                .and_then(|h| h.iter().position(|c| c.trim() == col));
            Some(pos.ok_or_else(|| Error::MissingLabelColumn(col.clone()))?)
        }
    };

    let feature_cols: Vec<usize> = (0..width).filter(|&c| Some(c) != label_idx).collect();
    let feature_names = feature_cols
        .iter()
        .map(|&c| match &header {
            Some(h) => h[c].trim().to_string(),
            None => format!("x{}", c + 1),
        })
        .collect();

    let n = records.len();
    let d = feature_cols.len();
    let mut features = DMatrix::zeros(n, d);
    let mut raw_labels = Vec::with_capacity(n);
    for (i, (line, rec)) in records.iter().enumerate() {
        for (j, &c) in feature_cols.iter().enumerate() {
            let cell = rec[c].trim();
            if opts.missing_markers.contains(cell) {
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => features[(i, j)] = v,
                _ => {
                    return Err(Error::Parse {
                        line: *line,
                        column: c + 1,
                        value: cell.to_string(),
                    })
                }
            }
        }
        if let Some(l) = label_idx {
            raw_labels.push(rec[l].trim().to_string());
        }
    }

    let (labels, class_values) = if label_idx.is_some() {
        let (labels, values) = remap_labels(&raw_labels);
        (Some(labels), values)
    } else {
        (None, Vec::new())
    };

    Ok(Dataset {
        name: name.to_string(),
        features,
        n_classes: class_values.len(),
        labels,
        class_values,
        feature_names,
    })
}

/// Maps label tokens onto `1..=K` following their sorted order (numeric when
/// every token parses as a number, lexicographic otherwise).
fn remap_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut values: Vec<String> = raw
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let numeric: Option<Vec<f64>> = values.iter().map(|v| v.parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut pairs: Vec<(f64, String)> = nums.into_iter().zip(values).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        values = pairs.into_iter().map(|p| p.1).collect();
    }
    let labels = raw
        .iter()
        .map(|r| values.iter().position(|v| v == r).unwrap() + 1)
        .collect();
    (labels, values)
}

/// Writes features (and labels, as their original tokens) so that
/// [`read_csv`] with the label in the last column reproduces the dataset.
pub fn write_csv<W: Write>(data: &Dataset, mut out: W, header: bool) -> Result<()> {
    if header {
        let mut cols = data.feature_names.clone();
        if data.labels.is_some() {
            cols.push("class".into());
        }
        writeln!(out, "{}", cols.join(","))?;
    }
    for i in 0..data.n_samples() {
        let mut cells: Vec<String> = data.features.row(i).iter().map(|v| v.to_string()).collect();
        if let Some(labels) = &data.labels {
            cells.push(data.class_values[labels[i] - 1].clone());
        }
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Column-wise z-scoring. Constant columns are centred and left unscaled.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &DMatrix<f64>) -> Self {
        let n = features.nrows() as f64;
        let mut mean = Vec::with_capacity(features.ncols());
        let mut scale = Vec::with_capacity(features.ncols());
        for col in features.column_iter() {
            let mu = col.sum() / n;
            let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            mean.push(mu);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self { mean, scale }
    }

    pub fn apply(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = features.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.apply(|v| *v = (*v - self.mean[j]) / self.scale[j]);
        }
        out
    }
}
