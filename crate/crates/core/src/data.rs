//! Datasets: synthetic Gaussian blobs and a plain CSV format.
//!
//! CSV rows are feature values followed by an integer class label. Lines
//! starting with `#` are comments and an optional header row is skipped. The
//! first 80% of rows (rounded down) form the training split.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{IstError, Result};
use crate::linalg::Matrix;
use crate::nn::Targets;
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    n_classes: usize,
    train: Vec<usize>,
    test: Vec<usize>,
}

/// Rows `0..split_point(n)` train, the rest test.
pub fn split_point(n: usize) -> usize {
    n * 4 / 5
}

impl Dataset {
    /// Positional 80/20 split.
    pub fn new(features: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(IstError::Dimension(format!(
                "{} feature rows, {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= n_classes) {
            return Err(IstError::Dimension(format!(
                "label {bad} with {n_classes} classes"
            )));
        }
        let total = labels.len();
        let cut = split_point(total);
        Ok(Self {
            features,
            labels,
            n_classes,
            train: (0..cut).collect(),
            test: (cut..total).collect(),
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// Features and class targets for the given rows.
    pub fn batch(&self, rows: &[usize]) -> (Matrix, Targets) {
        (
            self.features.select_rows(rows),
            Targets::Classes(rows.iter().map(|&r| self.labels[r]).collect()),
        )
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("# ist-dataset v1\n");
        let header: Vec<String> = (0..self.n_features()).map(|i| format!("x{i}")).collect();
        let _ = writeln!(out, "{},label", header.join(","));
        for r in 0..self.len() {
            for v in self.features.row(r) {
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(out, "{}", self.labels[r]);
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

/// Gaussian clusters: class centers are standard normal vectors, points are
/// `center + spread · N(0, I)`. Rows are shuffled before the 80/20 split.
pub fn gen_blobs(
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(IstError::Config("need at least two classes".into()));
    }
    if dim == 0 || per_class == 0 {
        return Err(IstError::Config("dim and per_class must be ≥ 1".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(IstError::Config(format!("spread {spread} must be ≥ 0")));
    }
    let mut center_rng = stream_rng(seed, "blob-centers", 0);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut center_rng)).collect())
        .collect();
    let mut point_rng = stream_rng(seed, "blob-points", 0);
    let total = classes * per_class;
    let mut rows = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let row: Vec<f64> = center
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut point_rng);
                    m + spread * z
                })
                .collect();
            rows.push(row);
            labels.push(c);
        }
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut stream_rng(seed, "blob-order", 0));
    let features: Vec<Vec<f64>> = order.iter().map(|&i| rows[i].clone()).collect();
    let labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
    Dataset::new(Matrix::from_rows(&features)?, labels, classes)
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    let mut seen_data_line = false;
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if !seen_data_line {
            seen_data_line = true;
            if cells.iter().all(|c| c.parse::<f64>().is_err()) {
                continue;
            }
        }
        if cells.len() < 2 {
            return Err(IstError::Parse {
                line: line_no,
                msg: "need at least one feature and a label".into(),
            });
        }
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(IstError::Parse {
                    line: line_no,
                    msg: format!("{} cells, expected {w}", cells.len()),
                })
            }
            _ => {}
        }
        let (feat, label) = cells.split_at(cells.len() - 1);
        let values = feat
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| IstError::Parse {
                        line: line_no,
                        msg: format!("`{c}` is not a finite number"),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let label = label[0].parse::<usize>().map_err(|_| IstError::Parse {
            line: line_no,
            msg: format!("`{}` is not a class label", label[0]),
        })?;
        rows.push(values);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(IstError::Empty("csv has no data rows".into()));
    }
    let n_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(Matrix::from_rows(&rows)?, labels, n_classes)
}
