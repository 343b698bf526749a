//! LIBSVM text format and deterministic cross-validation splits.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sparse feature vector: `(0-based index, value)` pairs, indices strictly increasing.
pub type SparsePoint<T> = Vec<(usize, T)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    points: Vec<SparsePoint<T>>,
    labels: Vec<i8>,
    n_features: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub n_points: usize,
    pub n_features: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    pub nnz: usize,
}

impl<T: Scalar> Dataset<T> {
    /// Validates and wraps already-parsed data.
    pub fn new(points: Vec<SparsePoint<T>>, labels: Vec<i8>, n_features: usize) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::Dimension {
                what: "labels",
                expected: points.len(),
                got: labels.len(),
            });
        }
        for (i, (p, &y)) in points.iter().zip(&labels).enumerate() {
            if y != 1 && y != -1 {
                return Err(Error::Label {
                    line: i + 1,
                    label: y.to_string(),
                });
            }
            for w in p.windows(2) {
                if w[1].0 <= w[0].0 {
                    return Err(Error::FeatureOrder {
                        line: i + 1,
                        prev: w[0].0 + 1,
                        next: w[1].0 + 1,
                    });
                }
            }
            if let Some(&(j, _)) = p.last() {
                if j >= n_features {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("feature index {} exceeds n_features {n_features}", j + 1),
                    });
                }
            }
        }
        Ok(Self {
            points,
            labels,
            n_features,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[SparsePoint<T>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[(usize, T)] {
        &self.points[i]
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> T {
        T::from_i8(self.labels[i]).unwrap()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Overrides the feature count; it may only grow past the largest index in use.
    pub fn with_n_features(mut self, n: usize) -> Result<Self> {
        let used = self.max_index_used();
        if n < used {
            return Err(Error::Config(format!(
                "n_features {n} is below the largest feature index {used}"
            )));
        }
        self.n_features = n;
        Ok(self)
    }

    fn max_index_used(&self) -> usize {
        self.points
            .iter()
            .filter_map(|p| p.last().map(|&(j, _)| j + 1))
            .max()
            .unwrap_or(0)
    }

    pub fn stats(&self) -> DatasetStats {
        let n_positive = self.labels.iter().filter(|&&y| y > 0).count();
        DatasetStats {
            n_points: self.len(),
            n_features: self.n_features,
            n_positive,
            n_negative: self.len() - n_positive,
            nnz: self.points.iter().map(Vec::len).sum(),
        }
    }

    /// Signed row `y_i x_i`.
    pub fn signed_row(&self, i: usize) -> SparsePoint<T> {
        let y = self.label(i);
        self.points[i].iter().map(|&(j, v)| (j, y * v)).collect()
    }

    /// Rescales every feature by its largest absolute value so entries lie in [-1, 1].
    pub fn scaled_max_abs(&self) -> Self {
        let mut maxabs = vec![T::zero(); self.n_features];
        for p in &self.points {
            for &(j, v) in p {
                maxabs[j] = maxabs[j].max(v.abs());
            }
        }
        let points = self
            .points
            .iter()
            .map(|p| {
                p.iter()
                    .map(|&(j, v)| if maxabs[j] > T::zero() { (j, v / maxabs[j]) } else { (j, v) })
                    .collect()
            })
            .collect();
        Self {
            points,
            labels: self.labels.clone(),
            n_features: self.n_features,
        }
    }

    /// LIBSVM text with 1-based indices and labels written as `+1`/`-1`.
    pub fn to_libsvm_string(&self) -> String {
        let mut out = String::new();
        for (p, &y) in self.points.iter().zip(&self.labels) {
            out.push_str(if y > 0 { "+1" } else { "-1" });
            for &(j, v) in p {
                let _ = write!(out, " {}:{}", j + 1, v);
            }
            out.push('\n');
        }
        out
    }
}

pub fn parse_libsvm<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_libsvm_str(&text)
}

/// Parses LIBSVM text. Labels must be `±1` or `{0, 1}` (0 maps to -1).
pub fn parse_libsvm_str<T: Scalar>(text: &str) -> Result<Dataset<T>> {
    let mut points = Vec::new();
    let mut raw_labels: Vec<(usize, i8)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let mut tokens = line.split_whitespace();
        let Some(label_tok) = tokens.next() else {
            continue;
        };
        let label = parse_label(label_tok).ok_or_else(|| Error::Label {
            line: line_no,
            label: label_tok.to_string(),
        })?;
        let mut point: SparsePoint<T> = Vec::new();
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("expected index:value, found {tok:?}"),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad feature index {idx:?}"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "feature indices are 1-based".into(),
                });
            }
            let val: f64 = val.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad feature value {val:?}"),
            })?;
            if let Some(&(prev, _)) = point.last() {
                if idx - 1 <= prev {
                    return Err(Error::FeatureOrder {
                        line: line_no,
                        prev: prev + 1,
                        next: idx,
                    });
                }
            }
            point.push((idx - 1, T::lit(val)));
        }
        points.push(point);
        raw_labels.push((line_no, label));
    }

    let has_zero = raw_labels.iter().any(|&(_, y)| y == 0);
    let has_neg = raw_labels.iter().any(|&(_, y)| y == -1);
    if has_zero && has_neg {
        return Err(Error::LabelSet(vec!["-1".into(), "0".into(), "+1".into()]));
    }
    let labels = raw_labels
        .into_iter()
        .map(|(_, y)| if y == 0 { -1 } else { y })
        .collect();
    let n_features = points
        .iter()
        .filter_map(|p: &SparsePoint<T>| p.last().map(|&(j, _)| j + 1))
        .max()
        .unwrap_or(0);
    Dataset::new(points, labels, n_features)
}

fn parse_label(tok: &str) -> Option<i8> {
    let v: f64 = tok.parse().ok()?;
    if v == 1.0 {
        Some(1)
    } else if v == -1.0 {
        Some(-1)
    } else if v == 0.0 {
        Some(0)
    } else {
        None
    }
}

/// Partition of a dataset into a cross-validation set split into equal folds
/// and a hold-out test set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitPlan {
    pub cv_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn n_folds(&self) -> usize {
        self.folds.len()
    }

    pub fn fold_size(&self) -> usize {
        self.folds.first().map_or(0, Vec::len)
    }

    /// Indices of the cross-validation set outside fold `t`, in cv order.
    pub fn training_indices(&self, t: usize) -> Vec<usize> {
        self.folds
            .iter()
            .enumerate()
            .filter(|&(s, _)| s != t)
            .flat_map(|(_, f)| f.iter().copied())
            .collect()
    }
}

/// Seeded Fisher–Yates shuffle; the first `p1` shuffled points form the
/// cross-validation set, cut into `n_folds` contiguous blocks.
pub fn make_split<T: Scalar>(ds: &Dataset<T>, p1: usize, n_folds: usize, seed: u64) -> Result<SplitPlan> {
    if n_folds == 0 {
        return Err(Error::Split("number of folds must be positive".into()));
    }
    if p1 > ds.len() {
        return Err(Error::Split(format!(
            "p1 = {p1} exceeds the dataset size {}",
            ds.len()
        )));
    }
    if p1 % n_folds != 0 {
        return Err(Error::Split(format!("{n_folds} folds do not divide p1 = {p1}")));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let test_indices = order.split_off(p1);
    let m1 = p1 / n_folds;
    let folds = order.chunks(m1.max(1)).map(<[usize]>::to_vec).collect::<Vec<_>>();
    let folds = if m1 == 0 { vec![Vec::new(); n_folds] } else { folds };
    Ok(SplitPlan {
        cv_indices: order,
        test_indices,
        folds,
        seed,
    })
}
