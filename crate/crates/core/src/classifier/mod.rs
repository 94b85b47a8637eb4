//! Challenge-program classifiers: bag-of-words Naive Bayes and a softmax
//! head over 768-dimensional text embeddings, with evaluation metrics and
//! the train/validation/test split.

mod features;
mod linear;
mod metrics;
mod naive_bayes;

use std::path::Path;

use thiserror::Error;

use crate::label::ProgramLabel;

pub use features::{render_features, tokenize, FeatureText, FEATURE_ATTRIBUTES};
pub use linear::{softmax, train_linear_head, Gradient, HeadConfig, HeadLabeler, LinearHead, EMBEDDING_DIM};
pub use metrics::{evaluate, make_split, EvalMetrics, LabelMetrics, SplitSpec};
pub use naive_bayes::{train_naive_bayes, train_on_publications, BowModel, DEFAULT_ALPHA};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("EMPTY_CORPUS: no training examples")]
    EmptyCorpus,
    #[error("INVALID_ALPHA: smoothing must be positive, got {0}")]
    InvalidAlpha(f64),
    #[error("DIMENSION_MISMATCH: expected {expected} dimensions, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("LENGTH_MISMATCH: {left} vs {right} items")]
    LengthMismatch { left: usize, right: usize },
    #[error("EMPTY: nothing to evaluate")]
    Empty,
    #[error("TOO_SMALL: {0} labelled items, need at least 13")]
    TooSmall(usize),
    #[error("MODEL_FORMAT: line {line}: {message}")]
    ModelFormat { line: usize, message: String },
    #[error("IO_ERROR: {0}")]
    Io(#[from] std::io::Error),
}

impl ClassifierError {
    pub fn code(&self) -> &'static str {
        match self {
            ClassifierError::EmptyCorpus => "EMPTY_CORPUS",
            ClassifierError::InvalidAlpha(_) => "INVALID_ALPHA",
            ClassifierError::DimensionMismatch { .. } => "DIMENSION_MISMATCH",
            ClassifierError::LengthMismatch { .. } => "LENGTH_MISMATCH",
            ClassifierError::Empty => "EMPTY",
            ClassifierError::TooSmall(_) => "TOO_SMALL",
            ClassifierError::ModelFormat { .. } => "MODEL_FORMAT",
            ClassifierError::Io(_) => "IO_ERROR",
        }
    }
}

/// A persisted model of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    NaiveBayes(BowModel),
    LinearHead(LinearHead),
}

impl TrainedModel {
    pub fn from_text(text: &str) -> Result<Self, ClassifierError> {
        match text.lines().next().map(str::trim_end) {
            Some(naive_bayes::HEADER) => BowModel::from_text(text).map(Self::NaiveBayes),
            Some(linear::HEADER) => LinearHead::from_text(text).map(Self::LinearHead),
            _ => Err(ClassifierError::ModelFormat {
                line: 1,
                message: "unrecognized model header".into(),
            }),
        }
    }

    pub fn to_text(&self) -> String {
        match self {
            TrainedModel::NaiveBayes(m) => m.to_text(),
            TrainedModel::LinearHead(h) => h.to_text(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClassifierError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Writes to a sibling temp file, then renames over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_text())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// First index of the maximum; NaN never wins.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] || values[best].is_nan() {
            best = i;
        }
    }
    best
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn parse_floats(text: &str, expected: usize) -> Result<Vec<f64>, String> {
    let values = text
        .split(' ')
        .map(|v| v.parse::<f64>().map_err(|_| format!("bad number {v:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != expected {
        return Err(format!("expected {expected} numbers, found {}", values.len()));
    }
    Ok(values)
}

/// Line cursor for the model text formats.
pub(crate) struct ModelReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> ModelReader<'a> {
    pub fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate(),
            line: 0,
        }
    }

    pub fn error(&self, message: impl Into<String>) -> ClassifierError {
        ClassifierError::ModelFormat {
            line: self.line,
            message: message.into(),
        }
    }

    pub fn next_line(&mut self) -> Result<&'a str, ClassifierError> {
        match self.lines.next() {
            Some((i, line)) => {
                self.line = i + 1;
                Ok(line.trim_end_matches('\r'))
            }
            None => {
                self.line += 1;
                Err(self.error("unexpected end of file"))
            }
        }
    }

    pub fn expect_line(&mut self, expected: &str) -> Result<(), ClassifierError> {
        let line = self.next_line()?;
        if line != expected {
            return Err(self.error(format!("expected {expected:?}")));
        }
        Ok(())
    }

    /// Value of a `key value` line.
    pub fn keyed(&mut self, key: &str) -> Result<&'a str, ClassifierError> {
        let line = self.next_line()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v),
            _ => Err(self.error(format!("expected {key:?} line"))),
        }
    }

    pub fn keyed_float(&mut self, key: &str) -> Result<f64, ClassifierError> {
        let v = self.keyed(key)?;
        v.parse().map_err(|_| self.error(format!("bad {key}")))
    }

    /// `labels 13` followed by the canonical label names.
    pub fn expect_labels(&mut self) -> Result<(), ClassifierError> {
        let n: usize = self.keyed("labels")?.parse().map_err(|_| self.error("bad label count"))?;
        if n != ProgramLabel::COUNT {
            return Err(self.error(format!("expected {} labels", ProgramLabel::COUNT)));
        }
        for label in ProgramLabel::ALL {
            let line = self.next_line()?;
            if line != label.as_str() {
                return Err(self.error(format!("expected label {:?}", label.as_str())));
            }
        }
        Ok(())
    }

    pub fn expect_end(&mut self) -> Result<(), ClassifierError> {
        for (i, line) in self.lines.by_ref() {
            if !line.trim().is_empty() {
                self.line = i + 1;
                return Err(self.error("trailing content"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_first_maximum() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), 0);
        assert_eq!(argmax(&[f64::NAN, 0.0]), 1);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn model_files_dispatch_on_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        let nb = train_naive_bayes(&[("fuel engine", ProgramLabel::MaterialsForCleanFuels)], 1.0).unwrap();
        TrainedModel::NaiveBayes(nb.clone()).save(&path).unwrap();
        assert_eq!(TrainedModel::load(&path).unwrap(), TrainedModel::NaiveBayes(nb));
        TrainedModel::LinearHead(LinearHead::zeros()).save(&path).unwrap();
        assert!(matches!(TrainedModel::load(&path).unwrap(), TrainedModel::LinearHead(_)));
        assert_eq!(TrainedModel::from_text("junk").unwrap_err().code(), "MODEL_FORMAT");
        assert_eq!(TrainedModel::load(dir.path().join("missing")).unwrap_err().code(), "IO_ERROR");
    }
}
