use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClassifierError;
use crate::label::ProgramLabel;

const K: usize = ProgramLabel::COUNT;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Indexed by canonical label order.
    pub per_label: Vec<LabelMetrics>,
    /// `confusion[gold][predicted]`.
    pub confusion: [[usize; K]; K],
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy plus per-label and macro-averaged precision, recall and F1.
/// Macro averages run over the labels that occur in `gold`.
pub fn evaluate(predictions: &[ProgramLabel], gold: &[ProgramLabel]) -> Result<EvalMetrics, ClassifierError> {
    if predictions.len() != gold.len() {
        return Err(ClassifierError::LengthMismatch {
            left: predictions.len(),
            right: gold.len(),
        });
    }
    if gold.is_empty() {
        return Err(ClassifierError::Empty);
    }
    let mut confusion = [[0usize; K]; K];
    for (p, g) in predictions.iter().zip(gold) {
        confusion[g.index()][p.index()] += 1;
    }
    let trace: usize = (0..K).map(|c| confusion[c][c]).sum();

    let mut per_label = Vec::with_capacity(K);
    for c in 0..K {
        let tp = confusion[c][c];
        let predicted: usize = (0..K).map(|g| confusion[g][c]).sum();
        let support: usize = confusion[c].iter().sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_label.push(LabelMetrics {
            precision,
            recall,
            f1,
            support,
        });
    }

    let present: Vec<&LabelMetrics> = per_label.iter().filter(|m| m.support > 0).collect();
    let mean = |f: fn(&LabelMetrics) -> f64| present.iter().map(|m| f(m)).sum::<f64>() / present.len() as f64;
    Ok(EvalMetrics {
        accuracy: ratio(trace, gold.len()),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_label,
        confusion,
    })
}

impl EvalMetrics {
    pub fn label(&self, label: ProgramLabel) -> &LabelMetrics {
        &self.per_label[label.index()]
    }

    /// Accuracy / precision / recall / F1 summary followed by a per-label
    /// table for labels with support.
    pub fn report(&self) -> String {
        let mut out = format!(
            "accuracy {:.2}  macro precision {:.2}  macro recall {:.2}  macro F1 {:.2}\n",
            self.accuracy, self.macro_precision, self.macro_recall, self.macro_f1
        );
        for label in ProgramLabel::ALL {
            let m = self.label(label);
            if m.support == 0 {
                continue;
            }
            out.push_str(&format!(
                "  {:<58} P {:.2}  R {:.2}  F1 {:.2}  n={}\n",
                label.as_str(),
                m.precision,
                m.recall,
                m.f1,
                m.support
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Seeded shuffle of `0..n_labeled` cut into train / validation / test with
/// validation and test each `round(n / 10)`.
pub fn make_split(n_labeled: usize, seed: u64) -> Result<SplitSpec, ClassifierError> {
    if n_labeled < K {
        return Err(ClassifierError::TooSmall(n_labeled));
    }
    let held_out = (n_labeled as f64 / 10.0).round() as usize;
    let mut order: Vec<usize> = (0..n_labeled).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order.split_off(n_labeled - held_out);
    let val = order.split_off(order.len() - held_out);
    Ok(SplitSpec {
        train: order,
        val,
        test,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ProgramLabel::*;

    #[test]
    fn perfect_predictions() {
        let gold = [AgingInPlace, NoProgram, NoProgram];
        let m = evaluate(&gold, &gold).unwrap();
        assert_eq!((m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn single_predicted_class() {
        let gold = [AiForDesign, AiForDesign, AiForLogistics];
        let pred = [AiForDesign; 3];
        let m = evaluate(&pred, &gold).unwrap();
        assert_eq!(m.label(AiForDesign).recall, 1.0);
        assert_eq!(m.label(AiForLogistics).recall, 0.0);
        assert_eq!(m.label(AiForLogistics).precision, 0.0);
        assert_eq!(m.label(AiForLogistics).f1, 0.0);
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn input_errors() {
        assert_eq!(evaluate(&[NoProgram], &[]).unwrap_err().code(), "LENGTH_MISMATCH");
        assert_eq!(evaluate(&[], &[]).unwrap_err().code(), "EMPTY");
        assert_eq!(make_split(12, 0).unwrap_err().code(), "TOO_SMALL");
    }

    #[test]
    fn split_sizes_and_determinism() {
        assert_eq!(make_split(656, 7).unwrap().sizes(), (524, 66, 66));
        assert_eq!(make_split(100, 7).unwrap().sizes(), (80, 10, 10));
        assert_eq!(make_split(13, 7).unwrap().sizes(), (11, 1, 1));
        assert_eq!(make_split(656, 1).unwrap(), make_split(656, 1).unwrap());
        assert_ne!(make_split(656, 1).unwrap(), make_split(656, 2).unwrap());
        let s = make_split(57, 3).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..57).collect::<Vec<_>>());
    }
}
