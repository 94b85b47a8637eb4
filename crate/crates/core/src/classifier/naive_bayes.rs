//! Multinomial Naive Bayes over bag-of-words counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::features::{render_features, tokenize, FeatureText};
use super::{argmax, log_sum_exp, parse_floats, ClassifierError, ModelReader};
use crate::label::ProgramLabel;
use crate::store::{Labeler, LabelerError, Publication};

pub const DEFAULT_ALPHA: f64 = 1.0;
pub(crate) const HEADER: &str = "pubbie-naive-bayes v1";

const K: usize = ProgramLabel::COUNT;

#[derive(Debug, Clone, PartialEq)]
pub struct BowModel {
    vocabulary: BTreeMap<String, usize>,
    class_log_prior: [f64; K],
    /// Indexed `[label][token]`.
    token_log_likelihood: Vec<Vec<f64>>,
    smoothing_alpha: f64,
}

pub fn train_naive_bayes<T: AsRef<str>>(
    corpus: &[(T, ProgramLabel)],
    alpha: f64,
) -> Result<BowModel, ClassifierError> {
    if corpus.is_empty() {
        return Err(ClassifierError::EmptyCorpus);
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(ClassifierError::InvalidAlpha(alpha));
    }

    let documents: Vec<(BTreeMap<String, u32>, ProgramLabel)> = corpus
        .iter()
        .map(|(text, label)| (tokenize(text.as_ref()), *label))
        .collect();
    let mut vocabulary = BTreeMap::new();
    for (counts, _) in &documents {
        for token in counts.keys() {
            let next = vocabulary.len();
            vocabulary.entry(token.clone()).or_insert(next);
        }
    }

    let v = vocabulary.len();
    let mut doc_counts = [0usize; K];
    let mut token_counts = vec![vec![0.0f64; v]; K];
    for (counts, label) in &documents {
        let c = label.index();
        doc_counts[c] += 1;
        for (token, n) in counts {
            token_counts[c][vocabulary[token]] += f64::from(*n);
        }
    }

    let n_docs = corpus.len() as f64;
    let mut class_log_prior = [f64::NEG_INFINITY; K];
    for (c, &count) in doc_counts.iter().enumerate() {
        if count > 0 {
            class_log_prior[c] = (count as f64 / n_docs).ln();
        }
    }
    let token_log_likelihood = token_counts
        .iter()
        .map(|row| {
            let total: f64 = row.iter().sum::<f64>() + alpha * v as f64;
            row.iter().map(|n| ((n + alpha) / total).ln()).collect()
        })
        .collect();

    Ok(BowModel {
        vocabulary,
        class_log_prior,
        token_log_likelihood,
        smoothing_alpha: alpha,
    })
}

impl BowModel {
    pub fn vocabulary(&self) -> &BTreeMap<String, usize> {
        &self.vocabulary
    }

    pub fn class_log_prior(&self) -> &[f64; K] {
        &self.class_log_prior
    }

    pub fn token_log_likelihood(&self, label: ProgramLabel) -> &[f64] {
        &self.token_log_likelihood[label.index()]
    }

    pub fn smoothing_alpha(&self) -> f64 {
        self.smoothing_alpha
    }

    /// Predicted label and the normalized log-posterior of every label.
    /// Out-of-vocabulary tokens are ignored.
    pub fn predict(&self, text: &str) -> (ProgramLabel, [f64; K]) {
        let counts = tokenize(text);
        let mut scores = self.class_log_prior;
        for (token, n) in &counts {
            let Some(&t) = self.vocabulary.get(token) else {
                continue;
            };
            for (c, score) in scores.iter_mut().enumerate() {
                *score += f64::from(*n) * self.token_log_likelihood[c][t];
            }
        }
        let label = ProgramLabel::from_index(argmax(&scores)).expect("index in range");
        let norm = log_sum_exp(&scores);
        (label, scores.map(|s| s - norm))
    }

    /// Text serialization: header, alpha, the label list, priors, then one
    /// `token<TAB>13 log-likelihoods` line per vocabulary entry.
    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER}\nalpha {}\nlabels {K}\n", self.smoothing_alpha);
        for label in ProgramLabel::ALL {
            let _ = writeln!(out, "{label}");
        }
        let _ = writeln!(out, "priors {}", join(&self.class_log_prior));
        let _ = writeln!(out, "vocabulary {}", self.vocabulary.len());
        let mut by_index: Vec<(&String, &usize)> = self.vocabulary.iter().collect();
        by_index.sort_by_key(|(_, i)| **i);
        for (token, &t) in by_index {
            let column: Vec<f64> = (0..K).map(|c| self.token_log_likelihood[c][t]).collect();
            let _ = writeln!(out, "{token}\t{}", join(&column));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ClassifierError> {
        let mut r = ModelReader::new(text);
        r.expect_line(HEADER)?;
        let smoothing_alpha = r.keyed_float("alpha")?;
        r.expect_labels()?;
        let priors = parse_floats(r.keyed("priors")?, K).map_err(|m| r.error(m))?;
        let v: usize = r.keyed("vocabulary")?.parse().map_err(|_| r.error("bad vocabulary size"))?;

        let mut vocabulary = BTreeMap::new();
        let mut token_log_likelihood: Vec<Vec<f64>> = (0..K).map(|_| Vec::with_capacity(v)).collect();
        for t in 0..v {
            let line = r.next_line()?;
            let (token, values) = line.split_once('\t').ok_or_else(|| r.error("expected token<TAB>values"))?;
            let values = parse_floats(values, K).map_err(|m| r.error(m))?;
            if vocabulary.insert(token.to_string(), t).is_some() {
                return Err(r.error("duplicate token"));
            }
            for (c, value) in values.into_iter().enumerate() {
                token_log_likelihood[c].push(value);
            }
        }
        r.expect_end()?;
        Ok(Self {
            vocabulary,
            class_log_prior: priors.try_into().expect("length checked"),
            token_log_likelihood,
            smoothing_alpha,
        })
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

impl Labeler for BowModel {
    fn label(&self, publication: &Publication) -> Result<ProgramLabel, LabelerError> {
        Ok(self.predict(render_features(publication).as_str()).0)
    }
}

/// Trains on the rendered features of labelled publications.
pub fn train_on_publications(
    publications: &[(Publication, ProgramLabel)],
    alpha: f64,
) -> Result<BowModel, ClassifierError> {
    let corpus: Vec<(FeatureText, ProgramLabel)> = publications
        .iter()
        .map(|(p, label)| (render_features(p), *label))
        .collect();
    train_naive_bayes(&corpus, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ProgramLabel::*;

    fn tiny() -> BowModel {
        train_naive_bayes(
            &[
                ("methane fuel engine", MaterialsForCleanFuels),
                ("fuel catalyst", MaterialsForCleanFuels),
                ("qubit sensor", QuantumSensors),
                ("sensor magnetometer sensor", QuantumSensors),
            ],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_inputs() {
        let empty: [(&str, ProgramLabel); 0] = [];
        assert_eq!(train_naive_bayes(&empty, 1.0).unwrap_err().code(), "EMPTY_CORPUS");
        assert_eq!(train_naive_bayes(&[("x y", NoProgram)], 0.0).unwrap_err().code(), "INVALID_ALPHA");
        assert_eq!(train_naive_bayes(&[("xy", NoProgram)], f64::NAN).unwrap_err().code(), "INVALID_ALPHA");
    }

    #[test]
    fn distributions_are_normalized() {
        let model = tiny();
        let prior_mass: f64 = model.class_log_prior().iter().map(|p| p.exp()).sum();
        assert!((prior_mass - 1.0).abs() < 1e-9);
        for label in ProgramLabel::ALL {
            let mass: f64 = model.token_log_likelihood(label).iter().map(|p| p.exp()).sum();
            assert!((mass - 1.0).abs() < 1e-9, "{label}");
        }
    }

    #[test]
    fn hand_computed_posterior() {
        // Vocabulary: catalyst engine fuel magnetometer methane qubit sensor (7).
        // Fuels: 5 tokens, fuel x2. Sensors: 5 tokens, sensor x3.
        let model = tiny();
        let (label, post) = model.predict("fuel sensor sensor");
        let fuels = 0.5f64.ln() + (3.0f64 / 12.0).ln() + 2.0 * (1.0f64 / 12.0).ln();
        let sensors = 0.5f64.ln() + (1.0f64 / 12.0).ln() + 2.0 * (4.0f64 / 12.0).ln();
        let norm = (fuels.exp() + sensors.exp()).ln();
        assert_eq!(label, QuantumSensors);
        assert!((post[QuantumSensors.index()] - (sensors - norm)).abs() < 1e-12);
        assert!((post[MaterialsForCleanFuels.index()] - (fuels - norm)).abs() < 1e-12);
        assert_eq!(post[NoProgram.index()], f64::NEG_INFINITY);
    }

    #[test]
    fn oov_text_falls_back_to_prior_and_ties_use_canonical_order() {
        let model = tiny();
        // Equal priors: the earlier label in canonical order wins.
        assert_eq!(model.predict("zebra unicorn").0, QuantumSensors);
        let skewed = train_naive_bayes(&[("aa", PandemicResponse), ("bb", PandemicResponse), ("cc", AgingInPlace)], 1.0).unwrap();
        assert_eq!(skewed.predict("").0, PandemicResponse);
    }

    #[test]
    fn separable_documents_classify_as_their_own_label() {
        let model = train_naive_bayes(&[("alpha beta", AiForDesign), ("gamma delta", AiForLogistics)], 1.0).unwrap();
        assert_eq!(model.predict("alpha beta").0, AiForDesign);
        assert_eq!(model.predict("gamma delta").0, AiForLogistics);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let model = tiny();
        let back = BowModel::from_text(&model.to_text()).unwrap();
        assert_eq!(back, model);
        let broken = model.to_text().replacen("priors", "prior", 1);
        assert_eq!(BowModel::from_text(&broken).unwrap_err().code(), "MODEL_FORMAT");
    }
}
