//! Softmax classification head over fixed-width text embeddings.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::render_features;
use super::{argmax, parse_floats, ClassifierError, ModelReader};
use crate::label::ProgramLabel;
use crate::llm::EmbeddingProvider;
use crate::store::{Labeler, LabelerError, Publication};

pub const EMBEDDING_DIM: usize = 768;
pub(crate) const HEADER: &str = "pubbie-linear-head v1";

const K: usize = ProgramLabel::COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Initial weights are drawn uniformly from `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 300,
            seed: 42,
            init_scale: 0.01,
        }
    }
}

/// Gradient of the mean cross-entropy, shaped like the head.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: [f64; K],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    /// Row-major `K x EMBEDDING_DIM`.
    weights: Vec<f64>,
    bias: [f64; K],
    config: HeadConfig,
    final_loss: Option<f64>,
}

pub fn softmax(logits: &[f64; K]) -> [f64; K] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.map(|z| (z - max).exp());
    let sum: f64 = exps.iter().sum();
    exps.map(|e| e / sum)
}

fn check_dim(x: &[f64]) -> Result<(), ClassifierError> {
    if x.len() != EMBEDDING_DIM {
        return Err(ClassifierError::DimensionMismatch {
            expected: EMBEDDING_DIM,
            found: x.len(),
        });
    }
    Ok(())
}

impl LinearHead {
    pub fn zeros() -> Self {
        Self {
            weights: vec![0.0; K * EMBEDDING_DIM],
            bias: [0.0; K],
            config: HeadConfig::default(),
            final_loss: None,
        }
    }

    /// Seeded random initialization; bias starts at zero.
    pub fn init(config: HeadConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scale = config.init_scale;
        let weights = (0..K * EMBEDDING_DIM)
            .map(|_| if scale > 0.0 { rng.gen_range(-scale..=scale) } else { 0.0 })
            .collect();
        Self {
            weights,
            bias: [0.0; K],
            config,
            final_loss: None,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64; K] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64; K] {
        &mut self.bias
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    /// Mean training loss after the last epoch, if trained.
    pub fn final_loss(&self) -> Option<f64> {
        self.final_loss
    }

    pub fn logits(&self, x: &[f64]) -> Result<[f64; K], ClassifierError> {
        check_dim(x)?;
        let mut z = self.bias;
        for (c, zc) in z.iter_mut().enumerate() {
            let row = &self.weights[c * EMBEDDING_DIM..(c + 1) * EMBEDDING_DIM];
            *zc += row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
        Ok(z)
    }

    pub fn predict(&self, x: &[f64]) -> Result<(ProgramLabel, [f64; K]), ClassifierError> {
        let z = self.logits(x)?;
        let label = ProgramLabel::from_index(argmax(&z)).expect("index in range");
        Ok((label, softmax(&z)))
    }

    /// Mean cross-entropy over the batch and its analytic gradient.
    pub fn loss_and_gradient<X: AsRef<[f64]>>(
        &self,
        xs: &[X],
        ys: &[ProgramLabel],
    ) -> Result<(f64, Gradient), ClassifierError> {
        check_batch(xs, ys)?;
        let n = xs.len() as f64;
        let mut loss = 0.0;
        let mut grad = Gradient {
            weights: vec![0.0; K * EMBEDDING_DIM],
            bias: [0.0; K],
        };
        for (x, y) in xs.iter().zip(ys) {
            let x = x.as_ref();
            let p = softmax(&self.logits(x)?);
            loss -= p[y.index()].max(f64::MIN_POSITIVE).ln();
            for c in 0..K {
                let delta = (p[c] - if c == y.index() { 1.0 } else { 0.0 }) / n;
                grad.bias[c] += delta;
                let row = &mut grad.weights[c * EMBEDDING_DIM..(c + 1) * EMBEDDING_DIM];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += delta * xi;
                }
            }
        }
        Ok((loss / n, grad))
    }

    pub fn loss<X: AsRef<[f64]>>(&self, xs: &[X], ys: &[ProgramLabel]) -> Result<f64, ClassifierError> {
        check_batch(xs, ys)?;
        let mut loss = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            let z = self.logits(x.as_ref())?;
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - z[y.index()];
        }
        Ok(loss / xs.len() as f64)
    }

    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = format!("{HEADER}\ndim {EMBEDDING_DIM}\nlabels {K}\n");
        for label in ProgramLabel::ALL {
            let _ = writeln!(out, "{label}");
        }
        let _ = writeln!(
            out,
            "config {} {} {} {}",
            c.learning_rate, c.epochs, c.seed, c.init_scale
        );
        match self.final_loss {
            Some(loss) => {
                let _ = writeln!(out, "final_loss {loss}");
            }
            None => out.push_str("final_loss none\n"),
        }
        let _ = writeln!(out, "bias {}", join(&self.bias));
        for row in self.weights.chunks(EMBEDDING_DIM) {
            let _ = writeln!(out, "w {}", join(row));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ClassifierError> {
        let mut r = ModelReader::new(text);
        r.expect_line(HEADER)?;
        let dim: usize = r.keyed("dim")?.parse().map_err(|_| r.error("bad dim"))?;
        if dim != EMBEDDING_DIM {
            return Err(ClassifierError::DimensionMismatch {
                expected: EMBEDDING_DIM,
                found: dim,
            });
        }
        r.expect_labels()?;
        let fields: Vec<&str> = r.keyed("config")?.split(' ').collect();
        let config = match fields.as_slice() {
            [lr, epochs, seed, scale] => HeadConfig {
                learning_rate: lr.parse().map_err(|_| r.error("bad learning rate"))?,
                epochs: epochs.parse().map_err(|_| r.error("bad epochs"))?,
                seed: seed.parse().map_err(|_| r.error("bad seed"))?,
                init_scale: scale.parse().map_err(|_| r.error("bad init scale"))?,
            },
            _ => return Err(r.error("config needs 4 fields")),
        };
        let final_loss = match r.keyed("final_loss")? {
            "none" => None,
            v => Some(v.parse().map_err(|_| r.error("bad final loss"))?),
        };
        let bias = parse_floats(r.keyed("bias")?, K).map_err(|m| r.error(m))?;
        let mut weights = Vec::with_capacity(K * EMBEDDING_DIM);
        for _ in 0..K {
            let row = r.keyed("w")?;
            weights.extend(parse_floats(row, EMBEDDING_DIM).map_err(|m| r.error(m))?);
        }
        r.expect_end()?;
        Ok(Self {
            weights,
            bias: bias.try_into().expect("length checked"),
            config,
            final_loss,
        })
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

fn check_batch<X: AsRef<[f64]>>(xs: &[X], ys: &[ProgramLabel]) -> Result<(), ClassifierError> {
    if xs.is_empty() {
        return Err(ClassifierError::EmptyCorpus);
    }
    if xs.len() != ys.len() {
        return Err(ClassifierError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    xs.iter().try_for_each(|x| check_dim(x.as_ref()))
}

/// Full-batch gradient descent on mean cross-entropy from a seeded
/// initialization.
pub fn train_linear_head<X: AsRef<[f64]>>(
    embeddings: &[X],
    labels: &[ProgramLabel],
    config: HeadConfig,
) -> Result<LinearHead, ClassifierError> {
    check_batch(embeddings, labels)?;
    let mut head = LinearHead::init(config);
    for _ in 0..config.epochs {
        let (_, grad) = head.loss_and_gradient(embeddings, labels)?;
        for (w, g) in head.weights.iter_mut().zip(&grad.weights) {
            *w -= config.learning_rate * g;
        }
        for (b, g) in head.bias.iter_mut().zip(&grad.bias) {
            *b -= config.learning_rate * g;
        }
    }
    head.final_loss = Some(head.loss(embeddings, labels)?);
    tracing::debug!(epochs = config.epochs, loss = head.final_loss, "linear head trained");
    Ok(head)
}

/// Labels publications by embedding their feature text and applying a head.
pub struct HeadLabeler<E> {
    head: LinearHead,
    embedder: E,
}

impl<E: EmbeddingProvider> HeadLabeler<E> {
    pub fn new(head: LinearHead, embedder: E) -> Self {
        Self { head, embedder }
    }
}

impl<E: EmbeddingProvider> Labeler for HeadLabeler<E> {
    fn label(&self, publication: &Publication) -> Result<ProgramLabel, LabelerError> {
        let text = render_features(publication);
        let vector = self
            .embedder
            .embed(&[text.as_str()])?
            .pop()
            .ok_or("embedding provider returned no vector")?;
        Ok(self.head.predict(&vector)?.0)
    }
}
