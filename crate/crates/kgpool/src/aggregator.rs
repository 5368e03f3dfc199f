//! Sentential context aggregators and the relation classifier.
//!
//! The pooling stack works agnostic of the aggregator behind it; two
//! interchangeable variants produce the latent relation vector `r'`:
//!
//! - `lstm`: a Bi-LSTM over the sentence tokens, each token carrying its
//!   word vector plus a one-hot position indicator {in-head, in-tail,
//!   other}.
//! - `gnn`: two message-passing rounds over the pooled Context Graph,
//!   combining the head and tail node states.
//!
//! The classifier concatenates `r' ⊕ e_h' ⊕ e_t' ⊕ W' ⊕ R'` in that
//! order and maps it through one ReLU hidden layer to relation logits.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{bilstm_encode, BiLstm, Vocabulary};
use crate::error::Result;
use crate::hig::SentenceInstance;
use crate::pooling::{normalized_operator, ContextGraphVars};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    Lstm,
    Gnn,
}

impl FromStr for AggregatorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_lowercase().as_str() {
            "lstm" => Ok(AggregatorKind::Lstm),
            "gnn" => Ok(AggregatorKind::Gnn),
            other => Err(format!(
                "unknown aggregator {other:?} (expected lstm or gnn)"
            )),
        }
    }
}

impl std::fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AggregatorKind::Lstm => write!(f, "lstm"),
            AggregatorKind::Gnn => write!(f, "gnn"),
        }
    }
}

/// Sentence Bi-LSTM with position-indicator features appended to each
/// token's word vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LstmAggregator<T> {
    pub lstm: BiLstm<T>,
}

/// Message passing over the Context Graph; two rounds, no bias, shared
/// normalized operator with the pooled adjacency.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GnnAggregator<T> {
    pub w_round1: T,
    pub w_round2: T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Aggregator<T> {
    Lstm(LstmAggregator<T>),
    Gnn(GnnAggregator<T>),
}

impl<T> Aggregator<T> {
    pub fn kind(&self) -> AggregatorKind {
        match self {
            Aggregator::Lstm(_) => AggregatorKind::Lstm,
            Aggregator::Gnn(_) => AggregatorKind::Gnn,
        }
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Aggregator<U> {
        match self {
            Aggregator::Lstm(a) => Aggregator::Lstm(LstmAggregator {
                lstm: a.lstm.map(f),
            }),
            Aggregator::Gnn(a) => Aggregator::Gnn(GnnAggregator {
                w_round1: f(&a.w_round1),
                w_round2: f(&a.w_round2),
            }),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a T)) {
        match self {
            Aggregator::Lstm(a) => a.lstm.visit("aggregator.lstm", f),
            Aggregator::Gnn(a) => {
                f("aggregator.gnn.w_round1".to_string(), &a.w_round1);
                f("aggregator.gnn.w_round2".to_string(), &a.w_round2);
            }
        }
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(String, &'a mut T)) {
        match self {
            Aggregator::Lstm(a) => a.lstm.visit_mut("aggregator.lstm", f),
            Aggregator::Gnn(a) => {
                f("aggregator.gnn.w_round1".to_string(), &mut a.w_round1);
                f("aggregator.gnn.w_round2".to_string(), &mut a.w_round2);
            }
        }
    }
}

impl Aggregator<Tensor> {
    /// `word_dim` feeds the lstm variant (plus 3 indicator features);
    /// `node_dim` is the Context Graph feature width for the gnn variant.
    pub fn init<R: Rng>(
        kind: AggregatorKind,
        word_dim: usize,
        node_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        match kind {
            AggregatorKind::Lstm => Aggregator::Lstm(LstmAggregator {
                lstm: BiLstm::init(word_dim + 3, hidden, rng),
            }),
            AggregatorKind::Gnn => Aggregator::Gnn(GnnAggregator {
                w_round1: Tensor::glorot(node_dim, hidden, rng),
                w_round2: Tensor::glorot(hidden, hidden, rng),
            }),
        }
    }

    /// Output width of `r'`: both variants concatenate two state vectors.
    pub fn output_dim(&self) -> usize {
        match self {
            Aggregator::Lstm(a) => 2 * a.lstm.hidden_dim(),
            Aggregator::Gnn(a) => 2 * a.w_round2.cols(),
        }
    }
}

/// Inverted dropout over a tape value; the mask is a frozen constant so
/// gradients pass only through the product.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, rng: &mut (impl Rng + ?Sized)) -> Result<Var> {
    debug_assert!((0.0..1.0).contains(&rate));
    if rate == 0.0 {
        return Ok(x);
    }
    let (rows, cols) = tape.value(x).shape();
    let keep = 1.0 - rate;
    let mask = Tensor::new(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect(),
    );
    let mask = tape.constant(mask);
    tape.mul(x, mask)
}

/// Latent relation vector from the lstm variant.
pub fn aggregate_lstm(
    tape: &mut Tape,
    agg: &LstmAggregator<Var>,
    embedding: Var,
    inst: &SentenceInstance,
    vocab: &Vocabulary,
) -> Result<Var> {
    let ids = vocab.lookup_all(&inst.tokens);
    let mut inputs = Vec::with_capacity(ids.len());
    for (t, &id) in ids.iter().enumerate() {
        let word = tape.gather_rows(embedding, &[id]);
        let in_head = inst.head.span.0 <= t && t < inst.head.span.1;
        let in_tail = inst.tail.span.0 <= t && t < inst.tail.span.1;
        let indicator = tape.constant(Tensor::row(&[
            if in_head { 1.0 } else { 0.0 },
            if in_tail { 1.0 } else { 0.0 },
            if !in_head && !in_tail { 1.0 } else { 0.0 },
        ]));
        inputs.push(tape.concat_cols(&[word, indicator])?);
    }
    bilstm_encode(tape, &agg.lstm, &inputs)
}

/// Latent relation vector from the gnn variant: two propagation rounds
/// over the pooled graph, then head ⊕ tail.
pub fn aggregate_gnn(
    tape: &mut Tape,
    agg: &GnnAggregator<Var>,
    cg_features: Var,
    cg_adjacency: &Tensor,
) -> Result<Var> {
    let l_hat = tape.constant(normalized_operator(cg_adjacency));
    let h = tape.matmul(l_hat, cg_features)?;
    let h = tape.matmul(h, agg.w_round1)?;
    let h = tape.relu(h);
    let h = tape.matmul(l_hat, h)?;
    let h = tape.matmul(h, agg.w_round2)?;
    let h = tape.relu(h);
    let head = tape.gather_rows(h, &[1]);
    let tail = tape.gather_rows(h, &[2]);
    tape.concat_cols(&[head, tail])
}

/// Dispatch on the configured variant.
pub fn aggregate(
    tape: &mut Tape,
    agg: &Aggregator<Var>,
    embedding: Var,
    inst: &SentenceInstance,
    vocab: &Vocabulary,
    cg: &ContextGraphVars,
) -> Result<Var> {
    match agg {
        Aggregator::Lstm(a) => aggregate_lstm(tape, a, embedding, inst, vocab),
        Aggregator::Gnn(a) => aggregate_gnn(tape, a, cg.features, &cg.adjacency),
    }
}

/// One-hidden-layer ReLU MLP ending in relation logits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Classifier<T> {
    pub w_hidden: T,
    pub b_hidden: T,
    pub w_out: T,
    pub b_out: T,
}

impl<T> Classifier<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Classifier<U> {
        Classifier {
            w_hidden: f(&self.w_hidden),
            b_hidden: f(&self.b_hidden),
            w_out: f(&self.w_out),
            b_out: f(&self.b_out),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a T)) {
        f("classifier.w_hidden".to_string(), &self.w_hidden);
        f("classifier.b_hidden".to_string(), &self.b_hidden);
        f("classifier.w_out".to_string(), &self.w_out);
        f("classifier.b_out".to_string(), &self.b_out);
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(String, &'a mut T)) {
        f("classifier.w_hidden".to_string(), &mut self.w_hidden);
        f("classifier.b_hidden".to_string(), &mut self.b_hidden);
        f("classifier.w_out".to_string(), &mut self.w_out);
        f("classifier.b_out".to_string(), &mut self.b_out);
    }
}

impl Classifier<Tensor> {
    pub fn init<R: Rng>(input_dim: usize, hidden: usize, n_relations: usize, rng: &mut R) -> Self {
        Classifier {
            w_hidden: Tensor::glorot(input_dim, hidden, rng),
            b_hidden: Tensor::zeros(1, hidden),
            w_out: Tensor::glorot(hidden, n_relations, rng),
            b_out: Tensor::zeros(1, n_relations),
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize, n_relations: usize) -> Self {
        Classifier {
            w_hidden: Tensor::zeros(input_dim, hidden),
            b_hidden: Tensor::zeros(1, hidden),
            w_out: Tensor::zeros(hidden, n_relations),
            b_out: Tensor::zeros(1, n_relations),
        }
    }
}

/// Relation distribution from the concatenation
/// `r' ⊕ e_h' ⊕ e_t' ⊕ W' ⊕ R'`. Dropout, when given, applies to the
/// hidden layer (training only).
pub fn classify(
    tape: &mut Tape,
    clf: &Classifier<Var>,
    relation_vec: Var,
    cg: &ContextGraphVars,
    dropout_ctx: Option<(f64, &mut dyn rand::RngCore)>,
) -> Result<Var> {
    let input = tape.concat_cols(&[relation_vec, cg.head, cg.tail, cg.sentence, cg.readout])?;
    let h = tape.matmul(input, clf.w_hidden)?;
    let h = tape.add(h, clf.b_hidden)?;
    let mut h = tape.relu(h);
    if let Some((rate, rng)) = dropout_ctx {
        h = dropout(tape, h, rate, rng)?;
    }
    let logits = tape.matmul(h, clf.w_out)?;
    let logits = tape.add(logits, clf.b_out)?;
    Ok(tape.row_softmax(logits))
}
