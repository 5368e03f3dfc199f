//! The full model: parameter container, end-to-end forward pass, and
//! dataset-level prediction / pooling inspection.

use rand::Rng;

use serde::{Deserialize, Serialize};

use crate::aggregator::{self, Aggregator, Classifier};
use crate::config::Config;
use crate::data::{AttributeStore, RelationVocab};
use crate::encoder::{BiLstm, CharSentenceEncoder, CharVocab, EncoderSet, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::PredictionRecord;
use crate::hig::{self, HigTopology, SentenceInstance};
use crate::pooling::{self, ContextGraph, ContextGraphVars, GcnParams};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// All trainable weights, generic over storage so the same structure
/// serves plain tensors and tape handles.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub encoders: EncoderSet<T>,
    pub gcn: GcnParams<T>,
    pub aggregator: Aggregator<T>,
    pub classifier: Classifier<T>,
}

pub type ModelParams = Model<Tensor>;
pub type ModelVars = Model<Var>;

impl<T> Model<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Model<U> {
        Model {
            encoders: self.encoders.map(f),
            gcn: self.gcn.map(f),
            aggregator: self.aggregator.map(f),
            classifier: self.classifier.map(f),
        }
    }

    /// Visit every parameter with its stable name, in a fixed order shared
    /// with `visit_mut` and `map`.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a T)) {
        self.encoders.visit(f);
        self.gcn.visit(f);
        self.aggregator.visit(f);
        self.classifier.visit(f);
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(String, &'a mut T)) {
        self.encoders.visit_mut(f);
        self.gcn.visit_mut(f);
        self.aggregator.visit_mut(f);
        self.classifier.visit_mut(f);
    }

    pub fn flatten(&self) -> Vec<&T> {
        let mut out = Vec::new();
        self.visit(&mut |_, t| out.push(t));
        out
    }

    pub fn flatten_named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name, t)));
        out
    }

    pub fn flatten_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        self.visit_mut(&mut |_, t| out.push(t));
        out
    }
}

impl ModelParams {
    /// Fresh parameters for the configured architecture. The word
    /// embedding is seeded from the vocabulary's matrix.
    pub fn init<R: Rng>(
        cfg: &Config,
        vocab: &Vocabulary,
        n_relations: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if vocab.dim() != cfg.word_dim {
            return Err(Error::Config(vec![format!(
                "word_dim {} does not match embedding dimension {}",
                cfg.word_dim,
                vocab.dim()
            )]));
        }
        let feature_dim = cfg.feature_dim();
        let char_part = cfg.char_encoder.then(|| {
            let char_vocab = CharVocab::from_tokens(vocab.tokens().iter().map(|s| s.as_str()));
            CharSentenceEncoder {
                char_embedding: Tensor::glorot(char_vocab.rows(), cfg.char_dim, rng),
                char_lstm: BiLstm::init(cfg.char_dim, cfg.char_hidden, rng),
                sentence_lstm: BiLstm::init(
                    cfg.word_dim + 2 * cfg.char_hidden,
                    cfg.lstm_hidden,
                    rng,
                ),
                vocab: char_vocab,
            }
        });
        let encoders = EncoderSet {
            embedding: vocab.embedding.clone(),
            word_lstm: BiLstm::init(cfg.word_dim, cfg.lstm_hidden, rng),
            char_part,
        };
        let gcn = GcnParams::init(feature_dim, cfg.gcn_hidden, cfg.gcn_blocks, rng);
        let aggregator = Aggregator::init(
            cfg.aggregator,
            cfg.word_dim,
            cfg.gcn_hidden,
            cfg.aggregator_hidden,
            rng,
        );
        // classifier input: r' + stacked sentence/entity rows + stacked readouts
        let stacked = cfg.gcn_blocks * cfg.gcn_hidden;
        let classifier_input = aggregator.output_dim() + 3 * stacked + 2 * stacked;
        let classifier =
            Classifier::init(classifier_input, cfg.classifier_hidden, n_relations, rng);
        Ok(Model {
            encoders,
            gcn,
            aggregator,
            classifier,
        })
    }

    /// Copy every parameter onto a tape as a trainable leaf.
    pub fn register(&self, tape: &mut Tape) -> ModelVars {
        self.map(&mut |t: &Tensor| tape.param(t.clone()))
    }

    /// Copy every parameter onto a tape as a frozen constant (inference).
    pub fn register_frozen(&self, tape: &mut Tape) -> ModelVars {
        self.map(&mut |t: &Tensor| tape.constant(t.clone()))
    }

    pub fn n_relations(&self) -> usize {
        self.classifier.b_out.cols()
    }
}

/// Dropout source during a training forward pass.
pub struct TrainCtx<'a> {
    pub dropout: f64,
    pub rng: &'a mut dyn rand::RngCore,
}

/// Output handles of one instance forward pass.
pub struct InstanceOutput {
    pub probs: Var,
    pub topology: HigTopology,
    pub cg: ContextGraphVars,
}

/// End-to-end forward: build the HIG, encode nodes, pool, aggregate,
/// classify. `alpha` is taken from `cfg`; `pinned_kept` freezes the
/// discrete kept sets (gradient checking).
#[allow(clippy::too_many_arguments)]
pub fn forward_instance(
    tape: &mut Tape,
    vars: &ModelVars,
    inst: &SentenceInstance,
    store: &AttributeStore,
    vocab: &Vocabulary,
    cfg: &Config,
    mut train: Option<&mut TrainCtx<'_>>,
    pinned_kept: Option<&[Vec<usize>]>,
) -> Result<InstanceOutput> {
    let topology = hig::build_topology(
        inst,
        store.get(&inst.head.kg_id),
        store.get(&inst.tail.kg_id),
        &cfg.hig(),
    );
    let features = hig::encode_nodes(tape, &vars.encoders, &topology, vocab)?;
    let cg = pooling::forward_context_pooling(
        tape,
        &vars.gcn,
        &topology,
        features,
        cfg.alpha,
        &cfg.placement(),
        pinned_kept,
    )?;
    let mut relation_vec = aggregator::aggregate(
        tape,
        &vars.aggregator,
        vars.encoders.embedding,
        inst,
        vocab,
        &cg,
    )?;
    if let Some(ctx) = train.as_deref_mut() {
        relation_vec = aggregator::dropout(tape, relation_vec, ctx.dropout, &mut ctx.rng)?;
    }
    let probs = aggregator::classify(
        tape,
        &vars.classifier,
        relation_vec,
        &cg,
        train.map(|ctx| (ctx.dropout, &mut *ctx.rng as &mut dyn rand::RngCore)),
    )?;
    Ok(InstanceOutput {
        probs,
        topology,
        cg,
    })
}

/// Prediction under the NA rule: argmax over non-NA relations, with the
/// winning probability as ranking confidence.
pub fn predict_from_probs(probs: &[f64], relations: &RelationVocab) -> (usize, f64) {
    let mut best = usize::MAX;
    let mut best_p = f64::NEG_INFINITY;
    for (i, &p) in probs.iter().enumerate() {
        if i == relations.na_index() {
            continue;
        }
        if p > best_p {
            best_p = p;
            best = i;
        }
    }
    (best, best_p)
}

/// Run frozen-parameter inference over a dataset, producing ranking
/// records and the mean cross-entropy loss over scorable instances.
pub fn predict_dataset(
    params: &ModelParams,
    vocab: &Vocabulary,
    relations: &RelationVocab,
    cfg: &Config,
    data: &[SentenceInstance],
    store: &AttributeStore,
) -> Result<(Vec<PredictionRecord>, f64)> {
    let mut records = Vec::with_capacity(data.len());
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    for (idx, inst) in data.iter().enumerate() {
        let mut tape = Tape::new();
        let vars = params.register_frozen(&mut tape);
        let out = forward_instance(&mut tape, &vars, inst, store, vocab, cfg, None, None)?;
        let probs = tape.value(out.probs).data().to_vec();
        let (pred, confidence) = predict_from_probs(&probs, relations);
        if let Some(gold) = relations.index_of(&inst.relation) {
            loss_sum += crate::training::cross_entropy(&probs, gold)?;
            loss_count += 1;
        }
        records.push(PredictionRecord {
            instance: idx,
            gold: inst.relation.clone(),
            predicted: relations.name(pred).to_string(),
            confidence,
        });
    }
    let mean_loss = if loss_count > 0 {
        loss_sum / loss_count as f64
    } else {
        0.0
    };
    Ok((records, mean_loss))
}

/// Build the value-level Context Graph for one instance with frozen
/// parameters; `alpha` may differ from the training value.
pub fn context_graph_for(
    params: &ModelParams,
    vocab: &Vocabulary,
    cfg: &Config,
    inst: &SentenceInstance,
    store: &AttributeStore,
) -> Result<(HigTopology, ContextGraph)> {
    let mut tape = Tape::new();
    let vars = params.register_frozen(&mut tape);
    let out = forward_instance(&mut tape, &vars, inst, store, vocab, cfg, None, None)?;
    let cg = ContextGraph::snapshot(&tape, &out.cg);
    Ok((out.topology, cg))
}

/// Per-node view of one pooling decision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeScore {
    pub node: usize,
    pub label: String,
    pub z_score: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockInspection {
    pub block: usize,
    pub threshold: Option<f64>,
    pub nodes: Vec<NodeScore>,
}

/// Pooling report for one instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolInspection {
    pub instance: usize,
    pub gold: String,
    pub node_labels: Vec<String>,
    pub blocks: Vec<BlockInspection>,
    pub hig_entity_degree: f64,
    pub cg_entity_degree: f64,
}

/// Inspect pooling decisions across a dataset with frozen parameters.
pub fn pool_inspect(
    params: &ModelParams,
    vocab: &Vocabulary,
    cfg: &Config,
    data: &[SentenceInstance],
    store: &AttributeStore,
) -> Result<Vec<PoolInspection>> {
    let mut out = Vec::with_capacity(data.len());
    for (idx, inst) in data.iter().enumerate() {
        let (topo, cg) = context_graph_for(params, vocab, cfg, inst, store)?;
        let blocks = cg
            .outcomes
            .iter()
            .map(|o| BlockInspection {
                block: o.block,
                threshold: o.threshold,
                nodes: o
                    .attr_ids
                    .iter()
                    .zip(&o.z_score)
                    .map(|(&node, &z)| NodeScore {
                        node,
                        label: topo.node_labels[node].clone(),
                        z_score: z,
                        kept: o.kept_idx.contains(&node),
                    })
                    .collect(),
            })
            .collect();
        let hig_deg = (topo.degree(1) + topo.degree(2)) / 2.0;
        out.push(PoolInspection {
            instance: idx,
            gold: inst.relation.clone(),
            node_labels: topo.node_labels.clone(),
            blocks,
            hig_entity_degree: hig_deg,
            cg_entity_degree: cg.entity_degree(),
        });
    }
    Ok(out)
}
