//! End-to-end training: categorical cross-entropy, bias-corrected Adam,
//! seeded mini-batch shuffling, best-epoch selection by validation
//! micro-F1, and checkpoint serialization.
//!
//! A fixed seed makes a run bitwise reproducible: parameter init, batch
//! order, and dropout masks all draw from one ChaCha stream, and batches
//! are processed serially in a stable order.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::data::{AttributeStore, RelationVocab};
use crate::encoder::Vocabulary;
use crate::error::{Error, Result};
use crate::eval::{micro_prf, Prf};
use crate::hig::SentenceInstance;
use crate::model::{forward_instance, predict_dataset, ModelParams, TrainCtx};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// `-ln(max(probs[gold], 1e-12))`.
pub fn cross_entropy(probs: &[f64], gold: usize) -> Result<f64> {
    if gold >= probs.len() {
        return Err(Error::Train(format!(
            "gold index {gold} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(-probs[gold].max(1e-12).ln())
}

/// First/second moment accumulators, aligned with the model's parameter
/// order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params
            .flatten()
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. `grads` must align with the parameter
/// order; a non-finite gradient aborts, naming the parameter.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &Config,
) -> Result<()> {
    let names: Vec<String> = params
        .flatten_named()
        .iter()
        .map(|(n, _)| n.clone())
        .collect();
    let mut tensors = params.flatten_mut();
    if tensors.len() != grads.len() {
        return Err(Error::Train(format!(
            "{} gradients for {} parameters",
            grads.len(),
            tensors.len()
        )));
    }
    for (name, g) in names.iter().zip(grads) {
        if !g.is_finite() {
            return Err(Error::Train(format!(
                "non-finite gradient for parameter {name}"
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in tensors.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let g = grads[i].data();
        for ((pj, mj), (vj, &gj)) in p
            .data_mut()
            .iter_mut()
            .zip(m.iter_mut())
            .zip(v.iter_mut().zip(g))
        {
            *mj = cfg.beta1 * *mj + (1.0 - cfg.beta1) * gj;
            *vj = cfg.beta2 * *vj + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = *mj / bc1;
            let v_hat = *vj / bc2;
            *pj -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Scale all gradients so their global L2 norm does not exceed `clip`.
fn clip_gradients(grads: &mut [Tensor], clip: f64) {
    let norm2: f64 = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = norm2.sqrt();
    if norm > clip {
        let scale = clip / norm;
        for g in grads {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
}

/// One row of the per-epoch metrics log.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub loss: f64,
}

pub fn write_metrics_csv(path: &std::path::Path, rows: &[MetricsRow]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,split,precision,recall,f1,loss")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.epoch, r.split, r.precision, r.recall, r.f1, r.loss
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug)]
pub struct TrainResult {
    pub params: ModelParams,
    pub metrics: Vec<MetricsRow>,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
    /// Instances dropped because their gold relation is not in the
    /// vocabulary.
    pub skipped: usize,
}

/// Train from scratch. Validation selects the best epoch by micro-F1;
/// without a validation set the final epoch wins and a warning is logged.
pub fn train(
    train_set: &[SentenceInstance],
    valid_set: Option<&[SentenceInstance]>,
    store: &AttributeStore,
    relations: &RelationVocab,
    vocab: &Vocabulary,
    cfg: &Config,
) -> Result<TrainResult> {
    cfg.validate()?;
    let mut usable: Vec<&SentenceInstance> = Vec::with_capacity(train_set.len());
    let mut skipped = 0usize;
    for inst in train_set {
        match relations.index_of(&inst.relation) {
            Some(_) => usable.push(inst),
            None => {
                skipped += 1;
                log::warn!(
                    "skipping instance with unknown relation {:?} (head {})",
                    inst.relation,
                    inst.head.kg_id
                );
            }
        }
    }
    if usable.is_empty() {
        return Err(Error::Train("no trainable instances".to_string()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(cfg, vocab, relations.len(), &mut rng)?;
    let mut adam = AdamState::new(&params);
    let pad_row = vocab.pad_index();

    let mut metrics = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..usable.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let vars = params.register(&mut tape);
            let mut batch_loss = None;
            for &idx in batch {
                let inst = usable[idx];
                let gold = relations.index_of(&inst.relation).expect("filtered above");
                let mut ctx = TrainCtx {
                    dropout: cfg.dropout,
                    rng: &mut rng,
                };
                let out = forward_instance(
                    &mut tape,
                    &vars,
                    inst,
                    store,
                    vocab,
                    cfg,
                    Some(&mut ctx),
                    None,
                )?;
                let p_gold = tape.gather_cols(out.probs, &[gold]);
                let lp = tape.log_clamped(p_gold, 1e-12);
                let nll = tape.scale(lp, -1.0);
                batch_loss = Some(match batch_loss {
                    None => nll,
                    Some(acc) => tape.add(acc, nll)?,
                });
            }
            let total = batch_loss.expect("batch is non-empty");
            let mean = tape.scale(total, 1.0 / batch.len() as f64);
            let loss_value = tape.value(mean).item();
            if !loss_value.is_finite() {
                return Err(Error::Train(format!(
                    "non-finite batch loss at epoch {epoch}"
                )));
            }
            epoch_loss += loss_value * batch.len() as f64;
            seen += batch.len();
            tape.backward(mean)?;

            let mut grads: Vec<Tensor> = Vec::new();
            let mut grad_iter = Vec::new();
            vars.visit(&mut |name, v| grad_iter.push((name, *v)));
            for (_, v) in &grad_iter {
                let g = tape.grad_tensor(*v).unwrap_or_else(|| {
                    let t = tape.value(*v);
                    Tensor::zeros(t.rows(), t.cols())
                });
                grads.push(g);
            }
            // PAD row stays frozen at zero
            let cols = grads[0].cols();
            grads[0].data_mut()[pad_row * cols..(pad_row + 1) * cols].fill(0.0);
            if cfg.grad_clip > 0.0 {
                clip_gradients(&mut grads, cfg.grad_clip);
            }
            adam_step(&mut params, &grads, &mut adam, cfg)?;
        }
        let train_loss = epoch_loss / seen as f64;

        let (train_preds, _) = predict_dataset(&params, vocab, relations, cfg, train_set, store)?;
        let train_prf = micro_prf(&train_preds);
        metrics.push(MetricsRow {
            epoch,
            split: "train".to_string(),
            precision: train_prf.precision,
            recall: train_prf.recall,
            f1: train_prf.f1,
            loss: train_loss,
        });

        if let Some(valid) = valid_set {
            let (valid_preds, valid_loss) =
                predict_dataset(&params, vocab, relations, cfg, valid, store)?;
            let valid_prf: Prf = micro_prf(&valid_preds);
            metrics.push(MetricsRow {
                epoch,
                split: "valid".to_string(),
                precision: valid_prf.precision,
                recall: valid_prf.recall,
                f1: valid_prf.f1,
                loss: valid_loss,
            });
            let better = match &best {
                None => true,
                Some((f1, _, _)) => valid_prf.f1 > *f1,
            };
            if better {
                best = Some((valid_prf.f1, epoch, params.clone()));
            }
        }
        log::info!(
            "epoch {epoch}: train loss {train_loss:.4}, train F1 {:.4}",
            train_prf.f1
        );
    }

    let (best_epoch, final_params) = match best {
        Some((_, epoch, p)) => (epoch, p),
        None => {
            if valid_set.is_none() {
                log::warn!("no validation set: keeping final-epoch parameters");
            }
            (cfg.max_epochs, params)
        }
    };
    Ok(TrainResult {
        params: final_params,
        metrics,
        best_epoch,
        skipped,
    })
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    tensor: Tensor,
}

/// Structured-text (JSON) checkpoint: config snapshot, vocabularies,
/// named parameters, and input-file hashes for provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: Config,
    pub relations: Vec<String>,
    pub vocab_tokens: Vec<String>,
    pub char_vocab: Option<Vec<char>>,
    params: Vec<NamedTensor>,
    pub dataset_hash: String,
    pub store_hash: String,
    pub relations_hash: String,
    pub embeddings_hash: String,
}

/// Hashes of the training inputs, recorded for provenance checks.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct InputHashes {
    pub dataset: String,
    pub store: String,
    pub relations: String,
    pub embeddings: String,
}

impl Checkpoint {
    pub fn build(
        params: &ModelParams,
        cfg: &Config,
        relations: &RelationVocab,
        vocab: &Vocabulary,
        hashes: InputHashes,
    ) -> Self {
        let named = params
            .flatten_named()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name,
                tensor: t.clone(),
            })
            .collect();
        let char_vocab = params
            .encoders
            .char_part
            .as_ref()
            .map(|c| c.vocab.chars().to_vec());
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: cfg.clone(),
            relations: relations.names().to_vec(),
            vocab_tokens: vocab.tokens().to_vec(),
            char_vocab,
            params: named,
            dataset_hash: hashes.dataset,
            store_hash: hashes.store,
            relations_hash: hashes.relations,
            embeddings_hash: hashes.embeddings,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        use std::io::Write;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Checkpoint> {
        let reader = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| {
            Error::Checkpoint(format!("cannot open checkpoint {}: {e}", path.display()))
        })?);
        let ckpt: Checkpoint = serde_json::from_reader(reader)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    /// Reconstruct the vocabulary, relation vocabulary, and parameters.
    pub fn restore(&self) -> Result<(ModelParams, Vocabulary, RelationVocab)> {
        let relations = RelationVocab::new(self.relations.clone())?;
        let embedding = self
            .params
            .iter()
            .find(|n| n.name == "embedding")
            .ok_or_else(|| Error::Checkpoint("checkpoint missing embedding".to_string()))?
            .tensor
            .clone();
        let vocab =
            Vocabulary::from_parts(self.vocab_tokens.clone(), self.config.word_dim, embedding)?;
        // skeleton with the right shapes, then fill by name
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ModelParams::init(&self.config, &vocab, relations.len(), &mut rng)?;
        if let (Some(chars), Some(part)) = (&self.char_vocab, &mut params.encoders.char_part) {
            part.vocab = crate::encoder::CharVocab::from_chars(chars.clone());
            part.char_embedding = Tensor::zeros(part.vocab.rows(), self.config.char_dim);
        }
        let mut by_name: std::collections::BTreeMap<&str, &Tensor> = self
            .params
            .iter()
            .map(|n| (n.name.as_str(), &n.tensor))
            .collect();
        let mut missing = Vec::new();
        params.visit_mut(&mut |name, t| match by_name.remove(name.as_str()) {
            Some(saved) => {
                if saved.shape() == t.shape() {
                    *t = saved.clone();
                } else {
                    missing.push(format!(
                        "{name}: shape {:?} in checkpoint, {:?} expected",
                        saved.shape(),
                        t.shape()
                    ));
                }
            }
            None => missing.push(format!("{name}: absent from checkpoint")),
        });
        if !missing.is_empty() {
            return Err(Error::Checkpoint(missing.join("; ")));
        }
        if !by_name.is_empty() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has unknown parameters: {}",
                by_name.keys().copied().collect::<Vec<_>>().join(", ")
            )));
        }
        Ok((params, vocab, relations))
    }
}
