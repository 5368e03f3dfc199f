//! Python bindings: checkpoint loading, per-sentence prediction, pooling
//! inspection, the synthetic corpus generator, training, and the McNemar
//! test.
//!
//! Build the cdylib with `cargo build -p kgpool-py --release`; the
//! `python/smoke_test.py` script shows how to load it without maturin.

// the #[pyfunction] expansion inserts PyErr-to-PyErr conversions
#![allow(clippy::useless_conversion)]

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use kgpool::config::Config;
use kgpool::data::{
    load_attribute_store, load_dataset, load_relations, AttributeStore, RelationVocab,
};
use kgpool::encoder::{load_embeddings, Vocabulary};
use kgpool::eval::{micro_prf, ContingencyTable};
use kgpool::hig::{EntityAttributes, EntityMention, SentenceInstance};
use kgpool::model::{predict_dataset, ModelParams};
use kgpool::tape::Tape;
use kgpool::tensor::Tensor;
use kgpool::training::{Checkpoint, InputHashes};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// McNemar's test with continuity correction.
///
/// Returns `(statistic, p_value, log10_p, significant)`.
#[pyfunction]
fn mcnemar(a: u64, b: u64, c: u64, d: u64) -> PyResult<(f64, f64, f64, bool)> {
    let t = kgpool::eval::mcnemar(&ContingencyTable { a, b, c, d }).map_err(err)?;
    Ok((t.statistic, t.p_value, t.log10_p, t.significant))
}

/// One normalized GCN propagation `ReLU(D^-1/2 (A+I) D^-1/2 F theta)` on
/// nested lists, for quick numeric checks from Python.
#[pyfunction]
fn gcn_layer(
    adjacency: Vec<Vec<f64>>,
    features: Vec<Vec<f64>>,
    theta: Vec<Vec<f64>>,
) -> PyResult<Vec<Vec<f64>>> {
    let a = tensor_from_nested(adjacency, "adjacency")?;
    let f = tensor_from_nested(features, "features")?;
    let t = tensor_from_nested(theta, "theta")?;
    let out = kgpool::pooling::gcn_layer(&a, &f, &t).map_err(err)?;
    Ok(nested_from_tensor(&out))
}

/// Threshold node selection over normalized scores; returns
/// `(kept_indices, threshold)`.
#[pyfunction]
fn select_nodes(z_score: Vec<f64>, alpha: f64) -> PyResult<(Vec<usize>, Option<f64>)> {
    if alpha < 0.0 {
        return Err(PyValueError::new_err("alpha must be non-negative"));
    }
    Ok(kgpool::pooling::select_nodes(&z_score, alpha))
}

fn tensor_from_nested(rows: Vec<Vec<f64>>, what: &str) -> PyResult<Tensor> {
    if rows.is_empty() {
        return Err(PyValueError::new_err(format!("{what} must be non-empty")));
    }
    let n = rows.len();
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!(
            "{what} rows have uneven lengths"
        )));
    }
    Ok(Tensor::new(n, cols, rows.into_iter().flatten().collect()))
}

fn nested_from_tensor(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

/// Generate the synthetic corpus files into a directory.
#[pyfunction]
#[pyo3(signature = (out_dir, n_train, n_test, n_relations, seed, dim=50))]
fn synth(
    out_dir: PathBuf,
    n_train: usize,
    n_test: usize,
    n_relations: usize,
    seed: u64,
    dim: usize,
) -> PyResult<()> {
    std::fs::create_dir_all(&out_dir)?;
    let corpus = kgpool::data::synth_corpus(n_train, n_test, n_relations, seed).map_err(err)?;
    kgpool::data::save_dataset(&out_dir.join("train.jsonl"), &corpus.train).map_err(err)?;
    kgpool::data::save_dataset(&out_dir.join("test.jsonl"), &corpus.test).map_err(err)?;
    kgpool::data::save_attribute_store(&out_dir.join("store.jsonl"), &corpus.store).map_err(err)?;
    kgpool::data::save_relations(&out_dir.join("relations.txt"), &corpus.relations).map_err(err)?;
    kgpool::data::write_random_embeddings(
        &out_dir.join("embeddings.txt"),
        &corpus.vocabulary,
        dim,
        seed,
    )
    .map_err(err)?;
    Ok(())
}

/// Train a model from corpus files and write a checkpoint; returns the
/// checkpoint path. `overrides` maps config keys to string values.
#[pyfunction]
#[pyo3(signature = (train, store, relations, embeddings, out, valid=None, overrides=None))]
#[allow(clippy::too_many_arguments)]
fn train_model(
    train: PathBuf,
    store: PathBuf,
    relations: PathBuf,
    embeddings: PathBuf,
    out: PathBuf,
    valid: Option<PathBuf>,
    overrides: Option<HashMap<String, String>>,
) -> PyResult<PathBuf> {
    let mut cfg = Config::default();
    if let Some(overrides) = overrides {
        let mut keys: Vec<_> = overrides.into_iter().collect();
        keys.sort();
        for (k, v) in keys {
            cfg.set(&k, &v).map_err(PyValueError::new_err)?;
        }
    }
    cfg.validate().map_err(err)?;

    let (train_set, _) = load_dataset(&train).map_err(err)?;
    let valid_set = match &valid {
        Some(p) => Some(load_dataset(p).map_err(err)?.0),
        None => None,
    };
    let (store_data, _) = load_attribute_store(&store).map_err(err)?;
    let rel_vocab = load_relations(&relations).map_err(err)?;
    let vocab = load_embeddings(&embeddings, cfg.word_dim).map_err(err)?;
    let hashes = InputHashes {
        dataset: kgpool::data::file_hash(&train).map_err(err)?,
        store: kgpool::data::file_hash(&store).map_err(err)?,
        relations: kgpool::data::file_hash(&relations).map_err(err)?,
        embeddings: kgpool::data::file_hash(&embeddings).map_err(err)?,
    };
    let result = kgpool::training::train(
        &train_set,
        valid_set.as_deref(),
        &store_data,
        &rel_vocab,
        &vocab,
        &cfg,
    )
    .map_err(err)?;
    std::fs::create_dir_all(&out)?;
    let path = out.join("checkpoint.json");
    Checkpoint::build(&result.params, &cfg, &rel_vocab, &vocab, hashes)
        .save(&path)
        .map_err(err)?;
    Ok(path)
}

fn attrs_from_dict(
    kg_id: &str,
    dict: Option<&Bound<'_, PyDict>>,
) -> PyResult<Option<EntityAttributes>> {
    let Some(dict) = dict else {
        return Ok(None);
    };
    let mut attrs = EntityAttributes {
        kg_id: kg_id.to_string(),
        ..Default::default()
    };
    if let Some(v) = dict.get_item("label")? {
        attrs.label = v.extract()?;
    }
    if let Some(v) = dict.get_item("aliases")? {
        attrs.aliases = v.extract()?;
    }
    if let Some(v) = dict.get_item("description")? {
        attrs.description = v.extract()?;
    }
    if let Some(v) = dict.get_item("instance_of")? {
        attrs.instance_of = v.extract()?;
    }
    Ok(Some(attrs))
}

fn instance_from_parts(
    tokens: Vec<String>,
    head_span: (usize, usize),
    head_kg_id: &str,
    tail_span: (usize, usize),
    tail_kg_id: &str,
) -> SentenceInstance {
    SentenceInstance {
        tokens,
        head: EntityMention {
            kg_id: head_kg_id.to_string(),
            span: head_span,
        },
        tail: EntityMention {
            kg_id: tail_kg_id.to_string(),
            span: tail_span,
        },
        relation: kgpool::data::NA_RELATION.to_string(),
    }
}

/// A trained model restored from a checkpoint.
#[pyclass]
struct Model {
    params: ModelParams,
    vocab: Vocabulary,
    relations: RelationVocab,
    config: Config,
}

#[pymethods]
impl Model {
    #[new]
    fn new(checkpoint: PathBuf) -> PyResult<Self> {
        let ckpt = Checkpoint::load(&checkpoint).map_err(err)?;
        let (params, vocab, relations) = ckpt.restore().map_err(err)?;
        Ok(Model {
            params,
            vocab,
            relations,
            config: ckpt.config,
        })
    }

    /// The Context Coefficient used at inference.
    #[getter]
    fn get_alpha(&self) -> f64 {
        self.config.alpha
    }

    #[setter]
    fn set_alpha(&mut self, alpha: f64) -> PyResult<()> {
        if alpha < 0.0 {
            return Err(PyValueError::new_err("alpha must be non-negative"));
        }
        self.config.alpha = alpha;
        Ok(())
    }

    #[getter]
    fn relations(&self) -> Vec<String> {
        self.relations.names().to_vec()
    }

    /// Relation distribution for one sentence, most probable first.
    /// Attribute dicts may carry `label`, `aliases`, `description`,
    /// `instance_of`.
    #[pyo3(signature = (tokens, head_span, head_kg_id, tail_span, tail_kg_id, head_attrs=None, tail_attrs=None))]
    #[allow(clippy::too_many_arguments)]
    fn predict(
        &self,
        tokens: Vec<String>,
        head_span: (usize, usize),
        head_kg_id: &str,
        tail_span: (usize, usize),
        tail_kg_id: &str,
        head_attrs: Option<&Bound<'_, PyDict>>,
        tail_attrs: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Vec<(String, f64)>> {
        let inst = instance_from_parts(tokens, head_span, head_kg_id, tail_span, tail_kg_id);
        let mut store = AttributeStore::new();
        if let Some(a) = attrs_from_dict(head_kg_id, head_attrs)? {
            store.insert(a).map_err(err)?;
        }
        if let Some(a) = attrs_from_dict(tail_kg_id, tail_attrs)? {
            if store.get(tail_kg_id).is_none() {
                store.insert(a).map_err(err)?;
            }
        }
        let mut tape = Tape::new();
        let vars = self.params.register_frozen(&mut tape);
        let out = kgpool::model::forward_instance(
            &mut tape,
            &vars,
            &inst,
            &store,
            &self.vocab,
            &self.config,
            None,
            None,
        )
        .map_err(err)?;
        let probs = tape.value(out.probs).data().to_vec();
        let mut pairs: Vec<(String, f64)> = probs
            .iter()
            .enumerate()
            .map(|(i, &p)| (self.relations.name(i).to_string(), p))
            .collect();
        pairs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        Ok(pairs)
    }

    /// Pooling decisions for one sentence: per-block threshold and
    /// per-attribute-node scores with kept/dropped flags.
    #[pyo3(signature = (tokens, head_span, head_kg_id, tail_span, tail_kg_id, head_attrs=None, tail_attrs=None))]
    #[allow(clippy::too_many_arguments)]
    fn pool_inspect<'py>(
        &self,
        py: Python<'py>,
        tokens: Vec<String>,
        head_span: (usize, usize),
        head_kg_id: &str,
        tail_span: (usize, usize),
        tail_kg_id: &str,
        head_attrs: Option<&Bound<'py, PyDict>>,
        tail_attrs: Option<&Bound<'py, PyDict>>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let inst = instance_from_parts(tokens, head_span, head_kg_id, tail_span, tail_kg_id);
        let mut store = AttributeStore::new();
        if let Some(a) = attrs_from_dict(head_kg_id, head_attrs)? {
            store.insert(a).map_err(err)?;
        }
        if let Some(a) = attrs_from_dict(tail_kg_id, tail_attrs)? {
            if store.get(tail_kg_id).is_none() {
                store.insert(a).map_err(err)?;
            }
        }
        let records = kgpool::model::pool_inspect(
            &self.params,
            &self.vocab,
            &self.config,
            std::slice::from_ref(&inst),
            &store,
        )
        .map_err(err)?;
        let rec = &records[0];
        let out = PyDict::new_bound(py);
        out.set_item("node_labels", rec.node_labels.clone())?;
        out.set_item("hig_entity_degree", rec.hig_entity_degree)?;
        out.set_item("cg_entity_degree", rec.cg_entity_degree)?;
        let blocks: Vec<Bound<'py, PyDict>> = rec
            .blocks
            .iter()
            .map(|b| {
                let d = PyDict::new_bound(py);
                d.set_item("block", b.block)?;
                d.set_item("threshold", b.threshold)?;
                let nodes: Vec<(usize, String, f64, bool)> = b
                    .nodes
                    .iter()
                    .map(|n| (n.node, n.label.clone(), n.z_score, n.kept))
                    .collect();
                d.set_item("nodes", nodes)?;
                Ok(d)
            })
            .collect::<PyResult<_>>()?;
        out.set_item("blocks", blocks)?;
        Ok(out)
    }

    /// Evaluate dataset/store files: returns a dict with micro metrics.
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        data: PathBuf,
        store: PathBuf,
    ) -> PyResult<Bound<'py, PyDict>> {
        let (instances, _) = load_dataset(&data).map_err(err)?;
        let (store_data, _) = load_attribute_store(&store).map_err(err)?;
        let (preds, loss) = predict_dataset(
            &self.params,
            &self.vocab,
            &self.relations,
            &self.config,
            &instances,
            &store_data,
        )
        .map_err(err)?;
        let prf = micro_prf(&preds);
        let out = PyDict::new_bound(py);
        out.set_item("instances", preds.len())?;
        out.set_item("precision", prf.precision)?;
        out.set_item("recall", prf.recall)?;
        out.set_item("f1", prf.f1)?;
        out.set_item("loss", loss)?;
        Ok(out)
    }
}

#[pymodule]
fn kgpool_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(mcnemar, m)?)?;
    m.add_function(wrap_pyfunction!(gcn_layer, m)?)?;
    m.add_function(wrap_pyfunction!(select_nodes, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    Ok(())
}
