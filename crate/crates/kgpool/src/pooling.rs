//! Context pooling: stacked GCN blocks with readouts, self-attention
//! scoring over attribute nodes, threshold-based node selection, and the
//! pooled Context Graph.
//!
//! Each block computes `ReLU(D̃^{-1/2} Ã D̃^{-1/2} F θ)` with `Ã = A + I`.
//! At a pooling block the attribute nodes get a self-attention score
//! `tanh(D̃^{-1/2} Ã D̃^{-1/2} F Θ_att)`, softmax-normalized over attribute
//! nodes only; a node survives when its normalized score reaches
//! `max(Z) - alpha * σ(Z)` (population σ). The sentence and both entity
//! nodes are never pooled. Kept attribute rows are scaled by their
//! normalized score; sentence/entity rows by 1. Selection itself is
//! discrete — gradients flow through the gather and the mask product, not
//! through the kept-set decision.
//!
//! Intermediate sentence/entity rows and readouts from every block are
//! concatenated in block order into the Context Graph representations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hig::HigTopology;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// GCN block weights plus the single attention vector of the pooling
/// layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GcnParams<T> {
    /// `θ` per block: `[f × d]` for block 1, `[d × d]` after.
    pub blocks: Vec<T>,
    /// `Θ_att`, `[d × 1]` — the pooling layer's only parameter.
    pub attention: T,
}

impl<T> GcnParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> GcnParams<U> {
        GcnParams {
            blocks: self.blocks.iter().map(&mut *f).collect(),
            attention: f(&self.attention),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a T)) {
        for (i, b) in self.blocks.iter().enumerate() {
            f(format!("gcn.block{}", i + 1), b);
        }
        f("gcn.attention".to_string(), &self.attention);
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(String, &'a mut T)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            f(format!("gcn.block{}", i + 1), b);
        }
        f("gcn.attention".to_string(), &mut self.attention);
    }
}

impl GcnParams<Tensor> {
    pub fn init<R: Rng>(feature_dim: usize, hidden: usize, n_blocks: usize, rng: &mut R) -> Self {
        let mut blocks = Vec::with_capacity(n_blocks);
        let mut d_in = feature_dim;
        for _ in 0..n_blocks {
            blocks.push(Tensor::glorot(d_in, hidden, rng));
            d_in = hidden;
        }
        GcnParams {
            blocks,
            attention: Tensor::glorot(hidden, 1, rng),
        }
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` for a symmetric 0/1 adjacency. Self-loops
/// guarantee every degree ≥ 1.
pub fn normalized_operator(adjacency: &Tensor) -> Tensor {
    let n = adjacency.rows();
    debug_assert_eq!(adjacency.shape(), (n, n));
    let mut out = adjacency.clone();
    for i in 0..n {
        out.set(i, i, out.get(i, i) + 1.0);
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / out.row_slice(i).iter().sum::<f64>().sqrt())
        .collect();
    for i in 0..n {
        for j in 0..n {
            let v = out.get(i, j) * inv_sqrt[i] * inv_sqrt[j];
            out.set(i, j, v);
        }
    }
    out
}

/// Induced submatrix on `kept` rows/columns.
pub fn induced_submatrix(adjacency: &Tensor, kept: &[usize]) -> Tensor {
    let k = kept.len();
    let mut out = Tensor::zeros(k, k);
    for (i, &a) in kept.iter().enumerate() {
        for (j, &b) in kept.iter().enumerate() {
            out.set(i, j, adjacency.get(a, b));
        }
    }
    out
}

/// One GCN propagation on the tape. `l_hat` is the constant normalized
/// operator for the current graph.
pub fn gcn_layer_taped(tape: &mut Tape, l_hat: Var, features: Var, theta: Var) -> Result<Var> {
    let mixed = tape.matmul(l_hat, features)?;
    let projected = tape.matmul(mixed, theta)?;
    Ok(tape.relu(projected))
}

/// Value-level GCN layer: `ReLU(D̃^{-1/2} Ã D̃^{-1/2} F θ)`.
pub fn gcn_layer(adjacency: &Tensor, features: &Tensor, theta: &Tensor) -> Result<Tensor> {
    let out = normalized_operator(adjacency)
        .matmul(features)?
        .matmul(theta)?;
    Ok(out.map(|v| v.max(0.0)))
}

/// Graph summary: column-wise mean ⊕ column-wise max, `[1 × 2d]`.
pub fn readout_taped(tape: &mut Tape, features: Var) -> Result<Var> {
    let mean = tape.mean_rows(features)?;
    let max = tape.max_rows(features)?;
    tape.concat_cols(&[mean, max])
}

/// Value-level readout.
pub fn readout(features: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let f = tape.constant(features.clone());
    let r = readout_taped(&mut tape, f)?;
    Ok(tape.value(r).clone())
}

/// Raw self-attention scores for every node: `tanh(L̂ F Θ_att)`, `[n × 1]`.
pub fn attention_scores_taped(
    tape: &mut Tape,
    l_hat: Var,
    features: Var,
    attention: Var,
) -> Result<Var> {
    let mixed = tape.matmul(l_hat, features)?;
    let scores = tape.matmul(mixed, attention)?;
    Ok(tape.tanh(scores))
}

/// Value-level attention scores from a raw adjacency.
pub fn attention_scores(
    adjacency: &Tensor,
    features: &Tensor,
    attention: &Tensor,
) -> Result<Tensor> {
    let out = normalized_operator(adjacency)
        .matmul(features)?
        .matmul(attention)?;
    Ok(out.map(f64::tanh))
}

/// Threshold selection over normalized attribute scores. Returns the kept
/// positions (indices into `z_score`, ascending) and the threshold
/// `max(Z) - alpha * σ(Z)`. Ties at the threshold are kept. An empty
/// score list yields an empty kept set and no threshold.
pub fn select_nodes(z_score: &[f64], alpha: f64) -> (Vec<usize>, Option<f64>) {
    assert!(alpha >= 0.0, "context coefficient must be non-negative");
    if z_score.is_empty() {
        return (Vec::new(), None);
    }
    let n = z_score.len() as f64;
    let max = z_score.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = z_score.iter().sum::<f64>() / n;
    let variance = z_score.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n;
    let threshold = max - alpha * variance.sqrt();
    let kept = z_score
        .iter()
        .enumerate()
        .filter(|(_, &z)| z >= threshold)
        .map(|(i, _)| i)
        .collect();
    (kept, Some(threshold))
}

/// Value-level pooling: select rows, scale by mask weights, induce the
/// subgraph. `mask` is aligned with `kept_idx`.
pub fn pool_graph(
    features: &Tensor,
    adjacency: &Tensor,
    kept_idx: &[usize],
    mask: &[f64],
) -> Result<(Tensor, Tensor)> {
    if kept_idx.len() != mask.len() {
        return Err(Error::Eval(format!(
            "pool_graph: {} kept rows but {} mask weights",
            kept_idx.len(),
            mask.len()
        )));
    }
    let cols = features.cols();
    let mut data = Vec::with_capacity(kept_idx.len() * cols);
    for (&r, &w) in kept_idx.iter().zip(mask) {
        data.extend(features.row_slice(r).iter().map(|v| v * w));
    }
    Ok((
        Tensor::new(kept_idx.len(), cols, data),
        induced_submatrix(adjacency, kept_idx),
    ))
}

/// Record of one pooling decision, in original HIG node ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolingOutcome {
    /// 1-based block index the pooling ran in.
    pub block: usize,
    /// All surviving node ids (sentence, entities, kept attributes), sorted.
    pub kept_idx: Vec<usize>,
    /// Scored attribute node ids, aligned with `z_score`.
    pub attr_ids: Vec<usize>,
    /// Normalized attention scores over the attribute nodes.
    pub z_score: Vec<f64>,
    /// `max - alpha*σ`; absent when there was nothing to score.
    pub threshold: Option<f64>,
    #[serde(skip)]
    pub f_out: Tensor,
    #[serde(skip)]
    pub a_out: Tensor,
}

impl PoolingOutcome {
    pub fn kept_attr_ids(&self) -> Vec<usize> {
        self.kept_idx.iter().copied().filter(|&i| i >= 3).collect()
    }
}

/// Tape handles for the pooled graph and the stacked representations.
pub struct ContextGraphVars {
    pub sentence: Var,
    pub head: Var,
    pub tail: Var,
    pub readout: Var,
    /// Final node features (post-pooling at the last pooled block).
    pub features: Var,
    /// Final adjacency (plain value; selection is discrete).
    pub adjacency: Tensor,
    /// Original node id per surviving row.
    pub live: Vec<usize>,
    pub outcomes: Vec<PoolingOutcome>,
}

/// Value-level Context Graph snapshot.
#[derive(Debug, Clone)]
pub struct ContextGraph {
    pub sentence: Tensor,
    pub head: Tensor,
    pub tail: Tensor,
    pub readout: Tensor,
    pub features: Tensor,
    pub adjacency: Tensor,
    pub live: Vec<usize>,
    pub outcomes: Vec<PoolingOutcome>,
}

impl ContextGraph {
    /// Mean degree of the two entity nodes in the pooled graph.
    pub fn entity_degree(&self) -> f64 {
        let d1: f64 = self.adjacency.row_slice(1).iter().sum();
        let d2: f64 = self.adjacency.row_slice(2).iter().sum();
        (d1 + d2) / 2.0
    }

    pub fn snapshot(tape: &Tape, vars: &ContextGraphVars) -> ContextGraph {
        ContextGraph {
            sentence: tape.value(vars.sentence).clone(),
            head: tape.value(vars.head).clone(),
            tail: tape.value(vars.tail).clone(),
            readout: tape.value(vars.readout).clone(),
            features: tape.value(vars.features).clone(),
            adjacency: vars.adjacency.clone(),
            live: vars.live.clone(),
            outcomes: vars.outcomes.clone(),
        }
    }
}

/// Which blocks pool and whether the pooled block's readout summarizes the
/// graph before or after pooling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolingPlacement {
    /// 1-based block indices that pool; default `[3]` (last block only).
    pub pool_blocks: Vec<usize>,
    pub readout_before_pool: bool,
}

impl Default for PoolingPlacement {
    fn default() -> Self {
        PoolingPlacement {
            pool_blocks: vec![3],
            readout_before_pool: false,
        }
    }
}

/// Run the full pooling stack over an encoded HIG.
///
/// `pinned_kept`, when given, bypasses threshold selection and keeps
/// exactly the listed attribute node ids (one list per pooling block, in
/// block order) — used to hold the discrete kept set fixed during
/// gradient checks.
pub fn forward_context_pooling(
    tape: &mut Tape,
    params: &GcnParams<Var>,
    topo: &HigTopology,
    features: Var,
    alpha: f64,
    placement: &PoolingPlacement,
    pinned_kept: Option<&[Vec<usize>]>,
) -> Result<ContextGraphVars> {
    if alpha < 0.0 {
        return Err(Error::Eval(format!(
            "context coefficient must be non-negative, got {alpha}"
        )));
    }
    let mut live: Vec<usize> = (0..topo.node_count()).collect();
    let mut adjacency = topo.adjacency.clone();
    let mut f = features;
    let mut sentence_parts = Vec::new();
    let mut head_parts = Vec::new();
    let mut tail_parts = Vec::new();
    let mut readouts = Vec::new();
    let mut outcomes = Vec::new();
    let mut pin_iter = pinned_kept.map(|p| p.iter());

    for (bi, &theta) in params.blocks.iter().enumerate() {
        let block = bi + 1;
        let l_hat = tape.constant(normalized_operator(&adjacency));
        f = gcn_layer_taped(tape, l_hat, f, theta)?;
        let f_before_pool = f;

        if placement.pool_blocks.contains(&block) {
            let attr_pos: Vec<usize> = live
                .iter()
                .enumerate()
                .filter(|(_, &orig)| topo.roles[orig].is_attribute())
                .map(|(p, _)| p)
                .collect();
            let pinned = pin_iter.as_mut().and_then(|it| it.next());

            if attr_pos.is_empty() {
                // Nothing to pool: identity on the core graph.
                outcomes.push(PoolingOutcome {
                    block,
                    kept_idx: live.clone(),
                    attr_ids: Vec::new(),
                    z_score: Vec::new(),
                    threshold: None,
                    f_out: tape.value(f).clone(),
                    a_out: adjacency.clone(),
                });
            } else {
                let attr_ids: Vec<usize> = attr_pos.iter().map(|&p| live[p]).collect();
                let z_all = attention_scores_taped(tape, l_hat, f, params.attention)?;
                let z_attr = tape.gather_rows(z_all, &attr_pos);
                let z_row = tape.transpose(z_attr);
                let z_score = tape.row_softmax(z_row);
                let z_vals: Vec<f64> = tape.value(z_score).data().to_vec();

                let (kept_local, threshold) = match pinned {
                    Some(ids) => {
                        let kept = attr_ids
                            .iter()
                            .enumerate()
                            .filter(|(_, id)| ids.contains(id))
                            .map(|(i, _)| i)
                            .collect::<Vec<_>>();
                        let (_, t) = select_nodes(&z_vals, alpha);
                        (kept, t)
                    }
                    None => select_nodes(&z_vals, alpha),
                };

                let mut kept_positions = vec![0usize, 1, 2];
                kept_positions.extend(kept_local.iter().map(|&k| attr_pos[k]));
                let f_kept = tape.gather_rows(f, &kept_positions);

                let core_ones = tape.constant(Tensor::ones(3, 1));
                let mask = if kept_local.is_empty() {
                    core_ones
                } else {
                    let z_col = tape.transpose(z_score);
                    let z_kept = tape.gather_rows(z_col, &kept_local);
                    tape.concat_rows(&[core_ones, z_kept])?
                };
                f = tape.scale_rows(f_kept, mask)?;
                adjacency = induced_submatrix(&adjacency, &kept_positions);
                live = kept_positions.iter().map(|&p| live[p]).collect();

                outcomes.push(PoolingOutcome {
                    block,
                    kept_idx: live.clone(),
                    attr_ids,
                    z_score: z_vals,
                    threshold,
                    f_out: tape.value(f).clone(),
                    a_out: adjacency.clone(),
                });
            }
            let target = if placement.readout_before_pool {
                f_before_pool
            } else {
                f
            };
            readouts.push(readout_taped(tape, target)?);
        } else {
            readouts.push(readout_taped(tape, f)?);
        }

        // Core nodes keep positions 0..2 in every surviving graph.
        sentence_parts.push(tape.gather_rows(f, &[0]));
        head_parts.push(tape.gather_rows(f, &[1]));
        tail_parts.push(tape.gather_rows(f, &[2]));
    }

    Ok(ContextGraphVars {
        sentence: tape.concat_cols(&sentence_parts)?,
        head: tape.concat_cols(&head_parts)?,
        tail: tape.concat_cols(&tail_parts)?,
        readout: tape.concat_cols(&readouts)?,
        features: f,
        adjacency,
        live,
        outcomes,
    })
}
