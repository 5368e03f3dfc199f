//! The Heterogeneous Information Graph: one sentence node, two entity
//! nodes, and one node per available entity attribute.
//!
//! Topology is fixed by construction: the sentence node links to both
//! entities, and each attribute node links only to its owner entity, so
//! every attribute node has degree 1 and node count is
//! `3 + #attrs(head) + #attrs(tail)`. There is no entity–entity edge by
//! default (messages still travel between entities in two hops through
//! the sentence node); a config flag adds it for ablations.

use serde::{Deserialize, Serialize};

use crate::encoder::{self, EncoderSet, Vocabulary};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// An entity mention inside a sentence: KG identifier plus a half-open
/// token span `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub kg_id: String,
    pub span: (usize, usize),
}

/// One labelled training/evaluation example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceInstance {
    pub tokens: Vec<String>,
    pub head: EntityMention,
    pub tail: EntityMention,
    pub relation: String,
}

impl SentenceInstance {
    pub fn head_tokens(&self) -> &[String] {
        &self.tokens[self.head.span.0..self.head.span.1]
    }

    pub fn tail_tokens(&self) -> &[String] {
        &self.tokens[self.tail.span.0..self.tail.span.1]
    }
}

/// KG context for one entity: the four commonly available properties,
/// plus `extra` as a format hook — each entry becomes one more attribute
/// node, so richer context (verbalized neighbor triples, for instance)
/// can flow through the same interface without new machinery here.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityAttributes {
    pub kg_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub instance_of: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttributeKind {
    Label,
    Alias,
    Description,
    InstanceOf,
    Extra,
}

impl AttributeKind {
    pub fn name(self) -> &'static str {
        match self {
            AttributeKind::Label => "label",
            AttributeKind::Alias => "alias",
            AttributeKind::Description => "description",
            AttributeKind::InstanceOf => "instance_of",
            AttributeKind::Extra => "extra",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeRole {
    Sentence,
    Head,
    Tail,
    /// `owner` is the node index of the owning entity (1 = head, 2 = tail).
    Attribute {
        owner: usize,
        kind: AttributeKind,
    },
}

impl NodeRole {
    pub fn is_attribute(&self) -> bool {
        matches!(self, NodeRole::Attribute { .. })
    }
}

/// Graph-construction knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HigConfig {
    /// Join all aliases into a single attribute node (default) or emit
    /// one node per alias.
    pub alias_single_node: bool,
    /// Direct head–tail edge, off by default.
    pub entity_entity_edge: bool,
    /// Hard cap on node count; alias nodes are dropped first.
    pub max_nodes: usize,
    /// Attribute token sequences longer than this are truncated.
    pub max_attr_tokens: usize,
}

impl Default for HigConfig {
    fn default() -> Self {
        HigConfig {
            alias_single_node: true,
            entity_entity_edge: false,
            max_nodes: 64,
            max_attr_tokens: 64,
        }
    }
}

/// Everything about a HIG except node features: adjacency, roles, and the
/// token sequence each node encodes.
#[derive(Debug, Clone)]
pub struct HigTopology {
    pub adjacency: Tensor,
    pub roles: Vec<NodeRole>,
    /// Tokens to encode per node, aligned with `roles`.
    pub node_tokens: Vec<Vec<String>>,
    /// Short display label per node, for pooling reports.
    pub node_labels: Vec<String>,
    pub warnings: Vec<String>,
}

impl HigTopology {
    pub fn node_count(&self) -> usize {
        self.roles.len()
    }

    pub fn attribute_indices(&self) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_attribute())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn degree(&self, node: usize) -> f64 {
        self.adjacency.row_slice(node).iter().sum()
    }
}

/// A fully built HIG with encoded node features `[n × f]`.
#[derive(Debug, Clone)]
pub struct Hig {
    pub topology: HigTopology,
    pub features: Tensor,
}

impl Hig {
    pub fn adjacency(&self) -> &Tensor {
        &self.topology.adjacency
    }

    /// Mean degree of the two entity nodes.
    pub fn entity_degree(&self) -> f64 {
        (self.topology.degree(1) + self.topology.degree(2)) / 2.0
    }
}

struct AttrNode {
    owner: usize,
    kind: AttributeKind,
    tokens: Vec<String>,
    label: String,
}

fn attribute_nodes(
    entity_node: usize,
    entity_name: &str,
    attrs: &EntityAttributes,
    cfg: &HigConfig,
) -> Vec<AttrNode> {
    let truncate = |mut tokens: Vec<String>| {
        tokens.truncate(cfg.max_attr_tokens);
        tokens
    };
    let mut nodes = Vec::new();
    let mut push = |kind: AttributeKind, text: &str| {
        let tokens = truncate(encoder::tokenize(text));
        if !tokens.is_empty() {
            nodes.push(AttrNode {
                owner: entity_node,
                kind,
                tokens,
                label: format!("{entity_name}:{}", kind.name()),
            });
        }
    };
    if let Some(label) = &attrs.label {
        push(AttributeKind::Label, label);
    }
    if !attrs.aliases.is_empty() {
        if cfg.alias_single_node {
            push(AttributeKind::Alias, &attrs.aliases.join(" "));
        } else {
            for alias in &attrs.aliases {
                push(AttributeKind::Alias, alias);
            }
        }
    }
    if let Some(description) = &attrs.description {
        push(AttributeKind::Description, description);
    }
    if !attrs.instance_of.is_empty() {
        push(AttributeKind::InstanceOf, &attrs.instance_of.join(" "));
    }
    for text in &attrs.extra {
        push(AttributeKind::Extra, text);
    }
    nodes
}

/// Assemble the graph structure for one instance. A missing attribute
/// entry produces zero attribute nodes for that entity plus a warning
/// record; it never fails the build.
pub fn build_topology(
    inst: &SentenceInstance,
    head_attrs: Option<&EntityAttributes>,
    tail_attrs: Option<&EntityAttributes>,
    cfg: &HigConfig,
) -> HigTopology {
    let mut warnings = Vec::new();
    let mut attr_nodes = Vec::new();
    for (node, name, mention, attrs) in [
        (1usize, "head", &inst.head, head_attrs),
        (2usize, "tail", &inst.tail, tail_attrs),
    ] {
        match attrs {
            Some(a) => attr_nodes.extend(attribute_nodes(node, name, a, cfg)),
            None => warnings.push(format!(
                "no attribute entry for {name} entity {}; building without its context",
                mention.kg_id
            )),
        }
    }

    // Enforce the node cap, dropping alias nodes first, then the rest in
    // reverse construction order.
    let cap = cfg.max_nodes.saturating_sub(3);
    if attr_nodes.len() > cap {
        warnings.push(format!(
            "HIG would have {} nodes; dropping {} attribute node(s) to fit the cap of {}",
            attr_nodes.len() + 3,
            attr_nodes.len() - cap,
            cfg.max_nodes
        ));
        let mut order: Vec<usize> = (0..attr_nodes.len()).collect();
        order.sort_by_key(|&i| {
            let priority = match attr_nodes[i].kind {
                AttributeKind::Alias => 0,
                AttributeKind::Extra => 1,
                _ => 2,
            };
            (priority, std::cmp::Reverse(i))
        });
        let drop: std::collections::HashSet<usize> =
            order.into_iter().take(attr_nodes.len() - cap).collect();
        attr_nodes = attr_nodes
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !drop.contains(i))
            .map(|(_, n)| n)
            .collect();
    }

    let n = 3 + attr_nodes.len();
    let mut adjacency = Tensor::zeros(n, n);
    let mut connect = |a: usize, b: usize| {
        adjacency.set(a, b, 1.0);
        adjacency.set(b, a, 1.0);
    };
    connect(0, 1);
    connect(0, 2);
    if cfg.entity_entity_edge {
        connect(1, 2);
    }

    let mut roles = vec![NodeRole::Sentence, NodeRole::Head, NodeRole::Tail];
    let mut node_tokens = vec![
        inst.tokens.clone(),
        inst.head_tokens().to_vec(),
        inst.tail_tokens().to_vec(),
    ];
    let mut node_labels = vec![
        "sentence".to_string(),
        format!("head({})", inst.head.kg_id),
        format!("tail({})", inst.tail.kg_id),
    ];
    for (offset, node) in attr_nodes.into_iter().enumerate() {
        let idx = 3 + offset;
        connect(idx, node.owner);
        roles.push(NodeRole::Attribute {
            owner: node.owner,
            kind: node.kind,
        });
        node_tokens.push(node.tokens);
        node_labels.push(node.label);
    }

    HigTopology {
        adjacency,
        roles,
        node_tokens,
        node_labels,
        warnings,
    }
}

/// Encode every node's token sequence on the tape; rows follow node order.
/// The sentence node goes through the character-augmented encoder when
/// one is configured; all other nodes use the shared word encoder.
pub fn encode_nodes(
    tape: &mut Tape,
    enc: &EncoderSet<Var>,
    topo: &HigTopology,
    vocab: &Vocabulary,
) -> Result<Var> {
    let mut rows = Vec::with_capacity(topo.node_count());
    for (i, tokens) in topo.node_tokens.iter().enumerate() {
        if tokens.is_empty() {
            return Err(Error::Encoding(format!(
                "node {i} ({}) has no tokens to encode",
                topo.node_labels[i]
            )));
        }
        let ids = vocab.lookup_all(tokens);
        let row = match (&enc.char_part, &topo.roles[i]) {
            (Some(c), NodeRole::Sentence) => {
                encoder::encode_tokens_with_chars(tape, c, enc.embedding, tokens, &ids)?
            }
            _ => encoder::encode_token_ids(tape, &enc.word_lstm, enc.embedding, &ids)?,
        };
        rows.push(row);
    }
    tape.concat_rows(&rows)
}

/// Build a complete HIG with frozen parameters. This is the value-level
/// entry point; training uses [`build_topology`] + [`encode_nodes`] on a
/// live tape instead.
pub fn build_hig(
    inst: &SentenceInstance,
    head_attrs: Option<&EntityAttributes>,
    tail_attrs: Option<&EntityAttributes>,
    encoders: &EncoderSet<Tensor>,
    vocab: &Vocabulary,
    cfg: &HigConfig,
) -> Result<Hig> {
    let topology = build_topology(inst, head_attrs, tail_attrs, cfg);
    for w in &topology.warnings {
        log::warn!("{w}");
    }
    let mut tape = Tape::new();
    let enc = encoders.map(&mut |t: &Tensor| tape.constant(t.clone()));
    let features = encode_nodes(&mut tape, &enc, &topology, vocab)?;
    let features = tape.value(features).clone();
    Ok(Hig { topology, features })
}
