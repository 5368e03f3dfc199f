//! Vocabulary, pretrained word vectors, and Bi-LSTM sequence encoders.
//!
//! One shared Bi-LSTM turns token sequences into fixed-size vectors for
//! the sentence, the two entity mentions, and every entity attribute, so
//! all graph nodes carry features of the same width `2 * hidden`. An
//! optional character-level encoder augments the sentence encoder only:
//! each sentence token becomes word-vector ⊕ char-Bi-LSTM state, fed to a
//! dedicated sentence Bi-LSTM sized for the wider input.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Whitespace tokenization; attribute strings go through this before
/// encoding.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

/// Token table plus the initial embedding matrix `[V × dim]`.
///
/// The last two rows are reserved: UNK (zero-initialized, trainable) and
/// PAD (zero, frozen — its gradient row is cleared by the optimizer).
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    pub embedding: Tensor,
    dim: usize,
    unk: usize,
    pad: usize,
}

impl Vocabulary {
    /// Build from `(token, vector)` rows; UNK and PAD rows are appended.
    pub fn from_rows(rows: Vec<(String, Vec<f64>)>, dim: usize) -> Self {
        let mut tokens = Vec::with_capacity(rows.len() + 2);
        let mut index = HashMap::with_capacity(rows.len() + 2);
        let mut data = Vec::with_capacity((rows.len() + 2) * dim);
        for (token, vector) in rows {
            debug_assert_eq!(vector.len(), dim);
            index.insert(token.clone(), tokens.len());
            tokens.push(token);
            data.extend_from_slice(&vector);
        }
        let unk = tokens.len();
        tokens.push("<unk>".to_string());
        data.resize(data.len() + dim, 0.0);
        let pad = tokens.len();
        tokens.push("<pad>".to_string());
        data.resize(data.len() + dim, 0.0);
        let embedding = Tensor::new(tokens.len(), dim, data);
        Vocabulary {
            tokens,
            index,
            embedding,
            dim,
            unk,
            pad,
        }
    }

    /// Rebuild from a serialized token list and a (possibly trained)
    /// embedding matrix.
    pub fn from_parts(tokens: Vec<String>, dim: usize, embedding: Tensor) -> Result<Self> {
        if tokens.len() < 2 || embedding.shape() != (tokens.len(), dim) {
            return Err(Error::Checkpoint(format!(
                "vocabulary shape mismatch: {} tokens vs embedding {:?}",
                tokens.len(),
                embedding.shape()
            )));
        }
        let index = tokens
            .iter()
            .enumerate()
            .take(tokens.len() - 2)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let unk = tokens.len() - 2;
        let pad = tokens.len() - 1;
        Ok(Vocabulary {
            tokens,
            index,
            embedding,
            dim,
            unk,
            pad,
        })
    }

    /// Exact match first, then lowercase, else UNK.
    pub fn lookup(&self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let lower = token.to_lowercase();
        self.index.get(&lower).copied().unwrap_or(self.unk)
    }

    pub fn lookup_all(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.lookup(t)).collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn unk_index(&self) -> usize {
        self.unk
    }

    pub fn pad_index(&self) -> usize {
        self.pad
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Load a word-vector text file: one entry per line,
/// `token<space>f1<space>...<space>fdim`, UTF-8.
pub fn load_embeddings(path: &Path, dim: usize) -> Result<Vocabulary> {
    let file = File::open(path).map_err(|e| {
        Error::Data(format!(
            "cannot open embedding file {}: {e}",
            path.display()
        ))
    })?;
    let reader = BufReader::new(file);
    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts
            .next()
            .ok_or_else(|| parse_err(path, lineno, "missing token"))?
            .to_string();
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| parse_err(path, lineno, &format!("bad float {p:?}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(parse_err(
                path,
                lineno,
                &format!("expected {dim} floats, found {}", values.len()),
            ));
        }
        if let Some(first) = seen.insert(token.clone(), lineno) {
            return Err(parse_err(
                path,
                lineno,
                &format!("duplicate token {token:?} (first seen on line {first})"),
            ));
        }
        rows.push((token, values));
    }
    if rows.is_empty() {
        log::warn!("embedding file {} has no entries", path.display());
    }
    Ok(Vocabulary::from_rows(rows, dim))
}

fn parse_err(path: &Path, line: usize, message: &str) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.to_string(),
    }
}

// ---------------------------------------------------------------------------
// LSTM parameters
// ---------------------------------------------------------------------------

/// One LSTM direction. Each gate weight is `[(input+hidden) × hidden]`
/// applied to the concatenation `x_t ⊕ h_{t-1}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LstmDirection<T> {
    pub w_input: T,
    pub w_forget: T,
    pub w_cell: T,
    pub w_output: T,
    pub b_input: T,
    pub b_forget: T,
    pub b_cell: T,
    pub b_output: T,
}

impl<T> LstmDirection<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> LstmDirection<U> {
        LstmDirection {
            w_input: f(&self.w_input),
            w_forget: f(&self.w_forget),
            w_cell: f(&self.w_cell),
            w_output: f(&self.w_output),
            b_input: f(&self.b_input),
            b_forget: f(&self.b_forget),
            b_cell: f(&self.b_cell),
            b_output: f(&self.b_output),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a T)) {
        f(format!("{prefix}.w_input"), &self.w_input);
        f(format!("{prefix}.w_forget"), &self.w_forget);
        f(format!("{prefix}.w_cell"), &self.w_cell);
        f(format!("{prefix}.w_output"), &self.w_output);
        f(format!("{prefix}.b_input"), &self.b_input);
        f(format!("{prefix}.b_forget"), &self.b_forget);
        f(format!("{prefix}.b_cell"), &self.b_cell);
        f(format!("{prefix}.b_output"), &self.b_output);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut impl FnMut(String, &'a mut T)) {
        f(format!("{prefix}.w_input"), &mut self.w_input);
        f(format!("{prefix}.w_forget"), &mut self.w_forget);
        f(format!("{prefix}.w_cell"), &mut self.w_cell);
        f(format!("{prefix}.w_output"), &mut self.w_output);
        f(format!("{prefix}.b_input"), &mut self.b_input);
        f(format!("{prefix}.b_forget"), &mut self.b_forget);
        f(format!("{prefix}.b_cell"), &mut self.b_cell);
        f(format!("{prefix}.b_output"), &mut self.b_output);
    }
}

impl LstmDirection<Tensor> {
    pub fn init<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let gate = |rng: &mut R| Tensor::glorot(input_dim + hidden, hidden, rng);
        LstmDirection {
            w_input: gate(rng),
            w_forget: gate(rng),
            w_cell: gate(rng),
            w_output: gate(rng),
            b_input: Tensor::zeros(1, hidden),
            // forget bias at 1 keeps early cell state flowing
            b_forget: Tensor::ones(1, hidden),
            b_cell: Tensor::zeros(1, hidden),
            b_output: Tensor::zeros(1, hidden),
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        LstmDirection {
            w_input: Tensor::zeros(input_dim + hidden, hidden),
            w_forget: Tensor::zeros(input_dim + hidden, hidden),
            w_cell: Tensor::zeros(input_dim + hidden, hidden),
            w_output: Tensor::zeros(input_dim + hidden, hidden),
            b_input: Tensor::zeros(1, hidden),
            b_forget: Tensor::zeros(1, hidden),
            b_cell: Tensor::zeros(1, hidden),
            b_output: Tensor::zeros(1, hidden),
        }
    }
}

/// Bi-directional LSTM; output is forward-final ⊕ backward-final,
/// dimension `2 * hidden` regardless of sequence length.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiLstm<T> {
    pub forward: LstmDirection<T>,
    pub backward: LstmDirection<T>,
}

pub type BiLstmParams = BiLstm<Tensor>;

impl<T> BiLstm<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> BiLstm<U> {
        BiLstm {
            forward: self.forward.map(f),
            backward: self.backward.map(f),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a T)) {
        self.forward.visit(&format!("{prefix}.fwd"), f);
        self.backward.visit(&format!("{prefix}.bwd"), f);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut impl FnMut(String, &'a mut T)) {
        self.forward.visit_mut(&format!("{prefix}.fwd"), f);
        self.backward.visit_mut(&format!("{prefix}.bwd"), f);
    }
}

impl BiLstm<Tensor> {
    pub fn init<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        BiLstm {
            forward: LstmDirection::init(input_dim, hidden, rng),
            backward: LstmDirection::init(input_dim, hidden, rng),
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        BiLstm {
            forward: LstmDirection::zeros(input_dim, hidden),
            backward: LstmDirection::zeros(input_dim, hidden),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.forward.b_input.cols()
    }
}

// ---------------------------------------------------------------------------
// Character-level sentence encoder
// ---------------------------------------------------------------------------

/// Character table; sorted for deterministic indices, UNK row last.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CharVocab {
    chars: Vec<char>,
    #[serde(skip)]
    index: HashMap<char, usize>,
}

impl CharVocab {
    pub fn from_tokens<'a>(tokens: impl Iterator<Item = &'a str>) -> Self {
        let mut chars: Vec<char> = tokens.flat_map(|t| t.chars()).collect();
        chars.sort_unstable();
        chars.dedup();
        CharVocab::from_chars(chars)
    }

    pub fn from_chars(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        CharVocab { chars, index }
    }

    pub fn rebuild_index(&mut self) {
        self.index = self
            .chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i))
            .collect();
    }

    pub fn lookup(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(self.chars.len())
    }

    /// Rows needed in the char embedding matrix (all chars + UNK).
    pub fn rows(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }
}

/// Sentence encoder with character features. `sentence_lstm` consumes
/// word-vector ⊕ char-Bi-LSTM-state inputs; entity and attribute nodes
/// keep using the plain word encoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CharSentenceEncoder<T> {
    pub vocab: CharVocab,
    pub char_embedding: T,
    pub char_lstm: BiLstm<T>,
    pub sentence_lstm: BiLstm<T>,
}

impl<T> CharSentenceEncoder<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> CharSentenceEncoder<U> {
        CharSentenceEncoder {
            vocab: self.vocab.clone(),
            char_embedding: f(&self.char_embedding),
            char_lstm: self.char_lstm.map(f),
            sentence_lstm: self.sentence_lstm.map(f),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a T)) {
        f(format!("{prefix}.char_embedding"), &self.char_embedding);
        self.char_lstm.visit(&format!("{prefix}.char_lstm"), f);
        self.sentence_lstm
            .visit(&format!("{prefix}.sentence_lstm"), f);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut impl FnMut(String, &'a mut T)) {
        f(format!("{prefix}.char_embedding"), &mut self.char_embedding);
        self.char_lstm.visit_mut(&format!("{prefix}.char_lstm"), f);
        self.sentence_lstm
            .visit_mut(&format!("{prefix}.sentence_lstm"), f);
    }
}

/// Everything needed to turn token text into node features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderSet<T> {
    /// Word embedding matrix, `[V × word_dim]`.
    pub embedding: T,
    /// Shared Bi-LSTM for sentence, entities, and attributes.
    pub word_lstm: BiLstm<T>,
    /// When present, the sentence node is encoded with characters.
    pub char_part: Option<CharSentenceEncoder<T>>,
}

impl<T> EncoderSet<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> EncoderSet<U> {
        EncoderSet {
            embedding: f(&self.embedding),
            word_lstm: self.word_lstm.map(f),
            char_part: self.char_part.as_ref().map(|c| c.map(f)),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a T)) {
        f("embedding".to_string(), &self.embedding);
        self.word_lstm.visit("word_lstm", f);
        if let Some(c) = &self.char_part {
            c.visit("char", f);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(String, &'a mut T)) {
        f("embedding".to_string(), &mut self.embedding);
        self.word_lstm.visit_mut("word_lstm", f);
        if let Some(c) = &mut self.char_part {
            c.visit_mut("char", f);
        }
    }
}

// ---------------------------------------------------------------------------
// Taped encoding
// ---------------------------------------------------------------------------

fn lstm_final_state<'a>(
    tape: &mut Tape,
    p: &LstmDirection<Var>,
    inputs: impl Iterator<Item = &'a Var>,
) -> Result<Var> {
    let hidden = tape.value(p.b_input).cols();
    let mut h = tape.constant(Tensor::zeros(1, hidden));
    let mut c = tape.constant(Tensor::zeros(1, hidden));
    for &x in inputs {
        let xh = tape.concat_cols(&[x, h])?;
        let i_lin = tape.matmul(xh, p.w_input)?;
        let i_lin = tape.add(i_lin, p.b_input)?;
        let i = tape.sigmoid(i_lin);
        let f_lin = tape.matmul(xh, p.w_forget)?;
        let f_lin = tape.add(f_lin, p.b_forget)?;
        let f = tape.sigmoid(f_lin);
        let g_lin = tape.matmul(xh, p.w_cell)?;
        let g_lin = tape.add(g_lin, p.b_cell)?;
        let g = tape.tanh(g_lin);
        let o_lin = tape.matmul(xh, p.w_output)?;
        let o_lin = tape.add(o_lin, p.b_output)?;
        let o = tape.sigmoid(o_lin);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        c = tape.add(fc, ig)?;
        let ct = tape.tanh(c);
        h = tape.mul(o, ct)?;
    }
    Ok(h)
}

/// Run a Bi-LSTM over per-token input vars and return the concatenated
/// final states, `[1 × 2*hidden]`.
pub fn bilstm_encode(tape: &mut Tape, p: &BiLstm<Var>, inputs: &[Var]) -> Result<Var> {
    if inputs.is_empty() {
        return Err(Error::Encoding(
            "cannot encode an empty token sequence".to_string(),
        ));
    }
    let fwd = lstm_final_state(tape, &p.forward, inputs.iter())?;
    let bwd = lstm_final_state(tape, &p.backward, inputs.iter().rev())?;
    tape.concat_cols(&[fwd, bwd])
}

/// Encode token ids through the word embedding and a Bi-LSTM.
pub fn encode_token_ids(
    tape: &mut Tape,
    lstm: &BiLstm<Var>,
    embedding: Var,
    ids: &[usize],
) -> Result<Var> {
    let inputs: Vec<Var> = ids
        .iter()
        .map(|&id| tape.gather_rows(embedding, &[id]))
        .collect();
    bilstm_encode(tape, lstm, &inputs)
}

/// Sentence encoding with per-token characters:
/// each token becomes word-vector ⊕ char-Bi-LSTM state before the
/// sentence-level Bi-LSTM runs.
pub fn encode_tokens_with_chars(
    tape: &mut Tape,
    enc: &CharSentenceEncoder<Var>,
    embedding: Var,
    tokens: &[String],
    ids: &[usize],
) -> Result<Var> {
    debug_assert_eq!(tokens.len(), ids.len());
    let mut inputs = Vec::with_capacity(tokens.len());
    for (token, &id) in tokens.iter().zip(ids) {
        let word = tape.gather_rows(embedding, &[id]);
        let char_ids: Vec<usize> = token.chars().map(|c| enc.vocab.lookup(c)).collect();
        let char_inputs: Vec<Var> = char_ids
            .iter()
            .map(|&cid| tape.gather_rows(enc.char_embedding, &[cid]))
            .collect();
        let char_vec = bilstm_encode(tape, &enc.char_lstm, &char_inputs)?;
        inputs.push(tape.concat_cols(&[word, char_vec])?);
    }
    bilstm_encode(tape, &enc.sentence_lstm, &inputs)
}

// ---------------------------------------------------------------------------
// Value-level wrappers
// ---------------------------------------------------------------------------

/// Encode a token sequence with frozen parameters, using the vocabulary's
/// own embedding matrix. Pure in (tokens, params, vocab).
pub fn encode_sequence(
    tokens: &[String],
    params: &BiLstmParams,
    vocab: &Vocabulary,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let emb = tape.constant(vocab.embedding.clone());
    let lstm = params.map(&mut |t: &Tensor| tape.constant(t.clone()));
    let out = encode_token_ids(&mut tape, &lstm, emb, &vocab.lookup_all(tokens))?;
    Ok(tape.value(out).clone())
}

/// Sentence encoding with optional character features; with `char_part`
/// absent this is exactly [`encode_sequence`].
pub fn encode_with_chars(
    tokens: &[String],
    word_params: &BiLstmParams,
    char_part: Option<&CharSentenceEncoder<Tensor>>,
    vocab: &Vocabulary,
) -> Result<Tensor> {
    match char_part {
        None => encode_sequence(tokens, word_params, vocab),
        Some(c) => {
            let mut tape = Tape::new();
            let emb = tape.constant(vocab.embedding.clone());
            let enc = c.map(&mut |t: &Tensor| tape.constant(t.clone()));
            let out =
                encode_tokens_with_chars(&mut tape, &enc, emb, tokens, &vocab.lookup_all(tokens))?;
            Ok(tape.value(out).clone())
        }
    }
}
