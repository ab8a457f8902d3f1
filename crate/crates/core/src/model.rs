//! Tiny next-token models over a character vocabulary.
//!
//! Two families are supported:
//!
//! * a neural model: the last `k` token embeddings are concatenated, passed
//!   through one `tanh` hidden layer and projected to vocabulary logits;
//! * an add-δ smoothed n-gram model, used as a cheap baseline policy.
//!
//! Contexts shorter than the model window are left-padded with BOS, so every
//! decoding step is well defined, including the first one after an empty
//! prompt.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::log_softmax_in_place;
use crate::vocab::{Sequence, TokenId, Vocab, BOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Neural,
    Ngram,
}

/// Shape of a neural model: vocabulary size, embedding width, hidden width
/// and context window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuralDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub context: usize,
}

impl NeuralDims {
    pub fn new(vocab: usize, embed: usize, hidden: usize, context: usize) -> Self {
        Self {
            vocab,
            embed,
            hidden,
            context,
        }
    }

    /// Default weak-model shape.
    pub fn weak(vocab: usize) -> Self {
        Self::new(vocab, 16, 32, 4)
    }

    /// Default strong-model shape.
    pub fn strong(vocab: usize) -> Self {
        Self::new(vocab, 32, 128, 8)
    }

    pub fn param_count(&self) -> usize {
        self.ranges()[4].end
    }

    fn validate(&self) -> Result<()> {
        if self.vocab < 2 || self.embed == 0 || self.hidden == 0 || self.context == 0 {
            return Err(Error::Shape(format!("degenerate dimensions {self:?}")));
        }
        Ok(())
    }

    /// Offsets of embedding, hidden weight, hidden bias, output weight and
    /// output bias inside the flat parameter vector.
    fn ranges(&self) -> [Range<usize>; 5] {
        let sizes = [
            self.vocab * self.embed,
            self.context * self.embed * self.hidden,
            self.hidden,
            self.hidden * self.vocab,
            self.vocab,
        ];
        let mut start = 0;
        sizes.map(|len| {
            let r = start..start + len;
            start += len;
            r
        })
    }
}

/// Parameter names in storage order.
pub const PARAM_NAMES: [&str; 5] = [
    "embedding",
    "hidden_weight",
    "hidden_bias",
    "output_weight",
    "output_bias",
];

/// Flat, row-major parameter storage of a neural model.
///
/// * `embedding`: `V × d`
/// * `hidden_weight`: `(k·d) × h`, rows grouped by context position (oldest first)
/// * `hidden_bias`: `h`
/// * `output_weight`: `h × V`
/// * `output_bias`: `V`
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralParams {
    dims: NeuralDims,
    values: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type ParamGrad = NeuralParams;

impl NeuralParams {
    pub fn zeros(dims: NeuralDims) -> Self {
        Self {
            dims,
            values: vec![0.0; dims.param_count()],
        }
    }

    /// Every entry drawn i.i.d. from `N(0, scale²)`.
    pub fn random<R: Rng + ?Sized>(dims: NeuralDims, scale: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, scale).expect("scale must be finite and non-negative");
        let values = (0..dims.param_count())
            .map(|_| normal.sample(rng))
            .collect();
        Self { dims, values }
    }

    /// Assembles parameters from named arrays in [`PARAM_NAMES`] order.
    pub fn from_arrays(dims: NeuralDims, arrays: [Vec<f64>; 5]) -> Result<Self> {
        dims.validate()?;
        let ranges = dims.ranges();
        let mut values = Vec::with_capacity(dims.param_count());
        for ((name, range), array) in PARAM_NAMES.iter().zip(ranges).zip(arrays) {
            if array.len() != range.len() {
                return Err(Error::Shape(format!(
                    "{name}: expected {} values, found {}",
                    range.len(),
                    array.len()
                )));
            }
            values.extend(array);
        }
        Ok(Self { dims, values })
    }

    pub fn dims(&self) -> NeuralDims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `(name, slice)` for each parameter block.
    pub fn named_arrays(&self) -> impl Iterator<Item = (&'static str, &[f64])> {
        PARAM_NAMES
            .into_iter()
            .zip(self.dims.ranges())
            .map(move |(name, r)| (name, &self.values[r]))
    }

    pub fn embedding(&self) -> &[f64] {
        &self.values[self.dims.ranges()[0].clone()]
    }

    pub fn hidden_weight(&self) -> &[f64] {
        &self.values[self.dims.ranges()[1].clone()]
    }

    pub fn hidden_bias(&self) -> &[f64] {
        &self.values[self.dims.ranges()[2].clone()]
    }

    pub fn output_weight(&self) -> &[f64] {
        &self.values[self.dims.ranges()[3].clone()]
    }

    pub fn output_bias(&self) -> &[f64] {
        &self.values[self.dims.ranges()[4].clone()]
    }

    /// Mutable views of all five blocks at once.
    pub(crate) fn blocks_mut(&mut self) -> [&mut [f64]; 5] {
        let [r0, r1, r2, r3, _] = self.dims.ranges();
        let (emb, rest) = self.values.split_at_mut(r0.end);
        let (hw, rest) = rest.split_at_mut(r1.len());
        let (hb, rest) = rest.split_at_mut(r2.len());
        let (ow, ob) = rest.split_at_mut(r3.len());
        [emb, hw, hb, ow, ob]
    }

    /// `self -= step * grad`.
    pub fn sub_scaled(&mut self, grad: &ParamGrad, step: f64) -> Result<()> {
        if grad.dims != self.dims {
            return Err(Error::Shape(
                "gradient layout differs from parameters".into(),
            ));
        }
        for (p, g) in self.values.iter_mut().zip(&grad.values) {
            *p -= step * g;
        }
        Ok(())
    }
}

/// Add-δ smoothed n-gram statistics. An order-`n` model conditions on the
/// previous `n - 1` tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramParams {
    order: usize,
    smoothing: f64,
    counts: BTreeMap<Vec<TokenId>, Vec<u64>>,
}

impl NGramParams {
    pub fn new(order: usize, smoothing: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidConfig(
                "n-gram order must be at least 1".into(),
            ));
        }
        if !(smoothing > 0.0 && smoothing.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "n-gram smoothing must be positive, got {smoothing}"
            )));
        }
        Ok(Self {
            order,
            smoothing,
            counts: BTreeMap::new(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn context_len(&self) -> usize {
        self.order - 1
    }

    pub fn counts(&self) -> &BTreeMap<Vec<TokenId>, Vec<u64>> {
        &self.counts
    }

    /// Adds `amount` observations of `token` after `context` (the last
    /// `order - 1` tokens, BOS-padded).
    pub fn add_count(
        &mut self,
        vocab_size: usize,
        context: &[TokenId],
        token: TokenId,
        amount: u64,
    ) {
        let row = self
            .counts
            .entry(context.to_vec())
            .or_insert_with(|| vec![0; vocab_size]);
        row[token] += amount;
    }

    /// Counts every response token of `(prompt, response)` examples.
    pub fn fit<'a, I>(vocab: &Vocab, order: usize, smoothing: f64, examples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [TokenId], &'a [TokenId])>,
    {
        let mut params = Self::new(order, smoothing)?;
        let k = params.context_len();
        for (prompt, response) in examples {
            vocab.check(prompt)?;
            vocab.check(response)?;
            let padded = padded_tokens(prompt, response, k);
            for (t, &tok) in response.iter().enumerate() {
                let start = prompt.len() + t;
                params.add_count(vocab.len(), &padded[start..start + k], tok, 1);
            }
        }
        Ok(params)
    }

    fn logprobs_into(&self, window: &[TokenId], out: &mut [f64]) {
        let v = out.len() as f64;
        match self.counts.get(window) {
            Some(row) => {
                let total: u64 = row.iter().sum();
                let denom = (total as f64 + self.smoothing * v).ln();
                for (o, &c) in out.iter_mut().zip(row) {
                    *o = (c as f64 + self.smoothing).ln() - denom;
                }
            }
            None => out.fill(-v.ln()),
        }
    }
}

/// Neural parameters together with the per-position projection tables
/// `table[j][v] = embedding[v] · hidden_weight[j]`, which turn the input
/// layer into `k` table lookups.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct NeuralNet {
    pub(crate) params: NeuralParams,
    pub(crate) table: Vec<f64>,
}

impl NeuralNet {
    fn new(params: NeuralParams) -> Self {
        let table = Self::build_table(&params);
        Self { params, table }
    }

    fn build_table(params: &NeuralParams) -> Vec<f64> {
        let NeuralDims {
            vocab,
            embed,
            hidden,
            context,
        } = params.dims;
        let emb = params.embedding();
        let hw = params.hidden_weight();
        let mut table = vec![0.0; context * vocab * hidden];
        for j in 0..context {
            for v in 0..vocab {
                let row = &mut table[(j * vocab + v) * hidden..][..hidden];
                for e in 0..embed {
                    let x = emb[v * embed + e];
                    let w = &hw[(j * embed + e) * hidden..][..hidden];
                    for (r, &wi) in row.iter_mut().zip(w) {
                        *r += x * wi;
                    }
                }
            }
        }
        table
    }

    pub(crate) fn dims(&self) -> NeuralDims {
        self.params.dims
    }

    /// Hidden activations for a window of exactly `k` tokens.
    pub(crate) fn hidden_into(&self, window: &[TokenId], hid: &mut [f64]) {
        let NeuralDims { vocab, hidden, .. } = self.params.dims;
        hid.copy_from_slice(self.params.hidden_bias());
        for (j, &tok) in window.iter().enumerate() {
            let row = &self.table[(j * vocab + tok) * hidden..][..hidden];
            for (h, &r) in hid.iter_mut().zip(row) {
                *h += r;
            }
        }
        for h in hid.iter_mut() {
            *h = h.tanh();
        }
    }

    pub(crate) fn logits_into(&self, hid: &[f64], out: &mut [f64]) {
        let vocab = self.params.dims.vocab;
        out.copy_from_slice(self.params.output_bias());
        let ow = self.params.output_weight();
        for (h, &a) in hid.iter().enumerate() {
            let w = &ow[h * vocab..][..vocab];
            for (o, &wi) in out.iter_mut().zip(w) {
                *o += a * wi;
            }
        }
    }

    fn logprobs_into(&self, window: &[TokenId], out: &mut [f64]) {
        let mut hid = vec![0.0; self.params.dims.hidden];
        self.hidden_into(window, &mut hid);
        self.logits_into(&hid, out);
        log_softmax_in_place(out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Body {
    Neural(NeuralNet),
    Ngram(NGramParams),
}

/// A next-token log-probability function over a fixed vocabulary.
///
/// Models are immutable values; evaluation is pure and safe to share across
/// threads. Training produces new models rather than mutating in place.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel {
    vocab: Vocab,
    body: Body,
}

impl LanguageModel {
    pub fn neural(vocab: Vocab, params: NeuralParams) -> Result<Self> {
        params.dims.validate()?;
        if params.dims.vocab != vocab.len() {
            return Err(Error::Shape(format!(
                "parameters expect {} tokens, vocabulary has {}",
                params.dims.vocab,
                vocab.len()
            )));
        }
        if !params.is_finite() {
            return Err(Error::Shape("non-finite parameter".into()));
        }
        Ok(Self {
            vocab,
            body: Body::Neural(NeuralNet::new(params)),
        })
    }

    /// All-zero parameters: the uniform distribution at every context.
    pub fn uniform(vocab: Vocab, dims: NeuralDims) -> Result<Self> {
        Self::neural(vocab, NeuralParams::zeros(dims))
    }

    pub fn random<R: Rng + ?Sized>(
        vocab: Vocab,
        dims: NeuralDims,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Self::neural(vocab, NeuralParams::random(dims, scale, rng))
    }

    pub fn ngram(vocab: Vocab, params: NGramParams) -> Result<Self> {
        if let Some((ctx, row)) = params
            .counts
            .iter()
            .find(|(ctx, row)| ctx.len() != params.context_len() || row.len() != vocab.len())
        {
            return Err(Error::Shape(format!(
                "n-gram row for context {ctx:?} has {} entries",
                row.len()
            )));
        }
        for ctx in params.counts.keys() {
            vocab.check(ctx)?;
        }
        Ok(Self {
            vocab,
            body: Body::Ngram(params),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self.body {
            Body::Neural(_) => ModelKind::Neural,
            Body::Ngram(_) => ModelKind::Ngram,
        }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Number of trailing tokens the model conditions on.
    pub fn context_window(&self) -> usize {
        match &self.body {
            Body::Neural(net) => net.dims().context,
            Body::Ngram(p) => p.context_len(),
        }
    }

    pub fn neural_params(&self) -> Option<&NeuralParams> {
        match &self.body {
            Body::Neural(net) => Some(&net.params),
            Body::Ngram(_) => None,
        }
    }

    pub fn ngram_params(&self) -> Option<&NGramParams> {
        match &self.body {
            Body::Ngram(p) => Some(p),
            Body::Neural(_) => None,
        }
    }

    pub(crate) fn neural_net(&self) -> Option<&NeuralNet> {
        match &self.body {
            Body::Neural(net) => Some(net),
            Body::Ngram(_) => None,
        }
    }

    /// Same vocabulary, new neural parameters.
    pub fn with_params(&self, params: NeuralParams) -> Result<Self> {
        Self::neural(self.vocab.clone(), params)
    }

    /// Next-token log-probabilities after `context`. Only the last `k`
    /// tokens are used; shorter contexts are BOS-padded on the left.
    pub fn logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        self.vocab.check(context)?;
        let k = self.context_window();
        let mut window = vec![BOS; k];
        let tail = &context[context.len().saturating_sub(k)..];
        window[k - tail.len()..].copy_from_slice(tail);
        let mut out = vec![0.0; self.vocab.len()];
        self.logprobs_window(&window, &mut out);
        Ok(out)
    }

    /// Log-probabilities for an already padded window of exactly `k` tokens.
    pub(crate) fn logprobs_window(&self, window: &[TokenId], out: &mut [f64]) {
        match &self.body {
            Body::Neural(net) => net.logprobs_into(window, out),
            Body::Ngram(p) => p.logprobs_into(window, out),
        }
    }

    /// `log p(response | prompt)` by the chain rule.
    pub fn sequence_logprob(&self, prompt: &[TokenId], response: &[TokenId]) -> Result<f64> {
        Ok(self.response_logprobs(prompt, response)?.iter().sum())
    }

    /// Per-token `log p(response[t] | prompt ⧺ response[..t])`.
    pub fn response_logprobs(&self, prompt: &[TokenId], response: &[TokenId]) -> Result<Vec<f64>> {
        if response.is_empty() {
            return Err(Error::EmptyResponse);
        }
        self.vocab.check(prompt)?;
        self.vocab.check(response)?;
        let k = self.context_window();
        let padded = padded_tokens(prompt, response, k);
        let mut buf = vec![0.0; self.vocab.len()];
        Ok(response
            .iter()
            .enumerate()
            .map(|(t, &tok)| {
                let start = prompt.len() + t;
                self.logprobs_window(&padded[start..start + k], &mut buf);
                buf[tok]
            })
            .collect())
    }
}

/// `[BOS; k] ⧺ prompt ⧺ response`; the window for response position `t`
/// is `padded[prompt.len() + t ..][..k]`.
pub(crate) fn padded_tokens(prompt: &[TokenId], response: &[TokenId], k: usize) -> Vec<TokenId> {
    let mut padded = Vec::with_capacity(k + prompt.len() + response.len());
    padded.resize(k, BOS);
    padded.extend_from_slice(prompt);
    padded.extend_from_slice(response);
    padded
}

/// Free-function form of [`LanguageModel::logprobs`].
pub fn logprobs(model: &LanguageModel, context: &Sequence) -> Result<Vec<f64>> {
    model.logprobs(context)
}

/// Free-function form of [`LanguageModel::sequence_logprob`].
pub fn sequence_logprob(
    model: &LanguageModel,
    prompt: &Sequence,
    response: &Sequence,
) -> Result<f64> {
    model.sequence_logprob(prompt, response)
}
