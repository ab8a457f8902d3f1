//! SFT and DPO losses with gradients by reverse accumulation.
//!
//! The forward pass uses the projection table `table[j][v] = E[v]·W_j`; the
//! backward pass accumulates gradients with respect to the table and folds
//! them into the embedding and hidden weights once per batch.

use crate::cd::ensure_same_vocab;
use crate::error::{Error, Result};
use crate::model::{padded_tokens, LanguageModel, NeuralDims, NeuralNet, NeuralParams, ParamGrad};
use crate::numerics::{sigmoid, softplus};
use crate::vocab::TokenId;

use super::{PreferencePair, SftExample};

fn net_of(model: &LanguageModel) -> Result<&NeuralNet> {
    model
        .neural_net()
        .ok_or_else(|| Error::Unsupported("gradients require a neural model".into()))
}

/// Scratch space and accumulators for one batch.
pub(crate) struct Backprop<'a> {
    net: &'a NeuralNet,
    grad: ParamGrad,
    table_grad: Vec<f64>,
    hid: Vec<f64>,
    probs: Vec<f64>,
    dh: Vec<f64>,
}

impl<'a> Backprop<'a> {
    pub(crate) fn new(net: &'a NeuralNet) -> Self {
        let dims = net.dims();
        Self {
            net,
            grad: NeuralParams::zeros(dims),
            table_grad: vec![0.0; net.table.len()],
            hid: vec![0.0; dims.hidden],
            probs: vec![0.0; dims.vocab],
            dh: vec![0.0; dims.hidden],
        }
    }

    /// Adds `scale · ∇ log p(target | window)` and returns the log-probability.
    fn add_position(&mut self, window: &[TokenId], target: TokenId, scale: f64) -> f64 {
        let NeuralDims { vocab, hidden, .. } = self.net.dims();
        self.net.hidden_into(window, &mut self.hid);
        self.net.logits_into(&self.hid, &mut self.probs);
        let max = self.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for p in self.probs.iter_mut() {
            *p = (*p - max).exp();
            z += *p;
        }
        let logp = (self.probs[target] / z).ln();
        // dlogits = scale · (onehot − softmax), stored back into `probs`.
        for p in self.probs.iter_mut() {
            *p *= -scale / z;
        }
        self.probs[target] += scale;

        let [_, _, hb, ow, ob] = self.grad.blocks_mut();
        let ow_params = self.net.params.output_weight();
        for (g, &d) in ob.iter_mut().zip(&self.probs) {
            *g += d;
        }
        for h in 0..hidden {
            let a = self.hid[h];
            let row = &mut ow[h * vocab..][..vocab];
            let w = &ow_params[h * vocab..][..vocab];
            let mut acc = 0.0;
            for v in 0..vocab {
                row[v] += a * self.probs[v];
                acc += w[v] * self.probs[v];
            }
            self.dh[h] = acc * (1.0 - a * a);
        }
        for (g, &d) in hb.iter_mut().zip(&self.dh) {
            *g += d;
        }
        for (j, &tok) in window.iter().enumerate() {
            let row = &mut self.table_grad[(j * vocab + tok) * hidden..][..hidden];
            for (g, &d) in row.iter_mut().zip(&self.dh) {
                *g += d;
            }
        }
        logp
    }

    /// Adds `scale · ∇ log p(response | prompt)` and returns the log-probability.
    pub(crate) fn add_sequence(
        &mut self,
        prompt: &[TokenId],
        response: &[TokenId],
        scale: f64,
    ) -> f64 {
        let k = self.net.dims().context;
        let padded = padded_tokens(prompt, response, k);
        let mut total = 0.0;
        for (t, &tok) in response.iter().enumerate() {
            let start = prompt.len() + t;
            total += self.add_position(&padded[start..start + k], tok, scale);
        }
        total
    }

    /// Folds table gradients into the embedding and hidden weights.
    pub(crate) fn finish(mut self) -> ParamGrad {
        let NeuralDims {
            vocab,
            embed,
            hidden,
            context,
        } = self.net.dims();
        let emb = self.net.params.embedding();
        let hw = self.net.params.hidden_weight();
        let [d_emb, d_hw, ..] = self.grad.blocks_mut();
        for j in 0..context {
            for v in 0..vocab {
                let g = &self.table_grad[(j * vocab + v) * hidden..][..hidden];
                if g.iter().all(|&x| x == 0.0) {
                    continue;
                }
                for e in 0..embed {
                    let row = (j * embed + e) * hidden;
                    let w = &hw[row..][..hidden];
                    d_emb[v * embed + e] += g.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
                    let x = emb[v * embed + e];
                    for (dw, &gi) in d_hw[row..][..hidden].iter_mut().zip(g) {
                        *dw += x * gi;
                    }
                }
            }
        }
        self.grad
    }
}

pub(crate) fn check_response(response: &[TokenId]) -> Result<()> {
    if response.is_empty() {
        Err(Error::EmptyResponse)
    } else {
        Ok(())
    }
}

/// SFT over borrowed examples: loss and gradient.
pub(crate) fn sft_batch(model: &LanguageModel, batch: &[&SftExample]) -> Result<(f64, ParamGrad)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let net = net_of(model)?;
    let scale = -1.0 / batch.len() as f64;
    let mut bp = Backprop::new(net);
    let mut loss = 0.0;
    for ex in batch {
        check_response(&ex.response)?;
        model.vocab().check(&ex.prompt)?;
        model.vocab().check(&ex.response)?;
        loss += scale * bp.add_sequence(&ex.prompt, &ex.response, scale);
    }
    Ok((loss, bp.finish()))
}

/// SFT loss alone.
pub(crate) fn sft_loss(model: &LanguageModel, batch: &[&SftExample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for ex in batch {
        total += model.sequence_logprob(&ex.prompt, &ex.response)?;
    }
    Ok(-total / batch.len() as f64)
}

/// A preference pair with the frozen reference's log-probabilities of both
/// responses.
#[derive(Clone, Copy)]
pub(crate) struct ReferencedPair<'a> {
    pub(crate) pair: &'a PreferencePair,
    pub(crate) ref_chosen: f64,
    pub(crate) ref_rejected: f64,
}

impl<'a> ReferencedPair<'a> {
    pub(crate) fn new(pair: &'a PreferencePair, reference: &LanguageModel) -> Result<Self> {
        Ok(Self {
            pair,
            ref_chosen: reference.sequence_logprob(&pair.prompt, &pair.chosen)?,
            ref_rejected: reference.sequence_logprob(&pair.prompt, &pair.rejected)?,
        })
    }

    fn margin(&self, policy: &LanguageModel, beta: f64) -> Result<f64> {
        let w = policy.sequence_logprob(&self.pair.prompt, &self.pair.chosen)? - self.ref_chosen;
        let l =
            policy.sequence_logprob(&self.pair.prompt, &self.pair.rejected)? - self.ref_rejected;
        Ok(beta * (w - l))
    }
}

/// DPO loss alone.
pub(crate) fn dpo_loss(
    policy: &LanguageModel,
    batch: &[ReferencedPair<'_>],
    beta: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for item in batch {
        total += softplus(-item.margin(policy, beta)?);
    }
    Ok(total / batch.len() as f64)
}

/// DPO loss and gradient with respect to the policy only.
pub(crate) fn dpo_batch(
    policy: &LanguageModel,
    batch: &[ReferencedPair<'_>],
    beta: f64,
) -> Result<(f64, ParamGrad)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let net = net_of(policy)?;
    let n = batch.len() as f64;
    let mut bp = Backprop::new(net);
    let mut loss = 0.0;
    for item in batch {
        let p = item.pair;
        check_response(&p.chosen)?;
        check_response(&p.rejected)?;
        let z = item.margin(policy, beta)?;
        loss += softplus(-z);
        // d/dz softplus(−z) = −σ(−z); dz/dθ = β (∇log π(y_w) − ∇log π(y_l)).
        let c = beta * sigmoid(-z) / n;
        bp.add_sequence(&p.prompt, &p.chosen, -c);
        bp.add_sequence(&p.prompt, &p.rejected, c);
    }
    Ok((loss / n, bp.finish()))
}

/// `−mean log p(response | prompt)` over the batch and its gradient.
pub fn sft_loss_and_grad(model: &LanguageModel, batch: &[SftExample]) -> Result<(f64, ParamGrad)> {
    let refs: Vec<&SftExample> = batch.iter().collect();
    sft_batch(model, &refs)
}

/// `−mean log σ(β(Δ_w − Δ_l))` over the batch and its gradient with respect
/// to `policy`. `reference` is read but never differentiated.
pub fn dpo_loss_and_grad(
    policy: &LanguageModel,
    reference: &LanguageModel,
    batch: &[PreferencePair],
    beta: f64,
) -> Result<(f64, ParamGrad)> {
    super::check_beta(beta)?;
    ensure_same_vocab(policy, reference)?;
    let items = batch
        .iter()
        .map(|p| ReferencedPair::new(p, reference))
        .collect::<Result<Vec<_>>>()?;
    dpo_batch(policy, &items, beta)
}
