use serde::{Deserialize, Serialize};

use super::{LossBreakdown, ModelConfig, Parameters, Variant};
use crate::dataset::{Channel, PerChannel, TrainingExample};
use crate::error::{Error, Result};
use crate::matrix::{dot, sigmoid};

/// Probability clamp used by every cross-entropy term.
pub const BCE_EPS: f64 = 1e-7;

/// Softmax weights of the shared and the channel-specific user embedding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionScores {
    pub shared: f64,
    pub specific: f64,
}

/// Intermediate values of one `(example, channel)` forward pass.
///
/// `q`, `k_shared` and `k_specific` are post-ReLU projections; they are empty
/// for [`Variant::NoAttention`]. `head_shared` / `head_specific` are the head
/// outputs before attention weighting, so that
/// `logit = a_shared * head_shared + a_specific * head_specific + biases`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelTrace {
    pub q: Vec<f64>,
    pub k_shared: Vec<f64>,
    pub k_specific: Vec<f64>,
    pub a_shared: f64,
    pub a_specific: f64,
    pub head_shared: f64,
    pub head_specific: f64,
    pub logit: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierTrace {
    /// `[x_sh + x_off + x_on ; y]`
    pub input: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub probs: PerChannel<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExampleTrace {
    pub channels: PerChannel<ChannelTrace>,
    pub classifier: Option<ClassifierTrace>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForwardCache {
    pub examples: Vec<ExampleTrace>,
    pub n_positives: usize,
}

fn check_ids(params: &Parameters, user: usize, item: usize) -> Result<()> {
    if user >= params.n_users() {
        return Err(Error::OutOfRange {
            kind: "user",
            id: user,
            size: params.n_users(),
        });
    }
    if item >= params.n_items() {
        return Err(Error::OutOfRange {
            kind: "item",
            id: item,
            size: params.n_items(),
        });
    }
    Ok(())
}

#[inline]
fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Two-way softmax of `(l_shared, l_specific)`.
#[inline]
pub(crate) fn softmax2(l_shared: f64, l_specific: f64) -> (f64, f64) {
    let m = l_shared.max(l_specific);
    let e_sh = (l_shared - m).exp();
    let e_sp = (l_specific - m).exp();
    let z = e_sh + e_sp;
    (e_sh / z, e_sp / z)
}

pub(crate) fn channel_forward(
    params: &Parameters,
    variant: Variant,
    user: usize,
    item: usize,
    channel: Channel,
) -> ChannelTrace {
    let y = params.item.row(item);
    let x_sh = params.user_shared.row(user);
    let x_sp = params.user_specific(channel).row(user);

    let (q, k_shared, k_specific, a_shared, a_specific) = if variant.has_attention() {
        let block = &params.attention[channel];
        let dp = block.query.output_dim();
        let mut q = vec![0.0; dp];
        let mut k_sh = vec![0.0; dp];
        let mut k_sp = vec![0.0; dp];
        block.query.forward(y, &mut q);
        block.key.forward(x_sh, &mut k_sh);
        block.key.forward(x_sp, &mut k_sp);
        relu_in_place(&mut q);
        relu_in_place(&mut k_sh);
        relu_in_place(&mut k_sp);
        let scale = 1.0 / (dp as f64).sqrt();
        let (a_sh, a_sp) = softmax2(dot(&q, &k_sh) * scale, dot(&q, &k_sp) * scale);
        (q, k_sh, k_sp, a_sh, a_sp)
    } else {
        (Vec::new(), Vec::new(), Vec::new(), 0.5, 0.5)
    };

    let head_c = &params.channel_heads[channel];
    let head_sh = if variant.separated() {
        &params.shared_head
    } else {
        head_c
    };
    let w_sh = head_sh.weight.as_slice();
    let w_sp = head_c.weight.as_slice();
    let mut head_shared = 0.0;
    let mut head_specific = 0.0;
    for i in 0..y.len() {
        head_shared += w_sh[i] * x_sh[i] * y[i];
        head_specific += w_sp[i] * x_sp[i] * y[i];
    }
    let mut bias = head_c.bias.get(0, 0);
    if variant.separated() {
        bias += params.shared_head.bias.get(0, 0);
    }
    let logit = a_shared * head_shared + a_specific * head_specific + bias;
    ChannelTrace {
        q,
        k_shared,
        k_specific,
        a_shared,
        a_specific,
        head_shared,
        head_specific,
        logit,
        p: sigmoid(logit),
    }
}

pub(crate) fn classifier_forward(params: &Parameters, user: usize, item: usize) -> ClassifierTrace {
    let d = params.dim();
    let mut input = Vec::with_capacity(2 * d);
    let (xs, xo, xn) = (
        params.user_shared.row(user),
        params.user_off.row(user),
        params.user_on.row(user),
    );
    input.extend((0..d).map(|i| xs[i] + xo[i] + xn[i]));
    input.extend_from_slice(params.item.row(item));

    let clf = &params.classifier;
    let mut h1 = vec![0.0; clf.hidden1.output_dim()];
    clf.hidden1.forward(&input, &mut h1);
    relu_in_place(&mut h1);
    let mut h2 = vec![0.0; clf.hidden2.output_dim()];
    clf.hidden2.forward(&h1, &mut h2);
    relu_in_place(&mut h2);
    let mut logits = [0.0; 2];
    clf.output.forward(&h2, &mut logits);
    ClassifierTrace {
        input,
        h1,
        h2,
        probs: PerChannel::new(sigmoid(logits[0]), sigmoid(logits[1])),
    }
}

/// Attention weights of channel `channel`'s block for `(user, item)`.
pub fn attention_scores(
    params: &Parameters,
    user: usize,
    item: usize,
    channel: Channel,
) -> Result<AttentionScores> {
    check_ids(params, user, item)?;
    let tr = channel_forward(params, Variant::Full, user, item, channel);
    Ok(AttentionScores {
        shared: tr.a_shared,
        specific: tr.a_specific,
    })
}

/// Pre-sigmoid preference score; ranks identically to [`predict_preference`].
pub fn preference_logit(
    params: &Parameters,
    variant: Variant,
    user: usize,
    item: usize,
    channel: Channel,
) -> Result<f64> {
    check_ids(params, user, item)?;
    Ok(channel_forward(params, variant, user, item, channel).logit)
}

/// Purchase probability of `item` by `user` in `channel`.
pub fn predict_preference(
    params: &Parameters,
    variant: Variant,
    user: usize,
    item: usize,
    channel: Channel,
) -> Result<f64> {
    check_ids(params, user, item)?;
    Ok(channel_forward(params, variant, user, item, channel).p)
}

/// Independent per-channel probabilities that the pair occurs in each channel.
pub fn classify_interaction(
    params: &Parameters,
    user: usize,
    item: usize,
) -> Result<PerChannel<f64>> {
    check_ids(params, user, item)?;
    Ok(classifier_forward(params, user, item).probs)
}

#[inline]
pub(crate) fn bce(p: f64, label: bool) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Derivative of [`bce`] through the sigmoid w.r.t. its logit. Zero where
/// the clamp is active.
#[inline]
pub(crate) fn bce_logit_grad(p: f64, label: bool) -> f64 {
    if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
        0.0
    } else {
        p - if label { 1.0 } else { 0.0 }
    }
}

/// Attention-loss contribution of one positive example over both channels.
pub(crate) fn attention_penalty(trace: &ExampleTrace, specificity: bool) -> f64 {
    let s = if specificity { 1.0 } else { 0.0 };
    trace
        .channels
        .iter()
        .map(|(_, t)| (t.a_shared - (1.0 - s)).powi(2) + (t.a_specific - s).powi(2))
        .sum()
}

/// Forward pass and loss terms for a batch.
pub fn batch_losses(
    batch: &[TrainingExample],
    params: &Parameters,
    cfg: &ModelConfig,
) -> Result<(LossBreakdown, ForwardCache)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let variant = cfg.variant;
    let mut cache = ForwardCache {
        examples: Vec::with_capacity(batch.len()),
        n_positives: 0,
    };
    let mut loss = LossBreakdown::default();

    for ex in batch {
        check_ids(params, ex.user, ex.item)?;
        let channels =
            PerChannel::from_fn(|c| channel_forward(params, variant, ex.user, ex.item, c));
        loss.l_off += bce(channels.off.p, ex.label_off);
        loss.l_on += bce(channels.on.p, ex.label_on);

        let classifier = variant.uses_classifier().then(|| {
            let tr = classifier_forward(params, ex.user, ex.item);
            loss.l_cls += bce(tr.probs.off, ex.label_off) + bce(tr.probs.on, ex.label_on);
            tr
        });
        let trace = ExampleTrace {
            channels,
            classifier,
        };
        if ex.is_positive {
            cache.n_positives += 1;
            if variant.uses_attention_loss() {
                loss.l_attn += attention_penalty(&trace, ex.specificity);
            }
        }
        cache.examples.push(trace);
    }

    let n = batch.len() as f64;
    loss.l_off /= n;
    loss.l_on /= n;
    loss.l_cls /= n;
    loss.l_attn = if cache.n_positives > 0 {
        loss.l_attn / cache.n_positives as f64
    } else {
        0.0
    };
    loss.total = loss.weighted_total(cfg);
    Ok((loss, cache))
}
