use super::forward::bce_logit_grad;
use super::{ForwardCache, Gradients, ModelConfig, Parameters};
use crate::dataset::{Channel, TrainingExample};

/// Analytic gradient of the batch's total loss.
pub fn backward(
    batch: &[TrainingExample],
    params: &Parameters,
    cfg: &ModelConfig,
    cache: &ForwardCache,
) -> Gradients {
    let mut grads = Gradients::zeros_like(params);
    backward_into(batch, params, cfg, cache, &mut grads);
    grads
}

/// Accumulates the gradient of the batch's total loss into `grads`.
///
/// `cache` must come from [`super::batch_losses`] on the same batch and
/// parameters.
pub fn backward_into(
    batch: &[TrainingExample],
    params: &Parameters,
    cfg: &ModelConfig,
    cache: &ForwardCache,
    grads: &mut Gradients,
) {
    assert_eq!(
        batch.len(),
        cache.examples.len(),
        "cache does not match batch"
    );
    let variant = cfg.variant;
    let d = params.dim();
    let inv_n = 1.0 / batch.len() as f64;
    let attn_scale = if variant.uses_attention_loss() && cache.n_positives > 0 {
        cfg.lambda_attn / cache.n_positives as f64
    } else {
        0.0
    };

    let mut g_y = vec![0.0; d];
    let mut g_xsh = vec![0.0; d];
    let mut g_xsp = vec![0.0; d];
    let dp = params.attention_dim();
    let mut g_q = vec![0.0; dp];
    let mut g_ksh = vec![0.0; dp];
    let mut g_ksp = vec![0.0; dp];

    for (ex, trace) in batch.iter().zip(&cache.examples) {
        let (u, v) = (ex.user, ex.item);
        grads.touched_users.insert(u);
        grads.touched_items.insert(v);
        let y = params.item.row(v);
        let x_sh = params.user_shared.row(u);
        g_y.fill(0.0);
        g_xsh.fill(0.0);

        for c in Channel::ALL {
            let tr = &trace.channels[c];
            let x_sp = params.user_specific(c).row(u);
            g_xsp.fill(0.0);

            // d total / d logit
            let g = bce_logit_grad(tr.p, ex.label(c)) * inv_n;

            // heads
            let separated = variant.separated();
            let head_c = &params.channel_heads[c];
            let w_sh = if separated {
                params.shared_head.weight.as_slice()
            } else {
                head_c.weight.as_slice()
            };
            let w_sp = head_c.weight.as_slice();
            if g != 0.0 {
                {
                    let acc_c = grads.grad.channel_heads[c].weight.as_mut_slice();
                    for i in 0..d {
                        acc_c[i] += g * tr.a_specific * x_sp[i] * y[i];
                    }
                    grads.grad.channel_heads[c].bias.as_mut_slice()[0] += g;
                }
                let acc_sh = if separated {
                    grads.grad.shared_head.bias.as_mut_slice()[0] += g;
                    grads.grad.shared_head.weight.as_mut_slice()
                } else {
                    grads.grad.channel_heads[c].weight.as_mut_slice()
                };
                for i in 0..d {
                    acc_sh[i] += g * tr.a_shared * x_sh[i] * y[i];
                }
                for i in 0..d {
                    g_xsh[i] += g * tr.a_shared * w_sh[i] * y[i];
                    g_xsp[i] += g * tr.a_specific * w_sp[i] * y[i];
                    g_y[i] +=
                        g * (tr.a_shared * w_sh[i] * x_sh[i] + tr.a_specific * w_sp[i] * x_sp[i]);
                }
            }

            // attention
            if variant.has_attention() {
                let mut ga_sh = g * tr.head_shared;
                let mut ga_sp = g * tr.head_specific;
                if ex.is_positive && attn_scale != 0.0 {
                    let s = if ex.specificity { 1.0 } else { 0.0 };
                    ga_sh += attn_scale * 2.0 * (tr.a_shared - (1.0 - s));
                    ga_sp += attn_scale * 2.0 * (tr.a_specific - s);
                }
                let mean = tr.a_shared * ga_sh + tr.a_specific * ga_sp;
                let gl_sh = tr.a_shared * (ga_sh - mean);
                let gl_sp = tr.a_specific * (ga_sp - mean);
                if gl_sh != 0.0 || gl_sp != 0.0 {
                    let scale = 1.0 / (dp as f64).sqrt();
                    for j in 0..dp {
                        // ReLU masks: post-activation zero means no gradient
                        g_q[j] = if tr.q[j] > 0.0 {
                            scale * (gl_sh * tr.k_shared[j] + gl_sp * tr.k_specific[j])
                        } else {
                            0.0
                        };
                        g_ksh[j] = if tr.k_shared[j] > 0.0 {
                            scale * gl_sh * tr.q[j]
                        } else {
                            0.0
                        };
                        g_ksp[j] = if tr.k_specific[j] > 0.0 {
                            scale * gl_sp * tr.q[j]
                        } else {
                            0.0
                        };
                    }
                    let block = &params.attention[c];
                    let acc = &mut grads.grad.attention[c];
                    block
                        .query
                        .backward(y, &g_q, &mut acc.query, Some(&mut g_y));
                    block
                        .key
                        .backward(x_sh, &g_ksh, &mut acc.key, Some(&mut g_xsh));
                    block
                        .key
                        .backward(x_sp, &g_ksp, &mut acc.key, Some(&mut g_xsp));
                }
            }

            let row = grads.grad.user_specific_mut(c).row_mut(u);
            for (r, gx) in row.iter_mut().zip(&g_xsp) {
                *r += gx;
            }
        }

        // classifier
        if let (true, Some(ct)) = (variant.uses_classifier(), trace.classifier.as_ref()) {
            let scale = cfg.lambda_cls * inv_n;
            let g_out = [
                scale * bce_logit_grad(ct.probs.off, ex.label_off),
                scale * bce_logit_grad(ct.probs.on, ex.label_on),
            ];
            if g_out[0] != 0.0 || g_out[1] != 0.0 {
                let clf = &params.classifier;
                let acc = &mut grads.grad.classifier;
                let mut g_h2 = vec![0.0; ct.h2.len()];
                clf.output
                    .backward(&ct.h2, &g_out, &mut acc.output, Some(&mut g_h2));
                mask(&mut g_h2, &ct.h2);
                let mut g_h1 = vec![0.0; ct.h1.len()];
                clf.hidden2
                    .backward(&ct.h1, &g_h2, &mut acc.hidden2, Some(&mut g_h1));
                mask(&mut g_h1, &ct.h1);
                let mut g_in = vec![0.0; 2 * d];
                clf.hidden1
                    .backward(&ct.input, &g_h1, &mut acc.hidden1, Some(&mut g_in));
                let (g_user, g_item) = g_in.split_at(d);
                for i in 0..d {
                    g_xsh[i] += g_user[i];
                    g_y[i] += g_item[i];
                }
                for table in [&mut grads.grad.user_off, &mut grads.grad.user_on] {
                    for (r, gx) in table.row_mut(u).iter_mut().zip(g_user) {
                        *r += gx;
                    }
                }
            }
        }

        for (r, gx) in grads.grad.user_shared.row_mut(u).iter_mut().zip(&g_xsh) {
            *r += gx;
        }
        for (r, gy) in grads.grad.item.row_mut(v).iter_mut().zip(&g_y) {
            *r += gy;
        }
    }
}

#[inline]
fn mask(grad: &mut [f64], activation: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}
