use super::{Parameters, Variant};
use crate::dataset::{Channel, PerChannel};
use crate::matrix::{dot, Matrix};
use crate::metrics::Scorer;

/// Ranks items by pre-sigmoid preference logits.
///
/// Item queries are projected once up front, so scoring all items for a user
/// costs `O(|V| * (d + d'))`.
pub struct ModelScorer<'a> {
    params: &'a Parameters,
    variant: Variant,
    queries: PerChannel<Matrix>,
}

impl<'a> ModelScorer<'a> {
    pub fn new(params: &'a Parameters, variant: Variant) -> Self {
        let dp = params.attention_dim();
        let queries = PerChannel::from_fn(|c| {
            if !variant.has_attention() {
                return Matrix::zeros(0, dp);
            }
            let mut q = Matrix::zeros(params.n_items(), dp);
            for v in 0..params.n_items() {
                let row = q.row_mut(v);
                params.attention[c].query.forward(params.item.row(v), row);
                for x in row.iter_mut() {
                    *x = x.max(0.0);
                }
            }
            q
        });
        ModelScorer {
            params,
            variant,
            queries,
        }
    }
}

impl Scorer for ModelScorer<'_> {
    fn score(&self, user: usize, item: usize, channel: Channel) -> f64 {
        super::forward::channel_forward(self.params, self.variant, user, item, channel).logit
    }

    fn score_items(&self, user: usize, channel: Channel, out: &mut [f64]) {
        let p = self.params;
        let d = p.dim();
        let x_sh = p.user_shared.row(user);
        let x_sp = p.user_specific(channel).row(user);
        let head_c = &p.channel_heads[channel];
        let separated = self.variant.separated();
        let head_sh = if separated { &p.shared_head } else { head_c };
        let u_sh: Vec<f64> = (0..d).map(|i| head_sh.weight.get(i, 0) * x_sh[i]).collect();
        let u_sp: Vec<f64> = (0..d).map(|i| head_c.weight.get(i, 0) * x_sp[i]).collect();
        let mut bias = head_c.bias.get(0, 0);
        if separated {
            bias += p.shared_head.bias.get(0, 0);
        }

        let keys = self.variant.has_attention().then(|| {
            let key = &p.attention[channel].key;
            let mut k_sh = vec![0.0; key.output_dim()];
            let mut k_sp = vec![0.0; key.output_dim()];
            key.forward(x_sh, &mut k_sh);
            key.forward(x_sp, &mut k_sp);
            k_sh.iter_mut()
                .chain(k_sp.iter_mut())
                .for_each(|x| *x = x.max(0.0));
            (k_sh, k_sp)
        });
        let scale = 1.0 / (p.attention_dim() as f64).sqrt();

        for (v, s) in out.iter_mut().enumerate() {
            let y = p.item.row(v);
            let (a_sh, a_sp) = match &keys {
                Some((k_sh, k_sp)) => {
                    let q = self.queries[channel].row(v);
                    super::forward::softmax2(dot(q, k_sh) * scale, dot(q, k_sp) * scale)
                }
                None => (0.5, 0.5),
            };
            *s = a_sh * dot(&u_sh, y) + a_sp * dot(&u_sp, y) + bias;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{predict_preference, ModelConfig};

    #[test]
    fn bulk_scores_match_single_forward() {
        let cfg = ModelConfig {
            d: 6,
            d_prime: 3,
            clf_hidden: 4,
            ..ModelConfig::default()
        };
        let params = Parameters::init(4, 9, &cfg, 21);
        for variant in Variant::ALL {
            let scorer = ModelScorer::new(&params, variant);
            let mut out = vec![0.0; 9];
            for u in 0..4 {
                for c in Channel::ALL {
                    scorer.score_items(u, c, &mut out);
                    for (v, &s) in out.iter().enumerate() {
                        assert!((s - scorer.score(u, v, c)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn logit_order_equals_probability_order() {
        let cfg = ModelConfig {
            d: 5,
            d_prime: 2,
            clf_hidden: 2,
            ..ModelConfig::default()
        };
        let params = Parameters::init(2, 30, &cfg, 4);
        let scorer = ModelScorer::new(&params, Variant::Full);
        let mut logits = vec![0.0; 30];
        scorer.score_items(1, Channel::On, &mut logits);
        let probs: Vec<f64> = (0..30)
            .map(|v| predict_preference(&params, Variant::Full, 1, v, Channel::On).unwrap())
            .collect();
        let by_logit = crate::metrics::top_k(&logits, None, 30);
        let by_prob = crate::metrics::top_k(&probs, None, 30);
        assert_eq!(by_logit, by_prob);
    }
}
