use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::dataset::{Channel, PerChannel};
use crate::matrix::Matrix;

/// Affine map `x -> x W + b` with `W` stored `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Matrix::zeros(input, output),
            bias: Matrix::zeros(1, output),
        }
    }

    fn init(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Linear {
            weight: Matrix::from_fn(input, output, |_, _| rng.random_range(-bound..bound)),
            bias: Matrix::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Writes `x W + b` into `out`.
    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.weight.rows());
        out.copy_from_slice(self.bias.as_slice());
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.weight.row(i)) {
                *o += xi * w;
            }
        }
    }

    /// Accumulates parameter gradients for upstream `grad_out` at input `x`
    /// into `acc`, and the input gradient into `grad_in` when provided.
    pub fn backward(
        &self,
        x: &[f64],
        grad_out: &[f64],
        acc: &mut Linear,
        grad_in: Option<&mut [f64]>,
    ) {
        for (b, g) in acc.bias.as_mut_slice().iter_mut().zip(grad_out) {
            *b += g;
        }
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (w, g) in acc.weight.row_mut(i).iter_mut().zip(grad_out) {
                *w += xi * g;
            }
        }
        if let Some(grad_in) = grad_in {
            for (i, gi) in grad_in.iter_mut().enumerate() {
                *gi += crate::matrix::dot(self.weight.row(i), grad_out);
            }
        }
    }
}

/// Query and key projections of one channel's attention block.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlock {
    pub query: Linear,
    pub key: Linear,
}

/// Two ReLU hidden layers and a two-logit output.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub hidden1: Linear,
    pub hidden2: Linear,
    pub output: Linear,
}

/// Every trainable array of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    pub user_shared: Matrix,
    pub user_off: Matrix,
    pub user_on: Matrix,
    pub item: Matrix,
    pub attention: PerChannel<AttentionBlock>,
    pub shared_head: Linear,
    pub channel_heads: PerChannel<Linear>,
    pub classifier: Classifier,
}

impl Parameters {
    /// All-zero parameters of the configured shapes.
    pub fn zeros(n_users: usize, n_items: usize, cfg: &ModelConfig) -> Self {
        let (d, dp, h) = (cfg.d, cfg.d_prime, cfg.clf_hidden);
        Parameters {
            user_shared: Matrix::zeros(n_users, d),
            user_off: Matrix::zeros(n_users, d),
            user_on: Matrix::zeros(n_users, d),
            item: Matrix::zeros(n_items, d),
            attention: PerChannel::from_fn(|_| AttentionBlock {
                query: Linear::zeros(d, dp),
                key: Linear::zeros(d, dp),
            }),
            shared_head: Linear::zeros(d, 1),
            channel_heads: PerChannel::from_fn(|_| Linear::zeros(d, 1)),
            classifier: Classifier {
                hidden1: Linear::zeros(2 * d, h),
                hidden2: Linear::zeros(h, h),
                output: Linear::zeros(h, 2),
            },
        }
    }

    /// Seeded initialization: embeddings uniform in `±1/sqrt(d)`, linear
    /// weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(n_users: usize, n_items: usize, cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, dp, h) = (cfg.d, cfg.d_prime, cfg.clf_hidden);
        let bound = 1.0 / (d as f64).sqrt();
        let table = |rows: usize, rng: &mut ChaCha8Rng| {
            Matrix::from_fn(rows, d, |_, _| rng.random_range(-bound..bound))
        };
        let user_shared = table(n_users, &mut rng);
        let user_off = table(n_users, &mut rng);
        let user_on = table(n_users, &mut rng);
        let item = table(n_items, &mut rng);
        let attention = PerChannel::from_fn(|_| AttentionBlock {
            query: Linear::init(d, dp, &mut rng),
            key: Linear::init(d, dp, &mut rng),
        });
        let shared_head = Linear::init(d, 1, &mut rng);
        let channel_heads = PerChannel::from_fn(|_| Linear::init(d, 1, &mut rng));
        let classifier = Classifier {
            hidden1: Linear::init(2 * d, h, &mut rng),
            hidden2: Linear::init(h, h, &mut rng),
            output: Linear::init(h, 2, &mut rng),
        };
        Parameters {
            user_shared,
            user_off,
            user_on,
            item,
            attention,
            shared_head,
            channel_heads,
            classifier,
        }
    }

    pub fn n_users(&self) -> usize {
        self.user_shared.rows()
    }

    pub fn n_items(&self) -> usize {
        self.item.rows()
    }

    pub fn dim(&self) -> usize {
        self.item.cols()
    }

    pub fn attention_dim(&self) -> usize {
        self.attention.off.query.output_dim()
    }

    pub fn classifier_hidden(&self) -> usize {
        self.classifier.hidden1.output_dim()
    }

    /// The channel-specific user table for `channel`.
    pub fn user_specific(&self, channel: Channel) -> &Matrix {
        match channel {
            Channel::Off => &self.user_off,
            Channel::On => &self.user_on,
        }
    }

    pub fn user_specific_mut(&mut self, channel: Channel) -> &mut Matrix {
        match channel {
            Channel::Off => &mut self.user_off,
            Channel::On => &mut self.user_on,
        }
    }

    /// Embedding table names, in [`Self::tensors`] order.
    pub const EMBEDDING_TABLES: [&'static str; 4] = ["user_shared", "user_off", "user_on", "item"];

    /// Every tensor with its stable name; the four embedding tables first.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> = vec![
            ("user_shared".into(), &self.user_shared),
            ("user_off".into(), &self.user_off),
            ("user_on".into(), &self.user_on),
            ("item".into(), &self.item),
        ];
        for c in Channel::ALL {
            let block = &self.attention[c];
            push_linear(&mut out, &format!("attention_{c}.query"), &block.query);
            push_linear(&mut out, &format!("attention_{c}.key"), &block.key);
        }
        push_linear(&mut out, "head_shared", &self.shared_head);
        for c in Channel::ALL {
            push_linear(&mut out, &format!("head_{c}"), &self.channel_heads[c]);
        }
        push_linear(&mut out, "classifier.hidden1", &self.classifier.hidden1);
        push_linear(&mut out, "classifier.hidden2", &self.classifier.hidden2);
        push_linear(&mut out, "classifier.output", &self.classifier.output);
        out
    }

    /// Mutable counterpart of [`Self::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let Parameters {
            user_shared,
            user_off,
            user_on,
            item,
            attention,
            shared_head,
            channel_heads,
            classifier,
        } = self;
        let mut out: Vec<(String, &mut Matrix)> = vec![
            ("user_shared".into(), user_shared),
            ("user_off".into(), user_off),
            ("user_on".into(), user_on),
            ("item".into(), item),
        ];
        let PerChannel { off, on } = attention;
        for (c, block) in [(Channel::Off, off), (Channel::On, on)] {
            push_linear_mut(&mut out, &format!("attention_{c}.query"), &mut block.query);
            push_linear_mut(&mut out, &format!("attention_{c}.key"), &mut block.key);
        }
        push_linear_mut(&mut out, "head_shared", shared_head);
        let PerChannel { off, on } = channel_heads;
        push_linear_mut(&mut out, "head_off", off);
        push_linear_mut(&mut out, "head_on", on);
        push_linear_mut(&mut out, "classifier.hidden1", &mut classifier.hidden1);
        push_linear_mut(&mut out, "classifier.hidden2", &mut classifier.hidden2);
        push_linear_mut(&mut out, "classifier.output", &mut classifier.output);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }
}

fn push_linear<'a>(out: &mut Vec<(String, &'a Matrix)>, name: &str, layer: &'a Linear) {
    out.push((format!("{name}.weight"), &layer.weight));
    out.push((format!("{name}.bias"), &layer.bias));
}

fn push_linear_mut<'a>(out: &mut Vec<(String, &'a mut Matrix)>, name: &str, layer: &'a mut Linear) {
    out.push((format!("{name}.weight"), &mut layer.weight));
    out.push((format!("{name}.bias"), &mut layer.bias));
}

/// Gradient buffers shaped like [`Parameters`], plus the embedding rows a
/// batch touched.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub grad: Parameters,
    pub touched_users: BTreeSet<usize>,
    pub touched_items: BTreeSet<usize>,
}

impl Gradients {
    pub fn zeros_like(params: &Parameters) -> Self {
        let cfg = ModelConfig {
            d: params.dim(),
            d_prime: params.attention_dim(),
            clf_hidden: params.classifier_hidden(),
            ..ModelConfig::default()
        };
        Gradients {
            grad: Parameters::zeros(params.n_users(), params.n_items(), &cfg),
            touched_users: BTreeSet::new(),
            touched_items: BTreeSet::new(),
        }
    }

    /// Zeroes the touched embedding rows and every dense tensor.
    pub fn clear(&mut self) {
        for &u in &self.touched_users {
            self.grad.user_shared.row_mut(u).fill(0.0);
            self.grad.user_off.row_mut(u).fill(0.0);
            self.grad.user_on.row_mut(u).fill(0.0);
        }
        for &v in &self.touched_items {
            self.grad.item.row_mut(v).fill(0.0);
        }
        self.touched_users.clear();
        self.touched_items.clear();
        for (_, m) in self.grad.tensors_mut().into_iter().skip(4) {
            m.fill(0.0);
        }
    }
}
