use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Gradients, Parameters};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `theta` in place. `t` starts at 1.
pub fn adam_update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &AdamConfig,
) {
    debug_assert!(t >= 1);
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// First and second moments for every parameter tensor.
///
/// Embedding tables are updated lazily: only rows a batch touched move, and
/// only their moments decay. Dense tensors follow ordinary Adam.
#[derive(Clone, Debug)]
pub struct AdamState {
    moments: Vec<(Matrix, Matrix)>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &Parameters) -> Self {
        AdamState {
            moments: params
                .tensors()
                .into_iter()
                .map(|(_, m)| {
                    (
                        Matrix::zeros(m.rows(), m.cols()),
                        Matrix::zeros(m.rows(), m.cols()),
                    )
                })
                .collect(),
            t: 0,
        }
    }
}

/// Applies one Adam step; fails without touching `params` if any relevant
/// gradient entry is non-finite.
pub fn adam_step(
    params: &mut Parameters,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    let grad_tensors = grads.grad.tensors();
    let rows_for = |idx: usize| -> Option<&std::collections::BTreeSet<usize>> {
        match idx {
            0..=2 => Some(&grads.touched_users),
            3 => Some(&grads.touched_items),
            _ => None,
        }
    };

    for (idx, (name, g)) in grad_tensors.iter().enumerate() {
        let bad = match rows_for(idx) {
            Some(rows) => rows.iter().find_map(|&r| {
                g.row(r)
                    .iter()
                    .position(|x| !x.is_finite())
                    .map(|c| r * g.cols() + c)
            }),
            None => g.as_slice().iter().position(|x| !x.is_finite()),
        };
        if let Some(index) = bad {
            return Err(Error::NonFiniteGradient {
                tensor: name.clone(),
                index,
            });
        }
    }

    state.t += 1;
    let t = state.t;
    for (idx, ((_, theta), (m, v))) in params
        .tensors_mut()
        .into_iter()
        .zip(state.moments.iter_mut())
        .enumerate()
    {
        let g = grad_tensors[idx].1;
        match rows_for(idx) {
            Some(rows) => {
                for &r in rows {
                    adam_update(
                        theta.row_mut(r),
                        g.row(r),
                        m.row_mut(r),
                        v.row_mut(r),
                        t,
                        cfg,
                    );
                }
            }
            None => adam_update(
                theta.as_mut_slice(),
                g.as_slice(),
                m.as_mut_slice(),
                v.as_mut_slice(),
                t,
                cfg,
            ),
        }
    }
    Ok(())
}
