use ndarray::{Array2, Zip};

use crate::model::ModelParams;
use crate::Scalar;

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping. `max_norm <= 0` only measures.
pub fn clip_grad_norm<F: Scalar>(grads: &mut [Array2<F>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| {
            let x = v.to_f64c();
            x * x
        })
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = F::from_f64c(max_norm / norm);
        for g in grads.iter_mut() {
            g.mapv_inplace(|v| v * k);
        }
    }
    norm
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Array2<F>>,
    v: Vec<Array2<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(params: &ModelParams<F>, lr: f64) -> Self {
        let zeros = params.zeros_like().tensors;
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, params: &mut ModelParams<F>, grads: &[Array2<F>]) {
        self.step += 1;
        let b1 = F::from_f64c(self.beta1);
        let b2 = F::from_f64c(self.beta2);
        let one = F::one();
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let step_size = F::from_f64c(self.lr * c2.sqrt() / c1);
        let eps = F::from_f64c(self.eps * c2.sqrt());
        for ((p, g), (m, v)) in params
            .tensors
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p = *p - step_size * *m / (v.sqrt() + eps);
            });
        }
    }
}
