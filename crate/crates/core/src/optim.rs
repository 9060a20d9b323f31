//! Adam over any parameter set that can list its tensors.

use ndarray::{Array2, Zip};

/// A fixed, ordered list of parameter tensors.
pub trait Tensors {
    fn tensor_list(&self) -> Vec<&Array2<f64>>;
    fn tensor_list_mut(&mut self) -> Vec<&mut Array2<f64>>;
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new<P: Tensors>(params: &P, lr: f64) -> Self {
        let zeros: Vec<Array2<f64>> = params
            .tensor_list()
            .into_iter()
            .map(|t| Array2::zeros(t.raw_dim()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step<P: Tensors>(&mut self, params: &mut P, grads: &P) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (lr, eps) = (self.lr, self.eps);
        for (((p, g), m), v) in params
            .tensor_list_mut()
            .into_iter()
            .zip(grads.tensor_list())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}
