//! Full-batch Adam with a linearly decaying step, shared by the kernel and
//! neural trainers.

pub(crate) struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    step: f64,
    total: usize,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-12;

impl Adam {
    pub(crate) fn new(dim: usize, step: f64, total_steps: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            step,
            total: total_steps.max(1),
        }
    }

    /// Apply one update to `params` given the full-batch gradient.
    pub(crate) fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        let lr = self.step * (1.0 - self.t as f64 / self.total as f64).max(0.0);
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + EPS);
        }
    }
}
