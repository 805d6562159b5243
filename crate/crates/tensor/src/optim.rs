use crate::params::{ParamId, ParamStore};

/// Bias-corrected adaptive-moment update applied in place.
///
/// `t` is the 1-based step index.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    (beta1, beta2): (f64, f64),
    eps: f64,
    t: u64,
) {
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        params[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.value(id).numel()]).collect();
        Self { lr, betas: (0.9, 0.999), eps: 1e-8, clip_norm: None, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters absent from `grads` are treated as
    /// having zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Vec<f64>)]) {
        self.step += 1;
        let scale = match self.clip_norm {
            Some(max) => {
                let norm = grads.iter().flat_map(|(_, g)| g.iter()).map(|x| x * x).sum::<f64>().sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let mut full: Vec<Option<&Vec<f64>>> = vec![None; store.len()];
        for (id, g) in grads {
            full[id.index()] = Some(g);
        }
        for id in store.ids().collect::<Vec<_>>() {
            let i = id.index();
            let n = store.value(id).numel();
            let g: Vec<f64> = match full[i] {
                Some(g) => g.iter().map(|x| x * scale).collect(),
                None => vec![0.0; n],
            };
            adam_step(
                store.value_mut(id).data_mut(),
                &g,
                &mut self.m[i],
                &mut self.v[i],
                self.lr,
                self.betas,
                self.eps,
                self.step,
            );
        }
    }
}
