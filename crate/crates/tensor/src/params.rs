use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Glorot-uniform initialization for a `[fan_in, fan_out]` map.
    pub fn xavier(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
        self.add(name, Tensor::new(vec![fan_in, fan_out], data).expect("sized"))
    }

    /// Glorot-uniform for a conv kernel `[out, in, k, k]`.
    pub fn xavier_conv(
        &mut self,
        name: impl Into<String>,
        out_c: usize,
        in_c: usize,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let fan_in = in_c * k * k;
        let fan_out = out_c * k * k;
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..out_c * fan_in).map(|_| rng.gen_range(-limit..limit)).collect();
        self.add(name, Tensor::new(vec![out_c, in_c, k, k], data).expect("sized"))
    }

    /// N(0, std^2) entries, e.g. std = 0.02 for embeddings.
    pub fn normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| std * standard_normal(rng)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("sized"))
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::full(shape, 1.0))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }
}

/// Box-Muller; consumes two uniforms per call so streams stay aligned.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
