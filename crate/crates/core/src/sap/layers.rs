use posterforge_tensor::{Graph, ParamId, ParamStore, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: store.xavier(format!("{name}.w"), fan_in, fan_out, rng),
            b: store.zeros(format!("{name}.b"), &[fan_out]),
        }
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(s, self.w);
        let b = g.param(s, self.b);
        let y = g.matmul(x, w)?;
        Ok(g.add_row(y, b)?)
    }
}

/// Layer norm with learned gain and bias.
#[derive(Debug, Clone)]
pub(crate) struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self { gain: store.ones(format!("{name}.gain"), &[d]), bias: store.zeros(format!("{name}.bias"), &[d]) }
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(s, self.gain);
        let bias = g.param(s, self.bias);
        let n = g.layer_norm(x, LN_EPS)?;
        let n = g.mul_row(n, gain)?;
        Ok(g.add_row(n, bias)?)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, rng),
            heads,
        }
    }

    /// Multi-head attention of `x` (`[n,d]`) onto `ctx` (`[m,d]`). `mask` is
    /// added to the `[n,m]` scores. Returns the output and each head's
    /// attention weights.
    pub fn forward(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        x: Var,
        ctx: Var,
        mask: Option<&Tensor>,
    ) -> Result<(Var, Vec<Var>)> {
        let q = self.q.forward(g, s, x)?;
        let k = self.k.forward(g, s, ctx)?;
        let v = self.v.forward(g, s, ctx)?;
        let d = g.shape(q)[1];
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice(q, 1, h * dh, (h + 1) * dh)?;
            let kh = g.slice(k, 1, h * dh, (h + 1) * dh)?;
            let vh = g.slice(v, 1, h * dh, (h + 1) * dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let mut scores = g.scale(scores, scale);
            if let Some(m) = mask {
                scores = g.add_const(scores, m)?;
            }
            let p = g.softmax_lastdim(scores)?;
            outs.push(g.matmul(p, vh)?);
            probs.push(p);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat(&outs, 1)? };
        Ok((self.o.forward(g, s, cat)?, probs))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), d, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, d, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<Var> {
        let h = self.up.forward(g, s, x)?;
        let h = g.gelu(h);
        self.down.forward(g, s, h)
    }
}

/// Pre-norm self-attention block.
#[derive(Debug, Clone)]
pub(crate) struct EncoderBlock {
    n1: Norm,
    attn: Attention,
    n2: Norm,
    ffn: FeedForward,
}

impl EncoderBlock {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            n1: Norm::new(store, &format!("{name}.n1"), d),
            attn: Attention::new(store, &format!("{name}.attn"), d, heads, rng),
            n2: Norm::new(store, &format!("{name}.n2"), d),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, 2 * d, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<Var> {
        let h = self.n1.forward(g, s, x)?;
        let (a, _) = self.attn.forward(g, s, h, h, None)?;
        let x = g.add(x, a)?;
        let h = self.n2.forward(g, s, x)?;
        let f = self.ffn.forward(g, s, h)?;
        Ok(g.add(x, f)?)
    }
}

/// Pre-norm block: self-attention over elements, cross-attention onto the
/// visual tokens, feed-forward.
#[derive(Debug, Clone)]
pub(crate) struct DecoderBlock {
    n1: Norm,
    self_attn: Attention,
    n2: Norm,
    cross: Attention,
    n3: Norm,
    ffn: FeedForward,
}

impl DecoderBlock {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            n1: Norm::new(store, &format!("{name}.n1"), d),
            self_attn: Attention::new(store, &format!("{name}.self"), d, heads, rng),
            n2: Norm::new(store, &format!("{name}.n2"), d),
            cross: Attention::new(store, &format!("{name}.cross"), d, heads, rng),
            n3: Norm::new(store, &format!("{name}.n3"), d),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, 2 * d, rng),
        }
    }

    /// Returns the block output and the cross-attention weights per head.
    pub fn forward(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        x: Var,
        f_v: Var,
        mask: Option<&Tensor>,
    ) -> Result<(Var, Vec<Var>)> {
        let h = self.n1.forward(g, s, x)?;
        let (a, _) = self.self_attn.forward(g, s, h, h, mask)?;
        let x = g.add(x, a)?;
        let h = self.n2.forward(g, s, x)?;
        let (c, probs) = self.cross.forward(g, s, h, f_v, None)?;
        let x = g.add(x, c)?;
        let h = self.n3.forward(g, s, x)?;
        let f = self.ffn.forward(g, s, h)?;
        Ok((g.add(x, f)?, probs))
    }
}

/// Additive causal mask: row `i` may attend to columns `<= i`.
pub(crate) fn causal_mask(n: usize) -> Tensor {
    let mut t = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            t.data_mut()[i * n + j] = -1e9;
        }
    }
    t
}
