use std::io::{Read, Write};

use posterforge_tensor::{argmax, read_checkpoint, write_checkpoint, Graph, ParamId, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::heads::{style_from_classes, Head, HEAD_COUNT};
use super::layers::{causal_mask, DecoderBlock, EncoderBlock, Linear, Norm};
use crate::color::{AB_BINS, LIGHT_BINS};
use crate::design::{ElementCategory, GraphicElement, StyleAttributes, MAX_FONT_ID};
use crate::error::{invalid, Error, Result};
use crate::raster::{resize_bilinear, Image};

/// Four stride-2 stages.
pub const DOWNSCALE: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SapConfig {
    pub d: usize,
    pub heads: usize,
    pub enc_blocks: usize,
    pub dec_blocks: usize,
    pub input_size: usize,
    /// Channels of the first three conv stages; the fourth outputs `d`.
    pub conv_channels: [usize; 3],
    pub lambda: [f64; HEAD_COUNT],
    pub gamma: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub clip_norm: Option<f64>,
    /// Cosine-anneal the learning rate to zero over `steps`.
    pub cosine_decay: bool,
}

impl Default for SapConfig {
    fn default() -> Self {
        Self {
            d: 64,
            heads: 4,
            enc_blocks: 2,
            dec_blocks: 2,
            input_size: 64,
            conv_channels: [8, 16, 32],
            lambda: [1.0; HEAD_COUNT],
            gamma: 2.0,
            lr: 5e-3,
            steps: 600,
            batch: 8,
            seed: 0,
            clip_norm: Some(5.0),
            cosine_decay: true,
        }
    }
}

impl SapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(invalid(format!("d={} must be a positive multiple of heads={}", self.d, self.heads)));
        }
        if self.input_size < DOWNSCALE || !self.input_size.is_multiple_of(DOWNSCALE) {
            return Err(invalid(format!("input size {} must be a multiple of {DOWNSCALE}", self.input_size)));
        }
        if self.conv_channels.contains(&0) || self.batch == 0 || self.dec_blocks == 0 {
            return Err(invalid("conv channels, batch and dec_blocks must be positive"));
        }
        if !(self.gamma >= 0.0) || self.lambda.iter().any(|l| !(*l >= 0.0)) {
            return Err(invalid("gamma and lambda must be non-negative"));
        }
        if !(self.lr > 0.0) {
            return Err(invalid("learning rate must be positive"));
        }
        Ok(())
    }

    /// Side of the pooled feature map.
    pub fn pool_grid(&self) -> usize {
        self.input_size >> (POOL_STAGE + 1)
    }

    pub fn pool_channels(&self) -> usize {
        self.conv_channels.get(POOL_STAGE).copied().unwrap_or(self.d)
    }

    pub fn grid(&self) -> usize {
        self.input_size / DOWNSCALE
    }

    /// Number of visual tokens `l = HW / P^2`.
    pub fn visual_tokens(&self) -> usize {
        self.grid() * self.grid()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Nar,
    Ar,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nar" => Ok(Mode::Nar),
            "ar" => Ok(Mode::Ar),
            o => Err(invalid(format!("unknown mode {o:?}"))),
        }
    }
}

/// Sizes of the previous-element attribute embeddings used by AR decoding:
/// dominant ab, dominant light, has-gradient, has-stroke, font. The last
/// index of each table means "absent".
const ATTR_SIZES: [usize; 5] = [AB_BINS + 1, LIGHT_BINS + 1, 3, 3, MAX_FONT_ID as usize + 1];

pub fn attr_ids(category: ElementCategory, style: Option<&StyleAttributes>) -> [usize; 5] {
    let none = ATTR_SIZES.map(|n| n - 1);
    let Some(s) = style.filter(|_| category.has_style()) else {
        return none;
    };
    let tagline = category == ElementCategory::Tagline;
    [
        s.dominant.ab as usize,
        s.dominant.light as usize,
        s.gradient.is_some() as usize,
        if tagline { s.stroke.is_some() as usize } else { none[3] },
        match (tagline, s.font) {
            (true, Some(f)) => f.class(),
            _ => none[4],
        },
    ]
}

fn token_category(c: ElementCategory) -> Result<usize> {
    match c {
        ElementCategory::Logo => Ok(0),
        ElementCategory::Underlay => Ok(1),
        ElementCategory::Tagline => Ok(2),
        ElementCategory::BackgroundImage => Err(invalid("background elements are not decoder tokens")),
    }
}

/// `[n, grid*grid]` share of each element's box area falling in each
/// visual token cell (row-major). Rows sum to 1 for boxes inside the image.
pub fn box_weights(elements: &[GraphicElement], grid: usize) -> Result<Tensor> {
    let cell = 1.0 / grid as f64;
    let mut data = Vec::with_capacity(elements.len() * grid * grid);
    for e in elements {
        let b = e.bbox;
        let area = (b.width() * b.height()).max(f64::MIN_POSITIVE);
        for i in 0..grid {
            let oy = (b.y2.min((i + 1) as f64 * cell) - b.y1.max(i as f64 * cell)).max(0.0);
            for j in 0..grid {
                let ox = (b.x2.min((j + 1) as f64 * cell) - b.x1.max(j as f64 * cell)).max(0.0);
                data.push(ox * oy / area);
            }
        }
    }
    Ok(Tensor::new(vec![elements.len(), grid * grid], data)?)
}

/// Token order for AR decoding: logo, underlays, taglines, each top to
/// bottom then left to right. Background elements are dropped.
pub fn canonical_order(elements: &[GraphicElement]) -> Vec<usize> {
    let mut idx: Vec<usize> =
        (0..elements.len()).filter(|&i| elements[i].category != ElementCategory::BackgroundImage).collect();
    idx.sort_by(|&a, &b| {
        let (ea, eb) = (&elements[a], &elements[b]);
        token_category(ea.category)
            .unwrap_or(3)
            .cmp(&token_category(eb.category).unwrap_or(3))
            .then(ea.bbox.y1.total_cmp(&eb.bbox.y1))
            .then(ea.bbox.x1.total_cmp(&eb.bbox.x1))
            .then(a.cmp(&b))
    });
    idx
}

/// Conv stem (downscale 16), learned positional embedding and
/// self-attention blocks.
#[derive(Debug, Clone)]
pub(crate) struct Encoder {
    convs: Vec<(ParamId, ParamId)>,
    pos: ParamId,
    blocks: Vec<EncoderBlock>,
    norm: Norm,
}

impl Encoder {
    pub fn new(s: &mut ParamStore, cfg: &SapConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d;
        let chans = [3, cfg.conv_channels[0], cfg.conv_channels[1], cfg.conv_channels[2], d];
        let convs = (0..4)
            .map(|i| {
                let w = s.xavier_conv(format!("enc.conv{i}.w"), chans[i + 1], chans[i], 3, rng);
                let b = s.zeros(format!("enc.conv{i}.b"), &[chans[i + 1]]);
                (w, b)
            })
            .collect();
        let pos = s.normal("enc.pos", &[cfg.visual_tokens(), d], 0.02, rng);
        let blocks =
            (0..cfg.enc_blocks).map(|i| EncoderBlock::new(s, &format!("enc.block{i}"), d, cfg.heads, rng)).collect();
        let norm = Norm::new(s, "enc.norm", d);
        Self { convs, pos, blocks, norm }
    }

    pub fn first_conv(&self) -> ParamId {
        self.convs[0].0
    }

    /// Returns `(f_v, local)`: the encoded visual tokens and the raw conv
    /// tokens they were computed from, both `[l, d]`.
    pub fn forward(&self, g: &mut Graph, s: &ParamStore, img: &Tensor) -> Result<(Var, Var)> {
        let mut x = g.constant(img.clone());
        let mut local = None;
        for (i, &(w, b)) in self.convs.iter().enumerate() {
            let (w, b) = (g.param(s, w), g.param(s, b));
            let y = g.conv2d_stride(x, w, b, 2, 1)?;
            x = g.gelu(y);
            if i == POOL_STAGE {
                local = Some(tokens_of(g, x)?);
            }
        }
        let x = tokens_of(g, x)?;
        let local = local.expect("pool stage exists");
        let pos = g.param(s, self.pos);
        let mut x = g.add(x, pos)?;
        for b in &self.blocks {
            x = b.forward(g, s, x)?;
        }
        Ok((self.norm.forward(g, s, x)?, local))
    }
}

/// Conv stage whose output is pooled under element boxes: the second,
/// at 1/4 of the input resolution.
pub const POOL_STAGE: usize = 1;

/// `[c, h, w]` feature map as `[h*w, c]` row-major tokens.
fn tokens_of(g: &mut Graph, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let x = g.reshape(x, &[shape[0], shape[1] * shape[2]])?;
    Ok(g.transpose(x)?)
}

/// `[3, n, n]` tensor scaled to `[-1, 1]`; the image must be `n x n`.
pub fn image_tensor(img: &Image, n: usize) -> Result<Tensor> {
    if img.width() != n || img.height() != n {
        return Err(Error::Tensor(posterforge_tensor::TensorError::Shape {
            op: "encode",
            shapes: format!("[{}, {}] vs [{n}, {n}]", img.height(), img.width()),
        }));
    }
    let rgb = img.to_rgb();
    let mut data = vec![0.0; 3 * n * n];
    for (i, p) in rgb.data().chunks(3).enumerate() {
        for c in 0..3 {
            data[c * n * n + i] = 2.0 * p[c] - 1.0;
        }
    }
    Ok(Tensor::new(vec![3, n, n], data)?)
}

#[derive(Debug, Clone)]
struct Net {
    encoder: Encoder,
    bbox: Linear,
    roi: Linear,
    category: ParamId,
    attr: Vec<ParamId>,
    dec: Vec<DecoderBlock>,
    dec_norm: Norm,
    heads: Vec<Linear>,
}

/// Encoder output for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    /// Visual tokens after self-attention, `[l, d]`; the decoder's
    /// cross-attention memory.
    pub f_v: Tensor,
    /// Conv tokens of the pooling stage, `[pool_grid^2, pool_channels]`;
    /// averaged under each element box for the element query.
    pub local: Tensor,
}

/// Result of a decoder run with values detached from the graph.
#[derive(Debug, Clone)]
pub struct SapForward {
    /// One `[N, classes]` tensor per head.
    pub logits: Vec<Tensor>,
    /// Head-averaged last-layer cross-attention, `[N, l]`.
    pub cross_attention: Tensor,
    pub decoder_passes: usize,
    /// Graph operations recorded after encoding.
    pub decoder_ops: usize,
}

impl SapForward {
    pub fn classes(&self, row: usize) -> [usize; HEAD_COUNT] {
        std::array::from_fn(|j| self.logits[j].argmax_row(row))
    }
}

/// Per-element attention maps over the visual token grid.
#[derive(Debug, Clone)]
pub struct AttentionExport {
    /// Attention weights as recorded, `[N, l]`; each row sums to 1.
    pub rows: Tensor,
    /// Each row reshaped to `grid x grid` and min-max normalized.
    pub maps: Vec<Image>,
}

/// Bilinear upsampling of an attention map for viewing.
pub fn upsample_map(map: &Image, size: usize) -> Result<Image> {
    resize_bilinear(map, size, size)
}

#[derive(Debug, Clone)]
pub struct SapModel {
    cfg: SapConfig,
    store: ParamStore,
    net: Net,
}

impl SapModel {
    pub fn new(cfg: SapConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut s = ParamStore::new();
        let d = cfg.d;
        let encoder = Encoder::new(&mut s, &cfg, &mut rng);
        let bbox = Linear::new(&mut s, "dec.bbox", 4, d, &mut rng);
        let roi = Linear::new(&mut s, "dec.roi", cfg.pool_channels(), d, &mut rng);
        let category = s.normal("dec.category", &[3, d], 0.02, &mut rng);
        let attr = ATTR_SIZES
            .iter()
            .enumerate()
            .map(|(i, &n)| s.normal(format!("dec.attr{i}"), &[n, d], 0.02, &mut rng))
            .collect();
        let dec = (0..cfg.dec_blocks)
            .map(|i| DecoderBlock::new(&mut s, &format!("dec.block{i}"), d, cfg.heads, &mut rng))
            .collect();
        let dec_norm = Norm::new(&mut s, "dec.norm", d);
        let heads = Head::ALL
            .iter()
            .map(|h| Linear::new(&mut s, &format!("head.{}", h.name()), d, h.classes(), &mut rng))
            .collect();
        let net = Net { encoder, bbox, roi, category, attr, dec, dec_norm, heads };
        Ok(Self { cfg, store: s, net })
    }

    pub fn config(&self) -> &SapConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// First conv kernel and first decoder query weight, for gradient probes.
    pub fn probe_params(&self) -> (ParamId, ParamId) {
        (self.net.encoder.first_conv(), self.net.heads[0].weight())
    }

    pub fn image_tensor(&self, img: &Image) -> Result<Tensor> {
        image_tensor(img, self.cfg.input_size)
    }

    /// `(f_v, local)`; see [`Encoded`].
    pub fn encode_graph(&self, g: &mut Graph, img: &Tensor) -> Result<(Var, Var)> {
        self.net.encoder.forward(g, &self.store, img)
    }

    pub fn encode(&self, img: &Image) -> Result<Encoded> {
        let t = self.image_tensor(img)?;
        let mut g = Graph::inference();
        let (f_v, local) = self.encode_graph(&mut g, &t)?;
        Ok(Encoded { f_v: g.value(f_v).clone(), local: g.value(local).clone() })
    }

    /// Element tokens: projected bbox, category embedding and the projected
    /// box-pooled visual feature, plus the previous element's attribute
    /// embeddings when `prev` is given.
    pub fn tokens_graph(
        &self,
        g: &mut Graph,
        local: Var,
        elements: &[GraphicElement],
        prev: Option<&[[usize; 5]]>,
    ) -> Result<Var> {
        if elements.is_empty() {
            return Err(Error::Empty("element list"));
        }
        let s = &self.store;
        let rows: Vec<Vec<f64>> = elements.iter().map(|e| <[f64; 4]>::from(e.bbox).to_vec()).collect();
        let cats = elements.iter().map(|e| token_category(e.category)).collect::<Result<Vec<_>>>()?;
        let b = g.constant(Tensor::from_rows(&rows)?);
        let b = self.net.bbox.forward(g, s, b)?;
        let table = g.param(s, self.net.category);
        let c = g.embedding_lookup(table, &cats)?;
        let w = g.constant(box_weights(elements, self.cfg.pool_grid())?);
        let pooled = g.matmul(w, local)?;
        let r = self.net.roi.forward(g, s, pooled)?;
        let x = g.add(b, c)?;
        let mut x = g.add(x, r)?;
        if let Some(prev) = prev {
            if prev.len() != elements.len() {
                return Err(invalid("attribute prefix length differs from element count"));
            }
            for (k, &table) in self.net.attr.iter().enumerate() {
                let ids: Vec<usize> = prev.iter().map(|p| p[k]).collect();
                let t = g.param(s, table);
                let e = g.embedding_lookup(t, &ids)?;
                x = g.add(x, e)?;
            }
        }
        Ok(x)
    }

    /// Decoder stack and heads. Returns per-head logits and the last
    /// block's per-head cross-attention weights.
    pub fn decode_graph(&self, g: &mut Graph, f_v: Var, tokens: Var, causal: bool) -> Result<(Vec<Var>, Vec<Var>)> {
        let s = &self.store;
        let n = g.shape(tokens)[0];
        let mask = causal.then(|| causal_mask(n));
        let mut x = tokens;
        let mut cross = Vec::new();
        for b in &self.net.dec {
            let (y, p) = b.forward(g, s, x, f_v, mask.as_ref())?;
            x = y;
            cross = p;
        }
        let x = self.net.dec_norm.forward(g, s, x)?;
        let heads = self.net.heads.iter().map(|h| h.forward(g, s, x)).collect::<Result<Vec<_>>>()?;
        Ok((heads, cross))
    }

    fn head_average(g: &Graph, probs: &[Var]) -> Tensor {
        let mut acc = g.value(probs[0]).clone();
        for &p in &probs[1..] {
            for (a, b) in acc.data_mut().iter_mut().zip(g.value(p).data()) {
                *a += b;
            }
        }
        let k = probs.len() as f64;
        acc.data_mut().iter_mut().for_each(|v| *v /= k);
        acc
    }

    /// Prefix attribute ids for teacher forcing: element `t` sees the
    /// attributes of element `t - 1`.
    pub fn shifted_attrs(elements: &[GraphicElement], styles: &[Option<StyleAttributes>]) -> Vec<[usize; 5]> {
        let none = ATTR_SIZES.map(|n| n - 1);
        (0..elements.len())
            .map(|t| if t == 0 { none } else { attr_ids(elements[t - 1].category, styles[t - 1].as_ref()) })
            .collect()
    }

    /// Runs the decoder on precomputed visual features.
    ///
    /// NAR: one pass. AR with `teacher`: one causally masked pass over the
    /// given attributes. AR without `teacher`: one pass per element, each
    /// conditioned on the argmax attributes decoded so far.
    pub fn forward_features(
        &self,
        enc: &Encoded,
        elements: &[GraphicElement],
        mode: Mode,
        teacher: Option<&[Option<StyleAttributes>]>,
    ) -> Result<SapForward> {
        let mut g = Graph::inference();
        let fv = g.constant(enc.f_v.clone());
        let local = g.constant(enc.local.clone());
        self.forward_in(&mut g, (fv, local), elements, mode, teacher)
    }

    fn forward_in(
        &self,
        g: &mut Graph,
        (fv, local): (Var, Var),
        elements: &[GraphicElement],
        mode: Mode,
        teacher: Option<&[Option<StyleAttributes>]>,
    ) -> Result<SapForward> {
        let start_ops = g.op_count();
        let n = elements.len();
        let single = |g: &mut Graph, prev: Option<&[[usize; 5]]>, causal: bool| -> Result<SapForward> {
            let tok = self.tokens_graph(g, local, elements, prev)?;
            let (heads, cross) = self.decode_graph(g, fv, tok, causal)?;
            Ok(SapForward {
                logits: heads.iter().map(|&h| g.value(h).clone()).collect(),
                cross_attention: Self::head_average(g, &cross),
                decoder_passes: 1,
                decoder_ops: 0,
            })
        };
        let mut out = match (mode, teacher) {
            (Mode::Nar, _) => single(g, None, false)?,
            (Mode::Ar, Some(t)) => {
                if t.len() != n {
                    return Err(invalid("teacher attribute count differs from element count"));
                }
                let prev = Self::shifted_attrs(elements, t);
                single(g, Some(&prev), true)?
            }
            (Mode::Ar, None) => {
                let mut styles: Vec<Option<StyleAttributes>> = Vec::with_capacity(n);
                let mut logits: Vec<Vec<f64>> = vec![Vec::new(); HEAD_COUNT];
                let mut cross_rows = Vec::new();
                for t in 0..n {
                    let prefix = &elements[..=t];
                    let mut prev = Self::shifted_attrs(prefix, &styles);
                    prev.truncate(t + 1);
                    let tok = self.tokens_graph(g, local, prefix, Some(&prev))?;
                    let (heads, cross) = self.decode_graph(g, fv, tok, true)?;
                    let mut classes = [0usize; HEAD_COUNT];
                    for (j, &h) in heads.iter().enumerate() {
                        let row = g.value(h).row(t);
                        classes[j] = argmax(row);
                        logits[j].extend_from_slice(row);
                    }
                    cross_rows.extend_from_slice(Self::head_average(g, &cross).row(t));
                    styles.push(style_from_classes(elements[t].category, &classes));
                }
                let l = cross_rows.len() / n;
                SapForward {
                    logits: logits
                        .into_iter()
                        .zip(Head::ALL)
                        .map(|(v, h)| Tensor::new(vec![n, h.classes()], v))
                        .collect::<std::result::Result<_, _>>()?,
                    cross_attention: Tensor::new(vec![n, l], cross_rows)?,
                    decoder_passes: n,
                    decoder_ops: 0,
                }
            }
        };
        out.decoder_ops = g.op_count() - start_ops;
        Ok(out)
    }

    /// Encodes `img` and decodes `elements` (in the given order; no
    /// background elements).
    pub fn forward(
        &self,
        img: &Image,
        elements: &[GraphicElement],
        mode: Mode,
        teacher: Option<&[Option<StyleAttributes>]>,
    ) -> Result<SapForward> {
        let t = self.image_tensor(img)?;
        let mut g = Graph::inference();
        let enc = self.encode_graph(&mut g, &t)?;
        self.forward_in(&mut g, enc, elements, mode, teacher)
    }

    fn resized(&self, img: &Image) -> Result<Image> {
        let n = self.cfg.input_size;
        if img.width() == n && img.height() == n {
            Ok(img.to_rgb())
        } else {
            resize_bilinear(&img.to_rgb(), n, n)
        }
    }

    /// Style per element (aligned with `elements`); `None` for logos and
    /// backgrounds. The image is resized to the input size.
    pub fn predict(
        &self,
        img: &Image,
        elements: &[GraphicElement],
        mode: Mode,
    ) -> Result<Vec<Option<StyleAttributes>>> {
        let order = canonical_order(elements);
        let mut out = vec![None; elements.len()];
        if order.is_empty() {
            return Ok(out);
        }
        let toks: Vec<GraphicElement> = order.iter().map(|&i| elements[i].clone()).collect();
        let fwd = self.forward(&self.resized(img)?, &toks, mode, None)?;
        for (row, &i) in order.iter().enumerate() {
            out[i] = style_from_classes(elements[i].category, &fwd.classes(row));
        }
        Ok(out)
    }

    /// Last-layer cross-attention per token element (canonical order).
    pub fn export_attention(&self, img: &Image, elements: &[GraphicElement], mode: Mode) -> Result<AttentionExport> {
        let order = canonical_order(elements);
        let toks: Vec<GraphicElement> = order.iter().map(|&i| elements[i].clone()).collect();
        let fwd = self.forward(&self.resized(img)?, &toks, mode, None)?;
        let grid = self.cfg.grid();
        let rows = fwd.cross_attention;
        let maps = (0..toks.len())
            .map(|i| {
                let r = rows.row(i);
                let lo = r.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let data =
                    if hi - lo > 0.0 { r.iter().map(|v| (v - lo) / (hi - lo)).collect() } else { vec![0.0; r.len()] };
                Image::new(grid, grid, 1, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AttentionExport { rows, maps })
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        Ok(write_checkpoint(&self.store, w)?)
    }

    /// Rebuilds the architecture from `cfg` and loads matching weights.
    pub fn load<R: Read>(cfg: SapConfig, r: R) -> Result<Self> {
        let mut model = Self::new(cfg)?;
        let loaded = read_checkpoint(r)?;
        if loaded.len() != model.store.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} tensors, model expects {}",
                loaded.len(),
                model.store.len()
            )));
        }
        for id in model.store.ids().collect::<Vec<_>>() {
            let name = model.store.name(id).to_string();
            let src = loaded.find(&name).ok_or_else(|| Error::Validation(format!("checkpoint lacks tensor {name}")))?;
            let value = loaded.value(src);
            if value.shape() != model.store.value(id).shape() {
                return Err(Error::Validation(format!("tensor {name} has shape {:?}", value.shape())));
            }
            *model.store.value_mut(id) = value.clone();
        }
        Ok(model)
    }
}
