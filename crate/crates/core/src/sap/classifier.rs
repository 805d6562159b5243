//! Per-element color classifier: the SAP encoder, a single cross-attention
//! read-out from one element query and a linear head over the joint
//! (ab, light) outputs. Elements never see each other.

use posterforge_tensor::{Adam, Graph, ParamId, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Attention, Linear, Norm};
use super::model::{image_tensor, Encoder, SapConfig};
use super::train::SapSample;
use crate::color::{QColor, AB_BINS, LIGHT_BINS};
use crate::design::{BBox, ElementCategory};
use crate::error::{Error, Result};
use crate::raster::{resize_bilinear, Image};

#[derive(Debug, Clone)]
pub struct ClassifierModel {
    cfg: SapConfig,
    store: ParamStore,
    encoder: Encoder,
    bbox: Linear,
    category: ParamId,
    norm: Norm,
    attn: Attention,
    head: Linear,
}

fn category_index(c: ElementCategory) -> usize {
    match c {
        ElementCategory::Tagline => 1,
        _ => 0,
    }
}

impl ClassifierModel {
    pub fn new(cfg: SapConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut s = ParamStore::new();
        let d = cfg.d;
        let encoder = Encoder::new(&mut s, &cfg, &mut rng);
        let bbox = Linear::new(&mut s, "cls.bbox", 4, d, &mut rng);
        let category = s.normal("cls.category", &[2, d], 0.02, &mut rng);
        let norm = Norm::new(&mut s, "cls.norm", d);
        let attn = Attention::new(&mut s, "cls.cross", d, cfg.heads, &mut rng);
        let head = Linear::new(&mut s, "cls.head", d, AB_BINS + LIGHT_BINS, &mut rng);
        Ok(Self { cfg, store: s, encoder, bbox, category, norm, attn, head })
    }

    fn logits(&self, g: &mut Graph, fv: Var, bbox: BBox, category: ElementCategory) -> Result<Var> {
        let s = &self.store;
        let b = g.constant(Tensor::new(vec![1, 4], <[f64; 4]>::from(bbox).to_vec())?);
        let q = self.bbox.forward(g, s, b)?;
        let table = g.param(s, self.category);
        let c = g.embedding_lookup(table, &[category_index(category)])?;
        let q = g.add(q, c)?;
        let h = self.norm.forward(g, s, q)?;
        let (a, _) = self.attn.forward(g, s, h, fv, None)?;
        let x = g.add(q, a)?;
        self.head.forward(g, s, x)
    }

    /// Cross-entropy training over every styled element of every sample.
    /// Returns the model and the per-step losses.
    pub fn train(samples: &[SapSample], cfg: &SapConfig) -> Result<(Self, Vec<f64>)> {
        let items: Vec<(usize, usize)> = samples
            .iter()
            .enumerate()
            .flat_map(|(i, s)| {
                s.elements
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.category.has_style() && e.style.is_some())
                    .map(move |(j, _)| (i, j))
            })
            .collect();
        if items.is_empty() {
            return Err(Error::Empty("classifier training set"));
        }
        let mut model = Self::new(cfg.clone())?;
        let mut adam = Adam::new(&model.store, cfg.lr);
        adam.clip_norm = cfg.clip_norm;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x51));
        let mut perm: Vec<usize> = Vec::new();
        let mut cursor = 0;
        let mut losses = Vec::with_capacity(cfg.steps);
        for _ in 0..cfg.steps {
            if cursor >= perm.len() {
                perm = (0..items.len()).collect();
                perm.shuffle(&mut rng);
                cursor = 0;
            }
            let end = (cursor + cfg.batch).min(perm.len());
            let mut g = Graph::new();
            let mut acc: Option<Var> = None;
            for &k in &perm[cursor..end] {
                let (i, j) = items[k];
                let (sample, el) = (&samples[i], &samples[i].elements[j]);
                let q = el.style.expect("filtered").dominant;
                let img = image_tensor(&sample.image, cfg.input_size)?;
                let (fv, _) = model.encoder.forward(&mut g, &model.store, &img)?;
                let logits = model.logits(&mut g, fv, el.bbox, el.category)?;
                let ab = g.slice(logits, 1, 0, AB_BINS)?;
                let light = g.slice(logits, 1, AB_BINS, AB_BINS + LIGHT_BINS)?;
                let la = g.focal_loss(ab, q.ab as usize, 0.0)?;
                let ll = g.focal_loss(light, q.light as usize, 0.0)?;
                let l = g.add(la, ll)?;
                acc = Some(match acc {
                    None => l,
                    Some(a) => g.add(a, l)?,
                });
            }
            let n = end - cursor;
            cursor = end;
            let loss = g.scale(acc.expect("non-empty batch"), 1.0 / n as f64);
            g.backward(loss)?;
            let grads: Vec<(ParamId, Vec<f64>)> =
                g.param_grads().into_iter().map(|(id, gr)| (id, gr.to_vec())).collect();
            losses.push(g.value(loss).data()[0]);
            adam.step(&mut model.store, &grads);
        }
        Ok((model, losses))
    }

    /// Dominant color of the element at `bbox`.
    pub fn classify(&self, img: &Image, bbox: BBox, category: ElementCategory) -> Result<QColor> {
        let n = self.cfg.input_size;
        let img =
            if img.width() == n && img.height() == n { img.to_rgb() } else { resize_bilinear(&img.to_rgb(), n, n)? };
        let t = image_tensor(&img, n)?;
        let mut g = Graph::inference();
        let (fv, _) = self.encoder.forward(&mut g, &self.store, &t)?;
        let logits = self.logits(&mut g, fv, bbox, category)?;
        let row = g.value(logits).row(0);
        let ab = posterforge_tensor::argmax(&row[..AB_BINS]);
        let light = posterforge_tensor::argmax(&row[AB_BINS..]);
        QColor::new(ab, light)
    }
}
