use posterforge_tensor::{argmax, Adam, Graph, ParamId, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{background, complement, region_stats, SynthConfig};
use crate::design::{StyleAttributes, Tagline};
use crate::error::{invalid, Error, Result};
use crate::raster::Image;
use crate::render::{render_text, GlyphProvider, TextOptions};
use crate::sap::layers::Linear;

pub const CROP_H: usize = 16;
pub const CROP_W: usize = 64;

/// A rendered text crop and its glyph style index.
#[derive(Debug, Clone, PartialEq)]
pub struct FontCrop {
    pub image: Image,
    pub label: usize,
}

/// Renders 3 or 4 characters in `style` on a fresh background, filled with
/// the background's contrast color.
pub fn font_crop(cfg: &SynthConfig, style: usize, glyphs: &GlyphProvider, rng: &mut impl Rng) -> Result<Image> {
    let font = glyphs.font_for_style(style).ok_or_else(|| invalid(format!("no font id maps to style {style}")))?;
    let mut bg = background(CROP_W, CROP_H, 1, rng);
    let len = rng.gen_range(3..=4);
    let text: String = {
        let mut c = cfg.clone();
        c.min_len = len;
        c.max_len = len;
        super::sample_tagline(&c, rng)?.as_str().to_owned()
    };
    let st = region_stats(&bg, (0, 0, CROP_W, CROP_H))?;
    let style_attr = StyleAttributes { font: Some(font), ..StyleAttributes::solid(complement(&st.mean)) };
    let (layer, _) = render_text(
        &Tagline::new(text)?,
        (0, 0, CROP_W, CROP_H),
        CROP_W,
        CROP_H,
        &style_attr,
        glyphs,
        &TextOptions::default(),
    )?;
    layer.composite_onto(&mut bg);
    Ok(bg)
}

/// `n` crops cycling over the given glyph styles; the label is the position
/// in `styles`.
pub fn generate_font_crops(
    cfg: &SynthConfig,
    n: usize,
    styles: &[usize],
    seed: u64,
    glyphs: &GlyphProvider,
) -> Result<Vec<FontCrop>> {
    if styles.len() < 2 {
        return Err(invalid("font crops need at least two styles"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % styles.len();
            Ok(FontCrop { image: font_crop(cfg, styles[label], glyphs, &mut rng)?, label })
        })
        .collect()
}

/// Grayscale, zero mean, unit variance; `[1, CROP_H, CROP_W]`.
fn crop_tensor(img: &Image) -> Result<Tensor> {
    if img.width() != CROP_W || img.height() != CROP_H {
        return Err(invalid(format!("font crops must be {CROP_W}x{CROP_H}")));
    }
    let gray = img.to_gray();
    let v = gray.data();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt().max(1e-3);
    Ok(Tensor::new(vec![1, CROP_H, CROP_W], v.iter().map(|x| (x - mean) / std).collect())?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FontTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Share of crops held out for testing.
    pub test_fraction: f64,
}

impl Default for FontTrainConfig {
    fn default() -> Self {
        Self { steps: 500, batch: 16, lr: 3e-3, seed: 0, test_fraction: 0.2 }
    }
}

const CHANNELS: [usize; 5] = [1, 8, 16, 32, 32];
const STRIDES: [usize; 4] = [1, 2, 2, 2];

/// Four conv stages, global mean pooling and a linear classifier.
#[derive(Debug, Clone)]
pub struct FontRecognizer {
    store: ParamStore,
    convs: Vec<(ParamId, ParamId)>,
    head: Linear,
    classes: usize,
}

impl FontRecognizer {
    pub fn new(classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let convs = (0..4)
            .map(|i| {
                let w = store.xavier_conv(format!("font.conv{i}.w"), CHANNELS[i + 1], CHANNELS[i], 3, &mut rng);
                let b = store.zeros(format!("font.conv{i}.b"), &[CHANNELS[i + 1]]);
                (w, b)
            })
            .collect();
        let head = Linear::new(&mut store, "font.head", CHANNELS[4], classes, &mut rng);
        Self { store, convs, head, classes }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn logits(&self, g: &mut Graph, x: &Tensor) -> Result<Var> {
        let mut h = g.constant(x.clone());
        for (&(w, b), &stride) in self.convs.iter().zip(&STRIDES) {
            let (w, b) = (g.param(&self.store, w), g.param(&self.store, b));
            let y = g.conv2d_stride(h, w, b, stride, 1)?;
            h = g.gelu(y);
        }
        let s = g.shape(h).to_vec();
        let flat = g.reshape(h, &[s[0], s[1] * s[2]])?;
        let t = g.transpose(flat)?;
        let pooled = g.mean_rows(t)?;
        self.head.forward(g, &self.store, pooled)
    }

    pub fn predict(&self, img: &Image) -> Result<usize> {
        let mut g = Graph::inference();
        let l = self.logits(&mut g, &crop_tensor(img)?)?;
        Ok(argmax(g.value(l).data()))
    }

    pub fn accuracy(&self, crops: &[FontCrop]) -> Result<f64> {
        if crops.is_empty() {
            return Err(Error::Empty("evaluation crops"));
        }
        let mut hits = 0;
        for c in crops {
            hits += (self.predict(&c.image)? == c.label) as usize;
        }
        Ok(hits as f64 / crops.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FontTrainReport {
    pub losses: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub test_accuracy: f64,
}

/// Seeded train/test split, cross-entropy training with Adam, held-out
/// accuracy.
pub fn train_font_recognizer(crops: &[FontCrop], cfg: &FontTrainConfig) -> Result<(FontRecognizer, FontTrainReport)> {
    let classes = crops.iter().map(|c| c.label).max().map_or(0, |m| m + 1);
    let distinct = {
        let mut seen = vec![false; classes];
        crops.iter().for_each(|c| seen[c.label] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(invalid("font recognizer needs at least two labelled styles"));
    }
    if !(0.0..1.0).contains(&cfg.test_fraction) || cfg.batch == 0 {
        return Err(invalid("test_fraction must be in [0, 1) and batch positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut idx: Vec<usize> = (0..crops.len()).collect();
    idx.shuffle(&mut rng);
    let n_test = (crops.len() as f64 * cfg.test_fraction).round() as usize;
    let (test_idx, train_idx) = idx.split_at(n_test);
    if train_idx.is_empty() {
        return Err(Error::Empty("font training split"));
    }
    let inputs: Vec<Tensor> = train_idx.iter().map(|&i| crop_tensor(&crops[i].image)).collect::<Result<_>>()?;
    let labels: Vec<usize> = train_idx.iter().map(|&i| crops[i].label).collect();

    let mut model = FontRecognizer::new(classes, cfg.seed);
    let mut adam = Adam::new(&model.store, cfg.lr);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        if cursor >= order.len() {
            order = (0..inputs.len()).collect();
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + cfg.batch).min(order.len());
        let mut g = Graph::new();
        let mut rows = Vec::new();
        for &i in &order[cursor..end] {
            rows.push(model.logits(&mut g, &inputs[i])?);
        }
        let targets: Vec<Option<usize>> = order[cursor..end].iter().map(|&i| Some(labels[i])).collect();
        cursor = end;
        let stacked = g.concat(&rows, 0)?;
        let weights = vec![1.0 / targets.len() as f64; targets.len()];
        let loss = g.focal_loss_rows(stacked, &targets, &weights, 0.0)?;
        g.backward(loss)?;
        let grads: Vec<(ParamId, Vec<f64>)> = g.param_grads().into_iter().map(|(id, gr)| (id, gr.to_vec())).collect();
        losses.push(g.value(loss).data()[0]);
        adam.step(&mut model.store, &grads);
    }
    let test: Vec<FontCrop> = test_idx.iter().map(|&i| crops[i].clone()).collect();
    let test_accuracy = if test.is_empty() { f64::NAN } else { model.accuracy(&test)? };
    Ok((model, FontTrainReport { losses, n_train: train_idx.len(), n_test, test_accuracy }))
}
