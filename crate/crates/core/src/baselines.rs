//! Comparison color predictors: median-cut palette contrast, histogram
//! retrieval, a per-element classifier and a uniform random guesser.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color::{srgb_to_lab, AbGamut, QColor, AB_BINS, LIGHT_BINS};
use crate::design::{BBox, ElementCategory, FontId, StyleAttributes, MAX_FONT_ID};
use crate::error::{invalid, Error, Result};
use crate::eval::LabeledPoster;
use crate::raster::{quantize8, Image};
use crate::sap::{ClassifierModel, SapConfig, SapSample};

fn pixel_rect(img: &Image, bbox: BBox) -> Result<(usize, usize, usize, usize)> {
    if !bbox.is_valid() {
        return Err(invalid(format!("degenerate bbox {:?}", <[f64; 4]>::from(bbox))));
    }
    Ok(bbox.to_pixels(img.width(), img.height()))
}

fn rgb8(img: &Image, x: usize, y: usize) -> [u8; 3] {
    let p = img.pixel(x, y);
    if p.len() >= 3 {
        [quantize8(p[0]), quantize8(p[1]), quantize8(p[2])]
    } else {
        let v = quantize8(p[0]);
        [v; 3]
    }
}

fn region_pixels(img: &Image, r: (usize, usize, usize, usize)) -> Vec<[u8; 3]> {
    let mut out = Vec::with_capacity((r.2 - r.0) * (r.3 - r.1));
    for y in r.1..r.3 {
        for x in r.0..r.2 {
            out.push(rgb8(img, x, y));
        }
    }
    out
}

/// A palette color (mean of its box) and the pixels it stands for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaletteColor {
    pub rgb: [f64; 3],
    pub population: usize,
}

/// Median cut: split the most populous box that still has spread along its
/// widest channel at the median. Palette sorted by population, ties in
/// creation order. Fewer than `k` colors when the pixels run out of spread.
pub fn median_cut(pixels: &[[u8; 3]], k: usize) -> Vec<PaletteColor> {
    if pixels.is_empty() || k == 0 {
        return Vec::new();
    }
    let spread = |b: &[[u8; 3]]| -> [u8; 3] {
        let mut lo = [255u8; 3];
        let mut hi = [0u8; 3];
        for p in b {
            for c in 0..3 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]]
    };
    let mut boxes: Vec<Vec<[u8; 3]>> = vec![pixels.to_vec()];
    while boxes.len() < k {
        let pick = boxes
            .iter()
            .enumerate()
            .filter(|(_, b)| spread(b).iter().any(|&s| s > 0))
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i);
        let Some(i) = pick else { break };
        let s = spread(&boxes[i]);
        let ch = (0..3).max_by(|&a, &b| s[a].cmp(&s[b]).then(b.cmp(&a))).expect("three channels");
        let mut b = std::mem::take(&mut boxes[i]);
        b.sort_by_key(|p| (p[ch], *p));
        // Cut at the median but never between equal values on the split channel.
        let mid = b.len() / 2;
        let v = b[mid][ch];
        let lower = b.partition_point(|p| p[ch] < v);
        let upper = b.partition_point(|p| p[ch] <= v);
        let cut = if lower > 0 { lower } else { upper };
        let hi = b.split_off(cut);
        boxes[i] = b;
        boxes.insert(i + 1, hi);
    }
    let mut pal: Vec<PaletteColor> = boxes
        .iter()
        .map(|b| {
            let mut sum = [0.0; 3];
            for p in b {
                for c in 0..3 {
                    sum[c] += p[c] as f64;
                }
            }
            PaletteColor { rgb: sum.map(|s| s / (255.0 * b.len() as f64)), population: b.len() }
        })
        .collect();
    pal.sort_by(|a, b| b.population.cmp(&a.population));
    pal
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contrast {
    /// CIE76 color difference.
    #[default]
    DeltaE,
    /// WCAG relative-luminance ratio.
    Wcag,
}

fn luminance(rgb: [f64; 3]) -> f64 {
    let lin = |v: f64| {
        if v <= 0.04045 {
            v / 12.92
        } else {
            ((v + 0.055) / 1.055).powf(2.4)
        }
    };
    0.2126 * lin(rgb[0]) + 0.7152 * lin(rgb[1]) + 0.0722 * lin(rgb[2])
}

impl Contrast {
    pub fn between(self, a: [f64; 3], b: [f64; 3]) -> f64 {
        match self {
            Contrast::DeltaE => srgb_to_lab(a).delta_e(&srgb_to_lab(b)),
            Contrast::Wcag => {
                let (la, lb) = (luminance(a), luminance(b));
                (la.max(lb) + 0.05) / (la.min(lb) + 0.05)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmcqConfig {
    pub local_colors: usize,
    pub global_colors: usize,
    pub contrast: Contrast,
}

impl Default for MmcqConfig {
    fn default() -> Self {
        Self { local_colors: 4, global_colors: 8, contrast: Contrast::DeltaE }
    }
}

/// The global palette color contrasting most with the dominant color of the
/// bbox patch; ties go to the more populous color.
pub fn mmcq_predict(img: &Image, bbox: BBox, cfg: &MmcqConfig) -> Result<QColor> {
    if cfg.local_colors == 0 || cfg.global_colors == 0 {
        return Err(invalid("palette sizes must be positive"));
    }
    let r = pixel_rect(img, bbox)?;
    let local = median_cut(&region_pixels(img, r), cfg.local_colors);
    let global = median_cut(&region_pixels(img, (0, 0, img.width(), img.height())), cfg.global_colors);
    let anchor = local[0].rgb;
    let mut best = global[0];
    let mut best_c = cfg.contrast.between(anchor, best.rgb);
    for p in &global[1..] {
        let c = cfg.contrast.between(anchor, p.rgb);
        if c > best_c {
            best = *p;
            best_c = c;
        }
    }
    Ok(AbGamut::standard().quantize_rgb(best.rgb))
}

pub const HIST_BINS: usize = 512;

/// Normalized 8x8x8 RGB histogram of the bbox region.
pub fn region_histogram(img: &Image, bbox: BBox) -> Result<Vec<f64>> {
    let r = pixel_rect(img, bbox)?;
    let px = region_pixels(img, r);
    let mut h = vec![0.0; HIST_BINS];
    for p in &px {
        h[(p[0] as usize >> 5) * 64 + (p[1] as usize >> 5) * 8 + (p[2] as usize >> 5)] += 1.0;
    }
    let n = px.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    Ok(h)
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LibraryEntry {
    pub histogram: Vec<f64>,
    pub color: QColor,
}

/// Tagline region histograms with their colors; immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorLibrary {
    entries: Vec<LibraryEntry>,
}

impl ColorLibrary {
    pub fn new(entries: Vec<LibraryEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("color library"));
        }
        for (i, e) in entries.iter().enumerate() {
            let sum: f64 = e.histogram.iter().sum();
            if e.histogram.len() != HIST_BINS || (sum - 1.0).abs() > 1e-6 || e.histogram.iter().any(|v| *v < 0.0) {
                return Err(Error::Validation(format!("library entry {i}: histogram is not a distribution")));
            }
            if !e.color.is_valid() {
                return Err(Error::Validation(format!("library entry {i}: color out of range")));
            }
        }
        Ok(Self { entries })
    }

    /// One entry per styled tagline, in poster then element order.
    pub fn build(posters: &[LabeledPoster]) -> Result<Self> {
        let mut entries = Vec::new();
        for p in posters {
            for e in p.elements.iter().filter(|e| e.category == ElementCategory::Tagline) {
                if let Some(s) = e.style {
                    entries.push(LibraryEntry { histogram: region_histogram(&p.image, e.bbox)?, color: s.dominant });
                }
            }
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &[LibraryEntry] {
        &self.entries
    }

    pub fn nearest(&self, histogram: &[f64]) -> &LibraryEntry {
        let mut best = &self.entries[0];
        let mut best_d = l1_distance(histogram, &best.histogram);
        for e in &self.entries[1..] {
            let d = l1_distance(histogram, &e.histogram);
            if d < best_d {
                best = e;
                best_d = d;
            }
        }
        best
    }

    pub fn predict(&self, img: &Image, bbox: BBox) -> Result<QColor> {
        Ok(self.nearest(&region_histogram(img, bbox)?).color)
    }

    /// Little-endian: u32 count, then per entry 512 f32 bins, u16 ab, u8 light.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            for v in &e.histogram {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
            w.write_all(&e.color.ab.to_le_bytes())?;
            w.write_all(&[e.color.light])?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let mut histogram = Vec::with_capacity(HIST_BINS);
            for _ in 0..HIST_BINS {
                r.read_exact(&mut b4)?;
                histogram.push(f32::from_le_bytes(b4) as f64);
            }
            let mut c = [0u8; 3];
            r.read_exact(&mut c)?;
            entries.push(LibraryEntry {
                histogram,
                color: QColor::new(u16::from_le_bytes([c[0], c[1]]) as usize, c[2] as usize)?,
            });
        }
        Self::new(entries)
    }
}

/// Per-element dominant color classifier; elements are scored one at a time.
#[derive(Debug, Clone)]
pub struct ClassifierBaseline {
    model: ClassifierModel,
}

impl ClassifierBaseline {
    /// Trains on every styled tagline and underlay; returns per-step losses.
    pub fn train(posters: &[LabeledPoster], cfg: &SapConfig) -> Result<(Self, Vec<f64>)> {
        let samples = posters
            .iter()
            .map(|p| SapSample::new(&p.image, &p.elements, cfg.input_size))
            .collect::<Result<Vec<_>>>()?;
        let (model, losses) = ClassifierModel::train(&samples, cfg)?;
        Ok((Self { model }, losses))
    }

    pub fn classify(&self, img: &Image, bbox: BBox, category: ElementCategory) -> Result<QColor> {
        if !bbox.is_valid() {
            return Err(invalid("degenerate bbox"));
        }
        self.model.classify(img, bbox, category)
    }
}

/// Uniform guesses: ab over every gamut bin, light over every level, fair
/// presence coins, font uniform over all ids.
#[derive(Debug, Clone)]
pub struct RandomBaseline {
    rng: ChaCha8Rng,
}

impl RandomBaseline {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn color(&mut self) -> QColor {
        let ab = self.rng.gen_range(0..AB_BINS);
        let light = self.rng.gen_range(0..LIGHT_BINS);
        QColor::new(ab, light).expect("in range")
    }

    pub fn coin(&mut self) -> bool {
        self.rng.gen_bool(0.5)
    }

    /// A random style restricted to what `category` allows.
    pub fn style(&mut self, category: ElementCategory) -> Option<StyleAttributes> {
        if !category.has_style() {
            return None;
        }
        let mut s = StyleAttributes::solid(self.color());
        // Draw every variable for every element so streams stay aligned.
        let g = (self.coin(), self.color());
        let st = (self.coin(), self.color());
        let font = FontId::from_class(self.rng.gen_range(0..MAX_FONT_ID as usize));
        s.gradient = g.0.then_some(g.1);
        if category == ElementCategory::Tagline {
            s.stroke = st.0.then_some(st.1);
            s.font = Some(font);
        }
        Some(s)
    }
}
