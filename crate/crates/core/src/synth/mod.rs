//! Synthetic posters with planted image-to-style rules, plus a toy font
//! recognizer trained on rendered text crops.

mod dataset;
mod font;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color::{quantize_light, srgb_to_lab, AbGamut, LabColor, QColor, LIGHT_BINS};
use crate::design::{
    attach_taglines, heuristic_layout, BBox, ElementCategory, FontId, GraphicElement, PosterSpec, StyleAttributes,
    Tagline,
};
use crate::error::{invalid, Error, Result};
use crate::raster::{quantize8, Image};
use crate::render::{compose_poster, RenderAssets};
use crate::retarget::ft_saliency;

pub use dataset::{generate_dataset, load_dataset, load_sap_samples, ManifestRow, SynthRecord, MANIFEST};
pub use font::{
    font_crop, generate_font_crops, train_font_recognizer, FontCrop, FontRecognizer, FontTrainConfig, FontTrainReport,
    CROP_H, CROP_W,
};

/// English letter frequencies in percent, A to Z.
const ENGLISH: [f64; 26] = [
    8.17, 1.29, 2.78, 4.25, 12.70, 2.23, 2.02, 6.09, 6.97, 0.15, 0.77, 4.03, 2.41, 6.75, 7.51, 1.93, 0.10, 5.99, 6.33,
    9.06, 2.76, 0.98, 2.36, 0.15, 1.97, 0.07,
];

/// Character distribution for tagline synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharTable {
    pub entries: Vec<(char, f64)>,
}

impl CharTable {
    pub fn english() -> Self {
        let total: f64 = ENGLISH.iter().sum();
        Self { entries: ENGLISH.iter().enumerate().map(|(i, p)| ((b'A' + i as u8) as char, p / total)).collect() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Empty("character table"));
        }
        if self.entries.iter().any(|&(c, p)| !(p >= 0.0) || c.is_control()) {
            return Err(invalid("character probabilities must be non-negative for printable characters"));
        }
        let sum: f64 = self.entries.iter().map(|e| e.1).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(invalid(format!("character probabilities sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Parses a `codepoint,probability` CSV. Code points are decimal or
    /// `U+XXXX`.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut entries = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |msg: &str| invalid(format!("frequency table row {}: {msg}", line + 2));
            let (cp, p) = match (rec.get(0), rec.get(1)) {
                (Some(cp), Some(p)) => (cp, p),
                _ => return Err(bad("expected two fields")),
            };
            let code = match cp.strip_prefix("U+").or_else(|| cp.strip_prefix("u+")) {
                Some(hex) => u32::from_str_radix(hex, 16),
                None => cp.parse(),
            }
            .map_err(|_| bad("bad code point"))?;
            let c = char::from_u32(code).ok_or_else(|| bad("not a scalar value"))?;
            let p: f64 = p.parse().map_err(|_| bad("bad probability"))?;
            entries.push((c, p));
        }
        let t = Self { entries };
        t.validate()?;
        Ok(t)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("codepoint,probability\n");
        for (c, p) in &self.entries {
            s.push_str(&format!("U+{:04X},{p}\n", *c as u32));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub chars: CharTable,
    pub min_len: usize,
    pub max_len: usize,
    /// Side of the square clean image.
    pub size: usize,
    pub max_taglines: usize,
    pub logo_probability: f64,
    /// Number of faint background blobs is drawn from `0..=max_blobs`.
    pub max_blobs: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            chars: CharTable::english(),
            min_len: 4,
            max_len: 12,
            size: 128,
            max_taglines: 3,
            logo_probability: 0.5,
            max_blobs: 2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.chars.validate()?;
        if self.min_len == 0 || self.max_len < self.min_len {
            return Err(invalid(format!("tagline lengths {}..={} invalid", self.min_len, self.max_len)));
        }
        if self.size < 32 {
            return Err(invalid(format!("image size {} below 32", self.size)));
        }
        if self.max_taglines == 0 {
            return Err(invalid("max_taglines must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.logo_probability) {
            return Err(invalid("logo_probability must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Length uniform in `min_len..=max_len`, characters i.i.d. from the table.
pub fn sample_tagline(cfg: &SynthConfig, rng: &mut impl Rng) -> Result<Tagline> {
    cfg.validate()?;
    let dist = WeightedIndex::new(cfg.chars.entries.iter().map(|e| e.1)).map_err(|e| invalid(e.to_string()))?;
    let len = rng.gen_range(cfg.min_len..=cfg.max_len);
    let text: String = (0..len).map(|_| cfg.chars.entries[dist.sample(rng)].0).collect();
    Tagline::new(text)
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Linear two-color gradient in a random direction, a soft central product
/// blob and a few faint blobs. Values are snapped to the 8-bit grid so the
/// image survives a PNG round trip unchanged.
pub fn background(w: usize, h: usize, max_blobs: usize, rng: &mut impl Rng) -> Image {
    let c0: [f64; 3] = rng.gen();
    let c1: [f64; 3] = rng.gen();
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (theta.cos(), theta.sin());
    let (fw, fh) = (w as f64, h as f64);
    let prod_c: [f64; 3] = rng.gen();
    let (pcx, pcy) = (rng.gen_range(0.35..0.65) * fw, rng.gen_range(0.4..0.6) * fh);
    let (prx, pry) = (rng.gen_range(0.12..0.22) * fw, rng.gen_range(0.12..0.22) * fh);
    let blobs: Vec<([f64; 3], f64, f64, f64)> = (0..rng.gen_range(0..=max_blobs))
        .map(|_| (rng.gen(), rng.gen_range(0.0..fw), rng.gen_range(0.0..fh), rng.gen_range(0.1..0.2) * fw))
        .collect();
    Image::from_fn(w, h, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let t = 0.5 + ((px / fw - 0.5) * dx + (py / fh - 0.5) * dy) / std::f64::consts::SQRT_2;
        let mut p: [f64; 3] = std::array::from_fn(|c| c0[c] + (c1[c] - c0[c]) * t);
        for (bc, bx, by, r) in &blobs {
            let k = 0.3 * (-((px - bx).powi(2) + (py - by).powi(2)) / (2.0 * r * r)).exp();
            for c in 0..3 {
                p[c] += (bc[c] - p[c]) * k;
            }
        }
        let d = (((px - pcx) / prx).powi(2) + ((py - pcy) / pry).powi(2)).sqrt();
        let k = 1.0 - smoothstep(0.85, 1.0, d);
        for c in 0..3 {
            p[c] += (prod_c[c] - p[c]) * k;
        }
        p.map(|v| quantize8(v) as f64 / 255.0)
    })
}

/// Lab statistics of a pixel region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionStats {
    pub mean: LabColor,
    /// RMS Lab distance to the mean.
    pub std: f64,
    pub top: LabColor,
    pub bottom: LabColor,
}

fn mean_lab(px: &[LabColor]) -> LabColor {
    let n = px.len() as f64;
    let (l, a, b) = px.iter().fold((0.0, 0.0, 0.0), |s, p| (s.0 + p.l, s.1 + p.a, s.2 + p.b));
    LabColor { l: l / n, a: a / n, b: b / n }
}

pub fn region_stats(img: &Image, rect: (usize, usize, usize, usize)) -> Result<RegionStats> {
    let (x0, y0, x1, y1) = rect;
    if x1 <= x0 || y1 <= y0 || x1 > img.width() || y1 > img.height() {
        return Err(Error::Bounds {
            rect: (x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0)),
            width: img.width(),
            height: img.height(),
        });
    }
    let rgb = img.to_rgb();
    let mut all = Vec::with_capacity((x1 - x0) * (y1 - y0));
    for y in y0..y1 {
        for x in x0..x1 {
            let p = rgb.pixel(x, y);
            all.push(srgb_to_lab([p[0], p[1], p[2]]));
        }
    }
    let mean = mean_lab(&all);
    let var = all.iter().map(|p| (p.l - mean.l).powi(2) + (p.a - mean.a).powi(2) + (p.b - mean.b).powi(2)).sum::<f64>()
        / all.len() as f64;
    // Halves exclude the middle row of odd-height boxes.
    let (top, bottom) = if y1 - y0 >= 2 {
        let split = ((y1 - y0) / 2) * (x1 - x0);
        (mean_lab(&all[..split]), mean_lab(&all[all.len() - split..]))
    } else {
        (mean, mean)
    };
    Ok(RegionStats { mean, std: var.sqrt(), top, bottom })
}

/// Lab std below which a tagline gets a stroke.
pub const STROKE_STD: f64 = 8.0;
/// Minimum lightness change between the image's top and bottom halves for
/// a gradient fill.
pub const GRADIENT_DL: f64 = 4.0;

/// Contrast color for a background region: complementary ab, inverted
/// lightness bin.
fn complement(lab: &LabColor) -> QColor {
    let gamut = AbGamut::standard();
    let ab = gamut.quantize_ab(&LabColor { l: lab.l, a: -lab.a, b: -lab.b });
    QColor { ab: ab as u16, light: (LIGHT_BINS - 1 - quantize_light(lab.l)) as u8 }
}

/// Font from the hue octant of the region mean (ids 1 to 8).
fn hue_font(lab: &LabColor) -> FontId {
    let hue = lab.b.atan2(lab.a) + std::f64::consts::PI;
    let octant = ((hue / (std::f64::consts::PI / 4.0)) as usize).min(7);
    FontId::from_class(octant)
}

/// Ground-truth style of an element, a pure function of the clean image
/// under its box. `None` for categories without style.
pub fn planted_style(img: &Image, category: ElementCategory, bbox: BBox) -> Result<Option<StyleAttributes>> {
    if !category.has_style() {
        return Ok(None);
    }
    let st = region_stats(img, bbox.to_pixels(img.width(), img.height()))?;
    let dominant = complement(&st.mean);
    // Gradients follow the image's overall vertical tone change and end on
    // the contrast color of its lower half.
    let whole = region_stats(img, (0, 0, img.width(), img.height()))?;
    let gradient = ((whole.top.l - whole.bottom.l).abs() >= GRADIENT_DL).then(|| complement(&whole.bottom));
    let mut style = StyleAttributes { dominant, gradient, stroke: None, font: None };
    if category == ElementCategory::Tagline {
        let neutral = AbGamut::standard().quantize_ab(&LabColor { l: 50.0, a: 0.0, b: 0.0 });
        style.stroke = (st.std < STROKE_STD)
            .then_some(QColor { ab: neutral as u16, light: (LIGHT_BINS as u8 - 1) - dominant.light });
        style.font = Some(hue_font(&st.mean));
    }
    Ok(Some(style))
}

/// One synthetic example.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub clean: Image,
    pub spec: PosterSpec,
    pub poster: Image,
}

/// Draws a background, lays it out heuristically and assigns planted
/// styles. Fully determined by `seed`.
pub fn generate_sample(cfg: &SynthConfig, seed: u64, assets: &RenderAssets) -> Result<SynthSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.size;
    let clean = background(n, n, cfg.max_blobs, &mut rng);
    let n_tag = rng.gen_range(1..=cfg.max_taglines);
    let logo = rng.gen_bool(cfg.logo_probability);
    let sal = ft_saliency(&clean)?;
    let mut elements = vec![GraphicElement::new(ElementCategory::BackgroundImage, BBox::new(0.0, 0.0, 1.0, 1.0))];
    elements.extend(heuristic_layout(&sal, n_tag, logo)?);
    let texts = (0..n_tag).map(|_| sample_tagline(cfg, &mut rng)).collect::<Result<Vec<_>>>()?;
    attach_taglines(&mut elements, &texts);
    for e in &mut elements {
        e.style = planted_style(&clean, e.category, e.bbox)?;
    }
    let spec = PosterSpec { width: n, height: n, image: "clean.png".into(), elements };
    spec.validate()?;
    let poster = compose_poster(&clean, &spec, assets)?.image;
    Ok(SynthSample { clean, spec, poster })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn english_table_is_normalized() {
        let t = CharTable::english();
        t.validate().unwrap();
        assert_eq!(t.entries.len(), 26);
        let e = t.entries.iter().find(|e| e.0 == 'E').unwrap().1;
        assert!(t.entries.iter().all(|x| x.1 <= e));
    }

    #[test]
    fn csv_round_trip() {
        let t = CharTable::english();
        let back = CharTable::parse_csv(&t.to_csv()).unwrap();
        assert_eq!(back.entries.len(), 26);
        for (a, b) in t.entries.iter().zip(&back.entries) {
            assert_eq!(a.0, b.0);
            assert!((a.1 - b.1).abs() < 1e-12);
        }
        assert!(CharTable::parse_csv("codepoint,probability\n65,0.5\n").is_err());
        let t = CharTable::parse_csv("codepoint,probability\n65,0.25\nU+00E9,0.75\n").unwrap();
        assert_eq!(t.entries[1].0, 'é');
    }

    #[test]
    fn bad_configs_rejected() {
        let mut c = SynthConfig::default();
        c.min_len = 0;
        assert!(c.validate().is_err());
        let mut c = SynthConfig::default();
        c.max_len = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn background_is_on_byte_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = background(40, 30, 2, &mut rng);
        assert!(img.data().iter().all(|v| (v * 255.0 - (v * 255.0).round()).abs() < 1e-9));
    }

    #[test]
    fn uniform_region_has_zero_std() {
        let img = Image::filled(10, 10, &[0.2, 0.5, 0.7]);
        let st = region_stats(&img, (2, 2, 8, 8)).unwrap();
        assert!(st.std < 1e-9);
        assert!((st.top.l - st.bottom.l).abs() < 1e-12);
        assert!(region_stats(&img, (2, 2, 2, 8)).is_err());
    }

    #[test]
    fn dark_region_gets_light_text() {
        let img = Image::filled(20, 20, &[0.05, 0.05, 0.08]);
        let s = planted_style(&img, ElementCategory::Tagline, BBox::new(0.1, 0.1, 0.9, 0.5)).unwrap().unwrap();
        assert!(s.dominant.light >= 5);
        // Flat image: stroke present, no gradient.
        assert!(s.stroke.is_some());
        assert!(s.gradient.is_none());
        assert!(planted_style(&img, ElementCategory::Logo, BBox::new(0.1, 0.1, 0.5, 0.5)).unwrap().is_none());
    }
}
