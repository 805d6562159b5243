use super::glyphs::{Glyph, GlyphProvider, GlyphSet, CELL};
use super::layer::Layer;
use super::underlay::fill_color;
use crate::color::AbGamut;
use crate::design::{StyleAttributes, Tagline};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextOptions {
    /// Gap between glyphs as a fraction of glyph width.
    pub tracking: f64,
    /// Stroke ring width per pixel of line height.
    pub stroke_per_px: f64,
}

impl Default for TextOptions {
    fn default() -> Self {
        Self { tracking: 0.05, stroke_per_px: 1.0 / 16.0 }
    }
}

const SS: usize = 4;

/// Per-pixel glyph coverage over the box, `bw x bh`, 4x4 supersampled.
/// Glyph height equals the box height; the line is centered horizontally
/// and clipped to the box.
pub fn text_coverage(glyphs: &[&Glyph], bw: usize, bh: usize, tracking: f64) -> Vec<f64> {
    let scale = bh as f64 / CELL as f64;
    let gw = CELL as f64 * scale;
    let pitch = gw * (1.0 + tracking);
    let n = glyphs.len() as f64;
    let total = n * gw + (n - 1.0).max(0.0) * gw * tracking;
    let start = (bw as f64 - total) / 2.0;
    let mut cov = vec![0.0; bw * bh];
    for y in 0..bh {
        for x in 0..bw {
            let mut hits = 0;
            for sy in 0..SS {
                let py = y as f64 + (sy as f64 + 0.5) / SS as f64;
                let row = ((py / scale) as usize).min(CELL - 1);
                for sx in 0..SS {
                    let rel = x as f64 + (sx as f64 + 0.5) / SS as f64 - start;
                    if rel < 0.0 {
                        continue;
                    }
                    let k = (rel / pitch) as usize;
                    let within = rel - k as f64 * pitch;
                    if k >= glyphs.len() || within >= gw {
                        continue;
                    }
                    let col = ((within / scale) as usize).min(CELL - 1);
                    hits += glyphs[k].get(row, col) as usize;
                }
            }
            cov[y * bw + x] = hits as f64 / (SS * SS) as f64;
        }
    }
    cov
}

fn glyph_list<'a>(set: &'a GlyphSet, text: &Tagline, warnings: &mut Vec<String>) -> Vec<&'a Glyph> {
    text.chars()
        .map(|c| {
            set.get(c).unwrap_or_else(|| {
                warnings.push(format!("no glyph for U+{:04X}; using fallback", c as u32));
                set.fallback()
            })
        })
        .collect()
}

/// Renders one tagline into a canvas-sized layer. Returns the layer and any
/// warnings (fallback glyphs, box too small).
pub fn render_text(
    text: &Tagline,
    rect: (usize, usize, usize, usize),
    width: usize,
    height: usize,
    style: &StyleAttributes,
    glyphs: &GlyphProvider,
    opts: &TextOptions,
) -> Result<(Layer, Vec<String>)> {
    let (x0, y0, x1, y1) = rect;
    if x1 <= x0 || y1 <= y0 || x1 > width || y1 > height {
        return Err(Error::Bounds { rect: (x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0)), width, height });
    }
    let font = style.font.ok_or_else(|| Error::Validation("tagline style needs a font".into()))?;
    let mut warnings = Vec::new();
    let mut layer = Layer::new(width, height);
    let (bw, bh) = (x1 - x0, y1 - y0);
    if bh < 2 || bw < bh {
        warnings.push(format!("tagline {:?} does not fit a {bw}x{bh} box", text.as_str()));
        return Ok((layer, warnings));
    }
    let set = glyphs.set_for(font);
    let list = glyph_list(set, text, &mut warnings);
    let cov = text_coverage(&list, bw, bh, opts.tracking);
    let gamut = AbGamut::standard();
    let top = gamut.dequantize_rgb(style.dominant);
    let bottom = style.gradient.map(|g| gamut.dequantize_rgb(g));
    let stroke = style.stroke.map(|s| {
        let ring = ((bh as f64 * opts.stroke_per_px).round() as usize).max(1);
        (gamut.dequantize_rgb(s), ring)
    });
    for y in 0..bh {
        let fill = fill_color(top, bottom, y, bh);
        for x in 0..bw {
            let a = cov[y * bw + x];
            let (rgb, alpha) = match stroke {
                None => (fill, a),
                Some((sc, ring)) => {
                    let mut halo: f64 = 0.0;
                    for yy in y.saturating_sub(ring)..(y + ring + 1).min(bh) {
                        for xx in x.saturating_sub(ring)..(x + ring + 1).min(bw) {
                            halo = halo.max(cov[yy * bw + xx]);
                        }
                    }
                    // Fill over stroke.
                    let out_a = a + halo * (1.0 - a);
                    if out_a == 0.0 {
                        continue;
                    }
                    let rgb = std::array::from_fn(|c| (fill[c] * a + sc[c] * halo * (1.0 - a)) / out_a);
                    (rgb, out_a)
                }
            };
            if alpha > 0.0 {
                layer.set(x0 + x, y0 + y, rgb, alpha);
            }
        }
    }
    if layer.is_transparent() {
        warnings.push(format!("tagline {:?} rendered no visible pixels", text.as_str()));
    }
    Ok((layer, warnings))
}
