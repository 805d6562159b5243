//! Underlay retrieval and rasterization, tagline rendering and z-ordered
//! alpha compositing.

mod glyphs;
mod layer;
mod text;
mod underlay;

use std::path::Path;

pub use glyphs::{parse_font_map, Glyph, GlyphProvider, GlyphSet, CELL, CHAR_COUNT, FIRST_CHAR, STYLE_NAMES};
pub use layer::Layer;
pub use text::{render_text, text_coverage, TextOptions};
pub use underlay::{rasterize_underlay, retrieve_underlay, underlay_distance, ShapeKind, UnderlayDb, UnderlayShape};

use crate::design::{ElementCategory, GraphicElement, PosterSpec};
use crate::error::{Error, Result};
use crate::raster::Image;

/// Shared rendering inputs.
#[derive(Debug, Clone)]
pub struct RenderAssets {
    pub glyphs: GlyphProvider,
    pub underlays: UnderlayDb,
    pub text: TextOptions,
}

impl RenderAssets {
    pub fn bundled() -> Self {
        Self { glyphs: GlyphProvider::bundled(), underlays: UnderlayDb::bundled(), text: TextOptions::default() }
    }

    /// Loads glyph styles, the font map and `underlays.json` from `root`.
    pub fn load_dir(root: &Path) -> Result<Self> {
        Ok(Self {
            glyphs: GlyphProvider::load_dir(root)?,
            underlays: UnderlayDb::load(&root.join("underlays.json"))?,
            text: TextOptions::default(),
        })
    }
}

const LOGO_FILL: [f64; 3] = [0.94, 0.94, 0.94];
const LOGO_MARK: [f64; 3] = [0.35, 0.35, 0.38];

/// Logos carry no style; they are drawn as a neutral placeholder badge.
fn logo_layer(rect: (usize, usize, usize, usize), width: usize, height: usize) -> Layer {
    let (x0, y0, x1, y1) = rect;
    let badge = UnderlayShape {
        id: 0,
        kind: ShapeKind::RoundedRectangle { radius: 0.3 },
        native_w: (x1 - x0) as f64,
        native_h: (y1 - y0) as f64,
    };
    let mut layer = Layer::new(width, height);
    let (bw, bh) = ((x1 - x0) as f64, (y1 - y0) as f64);
    for y in y0..y1 {
        for x in x0..x1 {
            let u = ((x - x0) as f64 + 0.5) / bw;
            let v = ((y - y0) as f64 + 0.5) / bh;
            if !badge.contains(u, v) {
                continue;
            }
            // Round mark centered in the badge.
            let dx = (u - 0.5) * bw;
            let dy = (v - 0.5) * bh;
            let r = 0.3 * bw.min(bh);
            let color = if dx * dx + dy * dy <= r * r { LOGO_MARK } else { LOGO_FILL };
            layer.set(x, y, color, 0.95);
        }
    }
    layer
}

/// Layer for one element, or `None` for the background.
pub fn element_layer(
    e: &GraphicElement,
    width: usize,
    height: usize,
    assets: &RenderAssets,
    warnings: &mut Vec<String>,
) -> Result<Option<Layer>> {
    let rect = e.bbox.to_pixels(width, height);
    let styled = || {
        e.style.ok_or_else(|| {
            Error::Validation(format!("{} element at {:?} has no style to render", e.category.as_str(), e.bbox))
        })
    };
    Ok(match e.category {
        ElementCategory::BackgroundImage => None,
        ElementCategory::Logo => Some(logo_layer(rect, width, height)),
        ElementCategory::Underlay => {
            let style = styled()?;
            let (w, h) = ((rect.2 - rect.0) as f64, (rect.3 - rect.1) as f64);
            let shape = retrieve_underlay(w, h, &assets.underlays.shapes)?;
            Some(rasterize_underlay(&shape, rect, width, height, style.dominant, style.gradient)?)
        }
        ElementCategory::Tagline => {
            let style = styled()?;
            let text = e.text.as_ref().ok_or_else(|| Error::Validation("tagline without text".into()))?;
            let (layer, w) = render_text(text, rect, width, height, &style, &assets.glyphs, &assets.text)?;
            warnings.extend(w);
            Some(layer)
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub image: Image,
    pub warnings: Vec<String>,
}

/// Composites all elements over `bg` in z-order (logo, underlays,
/// taglines; document order within a category).
pub fn compose_poster(bg: &Image, spec: &PosterSpec, assets: &RenderAssets) -> Result<Rendered> {
    spec.validate()?;
    if bg.width() != spec.width || bg.height() != spec.height {
        return Err(Error::InvalidArgument(format!(
            "background is {}x{}, poster is {}x{}",
            bg.width(),
            bg.height(),
            spec.width,
            spec.height
        )));
    }
    let mut order: Vec<&GraphicElement> = spec.elements.iter().collect();
    order.sort_by_key(|e| e.category.z_rank());
    let mut image = bg.to_rgb();
    let mut warnings = Vec::new();
    for e in order {
        if let Some(layer) = element_layer(e, spec.width, spec.height, assets, &mut warnings)? {
            layer.composite_onto(&mut image);
        }
    }
    Ok(Rendered { image, warnings })
}
