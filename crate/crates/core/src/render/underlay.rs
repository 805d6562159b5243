use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::Layer;
use crate::color::{AbGamut, QColor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeKind {
    Rectangle,
    /// Corner radius as a fraction of the shorter native side.
    RoundedRectangle {
        radius: f64,
    },
    Capsule,
    /// Triangular notch depth on both ends, as a fraction of native width.
    BannerWithNotch {
        notch: f64,
    },
    /// Horizontal offset of the top edge, as a fraction of native width.
    Parallelogram {
        skew: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnderlayShape {
    pub id: u32,
    #[serde(flatten)]
    pub kind: ShapeKind,
    pub native_w: f64,
    pub native_h: f64,
}

impl UnderlayShape {
    pub fn validate(&self) -> Result<()> {
        let ok = self.native_w > 0.0
            && self.native_h > 0.0
            && match self.kind {
                ShapeKind::Rectangle | ShapeKind::Capsule => true,
                ShapeKind::RoundedRectangle { radius } => (0.0..=0.5).contains(&radius),
                ShapeKind::BannerWithNotch { notch } => (0.0..0.5).contains(&notch),
                ShapeKind::Parallelogram { skew } => (0.0..1.0).contains(&skew),
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid underlay shape {self:?}")))
        }
    }

    pub fn aspect(&self) -> f64 {
        self.native_w / self.native_h
    }

    /// Whether the normalized point `(u, v)` in `[0,1]^2` lies inside the
    /// outline. Geometry is evaluated in native units, so anisotropic
    /// scaling to a bbox keeps the same membership.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
            return false;
        }
        let (w, h) = (self.native_w, self.native_h);
        let (x, y) = (u * w, v * h);
        let rounded = |r: f64| {
            let cx = x.clamp(r, w - r);
            let cy = y.clamp(r, h - r);
            (x - cx).powi(2) + (y - cy).powi(2) <= r * r
        };
        match self.kind {
            ShapeKind::Rectangle => true,
            ShapeKind::RoundedRectangle { radius } => rounded(radius * w.min(h)),
            ShapeKind::Capsule => rounded(w.min(h) / 2.0),
            ShapeKind::BannerWithNotch { notch } => {
                let depth = notch * w * (1.0 - (2.0 * v - 1.0).abs());
                x >= depth && x <= w - depth
            }
            ShapeKind::Parallelogram { skew } => {
                let left = skew * w * (1.0 - v);
                x >= left && x <= left + (1.0 - skew) * w
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnderlayDb {
    pub shapes: Vec<UnderlayShape>,
}

const BUNDLED_DB: &str = include_str!("../../assets/underlays.json");

impl UnderlayDb {
    pub fn parse(text: &str) -> Result<Self> {
        let db: UnderlayDb = serde_json::from_str(text)?;
        for s in &db.shapes {
            s.validate()?;
        }
        Ok(db)
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_DB).expect("bundled underlay db")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// `|ln(ar_b / ar_s)| + 0.25 |ln(area_b / area_s)|` for a `w x h` box.
pub fn underlay_distance(w: f64, h: f64, s: &UnderlayShape) -> f64 {
    ((w / h) / s.aspect()).ln().abs() + 0.25 * ((w * h) / (s.native_w * s.native_h)).ln().abs()
}

/// Nearest shape to a `w x h` pixel box; ties go to the lowest id.
pub fn retrieve_underlay(w: f64, h: f64, db: &[UnderlayShape]) -> Result<UnderlayShape> {
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::InvalidArgument(format!("box {w}x{h} must be positive")));
    }
    db.iter()
        .map(|s| (underlay_distance(w, h, s), s))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)))
        .map(|(_, s)| *s)
        .ok_or(Error::Empty("underlay database"))
}

/// Vertical fill: row `r` of `rows` interpolates top to bottom.
pub(crate) fn fill_color(top: [f64; 3], bottom: Option<[f64; 3]>, r: usize, rows: usize) -> [f64; 3] {
    match bottom {
        None => top,
        Some(b) => {
            let t = if rows > 1 { r as f64 / (rows - 1) as f64 } else { 0.0 };
            std::array::from_fn(|c| top[c] + (b[c] - top[c]) * t)
        }
    }
}

const SUPERSAMPLE: usize = 4;

/// Rasterizes `shape` stretched over the pixel box `(x0, y0, x1, y1)` of a
/// `width x height` canvas. Coverage uses 4x4 supersampling.
pub fn rasterize_underlay(
    shape: &UnderlayShape,
    rect: (usize, usize, usize, usize),
    width: usize,
    height: usize,
    dominant: QColor,
    gradient: Option<QColor>,
) -> Result<Layer> {
    let (x0, y0, x1, y1) = rect;
    if x1 <= x0 || y1 <= y0 || x1 > width || y1 > height {
        return Err(Error::Bounds { rect: (x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0)), width, height });
    }
    let gamut = AbGamut::standard();
    let top = gamut.dequantize_rgb(dominant);
    let bottom = gradient.map(|g| gamut.dequantize_rgb(g));
    let (bw, bh) = ((x1 - x0) as f64, (y1 - y0) as f64);
    let mut layer = Layer::new(width, height);
    let n = SUPERSAMPLE as f64;
    for y in y0..y1 {
        let color = fill_color(top, bottom, y - y0, y1 - y0);
        for x in x0..x1 {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let u = ((x - x0) as f64 + (sx as f64 + 0.5) / n) / bw;
                    let v = ((y - y0) as f64 + (sy as f64 + 0.5) / n) / bh;
                    hits += shape.contains(u, v) as usize;
                }
            }
            if hits > 0 {
                layer.set(x, y, color, hits as f64 / (n * n));
            }
        }
    }
    Ok(layer)
}
