//! sRGB <-> CIELAB conversion and the discrete color code used for every
//! predicted color: an in-gamut ab cell of side 10 plus one of ten lightness
//! bins.
//!
//! Grid convention: cell `k` on either axis covers `[10k, 10k + 10)` and has
//! its center at `10k + 5`. Cells are kept when at least one 8-bit sRGB color
//! lands inside them; bins are ordered by `a` center, then `b` center.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Number of in-gamut ab bins under the grid convention above.
pub const AB_BINS: usize = 268;
pub const LIGHT_BINS: usize = 10;
pub const GRID: f64 = 10.0;

const XN: f64 = 0.95047;
const YN: f64 = 1.0;
const ZN: f64 = 1.08883;

const RGB_TO_XYZ: [[f64; 3]; 3] =
    [[0.4124564, 0.3575761, 0.1804375], [0.2126729, 0.7151522, 0.0721750], [0.0193339, 0.1191920, 0.9503041]];

const XYZ_TO_RGB: [[f64; 3]; 3] =
    [[3.2404542, -1.5371385, -0.4985314], [-0.9692660, 1.8760108, 0.0415560], [0.0556434, -0.2040259, 1.0572252]];

const DELTA: f64 = 6.0 / 29.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabColor {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

impl LabColor {
    pub fn new(l: f64, a: f64, b: f64) -> Self {
        Self { l: l.clamp(0.0, 100.0), a, b }
    }

    /// CIE76 color difference.
    pub fn delta_e(&self, other: &LabColor) -> f64 {
        ((self.l - other.l).powi(2) + (self.a - other.a).powi(2) + (self.b - other.b).powi(2)).sqrt()
    }
}

/// Quantized color: ab bin index and lightness bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QColor {
    pub ab: u16,
    pub light: u8,
}

impl QColor {
    pub fn new(ab: usize, light: usize) -> Result<Self> {
        if ab >= AB_BINS || light >= LIGHT_BINS {
            return Err(invalid(format!("QColor out of range: ab={ab} light={light}")));
        }
        Ok(Self { ab: ab as u16, light: light as u8 })
    }

    pub fn is_valid(&self) -> bool {
        (self.ab as usize) < AB_BINS && (self.light as usize) < LIGHT_BINS
    }
}

fn srgb_decode(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn srgb_encode(v: f64) -> f64 {
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

fn linear_to_lab(r: f64, g: f64, b: f64) -> LabColor {
    let m = &RGB_TO_XYZ;
    let x = m[0][0] * r + m[0][1] * g + m[0][2] * b;
    let y = m[1][0] * r + m[1][1] * g + m[1][2] * b;
    let z = m[2][0] * r + m[2][1] * g + m[2][2] * b;
    let (fx, fy, fz) = (lab_f(x / XN), lab_f(y / YN), lab_f(z / ZN));
    LabColor::new(116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))
}

/// sRGB (D65, 2 degree observer) to CIELAB.
pub fn srgb_to_lab(rgb: [f64; 3]) -> LabColor {
    linear_to_lab(srgb_decode(rgb[0]), srgb_decode(rgb[1]), srgb_decode(rgb[2]))
}

/// CIELAB to sRGB with per-channel clipping to `[0, 1]`.
pub fn lab_to_srgb(lab: LabColor) -> [f64; 3] {
    let fy = (lab.l + 16.0) / 116.0;
    let fx = fy + lab.a / 500.0;
    let fz = fy - lab.b / 200.0;
    let xyz = [XN * lab_f_inv(fx), YN * lab_f_inv(fy), ZN * lab_f_inv(fz)];
    let mut out = [0.0; 3];
    for (o, row) in out.iter_mut().zip(&XYZ_TO_RGB) {
        let lin = row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2];
        *o = srgb_encode(lin.max(0.0)).clamp(0.0, 1.0);
    }
    out
}

/// Cell index of a coordinate along one ab axis.
pub fn cell_of(v: f64) -> i32 {
    (v / GRID).floor() as i32
}

pub fn cell_center(k: i32) -> f64 {
    k as f64 * GRID + GRID / 2.0
}

const CELL_MIN: i32 = -13;
const CELL_SPAN: usize = 26;

#[derive(Debug, Clone, PartialEq)]
pub struct AbGamut {
    bins: Vec<(f64, f64)>,
    index: Vec<Option<u16>>,
}

impl AbGamut {
    pub fn from_cells(mut cells: Vec<(i32, i32)>) -> Result<Self> {
        cells.sort_unstable();
        cells.dedup();
        let mut index = vec![None; CELL_SPAN * CELL_SPAN];
        let mut bins = Vec::with_capacity(cells.len());
        for (i, &(ka, kb)) in cells.iter().enumerate() {
            let slot = grid_slot(ka, kb).ok_or_else(|| invalid(format!("cell ({ka},{kb}) outside ab range")))?;
            index[slot] = Some(i as u16);
            bins.push((cell_center(ka), cell_center(kb)));
        }
        Ok(Self { bins, index })
    }

    /// Parses the table format: one `a_center b_center` pair per line.
    pub fn parse_table(text: &str) -> Result<Self> {
        let mut cells = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let nums: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| invalid(format!("gamut table line {}: {line:?}", n + 1))))
                .collect::<Result<_>>()?;
            if nums.len() != 2 {
                return Err(invalid(format!("gamut table line {}: expected 2 numbers", n + 1)));
            }
            cells.push((cell_of(nums[0]), cell_of(nums[1])));
        }
        Self::from_cells(cells)
    }

    pub fn to_table(&self) -> String {
        self.bins.iter().map(|(a, b)| format!("{a} {b}\n")).collect()
    }

    /// The checked-in table, parsed once per process.
    pub fn standard() -> &'static AbGamut {
        static GAMUT: OnceLock<AbGamut> = OnceLock::new();
        GAMUT.get_or_init(|| {
            let g = AbGamut::parse_table(include_str!("../assets/ab_gamut.txt")).expect("bundled gamut table parses");
            assert_eq!(g.len(), AB_BINS, "bundled gamut table size");
            g
        })
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn bins(&self) -> &[(f64, f64)] {
        &self.bins
    }

    pub fn center(&self, bin: usize) -> (f64, f64) {
        self.bins[bin]
    }

    pub fn bin_at_cell(&self, ka: i32, kb: i32) -> Option<usize> {
        grid_slot(ka, kb).and_then(|s| self.index[s]).map(usize::from)
    }

    /// Nearest in-gamut bin center in Euclidean (a, b); ties go to the lowest
    /// index. Searches outward in rings of cells from the containing cell.
    pub fn quantize_ab(&self, lab: &LabColor) -> usize {
        let (ka, kb) = (cell_of(lab.a), cell_of(lab.b));
        let mut best: Option<(f64, usize)> = None;
        for ring in 0..=(2 * CELL_SPAN as i32) {
            if let Some((d, _)) = best {
                if (ring as f64) * GRID - GRID / 2.0 > d {
                    break;
                }
            }
            for da in -ring..=ring {
                for db in -ring..=ring {
                    if da.abs() != ring && db.abs() != ring {
                        continue;
                    }
                    let Some(i) = self.bin_at_cell(ka + da, kb + db) else {
                        continue;
                    };
                    let (ca, cb) = self.bins[i];
                    let d = ((lab.a - ca).powi(2) + (lab.b - cb).powi(2)).sqrt();
                    let better = match best {
                        None => true,
                        Some((bd, bi)) => d < bd || (d == bd && i < bi),
                    };
                    if better {
                        best = Some((d, i));
                    }
                }
            }
        }
        best.map(|(_, i)| i).expect("gamut is non-empty")
    }

    pub fn quantize(&self, lab: &LabColor) -> QColor {
        QColor { ab: self.quantize_ab(lab) as u16, light: quantize_light(lab.l) as u8 }
    }

    pub fn quantize_rgb(&self, rgb: [f64; 3]) -> QColor {
        self.quantize(&srgb_to_lab(rgb))
    }

    pub fn dequantize(&self, q: QColor) -> LabColor {
        let (a, b) = self.bins[q.ab as usize];
        LabColor::new(light_representative(q.light as usize), a, b)
    }

    pub fn dequantize_rgb(&self, q: QColor) -> [f64; 3] {
        lab_to_srgb(self.dequantize(q))
    }
}

fn grid_slot(ka: i32, kb: i32) -> Option<usize> {
    let ia = ka - CELL_MIN;
    let ib = kb - CELL_MIN;
    let span = CELL_SPAN as i32;
    (0..span).contains(&ia).then_some(())?;
    (0..span).contains(&ib).then(|| (ia * span + ib) as usize)
}

/// Marks every ab cell hit by the 8-bit sRGB cube sampled with the given
/// per-channel stride (1 = all 256^3 colors; the last level is always
/// included).
pub fn enumerate_gamut_cells(stride: usize) -> Vec<(i32, i32)> {
    let stride = stride.max(1);
    let mut levels: Vec<usize> = (0..256).step_by(stride).collect();
    if *levels.last().unwrap() != 255 {
        levels.push(255);
    }
    let lin: Vec<f64> = (0..256).map(|v| srgb_decode(v as f64 / 255.0)).collect();
    let mut marked = vec![false; CELL_SPAN * CELL_SPAN];
    for &r in &levels {
        for &g in &levels {
            for &b in &levels {
                let lab = linear_to_lab(lin[r], lin[g], lin[b]);
                if let Some(slot) = grid_slot(cell_of(lab.a), cell_of(lab.b)) {
                    marked[slot] = true;
                }
            }
        }
    }
    let span = CELL_SPAN as i32;
    (0..span)
        .flat_map(|ia| (0..span).map(move |ib| (ia, ib)))
        .filter(|&(ia, ib)| marked[(ia * span + ib) as usize])
        .map(|(ia, ib)| (ia + CELL_MIN, ib + CELL_MIN))
        .collect()
}

/// Enumerates all 256^3 8-bit sRGB colors and keeps the ab cells they reach.
pub fn build_ab_gamut() -> AbGamut {
    AbGamut::from_cells(enumerate_gamut_cells(1)).expect("enumerated cells lie inside the grid")
}

/// Checks the bundled table against a fresh enumeration.
pub fn verify_gamut_table() -> Result<()> {
    if &build_ab_gamut() != AbGamut::standard() {
        return Err(crate::error::Error::Validation("bundled ab gamut table differs from sRGB enumeration".into()));
    }
    Ok(())
}

/// `min(floor(L / 10), 9)`.
pub fn quantize_light(l: f64) -> usize {
    ((l.clamp(0.0, 100.0) / 10.0).floor() as usize).min(LIGHT_BINS - 1)
}

/// Center of the lightness interval: `bin * 10 + 5`.
pub fn light_representative(bin: usize) -> f64 {
    bin as f64 * 10.0 + 5.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn white_and_black() {
        let w = srgb_to_lab([1.0, 1.0, 1.0]);
        assert!(close(w.l, 100.0, 1e-6) && close(w.a, 0.0, 0.01) && close(w.b, 0.0, 0.01));
        let k = srgb_to_lab([0.0, 0.0, 0.0]);
        assert!(close(k.l, 0.0, 1e-9) && close(k.a, 0.0, 1e-9) && close(k.b, 0.0, 1e-9));
    }

    #[test]
    fn pure_red_reference() {
        // Reference values computed with an independent script of the CIE
        // formulas (numpy, same matrix and D65 white).
        let r = srgb_to_lab([1.0, 0.0, 0.0]);
        assert!(close(r.l, 53.24, 0.1) && close(r.a, 80.09, 0.1) && close(r.b, 67.20, 0.1), "{r:?}");
    }

    #[test]
    fn grays_are_neutral() {
        for v in 0..256 {
            let lab = srgb_to_lab([v as f64 / 255.0; 3]);
            assert!(lab.a.abs() <= 0.02 && lab.b.abs() <= 0.02, "{v}: {lab:?}");
        }
    }

    #[test]
    fn lab_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let rgb = [rng.gen(), rng.gen(), rng.gen()];
            let back = lab_to_srgb(srgb_to_lab(rgb));
            for c in 0..3 {
                assert!((back[c] - rgb[c]).abs() <= 1e-4);
            }
        }
        let w = lab_to_srgb(LabColor::new(100.0, 0.0, 0.0));
        assert!(w.iter().all(|v| close(*v, 1.0, 1e-3)));
        assert_eq!(lab_to_srgb(LabColor::new(0.0, 0.0, 0.0)), [0.0; 3]);
    }

    #[test]
    fn lightness_bins() {
        assert_eq!(quantize_light(0.0), 0);
        assert_eq!(quantize_light(100.0), 9);
        assert_eq!(quantize_light(55.0), 5);
        assert_eq!(quantize_light(9.999_999), 0);
        assert_eq!(light_representative(5), 55.0);
    }

    #[test]
    fn gray_cell_present() {
        let g = AbGamut::standard();
        assert!(g.bin_at_cell(cell_of(0.0), cell_of(0.0)).is_some());
    }

    #[test]
    fn centers_map_to_themselves() {
        let g = AbGamut::standard();
        for (i, &(a, b)) in g.bins().iter().enumerate() {
            assert_eq!(g.quantize_ab(&LabColor::new(50.0, a, b)), i);
        }
    }

    #[test]
    fn boundary_ties_go_to_lowest_index() {
        let g = AbGamut::standard();
        // a = 0 is equidistant from centers -5 and 5; -5 sorts first.
        let lo = g.bin_at_cell(-1, 0).unwrap();
        let hi = g.bin_at_cell(0, 0).unwrap();
        assert!(lo < hi);
        assert_eq!(g.quantize_ab(&LabColor::new(50.0, 0.0, 5.0)), lo);
    }

    #[test]
    fn qcolor_range_checked() {
        assert!(QColor::new(AB_BINS, 0).is_err());
        assert!(QColor::new(0, 10).is_err());
        assert!(QColor::new(AB_BINS - 1, 9).unwrap().is_valid());
    }

    #[test]
    fn dequantize_light_five() {
        let g = AbGamut::standard();
        assert_eq!(g.dequantize(QColor::new(0, 5).unwrap()).l, 55.0);
    }
}
