//! Saliency-driven cleaning and retargeting.
//!
//! Pipeline: optional diffusion fill of masked graphics, frequency-tuned
//! saliency, maximum-saliency window search at the target aspect ratio with
//! an integral image, preference-based choice among equal windows, crop and
//! bilinear resize. When no crop at the target ratio keeps the product
//! region, the canvas is extended first.

use serde::{Deserialize, Serialize};

use crate::color::srgb_to_lab;
use crate::error::{invalid, Error, Result};
use crate::raster::{crop, gaussian_blur, resize_bilinear, Image, Rect};

/// Per-pixel importance in `[0, 1]`, single channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap(Image);

impl SaliencyMap {
    pub fn new(img: Image) -> Result<Self> {
        if img.channels() != 1 {
            return Err(invalid("saliency map must have one channel"));
        }
        Ok(Self(img))
    }

    pub fn image(&self) -> &Image {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.0.get(x, y, 0)
    }

    pub fn max(&self) -> f64 {
        self.0.data().iter().cloned().fold(0.0, f64::max)
    }

    /// Pixels whose value reaches the `q`-quantile (nearest-rank, lower).
    pub fn quantile_mask(&self, q: f64) -> Vec<bool> {
        let mut sorted = self.0.data().to_vec();
        sorted.sort_by(f64::total_cmp);
        let idx = ((q.clamp(0.0, 1.0)) * (sorted.len() - 1) as f64).floor() as usize;
        let thr = sorted[idx];
        self.0.data().iter().map(|&v| v >= thr).collect()
    }

    /// Copy keeping values `>= fraction * max`, zero elsewhere.
    pub fn thresholded(&self, fraction: f64) -> SaliencyMap {
        let cut = fraction * self.max();
        let data = self.0.data().iter().map(|&v| if v >= cut && v > 0.0 { v } else { 0.0 }).collect();
        SaliencyMap(Image::new(self.width(), self.height(), 1, data).expect("same shape"))
    }
}

/// `(H+1) x (W+1)` prefix sums; entry `(y, x)` is the sum over all source
/// pixels strictly above and to the left.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    sums: Vec<f64>,
}

impl IntegralImage {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.sums[y * (self.width + 1) + x]
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn total(&self) -> f64 {
        self.at(self.width, self.height)
    }
}

pub fn integral(sal: &SaliencyMap) -> IntegralImage {
    let (w, h) = (sal.width(), sal.height());
    let stride = w + 1;
    let mut sums = vec![0.0; stride * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += sal.at(x, y);
            sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
        }
    }
    IntegralImage { width: w, height: h, sums }
}

pub fn rect_sum(ii: &IntegralImage, r: Rect) -> Result<f64> {
    if !r.fits(ii.width, ii.height) {
        return Err(Error::Bounds { rect: (r.x0, r.y0, r.w, r.h), width: ii.width, height: ii.height });
    }
    let (x1, y1) = (r.x0 + r.w, r.y0 + r.h);
    Ok(ii.at(x1, y1) - ii.at(x1, r.y0) - ii.at(r.x0, y1) + ii.at(r.x0, r.y0))
}

/// Frequency-tuned saliency: Lab distance between the sigma-2 blurred image
/// and the image's mean Lab color, min-max normalized. A constant image
/// yields an all-zero map.
pub fn ft_saliency(img: &Image) -> Result<SaliencyMap> {
    if img.channels() != 3 {
        return Err(invalid("ft_saliency needs an RGB image"));
    }
    let to_lab = |p: &[f64]| srgb_to_lab([p[0], p[1], p[2]]);
    let n = (img.width() * img.height()) as f64;
    let (mut ml, mut ma, mut mb) = (0.0, 0.0, 0.0);
    for p in img.data().chunks(3) {
        let lab = to_lab(p);
        ml += lab.l;
        ma += lab.a;
        mb += lab.b;
    }
    let (ml, ma, mb) = (ml / n, ma / n, mb / n);
    let blurred = gaussian_blur(img, 2.0)?;
    let dist: Vec<f64> = blurred
        .data()
        .chunks(3)
        .map(|p| {
            let lab = to_lab(p);
            ((lab.l - ml).powi(2) + (lab.a - ma).powi(2) + (lab.b - mb).powi(2)).sqrt()
        })
        .collect();
    let lo = dist.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = dist.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let data = if hi - lo < 1e-9 { vec![0.0; dist.len()] } else { dist.iter().map(|d| (d - lo) / (hi - lo)).collect() };
    SaliencyMap::new(Image::new(img.width(), img.height(), 1, data)?)
}

/// Largest `w x h` with `w / h = target_ar` (rounded down) inside `width x height`.
pub fn window_size(width: usize, height: usize, target_ar: f64) -> (usize, usize) {
    if target_ar >= width as f64 / height as f64 {
        let h = ((width as f64 / target_ar + 1e-9).floor() as usize).clamp(1, height);
        (width, h)
    } else {
        let w = ((height as f64 * target_ar + 1e-9).floor() as usize).clamp(1, width);
        (w, height)
    }
}

/// All window positions at the target aspect ratio whose saliency sum is
/// maximal within relative tolerance `1e-9`, in (y0, x0) order.
pub fn max_ar_window(sal: &SaliencyMap, target_ar: f64) -> Result<Vec<Rect>> {
    if !(target_ar > 0.0) || !target_ar.is_finite() {
        return Err(invalid("target aspect ratio must be positive"));
    }
    let ii = integral(sal);
    let (w, h) = window_size(sal.width(), sal.height(), target_ar);
    let mut scored = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for y0 in 0..=sal.height() - h {
        for x0 in 0..=sal.width() - w {
            let r = Rect::new(x0, y0, w, h);
            let s = rect_sum(&ii, r)?;
            best = best.max(s);
            scored.push((r, s));
        }
    }
    let tol = 1e-9 * best.abs();
    Ok(scored.into_iter().filter(|(_, s)| *s >= best - tol).map(|(r, _)| r).collect())
}

/// Saliency-weighted centroid `(x, y)` in pixel coordinates over pixels at or
/// above `threshold * max`. An all-zero map yields the geometric center.
pub fn saliency_centroid(sal: &SaliencyMap, threshold: f64) -> (f64, f64) {
    let cut = threshold * sal.max();
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for y in 0..sal.height() {
        for x in 0..sal.width() {
            let v = sal.at(x, y);
            if v > 0.0 && v >= cut {
                sx += v * x as f64;
                sy += v * y as f64;
                sw += v;
            }
        }
    }
    if sw > 0.0 {
        (sx / sw, sy / sw)
    } else {
        ((sal.width() as f64 - 1.0) / 2.0, (sal.height() as f64 - 1.0) / 2.0)
    }
}

/// Distance from `center` to the preferred anchor of `r`: the nearer of the
/// left/right edge midpoints for wide targets, the bottom edge midpoint
/// otherwise. Edges lie on pixel boundaries (pixel `x` spans `x +- 0.5`).
pub fn preference_distance(r: &Rect, target_ar: f64, center: (f64, f64)) -> f64 {
    let dist = |p: (f64, f64)| ((p.0 - center.0).powi(2) + (p.1 - center.1).powi(2)).sqrt();
    let left = r.x0 as f64 - 0.5;
    let right = (r.x0 + r.w) as f64 - 0.5;
    let top = r.y0 as f64 - 0.5;
    let bottom = (r.y0 + r.h) as f64 - 0.5;
    let mid_x = (left + right) / 2.0;
    let mid_y = (top + bottom) / 2.0;
    if target_ar > 1.0 {
        dist((left, mid_y)).min(dist((right, mid_y)))
    } else {
        dist((mid_x, bottom))
    }
}

pub fn select_region(cands: &[Rect], target_ar: f64, center: (f64, f64)) -> Result<Rect> {
    cands
        .iter()
        .map(|r| (preference_distance(r, target_ar, center), *r))
        .min_by(|a, b| a.0.total_cmp(&b.0).then((a.1.y0, a.1.x0).cmp(&(b.1.y0, b.1.x0))))
        .map(|(_, r)| r)
        .ok_or(Error::Empty("candidate list"))
}

const FILL_TOL: f64 = 1e-4;
const FILL_MAX_ITERS: usize = 500;

/// Replaces masked pixels (mask value >= 0.5) by iterated 4-neighbor
/// averaging. Unmasked pixels are copied unchanged. A fully masked image is
/// filled with its global mean.
pub fn clean_fill(img: &Image, mask: &Image) -> Result<Image> {
    if mask.width() != img.width() || mask.height() != img.height() {
        return Err(invalid("mask size differs from image"));
    }
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let masked: Vec<bool> = (0..w * h).map(|i| mask.data()[i * mask.channels()] >= 0.5).collect();
    if !masked.iter().any(|&m| m) {
        return Ok(img.clone());
    }
    let keep = masked.iter().filter(|&&m| !m).count();
    let mut seed = vec![0.0; c];
    let source: Vec<usize> =
        if keep == 0 { (0..w * h).collect() } else { (0..w * h).filter(|&i| !masked[i]).collect() };
    for &i in &source {
        for ch in 0..c {
            seed[ch] += img.data()[i * c + ch];
        }
    }
    seed.iter_mut().for_each(|v| *v /= source.len() as f64);
    let mut out = img.clone();
    for i in (0..w * h).filter(|&i| masked[i]) {
        for ch in 0..c {
            out.set(i % w, i / w, ch, seed[ch]);
        }
    }
    if keep == 0 {
        return Ok(out);
    }
    for _ in 0..FILL_MAX_ITERS {
        let mut max_change: f64 = 0.0;
        for y in 0..h {
            for x in 0..w {
                if !masked[y * w + x] {
                    continue;
                }
                let mut nbrs = [(0usize, 0usize); 4];
                let mut k = 0;
                if x > 0 {
                    nbrs[k] = (x - 1, y);
                    k += 1;
                }
                if x + 1 < w {
                    nbrs[k] = (x + 1, y);
                    k += 1;
                }
                if y > 0 {
                    nbrs[k] = (x, y - 1);
                    k += 1;
                }
                if y + 1 < h {
                    nbrs[k] = (x, y + 1);
                    k += 1;
                }
                for ch in 0..c {
                    let avg = nbrs[..k].iter().map(|&(nx, ny)| out.get(nx, ny, ch)).sum::<f64>() / k as f64;
                    max_change = max_change.max((avg - out.get(x, y, ch)).abs());
                    out.set(x, y, ch, avg);
                }
            }
        }
        if max_change < FILL_TOL {
            break;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtendStrategy {
    EdgeReplicate,
    Mirror,
    BlurExtend,
}

impl std::str::FromStr for ExtendStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edge_replicate" | "edge" => Ok(Self::EdgeReplicate),
            "mirror" => Ok(Self::Mirror),
            "blur_extend" | "blur" => Ok(Self::BlurExtend),
            other => Err(invalid(format!("unknown extend strategy {other:?}"))),
        }
    }
}

/// Padding added by [`extend_canvas`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub left: usize,
    pub right: usize,
    pub top: usize,
    pub bottom: usize,
}

/// Half-sample symmetric reflection of an out-of-range index.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Pads one axis symmetrically so the aspect ratio reaches `target_ar`
/// (within one pixel). Original pixels are kept as-is.
pub fn extend_canvas(img: &Image, target_ar: f64, strategy: ExtendStrategy) -> Result<(Image, Padding)> {
    if !(target_ar > 0.0) || !target_ar.is_finite() {
        return Err(invalid("target aspect ratio must be positive"));
    }
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut pad = Padding::default();
    if target_ar > img.aspect() {
        let new_w = ((h as f64 * target_ar).round() as usize).max(w);
        pad.left = (new_w - w) / 2;
        pad.right = new_w - w - pad.left;
    } else {
        let new_h = ((w as f64 / target_ar).round() as usize).max(h);
        pad.top = (new_h - h) / 2;
        pad.bottom = new_h - h - pad.top;
    }
    if pad == Padding::default() {
        return Ok((img.clone(), pad));
    }
    let (nw, nh) = (w + pad.left + pad.right, h + pad.top + pad.bottom);
    let src_index = |v: usize, before: usize, n: usize, mirror: bool| -> usize {
        let i = v as isize - before as isize;
        if mirror {
            reflect(i, n)
        } else {
            i.clamp(0, n as isize - 1) as usize
        }
    };
    let mirror = strategy == ExtendStrategy::Mirror;
    let mut data = Vec::with_capacity(nw * nh * c);
    for y in 0..nh {
        let sy = src_index(y, pad.top, h, mirror);
        for x in 0..nw {
            let sx = src_index(x, pad.left, w, mirror);
            data.extend_from_slice(img.pixel(sx, sy));
        }
    }
    let mut out = Image::new(nw, nh, c, data)?;
    if strategy == ExtendStrategy::BlurExtend {
        let band = pad.left.max(pad.right).max(pad.top).max(pad.bottom);
        let sigma = (band as f64 / 4.0).max(0.5);
        let blurred = gaussian_blur(&out, sigma)?;
        for y in 0..nh {
            for x in 0..nw {
                let inside = x >= pad.left && x < pad.left + w && y >= pad.top && y < pad.top + h;
                if !inside {
                    for ch in 0..c {
                        out.set(x, y, ch, blurred.get(x, y, ch));
                    }
                }
            }
        }
    }
    Ok((out, pad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetargetOptions {
    pub extend_strategy: ExtendStrategy,
    /// Product region: saliency `>= threshold * max`.
    pub saliency_threshold: f64,
    pub protect_product: bool,
}

impl Default for RetargetOptions {
    fn default() -> Self {
        Self { extend_strategy: ExtendStrategy::Mirror, saliency_threshold: 0.5, protect_product: true }
    }
}

/// Minimum share of thresholded saliency mass a crop must keep.
pub const PROTECT_FRACTION: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct RetargetReport {
    /// Crop rectangle in the (possibly extended) working canvas.
    pub rect: Rect,
    pub padding: Padding,
    pub extended: bool,
    /// Thresholded saliency mass of the input kept by `rect`.
    pub kept_fraction: f64,
    pub saliency: SaliencyMap,
}

fn choose_window(sal: &SaliencyMap, target_ar: f64, threshold: f64) -> Result<Rect> {
    let cands = max_ar_window(sal, target_ar)?;
    let center = saliency_centroid(sal, threshold);
    select_region(&cands, target_ar, center)
}

fn kept_mass(product: &SaliencyMap, rect: Rect, pad: Padding) -> f64 {
    let ii = integral(product);
    let total = ii.total();
    if total <= 0.0 {
        return 1.0;
    }
    // Map the crop back onto the un-padded input and clip.
    let x0 = (rect.x0 as isize - pad.left as isize).max(0) as usize;
    let y0 = (rect.y0 as isize - pad.top as isize).max(0) as usize;
    let x1 = ((rect.x0 + rect.w) as isize - pad.left as isize).clamp(0, product.width() as isize) as usize;
    let y1 = ((rect.y0 + rect.h) as isize - pad.top as isize).clamp(0, product.height() as isize) as usize;
    if x1 <= x0 || y1 <= y0 {
        return 0.0;
    }
    rect_sum(&ii, Rect::new(x0, y0, x1 - x0, y1 - y0)).unwrap_or(0.0) / total
}

/// Full clean-and-retarget pipeline returning the output and how it was made.
pub fn retarget_with_report(
    img: &Image,
    mask: Option<&Image>,
    target_w: usize,
    target_h: usize,
    opts: &RetargetOptions,
) -> Result<(Image, RetargetReport)> {
    if target_w < 8 || target_h < 8 {
        return Err(invalid("target size must be at least 8x8"));
    }
    if !(opts.saliency_threshold > 0.0 && opts.saliency_threshold <= 1.0) {
        return Err(invalid("saliency threshold must be in (0, 1]"));
    }
    let img = img.to_rgb();
    let cleaned = match mask {
        Some(m) => clean_fill(&img, m)?,
        None => img,
    };
    let target_ar = target_w as f64 / target_h as f64;
    let sal = ft_saliency(&cleaned)?;
    let product = sal.thresholded(opts.saliency_threshold);
    let mut rect = choose_window(&sal, target_ar, opts.saliency_threshold)?;
    let mut padding = Padding::default();
    let mut canvas = cleaned;
    let mut kept = kept_mass(&product, rect, padding);
    let mut extended = false;
    if opts.protect_product && kept < PROTECT_FRACTION {
        let (ext, pad) = extend_canvas(&canvas, target_ar, opts.extend_strategy)?;
        let ext_sal = ft_saliency(&ext)?;
        rect = choose_window(&ext_sal, target_ar, opts.saliency_threshold)?;
        padding = pad;
        canvas = ext;
        kept = kept_mass(&product, rect, padding);
        extended = true;
    }
    let out = resize_bilinear(&crop(&canvas, rect)?, target_w, target_h)?;
    Ok((out, RetargetReport { rect, padding, extended, kept_fraction: kept, saliency: sal }))
}

pub fn retarget(
    img: &Image,
    mask: Option<&Image>,
    target_w: usize,
    target_h: usize,
    opts: &RetargetOptions,
) -> Result<Image> {
    retarget_with_report(img, mask, target_w, target_h, opts).map(|(img, _)| img)
}
