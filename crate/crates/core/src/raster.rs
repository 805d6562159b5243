//! Raster primitives: decode/encode, crop, bilinear resize, Gaussian blur.
//!
//! Pixels are stored as `f64` in `[0, 1]`, row-major, channels interleaved.
//! Conversion to 8 bits happens only when encoding, rounding half up.

use std::io::Read;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self { x0, y0, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.w >= 1 && self.h >= 1 && self.x0 + self.w <= width && self.y0 + self.h <= height
    }
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(crate::error::invalid(format!(
                "image must be non-empty with 1 or 3 channels, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(crate::error::invalid(format!("data length {} != {width}x{height}x{channels}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(crate::error::invalid("pixel values must be finite and in [0,1]"));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn filled(width: usize, height: usize, pixel: &[f64]) -> Self {
        let data = pixel.iter().copied().cycle().take(width * height * pixel.len()).collect();
        Self { width, height, channels: pixel.len(), data }
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel; values are
    /// clamped to `[0, 1]`.
    pub fn from_fn<const C: usize>(width: usize, height: usize, f: impl Fn(usize, usize) -> [f64; C]) -> Self {
        let mut data = Vec::with_capacity(width * height * C);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y).iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self { width, height, channels: C, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Sets a value, clamping into `[0, 1]`.
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v.clamp(0.0, 1.0);
    }

    pub fn full_rect(&self) -> Rect {
        Rect::new(0, 0, self.width, self.height)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Luma-free gray conversion: channel average.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self.data.chunks(3).map(|p| (p[0] + p[1] + p[2]) / 3.0).collect();
        Image { width: self.width, height: self.height, channels: 1, data }
    }

    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image { width: self.width, height: self.height, channels: 3, data }
    }

    pub fn to_bytes8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize8(v)).collect()
    }

    /// Values rounded to the 8-bit grid, as an 8-bit file round-trip would.
    pub fn snapped8(&self) -> Image {
        Image { data: self.data.iter().map(|&v| quantize8(v) as f64 / 255.0).collect(), ..self.clone() }
    }
}

/// `[0,1]` to 8 bits, rounding half up.
pub fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn decode_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Decode { offset, msg: msg.into() }
}

/// Decodes PNG or binary PPM/PGM (P6/P5) bytes.
pub fn load_image(bytes: &[u8]) -> Result<Image> {
    if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)
    } else if bytes.starts_with(b"P6") || bytes.starts_with(b"P5") {
        decode_pnm(bytes)
    } else {
        Err(decode_err(0, "unrecognized image signature"))
    }
}

pub fn load_image_file(path: impl AsRef<std::path::Path>) -> Result<Image> {
    load_image(&std::fs::read(path)?)
}

fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let channels = if bytes[1] == b'6' { 3 } else { 1 };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(decode_err(pos, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(decode_err(pos, "expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| decode_err(start, "header field overflow"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(decode_err(pos, "zero image dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(decode_err(pos, format!("unsupported maxval {maxval}")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(decode_err(pos, "missing whitespace after maxval"));
    }
    pos += 1;
    let n = width * height * channels;
    if bytes.len() < pos + n {
        return Err(decode_err(bytes.len(), format!("expected {n} bytes of pixel data")));
    }
    let data = bytes[pos..pos + n].iter().map(|&b| b as f64 / maxval as f64).collect();
    Ok(Image { width, height, channels, data })
}

struct CountingReader<'a> {
    inner: &'a [u8],
    pos: std::rc::Rc<std::cell::Cell<usize>>,
}

impl Read for CountingReader<'_> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let start = self.pos.get();
        let n = (&self.inner[start.min(self.inner.len())..]).read(buf)?;
        self.pos.set(start + n);
        Ok(n)
    }
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    let pos = std::rc::Rc::new(std::cell::Cell::new(0));
    let reader = CountingReader { inner: bytes, pos: pos.clone() };
    let mut decoder = png::Decoder::new(reader);
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let err = |e: png::DecodingError| decode_err(pos.get(), e.to_string());
    let mut reader = decoder.read_info().map_err(err)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let src_c = info.color_type.samples();
    let channels = if src_c >= 3 { 3 } else { 1 };
    let mut data = Vec::with_capacity(w * h * channels);
    for y in 0..h {
        let row = &buf[y * info.line_size..];
        for x in 0..w {
            let px = &row[x * src_c..x * src_c + src_c];
            data.extend(px[..channels].iter().map(|&b| b as f64 / 255.0));
        }
    }
    Image::new(w, h, channels, data)
}

/// Binary PPM (3 channels) or PGM (1 channel), maxval 255.
pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_bytes8());
    out
}

pub fn encode_png(img: &Image) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(if img.channels == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale });
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("in-memory write");
        w.write_image_data(&img.to_bytes8()).expect("in-memory write");
    }
    out
}

/// Writes PNG when the path ends in `.png`, PPM/PGM otherwise.
pub fn save_image_file(img: &Image, path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes =
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) { encode_png(img) } else { encode_pnm(img) };
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn crop(img: &Image, r: Rect) -> Result<Image> {
    if !r.fits(img.width, img.height) {
        return Err(Error::Bounds { rect: (r.x0, r.y0, r.w, r.h), width: img.width, height: img.height });
    }
    let c = img.channels;
    let mut data = Vec::with_capacity(r.w * r.h * c);
    for y in r.y0..r.y0 + r.h {
        let start = (y * img.width + r.x0) * c;
        data.extend_from_slice(&img.data[start..start + r.w * c]);
    }
    Ok(Image { width: r.w, height: r.h, channels: c, data })
}

/// Source coordinate and blend weight for half-pixel-centered sampling.
fn bilinear_taps(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

pub fn resize_bilinear(img: &Image, w: usize, h: usize) -> Result<Image> {
    if w == 0 || h == 0 {
        return Err(crate::error::invalid("resize target must be at least 1x1"));
    }
    if w == img.width && h == img.height {
        return Ok(img.clone());
    }
    let c = img.channels;
    let xs: Vec<_> = (0..w).map(|x| bilinear_taps(x, img.width, w)).collect();
    let mut data = Vec::with_capacity(w * h * c);
    for y in 0..h {
        let (y0, y1, ty) = bilinear_taps(y, img.height, h);
        for &(x0, x1, tx) in &xs {
            for ch in 0..c {
                let top = img.get(x0, y0, ch) * (1.0 - tx) + img.get(x1, y0, ch) * tx;
                let bot = img.get(x0, y1, ch) * (1.0 - tx) + img.get(x1, y1, ch) * tx;
                data.push((top * (1.0 - ty) + bot * ty).clamp(0.0, 1.0));
            }
        }
    }
    Ok(Image { width: w, height: h, channels: c, data })
}

/// Normalized 1-D Gaussian of radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with edge-replicate padding.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma > 0.0) {
        return Err(crate::error::invalid("sigma must be positive"));
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h, c) = (img.width, img.height, img.channels);
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let sx = clampi(x as isize + i as isize - r, w);
                    acc += kv * img.data[(y * w + sx) * c + ch];
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let sy = clampi(y as isize + i as isize - r, h);
                    acc += kv * tmp[(sy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc.clamp(0.0, 1.0);
            }
        }
    }
    Ok(Image { width: w, height: h, channels: c, data: out })
}
