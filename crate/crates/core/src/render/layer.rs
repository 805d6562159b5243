use crate::raster::Image;

/// RGBA canvas with straight (non-premultiplied) alpha.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    width: usize,
    height: usize,
    rgba: Vec<f64>,
}

impl Layer {
    /// Fully transparent.
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, rgba: vec![0.0; width * height * 4] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 4] {
        let i = (y * self.width + x) * 4;
        [self.rgba[i], self.rgba[i + 1], self.rgba[i + 2], self.rgba[i + 3]]
    }

    pub fn alpha(&self, x: usize, y: usize) -> f64 {
        self.rgba[(y * self.width + x) * 4 + 3]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3], alpha: f64) {
        let i = (y * self.width + x) * 4;
        self.rgba[i..i + 3].copy_from_slice(&rgb);
        self.rgba[i + 3] = alpha.clamp(0.0, 1.0);
    }

    pub fn is_transparent(&self) -> bool {
        self.rgba.chunks(4).all(|p| p[3] == 0.0)
    }

    /// `self` drawn over `below`.
    pub fn over(&self, below: &Layer) -> Layer {
        assert_eq!((self.width, self.height), (below.width, below.height), "layer sizes differ");
        let mut out = Layer::new(self.width, self.height);
        for ((o, t), b) in out.rgba.chunks_mut(4).zip(self.rgba.chunks(4)).zip(below.rgba.chunks(4)) {
            let a = t[3] + b[3] * (1.0 - t[3]);
            if a > 0.0 {
                for c in 0..3 {
                    o[c] = (t[c] * t[3] + b[c] * b[3] * (1.0 - t[3])) / a;
                }
            }
            o[3] = a;
        }
        out
    }

    /// Composites onto an opaque RGB image in place.
    pub fn composite_onto(&self, img: &mut Image) {
        assert_eq!((self.width, self.height), (img.width(), img.height()), "layer size differs from image");
        for y in 0..self.height {
            for x in 0..self.width {
                let [r, g, b, a] = self.get(x, y);
                if a == 0.0 {
                    continue;
                }
                let p = img.pixel_mut(x, y);
                for (dst, src) in p.iter_mut().zip([r, g, b]) {
                    *dst = src * a + *dst * (1.0 - a);
                }
            }
        }
    }
}
