//! Planar RGB images and binary masks.

use std::path::Path;

use incogni_nn::filter::{filter_plane, gaussian_kernel, Border};
use incogni_nn::Tensor;

use crate::error::{Error, Result};

/// RGB image stored as three row-major planes, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize) -> Self {
        Self::filled(height, width, [0.0; 3])
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        assert!(height >= 1 && width >= 1, "image must be at least 1×1");
        let mut data = Vec::with_capacity(3 * height * width);
        for c in rgb {
            data.extend(std::iter::repeat_n(c, height * width));
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Builds an image from planar CHW data.
    pub fn from_planar(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * height * width || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "{} values for a {height}×{width}×3 image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        for (c, v) in rgb.into_iter().enumerate() {
            self.set(c, y, x, v);
        }
    }

    /// Checks the value invariants: finite and inside `[0, 1]`.
    pub fn is_valid(&self) -> bool {
        self.data
            .iter()
            .all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    pub fn clamp01(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    /// Rounds every value to the nearest multiple of 1/255.
    pub fn quantize8(&mut self) {
        self.data
            .iter_mut()
            .for_each(|v| *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
    }

    pub fn sub_image(&self, y0: usize, x0: usize, h: usize, w: usize) -> Image {
        assert!(y0 + h <= self.height && x0 + w <= self.width);
        let mut out = Image::new(h, w);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    out.set(c, y, x, self.get(c, y0 + y, x0 + x));
                }
            }
        }
        out
    }

    /// Bilinear resampling with pixel-center alignment and edge clamping.
    pub fn resize(&self, oh: usize, ow: usize) -> Image {
        if (oh, ow) == (self.height, self.width) {
            return self.clone();
        }
        let mut out = Image::new(oh, ow);
        let sy = self.height as f32 / oh as f32;
        let sx = self.width as f32 / ow as f32;
        let taps = |o: usize, s: f32, n: usize| -> (usize, usize, f32) {
            let p = ((o as f32 + 0.5) * s - 0.5).clamp(0.0, (n - 1) as f32);
            let i0 = p.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, p - i0 as f32)
        };
        let xs: Vec<_> = (0..ow).map(|x| taps(x, sx, self.width)).collect();
        for y in 0..oh {
            let (y0, y1, fy) = taps(y, sy, self.height);
            for c in 0..3 {
                for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let top = self.get(c, y0, x0) * (1.0 - fx) + self.get(c, y0, x1) * fx;
                    let bot = self.get(c, y1, x0) * (1.0 - fx) + self.get(c, y1, x1) * fx;
                    out.set(c, y, x, top * (1.0 - fy) + bot * fy);
                }
            }
        }
        out
    }

    /// Separable Gaussian blur with reflect padding.
    pub fn gaussian_blur(&self, sigma: f32) -> Image {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil().max(1.0) as usize;
        let k: Vec<f32> = gaussian_kernel(2 * radius + 1, sigma as f64);
        let mut out = self.clone();
        for c in 0..3 {
            let (p, _, _) =
                filter_plane(self.plane(c), self.height, self.width, &k, Border::Reflect);
            out.plane_mut(c).copy_from_slice(&p);
        }
        out
    }

    /// Replaces the pixels under `hole` by a push-pull interpolation of the
    /// pixels outside it; pixels under `hole` are never read. An image fully
    /// covered by `hole` becomes black.
    pub fn fill_holes(&self, hole: &Mask) -> Image {
        assert_eq!(self.dims(), hole.dims());
        let (h, w) = self.dims();
        let n = h * w;
        let mut wt: Vec<f32> = (0..n)
            .map(|i| if hole.data()[i] != 0 { 0.0 } else { 1.0 })
            .collect();
        let mut val: Vec<f32> = (0..3 * n).map(|i| self.data[i] * wt[i % n]).collect();
        let filled = push_pull(&mut val, &mut wt, h, w);
        let mut out = self.clone();
        for i in 0..n {
            if hole.data()[i] != 0 {
                for c in 0..3 {
                    out.data[c * n + i] = filled[c * n + i];
                }
            }
        }
        out
    }

    /// ITU-R BT.601 luma replicated on all three channels.
    pub fn to_gray(&self) -> Image {
        let mut out = self.clone();
        let n = self.height * self.width;
        for i in 0..n {
            let l = 0.299 * self.data[i] + 0.587 * self.data[n + i] + 0.114 * self.data[2 * n + i];
            out.data[i] = l;
            out.data[n + i] = l;
            out.data[2 * n + i] = l;
        }
        out
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f32 {
        assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f32>()
            / self.data.len() as f32
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(&[1, 3, self.height, self.width], self.data.clone())
    }

    /// Stacks same-sized images into an NCHW batch.
    pub fn batch(images: &[&Image]) -> Tensor<f32> {
        let (h, w) = images[0].dims();
        let mut data = Vec::with_capacity(images.len() * 3 * h * w);
        for im in images {
            assert_eq!(im.dims(), (h, w), "batch of mixed sizes");
            data.extend_from_slice(&im.data);
        }
        Tensor::new(&[images.len(), 3, h, w], data)
    }

    /// Sample `i` of an NCHW batch with three channels.
    pub fn from_batch(t: &Tensor<f32>, i: usize) -> Image {
        let (_, c, h, w) = t.dims4();
        assert_eq!(c, 3);
        let n = 3 * h * w;
        Image {
            height: h,
            width: w,
            data: t.data()[i * n..(i + 1) * n].to_vec(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let p = self
                    .pixel(y, x)
                    .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
                buf.put_pixel(x as u32, y as u32, image::Rgb(p));
            }
        }
        buf.save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::new(h, w);
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, y as usize, x as usize, p[c] as f32 / 255.0);
            }
        }
        Ok(out)
    }
}

/// Binary mask, row-major, one byte per pixel (0 or 1).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{} values for a {height}×{width} mask",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data: data.into_iter().map(|v| (v != 0) as u8).collect(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Foreground bounding rectangle `(y0, x0, y1, x1)`, inclusive.
    pub fn bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    b = Some(match b {
                        None => (y, x, y, x),
                        Some((y0, x0, y1, x1)) => (y0.min(y), x0.min(x), y1.max(y), x1.max(x)),
                    });
                }
            }
        }
        b
    }

    pub fn union_with(&mut self, other: &Mask) {
        assert_eq!(self.dims(), other.dims());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
    }

    pub fn invert(&self) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    /// Square dilation by `r` pixels.
    pub fn dilate(&self, r: usize) -> Mask {
        if r == 0 {
            return self.clone();
        }
        let mut rows = Mask::new(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    let (a, b) = (x.saturating_sub(r), (x + r).min(self.width - 1));
                    for xx in a..=b {
                        rows.set(y, xx, true);
                    }
                }
            }
        }
        let mut out = Mask::new(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                if rows.get(y, x) {
                    let (a, b) = (y.saturating_sub(r), (y + r).min(self.height - 1));
                    for yy in a..=b {
                        out.set(yy, x, true);
                    }
                }
            }
        }
        out
    }

    pub fn sub_mask(&self, y0: usize, x0: usize, h: usize, w: usize) -> Mask {
        let mut out = Mask::new(h, w);
        for y in 0..h {
            for x in 0..w {
                out.set(y, x, self.get(y0 + y, x0 + x));
            }
        }
        out
    }

    /// Nearest-neighbour resampling with pixel-center alignment.
    pub fn resize(&self, oh: usize, ow: usize) -> Mask {
        if (oh, ow) == self.dims() {
            return self.clone();
        }
        let mut out = Mask::new(oh, ow);
        for y in 0..oh {
            let sy =
                (((y as f32 + 0.5) * self.height as f32 / oh as f32) as usize).min(self.height - 1);
            for x in 0..ow {
                let sx = (((x as f32 + 0.5) * self.width as f32 / ow as f32) as usize)
                    .min(self.width - 1);
                out.set(y, x, self.get(sy, sx));
            }
        }
        out
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }
}

/// `val` holds weight-premultiplied planes. Returns normalized planes where
/// every zero-weight pixel takes the value of the next coarser level.
fn push_pull(val: &mut [f32], wt: &mut [f32], h: usize, w: usize) -> Vec<f32> {
    let n = h * w;
    let norm = |val: &[f32], wt: &[f32]| -> Vec<f32> {
        (0..3 * n)
            .map(|i| {
                if wt[i % n] > 0.0 {
                    val[i] / wt[i % n]
                } else {
                    0.0
                }
            })
            .collect()
    };
    if wt.iter().all(|&x| x > 0.0) || (h == 1 && w == 1) {
        return norm(val, wt);
    }
    let (ch, cw) = (h.div_ceil(2), w.div_ceil(2));
    let cn = ch * cw;
    let mut cval = vec![0.0; 3 * cn];
    let mut cwt = vec![0.0; cn];
    for y in 0..h {
        for x in 0..w {
            let (i, j) = (y * w + x, (y / 2) * cw + x / 2);
            cwt[j] += wt[i];
            for c in 0..3 {
                cval[c * cn + j] += val[c * n + i];
            }
        }
    }
    let coarse = push_pull(&mut cval, &mut cwt, ch, cw);
    let mut out = norm(val, wt);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if wt[i] == 0.0 {
                let j = (y / 2) * cw + x / 2;
                for c in 0..3 {
                    out[c * n + i] = coarse[c * cn + j];
                }
            }
        }
    }
    out
}
