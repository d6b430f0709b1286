//! Gaussian and Laplacian pyramids and multi-band blending.

use incogni_nn::filter::{pyr_down, pyr_up};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

/// Stack of same-sized planes with arbitrary (signed) values.
#[derive(Clone, Debug, PartialEq)]
pub struct Planes {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Planes {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::new(
            channels,
            height,
            width,
            vec![0.0; channels * height * width],
        )
    }

    pub fn from_image(img: &Image) -> Self {
        Self::new(3, img.height(), img.width(), img.data().to_vec())
    }

    pub fn from_mask(m: &Mask) -> Self {
        Self::new(1, m.height(), m.width(), m.to_f32())
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    fn map_planes(&self, f: impl Fn(&[f32]) -> (Vec<f32>, usize, usize)) -> Planes {
        let mut data = Vec::new();
        let (mut h, mut w) = (0, 0);
        for c in 0..self.channels {
            let (p, ph, pw) = f(self.plane(c));
            data.extend(p);
            (h, w) = (ph, pw);
        }
        Planes::new(self.channels, h, w, data)
    }

    pub fn down(&self) -> Planes {
        self.map_planes(|p| pyr_down(p, self.height, self.width))
    }

    pub fn up(&self, oh: usize, ow: usize) -> Planes {
        self.map_planes(|p| (pyr_up(p, self.height, self.width, oh, ow), oh, ow))
    }

    pub fn zip(&self, other: &Planes, f: impl Fn(f32, f32) -> f32) -> Planes {
        assert_eq!(
            (self.channels, self.height, self.width),
            (other.channels, other.height, other.width)
        );
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Planes::new(self.channels, self.height, self.width, data)
    }

    /// Per-pixel mix `w·a + (1 − w)·b` with a single-channel weight plane.
    pub fn mix(a: &Planes, b: &Planes, w: &Planes) -> Planes {
        assert_eq!(w.channels, 1);
        assert_eq!((a.height, a.width), (w.height, w.width));
        let n = a.height * a.width;
        let data = (0..a.data.len())
            .map(|i| {
                let m = w.data[i % n];
                m * a.data[i] + (1.0 - m) * b.data[i]
            })
            .collect();
        Planes::new(a.channels, a.height, a.width, data)
    }

    pub fn max_abs_diff(&self, other: &Planes) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Three-channel image, clamped to `[0, 1]`.
    pub fn to_image(&self) -> Image {
        assert_eq!(self.channels, 3);
        let data = self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Image::from_planar(self.height, self.width, data).expect("plane sizes match")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PyramidKind {
    Gaussian,
    Laplacian,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidStack {
    pub kind: PyramidKind,
    /// Gaussian: `n` levels. Laplacian: `n − 1` band-pass levels.
    pub levels: Vec<Planes>,
    /// Coarsest Gaussian level (Laplacian kind only).
    pub low_pass: Option<Planes>,
}

impl PyramidStack {
    pub fn num_levels(&self) -> usize {
        match self.kind {
            PyramidKind::Gaussian => self.levels.len(),
            PyramidKind::Laplacian => self.levels.len() + 1,
        }
    }
}

pub fn check_levels(h: usize, w: usize, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Usage("pyramid needs at least one level".into()));
    }
    if n >= 32 || h.min(w) < 1usize << n {
        return Err(Error::Shape(format!(
            "{n} levels are too many for a {h}×{w} image"
        )));
    }
    Ok(())
}

pub fn gaussian_planes(x: &Planes, n: usize) -> Result<Vec<Planes>> {
    check_levels(x.height, x.width, n)?;
    let mut levels = vec![x.clone()];
    for _ in 1..n {
        let next = levels.last().unwrap().down();
        levels.push(next);
    }
    Ok(levels)
}

pub fn laplacian_planes(x: &Planes, n: usize) -> Result<PyramidStack> {
    let g = gaussian_planes(x, n)?;
    let levels = (0..n - 1)
        .map(|k| {
            let up = g[k + 1].up(g[k].height, g[k].width);
            g[k].zip(&up, |a, b| a - b)
        })
        .collect();
    Ok(PyramidStack {
        kind: PyramidKind::Laplacian,
        levels,
        low_pass: Some(g[n - 1].clone()),
    })
}

pub fn gaussian_pyramid(img: &Image, n: usize) -> Result<PyramidStack> {
    Ok(PyramidStack {
        kind: PyramidKind::Gaussian,
        levels: gaussian_planes(&Planes::from_image(img), n)?,
        low_pass: None,
    })
}

pub fn laplacian_pyramid(img: &Image, n: usize) -> Result<PyramidStack> {
    laplacian_planes(&Planes::from_image(img), n)
}

/// Upsample-and-add from the coarsest level; no clamping.
pub fn collapse_planes(pyr: &PyramidStack) -> Result<Planes> {
    let low = match (pyr.kind, &pyr.low_pass) {
        (PyramidKind::Laplacian, Some(l)) => l,
        _ => return Err(Error::Usage("collapse needs a Laplacian pyramid".into())),
    };
    let mut acc = low.clone();
    for lap in pyr.levels.iter().rev() {
        let up = acc.up(lap.height, lap.width);
        acc = lap.zip(&up, |a, b| a + b);
    }
    Ok(acc)
}

pub fn collapse(pyr: &PyramidStack) -> Result<Image> {
    let p = collapse_planes(pyr)?;
    if p.channels != 3 {
        return Err(Error::Shape(format!(
            "collapse to an image needs 3 channels, got {}",
            p.channels
        )));
    }
    Ok(p.to_image())
}

/// Multi-band blend under a soft weight plane; returns unclamped planes.
pub fn blend_planes(fg: &Planes, bg: &Planes, weight: &Planes, n: usize) -> Result<Planes> {
    if (fg.height, fg.width) != (bg.height, bg.width)
        || (fg.height, fg.width) != (weight.height, weight.width)
    {
        return Err(Error::Shape("blend inputs differ in size".into()));
    }
    let lf = laplacian_planes(fg, n)?;
    let lb = laplacian_planes(bg, n)?;
    let gm = gaussian_planes(weight, n)?;
    let levels = (0..n - 1)
        .map(|k| Planes::mix(&lf.levels[k], &lb.levels[k], &gm[k]))
        .collect();
    let low = Planes::mix(
        lf.low_pass.as_ref().unwrap(),
        lb.low_pass.as_ref().unwrap(),
        &gm[n - 1],
    );
    collapse_planes(&PyramidStack {
        kind: PyramidKind::Laplacian,
        levels,
        low_pass: Some(low),
    })
}

pub fn blend(fg: &Image, bg: &Image, mask: &Mask, n: usize) -> Result<Image> {
    if fg.dims() != mask.dims() {
        return Err(Error::Shape(
            "blend mask differs in size from the images".into(),
        ));
    }
    Ok(blend_planes(
        &Planes::from_image(fg),
        &Planes::from_image(bg),
        &Planes::from_mask(mask),
        n,
    )?
    .to_image())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Image::from_planar(h, w, (0..3 * h * w).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn constant_image_pyramids() {
        let img = Image::filled(12, 10, [0.5; 3]);
        for lvl in gaussian_pyramid(&img, 3).unwrap().levels {
            assert!(lvl.data.iter().all(|&v| (v - 0.5).abs() < 1e-6));
        }
        let lap = laplacian_pyramid(&img, 3).unwrap();
        assert!(lap
            .levels
            .iter()
            .all(|l| l.data.iter().all(|v| v.abs() < 1e-6)));
        assert_eq!(
            gaussian_pyramid(&img, 1).unwrap().levels[0],
            Planes::from_image(&img)
        );
    }

    #[test]
    fn level_sizes_round_up() {
        let g = gaussian_pyramid(&random_image(13, 9, 1), 3).unwrap();
        let dims: Vec<_> = g.levels.iter().map(|l| (l.height, l.width)).collect();
        assert_eq!(dims, vec![(13, 9), (7, 5), (4, 3)]);
    }

    #[test]
    fn too_many_levels() {
        let img = random_image(8, 8, 2);
        assert!(gaussian_pyramid(&img, 3).is_ok());
        assert!(matches!(gaussian_pyramid(&img, 4), Err(Error::Shape(_))));
        assert!(gaussian_pyramid(&img, 0).is_err());
    }

    #[test]
    fn collapse_rejects_gaussian() {
        let g = gaussian_pyramid(&random_image(8, 8, 3), 2).unwrap();
        assert!(matches!(collapse(&g), Err(Error::Usage(_))));
    }

    #[test]
    fn blend_with_full_and_empty_masks() {
        let fg = random_image(16, 12, 4);
        let bg = random_image(16, 12, 5);
        let mut ones = Mask::new(16, 12);
        (0..16).for_each(|y| (0..12).for_each(|x| ones.set(y, x, true)));
        let a = blend(&fg, &bg, &ones, 3).unwrap();
        let b = blend(&fg, &bg, &Mask::new(16, 12), 3).unwrap();
        assert!(a
            .data()
            .iter()
            .zip(fg.data())
            .all(|(x, y)| (x - y).abs() <= 1e-5));
        assert!(b
            .data()
            .iter()
            .zip(bg.data())
            .all(|(x, y)| (x - y).abs() <= 1e-5));
    }

    proptest! {
        #[test]
        fn exact_reconstruction(h in 8usize..40, w in 8usize..40, n in 1usize..4, seed in any::<u64>()) {
            let img = random_image(h, w, seed);
            let back = collapse_planes(&laplacian_pyramid(&img, n).unwrap()).unwrap();
            prop_assert!(back.max_abs_diff(&Planes::from_image(&img)) <= 1e-5);
        }

        #[test]
        fn blend_symmetry_and_linearity(seed in any::<u64>(), a in 0.1f32..2.0) {
            let fg = Planes::from_image(&random_image(16, 16, seed));
            let bg = Planes::from_image(&random_image(16, 16, seed ^ 1));
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = Planes::new(1, 16, 16, (0..256).map(|_| rng.random_range(0..2) as f32).collect());
            let inv = Planes::new(1, 16, 16, m.data.iter().map(|v| 1.0 - v).collect());
            let x = blend_planes(&fg, &bg, &m, 3).unwrap();
            prop_assert!(x.max_abs_diff(&blend_planes(&bg, &fg, &inv, 3).unwrap()) <= 1e-5);
            let sfg = Planes::new(3, 16, 16, fg.data.iter().map(|v| a * v).collect());
            let sbg = Planes::new(3, 16, 16, bg.data.iter().map(|v| a * v).collect());
            let scaled = Planes::new(3, 16, 16, x.data.iter().map(|v| a * v).collect());
            prop_assert!(blend_planes(&sfg, &sbg, &m, 3).unwrap().max_abs_diff(&scaled) <= 1e-5);
        }

        #[test]
        fn blend_of_constants_stays_between(c0 in 0.0f32..1.0, c1 in 0.0f32..1.0, seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = Mask::from_data(16, 16, (0..256).map(|_| rng.random_range(0..2u8)).collect()).unwrap();
            let out = blend(&Image::filled(16, 16, [c0; 3]), &Image::filled(16, 16, [c1; 3]), &m, 3).unwrap();
            let (lo, hi) = (c0.min(c1) - 1e-5, c0.max(c1) + 1e-5);
            prop_assert!(out.data().iter().all(|&v| v >= lo && v <= hi));
        }
    }
}
