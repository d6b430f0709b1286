//! Separable filtering and 2× resampling on single-channel planes.
//!
//! Every forward map here is linear, so each comes with its transpose; the
//! graph uses the transposes as backward passes and the pyramid code uses the
//! forward maps directly.

use crate::Float;

/// Binomial 5-tap kernel `[1, 4, 6, 4, 1] / 16`.
pub const BINOMIAL5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Border {
    /// Mirror without repeating the edge sample (`-1 -> 1`).
    Reflect,
    /// No padding; output shrinks by `kernel.len() - 1`.
    Valid,
}

/// Mirror index into `0..n` without edge repetition, periodic for any offset.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut r = i.rem_euclid(period);
    if r >= n as isize {
        r = period - r;
    }
    r as usize
}

pub fn output_len(n: usize, k: usize, border: Border) -> usize {
    match border {
        Border::Reflect => n,
        Border::Valid => n + 1 - k,
    }
}

fn filter_rows<F: Float>(
    src: &[F],
    h: usize,
    w: usize,
    k: &[F],
    border: Border,
) -> (Vec<F>, usize) {
    let half = (k.len() / 2) as isize;
    let ow = output_len(w, k.len(), border);
    let mut out = vec![F::zero(); h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let orow = &mut out[y * ow..(y + 1) * ow];
        match border {
            Border::Valid => {
                for (x, o) in orow.iter_mut().enumerate() {
                    let mut acc = F::zero();
                    for (t, &kv) in k.iter().enumerate() {
                        acc += kv * row[x + t];
                    }
                    *o = acc;
                }
            }
            Border::Reflect => {
                for (x, o) in orow.iter_mut().enumerate() {
                    let mut acc = F::zero();
                    for (t, &kv) in k.iter().enumerate() {
                        let xi = reflect_index(x as isize + t as isize - half, w);
                        acc += kv * row[xi];
                    }
                    *o = acc;
                }
            }
        }
    }
    (out, ow)
}

fn filter_rows_t<F: Float>(g: &[F], h: usize, w: usize, k: &[F], border: Border) -> Vec<F> {
    let half = (k.len() / 2) as isize;
    let ow = output_len(w, k.len(), border);
    let mut out = vec![F::zero(); h * w];
    for y in 0..h {
        let grow = &g[y * ow..(y + 1) * ow];
        let orow = &mut out[y * w..(y + 1) * w];
        for (x, &gv) in grow.iter().enumerate() {
            for (t, &kv) in k.iter().enumerate() {
                let xi = match border {
                    Border::Valid => x + t,
                    Border::Reflect => reflect_index(x as isize + t as isize - half, w),
                };
                orow[xi] += kv * gv;
            }
        }
    }
    out
}

fn transpose_plane<F: Float>(src: &[F], h: usize, w: usize) -> Vec<F> {
    let mut out = vec![F::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            out[x * h + y] = src[y * w + x];
        }
    }
    out
}

/// Applies the same 1-D kernel along rows and then columns.
pub fn filter_plane<F: Float>(
    src: &[F],
    h: usize,
    w: usize,
    kernel: &[F],
    border: Border,
) -> (Vec<F>, usize, usize) {
    let (rows, ow) = filter_rows(src, h, w, kernel, border);
    let t = transpose_plane(&rows, h, ow);
    let (cols, oh) = filter_rows(&t, ow, h, kernel, border);
    (transpose_plane(&cols, ow, oh), oh, ow)
}

/// Transpose of [`filter_plane`]: maps an output-shaped gradient back to `h×w`.
pub fn filter_plane_t<F: Float>(
    g: &[F],
    h: usize,
    w: usize,
    kernel: &[F],
    border: Border,
) -> Vec<F> {
    let oh = output_len(h, kernel.len(), border);
    let ow = output_len(w, kernel.len(), border);
    let gt = transpose_plane(g, oh, ow);
    let cols = filter_rows_t(&gt, ow, h, kernel, border);
    let rows = transpose_plane(&cols, ow, h);
    filter_rows_t(&rows, h, w, kernel, border)
}

/// Keeps even rows and columns; output is `ceil(h/2) × ceil(w/2)`.
pub fn decimate2<F: Float>(src: &[F], h: usize, w: usize) -> (Vec<F>, usize, usize) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            out.push(src[2 * y * w + 2 * x]);
        }
    }
    (out, oh, ow)
}

pub fn decimate2_t<F: Float>(g: &[F], h: usize, w: usize) -> Vec<F> {
    let ow = w.div_ceil(2);
    let mut out = vec![F::zero(); h * w];
    for (i, &gv) in g.iter().enumerate() {
        let (y, x) = (i / ow, i % ow);
        out[2 * y * w + 2 * x] = gv;
    }
    out
}

/// Places samples at even positions of a `2h × 2w` plane of zeros.
pub fn zero_insert2<F: Float>(src: &[F], h: usize, w: usize) -> (Vec<F>, usize, usize) {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![F::zero(); oh * ow];
    for y in 0..h {
        for x in 0..w {
            out[2 * y * ow + 2 * x] = src[y * w + x];
        }
    }
    (out, oh, ow)
}

pub fn zero_insert2_t<F: Float>(g: &[F], h: usize, w: usize) -> Vec<F> {
    let ow = 2 * w;
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(g[2 * y * ow + 2 * x]);
        }
    }
    out
}

/// Top-left `oh × ow` window of an `h × w` plane.
pub fn crop<F: Float>(src: &[F], _h: usize, w: usize, oh: usize, ow: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        out.extend_from_slice(&src[y * w..y * w + ow]);
    }
    out
}

pub fn crop_t<F: Float>(g: &[F], h: usize, w: usize, oh: usize, ow: usize) -> Vec<F> {
    let mut out = vec![F::zero(); h * w];
    for y in 0..oh {
        out[y * w..y * w + ow].copy_from_slice(&g[y * ow..(y + 1) * ow]);
    }
    out
}

pub fn binomial5<F: Float>() -> [F; 5] {
    BINOMIAL5.map(F::c)
}

/// Blur with the binomial kernel, then drop odd rows and columns.
pub fn pyr_down<F: Float>(src: &[F], h: usize, w: usize) -> (Vec<F>, usize, usize) {
    let (b, _, _) = filter_plane(src, h, w, &binomial5::<F>(), Border::Reflect);
    decimate2(&b, h, w)
}

/// Zero-insertion, binomial blur scaled by 4, then crop to `oh × ow`.
///
/// `oh` must be `2h` or `2h - 1` (likewise for widths).
pub fn pyr_up<F: Float>(src: &[F], h: usize, w: usize, oh: usize, ow: usize) -> Vec<F> {
    debug_assert!(oh == 2 * h || oh + 1 == 2 * h);
    debug_assert!(ow == 2 * w || ow + 1 == 2 * w);
    let k = BINOMIAL5.map(|v| F::c(2.0 * v));
    let (z, zh, zw) = zero_insert2(src, h, w);
    let (b, _, _) = filter_plane(&z, zh, zw, &k, Border::Reflect);
    crop(&b, zh, zw, oh, ow)
}

pub fn pyr_up_t<F: Float>(g: &[F], h: usize, w: usize, oh: usize, ow: usize) -> Vec<F> {
    let k = BINOMIAL5.map(|v| F::c(2.0 * v));
    let (zh, zw) = (2 * h, 2 * w);
    let c = crop_t(g, zh, zw, oh, ow);
    let b = filter_plane_t(&c, zh, zw, &k, Border::Reflect);
    zero_insert2_t(&b, h, w)
}

/// Normalized 1-D Gaussian of odd length `size`.
pub fn gaussian_kernel<F: Float>(size: usize, sigma: f64) -> Vec<F> {
    let half = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| F::c(v / s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((s >> 33) as f64) / (1u64 << 31) as f64 - 0.5
            })
            .collect()
    }

    #[test]
    fn reflect_index_mirrors_without_edge_repeat() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-2, 5), 2);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(6, 5), 2);
        assert_eq!(reflect_index(-2, 2), 0);
        assert_eq!(reflect_index(3, 2), 1);
        assert_eq!(reflect_index(7, 1), 0);
    }

    // <A x, y> == <x, A^T y> for every linear map and its transpose.
    #[test]
    fn transposes_are_adjoint() {
        let k = gaussian_kernel::<f64>(5, 1.0);
        for &(h, w) in &[(7usize, 5usize), (8, 8), (3, 2)] {
            let x = pseudo(h * w, 3);
            for border in [Border::Reflect, Border::Valid] {
                if border == Border::Valid && (h < 5 || w < 5) {
                    continue;
                }
                let (ax, oh, ow) = filter_plane(&x, h, w, &k, border);
                let y = pseudo(oh * ow, 9);
                let aty = filter_plane_t(&y, h, w, &k, border);
                assert!((dot(&ax, &y) - dot(&x, &aty)).abs() < 1e-12);
            }
            let (dx, oh, ow) = decimate2(&x, h, w);
            let y = pseudo(oh * ow, 4);
            assert!((dot(&dx, &y) - dot(&x, &decimate2_t(&y, h, w))).abs() < 1e-12);

            let (ux, uh, uw) = (2 * h - 1, 2 * w, 0);
            let _ = uw;
            let up = pyr_up(&x, h, w, ux, uh);
            let y = pseudo(ux * uh, 5);
            assert!((dot(&up, &y) - dot(&x, &pyr_up_t(&y, h, w, ux, uh))).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let x = vec![0.25f64; 6 * 9];
        let (b, _, _) = filter_plane(&x, 6, 9, &binomial5::<f64>(), Border::Reflect);
        assert!(b.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let up = pyr_up(&[0.5f64; 12], 3, 4, 6, 7);
        assert!(up.iter().all(|v| (v - 0.5).abs() < 1e-15));
    }
}
