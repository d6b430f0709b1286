//! im2col convolution kernels (NCHW, square kernels, zero padding).

use crate::float::matmul;
use crate::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// Unfolds one sample `[cin, h, w]` into `[cin*k*k, oh*ow]`.
pub fn im2col<F: Float>(x: &[F], g: &ConvGeom, col: &mut [F]) {
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    let (h, w, k, s) = (g.h as isize, g.w as isize, g.k, g.stride as isize);
    let pad = g.pad as isize;
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = oy as isize * s + ky as isize - pad;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h {
                        drow.iter_mut().for_each(|v| *v = F::zero());
                        continue;
                    }
                    let srow = &plane[(iy * w) as usize..((iy + 1) * w) as usize];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = ox as isize * s + kx as isize - pad;
                        *d = if ix < 0 || ix >= w {
                            F::zero()
                        } else {
                            srow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `dx`.
pub fn col2im<F: Float>(col: &[F], g: &ConvGeom, dx: &mut [F]) {
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    let (h, w, k, s) = (g.h as isize, g.w as isize, g.k, g.stride as isize);
    let pad = g.pad as isize;
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = oy as isize * s + ky as isize - pad;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let srow = &src[oy * ow..(oy + 1) * ow];
                    let prow = &mut plane[(iy * w) as usize..((iy + 1) * w) as usize];
                    for (ox, &v) in srow.iter().enumerate() {
                        let ix = ox as isize * s + kx as isize - pad;
                        if ix >= 0 && ix < w {
                            prow[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution of a batch. `w` is `[cout, cin, k, k]`.
pub fn conv2d_forward<F: Float>(
    x: &[F],
    n: usize,
    g: &ConvGeom,
    w: &[F],
    bias: Option<&[F]>,
    cout: usize,
) -> Vec<F> {
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    let kr = g.col_rows();
    let in_len = g.cin * g.h * g.w;
    let mut out = vec![F::zero(); n * cout * p];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![F::zero(); kr * p]
    };
    for i in 0..n {
        let xs = &x[i * in_len..(i + 1) * in_len];
        let cols: &[F] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, g, &mut col);
            &col
        };
        let o = &mut out[i * cout * p..(i + 1) * cout * p];
        if let Some(b) = bias {
            for (c, &bv) in b.iter().enumerate() {
                o[c * p..(c + 1) * p].iter_mut().for_each(|v| *v = bv);
            }
        }
        matmul(w, false, cols, false, o, cout, kr, p, bias.is_some());
    }
    out
}

/// Gradients of a batched convolution. Returns `(dx, dw, db)`; `dx` is only
/// computed when requested.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<F: Float>(
    x: &[F],
    n: usize,
    g: &ConvGeom,
    w: &[F],
    cout: usize,
    dy: &[F],
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<F>>, Option<Vec<F>>, Vec<F>) {
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    let kr = g.col_rows();
    let in_len = g.cin * g.h * g.w;
    let mut dx = want_dx.then(|| vec![F::zero(); n * in_len]);
    let mut dw = want_dw.then(|| vec![F::zero(); cout * kr]);
    let mut db = vec![F::zero(); cout];
    let mut col = if g.is_pointwise() || !want_dw {
        Vec::new()
    } else {
        vec![F::zero(); kr * p]
    };
    let mut dcol = if g.is_pointwise() || !want_dx {
        Vec::new()
    } else {
        vec![F::zero(); kr * p]
    };
    for i in 0..n {
        let dyi = &dy[i * cout * p..(i + 1) * cout * p];
        for c in 0..cout {
            db[c] += dyi[c * p..(c + 1) * p].iter().copied().sum::<F>();
        }
        let xs = &x[i * in_len..(i + 1) * in_len];
        if let Some(dw) = dw.as_mut() {
            let cols: &[F] = if g.is_pointwise() {
                xs
            } else {
                im2col(xs, g, &mut col);
                &col
            };
            // dW[cout, kr] += dY[cout, p] · col^T[p, kr]
            matmul(dyi, false, cols, true, dw, cout, p, kr, true);
        }
        if let Some(dx) = dx.as_mut() {
            let dxi = &mut dx[i * in_len..(i + 1) * in_len];
            if g.is_pointwise() {
                matmul(w, true, dyi, false, dxi, kr, cout, p, true);
            } else {
                // dcol[kr, p] = W^T[kr, cout] · dY[cout, p]
                matmul(w, true, dyi, false, &mut dcol, kr, cout, p, false);
                col2im(&dcol, g, dxi);
            }
        }
    }
    (dx, dw, db)
}
