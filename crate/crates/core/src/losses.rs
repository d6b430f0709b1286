//! Training objectives and image similarity measures.

use incogni_nn::filter::{gaussian_kernel, Border};
use incogni_nn::layers::Conv2d;
use incogni_nn::{Float, Graph, ParamStore, Tensor, Var};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::rng_for;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Least-squares GAN losses `(g_loss, d_loss)` for real label 1 and fake label 0.
pub fn lsgan_losses(d_real: &[f64], d_fake: &[f64]) -> Result<(f64, f64)> {
    if d_real.iter().chain(d_fake).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite discriminator score".into()));
    }
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::Shape("empty score map".into()));
    }
    let mean =
        |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&x| f(x)).sum::<f64>() / v.len() as f64;
    let d = 0.5 * mean(d_real, &|x| (x - 1.0).powi(2)) + 0.5 * mean(d_fake, &|x| x * x);
    let g = 0.5 * mean(d_fake, &|x| (x - 1.0).powi(2));
    Ok((g, d))
}

pub fn lsgan_d_graph<F: Float>(g: &mut Graph<F>, d_real: Var, d_fake: Var) -> Var {
    let r = g.add_scalar(d_real, -F::one());
    let r = g.square(r);
    let r = g.mean(r);
    let f = g.square(d_fake);
    let f = g.mean(f);
    let s = g.add(r, f);
    g.scale(s, F::c(0.5))
}

pub fn lsgan_g_graph<F: Float>(g: &mut Graph<F>, d_fake: Var) -> Var {
    let r = g.add_scalar(d_fake, -F::one());
    let r = g.square(r);
    let r = g.mean(r);
    g.scale(r, F::c(0.5))
}

pub fn l1_graph<F: Float>(g: &mut Graph<F>, a: Var, b: Var) -> Var {
    let d = g.sub(a, b);
    let d = g.abs(d);
    g.mean(d)
}

pub fn mse_graph<F: Float>(g: &mut Graph<F>, a: Var, b: Var) -> Var {
    let d = g.sub(a, b);
    let d = g.square(d);
    g.mean(d)
}

/// Mean local SSIM over channels and all valid 11×11 windows (dynamic range 1).
pub fn ssim_graph<F: Float>(g: &mut Graph<F>, x: Var, y: Var) -> Var {
    let k: Vec<F> = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let blur = |g: &mut Graph<F>, v: Var| g.sep_filter(v, &k, Border::Valid);
    let mx = blur(g, x);
    let my = blur(g, y);
    let xx = g.mul(x, x);
    let yy = g.mul(y, y);
    let xy = g.mul(x, y);
    let exx = blur(g, xx);
    let eyy = blur(g, yy);
    let exy = blur(g, xy);
    let mx2 = g.mul(mx, mx);
    let my2 = g.mul(my, my);
    let mxy = g.mul(mx, my);
    let sxx = g.sub(exx, mx2);
    let syy = g.sub(eyy, my2);
    let sxy = g.sub(exy, mxy);

    let a = g.scale(mxy, F::c(2.0));
    let a = g.add_scalar(a, F::c(SSIM_C1));
    let b = g.scale(sxy, F::c(2.0));
    let b = g.add_scalar(b, F::c(SSIM_C2));
    let num = g.mul(a, b);
    let c = g.add(mx2, my2);
    let c = g.add_scalar(c, F::c(SSIM_C1));
    let d = g.add(sxx, syy);
    let d = g.add_scalar(d, F::c(SSIM_C2));
    let den = g.mul(c, d);
    let map = g.div(num, den);
    g.mean(map)
}

fn same_shape(x: &Image, y: &Image) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", x.dims(), y.dims())));
    }
    Ok(())
}

pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    same_shape(x, y)?;
    if x.height() < SSIM_WINDOW || x.width() < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels"
        )));
    }
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::from_f32(&[1, 3, x.height(), x.width()], x.data()));
    let b = g.input(Tensor::from_f32(&[1, 3, y.height(), y.width()], y.data()));
    let s = ssim_graph(&mut g, a, b);
    Ok(g.value(s).item())
}

/// Feature hierarchy used by the perceptual terms.
pub trait FeatureNet<F: Float>: Send + Sync {
    /// Activations of every layer for an NCHW batch in `[0, 1]`; weights stay frozen.
    fn features(&self, g: &mut Graph<F>, x: Var) -> Vec<Var>;
}

/// Frozen, randomly initialized four-layer convolution stack.
#[derive(Clone)]
pub struct RandomConvFeatures<F: Float> {
    store: ParamStore<F>,
    convs: Vec<Conv2d>,
}

impl<F: Float> RandomConvFeatures<F> {
    pub const DEFAULT_SEED: u64 = 0x5EED_F00D;
    pub const CHANNELS: [usize; 4] = [8, 16, 16, 32];

    pub fn new(seed: u64) -> Self {
        let mut rng = rng_for(seed, "perceptual");
        let mut store = ParamStore::new();
        let mut convs = Vec::new();
        let mut cin = 3;
        for (i, &c) in Self::CHANNELS.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            let conv = Conv2d::new(
                &mut store,
                &format!("feat{i}"),
                cin,
                c,
                3,
                stride,
                1,
                &mut rng,
            );
            // He-style gain keeps activations from shrinking through the ReLUs.
            store
                .get_mut(conv.weight)
                .data_mut()
                .iter_mut()
                .for_each(|w| *w *= F::c(std::f64::consts::SQRT_2));
            convs.push(conv);
            cin = c;
        }
        Self { store, convs }
    }
}

impl<F: Float> Default for RandomConvFeatures<F> {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SEED)
    }
}

impl<F: Float> FeatureNet<F> for RandomConvFeatures<F> {
    fn features(&self, g: &mut Graph<F>, x: Var) -> Vec<Var> {
        g.with_frozen_params(|g| {
            let x = g.scale(x, F::c(2.0));
            let mut h = g.add_scalar(x, -F::one());
            let mut out = Vec::new();
            for conv in &self.convs {
                let c = conv.forward(g, &self.store, h);
                h = g.relu(c);
                out.push(h);
            }
            out
        })
    }
}

/// Sum over layers of the mean squared feature difference.
pub fn perceptual_graph<F: Float>(
    g: &mut Graph<F>,
    net: &dyn FeatureNet<F>,
    x: Var,
    y: Var,
) -> Var {
    let fx = net.features(g, x);
    let fy = net.features(g, y);
    let mut total: Option<Var> = None;
    for (a, b) in fx.into_iter().zip(fy) {
        let term = mse_graph(g, a, b);
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term),
        });
    }
    total.expect("feature net returned no layers")
}

/// LPIPS-structured distance with unit layer weights: features are unit-normalized
/// along channels, squared differences summed over channels and averaged over pixels.
pub fn lpips_graph<F: Float>(g: &mut Graph<F>, net: &dyn FeatureNet<F>, x: Var, y: Var) -> Var {
    let fx = net.features(g, x);
    let fy = net.features(g, y);
    let mut total: Option<Var> = None;
    for (a, b) in fx.into_iter().zip(fy) {
        let c = g.shape(a)[1];
        let ua = g.channel_unit_norm(a, 1e-10);
        let ub = g.channel_unit_norm(b, 1e-10);
        let m = mse_graph(g, ua, ub);
        let term = g.scale(m, F::c(c as f64));
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term),
        });
    }
    total.expect("feature net returned no layers")
}

fn pair_graph(x: &Image, y: &Image) -> (Graph<f64>, Var, Var) {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::from_f32(&[1, 3, x.height(), x.width()], x.data()));
    let b = g.input(Tensor::from_f32(&[1, 3, y.height(), y.width()], y.data()));
    (g, a, b)
}

pub fn perceptual_patch_distance(x: &Image, y: &Image, net: &dyn FeatureNet<f64>) -> Result<f64> {
    same_shape(x, y)?;
    let (mut g, a, b) = pair_graph(x, y);
    let d = lpips_graph(&mut g, net, a, b);
    Ok(g.value(d).item())
}

pub fn perceptual_loss(x: &Image, y: &Image, net: &dyn FeatureNet<f64>) -> Result<f64> {
    same_shape(x, y)?;
    let (mut g, a, b) = pair_graph(x, y);
    let d = perceptual_graph(&mut g, net, a, b);
    Ok(g.value(d).item())
}

/// Stage-one generator objective: adversarial + L1 + optional perceptual term.
pub fn generator_objective_graph<F: Float>(
    g: &mut Graph<F>,
    gen_out: Var,
    target: Var,
    d_fake: Var,
    perceptual: Option<&dyn FeatureNet<F>>,
) -> Var {
    let adv = lsgan_g_graph(g, d_fake);
    let l1 = l1_graph(g, gen_out, target);
    let mut total = g.add(adv, l1);
    if let Some(net) = perceptual {
        let p = perceptual_graph(g, net, gen_out, target);
        total = g.add(total, p);
    }
    total
}

pub fn generator_objective(
    gen_out: &Image,
    target: &Image,
    d_fake: &[f64],
    perceptual: Option<&dyn FeatureNet<f64>>,
) -> Result<f64> {
    same_shape(gen_out, target)?;
    if d_fake.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite discriminator score".into()));
    }
    let (mut g, a, b) = pair_graph(gen_out, target);
    let d = g.input(Tensor::new(&[d_fake.len()], d_fake.to_vec()));
    let o = generator_objective_graph(&mut g, a, b, d, perceptual);
    Ok(g.value(o).item())
}

/// Stage-two reconstruction objective: LPIPS + MSE + (1 − SSIM).
pub fn adapter_objective_graph<F: Float>(
    g: &mut Graph<F>,
    out: Var,
    target: Var,
    net: &dyn FeatureNet<F>,
) -> Var {
    let p = lpips_graph(g, net, out, target);
    let m = mse_graph(g, out, target);
    let s = ssim_graph(g, out, target);
    let s = g.scale(s, -F::one());
    let s = g.add_scalar(s, F::one());
    let t = g.add(p, m);
    g.add(t, s)
}

pub fn adapter_objective(out: &Image, target: &Image, net: &dyn FeatureNet<f64>) -> Result<f64> {
    same_shape(out, target)?;
    let (mut g, a, b) = pair_graph(out, target);
    let o = adapter_objective_graph(&mut g, a, b, net);
    Ok(g.value(o).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Image::from_planar(h, w, (0..3 * h * w).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn lsgan_corner_cases() {
        assert_eq!(lsgan_losses(&[1.0; 4], &[0.0; 4]).unwrap(), (0.5, 0.0));
        assert_eq!(lsgan_losses(&[0.0; 4], &[1.0; 4]).unwrap(), (0.0, 1.0));
        assert!(matches!(
            lsgan_losses(&[f64::NAN], &[0.0]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn ssim_identity_and_constants() {
        let x = random_image(16, 20, 1);
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
        let s = ssim(
            &Image::filled(12, 12, [0.0; 3]),
            &Image::filled(12, 12, [1.0; 3]),
        )
        .unwrap();
        let expect = SSIM_C1 / (1.0 + SSIM_C1);
        assert!((s - expect).abs() < 1e-12, "{s} vs {expect}");
        assert!((s - 9.999e-5).abs() < 1e-8);
        assert!(ssim(&Image::new(8, 8), &Image::new(8, 8)).is_err());
    }

    #[test]
    fn objectives_vanish_on_perfect_output() {
        let net = RandomConvFeatures::<f64>::default();
        let x = random_image(16, 16, 2);
        assert_eq!(
            generator_objective(&x, &x, &[1.0; 3], Some(&net)).unwrap(),
            0.0
        );
        assert_eq!(perceptual_patch_distance(&x, &x, &net).unwrap(), 0.0);
        assert!(adapter_objective(&x, &x, &net).unwrap().abs() < 1e-15);
    }

    #[test]
    fn l1_of_constant_offset() {
        let t = Image::filled(8, 8, [0.3, 0.5, 0.7]);
        let mut x = t.clone();
        x.data_mut().iter_mut().for_each(|v| *v += 0.1);
        let o = generator_objective(&x, &t, &[1.0], None).unwrap();
        assert!((o - 0.1).abs() < 1e-6);
    }

    #[test]
    fn lpips_symmetry() {
        let net = RandomConvFeatures::<f64>::default();
        let (a, b) = (random_image(16, 16, 3), random_image(16, 16, 4));
        let d1 = perceptual_patch_distance(&a, &b, &net).unwrap();
        let d2 = perceptual_patch_distance(&b, &a, &net).unwrap();
        assert!(d1 > 0.0 && (d1 - d2).abs() < 1e-12);
    }
}
