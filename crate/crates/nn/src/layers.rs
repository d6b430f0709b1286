//! Parameterized building blocks shared by all networks.

use rand::Rng;

use crate::params::uniform_init;
use crate::{Float, Graph, ParamId, ParamStore, Tensor, Var};

/// Square-kernel convolution with zero padding.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Float, R: Rng>(
        store: &mut ParamStore<F>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = cin * k * k;
        let weight = store.add(
            format!("{name}.weight"),
            uniform_init(&[cout, cin, k, k], fan_in, 1.0, rng),
        );
        let bias = Some(store.add(format!("{name}.bias"), Tensor::zeros(&[cout])));
        Self {
            weight,
            bias,
            stride,
            pad,
        }
    }

    /// "Same" 3×3 convolution.
    pub fn same3<F: Float, R: Rng>(
        store: &mut ParamStore<F>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Self {
        Self::new(store, name, cin, cout, 3, 1, 1, rng)
    }

    /// Zero-initialized weights; useful for residual heads that should start silent.
    pub fn zeroed<F: Float>(self, store: &mut ParamStore<F>) -> Self {
        store
            .get_mut(self.weight)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = F::zero());
        self
    }

    pub fn forward<F: Float>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<F: Float, R: Rng>(
        store: &mut ParamStore<F>,
        name: &str,
        din: usize,
        dout: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            uniform_init(&[dout, din], din, 1.0, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[dout]));
        Self { weight, bias }
    }

    pub fn forward<F: Float>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, Some(b))
    }
}
