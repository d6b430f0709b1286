//! Stage two: an encoder-decoder that re-synthesizes a patch as a Laplacian
//! pyramid over the input's own low-pass band.

use std::collections::BTreeMap;

use incogni_nn::layers::Conv2d;
use incogni_nn::{Adam, AdamConfig, Float, Graph, ParamStore, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::losses::{adapter_objective_graph, RandomConvFeatures};
use crate::pose2person::frame_union_mask;
use crate::privacy::{AccessAudit, AuditedFrame};
use crate::rng::rng_for;
use crate::scene::SceneDataset;

/// Number of encoder and decoder blocks; inputs must be divisible by `2^DEPTH`.
pub const DEPTH: usize = 4;
pub const P2S_STAGE: &str = "person2scene";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    /// Encoder widths from fine to coarse, one per block.
    pub channels: Vec<usize>,
    pub seed: u64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 24, 32, 48],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
struct DownBlock {
    down: Conv2d,
    res: Conv2d,
}

#[derive(Clone, Debug)]
struct UpBlock {
    fuse: Conv2d,
    res: Conv2d,
    emit: Conv2d,
}

#[derive(Clone, Debug)]
struct AdapterNet {
    stem: Conv2d,
    down: Vec<DownBlock>,
    up: Vec<UpBlock>,
}

impl AdapterNet {
    fn new<F: Float>(cfg: &AdapterConfig, store: &mut ParamStore<F>) -> Result<Self> {
        if cfg.channels.len() != DEPTH {
            return Err(Error::Config(format!(
                "adapter needs {DEPTH} channel widths"
            )));
        }
        let mut rng = rng_for(cfg.seed, "person2scene/adapter");
        let c0 = cfg.channels[0];
        let stem = Conv2d::same3(store, "stem", 3, c0, &mut rng);
        let mut down = Vec::new();
        let mut cin = c0;
        for (i, &c) in cfg.channels.iter().enumerate() {
            down.push(DownBlock {
                down: Conv2d::new(store, &format!("down{i}.conv"), cin, c, 3, 2, 1, &mut rng),
                res: Conv2d::same3(store, &format!("down{i}.res"), c, c, &mut rng),
            });
            cin = c;
        }
        // Skip widths: stem output, then every down block except the last.
        let skips: Vec<usize> = std::iter::once(c0)
            .chain(cfg.channels[..DEPTH - 1].iter().copied())
            .collect();
        let mut up = Vec::new();
        for i in 0..DEPTH {
            let skip = skips[DEPTH - 1 - i];
            let c = skip;
            up.push(UpBlock {
                fuse: Conv2d::same3(store, &format!("up{i}.fuse"), cin + skip, c, &mut rng),
                res: Conv2d::same3(store, &format!("up{i}.res"), c, c, &mut rng),
                emit: passthrough(
                    Conv2d::new(store, &format!("up{i}.emit"), c + 3, 3, 1, 1, 0, &mut rng)
                        .zeroed(store),
                    c,
                    store,
                ),
            });
            cin = c;
        }
        Ok(Self { stem, down, up })
    }

    /// Returns `(band levels fine to coarse, low-pass, collapsed output)`.
    fn forward<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
    ) -> (Vec<Var>, Var, Var) {
        // Input Gaussian levels; each decoder block also sees the matching input band.
        let mut gauss = vec![x];
        for _ in 0..DEPTH {
            let last = *gauss.last().unwrap();
            gauss.push(g.pyr_down(last));
        }
        let low = gauss[DEPTH];
        let h = self.stem.forward(g, store, x);
        let mut h = g.leaky_relu(h, 0.2);
        let mut skips = vec![h];
        for (i, b) in self.down.iter().enumerate() {
            let d = b.down.forward(g, store, h);
            let d = g.leaky_relu(d, 0.2);
            let r = b.res.forward(g, store, d);
            let r = g.leaky_relu(r, 0.2);
            h = g.add(d, r);
            if i + 1 < DEPTH {
                skips.push(h);
            }
        }
        let mut acc = low;
        let mut bands = Vec::with_capacity(DEPTH);
        for (i, b) in self.up.iter().enumerate() {
            let lvl = DEPTH - 1 - i;
            let skip = skips.pop().unwrap();
            let (sh, sw) = (g.shape(skip)[2], g.shape(skip)[3]);
            let u = g.upsample_nearest2(h);
            let u = g.concat(&[u, skip]);
            let f = b.fuse.forward(g, store, u);
            let f = g.leaky_relu(f, 0.2);
            let r = b.res.forward(g, store, f);
            let r = g.leaky_relu(r, 0.2);
            h = g.add(f, r);
            let up_in = g.pyr_up(gauss[lvl + 1], sh, sw);
            let in_band = g.sub(gauss[lvl], up_in);
            let e = g.concat(&[h, in_band]);
            let band = b.emit.forward(g, store, e);
            let up = g.pyr_up(acc, sh, sw);
            acc = g.add(up, band);
            bands.push(band);
        }
        bands.reverse();
        (bands, low, acc)
    }
}

/// Emits the input band unchanged until trained.
fn passthrough<F: Float>(emit: Conv2d, offset: usize, store: &mut ParamStore<F>) -> Conv2d {
    let w = store.get_mut(emit.weight).data_mut();
    let cin = offset + 3;
    for o in 0..3 {
        w[o * cin + offset + o] = F::one();
    }
    emit
}

/// Adapter weights plus their config.
pub struct Adapter {
    pub cfg: AdapterConfig,
    pub store: ParamStore<f32>,
    net: AdapterNet,
}

fn check_dims(h: usize, w: usize) -> Result<()> {
    let f = 1 << DEPTH;
    if h == 0 || w == 0 || !h.is_multiple_of(f) || !w.is_multiple_of(f) {
        return Err(Error::Shape(format!(
            "adapter input {h}×{w} must be a non-empty multiple of {f}"
        )));
    }
    Ok(())
}

impl Adapter {
    pub fn new(cfg: AdapterConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = AdapterNet::new(&cfg, &mut store)?;
        Ok(Self { cfg, store, net })
    }

    /// Band levels (fine to coarse), low-pass and unclamped output graph nodes.
    pub fn forward_graph<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
    ) -> (Vec<Var>, Var, Var) {
        self.net.forward(g, store, x)
    }

    /// Re-synthesized patch clamped to `[0, 1]`.
    pub fn adapt(&self, patch: &Image) -> Result<Image> {
        Ok(self.adapt_batch(&[patch])?.pop().unwrap())
    }

    pub fn adapt_batch(&self, patches: &[&Image]) -> Result<Vec<Image>> {
        let Some(first) = patches.first() else {
            return Ok(Vec::new());
        };
        let (h, w) = first.dims();
        check_dims(h, w)?;
        if patches.iter().any(|p| p.dims() != (h, w)) {
            return Err(Error::Shape("adapter batch mixes patch sizes".into()));
        }
        let mut g = Graph::<f32>::new();
        let x = g.input(Image::batch(patches));
        let (_, _, out) = self.net.forward(&mut g, &self.store, x);
        let v = g.value(out);
        Ok((0..patches.len())
            .map(|i| {
                let mut im = Image::from_batch(v, i);
                im.clamp01();
                im
            })
            .collect())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_stage(P2S_STAGE)?;
        let cfg: P2STrainConfig = ck.config()?;
        let mut a = Self::new(cfg.adapter)?;
        a.store.load_named(&ck.tensors_with_prefix("a"))?;
        Ok(a)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct P2STrainConfig {
    pub adapter: AdapterConfig,
    pub patch: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub augment: bool,
    pub blur_sigma: (f64, f64),
    pub sharpen_amount: (f64, f64),
    /// Patches with a larger protected fraction are rejected.
    pub max_masked: f64,
    /// Protected region grows by this many pixels around every instance mask.
    pub dilate: usize,
    pub seed: u64,
}

impl Default for P2STrainConfig {
    fn default() -> Self {
        Self {
            adapter: AdapterConfig::default(),
            patch: 64,
            steps: 300,
            batch: 8,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            augment: true,
            blur_sigma: (0.5, 2.0),
            sharpen_amount: (0.3, 1.5),
            max_masked: 0.6,
            dilate: 2,
            seed: 0,
        }
    }
}

/// Unsharp masking with a unit-sigma blur.
pub fn sharpen(img: &Image, amount: f32) -> Image {
    let b = img.gaussian_blur(1.0);
    let mut out = img.clone();
    for (o, &bv) in out.data_mut().iter_mut().zip(b.data()) {
        *o += amount * (*o - bv);
    }
    out.clamp01();
    out
}

/// Random blur or sharpening of a clean patch.
pub fn augment<R: Rng>(img: &Image, cfg: &P2STrainConfig, rng: &mut R) -> Image {
    if rng.random_bool(0.5) {
        img.gaussian_blur(rng.random_range(cfg.blur_sigma.0..=cfg.blur_sigma.1) as f32)
    } else {
        sharpen(
            img,
            rng.random_range(cfg.sharpen_amount.0..=cfg.sharpen_amount.1) as f32,
        )
    }
}

/// Draws a pedestrian-free patch: protected pixels are median-filled without being read.
pub fn sample_patch<R: Rng>(
    ds: &SceneDataset,
    protected: &[Vec<Mask>],
    cfg: &P2STrainConfig,
    rng: &mut R,
    audit: &mut AccessAudit,
) -> Result<Image> {
    let frames: Vec<(usize, usize)> = ds
        .sequences
        .iter()
        .enumerate()
        .flat_map(|(s, q)| (0..q.frames.len()).map(move |f| (s, f)))
        .filter(|&(s, f)| {
            let (h, w) = ds.sequences[s].frames[f].dims();
            h >= cfg.patch && w >= cfg.patch
        })
        .collect();
    if frames.is_empty() {
        return Err(Error::Data(format!(
            "no frame fits a {0}×{0} patch",
            cfg.patch
        )));
    }
    for _ in 0..1000 {
        let (s, f) = frames[rng.random_range(0..frames.len())];
        let img = &ds.sequences[s].frames[f];
        let (h, w) = img.dims();
        let y0 = rng.random_range(0..=h - cfg.patch);
        let x0 = rng.random_range(0..=w - cfg.patch);
        let src = AuditedFrame::new(img, &protected[s][f]);
        let p = src.filled_patch(y0, x0, cfg.patch, cfg.patch, cfg.max_masked);
        audit.merge(src.audit());
        if let Some(p) = p {
            return Ok(p);
        }
    }
    Err(Error::Data(
        "no pedestrian-free pixels available for adapter patches".into(),
    ))
}

/// Per-frame protected masks: instance union grown by `dilate` pixels.
pub fn protected_masks(ds: &SceneDataset, dilate: usize) -> Vec<Vec<Mask>> {
    ds.sequences
        .iter()
        .map(|seq| {
            (1..=seq.frames.len() as u32)
                .map(|k| frame_union_mask(seq, k).dilate(dilate))
                .collect()
        })
        .collect()
}

pub struct P2STrained {
    pub adapter: Adapter,
    pub history: BTreeMap<String, Vec<f64>>,
    pub audit: AccessAudit,
    pub config: P2STrainConfig,
}

impl P2STrained {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(P2S_STAGE, &self.config, &ParamStore::new())?;
        ck.add_tensors("a", &self.adapter.store);
        ck.history = self.history.clone();
        Ok(ck)
    }
}

/// Augmented reconstruction on pedestrian-free patches.
pub fn train_person2scene(ds: &SceneDataset, cfg: &P2STrainConfig) -> Result<P2STrained> {
    check_dims(cfg.patch, cfg.patch)?;
    let mut adapter = Adapter::new(cfg.adapter.clone())?;
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: 1e-8,
        },
        &adapter.store,
    );
    let feat = RandomConvFeatures::<f32>::new(RandomConvFeatures::<f32>::DEFAULT_SEED);
    let protected = protected_masks(ds, cfg.dilate);
    let mut rng = rng_for(cfg.seed, "person2scene/train");
    let mut audit = AccessAudit::default();
    let mut history: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    if cfg.steps > 0 {
        // Fail early on datasets without usable background.
        sample_patch(
            ds,
            &protected,
            cfg,
            &mut rng_for(cfg.seed, "person2scene/probe"),
            &mut audit,
        )?;
    }
    for step in 0..cfg.steps {
        let mut clean = Vec::with_capacity(cfg.batch);
        let mut inputs = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let p = sample_patch(ds, &protected, cfg, &mut rng, &mut audit)?;
            inputs.push(if cfg.augment {
                augment(&p, cfg, &mut rng)
            } else {
                p.clone()
            });
            clean.push(p);
        }
        let mut g = Graph::<f32>::new();
        let x = g.input(Image::batch(&inputs.iter().collect::<Vec<_>>()));
        let t = g.input(Image::batch(&clean.iter().collect::<Vec<_>>()));
        let (_, _, out) = adapter.net.forward(&mut g, &adapter.store, x);
        let loss = adapter_objective_graph(&mut g, out, t, &feat);
        let lv = g.value(loss).item() as f64;
        if !lv.is_finite() {
            return Err(Error::Numeric(format!(
                "adapter loss diverged at step {step}"
            )));
        }
        let grads = g.backward(loss).for_store(&adapter.store);
        opt.step(&mut adapter.store, &grads);
        history.entry("total".into()).or_default().push(lv);
    }
    Ok(P2STrained {
        adapter,
        history,
        audit,
        config: cfg.clone(),
    })
}

pub fn load_p2s(ck: &Checkpoint) -> Result<P2STrained> {
    Ok(P2STrained {
        adapter: Adapter::from_checkpoint(ck)?,
        history: ck.history.clone(),
        audit: AccessAudit::default(),
        config: ck.config()?,
    })
}

/// Low-pass band the adapter keeps from its input.
pub fn input_low_pass(patch: &Image) -> Result<Tensor<f32>> {
    let (h, w) = patch.dims();
    check_dims(h, w)?;
    let mut g = Graph::<f32>::new();
    let mut x = g.input(patch.to_tensor());
    for _ in 0..DEPTH {
        x = g.pyr_down(x);
    }
    Ok(g.value(x).clone())
}
