//! Stage one: identity-conditioned person synthesis from a mask and a joints map.

use std::collections::BTreeMap;

use incogni_nn::layers::{Conv2d, Linear};
use incogni_nn::{Adam, AdamConfig, Float, Graph, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::losses::{
    generator_objective_graph, l1_graph, lsgan_d_graph, lsgan_g_graph, RandomConvFeatures,
};
use crate::privacy::{AccessAudit, AuditedFrame};
use crate::rng::rng_for;
use crate::scene::{
    render_joints_map, AppearanceCode, BoundingBox, CropTransform, Domain, SceneDataset, Sequence,
};

/// The synthetic identities the generator may render.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCatalog {
    pub codes: Vec<AppearanceCode>,
}

impl IdentityCatalog {
    pub fn new(codes: Vec<AppearanceCode>) -> Result<Self> {
        if codes.len() < 2 {
            return Err(Error::Config(format!(
                "identity catalog needs M ≥ 2, got {}",
                codes.len()
            )));
        }
        Ok(Self { codes })
    }

    /// Catalog of a synthetic dataset. Real-world data is refused.
    pub fn from_dataset(ds: &SceneDataset) -> Result<Self> {
        if ds.domain != Domain::Synthetic {
            return Err(Error::Data(
                "generator identities must come from a synthetic dataset".into(),
            ));
        }
        Self::new(ds.catalog.clone())
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub height: usize,
    pub width: usize,
    pub num_identities: usize,
    pub seed_channels: usize,
    /// Output width of each upsampling block; its length is the block count.
    pub channels: Vec<usize>,
    pub spade_hidden: usize,
    /// Size of the learned identity code fed to every modulation layer.
    pub id_embed: usize,
    /// When false the joints channel is left empty (mask-only conditioning).
    pub use_joints: bool,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 32,
            num_identities: 8,
            seed_channels: 32,
            channels: vec![32, 32, 16, 16, 8],
            spade_hidden: 16,
            id_embed: 8,
            use_joints: true,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    fn seed_hw(&self) -> Result<(usize, usize)> {
        let f = 1usize << self.channels.len();
        if self.channels.is_empty()
            || !self.height.is_multiple_of(f)
            || !self.width.is_multiple_of(f)
        {
            return Err(Error::Config(format!(
                "generator size {}×{} must be divisible by 2^{}",
                self.height,
                self.width,
                self.channels.len()
            )));
        }
        Ok((self.height / f, self.width / f))
    }
}

/// Conditioning for one synthesized person, all on the generator grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorInput {
    pub mask: Mask,
    pub joints: Vec<f32>,
    pub identity: usize,
    /// Crop with every protected pixel zeroed; shown wherever the mask is 0.
    pub background: Image,
}

/// Batched network inputs.
#[derive(Clone, Debug)]
pub struct GenTensors<F> {
    pub onehot: Tensor<F>,
    /// Mask and joints channels.
    pub pose: Tensor<F>,
    pub mask3: Tensor<F>,
    /// `background ⊙ (1 − mask)`.
    pub bg_keep: Tensor<F>,
    pub joints: Tensor<F>,
}

fn cast<F: Float>(t: &Tensor<f32>) -> Tensor<F> {
    Tensor::new(
        t.shape(),
        t.data().iter().map(|&v| F::c(v as f64)).collect(),
    )
}

impl GenTensors<f32> {
    pub fn cast<F: Float>(&self) -> GenTensors<F> {
        GenTensors {
            onehot: cast(&self.onehot),
            pose: cast(&self.pose),
            mask3: cast(&self.mask3),
            bg_keep: cast(&self.bg_keep),
            joints: cast(&self.joints),
        }
    }
}

#[derive(Clone, Debug)]
struct SpadeBlock {
    shared: Conv2d,
    gamma: Conv2d,
    beta: Conv2d,
    conv: Conv2d,
    skip: Conv2d,
}

#[derive(Clone, Debug)]
struct GenNet {
    seed: Linear,
    id_embed: Linear,
    blocks: Vec<SpadeBlock>,
    out: Conv2d,
    seed_c: usize,
    seed_hw: (usize, usize),
}

impl GenNet {
    fn new<F: Float>(cfg: &GeneratorConfig, store: &mut ParamStore<F>) -> Result<Self> {
        let seed_hw = cfg.seed_hw()?;
        let mut rng = rng_for(cfg.seed, "pose2person/generator");
        let m = cfg.num_identities;
        let seed = Linear::new(
            store,
            "seed",
            m,
            cfg.seed_channels * seed_hw.0 * seed_hw.1,
            &mut rng,
        );
        let id_embed = Linear::new(store, "id_embed", m, cfg.id_embed, &mut rng);
        let cond = 2 + cfg.id_embed;
        let mut cin = cfg.seed_channels;
        let mut blocks = Vec::new();
        for (i, &c) in cfg.channels.iter().enumerate() {
            let p = format!("block{i}");
            blocks.push(SpadeBlock {
                shared: Conv2d::same3(
                    store,
                    &format!("{p}.shared"),
                    cond,
                    cfg.spade_hidden,
                    &mut rng,
                ),
                gamma: Conv2d::same3(
                    store,
                    &format!("{p}.gamma"),
                    cfg.spade_hidden,
                    cin,
                    &mut rng,
                ),
                beta: Conv2d::same3(store, &format!("{p}.beta"), cfg.spade_hidden, cin, &mut rng),
                conv: Conv2d::same3(store, &format!("{p}.conv"), cin, c, &mut rng),
                skip: Conv2d::new(store, &format!("{p}.skip"), cin, c, 1, 1, 0, &mut rng),
            });
            cin = c;
        }
        let out = Conv2d::same3(store, "out", cin, 3, &mut rng);
        Ok(Self {
            seed,
            id_embed,
            blocks,
            out,
            seed_c: cfg.seed_channels,
            seed_hw,
        })
    }

    /// Returns `(raw synthesis, composite)`.
    fn forward<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        t: &GenTensors<F>,
    ) -> (Var, Var) {
        let b = t.onehot.shape()[0];
        let onehot = g.input(t.onehot.clone());
        let pose = g.input(t.pose.clone());
        // Pose pyramid, finest first.
        let mut poses = vec![pose];
        for _ in 1..self.blocks.len() {
            let last = *poses.last().unwrap();
            poses.push(g.avg_pool2(last));
        }
        let code = self.id_embed.forward(g, store, onehot);
        let s = self.seed.forward(g, store, onehot);
        let mut h = g.reshape(s, &[b, self.seed_c, self.seed_hw.0, self.seed_hw.1]);
        let n = self.blocks.len();
        for (i, blk) in self.blocks.iter().enumerate() {
            h = g.upsample_nearest2(h);
            let p = poses[n - 1 - i];
            let (ph, pw) = (g.shape(p)[2], g.shape(p)[3]);
            let planes = g.broadcast_hw(code, ph, pw);
            let cond = g.concat(&[p, planes]);
            let norm = g.instance_norm(h, 1e-5);
            let sh = blk.shared.forward(g, store, cond);
            let sh = g.relu(sh);
            let gam = blk.gamma.forward(g, store, sh);
            let gam = g.add_scalar(gam, F::one());
            let bet = blk.beta.forward(g, store, sh);
            let y = g.mul(norm, gam);
            let y = g.add(y, bet);
            let y = g.leaky_relu(y, 0.2);
            let y = blk.conv.forward(g, store, y);
            let skip = blk.skip.forward(g, store, h);
            h = g.add(y, skip);
        }
        let h = g.leaky_relu(h, 0.2);
        let o = self.out.forward(g, store, h);
        let o = g.tanh(o);
        let o = g.add_scalar(o, F::one());
        let raw = g.scale(o, F::c(0.5));
        let m3 = g.input(t.mask3.clone());
        let keep = g.input(t.bg_keep.clone());
        let inside = g.mul(raw, m3);
        (raw, g.add(inside, keep))
    }
}

#[derive(Clone, Debug)]
struct DiscNet {
    convs: Vec<Conv2d>,
    score: Conv2d,
}

impl DiscNet {
    fn new<F: Float>(channels: &[usize], seed: u64, store: &mut ParamStore<F>) -> Self {
        let mut rng = rng_for(seed, "pose2person/discriminator");
        let mut cin = 4;
        let mut convs = Vec::new();
        for (i, &c) in channels.iter().enumerate() {
            convs.push(Conv2d::new(
                store,
                &format!("conv{i}"),
                cin,
                c,
                4,
                2,
                1,
                &mut rng,
            ));
            cin = c;
        }
        let score = Conv2d::new(store, "score", cin, 1, 1, 1, 0, &mut rng);
        Self { convs, score }
    }

    fn forward<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        image: Var,
        joints: Var,
    ) -> Var {
        let mut h = g.concat(&[image, joints]);
        for c in &self.convs {
            h = c.forward(g, store, h);
            h = g.leaky_relu(h, 0.2);
        }
        self.score.forward(g, store, h)
    }
}

/// Generator weights plus their config.
pub struct Generator {
    pub cfg: GeneratorConfig,
    pub store: ParamStore<f32>,
    net: GenNet,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        if cfg.num_identities < 2 {
            return Err(Error::Config(
                "generator needs at least two identities".into(),
            ));
        }
        let mut store = ParamStore::new();
        let net = GenNet::new(&cfg, &mut store)?;
        Ok(Self { cfg, store, net })
    }

    /// Packs inputs into network tensors after validating them.
    pub fn tensors(&self, inputs: &[&GeneratorInput]) -> Result<GenTensors<f32>> {
        let (h, w) = (self.cfg.height, self.cfg.width);
        let m = self.cfg.num_identities;
        let b = inputs.len();
        let hw = h * w;
        let mut onehot = vec![0.0f32; b * m];
        let mut pose = vec![0.0f32; b * 2 * hw];
        let mut mask3 = vec![0.0f32; b * 3 * hw];
        let mut keep = vec![0.0f32; b * 3 * hw];
        let mut joints = vec![0.0f32; b * hw];
        for (i, inp) in inputs.iter().enumerate() {
            if inp.identity >= m {
                return Err(Error::Range(format!(
                    "identity {} outside 0..{m}",
                    inp.identity
                )));
            }
            if inp.mask.dims() != (h, w)
                || inp.background.dims() != (h, w)
                || inp.joints.len() != hw
            {
                return Err(Error::Shape(format!("generator inputs must be {h}×{w}")));
            }
            onehot[i * m + inp.identity] = 1.0;
            let mf = inp.mask.to_f32();
            pose[i * 2 * hw..i * 2 * hw + hw].copy_from_slice(&mf);
            if self.cfg.use_joints {
                pose[i * 2 * hw + hw..(i + 1) * 2 * hw].copy_from_slice(&inp.joints);
                joints[i * hw..(i + 1) * hw].copy_from_slice(&inp.joints);
            }
            for c in 0..3 {
                let off = (i * 3 + c) * hw;
                mask3[off..off + hw].copy_from_slice(&mf);
                for (j, (&bg, &mv)) in inp.background.plane(c).iter().zip(&mf).enumerate() {
                    keep[off + j] = if mv > 0.0 { 0.0 } else { bg };
                }
            }
        }
        Ok(GenTensors {
            onehot: Tensor::new(&[b, m], onehot),
            pose: Tensor::new(&[b, 2, h, w], pose),
            mask3: Tensor::new(&[b, 3, h, w], mask3),
            bg_keep: Tensor::new(&[b, 3, h, w], keep),
            joints: Tensor::new(&[b, 1, h, w], joints),
        })
    }

    /// Raw synthesis and composite graph nodes for any element type.
    pub fn forward_graph<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        t: &GenTensors<F>,
    ) -> (Var, Var) {
        self.net.forward(g, store, t)
    }

    /// Composited person: synthesis inside the mask, background elsewhere.
    pub fn generate(&self, input: &GeneratorInput) -> Result<Image> {
        Ok(self.generate_batch(&[input])?.pop().unwrap())
    }

    pub fn generate_batch(&self, inputs: &[&GeneratorInput]) -> Result<Vec<Image>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let t = self.tensors(inputs)?;
        let mut g = Graph::<f32>::new();
        let (_, out) = self.net.forward(&mut g, &self.store, &t);
        let v = g.value(out);
        Ok((0..inputs.len()).map(|i| Image::from_batch(v, i)).collect())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_stage(P2P_STAGE)?;
        let cfg: P2PTrainConfig = ck.config()?;
        let mut g = Self::new(cfg.generator)?;
        g.store.load_named(&ck.tensors_with_prefix("g"))?;
        Ok(g)
    }
}

pub struct Discriminator {
    pub channels: Vec<usize>,
    pub store: ParamStore<f32>,
    net: DiscNet,
}

impl Discriminator {
    pub fn new(channels: &[usize], seed: u64) -> Self {
        let mut store = ParamStore::new();
        let net = DiscNet::new(channels, seed, &mut store);
        Self {
            channels: channels.to_vec(),
            store,
            net,
        }
    }

    /// Score map for an image batch conditioned on its joints maps.
    pub fn forward_graph<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        image: Var,
        joints: Var,
    ) -> Var {
        self.net.forward(g, store, image, joints)
    }
}

pub const P2P_STAGE: &str = "pose2person";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct P2PTrainConfig {
    pub generator: GeneratorConfig,
    pub disc_channels: Vec<usize>,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Context around the box, as a fraction of its size.
    pub margin: f64,
    /// Random scale and shift of the crop box, as a fraction of its size.
    pub jitter: f64,
    pub perceptual: bool,
    pub min_visibility: f64,
    pub seed: u64,
}

impl Default for P2PTrainConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            disc_channels: vec![16, 32, 64, 64],
            steps: 400,
            batch: 8,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            margin: 0.1,
            jitter: 0.1,
            perceptual: true,
            min_visibility: 0.999,
            seed: 0,
        }
    }
}

/// Union of all instance masks of one frame.
pub fn frame_union_mask(seq: &Sequence, frame: u32) -> Mask {
    let (h, w) = seq.frame(frame).dims();
    let mut u = Mask::new(h, w);
    for a in seq.annotations_in(frame) {
        if let Some(m) = &a.mask {
            u.union_with(m);
        }
    }
    u
}

/// Generator conditioning for one instance, built without reading protected pixels.
pub fn conditioning(
    source: &AuditedFrame,
    bbox: &BoundingBox,
    mask: &Mask,
    keypoints: Option<&crate::scene::KeypointSet>,
    identity: usize,
    margin: f64,
    cfg: &GeneratorConfig,
) -> Result<(GeneratorInput, CropTransform)> {
    let (fh, fw) = source.dims();
    let t = CropTransform::for_box(bbox, margin, fh, fw, cfg.height, cfg.width)?;
    let crop_mask = t.extract_mask(mask);
    let joints = match keypoints {
        Some(k) => render_joints_map(&t.map_keypoints(k), cfg.height, cfg.width),
        None => vec![0.0; cfg.height * cfg.width],
    };
    let background = source.background_crop(&t, &crop_mask);
    Ok((
        GeneratorInput {
            mask: crop_mask,
            joints,
            identity,
            background,
        },
        t,
    ))
}

pub struct P2PTrained {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub history: BTreeMap<String, Vec<f64>>,
    pub audit: AccessAudit,
    pub config: P2PTrainConfig,
}

impl P2PTrained {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(P2P_STAGE, &self.config, &ParamStore::new())?;
        ck.add_tensors("g", &self.generator.store);
        ck.add_tensors("d", &self.discriminator.store);
        ck.history = self.history.clone();
        Ok(ck)
    }
}

struct TrainItem {
    seq: usize,
    ann: usize,
    identity: usize,
}

fn training_items(ds: &SceneDataset, cfg: &P2PTrainConfig, m: usize) -> Result<Vec<TrainItem>> {
    let mut items = Vec::new();
    for (si, seq) in ds.sequences.iter().enumerate() {
        for (ai, a) in seq.annotations.iter().enumerate() {
            if a.visibility < cfg.min_visibility {
                continue;
            }
            if a.mask.is_none() || (cfg.generator.use_joints && a.keypoints.is_none()) {
                return Err(Error::Data(format!(
                    "{}: frame {} track {} lacks mask or keypoints",
                    seq.name, a.frame, a.track_id
                )));
            }
            let identity = *seq.identities.get(&a.track_id).ok_or_else(|| {
                Error::Data(format!(
                    "{}: track {} has no catalog identity",
                    seq.name, a.track_id
                ))
            })?;
            if identity >= m {
                return Err(Error::Range(format!(
                    "identity {identity} outside the catalog of {m}"
                )));
            }
            items.push(TrainItem {
                seq: si,
                ann: ai,
                identity,
            });
        }
    }
    if items.is_empty() {
        return Err(Error::Data("no fully visible training instances".into()));
    }
    Ok(items)
}

fn jittered<R: Rng>(b: &BoundingBox, jitter: f64, rng: &mut R) -> BoundingBox {
    if jitter <= 0.0 {
        return *b;
    }
    let s = 1.0 + rng.random_range(-jitter..jitter);
    let dx = rng.random_range(-jitter..jitter) * 0.5 * b.width;
    let dy = rng.random_range(-jitter..jitter) * 0.5 * b.height;
    let (cx, cy) = b.center();
    let (w, h) = (b.width * s, b.height * s);
    BoundingBox::new(cx + dx - w / 2.0, cy + dy - h / 2.0, w, h)
}

/// Adversarial training on synthetic identities rendered in their own poses.
pub fn train_pose2person(
    ds: &SceneDataset,
    catalog: &IdentityCatalog,
    cfg: &P2PTrainConfig,
) -> Result<P2PTrained> {
    if ds.domain != Domain::Synthetic {
        return Err(Error::Data(
            "pose-to-person training only accepts synthetic identities".into(),
        ));
    }
    let mut gcfg = cfg.generator.clone();
    gcfg.num_identities = catalog.len();
    let mut cfg = cfg.clone();
    cfg.generator = gcfg.clone();
    let mut generator = Generator::new(gcfg.clone())?;
    let mut disc = Discriminator::new(&cfg.disc_channels, gcfg.seed);
    let items = training_items(ds, &cfg, catalog.len())?;
    let adam = AdamConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: 1e-8,
    };
    let mut opt_g = Adam::new(adam, &generator.store);
    let mut opt_d = Adam::new(adam, &disc.store);
    let feat = RandomConvFeatures::<f32>::new(RandomConvFeatures::<f32>::DEFAULT_SEED);
    let mut rng = rng_for(cfg.seed, "pose2person/train");
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut cursor = order.len();
    let mut history: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut audit = AccessAudit::default();
    for step in 0..cfg.steps {
        let mut inputs = Vec::with_capacity(cfg.batch);
        let mut targets = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let it = &items[order[cursor]];
            cursor += 1;
            let seq = &ds.sequences[it.seq];
            let a = &seq.annotations[it.ann];
            let frame = seq.frame(a.frame);
            let protected = frame_union_mask(seq, a.frame);
            let src = AuditedFrame::new(frame, &protected);
            let b = jittered(&a.bbox, cfg.jitter, &mut rng);
            let (inp, t) = conditioning(
                &src,
                &b,
                a.mask.as_ref().unwrap(),
                a.keypoints.as_ref(),
                it.identity,
                cfg.margin,
                &gcfg,
            )?;
            audit.merge(src.audit());
            targets.push(t.extract(frame));
            inputs.push(inp);
        }
        let refs: Vec<&GeneratorInput> = inputs.iter().collect();
        let gt = generator.tensors(&refs)?;
        let trefs: Vec<&Image> = targets.iter().collect();
        let target = Image::batch(&trefs);

        // Generator step against a frozen discriminator.
        let mut g = Graph::<f32>::new();
        let (_, fake) = generator.net.forward(&mut g, &generator.store, &gt);
        let tv = g.input(target.clone());
        let jv = g.input(gt.joints.clone());
        let d_fake = g.with_frozen_params(|g| disc.net.forward(g, &disc.store, fake, jv));
        let l1 = l1_graph(&mut g, fake, tv);
        let adv = lsgan_g_graph(&mut g, d_fake);
        let total = generator_objective_graph(
            &mut g,
            fake,
            tv,
            d_fake,
            if cfg.perceptual { Some(&feat) } else { None },
        );
        let (lt, l1v, advv) = (
            g.value(total).item() as f64,
            g.value(l1).item() as f64,
            g.value(adv).item() as f64,
        );
        if !lt.is_finite() {
            return Err(Error::Numeric(format!(
                "generator loss diverged at step {step}"
            )));
        }
        let grads = g.backward(total).for_store(&generator.store);
        opt_g.step(&mut generator.store, &grads);
        let fake_val = g.value(fake).clone();

        // Discriminator step on real and detached fake images.
        let mut gd = Graph::<f32>::new();
        let real = gd.input(target);
        let fk = gd.input(fake_val);
        let jv = gd.input(gt.joints.clone());
        let dr = disc.net.forward(&mut gd, &disc.store, real, jv);
        let df = disc.net.forward(&mut gd, &disc.store, fk, jv);
        let dl = lsgan_d_graph(&mut gd, dr, df);
        let dlv = gd.value(dl).item() as f64;
        let grads = gd.backward(dl).for_store(&disc.store);
        opt_d.step(&mut disc.store, &grads);

        for (k, v) in [("g_total", lt), ("l1", l1v), ("g_adv", advv), ("d", dlv)] {
            history.entry(k.to_string()).or_default().push(v);
        }
    }
    Ok(P2PTrained {
        generator,
        discriminator: disc,
        history,
        audit,
        config: cfg,
    })
}

/// Checkpoint loader that also restores the discriminator.
pub fn load_p2p(ck: &Checkpoint) -> Result<P2PTrained> {
    let generator = Generator::from_checkpoint(ck)?;
    let config: P2PTrainConfig = ck.config()?;
    let mut discriminator = Discriminator::new(&config.disc_channels, config.generator.seed);
    discriminator
        .store
        .load_named(&ck.tensors_with_prefix("d"))?;
    Ok(P2PTrained {
        generator,
        discriminator,
        history: ck.history.clone(),
        audit: AccessAudit::default(),
        config,
    })
}
