//! Re-identification metrics: embedding network, query-gallery protocol, CMC and deID score.

use std::collections::BTreeMap;

use incogni_nn::layers::{Conv2d, Linear};
use incogni_nn::{Adam, AdamConfig, Float, Graph, ParamStore, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::rng_for;
use crate::scene::{CropTransform, InstanceAnnotation, SceneDataset, Sequence};

pub const MIN_TRACK_SAMPLES: usize = 10;
pub const MIN_BOX_HEIGHT: f64 = 50.0;
pub const MIN_BOX_WIDTH: f64 = 25.0;

/// Distance between embeddings used for ranking.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

impl Metric {
    pub fn distance(self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
                .sum::<f64>()
                .sqrt(),
            Metric::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
                let na = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }
}

/// One embedded sample and the identity it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct Labeled {
    pub embedding: Vec<f32>,
    pub id: u32,
}

impl Labeled {
    pub fn new(embedding: Vec<f32>, id: u32) -> Self {
        Self { embedding, id }
    }
}

/// Gallery indices ordered by distance to `q`, ties by index.
pub fn rank_gallery(q: &[f32], gallery: &[Labeled], metric: Metric) -> Vec<usize> {
    let d: Vec<f64> = gallery
        .iter()
        .map(|g| metric.distance(q, &g.embedding))
        .collect();
    let mut idx: Vec<usize> = (0..gallery.len()).collect();
    idx.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    idx
}

fn top_k_hits(queries: &[Labeled], gallery: &[Labeled], k: usize, metric: Metric) -> Result<usize> {
    if queries.is_empty() || gallery.is_empty() {
        return Err(Error::Usage(
            "query and gallery sets must be non-empty".into(),
        ));
    }
    if k == 0 {
        return Err(Error::Usage("rank k must be at least 1".into()));
    }
    Ok(queries
        .iter()
        .filter(|q| {
            rank_gallery(&q.embedding, gallery, metric)
                .iter()
                .take(k)
                .any(|&i| gallery[i].id == q.id)
        })
        .count())
}

/// Rank-k CMC: fraction of queries with a same-identity gallery sample among the k nearest.
pub fn cmc(queries: &[Labeled], gallery: &[Labeled], k: usize, metric: Metric) -> Result<f64> {
    let hits = top_k_hits(queries, gallery, k, metric)?;
    Ok(hits as f64 / queries.len() as f64)
}

/// Fraction of de-identified queries whose k nearest gallery samples contain
/// no sample of their original identity.
pub fn deid_score(
    deid_queries: &[Labeled],
    original_gallery: &[Labeled],
    k: usize,
    metric: Metric,
) -> Result<f64> {
    let hits = top_k_hits(deid_queries, original_gallery, k, metric)?;
    Ok((deid_queries.len() - hits) as f64 / deid_queries.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleRef {
    pub frame: u32,
    pub track_id: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSplit {
    pub sequence: usize,
    pub name: String,
    pub gallery: Vec<SampleRef>,
    pub queries: Vec<SampleRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryGallerySplit {
    pub n_query: usize,
    pub seed: u64,
    pub sequences: Vec<SequenceSplit>,
}

fn eligible(a: &InstanceAnnotation) -> bool {
    a.visibility > 0.0
        && a.mask.is_some()
        && a.bbox.height >= MIN_BOX_HEIGHT
        && a.bbox.width >= MIN_BOX_WIDTH
}

/// One gallery and `n_query` query samples per identity, chosen per sequence.
pub fn build_query_gallery(
    ds: &SceneDataset,
    n_query: usize,
    seed: u64,
) -> Result<QueryGallerySplit> {
    if n_query == 0 {
        return Err(Error::Usage("n_query must be at least 1".into()));
    }
    let mut sequences = Vec::new();
    for (si, seq) in ds.sequences.iter().enumerate() {
        let mut by_track: BTreeMap<u32, Vec<SampleRef>> = BTreeMap::new();
        for a in seq.annotations.iter().filter(|a| a.visibility > 0.0) {
            by_track.entry(a.track_id).or_default();
            if eligible(a) {
                by_track.get_mut(&a.track_id).unwrap().push(SampleRef {
                    frame: a.frame,
                    track_id: a.track_id,
                });
            }
        }
        let (mut gallery, mut queries) = (Vec::new(), Vec::new());
        for (tid, mut samples) in by_track {
            if samples.len() < MIN_TRACK_SAMPLES.max(n_query + 1) {
                log::warn!(
                    "{}: track {tid} has {} eligible samples, skipped",
                    seq.name,
                    samples.len()
                );
                continue;
            }
            samples.shuffle(&mut rng_for(seed, &format!("query-gallery/{si}/{tid}")));
            gallery.push(samples[0]);
            let mut q = samples[1..=n_query].to_vec();
            q.sort();
            queries.extend(q);
        }
        if !gallery.is_empty() {
            sequences.push(SequenceSplit {
                sequence: si,
                name: seq.name.clone(),
                gallery,
                queries,
            });
        }
    }
    Ok(QueryGallerySplit {
        n_query,
        seed,
        sequences,
    })
}

/// Box region resampled to `h × w` with everything outside the instance mask zeroed.
pub fn person_crop(frame: &Image, ann: &InstanceAnnotation, h: usize, w: usize) -> Result<Image> {
    let mask = ann.mask.as_ref().ok_or_else(|| {
        Error::Data(format!(
            "frame {} track {}: no instance mask",
            ann.frame, ann.track_id
        ))
    })?;
    let t = CropTransform::for_box(&ann.bbox, 0.0, frame.height(), frame.width(), h, w)?;
    let mut img = t.extract(frame);
    let m = t.extract_mask(mask);
    for y in 0..h {
        for x in 0..w {
            if !m.get(y, x) {
                img.set_pixel(y, x, [0.0; 3]);
            }
        }
    }
    Ok(img)
}

fn annotation<'a>(seq: &'a Sequence, r: &SampleRef) -> Result<&'a InstanceAnnotation> {
    seq.annotations
        .iter()
        .find(|a| a.frame == r.frame && a.track_id == r.track_id)
        .ok_or_else(|| {
            Error::Data(format!(
                "{}: no annotation for frame {} track {}",
                seq.name, r.frame, r.track_id
            ))
        })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub crop_h: usize,
    pub crop_w: usize,
    pub channels: [usize; 4],
    pub dim: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Learning rate is multiplied by 0.1 after this fraction of the steps.
    pub decay_at: f64,
    /// Random flips, brightness jitter, grayscale and blur.
    pub augment: bool,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            crop_h: 64,
            crop_w: 32,
            channels: [16, 32, 48, 64],
            dim: 128,
            steps: 600,
            batch: 32,
            lr: 1e-3,
            decay_at: 0.75,
            augment: true,
            seed: 0,
        }
    }
}

/// Four strided conv blocks, global pooling, a 128-d embedding and a classifier head.
pub struct EmbeddingModel {
    pub cfg: EmbeddingConfig,
    pub num_classes: usize,
    pub store: ParamStore<f32>,
    net: EmbeddingNet,
}

#[derive(Clone, Debug)]
struct EmbeddingNet {
    convs: Vec<(Conv2d, Conv2d)>,
    embed: Linear,
    head: Linear,
}

impl EmbeddingNet {
    fn new<F: Float>(cfg: &EmbeddingConfig, classes: usize, store: &mut ParamStore<F>) -> Self {
        let mut rng = rng_for(cfg.seed, "embedding/init");
        let mut cin = 3;
        let mut convs = Vec::new();
        for (i, &c) in cfg.channels.iter().enumerate() {
            let down = Conv2d::new(store, &format!("block{i}.down"), cin, c, 3, 2, 1, &mut rng);
            let conv = Conv2d::same3(store, &format!("block{i}.conv"), c, c, &mut rng);
            convs.push((down, conv));
            cin = c;
        }
        let embed = Linear::new(store, "embed", cin, cfg.dim, &mut rng);
        let head = Linear::new(store, "head", cfg.dim, classes, &mut rng);
        Self { convs, embed, head }
    }

    fn forward<F: Float>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> (Var, Var) {
        let mut h = g.add_scalar(x, F::c(-0.5));
        for (down, conv) in &self.convs {
            h = down.forward(g, store, h);
            h = g.leaky_relu(h, 0.1);
            let r = conv.forward(g, store, h);
            let r = g.leaky_relu(r, 0.1);
            h = g.add(h, r);
        }
        let pooled = g.global_avg_pool(h);
        let e = self.embed.forward(g, store, pooled);
        let act = g.relu(e);
        let logits = self.head.forward(g, store, act);
        (e, logits)
    }
}

impl EmbeddingModel {
    pub fn new(cfg: EmbeddingConfig, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Data(
                "embedding training needs at least two identities".into(),
            ));
        }
        if !cfg.crop_h.is_multiple_of(16) || !cfg.crop_w.is_multiple_of(16) {
            return Err(Error::Config(
                "embedding crop size must be divisible by 16".into(),
            ));
        }
        let mut store = ParamStore::new();
        let net = EmbeddingNet::new(&cfg, num_classes, &mut store);
        Ok(Self {
            cfg,
            num_classes,
            store,
            net,
        })
    }

    /// Embeddings of a set of crops, `crop_h × crop_w` each.
    pub fn embed(&self, crops: &[Image]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(crops.len());
        for chunk in crops.chunks(64) {
            if let Some(c) = chunk
                .iter()
                .find(|c| c.dims() != (self.cfg.crop_h, self.cfg.crop_w))
            {
                return Err(Error::Shape(format!(
                    "embedding input {:?}, expected {}×{}",
                    c.dims(),
                    self.cfg.crop_h,
                    self.cfg.crop_w
                )));
            }
            let refs: Vec<&Image> = chunk.iter().collect();
            let mut g = Graph::<f32>::new();
            let x = g.input(Image::batch(&refs));
            let (e, _) = self.net.forward(&mut g, &self.store, x);
            let v = g.value(e);
            let d = self.cfg.dim;
            out.extend(v.data().chunks(d).map(<[f32]>::to_vec));
        }
        Ok(out)
    }

    /// Class logits of a set of crops.
    pub fn logits(&self, crops: &[Image]) -> Vec<Vec<f32>> {
        let refs: Vec<&Image> = crops.iter().collect();
        let mut g = Graph::<f32>::new();
        let x = g.input(Image::batch(&refs));
        let (_, l) = self.net.forward(&mut g, &self.store, x);
        g.value(l)
            .data()
            .chunks(self.num_classes)
            .map(<[f32]>::to_vec)
            .collect()
    }

    pub fn to_checkpoint(&self, history: Vec<f64>) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new("embedding", &(&self.cfg, self.num_classes), &self.store)?;
        ck.history.insert("loss".into(), history);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_stage("embedding")?;
        let (cfg, classes): (EmbeddingConfig, usize) = ck.config()?;
        let mut m = Self::new(cfg, classes)?;
        m.store.load_named(&ck.tensors)?;
        Ok(m)
    }
}

/// Training crops labeled by dataset-wide identity, or by `(sequence, track)` when unknown.
pub fn training_crops(
    ds: &SceneDataset,
    h: usize,
    w: usize,
) -> Result<(Vec<Image>, Vec<usize>, usize)> {
    let mut keys: BTreeMap<(usize, u32), usize> = BTreeMap::new();
    let mut raw = Vec::new();
    for (si, seq) in ds.sequences.iter().enumerate() {
        for a in seq
            .annotations
            .iter()
            .filter(|a| a.visibility >= 0.3 && a.mask.is_some())
        {
            let key = match seq.identities.get(&a.track_id) {
                Some(&id) => (usize::MAX, id as u32),
                None => (si, a.track_id),
            };
            let n = keys.len();
            let label = *keys.entry(key).or_insert(n);
            raw.push((person_crop(seq.frame(a.frame), a, h, w)?, label));
        }
    }
    // Dense labels in key order so they do not depend on annotation order.
    let remap: BTreeMap<usize, usize> = keys
        .values()
        .enumerate()
        .map(|(rank, &l)| (l, rank))
        .collect();
    let (crops, labels) = raw.into_iter().map(|(c, l)| (c, remap[&l])).unzip();
    Ok((crops, labels, keys.len()))
}

fn augment<R: Rng>(img: &Image, rng: &mut R) -> Image {
    let (h, w) = img.dims();
    let mut out = img.clone();
    if rng.random_bool(0.5) {
        for c in 0..3 {
            let p = out.plane_mut(c);
            for row in p.chunks_mut(w) {
                row.reverse();
            }
        }
    }
    if rng.random_bool(0.3) {
        out = out.to_gray();
    }
    if rng.random_bool(0.3) {
        out = out.gaussian_blur(rng.random_range(0.5..2.0));
    }
    let gain: f32 = rng.random_range(0.8..1.2);
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = (*v * gain).clamp(0.0, 1.0));
    debug_assert_eq!(out.dims(), (h, w));
    out
}

/// Softmax cross-entropy training of the embedding classifier.
pub fn train_embedding(
    ds: &SceneDataset,
    cfg: &EmbeddingConfig,
) -> Result<(EmbeddingModel, Vec<f64>)> {
    let (crops, labels, classes) = training_crops(ds, cfg.crop_h, cfg.crop_w)?;
    let mut model = EmbeddingModel::new(cfg.clone(), classes)?;
    if crops.is_empty() {
        return Err(Error::Data("no eligible training crops".into()));
    }
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
        &model.store,
    );
    let mut rng = rng_for(cfg.seed, "embedding/train");
    let mut order: Vec<usize> = (0..crops.len()).collect();
    let mut cursor = order.len();
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if step == (cfg.decay_at * cfg.steps as f64) as usize {
            opt.set_lr(cfg.lr * 0.1);
        }
        let mut batch = Vec::with_capacity(cfg.batch);
        let mut ys = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            batch.push(if cfg.augment {
                augment(&crops[i], &mut rng)
            } else {
                crops[i].clone()
            });
            ys.push(labels[i]);
        }
        let refs: Vec<&Image> = batch.iter().collect();
        let mut g = Graph::<f32>::new();
        let x = g.input(Image::batch(&refs));
        let (_, logits) = model.net.forward(&mut g, &model.store, x);
        let loss = g.softmax_cross_entropy(logits, &ys);
        let lv = g.value(loss).item() as f64;
        if !lv.is_finite() {
            return Err(Error::Numeric(format!(
                "embedding loss diverged at step {step}"
            )));
        }
        history.push(lv);
        let grads = g.backward(loss).for_store(&model.store);
        opt.step(&mut model.store, &grads);
    }
    Ok((model, history))
}

/// Classification accuracy on the (unaugmented) training crops.
pub fn training_accuracy(model: &EmbeddingModel, ds: &SceneDataset) -> Result<f64> {
    let (crops, labels, _) = training_crops(ds, model.cfg.crop_h, model.cfg.crop_w)?;
    if crops.is_empty() {
        return Err(Error::Data("no eligible crops".into()));
    }
    let mut correct = 0usize;
    for (chunk, ys) in crops.chunks(64).zip(labels.chunks(64)) {
        for (l, &y) in model.logits(chunk).iter().zip(ys) {
            let arg = l
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            correct += usize::from(arg == y);
        }
    }
    Ok(correct as f64 / crops.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdentMode {
    /// Queries and gallery from the same data: standard re-identification.
    Reid,
    /// Queries from de-identified data, gallery from the original.
    Deid,
}

impl std::str::FromStr for IdentMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reid" => Ok(IdentMode::Reid),
            "deid" => Ok(IdentMode::Deid),
            o => Err(Error::Usage(format!(
                "unknown mode {o:?}, expected reid or deid"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentReport {
    pub mode: IdentMode,
    /// `rank-k` → score averaged over sequences.
    pub scores: BTreeMap<String, f64>,
    pub per_sequence: BTreeMap<String, BTreeMap<String, f64>>,
    pub num_queries: usize,
}

impl IdentReport {
    pub fn rank(&self, k: usize) -> Option<f64> {
        self.scores.get(&format!("rank-{k}")).copied()
    }
}

/// Embeds the split's samples: queries from `query_ds`, gallery from `gallery_ds`.
/// Both datasets must share annotations (the de-identified copy keeps them).
pub fn evaluate_identification(
    model: &EmbeddingModel,
    query_ds: &SceneDataset,
    gallery_ds: &SceneDataset,
    split: &QueryGallerySplit,
    ks: &[usize],
    mode: IdentMode,
) -> Result<IdentReport> {
    if split.sequences.is_empty() {
        return Err(Error::Usage("query-gallery split is empty".into()));
    }
    if query_ds.sequences.len() != gallery_ds.sequences.len() {
        return Err(Error::Data(
            "query and gallery datasets have different sequences".into(),
        ));
    }
    let (h, w) = (model.cfg.crop_h, model.cfg.crop_w);
    let mut per_sequence = BTreeMap::new();
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    let mut num_queries = 0;
    for s in &split.sequences {
        let gseq = &gallery_ds.sequences[s.sequence];
        let qseq = &query_ds.sequences[s.sequence];
        let embed = |seq: &Sequence, refs: &[SampleRef]| -> Result<Vec<Labeled>> {
            let mut crops = Vec::with_capacity(refs.len());
            for r in refs {
                // Masks always come from the original annotations.
                let ann = annotation(gseq, r)?;
                crops.push(person_crop(seq.frame(r.frame), ann, h, w)?);
            }
            Ok(model
                .embed(&crops)?
                .into_iter()
                .zip(refs)
                .map(|(e, r)| Labeled::new(e, r.track_id))
                .collect())
        };
        let gallery = embed(gseq, &s.gallery)?;
        let queries = embed(qseq, &s.queries)?;
        num_queries += queries.len();
        let mut row = BTreeMap::new();
        for &k in ks {
            let v = match mode {
                IdentMode::Reid => cmc(&queries, &gallery, k, Metric::Cosine)?,
                IdentMode::Deid => deid_score(&queries, &gallery, k, Metric::Cosine)?,
            };
            row.insert(format!("rank-{k}"), v);
            *sums.entry(format!("rank-{k}")).or_default() += v;
        }
        per_sequence.insert(s.name.clone(), row);
    }
    let n = split.sequences.len() as f64;
    Ok(IdentReport {
        mode,
        scores: sums.into_iter().map(|(k, v)| (k, v / n)).collect(),
        per_sequence,
        num_queries,
    })
}

/// Mean squared distance of unit-normalized embeddings to their group centroid,
/// averaged over groups with at least two members.
pub fn mean_group_variance(embeddings: &[Vec<f32>], groups: &[u32]) -> f64 {
    let mut by: BTreeMap<u32, Vec<Vec<f64>>> = BTreeMap::new();
    for (e, &g) in embeddings.iter().zip(groups) {
        let n = e
            .iter()
            .map(|v| (*v as f64).powi(2))
            .sum::<f64>()
            .sqrt()
            .max(1e-12);
        by.entry(g)
            .or_default()
            .push(e.iter().map(|v| *v as f64 / n).collect());
    }
    let vars: Vec<f64> = by
        .values()
        .filter(|m| m.len() >= 2)
        .map(|m| {
            let d = m[0].len();
            let c: Vec<f64> = (0..d)
                .map(|j| m.iter().map(|v| v[j]).sum::<f64>() / m.len() as f64)
                .collect();
            m.iter()
                .map(|v| v.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                .sum::<f64>()
                / m.len() as f64
        })
        .collect();
    if vars.is_empty() {
        0.0
    } else {
        vars.iter().sum::<f64>() / vars.len() as f64
    }
}
