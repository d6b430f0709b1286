//! Tiny anchor-free pedestrian detector, NMS and an IoU-greedy tracker.

use incogni_nn::layers::Conv2d;
use incogni_nn::{Adam, AdamConfig, Float, Graph, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use std::collections::BTreeMap;

use crate::dettrack::{
    average_precision, clear_mot, idf1, iou, summarize, Detection, EvalReport, GtBox,
    SequenceReport, TrackResult, IOU_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::rng_for;
use crate::scene::{BoundingBox, SceneDataset};

pub const NMS_IOU: f64 = 0.5;
pub const TRACK_IOU_GATE: f64 = 0.4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Network input size; frames are resized to it.
    pub input_h: usize,
    pub input_w: usize,
    pub channels: [usize; 3],
    /// Reference box size (frame pixels) for the log-size regression.
    pub ref_h: f64,
    pub ref_w: f64,
    /// Instances at or below this visibility are not used as positives.
    pub min_visibility: f64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub focal_gamma: f64,
    pub score_threshold: f64,
    pub max_detections: usize,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            input_h: 72,
            input_w: 120,
            channels: [16, 32, 48],
            ref_h: 64.0,
            ref_w: 32.0,
            min_visibility: 0.25,
            steps: 500,
            batch: 8,
            lr: 2e-3,
            focal_gamma: 2.0,
            score_threshold: 0.05,
            max_detections: 100,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub const STRIDE: usize = 8;

    fn grid(&self) -> (usize, usize) {
        (self.input_h / Self::STRIDE, self.input_w / Self::STRIDE)
    }
}

#[derive(Clone, Debug)]
struct DetectorNet {
    down: Vec<Conv2d>,
    mid: Conv2d,
    obj: Conv2d,
    bbox: Conv2d,
}

impl DetectorNet {
    fn new<F: Float>(cfg: &DetectorConfig, store: &mut ParamStore<F>) -> Self {
        let mut rng = rng_for(cfg.seed, "detector/init");
        let mut cin = 3;
        let mut down = Vec::new();
        for (i, &c) in cfg.channels.iter().enumerate() {
            down.push(Conv2d::new(
                store,
                &format!("down{i}"),
                cin,
                c,
                3,
                2,
                1,
                &mut rng,
            ));
            cin = c;
        }
        let mid = Conv2d::same3(store, "mid", cin, cin, &mut rng);
        let obj = Conv2d::new(store, "obj", cin, 1, 1, 1, 0, &mut rng);
        // Rare-positive prior so the focal loss starts near its equilibrium.
        let b = obj.bias.unwrap();
        store.get_mut(b).data_mut()[0] = F::c(-4.0);
        let bbox = Conv2d::new(store, "box", cin, 4, 1, 1, 0, &mut rng);
        Self {
            down,
            mid,
            obj,
            bbox,
        }
    }

    fn forward<F: Float>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> (Var, Var) {
        let mut h = g.add_scalar(x, F::c(-0.5));
        for c in &self.down {
            h = c.forward(g, store, h);
            h = g.leaky_relu(h, 0.1);
        }
        let m = self.mid.forward(g, store, h);
        let m = g.leaky_relu(m, 0.1);
        h = g.add(h, m);
        (
            self.obj.forward(g, store, h),
            self.bbox.forward(g, store, h),
        )
    }
}

pub struct TinyDetector {
    pub cfg: DetectorConfig,
    pub store: ParamStore<f32>,
    net: DetectorNet,
}

/// Per-cell training targets for one frame.
struct Targets {
    obj: Vec<f32>,
    weight: Vec<f32>,
    boxes: Vec<f32>,
    box_mask: Vec<f32>,
}

impl TinyDetector {
    pub fn new(cfg: DetectorConfig) -> Result<Self> {
        if !cfg.input_h.is_multiple_of(DetectorConfig::STRIDE)
            || !cfg.input_w.is_multiple_of(DetectorConfig::STRIDE)
        {
            return Err(Error::Config(format!(
                "detector input must be divisible by {}",
                DetectorConfig::STRIDE
            )));
        }
        let mut store = ParamStore::new();
        let net = DetectorNet::new(&cfg, &mut store);
        Ok(Self { cfg, store, net })
    }

    fn targets(&self, boxes: &[(BoundingBox, bool)], fh: usize, fw: usize, flip: bool) -> Targets {
        let (gh, gw) = self.cfg.grid();
        let cell_h = fh as f64 / gh as f64;
        let cell_w = fw as f64 / gw as f64;
        let mut t = Targets {
            obj: vec![0.0; gh * gw],
            weight: vec![1.0; gh * gw],
            boxes: vec![0.0; 4 * gh * gw],
            box_mask: vec![0.0; 4 * gh * gw],
        };
        for (b, positive) in boxes {
            let (mut cx, cy) = b.center();
            if flip {
                cx = fw as f64 - cx;
            }
            if !(0.0..fw as f64).contains(&cx) || !(0.0..fh as f64).contains(&cy) {
                continue;
            }
            let gx = ((cx / cell_w) as usize).min(gw - 1);
            let gy = ((cy / cell_h) as usize).min(gh - 1);
            let c = gy * gw + gx;
            if !positive {
                if t.obj[c] == 0.0 {
                    t.weight[c] = 0.0;
                }
                continue;
            }
            t.obj[c] = 1.0;
            t.weight[c] = 1.0;
            let vals = [
                cx / cell_w - gx as f64 - 0.5,
                cy / cell_h - gy as f64 - 0.5,
                (b.width / self.cfg.ref_w).ln(),
                (b.height / self.cfg.ref_h).ln(),
            ];
            for (k, v) in vals.iter().enumerate() {
                t.boxes[k * gh * gw + c] = *v as f32;
                t.box_mask[k * gh * gw + c] = 1.0;
            }
        }
        t
    }

    fn prepare(&self, frame: &Image) -> Image {
        frame.resize(self.cfg.input_h, self.cfg.input_w)
    }

    /// Detections on one frame, after NMS, in frame coordinates.
    pub fn detect(&self, frame: &Image, frame_id: u32) -> Vec<Detection> {
        self.detect_batch(&[frame], &[frame_id])
            .pop()
            .unwrap_or_default()
    }

    pub fn detect_batch(&self, frames: &[&Image], ids: &[u32]) -> Vec<Vec<Detection>> {
        if frames.is_empty() {
            return Vec::new();
        }
        let inputs: Vec<Image> = frames.iter().map(|f| self.prepare(f)).collect();
        let refs: Vec<&Image> = inputs.iter().collect();
        let mut g = Graph::<f32>::new();
        let x = g.input(Image::batch(&refs));
        let (obj, bx) = self.net.forward(&mut g, &self.store, x);
        let (gh, gw) = self.cfg.grid();
        let ov = g.value(obj).data();
        let bv = g.value(bx).data();
        frames
            .iter()
            .zip(ids)
            .enumerate()
            .map(|(i, (f, &fid))| {
                let (fh, fw) = f.dims();
                let cell_h = fh as f64 / gh as f64;
                let cell_w = fw as f64 / gw as f64;
                let mut dets = Vec::new();
                for c in 0..gh * gw {
                    let score = 1.0 / (1.0 + (-(ov[i * gh * gw + c] as f64)).exp());
                    if score < self.cfg.score_threshold {
                        continue;
                    }
                    let v = |k: usize| bv[(i * 4 + k) * gh * gw + c] as f64;
                    let (gy, gx) = ((c / gw) as f64, (c % gw) as f64);
                    let cx = (gx + 0.5 + v(0)) * cell_w;
                    let cy = (gy + 0.5 + v(1)) * cell_h;
                    let w = self.cfg.ref_w * v(2).clamp(-4.0, 4.0).exp();
                    let h = self.cfg.ref_h * v(3).clamp(-4.0, 4.0).exp();
                    dets.push(Detection {
                        frame: fid,
                        bbox: BoundingBox::new(cx - w / 2.0, cy - h / 2.0, w, h),
                        confidence: score,
                    });
                }
                let mut kept = nms(&dets, NMS_IOU);
                kept.truncate(self.cfg.max_detections);
                kept
            })
            .collect()
    }

    /// Detections for every frame of every sequence, one list per sequence.
    pub fn detect_dataset(&self, ds: &SceneDataset) -> Vec<Vec<Detection>> {
        ds.sequences
            .iter()
            .map(|seq| {
                let mut out = Vec::new();
                for chunk in (1..=seq.num_frames() as u32).collect::<Vec<_>>().chunks(16) {
                    let frames: Vec<&Image> = chunk.iter().map(|&k| seq.frame(k)).collect();
                    out.extend(self.detect_batch(&frames, chunk).into_iter().flatten());
                }
                out
            })
            .collect()
    }

    pub fn to_checkpoint(&self, history: Vec<f64>) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new("detector", &self.cfg, &self.store)?;
        ck.history.insert("loss".into(), history);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_stage("detector")?;
        let mut d = Self::new(ck.config()?)?;
        d.store.load_named(&ck.tensors)?;
        Ok(d)
    }
}

fn flip_image(img: &Image) -> Image {
    let w = img.width();
    let mut out = img.clone();
    for c in 0..3 {
        for row in out.plane_mut(c).chunks_mut(w) {
            row.reverse();
        }
    }
    out
}

/// Objectness focal loss plus L1 box regression on positive cells.
pub fn train_tiny_detector(
    ds: &SceneDataset,
    cfg: &DetectorConfig,
) -> Result<(TinyDetector, Vec<f64>)> {
    let mut det = TinyDetector::new(cfg.clone())?;
    let mut items: Vec<(usize, u32)> = Vec::new();
    for (si, seq) in ds.sequences.iter().enumerate() {
        for k in 1..=seq.num_frames() as u32 {
            items.push((si, k));
        }
    }
    if items.is_empty() || ds.num_instances() == 0 {
        return Err(Error::Data(
            "detector training needs annotated frames".into(),
        ));
    }
    let inputs: Vec<Image> = items
        .iter()
        .map(|&(si, k)| det.prepare(ds.sequences[si].frame(k)))
        .collect();
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
        &det.store,
    );
    let mut rng = rng_for(cfg.seed, "detector/train");
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut cursor = order.len();
    let (gh, gw) = cfg.grid();
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if step == cfg.steps * 3 / 4 {
            opt.set_lr(cfg.lr * 0.1);
        }
        let mut batch = Vec::with_capacity(cfg.batch);
        let (mut obj, mut wts, mut boxes, mut bmask) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for _ in 0..cfg.batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            let (si, k) = items[i];
            let seq = &ds.sequences[si];
            let flip = rng.random_bool(0.5);
            let gain: f32 = rng.random_range(0.85..1.15);
            let mut img = if flip {
                flip_image(&inputs[i])
            } else {
                inputs[i].clone()
            };
            img.data_mut()
                .iter_mut()
                .for_each(|v| *v = (*v * gain).min(1.0));
            batch.push(img);
            let anns: Vec<(BoundingBox, bool)> = seq
                .annotations_in(k)
                .filter(|a| a.active)
                .map(|a| (a.bbox, a.visibility > cfg.min_visibility))
                .collect();
            let (fh, fw) = seq.frame(k).dims();
            let t = det.targets(&anns, fh, fw, flip);
            obj.extend(t.obj);
            wts.extend(t.weight);
            boxes.extend(t.boxes);
            bmask.extend(t.box_mask);
        }
        let npos = obj.iter().filter(|&&o| o > 0.0).count().max(1) as f64;
        let refs: Vec<&Image> = batch.iter().collect();
        let mut g = Graph::<f32>::new();
        let x = g.input(Image::batch(&refs));
        let (o, b) = det.net.forward(&mut g, &det.store, x);
        let focal = g.sigmoid_focal(o, &obj, &wts, cfg.focal_gamma, npos);
        let tb = g.input(Tensor::new(&[cfg.batch, 4, gh, gw], boxes));
        let mb = g.input(Tensor::new(&[cfg.batch, 4, gh, gw], bmask));
        let diff = g.sub(b, tb);
        let diff = g.mul(diff, mb);
        let l1 = g.abs(diff);
        let l1 = g.sum(l1);
        let l1 = g.scale(l1, 1.0 / npos as f32);
        let loss = g.add(focal, l1);
        let lv = g.value(loss).item() as f64;
        if !lv.is_finite() {
            return Err(Error::Numeric(format!(
                "detector loss diverged at step {step}"
            )));
        }
        history.push(lv);
        let grads = g.backward(loss).for_store(&det.store);
        opt.step(&mut det.store, &grads);
    }
    Ok((det, history))
}

/// Score-descending greedy suppression; equal scores keep the lower index first.
pub fn nms(dets: &[Detection], thr: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .total_cmp(&dets[a].confidence)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = dets[i];
        if kept
            .iter()
            .all(|k| k.frame != d.frame || iou(&k.bbox, &d.bbox) <= thr)
        {
            kept.push(d);
        }
    }
    kept
}

/// Frame-to-frame greedy IoU association. A track ends after one frame without a match.
pub fn greedy_track(dets: &[Detection], iou_gate: f64, min_confidence: f64) -> Vec<TrackResult> {
    let mut frames: Vec<u32> = dets.iter().map(|d| d.frame).collect();
    frames.sort_unstable();
    frames.dedup();
    let mut out = Vec::new();
    let mut active: Vec<(u32, BoundingBox)> = Vec::new();
    let mut next_id = 1u32;
    let mut prev_frame: Option<u32> = None;
    for f in frames {
        if prev_frame.is_some_and(|p| p + 1 != f) {
            active.clear();
        }
        let mut cur: Vec<&Detection> = dets
            .iter()
            .filter(|d| d.frame == f && d.confidence >= min_confidence)
            .collect();
        cur.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (di, d) in cur.iter().enumerate() {
            for (ti, t) in active.iter().enumerate() {
                let o = iou(&d.bbox, &t.1);
                if o >= iou_gate {
                    pairs.push((o, di, ti));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut d_used = vec![false; cur.len()];
        let mut t_used = vec![false; active.len()];
        let mut assigned: Vec<Option<u32>> = vec![None; cur.len()];
        for (_, di, ti) in pairs {
            if !d_used[di] && !t_used[ti] {
                d_used[di] = true;
                t_used[ti] = true;
                assigned[di] = Some(active[ti].0);
            }
        }
        let mut next_active = Vec::new();
        for (di, d) in cur.iter().enumerate() {
            let id = assigned[di].unwrap_or_else(|| {
                next_id += 1;
                next_id - 1
            });
            out.push(TrackResult {
                frame: f,
                track_id: id,
                bbox: d.bbox,
            });
            next_active.push((id, d.bbox));
        }
        active = next_active;
        prev_frame = Some(f);
    }
    out
}

/// Minimum confidence for detections fed to the tracker.
pub const TRACK_MIN_CONFIDENCE: f64 = 0.5;

/// Detection AP and tracking metrics of `det` on every sequence of `test`.
pub fn evaluate_detector(det: &TinyDetector, test: &SceneDataset) -> Result<EvalReport> {
    let mut per = BTreeMap::new();
    for (seq, dets) in test.sequences.iter().zip(det.detect_dataset(test)) {
        let gt = GtBox::from_sequence(seq);
        let visible: Vec<GtBox> = gt.iter().copied().filter(|g| g.visibility > 0.0).collect();
        let tracks = greedy_track(&dets, TRACK_IOU_GATE, TRACK_MIN_CONFIDENCE);
        per.insert(
            seq.name.clone(),
            SequenceReport {
                ap: Some(average_precision(&dets, &gt, IOU_THRESHOLD)?),
                mot: Some(clear_mot(&tracks, &visible, IOU_THRESHOLD)?),
                id: Some(idf1(&tracks, &visible, IOU_THRESHOLD)?),
            },
        );
    }
    Ok(summarize(per))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dettrack::{clear_mot, GtBox};

    fn det(frame: u32, left: f64, conf: f64) -> Detection {
        Detection {
            frame,
            bbox: BoundingBox::new(left, 10.0, 20.0, 40.0),
            confidence: conf,
        }
    }

    #[test]
    fn stationary_detection_is_one_track() {
        let dets: Vec<Detection> = (1..=5).map(|f| det(f, 5.0, 0.9)).collect();
        let tr = greedy_track(&dets, TRACK_IOU_GATE, 0.5);
        assert!(tr.iter().all(|t| t.track_id == 1));
        let gt: Vec<GtBox> = dets
            .iter()
            .map(|d| GtBox {
                frame: d.frame,
                track_id: 3,
                bbox: d.bbox,
                visibility: 1.0,
            })
            .collect();
        assert_eq!(clear_mot(&tr, &gt, 0.5).unwrap().id_switches, 0);
    }

    #[test]
    fn gaps_terminate_tracks() {
        let dets: Vec<Detection> = [1, 3, 5].iter().map(|&f| det(f, 5.0, 0.9)).collect();
        let tr = greedy_track(&dets, TRACK_IOU_GATE, 0.5);
        let ids: Vec<u32> = tr.iter().map(|t| t.track_id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
    }

    #[test]
    fn nms_suppresses_and_is_idempotent() {
        let d = vec![
            det(1, 0.0, 0.5),
            det(1, 1.0, 0.9),
            det(1, 100.0, 0.3),
            det(2, 0.0, 0.2),
        ];
        let k = nms(&d, NMS_IOU);
        assert_eq!(k.len(), 3);
        assert_eq!(k[0].confidence, 0.9);
        assert_eq!(nms(&k, NMS_IOU), k);
    }

    #[test]
    fn zero_steps_returns_initial_params() {
        let ds = crate::scene::generate_toy_dataset(&crate::scene::ToySceneSpec {
            num_identities: 2,
            sequences: 1,
            frames: 2,
            max_per_sequence: 2,
            ..Default::default()
        })
        .unwrap();
        let cfg = DetectorConfig {
            steps: 0,
            ..Default::default()
        };
        let (d, h) = train_tiny_detector(&ds, &cfg).unwrap();
        assert!(h.is_empty());
        assert_eq!(
            d.store.to_named(),
            TinyDetector::new(cfg).unwrap().store.to_named()
        );
        let mut empty = ds.clone();
        empty.sequences[0].annotations.clear();
        assert!(matches!(
            train_tiny_detector(&empty, &DetectorConfig::default()),
            Err(Error::Data(_))
        ));
    }
}
