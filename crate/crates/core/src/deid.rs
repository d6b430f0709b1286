//! Dataset de-identification: crop, synthesize a mapped identity, blend, adapt, paste back.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::baselines::{processing_order, require_mask};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::person2scene::Adapter;
use crate::pose2person::{conditioning, frame_union_mask, Generator};
use crate::privacy::{AccessAudit, AuditedFrame};
use crate::pyramid::blend;
use crate::rng::rng_for;
use crate::scene::{SceneDataset, Sequence};

/// A track within a dataset.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrackKey {
    pub sequence: String,
    pub track: u32,
}

/// Fixed assignment of every original track to a synthetic identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityMap {
    pub num_identities: usize,
    pub seed: u64,
    pub entries: Vec<(TrackKey, usize)>,
}

impl IdentityMap {
    pub fn get(&self, sequence: &str, track: u32) -> Option<usize> {
        self.entries
            .iter()
            .find(|(k, _)| k.sequence == sequence && k.track == track)
            .map(|&(_, v)| v)
    }

    /// Tracks sharing a synthetic identity with another track.
    pub fn collisions(&self) -> usize {
        self.entries
            .len()
            .saturating_sub(self.num_identities.min(self.entries.len()))
    }
}

/// Tracks are visited in sorted order and dealt round-robin over a seeded
/// permutation of `0..m`; injective whenever there are at most `m` tracks.
pub fn build_identity_map(tracks: &[TrackKey], m: usize, seed: u64) -> Result<IdentityMap> {
    if m == 0 {
        return Err(Error::Usage("identity map needs M ≥ 1".into()));
    }
    let mut keys = tracks.to_vec();
    keys.sort();
    keys.dedup();
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(&mut rng_for(seed, "identity-map"));
    let entries = keys
        .into_iter()
        .enumerate()
        .map(|(i, k)| (k, perm[i % m]))
        .collect();
    Ok(IdentityMap {
        num_identities: m,
        seed,
        entries,
    })
}

pub fn dataset_tracks(ds: &SceneDataset) -> Vec<TrackKey> {
    let mut out: Vec<TrackKey> = ds
        .sequences
        .iter()
        .flat_map(|s| {
            s.annotations.iter().map(|a| TrackKey {
                sequence: s.name.clone(),
                track: a.track_id,
            })
        })
        .collect();
    out.sort();
    out.dedup();
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoseInput {
    Mask,
    MaskJoints,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub p2p: bool,
    pub blend: bool,
    pub p2s: bool,
    /// Marks runs whose adapter was trained with blur and sharpening.
    pub augment: bool,
    pub pose_input: PoseInput,
    /// Levels of the boundary blend; more levels spread the seam wider.
    pub blend_levels: usize,
    /// Blend against a background whose masked region is interpolated from
    /// its surroundings instead of the source pedestrian.
    pub blend_fill: bool,
    /// Instances need visibility above zero and at least this value.
    pub min_visibility: f64,
    pub margin: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            p2p: true,
            blend: true,
            p2s: true,
            augment: true,
            pose_input: PoseInput::MaskJoints,
            blend_levels: 3,
            blend_fill: false,
            min_visibility: 0.0,
            margin: 0.1,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Parses a stage list such as `p2p,blend,p2s`.
    pub fn with_stages(mut self, stages: &str) -> Result<Self> {
        self.p2p = false;
        self.blend = false;
        self.p2s = false;
        for s in stages.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match s {
                "p2p" => self.p2p = true,
                "blend" => self.blend = true,
                "p2s" => self.p2s = true,
                o => {
                    return Err(Error::Usage(format!(
                        "unknown stage {o:?} (p2p, blend, p2s)"
                    )))
                }
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn stages(&self) -> String {
        [("p2p", self.p2p), ("blend", self.blend), ("p2s", self.p2s)]
            .iter()
            .filter(|s| s.1)
            .map(|s| s.0)
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p2p || self.blend || self.p2s) {
            return Err(Error::Config("no pipeline stage enabled".into()));
        }
        if !self.p2p {
            return Err(Error::Config(
                "blending and adaptation operate on the p2p synthesis".into(),
            ));
        }
        if self.blend && self.blend_levels < 2 {
            return Err(Error::Config(
                "blending needs at least two pyramid levels".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.min_visibility) || !(self.margin >= 0.0) {
            return Err(Error::Config(
                "min_visibility must lie in [0, 1] and margin be ≥ 0".into(),
            ));
        }
        Ok(())
    }
}

/// Per-frame processing record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameStatus {
    pub sequence: String,
    pub frame: u32,
    pub processed: usize,
    pub skipped: usize,
}

pub struct DeidOutput {
    pub dataset: SceneDataset,
    pub audit: AccessAudit,
    pub frames: Vec<FrameStatus>,
}

pub struct Models<'a> {
    pub generator: &'a Generator,
    pub adapter: Option<&'a Adapter>,
}

fn check_models(models: &Models, cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    let joints = models.generator.cfg.use_joints;
    if joints != (cfg.pose_input == PoseInput::MaskJoints) {
        return Err(Error::Config(format!(
            "pose input {:?} does not match a generator trained {} joints",
            cfg.pose_input,
            if joints { "with" } else { "without" }
        )));
    }
    if cfg.p2s && models.adapter.is_none() {
        return Err(Error::Config("p2s stage enabled without an adapter".into()));
    }
    Ok(())
}

/// De-identifies frame `k` of `seq`; other frames are never consulted.
pub fn deidentify_frame(
    seq: &Sequence,
    k: u32,
    gmap: &IdentityMap,
    models: &Models,
    cfg: &PipelineConfig,
) -> Result<(Image, AccessAudit, FrameStatus)> {
    check_models(models, cfg)?;
    let frame = seq.frame(k);
    let gcfg = &models.generator.cfg;
    let protected = frame_union_mask(seq, k);
    let src = AuditedFrame::new(frame, &protected);
    let mut out = frame.clone();
    let mut status = FrameStatus {
        sequence: seq.name.clone(),
        frame: k,
        processed: 0,
        skipped: 0,
    };
    let (fh, fw) = frame.dims();
    for a in processing_order(seq, k) {
        if a.visibility < cfg.min_visibility {
            status.skipped += 1;
            continue;
        }
        let mask = require_mask(a)?;
        let named = |msg: &str| Error::Pipeline {
            frame: a.frame,
            track: a.track_id,
            msg: msg.into(),
        };
        if gcfg.use_joints && a.keypoints.is_none() {
            return Err(named("instance has no keypoints"));
        }
        if mask.dims() != (fh, fw) {
            return Err(named("mask size differs from the frame"));
        }
        let identity = gmap
            .get(&seq.name, a.track_id)
            .ok_or_else(|| named("track missing from identity map"))?;
        let (inp, t) = conditioning(
            &src,
            &a.bbox,
            mask,
            a.keypoints.as_ref(),
            identity,
            cfg.margin,
            gcfg,
        )
        .map_err(|e| named(&e.to_string()))?;
        let mut res = models.generator.generate(&inp)?;
        let before = t.extract(&out);
        if cfg.blend {
            let bg = if cfg.blend_fill {
                before.fill_holes(&inp.mask)
            } else {
                before.clone()
            };
            res = blend(&res, &bg, &inp.mask, cfg.blend_levels)?;
            res.clamp01();
        }
        if cfg.p2s {
            res = models.adapter.expect("checked above").adapt(&res)?;
        }
        paste(&mut out, &res, &before, mask, &t, cfg.blend || cfg.p2s);
        status.processed += 1;
    }
    out.quantize8();
    Ok((out, src.audit(), status))
}

/// Inside `mask` the restored crop replaces the frame; elsewhere in the crop
/// region only its change is added, and only when `context` is set.
fn paste(
    frame: &mut Image,
    res: &Image,
    before: &Image,
    mask: &Mask,
    t: &crate::scene::CropTransform,
    context: bool,
) {
    let full = t.restore(res);
    let mut delta = res.clone();
    for (d, b) in delta.data_mut().iter_mut().zip(before.data()) {
        *d -= b;
    }
    let delta = t.restore(&delta);
    for y in 0..t.height {
        for x in 0..t.width {
            let (fy, fx) = (t.y0 + y, t.x0 + x);
            if mask.get(fy, fx) {
                frame.set_pixel(fy, fx, full.pixel(y, x));
            } else if context {
                for c in 0..3 {
                    let v = frame.get(c, fy, fx) + delta.get(c, y, x);
                    frame.set(c, fy, fx, v.clamp(0.0, 1.0));
                }
            }
        }
    }
}

/// Runs the pipeline over every frame. Annotations are carried over unchanged.
pub fn deidentify_dataset(
    ds: &SceneDataset,
    gmap: &IdentityMap,
    models: &Models,
    cfg: &PipelineConfig,
) -> Result<DeidOutput> {
    check_models(models, cfg)?;
    let mut dataset = ds.clone();
    let mut audit = AccessAudit::default();
    let mut frames = Vec::new();
    for (seq, src) in dataset.sequences.iter_mut().zip(&ds.sequences) {
        for (i, f) in seq.frames.iter_mut().enumerate() {
            let (img, a, st) = deidentify_frame(src, i as u32 + 1, gmap, models, cfg)?;
            *f = img;
            audit.merge(a);
            frames.push(st);
        }
    }
    Ok(DeidOutput {
        dataset,
        audit,
        frames,
    })
}

/// Identity map over the dataset's tracks and the generator's catalog size.
pub fn identity_map_for(
    ds: &SceneDataset,
    generator: &Generator,
    seed: u64,
) -> Result<IdentityMap> {
    build_identity_map(&dataset_tracks(ds), generator.cfg.num_identities, seed)
}

/// Number of tracks assigned to each synthetic identity.
pub fn identity_usage(gmap: &IdentityMap) -> BTreeMap<usize, usize> {
    let mut out = BTreeMap::new();
    for &(_, v) in &gmap.entries {
        *out.entry(v).or_insert(0) += 1;
    }
    out
}
