//! Scene data model: frames, instance annotations, file formats and the toy world.

mod crop;
mod io;
mod keypoints;
mod mot;
mod rle;
pub mod toy;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

pub use crop::{crop_instance, paste_back, render_joints_map, CropTransform, InstanceCrop};
pub use io::{load_dataset, save_dataset};
pub use keypoints::{parse_keypoints_json, write_keypoints_json};
pub use mot::{format_mot_line, parse_mot_annotations, parse_mot_str, write_mot_annotations};
pub use rle::{decode_rle, encode_rle, parse_mask_file, parse_mask_str, write_mask_file};
pub use toy::{generate_toy_dataset, AppearanceCode, Texture, ToySceneSpec};

/// Axis-aligned box in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn new(left: f64, top: f64, width: f64, height: f64) -> Self {
        Self {
            left,
            top,
            width,
            height,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.width > 0.0
            && self.height > 0.0
            && [self.left, self.top, self.width, self.height]
                .iter()
                .all(|v| v.is_finite())
    }

    pub fn right(&self) -> f64 {
        self.left + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.top + self.height
    }

    pub fn center(&self) -> (f64, f64) {
        (self.left + self.width / 2.0, self.top + self.height / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Grows the box by `frac` of its size on every side.
    pub fn dilated(&self, frac: f64) -> Self {
        Self::new(
            self.left - frac * self.width,
            self.top - frac * self.height,
            self.width * (1.0 + 2.0 * frac),
            self.height * (1.0 + 2.0 * frac),
        )
    }
}

pub const NUM_KEYPOINTS: usize = 17;

/// COCO joint names in index order.
pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Limbs drawn into the joints map.
pub const SKELETON: [(usize, usize); 16] = [
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (5, 6),
    (5, 7),
    (7, 9),
    (6, 8),
    (8, 10),
    (5, 11),
    (6, 12),
    (11, 12),
    (11, 13),
    (13, 15),
    (12, 14),
    (14, 16),
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeypointSet(pub [Keypoint; NUM_KEYPOINTS]);

impl KeypointSet {
    pub fn from_triples(v: &[[f64; 3]]) -> Result<Self> {
        if v.len() != NUM_KEYPOINTS {
            return Err(Error::Shape(format!(
                "expected 17 keypoints, got {}",
                v.len()
            )));
        }
        let mut out = [Keypoint::default(); NUM_KEYPOINTS];
        for (k, t) in out.iter_mut().zip(v) {
            *k = Keypoint {
                x: t[0],
                y: t[1],
                visible: t[2] > 0.0,
            };
        }
        Ok(Self(out))
    }

    pub fn to_triples(&self) -> Vec<[f64; 3]> {
        self.0
            .iter()
            .map(|k| [k.x, k.y, if k.visible { 2.0 } else { 0.0 }])
            .collect()
    }

    pub fn num_visible(&self) -> usize {
        self.0.iter().filter(|k| k.visible).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceAnnotation {
    pub frame: u32,
    pub track_id: u32,
    pub bbox: BoundingBox,
    /// False for lines whose confidence column is 0.
    pub active: bool,
    pub class_id: i32,
    pub visibility: f64,
    pub mask: Option<Mask>,
    pub keypoints: Option<KeypointSet>,
}

impl InstanceAnnotation {
    pub fn new(frame: u32, track_id: u32, bbox: BoundingBox, visibility: f64) -> Self {
        Self {
            frame,
            track_id,
            bbox,
            active: true,
            class_id: 1,
            visibility,
            mask: None,
            keypoints: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    /// Target-world footage whose pedestrians must be anonymized.
    Real,
    /// Rendered catalog identities that may be used for generator training.
    Synthetic,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Domain::Real => "real",
            Domain::Synthetic => "synthetic",
        })
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Domain::Real),
            "synthetic" => Ok(Domain::Synthetic),
            other => Err(Error::Parse {
                path: String::new(),
                line: 0,
                msg: format!("unknown domain {other:?}"),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub name: String,
    /// Frame `k` (1-based) is `frames[k - 1]`.
    pub frames: Vec<Image>,
    pub annotations: Vec<InstanceAnnotation>,
    pub frame_rate: u32,
    /// Ground-truth identity behind each track, when known (toy data).
    pub identities: BTreeMap<u32, usize>,
}

impl Sequence {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, k: u32) -> &Image {
        &self.frames[k as usize - 1]
    }

    pub fn annotations_in(&self, frame: u32) -> impl Iterator<Item = &InstanceAnnotation> {
        self.annotations.iter().filter(move |a| a.frame == frame)
    }

    pub fn track_ids(&self) -> BTreeSet<u32> {
        self.annotations.iter().map(|a| a.track_id).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len() as u32;
        let mut seen = BTreeSet::new();
        for a in &self.annotations {
            if a.frame < 1 || a.frame > n {
                return Err(Error::Range(format!(
                    "{}: annotation frame {} outside 1..={n}",
                    self.name, a.frame
                )));
            }
            if !seen.insert((a.frame, a.track_id)) {
                return Err(Error::Data(format!(
                    "{}: duplicate annotation for frame {} track {}",
                    self.name, a.frame, a.track_id
                )));
            }
            if let Some(m) = &a.mask {
                if m.dims() != self.frames[a.frame as usize - 1].dims() {
                    return Err(Error::Shape(format!(
                        "{}: mask of frame {} track {} is not frame-sized",
                        self.name, a.frame, a.track_id
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub domain: Domain,
    pub sequences: Vec<Sequence>,
    /// Appearance of every identity referenced by `Sequence::identities`.
    pub catalog: Vec<AppearanceCode>,
}

impl SceneDataset {
    pub fn num_instances(&self) -> usize {
        self.sequences.iter().map(|s| s.annotations.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.sequences.iter().try_for_each(Sequence::validate)
    }

    /// Same dataset restricted to the given sequence indices.
    pub fn subset(&self, indices: &[usize]) -> SceneDataset {
        SceneDataset {
            domain: self.domain,
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
            catalog: self.catalog.clone(),
        }
    }
}
