//! Procedural pedestrian scenes with exact masks, keypoints and visibility.
//!
//! Pedestrians walk back and forth on a far and a near sidewalk. A fraction of
//! them (the occlusion rate) roams a middle path across the whole frame and
//! passes in front of or behind the others. `Real` scenes get textured
//! backgrounds, shading, tint, camera blur and sensor noise; `Synthetic` scenes
//! are flat-shaded over plain gradients.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    BoundingBox, Domain, InstanceAnnotation, Keypoint, KeypointSet, SceneDataset, Sequence,
    NUM_KEYPOINTS,
};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::rng::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    Plain,
    HStripes,
    VStripes,
    Checker,
}

/// Clothing and body parameters that make up one identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppearanceCode {
    pub shirt: [f32; 3],
    pub second: [f32; 3],
    pub texture: Texture,
    pub pants: [f32; 3],
    pub hair: [f32; 3],
    pub skin: [f32; 3],
    pub limb_scale: f32,
    pub height_factor: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySceneSpec {
    pub num_identities: usize,
    pub sequences: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub occlusion_rate: f64,
    pub seed: u64,
    pub domain: Domain,
    pub max_per_sequence: usize,
    pub frame_rate: u32,
}

impl Default for ToySceneSpec {
    fn default() -> Self {
        Self {
            num_identities: 8,
            sequences: 3,
            frames: 60,
            height: 144,
            width: 240,
            occlusion_rate: 0.25,
            seed: 7,
            domain: Domain::Real,
            max_per_sequence: 8,
            frame_rate: 30,
        }
    }
}

fn hsv(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as i32;
    let f = h6 - i as f32;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i.rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

const HAIR: [[f32; 3]; 4] = [
    [0.08, 0.06, 0.05],
    [0.35, 0.22, 0.12],
    [0.78, 0.66, 0.38],
    [0.55, 0.55, 0.55],
];
const SKIN: [[f32; 3]; 4] = [
    [0.94, 0.78, 0.66],
    [0.82, 0.62, 0.48],
    [0.62, 0.44, 0.32],
    [0.42, 0.29, 0.21],
];

/// Draws `k` identities with hues spread evenly around the color wheel.
pub fn sample_identities<R: Rng>(k: usize, rng: &mut R) -> Vec<AppearanceCode> {
    let mut hues: Vec<f32> = (0..k)
        .map(|i| (i as f32 + rng.random_range(0.2..0.8)) / k as f32)
        .collect();
    hues.shuffle(rng);
    let textures = [
        Texture::Plain,
        Texture::HStripes,
        Texture::VStripes,
        Texture::Checker,
    ];
    hues.into_iter()
        .map(|h| {
            let s = rng.random_range(0.55..0.9);
            let v = rng.random_range(0.5..0.92);
            let shirt = hsv(h, s, v);
            let second = hsv(
                h + rng.random_range(0.3..0.7),
                rng.random_range(0.2..0.8),
                rng.random_range(0.25..0.95),
            );
            let pants = hsv(
                rng.random(),
                rng.random_range(0.1..0.6),
                rng.random_range(0.15..0.6),
            );
            AppearanceCode {
                shirt,
                second,
                texture: textures[rng.random_range(0..4)],
                pants,
                hair: HAIR[rng.random_range(0..HAIR.len())],
                skin: SKIN[rng.random_range(0..SKIN.len())],
                limb_scale: rng.random_range(0.9..1.1),
                height_factor: rng.random_range(0.95..1.05),
            }
        })
        .collect()
}

/// Where and how a sprite stands in one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PersonPose {
    pub cx: f32,
    pub feet_y: f32,
    /// Feet-to-crown height in pixels.
    pub height: f32,
    /// Walk-cycle phase in radians.
    pub phase: f32,
    /// +1 walking right, −1 walking left.
    pub facing: f32,
}

/// Joint positions in COCO order.
pub fn pose_joints(app: &AppearanceCode, p: &PersonPose) -> [(f32, f32); NUM_KEYPOINTS] {
    let h = p.height;
    let (cx, fy, d) = (p.cx, p.feet_y, p.facing);
    let leg = 0.45 * p.phase.sin();
    let arm = -0.4 * p.phase.sin();
    let ls = app.limb_scale;
    let hip_l = (cx + 0.065 * h, fy - 0.5 * h);
    let hip_r = (cx - 0.065 * h, fy - 0.5 * h);
    let sh_l = (cx + 0.12 * h, fy - 0.8 * h);
    let sh_r = (cx - 0.12 * h, fy - 0.8 * h);
    let step =
        |from: (f32, f32), len: f32, ang: f32| (from.0 + len * ang.sin(), from.1 + len * ang.cos());
    let knee_l = step(hip_l, 0.25 * h, leg);
    let knee_r = step(hip_r, 0.25 * h, -leg);
    let ank_l = step(knee_l, 0.245 * h, 1.3 * leg);
    let ank_r = step(knee_r, 0.245 * h, -1.3 * leg);
    let elb_l = step(sh_l, 0.17 * h * ls, arm + 0.12);
    let elb_r = step(sh_r, 0.17 * h * ls, -arm - 0.12);
    let wr_l = step(elb_l, 0.15 * h * ls, 1.3 * arm + 0.1);
    let wr_r = step(elb_r, 0.15 * h * ls, -1.3 * arm - 0.1);
    let hy = fy - 0.915 * h;
    [
        (cx + d * 0.02 * h, hy + 0.01 * h),
        (cx + 0.025 * h + d * 0.01 * h, hy - 0.01 * h),
        (cx - 0.025 * h + d * 0.01 * h, hy - 0.01 * h),
        (cx + 0.065 * h, hy),
        (cx - 0.065 * h, hy),
        sh_l,
        sh_r,
        elb_l,
        elb_r,
        wr_l,
        wr_r,
        hip_l,
        hip_r,
        knee_l,
        knee_r,
        ank_l,
        ank_r,
    ]
}

fn seg_dist2(px: f32, py: f32, a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let l2 = dx * dx + dy * dy;
    let t = if l2 > 0.0 {
        (((px - a.0) * dx + (py - a.1) * dy) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - px, a.1 + t * dy - py);
    qx * qx + qy * qy
}

/// Color of the sprite at a point, or `None` outside its silhouette.
fn shade_point(
    app: &AppearanceCode,
    p: &PersonPose,
    j: &[(f32, f32); NUM_KEYPOINTS],
    x: f32,
    y: f32,
    lit: bool,
) -> Option<[f32; 3]> {
    let h = p.height;
    let (cx, fy) = (p.cx, p.feet_y);
    let cap = |a: usize, b: usize, r: f32| seg_dist2(x, y, j[a], j[b]) <= r * r;
    let mut color: Option<[f32; 3]> = None;

    // Legs, then torso, arms and head on top.
    for (hip, knee, ankle) in [(11, 13, 15), (12, 14, 16)] {
        if cap(hip, knee, 0.055 * h) || cap(knee, ankle, 0.048 * h) {
            color = Some(app.pants);
        }
        let (ax, ay) = j[ankle];
        if (x - ax).powi(2) + (y - ay - 0.005 * h).powi(2) <= (0.045 * h).powi(2) {
            color = Some([0.12, 0.1, 0.1]);
        }
    }
    let top = fy - 0.83 * h;
    let bottom = fy - 0.47 * h;
    if y >= top && y <= bottom {
        let t = (y - top) / (bottom - top);
        let half = (0.14 - 0.035 * t) * h;
        if (x - cx).abs() <= half {
            let (u, v) = ((x - cx + half) / h, (y - top) / h);
            let band = |q: f32| ((q / 0.045).floor() as i64).rem_euclid(2) == 1;
            let alt = match app.texture {
                Texture::Plain => false,
                Texture::HStripes => band(v),
                Texture::VStripes => band(u),
                Texture::Checker => band(u) ^ band(v),
            };
            color = Some(if alt { app.second } else { app.shirt });
        }
    }
    for (sh, el, wr) in [(5, 7, 9), (6, 8, 10)] {
        if cap(sh, el, 0.038 * h) {
            color = Some(app.shirt);
        } else if cap(el, wr, 0.032 * h) || cap(wr, wr, 0.036 * h) {
            color = Some(app.skin);
        }
    }
    let neck = ((cx, fy - 0.86 * h), (cx, fy - 0.8 * h));
    if seg_dist2(x, y, neck.0, neck.1) <= (0.035 * h).powi(2) {
        color = Some(app.skin);
    }
    let hc = (cx + p.facing * 0.01 * h, fy - 0.915 * h);
    if (x - hc.0).powi(2) + (y - hc.1).powi(2) <= (0.078 * h).powi(2) {
        color = Some(if y < hc.1 - 0.025 * h {
            app.hair
        } else {
            app.skin
        });
    }

    color.map(|c| {
        if lit {
            let rel = ((y - (fy - h)) / h).clamp(0.0, 1.0);
            let side = 1.0 - 0.12 * ((x - cx) / (0.2 * h)).clamp(-1.0, 1.0);
            let l = (1.12 - 0.32 * rel) * side;
            c.map(|v| (v * l).clamp(0.0, 1.0))
        } else {
            c
        }
    })
}

/// Paints one sprite; returns the amodal silhouette as (y, x, rgb) samples.
fn rasterize(
    app: &AppearanceCode,
    p: &PersonPose,
    fh: usize,
    fw: usize,
    lit: bool,
) -> Vec<(usize, usize, [f32; 3])> {
    let j = pose_joints(app, p);
    let pad = 0.1 * p.height;
    let xs = j.iter().map(|q| q.0);
    let x0 = xs.clone().fold(f32::INFINITY, f32::min) - pad;
    let x1 = xs.fold(f32::NEG_INFINITY, f32::max) + pad;
    let y0 = p.feet_y - 1.05 * p.height;
    let y1 = p.feet_y + 0.1 * p.height;
    let cl = |v: f32, n: usize| (v.floor().max(0.0) as usize).min(n);
    let mut out = Vec::new();
    for y in cl(y0, fh)..cl(y1 + 1.0, fh) {
        for x in cl(x0, fw)..cl(x1 + 1.0, fw) {
            if let Some(c) = shade_point(app, p, &j, x as f32 + 0.5, y as f32 + 0.5, lit) {
                out.push((y, x, c));
            }
        }
    }
    out
}

/// Renders a single sprite on a background; used to produce training targets.
pub fn render_person(
    bg: &Image,
    app: &AppearanceCode,
    p: &PersonPose,
    domain: Domain,
) -> (Image, Mask) {
    let mut img = bg.clone();
    let mut mask = Mask::new(bg.height(), bg.width());
    for (y, x, c) in rasterize(app, p, bg.height(), bg.width(), domain == Domain::Real) {
        img.set_pixel(y, x, c);
        mask.set(y, x, true);
    }
    (img, mask)
}

#[derive(Clone, Copy, Debug)]
enum Lane {
    Far,
    Middle,
    Near,
}

struct Walker {
    identity: usize,
    feet_y: f32,
    height: f32,
    x_center: f32,
    amplitude: f32,
    period: f32,
    phase0: f32,
    stride: f32,
}

impl Walker {
    fn x_at(&self, t: usize) -> f32 {
        self.x_center
            + self.amplitude * (std::f32::consts::TAU * t as f32 / self.period + self.phase0).sin()
    }

    fn poses(&self, frames: usize) -> Vec<PersonPose> {
        let mut dist = 0.0f32;
        let mut prev = self.x_at(0);
        (0..frames)
            .map(|t| {
                let x = self.x_at(t);
                dist += (x - prev).abs();
                let facing = if self.x_at(t + 1) >= x { 1.0 } else { -1.0 };
                prev = x;
                PersonPose {
                    cx: x,
                    feet_y: self.feet_y,
                    height: self.height,
                    phase: std::f32::consts::TAU * dist / self.stride,
                    facing,
                }
            })
            .collect()
    }
}

fn real_background<R: Rng>(h: usize, w: usize, rng: &mut R) -> Image {
    let horizon = (0.4 * h as f32) as usize;
    let wall = hsv(
        rng.random(),
        rng.random_range(0.1..0.4),
        rng.random_range(0.45..0.8),
    );
    let ground = hsv(
        rng.random(),
        rng.random_range(0.0..0.2),
        rng.random_range(0.4..0.7),
    );
    let mut img = Image::new(h, w);
    let tile = rng.random_range(10..16);
    for y in 0..h {
        for x in 0..w {
            let c = if y < horizon {
                wall
            } else {
                let odd = ((x / tile) + ((y - horizon) / (tile / 2))) % 2 == 1;
                let line = x % tile == 0 || (y - horizon).is_multiple_of(tile / 2);
                let f = if line {
                    0.8
                } else if odd {
                    0.93
                } else {
                    1.0
                };
                ground.map(|v| v * f)
            };
            img.set_pixel(y, x, c);
        }
    }
    // Windows and doors along the wall.
    let win_w = rng.random_range(14..24);
    let win_h = rng.random_range(10..(horizon / 2).max(11));
    let glass = hsv(
        rng.random_range(0.5..0.7),
        rng.random_range(0.1..0.4),
        rng.random_range(0.2..0.5),
    );
    let mut x = rng.random_range(2..10);
    while x + win_w < w {
        let y0 = rng.random_range(2..(horizon - win_h).max(3));
        let shade = rng.random_range(0.7..1.3f32);
        for yy in y0..(y0 + win_h).min(horizon) {
            for xx in x..x + win_w {
                let frame = yy == y0 || xx == x || xx == x + win_w - 1;
                img.set_pixel(
                    yy,
                    xx,
                    if frame {
                        wall.map(|v| v * 0.6)
                    } else {
                        glass.map(|v| (v * shade).min(1.0))
                    },
                );
            }
        }
        x += win_w + rng.random_range(8..30);
    }
    // Street furniture.
    for _ in 0..rng.random_range(2..5) {
        let pw = rng.random_range(2..6);
        let ph = rng.random_range(h / 6..h / 3);
        let px = rng.random_range(0..w - pw);
        let py = rng.random_range(horizon..h - 4);
        let c = hsv(
            rng.random(),
            rng.random_range(0.0..0.6),
            rng.random_range(0.1..0.6),
        );
        for yy in py.saturating_sub(ph)..py {
            for xx in px..px + pw {
                img.set_pixel(yy, xx, c);
            }
        }
    }
    for v in img.data_mut() {
        *v = (*v + rng.random_range(-0.04..0.04f32)).clamp(0.0, 1.0);
    }
    img
}

fn synthetic_background<R: Rng>(h: usize, w: usize, rng: &mut R) -> Image {
    let a = hsv(
        rng.random(),
        rng.random_range(0.0..0.3),
        rng.random_range(0.5..0.9),
    );
    let b = hsv(
        rng.random(),
        rng.random_range(0.0..0.3),
        rng.random_range(0.3..0.7),
    );
    let mut img = Image::new(h, w);
    for y in 0..h {
        let t = y as f32 / (h - 1).max(1) as f32;
        for x in 0..w {
            img.set_pixel(y, x, [0, 1, 2].map(|c| a[c] * (1.0 - t) + b[c] * t));
        }
    }
    img
}

struct SequenceStyle {
    tint: [f32; 3],
    blur: f32,
    noise: f32,
}

pub fn generate_toy_dataset(spec: &ToySceneSpec) -> Result<SceneDataset> {
    if spec.num_identities < 2 || spec.frames < 2 || spec.sequences < 1 || spec.max_per_sequence < 1
    {
        return Err(Error::Config(
            "toy spec needs ≥ 2 identities, ≥ 2 frames, ≥ 1 sequence and ≥ 1 pedestrian per sequence".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.occlusion_rate) {
        return Err(Error::Config("occlusion_rate must lie in [0, 1]".into()));
    }
    let (fh, fw) = (spec.height, spec.width);
    if fh < 64 || fw < 64 {
        return Err(Error::Config(format!(
            "frame {fh}×{fw} too small for a sprite (min 64×64)"
        )));
    }
    let mut id_rng = rng_for(spec.seed, &format!("identities/{}", spec.domain));
    let catalog = sample_identities(spec.num_identities, &mut id_rng);
    let per_seq = spec.num_identities.min(spec.max_per_sequence);

    let mut sequences = Vec::with_capacity(spec.sequences);
    for s in 0..spec.sequences {
        let mut rng = rng_for(spec.seed, &format!("sequence/{}/{s}", spec.domain));
        let members: Vec<usize> = (0..per_seq)
            .map(|i| (s * per_seq + i) % spec.num_identities)
            .collect();
        let mut order = members.clone();
        order.shuffle(&mut rng);

        let n_mid = (spec.occlusion_rate * per_seq as f64).round() as usize;
        let n_far = (per_seq - n_mid).div_ceil(2);
        let mut lanes = Vec::new();
        lanes.extend(std::iter::repeat_n(Lane::Middle, n_mid));
        lanes.extend(std::iter::repeat_n(Lane::Far, n_far));
        lanes.extend(std::iter::repeat_n(Lane::Near, per_seq - n_mid - n_far));

        let hf = fh as f32;
        let (far_h, mid_h, near_h) = (0.42 * hf, 0.445 * hf, 0.47 * hf);
        let (far_y, mid_y, near_y) = (0.49 * hf, 0.73 * hf, 0.985 * hf);
        let mut seg_index = BTreeMap::<u8, usize>::new();
        let count = |l: u8| lanes.iter().filter(|x| (**x as u8) == l).count();
        let mut walkers = Vec::new();
        for (&identity, &lane) in order.iter().zip(&lanes) {
            let app = &catalog[identity];
            let (feet_y, base_h) = match lane {
                Lane::Far => (far_y, far_h),
                Lane::Middle => (mid_y, mid_h),
                Lane::Near => (near_y, near_h),
            };
            let height = base_h * app.height_factor;
            let body_w = 0.6 * height;
            let (x_center, amplitude, period) = match lane {
                Lane::Middle => {
                    let a = (fw as f32 - body_w) / 2.0 - 2.0;
                    (fw as f32 / 2.0, a, rng.random_range(90.0..160.0))
                }
                _ => {
                    let n = count(lane as u8);
                    let k = seg_index.entry(lane as u8).or_insert(0);
                    let seg_w = fw as f32 / n as f32;
                    if seg_w < body_w + 4.0 {
                        return Err(Error::Config(format!(
                            "frame width {fw} cannot hold {n} pedestrians side by side"
                        )));
                    }
                    let c = seg_w * (*k as f32 + 0.5);
                    *k += 1;
                    (
                        c,
                        (seg_w - body_w) / 2.0 - 1.0,
                        rng.random_range(30.0..60.0),
                    )
                }
            };
            walkers.push(Walker {
                identity,
                feet_y,
                height,
                x_center,
                amplitude: amplitude.max(0.0),
                period,
                phase0: rng.random_range(0.0..std::f32::consts::TAU),
                stride: 0.9 * height,
            });
        }
        // Back to front; ties keep creation order.
        let mut depth: Vec<usize> = (0..walkers.len()).collect();
        depth.sort_by(|&a, &b| walkers[a].feet_y.total_cmp(&walkers[b].feet_y));

        let real = spec.domain == Domain::Real;
        let bg = if real {
            real_background(fh, fw, &mut rng)
        } else {
            synthetic_background(fh, fw, &mut rng)
        };
        let style = SequenceStyle {
            tint: [0, 1, 2].map(|_| rng.random_range(0.9..1.1)),
            blur: rng.random_range(0.9..1.0),
            noise: rng.random_range(0.015..0.02),
        };
        let poses: Vec<Vec<PersonPose>> = walkers.iter().map(|w| w.poses(spec.frames)).collect();

        let mut frames = Vec::with_capacity(spec.frames);
        let mut annotations = Vec::new();
        for t in 0..spec.frames {
            let mut img = bg.clone();
            let mut owner = vec![usize::MAX; fh * fw];
            let mut amodal = vec![0usize; walkers.len()];
            let mut extent = vec![None::<(usize, usize, usize, usize)>; walkers.len()];
            for &p in &depth {
                let w = &walkers[p];
                for (y, x, c) in rasterize(&catalog[w.identity], &poses[p][t], fh, fw, real) {
                    img.set_pixel(y, x, c);
                    owner[y * fw + x] = p;
                    amodal[p] += 1;
                    extent[p] = Some(match extent[p] {
                        None => (y, x, y, x),
                        Some((y0, x0, y1, x1)) => (y0.min(y), x0.min(x), y1.max(y), x1.max(x)),
                    });
                }
            }
            if real {
                let mut fr_rng = rng_for(spec.seed, &format!("noise/{s}/{t}"));
                for c in 0..3 {
                    img.plane_mut(c)
                        .iter_mut()
                        .for_each(|v| *v *= style.tint[c]);
                }
                img = img.gaussian_blur(style.blur);
                for v in img.data_mut() {
                    let n: f32 = rng_normal(&mut fr_rng);
                    *v += style.noise * n;
                }
            }
            img.quantize8();

            for p in 0..walkers.len() {
                let Some((y0, x0, y1, x1)) = extent[p] else {
                    continue;
                };
                let mut mask = Mask::new(fh, fw);
                let mut visible = 0usize;
                for (i, &o) in owner.iter().enumerate() {
                    if o == p {
                        mask.set(i / fw, i % fw, true);
                        visible += 1;
                    }
                }
                let joints = pose_joints(&catalog[walkers[p].identity], &poses[p][t]);
                let mut kps = [Keypoint::default(); NUM_KEYPOINTS];
                for (k, &(x, y)) in kps.iter_mut().zip(&joints) {
                    let inside = x >= 0.0 && y >= 0.0 && (x as usize) < fw && (y as usize) < fh;
                    *k = Keypoint {
                        x: x as f64,
                        y: y as f64,
                        visible: inside && mask.get(y as usize, x as usize),
                    };
                }
                let bbox = BoundingBox::new(
                    x0 as f64,
                    y0 as f64,
                    (x1 - x0 + 1) as f64,
                    (y1 - y0 + 1) as f64,
                );
                let mut ann = InstanceAnnotation::new(
                    t as u32 + 1,
                    walkers[p].identity as u32 + 1,
                    bbox,
                    visible as f64 / amodal[p] as f64,
                );
                ann.mask = Some(mask);
                ann.keypoints = Some(KeypointSet(kps));
                annotations.push(ann);
            }
            frames.push(img);
        }
        annotations.sort_by_key(|a| (a.frame, a.track_id));
        sequences.push(Sequence {
            name: format!(
                "TOY-{}-{:02}",
                spec.domain.to_string().to_uppercase(),
                s + 1
            ),
            frames,
            annotations,
            frame_rate: spec.frame_rate,
            identities: members.iter().map(|&i| (i as u32 + 1, i)).collect(),
        });
    }
    Ok(SceneDataset {
        domain: spec.domain,
        sequences,
        catalog,
    })
}

fn rng_normal<R: Rng>(rng: &mut R) -> f32 {
    rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, occ: f64) -> ToySceneSpec {
        ToySceneSpec {
            num_identities: 4,
            sequences: 1,
            frames: 10,
            occlusion_rate: occ,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_toy_dataset(&small(7, 0.25)).unwrap();
        let b = generate_toy_dataset(&small(7, 0.25)).unwrap();
        assert_eq!(a, b);
        let c = generate_toy_dataset(&small(8, 0.25)).unwrap();
        assert_ne!(a.sequences[0].frames[0], c.sequences[0].frames[0]);
    }

    #[test]
    fn no_occlusion_means_full_visibility() {
        let d = generate_toy_dataset(&small(3, 0.0)).unwrap();
        assert!(d.sequences[0]
            .annotations
            .iter()
            .all(|a| a.visibility == 1.0));
        assert_eq!(d.sequences[0].annotations.len(), 40);
    }

    #[test]
    fn masks_inside_dilated_boxes() {
        let d = generate_toy_dataset(&small(7, 0.5)).unwrap();
        for a in &d.sequences[0].annotations {
            let m = a.mask.as_ref().unwrap();
            let b = a.bbox.dilated(0.1);
            if let Some((y0, x0, y1, x1)) = m.bounds() {
                assert!(x0 as f64 >= b.left && (x1 + 1) as f64 <= b.right());
                assert!(y0 as f64 >= b.top && (y1 + 1) as f64 <= b.bottom());
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = small(1, 0.0);
        s.num_identities = 1;
        assert!(matches!(generate_toy_dataset(&s), Err(Error::Config(_))));
        let mut s = small(1, 0.0);
        s.height = 40;
        assert!(matches!(generate_toy_dataset(&s), Err(Error::Config(_))));
        let mut s = small(1, 0.0);
        s.width = 70;
        s.num_identities = 8;
        assert!(matches!(generate_toy_dataset(&s), Err(Error::Config(_))));
    }
}
