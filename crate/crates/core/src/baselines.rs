//! Handcrafted de-identification baselines: white cutout, black-white blur and face blur.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::scene::{InstanceAnnotation, SceneDataset, Sequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    WhiteCutout,
    BlackWhiteBlur,
    FaceBlur,
}

impl std::str::FromStr for Baseline {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white-cutout" | "cutout" => Ok(Baseline::WhiteCutout),
            "blackwhite-blur" | "bw-blur" | "blur" => Ok(Baseline::BlackWhiteBlur),
            "face-blur" => Ok(Baseline::FaceBlur),
            o => Err(Error::Usage(format!(
                "unknown baseline {o:?} (white-cutout, blackwhite-blur, face-blur)"
            ))),
        }
    }
}

/// Blur strength for a person of the given box height.
pub fn blur_sigma(box_height: f64) -> f64 {
    (box_height / 16.0).max(2.0)
}

/// Instances to process in a frame, back to front by box bottom edge.
pub(crate) fn processing_order(seq: &Sequence, frame: u32) -> Vec<&InstanceAnnotation> {
    let mut anns: Vec<&InstanceAnnotation> = seq
        .annotations_in(frame)
        .filter(|a| a.visibility > 0.0)
        .collect();
    anns.sort_by(|a, b| {
        a.bbox
            .bottom()
            .total_cmp(&b.bbox.bottom())
            .then(a.track_id.cmp(&b.track_id))
    });
    anns
}

pub(crate) fn require_mask(a: &InstanceAnnotation) -> Result<&Mask> {
    a.mask.as_ref().ok_or_else(|| Error::Pipeline {
        frame: a.frame,
        track: a.track_id,
        msg: "instance has no mask".into(),
    })
}

/// Gaussian blur of the luma restricted to the masked pixels (normalized convolution),
/// written back under `region`.
fn masked_gray_blur(frame: &mut Image, mask: &Mask, region: &Mask, sigma: f64) {
    let Some((y0, x0, y1, x1)) = region.bounds() else {
        return;
    };
    let r = (3.0 * sigma).ceil() as usize;
    let (h, w) = frame.dims();
    let (by0, bx0) = (y0.saturating_sub(r), x0.saturating_sub(r));
    let (by1, bx1) = ((y1 + r + 1).min(h), (x1 + r + 1).min(w));
    let (bh, bw) = (by1 - by0, bx1 - bx0);
    let k: Vec<f64> = (0..=2 * r)
        .map(|i| {
            let d = i as f64 - r as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let mut val = vec![0.0f64; bh * bw];
    let mut wt = vec![0.0f64; bh * bw];
    for y in 0..bh {
        for x in 0..bw {
            if mask.get(by0 + y, bx0 + x) {
                let p = frame.pixel(by0 + y, bx0 + x);
                val[y * bw + x] = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                wt[y * bw + x] = 1.0;
            }
        }
    }
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; bh * bw];
        for y in 0..bh {
            for x in 0..bw {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let o = i as isize - r as isize;
                    let (yy, xx) = if horizontal {
                        (y as isize, x as isize + o)
                    } else {
                        (y as isize + o, x as isize)
                    };
                    if yy >= 0 && xx >= 0 && (yy as usize) < bh && (xx as usize) < bw {
                        acc += kv * src[yy as usize * bw + xx as usize];
                    }
                }
                out[y * bw + x] = acc;
            }
        }
        out
    };
    let bv = pass(&pass(&val, true), false);
    let bwt = pass(&pass(&wt, true), false);
    for y in y0..=y1 {
        for x in x0..=x1 {
            if region.get(y, x) {
                let i = (y - by0) * bw + (x - bx0);
                let l = if bwt[i] > 0.0 {
                    (bv[i] / bwt[i]) as f32
                } else {
                    0.0
                };
                frame.set_pixel(y, x, [l; 3]);
            }
        }
    }
}

/// Mask rows in the top sixth of the mask's vertical extent.
pub fn face_region(mask: &Mask) -> Mask {
    let mut out = Mask::new(mask.height(), mask.width());
    if let Some((y0, _, y1, _)) = mask.bounds() {
        let rows = (y1 - y0 + 1).div_ceil(6);
        for y in y0..y0 + rows {
            for x in 0..mask.width() {
                if mask.get(y, x) {
                    out.set(y, x, true);
                }
            }
        }
    }
    out
}

pub fn apply_baseline_frame(
    frame: &Image,
    seq: &Sequence,
    k: u32,
    kind: Baseline,
) -> Result<Image> {
    let mut out = frame.clone();
    for a in processing_order(seq, k) {
        let m = require_mask(a)?;
        match kind {
            Baseline::WhiteCutout => {
                for y in 0..m.height() {
                    for x in 0..m.width() {
                        if m.get(y, x) {
                            out.set_pixel(y, x, [1.0; 3]);
                        }
                    }
                }
            }
            Baseline::BlackWhiteBlur => masked_gray_blur(&mut out, m, m, blur_sigma(a.bbox.height)),
            Baseline::FaceBlur => {
                masked_gray_blur(&mut out, m, &face_region(m), blur_sigma(a.bbox.height))
            }
        }
    }
    out.quantize8();
    Ok(out)
}

/// Applies a baseline to every frame. Annotations are kept unchanged.
pub fn apply_baseline(ds: &SceneDataset, kind: Baseline) -> Result<SceneDataset> {
    let mut out = ds.clone();
    for (seq, src) in out.sequences.iter_mut().zip(&ds.sequences) {
        for (i, f) in seq.frames.iter_mut().enumerate() {
            *f = apply_baseline_frame(&src.frames[i], src, i as u32 + 1, kind)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_toy_dataset, BoundingBox, ToySceneSpec};

    fn tiny() -> SceneDataset {
        generate_toy_dataset(&ToySceneSpec {
            num_identities: 3,
            sequences: 1,
            frames: 2,
            max_per_sequence: 3,
            ..Default::default()
        })
        .unwrap()
    }

    fn union(seq: &Sequence, k: u32) -> Mask {
        let (h, w) = seq.frame(k).dims();
        let mut u = Mask::new(h, w);
        for a in seq.annotations_in(k) {
            u.union_with(a.mask.as_ref().unwrap());
        }
        u
    }

    #[test]
    fn cutout_whitens_only_masks() {
        let ds = tiny();
        let out = apply_baseline(&ds, Baseline::WhiteCutout).unwrap();
        let (s, o) = (&ds.sequences[0], &out.sequences[0]);
        let u = union(s, 1);
        for y in 0..u.height() {
            for x in 0..u.width() {
                if u.get(y, x) {
                    assert_eq!(o.frame(1).pixel(y, x), [1.0; 3]);
                } else {
                    assert_eq!(o.frame(1).pixel(y, x), s.frame(1).pixel(y, x));
                }
            }
        }
        assert_eq!(o.annotations, s.annotations);
    }

    #[test]
    fn blur_of_constant_gray_is_unchanged() {
        let mut frame = Image::filled(40, 30, [0.4, 0.4, 0.4]);
        frame.quantize8();
        let mut m = Mask::new(40, 30);
        for y in 5..35 {
            for x in 10..20 {
                m.set(y, x, true);
            }
        }
        let before = frame.clone();
        masked_gray_blur(&mut frame, &m, &m, 3.0);
        assert!(frame.mean_abs_diff(&before) < 1e-6);
        let mut ann = crate::scene::InstanceAnnotation::new(
            1,
            1,
            BoundingBox::new(10.0, 5.0, 10.0, 30.0),
            1.0,
        );
        ann.mask = Some(m);
        let seq = Sequence {
            name: "c".into(),
            frames: vec![before.clone()],
            annotations: vec![ann],
            frame_rate: 30,
            identities: Default::default(),
        };
        let out = apply_baseline_frame(&before, &seq, 1, Baseline::BlackWhiteBlur).unwrap();
        assert_eq!(out, before);
    }

    #[test]
    fn face_blur_touches_only_top_sixth() {
        let ds = tiny();
        let s = &ds.sequences[0];
        let out = apply_baseline(&ds, Baseline::FaceBlur).unwrap();
        let mut allowed = Mask::new(s.frame(1).height(), s.frame(1).width());
        for a in s.annotations_in(1) {
            allowed.union_with(&face_region(a.mask.as_ref().unwrap()));
        }
        let (f0, f1) = (s.frame(1), out.sequences[0].frame(1));
        let mut changed = 0;
        for y in 0..allowed.height() {
            for x in 0..allowed.width() {
                if f0.pixel(y, x) != f1.pixel(y, x) {
                    assert!(
                        allowed.get(y, x),
                        "pixel ({y},{x}) changed outside the face band"
                    );
                    changed += 1;
                }
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn missing_mask_names_instance() {
        let mut ds = tiny();
        let a = &mut ds.sequences[0].annotations[0];
        a.mask = None;
        let (f, t) = (a.frame, a.track_id);
        match apply_baseline(&ds, Baseline::WhiteCutout) {
            Err(Error::Pipeline { frame, track, .. }) => assert_eq!((frame, track), (f, t)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
