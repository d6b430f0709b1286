//! Instance crops at the generator resolution and their inverse.

use super::{BoundingBox, InstanceAnnotation, Keypoint, KeypointSet, NUM_KEYPOINTS, SKELETON};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};

/// Integer frame rectangle and the resize that maps it onto the crop grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropTransform {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl CropTransform {
    pub fn for_box(
        b: &BoundingBox,
        margin: f64,
        frame_h: usize,
        frame_w: usize,
        out_h: usize,
        out_w: usize,
    ) -> Result<Self> {
        if margin < 0.0 || !margin.is_finite() {
            return Err(Error::Crop(format!("context margin {margin} must be ≥ 0")));
        }
        let x0 = (b.left - margin * b.width).floor().max(0.0);
        let y0 = (b.top - margin * b.height).floor().max(0.0);
        let x1 = (b.right() + margin * b.width).ceil().min(frame_w as f64);
        let y1 = (b.bottom() + margin * b.height).ceil().min(frame_h as f64);
        if x1 - x0 < 1.0 || y1 - y0 < 1.0 {
            return Err(Error::Crop(format!(
                "box ({}, {}, {}, {}) lies outside the {frame_h}×{frame_w} frame",
                b.left, b.top, b.width, b.height
            )));
        }
        Ok(Self {
            x0: x0 as usize,
            y0: y0 as usize,
            width: (x1 - x0) as usize,
            height: (y1 - y0) as usize,
            out_h,
            out_w,
        })
    }

    pub fn to_crop(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.x0 as f64) * self.out_w as f64 / self.width as f64,
            (y - self.y0 as f64) * self.out_h as f64 / self.height as f64,
        )
    }

    pub fn to_frame(&self, x: f64, y: f64) -> (f64, f64) {
        (
            x * self.width as f64 / self.out_w as f64 + self.x0 as f64,
            y * self.height as f64 / self.out_h as f64 + self.y0 as f64,
        )
    }

    pub fn map_keypoints(&self, k: &KeypointSet) -> KeypointSet {
        let mut out = k.0;
        for p in out.iter_mut() {
            let (x, y) = self.to_crop(p.x, p.y);
            *p = Keypoint {
                x,
                y,
                visible: p.visible,
            };
        }
        KeypointSet(out)
    }

    /// Frame region resampled onto the crop grid.
    pub fn extract(&self, frame: &Image) -> Image {
        frame
            .sub_image(self.y0, self.x0, self.height, self.width)
            .resize(self.out_h, self.out_w)
    }

    pub fn extract_mask(&self, m: &Mask) -> Mask {
        m.sub_mask(self.y0, self.x0, self.height, self.width)
            .resize(self.out_h, self.out_w)
    }

    /// Crop-grid image resampled back onto the frame region.
    pub fn restore(&self, crop: &Image) -> Image {
        crop.resize(self.height, self.width)
    }
}

#[derive(Clone, Debug)]
pub struct InstanceCrop {
    pub image: Image,
    pub mask: Mask,
    pub keypoints: KeypointSet,
    pub transform: CropTransform,
}

pub fn crop_instance(
    image: &Image,
    ann: &InstanceAnnotation,
    margin: f64,
    out_h: usize,
    out_w: usize,
) -> Result<InstanceCrop> {
    let mask = ann.mask.as_ref().ok_or_else(|| {
        Error::Data(format!(
            "frame {} track {} has no mask",
            ann.frame, ann.track_id
        ))
    })?;
    let t = CropTransform::for_box(
        &ann.bbox,
        margin,
        image.height(),
        image.width(),
        out_h,
        out_w,
    )?;
    let keypoints = ann
        .keypoints
        .map(|k| t.map_keypoints(&k))
        .unwrap_or(KeypointSet([Keypoint::default(); NUM_KEYPOINTS]));
    Ok(InstanceCrop {
        image: t.extract(image),
        mask: t.extract_mask(mask),
        keypoints,
        transform: t,
    })
}

/// Writes the change `edited − original` back into the frame region.
///
/// An unmodified crop leaves the frame bit-identical.
pub fn paste_back(frame: &mut Image, edited: &Image, original: &Image, t: &CropTransform) {
    let mut delta = edited.clone();
    for (d, o) in delta.data_mut().iter_mut().zip(original.data()) {
        *d -= o;
    }
    let up = t.restore(&delta);
    for c in 0..3 {
        for y in 0..t.height {
            for x in 0..t.width {
                let d = up.get(c, y, x);
                if d != 0.0 {
                    let v = frame.get(c, t.y0 + y, t.x0 + x) + d;
                    frame.set(c, t.y0 + y, t.x0 + x, v.clamp(0.0, 1.0));
                }
            }
        }
    }
}

/// Joints map on an `h × w` grid: discs on visible joints, segments on visible limbs.
///
/// Radii are given at 256 px crop height and scale with `h`.
pub fn render_joints_map(k: &KeypointSet, h: usize, w: usize) -> Vec<f32> {
    let s = h as f64 / 256.0;
    let disc = (5.0 * s).max(1.5);
    let limb = (1.5 * s).max(0.75);
    let mut out = vec![0.0f32; h * w];
    let pts = &k.0;
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let on_disc = pts
                .iter()
                .any(|p| p.visible && (p.x - px).powi(2) + (p.y - py).powi(2) <= disc * disc);
            let on_limb = || {
                SKELETON.iter().any(|&(a, b)| {
                    let (pa, pb) = (&pts[a], &pts[b]);
                    pa.visible && pb.visible && seg_dist(px, py, (pa.x, pa.y), (pb.x, pb.y)) <= limb
                })
            };
            if on_disc || on_limb() {
                out[y * w + x] = 1.0;
            }
        }
    }
    out
}

fn seg_dist(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let l2 = dx * dx + dy * dy;
    let t = if l2 > 0.0 {
        (((px - a.0) * dx + (py - a.1) * dy) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((a.0 + t * dx - px).powi(2) + (a.1 + t * dy - py).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn noise(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..3 * h * w).map(|_| rng.random::<f32>()).collect();
        Image::from_planar(h, w, data).unwrap()
    }

    fn ann_with(b: BoundingBox, h: usize, w: usize) -> InstanceAnnotation {
        let mut a = InstanceAnnotation::new(1, 1, b, 1.0);
        a.mask = Some(Mask::new(h, w));
        let mut k = [Keypoint::default(); NUM_KEYPOINTS];
        let (cx, cy) = b.center();
        k[0] = Keypoint {
            x: cx,
            y: cy,
            visible: true,
        };
        k[1] = Keypoint {
            x: b.left + 3.0,
            y: b.top + 7.0,
            visible: true,
        };
        a.keypoints = Some(KeypointSet(k));
        a
    }

    #[test]
    fn exact_size_box_is_a_plain_sub_image() {
        let img = noise(300, 200, 1);
        let a = ann_with(BoundingBox::new(30.0, 20.0, 128.0, 256.0), 300, 200);
        let c = crop_instance(&img, &a, 0.0, 256, 128).unwrap();
        assert_eq!(c.image, img.sub_image(20, 30, 256, 128));
        assert_eq!((c.keypoints.0[1].x, c.keypoints.0[1].y), (3.0, 7.0));
        assert_eq!((c.keypoints.0[0].x, c.keypoints.0[0].y), (64.0, 128.0));
    }

    #[test]
    fn box_center_maps_to_crop_center() {
        let img = noise(200, 200, 2);
        let a = ann_with(BoundingBox::new(60.0, 40.0, 40.0, 80.0), 200, 200);
        let c = crop_instance(&img, &a, 0.25, 256, 128).unwrap();
        assert_eq!((c.keypoints.0[0].x, c.keypoints.0[0].y), (64.0, 128.0));
        let (fx, fy) = c.transform.to_frame(64.0, 128.0);
        assert_eq!((fx, fy), (80.0, 80.0));
    }

    #[test]
    fn unmodified_paste_is_identity() {
        let img = noise(90, 70, 3);
        let a = ann_with(BoundingBox::new(-5.0, 10.0, 33.0, 61.0), 90, 70);
        let c = crop_instance(&img, &a, 0.25, 64, 32).unwrap();
        let mut out = img.clone();
        paste_back(&mut out, &c.image, &c.image, &c.transform);
        assert_eq!(out, img);
    }

    #[test]
    fn outside_box_is_an_error() {
        let img = noise(50, 50, 4);
        let a = ann_with(BoundingBox::new(80.0, 10.0, 10.0, 10.0), 50, 50);
        assert!(matches!(
            crop_instance(&img, &a, 0.25, 64, 32),
            Err(Error::Crop(_))
        ));
    }

    #[test]
    fn joints_map_marks_visible_joints_only() {
        let mut k = [Keypoint::default(); NUM_KEYPOINTS];
        k[0] = Keypoint {
            x: 16.0,
            y: 10.0,
            visible: true,
        };
        k[5] = Keypoint {
            x: 5.0,
            y: 50.0,
            visible: false,
        };
        let m = render_joints_map(&KeypointSet(k), 64, 32);
        assert_eq!(m[10 * 32 + 16], 1.0);
        assert_eq!(m[50 * 32 + 5], 0.0);
    }
}
