//! Instrumented frame access: every pixel read is checked against the union of instance masks.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::image::{Image, Mask};
use crate::scene::CropTransform;

/// Read counters collected from one or more [`AuditedFrame`]s.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessAudit {
    pub pixel_reads: u64,
    pub masked_reads: u64,
}

impl AccessAudit {
    pub fn merge(&mut self, other: AccessAudit) {
        self.pixel_reads += other.pixel_reads;
        self.masked_reads += other.masked_reads;
    }

    pub fn is_clean(&self) -> bool {
        self.masked_reads == 0
    }
}

/// A source frame whose pixels may only be read through this wrapper.
pub struct AuditedFrame<'a> {
    frame: &'a Image,
    protected: &'a Mask,
    reads: Cell<u64>,
    masked: Cell<u64>,
}

impl<'a> AuditedFrame<'a> {
    pub fn new(frame: &'a Image, protected: &'a Mask) -> Self {
        assert_eq!(
            frame.dims(),
            protected.dims(),
            "mask and frame sizes differ"
        );
        Self {
            frame,
            protected,
            reads: Cell::new(0),
            masked: Cell::new(0),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frame.dims()
    }

    pub fn is_protected(&self, y: usize, x: usize) -> bool {
        self.protected.get(y, x)
    }

    /// Reads one pixel. Reads inside the protected mask are counted as violations.
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        self.reads.set(self.reads.get() + 1);
        if self.protected.get(y, x) {
            self.masked.set(self.masked.get() + 1);
        }
        self.frame.pixel(y, x)
    }

    /// Frame region with protected pixels zeroed, resampled onto the crop grid;
    /// crop pixels under `crop_mask` are zeroed as well.
    pub fn background_crop(&self, t: &CropTransform, crop_mask: &Mask) -> Image {
        let mut region = Image::new(t.height, t.width);
        for y in 0..t.height {
            for x in 0..t.width {
                let (fy, fx) = (t.y0 + y, t.x0 + x);
                if !self.is_protected(fy, fx) {
                    region.set_pixel(y, x, self.pixel(fy, fx));
                }
            }
        }
        let mut out = region.resize(t.out_h, t.out_w);
        for y in 0..t.out_h {
            for x in 0..t.out_w {
                if crop_mask.get(y, x) {
                    out.set_pixel(y, x, [0.0; 3]);
                }
            }
        }
        out
    }

    /// `h × w` patch at `(y0, x0)` with protected pixels replaced by the median
    /// of the readable ones. `None` when more than `max_masked` of it is protected.
    pub fn filled_patch(
        &self,
        y0: usize,
        x0: usize,
        h: usize,
        w: usize,
        max_masked: f64,
    ) -> Option<Image> {
        let mut masked = 0usize;
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                masked += usize::from(self.is_protected(y, x));
            }
        }
        if masked as f64 > max_masked * (h * w) as f64 || masked == h * w {
            return None;
        }
        let mut out = Image::new(h, w);
        let mut chans: [Vec<f32>; 3] = Default::default();
        for y in 0..h {
            for x in 0..w {
                if !self.is_protected(y0 + y, x0 + x) {
                    let p = self.pixel(y0 + y, x0 + x);
                    out.set_pixel(y, x, p);
                    for c in 0..3 {
                        chans[c].push(p[c]);
                    }
                }
            }
        }
        let median: Vec<f32> = chans
            .iter_mut()
            .map(|v| {
                v.sort_by(f32::total_cmp);
                v[v.len() / 2]
            })
            .collect();
        for y in 0..h {
            for x in 0..w {
                if self.is_protected(y0 + y, x0 + x) {
                    out.set_pixel(y, x, [median[0], median[1], median[2]]);
                }
            }
        }
        Some(out)
    }

    pub fn audit(&self) -> AccessAudit {
        AccessAudit {
            pixel_reads: self.reads.get(),
            masked_reads: self.masked.get(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn background_crop_never_reads_protected_pixels() {
        let frame = Image::filled(20, 10, [0.5, 0.2, 0.9]);
        let mut m = Mask::new(20, 10);
        for y in 5..15 {
            for x in 3..7 {
                m.set(y, x, true);
            }
        }
        let a = AuditedFrame::new(&frame, &m);
        let t = CropTransform {
            x0: 0,
            y0: 0,
            width: 10,
            height: 20,
            out_h: 20,
            out_w: 10,
        };
        let crop = a.background_crop(&t, &m);
        assert_eq!(crop.pixel(10, 5), [0.0; 3]);
        assert_eq!(crop.pixel(0, 0), [0.5, 0.2, 0.9]);
        assert_eq!(a.audit().masked_reads, 0);
        assert_eq!(a.audit().pixel_reads, 200 - 40);
        a.pixel(10, 5);
        assert!(!a.audit().is_clean());
    }

    #[test]
    fn patch_fill_uses_median_and_rejects_mostly_masked() {
        let mut frame = Image::filled(8, 8, [0.1, 0.1, 0.1]);
        frame.set_pixel(0, 0, [0.9, 0.9, 0.9]);
        let mut m = Mask::new(8, 8);
        m.set(4, 4, true);
        let a = AuditedFrame::new(&frame, &m);
        let p = a.filled_patch(0, 0, 8, 8, 0.6).unwrap();
        assert_eq!(p.pixel(4, 4), [0.1, 0.1, 0.1]);
        assert!(a.audit().is_clean());
        let full = Mask::from_data(8, 8, vec![1; 64]).unwrap();
        assert!(AuditedFrame::new(&frame, &full)
            .filled_patch(0, 0, 8, 8, 0.6)
            .is_none());
    }
}
