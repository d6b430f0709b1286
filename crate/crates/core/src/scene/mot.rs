//! MOT ground-truth CSV: `frame,id,left,top,width,height,conf,class,visibility`.

use std::path::Path;

use super::{BoundingBox, InstanceAnnotation};
use crate::error::{Error, Result};

pub fn parse_mot_annotations(path: &Path, frame_count: u32) -> Result<Vec<InstanceAnnotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mot_str(&text, frame_count).map_err(|e| match e {
        Error::Parse { line, msg, .. } => Error::Parse {
            path: path.display().to_string(),
            line,
            msg,
        },
        other => other,
    })
}

pub fn parse_mot_str(text: &str, frame_count: u32) -> Result<Vec<InstanceAnnotation>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let perr = |msg: String| Error::Parse {
            path: String::new(),
            line: lineno,
            msg,
        };
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() < 9 {
            return Err(perr(format!("expected 9 columns, found {}", cols.len())));
        }
        let num = |k: usize| -> Result<f64> {
            cols[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| perr(format!("column {} is not a number: {:?}", k + 1, cols[k])))
        };
        let int = |k: usize| -> Result<i64> {
            let v = num(k)?;
            if v.fract() != 0.0 {
                return Err(perr(format!("column {} is not an integer", k + 1)));
            }
            Ok(v as i64)
        };
        let frame = int(0)?;
        let id = int(1)?;
        if frame < 1 || id < 1 {
            return Err(perr("frame and id must be ≥ 1".into()));
        }
        let bbox = BoundingBox::new(num(2)?, num(3)?, num(4)?, num(5)?);
        if !bbox.is_valid() {
            return Err(perr("box width and height must be positive".into()));
        }
        let conf = num(6)?;
        let class_id = int(7)? as i32;
        let visibility = num(8)?;
        if !(0.0..=1.0).contains(&visibility) {
            return Err(perr(format!("visibility {visibility} outside [0, 1]")));
        }
        if frame as u64 > frame_count as u64 {
            return Err(Error::Range(format!(
                "line {lineno}: frame {frame} exceeds sequence length {frame_count}"
            )));
        }
        let mut ann = InstanceAnnotation::new(frame as u32, id as u32, bbox, visibility);
        ann.active = conf != 0.0;
        ann.class_id = class_id;
        out.push(ann);
    }
    Ok(out)
}

pub fn format_mot_line(a: &InstanceAnnotation) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        a.frame,
        a.track_id,
        a.bbox.left,
        a.bbox.top,
        a.bbox.width,
        a.bbox.height,
        a.active as u8,
        a.class_id,
        a.visibility
    )
}

pub fn write_mot_annotations(path: &Path, anns: &[InstanceAnnotation]) -> Result<()> {
    let mut text = String::new();
    for a in anns {
        text.push_str(&format_mot_line(a));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
