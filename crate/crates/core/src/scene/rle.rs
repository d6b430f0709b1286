//! Run-length mask files, one instance per line: `frame id class img_h img_w counts...`.
//!
//! Counts follow the uncompressed COCO convention: column-major order,
//! alternating runs that start with background.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Mask;

pub fn encode_rle(mask: &Mask) -> Vec<u32> {
    let (h, w) = mask.dims();
    let mut counts = Vec::new();
    let mut cur = false;
    let mut run = 0u32;
    for x in 0..w {
        for y in 0..h {
            let v = mask.get(y, x);
            if v != cur {
                counts.push(run);
                run = 0;
                cur = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    counts
}

pub fn decode_rle(counts: &[u32], h: usize, w: usize) -> Result<Mask> {
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total != (h * w) as u64 {
        return Err(Error::Decode(format!(
            "run lengths sum to {total}, mask has {} pixels",
            h * w
        )));
    }
    let mut mask = Mask::new(h, w);
    let mut pos = 0usize;
    for (i, &c) in counts.iter().enumerate() {
        if i % 2 == 1 {
            for p in pos..pos + c as usize {
                mask.set(p % h, p / h, true);
            }
        }
        pos += c as usize;
    }
    Ok(mask)
}

pub fn parse_mask_str(text: &str) -> Result<BTreeMap<(u32, u32), (i32, Mask)>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse {
            path: String::new(),
            line: i + 1,
            msg,
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 6 {
            return Err(perr(
                "expected `frame id class img_h img_w counts...`".into(),
            ));
        }
        let int = |k: usize| -> Result<i64> {
            toks[k]
                .parse::<i64>()
                .map_err(|_| perr(format!("field {} is not an integer: {:?}", k + 1, toks[k])))
        };
        let (frame, id, class) = (int(0)?, int(1)?, int(2)?);
        let (h, w) = (int(3)?, int(4)?);
        if frame < 1 || id < 1 || h < 1 || w < 1 {
            return Err(perr("frame, id and size must be positive".into()));
        }
        let counts = toks[5..]
            .iter()
            .map(|t| {
                t.parse::<u32>()
                    .map_err(|_| perr(format!("bad run length {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mask = decode_rle(&counts, h as usize, w as usize)
            .map_err(|e| Error::Decode(format!("line {}: {e}", i + 1)))?;
        if out
            .insert((frame as u32, id as u32), (class as i32, mask))
            .is_some()
        {
            return Err(perr(format!("duplicate mask for frame {frame} id {id}")));
        }
    }
    Ok(out)
}

pub fn parse_mask_file(path: &Path) -> Result<BTreeMap<(u32, u32), Mask>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_mask_str(&text)?
        .into_iter()
        .map(|(k, (_, m))| (k, m))
        .collect())
}

pub fn write_mask_file(path: &Path, entries: &[(u32, u32, i32, &Mask)]) -> Result<()> {
    let mut text = String::new();
    for (frame, id, class, m) in entries {
        let counts: Vec<String> = encode_rle(m).iter().map(u32::to_string).collect();
        text.push_str(&format!(
            "{frame} {id} {class} {} {} {}\n",
            m.height(),
            m.width(),
            counts.join(" ")
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn right_half_from_two_runs() {
        let m = decode_rle(&[8, 8], 4, 4).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(m.get(y, x), x >= 2);
            }
        }
    }

    #[test]
    fn all_background_and_bad_sum() {
        assert_eq!(decode_rle(&[16], 4, 4).unwrap().count(), 0);
        assert!(matches!(decode_rle(&[8, 7], 4, 4), Err(Error::Decode(_))));
        assert!(matches!(
            parse_mask_str("1 1 1 4 4 8 7"),
            Err(Error::Decode(_))
        ));
    }

    #[test]
    fn leading_foreground_gets_zero_run() {
        let mut m = Mask::new(2, 2);
        m.set(0, 0, true);
        assert_eq!(encode_rle(&m), vec![0, 1, 3]);
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(h in 1usize..9, w in 1usize..9, bits in proptest::collection::vec(any::<bool>(), 64)) {
            let data: Vec<u8> = (0..h * w).map(|i| bits[i] as u8).collect();
            let m = Mask::from_data(h, w, data).unwrap();
            prop_assert_eq!(decode_rle(&encode_rle(&m), h, w).unwrap(), m);
        }
    }
}
