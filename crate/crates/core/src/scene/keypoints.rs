//! `keypoints.json`: frame → track id → 17 × `[x, y, v]`.

use std::collections::BTreeMap;

use super::KeypointSet;
use crate::error::{Error, Result};

type Raw = BTreeMap<String, BTreeMap<String, Vec<[f64; 3]>>>;

pub fn parse_keypoints_json(text: &str) -> Result<BTreeMap<(u32, u32), KeypointSet>> {
    let raw: Raw = serde_json::from_str(text)?;
    let mut out = BTreeMap::new();
    for (frame, tracks) in raw {
        let f: u32 = frame
            .parse()
            .map_err(|_| Error::Data(format!("keypoints: bad frame key {frame:?}")))?;
        for (track, joints) in tracks {
            let t: u32 = track
                .parse()
                .map_err(|_| Error::Data(format!("keypoints: bad track key {track:?}")))?;
            out.insert((f, t), KeypointSet::from_triples(&joints)?);
        }
    }
    Ok(out)
}

pub fn write_keypoints_json<'a>(
    entries: impl IntoIterator<Item = (u32, u32, &'a KeypointSet)>,
) -> Result<String> {
    let mut sorted: BTreeMap<u32, BTreeMap<u32, Vec<[f64; 3]>>> = BTreeMap::new();
    for (f, t, k) in entries {
        sorted.entry(f).or_default().insert(t, k.to_triples());
    }
    let mut obj = serde_json::Map::new();
    for (f, tracks) in sorted {
        let mut inner = serde_json::Map::new();
        for (t, v) in tracks {
            inner.insert(t.to_string(), serde_json::to_value(v)?);
        }
        obj.insert(f.to_string(), serde_json::Value::Object(inner));
    }
    Ok(serde_json::to_string(&serde_json::Value::Object(obj))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Keypoint, NUM_KEYPOINTS};

    #[test]
    fn roundtrip_and_count_check() {
        let mut k = [Keypoint::default(); NUM_KEYPOINTS];
        k[3] = Keypoint {
            x: 4.5,
            y: -1.0,
            visible: true,
        };
        let ks = KeypointSet(k);
        let text = write_keypoints_json([(2, 11, &ks)]).unwrap();
        let back = parse_keypoints_json(&text).unwrap();
        assert_eq!(back[&(2, 11)], ks);
        assert!(parse_keypoints_json(r#"{"1":{"1":[[0,0,1]]}}"#).is_err());
    }
}
