//! Dataset directories in the MOT layout.
//!
//! ```text
//! DIR/dataset.json              domain, catalog, sequence names
//! DIR/<seq>/seqinfo.ini
//! DIR/<seq>/gt/gt.txt           MOT CSV
//! DIR/<seq>/gt/masks.txt        run-length masks
//! DIR/<seq>/gt/keypoints.json
//! DIR/<seq>/gt/identities.txt   `track_id identity` (optional)
//! DIR/<seq>/img1/000001.png
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::keypoints::{parse_keypoints_json, write_keypoints_json};
use super::mot::{parse_mot_annotations, write_mot_annotations};
use super::rle::{parse_mask_str, write_mask_file};
use super::{AppearanceCode, Domain, SceneDataset, Sequence};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    domain: Domain,
    sequences: Vec<String>,
    #[serde(default)]
    catalog: Vec<AppearanceCode>,
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).map_err(|e| Error::io(p, e))
}

pub fn save_dataset(dir: &Path, ds: &SceneDataset) -> Result<()> {
    mkdir(dir)?;
    let meta = DatasetMeta {
        domain: ds.domain,
        sequences: ds.sequences.iter().map(|s| s.name.clone()).collect(),
        catalog: ds.catalog.clone(),
    };
    write(
        &dir.join("dataset.json"),
        &serde_json::to_string_pretty(&meta)?,
    )?;
    for seq in &ds.sequences {
        let root = dir.join(&seq.name);
        let gt = root.join("gt");
        let img_dir = root.join("img1");
        mkdir(&gt)?;
        mkdir(&img_dir)?;
        let (h, w) = seq.frames.first().map(Image::dims).unwrap_or((0, 0));
        write(
            &root.join("seqinfo.ini"),
            &format!(
                "[Sequence]\nname={}\nimDir=img1\nframeRate={}\nseqLength={}\nimWidth={w}\nimHeight={h}\nimExt=.png\n",
                seq.name,
                seq.frame_rate,
                seq.frames.len()
            ),
        )?;
        write_mot_annotations(&gt.join("gt.txt"), &seq.annotations)?;
        let masks: Vec<_> = seq
            .annotations
            .iter()
            .filter_map(|a| {
                a.mask
                    .as_ref()
                    .map(|m| (a.frame, a.track_id, a.class_id, m))
            })
            .collect();
        write_mask_file(&gt.join("masks.txt"), &masks)?;
        let kps = write_keypoints_json(
            seq.annotations
                .iter()
                .filter_map(|a| a.keypoints.as_ref().map(|k| (a.frame, a.track_id, k))),
        )?;
        write(&gt.join("keypoints.json"), &kps)?;
        if !seq.identities.is_empty() {
            let text: String = seq
                .identities
                .iter()
                .map(|(t, i)| format!("{t} {i}\n"))
                .collect();
            write(&gt.join("identities.txt"), &text)?;
        }
        for (k, img) in seq.frames.iter().enumerate() {
            img.save_png(&img_dir.join(format!("{:06}.png", k + 1)))?;
        }
    }
    Ok(())
}

fn parse_seqinfo(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty()
            || line.starts_with('[')
            || line.starts_with(';')
            || line.starts_with('#')
        {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: "expected key=value".into(),
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn load_sequence(root: &Path) -> Result<Sequence> {
    let info_path = root.join("seqinfo.ini");
    let info = parse_seqinfo(&info_path)?;
    let field = |k: &str| {
        info.get(k).ok_or_else(|| Error::Parse {
            path: info_path.display().to_string(),
            line: 0,
            msg: format!("missing key {k}"),
        })
    };
    let num = |k: &str| -> Result<u32> {
        field(k)?.parse().map_err(|_| Error::Parse {
            path: info_path.display().to_string(),
            line: 0,
            msg: format!("{k} is not an integer"),
        })
    };
    let name = field("name")?.clone();
    let len = num("seqLength")?;
    let frame_rate = num("frameRate")?;
    let (w, h) = (num("imWidth")? as usize, num("imHeight")? as usize);
    let im_dir = info.get("imDir").cloned().unwrap_or_else(|| "img1".into());
    let ext = info.get("imExt").cloned().unwrap_or_else(|| ".png".into());

    let mut frames = Vec::with_capacity(len as usize);
    for k in 1..=len {
        let p = root.join(&im_dir).join(format!("{k:06}{ext}"));
        let img = Image::load_png(&p)?;
        if img.dims() != (h, w) {
            return Err(Error::Shape(format!("{}: expected {h}×{w}", p.display())));
        }
        frames.push(img);
    }

    let gt = root.join("gt");
    let mut annotations = parse_mot_annotations(&gt.join("gt.txt"), len)?;
    let mask_path = gt.join("masks.txt");
    if mask_path.exists() {
        let text = fs::read_to_string(&mask_path).map_err(|e| Error::io(&mask_path, e))?;
        let mut masks = parse_mask_str(&text)?;
        for a in &mut annotations {
            if let Some((_, m)) = masks.remove(&(a.frame, a.track_id)) {
                a.mask = Some(m);
            }
        }
    }
    let kp_path = gt.join("keypoints.json");
    if kp_path.exists() {
        let text = fs::read_to_string(&kp_path).map_err(|e| Error::io(&kp_path, e))?;
        let kps = parse_keypoints_json(&text)?;
        for a in &mut annotations {
            a.keypoints = kps.get(&(a.frame, a.track_id)).copied();
        }
    }
    let mut identities = BTreeMap::new();
    let id_path = gt.join("identities.txt");
    if id_path.exists() {
        let text = fs::read_to_string(&id_path).map_err(|e| Error::io(&id_path, e))?;
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let mut it = line.split_whitespace().map(str::parse::<u64>);
            match (it.next(), it.next()) {
                (Some(Ok(t)), Some(Ok(id))) => {
                    identities.insert(t as u32, id as usize);
                }
                _ => {
                    return Err(Error::Parse {
                        path: id_path.display().to_string(),
                        line: i + 1,
                        msg: "expected `track_id identity`".into(),
                    })
                }
            }
        }
    }
    let seq = Sequence {
        name,
        frames,
        annotations,
        frame_rate,
        identities,
    };
    seq.validate()?;
    Ok(seq)
}

pub fn load_dataset(dir: &Path) -> Result<SceneDataset> {
    let meta_path = dir.join("dataset.json");
    let meta: DatasetMeta = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        serde_json::from_str(&text)?
    } else {
        let mut names = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            if entry.path().join("seqinfo.ini").exists() {
                names.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        names.sort();
        DatasetMeta {
            domain: Domain::Real,
            sequences: names,
            catalog: Vec::new(),
        }
    };
    if meta.sequences.is_empty() {
        return Err(Error::Data(format!(
            "{}: no sequences found",
            dir.display()
        )));
    }
    let sequences = meta
        .sequences
        .iter()
        .map(|n| load_sequence(&dir.join(n)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneDataset {
        domain: meta.domain,
        sequences,
        catalog: meta.catalog,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_toy_dataset, ToySceneSpec};

    #[test]
    fn save_load_roundtrip() {
        let ds = generate_toy_dataset(&ToySceneSpec {
            num_identities: 3,
            sequences: 2,
            frames: 3,
            occlusion_rate: 0.4,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.domain, ds.domain);
        assert_eq!(back.catalog, ds.catalog);
        for (a, b) in back.sequences.iter().zip(&ds.sequences) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.identities, b.identities);
            assert!(a.frames == b.frames, "frames differ");
            for (x, y) in a.annotations.iter().zip(&b.annotations) {
                assert_eq!(
                    (x.frame, x.track_id, x.bbox, x.visibility),
                    (y.frame, y.track_id, y.bbox, y.visibility)
                );
                assert!(x.mask == y.mask, "mask differs");
                assert_eq!(x.keypoints, y.keypoints);
            }
        }
        assert!(back == ds);
    }
}
