//! Detection AP and CLEAR-MOT / identity tracking metrics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assign::{hungarian, max_weight_matching};
use crate::error::{Error, Result};
use crate::scene::{BoundingBox, Sequence};

pub const IOU_THRESHOLD: f64 = 0.5;
/// Ground truth below this visibility neither counts as a miss nor as a false positive.
pub const AP_IGNORE_VISIBILITY: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: u32,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackResult {
    pub frame: u32,
    pub track_id: u32,
    pub bbox: BoundingBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub frame: u32,
    pub track_id: u32,
    pub bbox: BoundingBox,
    pub visibility: f64,
}

impl GtBox {
    /// Active annotations of a sequence.
    pub fn from_sequence(seq: &Sequence) -> Vec<GtBox> {
        seq.annotations
            .iter()
            .filter(|a| a.active)
            .map(|a| GtBox {
                frame: a.frame,
                track_id: a.track_id,
                bbox: a.bbox,
                visibility: a.visibility,
            })
            .collect()
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.left.max(b.left)).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.top.max(b.top)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// 11-point interpolated average precision with visibility-based ignore regions.
pub fn average_precision(dets: &[Detection], gt: &[GtBox], iou_thr: f64) -> Result<f64> {
    let npos = gt
        .iter()
        .filter(|g| g.visibility >= AP_IGNORE_VISIBILITY)
        .count();
    if npos == 0 {
        return Err(Error::Undefined(
            "average precision without any non-ignored ground truth".into(),
        ));
    }
    if dets.iter().any(|d| !d.confidence.is_finite()) {
        return Err(Error::Numeric("non-finite detection confidence".into()));
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&dets[a], &dets[b]);
        db.confidence
            .total_cmp(&da.confidence)
            .then(da.frame.cmp(&db.frame))
            .then(da.bbox.left.total_cmp(&db.bbox.left))
    });
    let mut by_frame: HashMap<u32, Vec<usize>> = HashMap::new();
    for (i, g) in gt.iter().enumerate() {
        by_frame.entry(g.frame).or_default().push(i);
    }
    let mut taken = vec![false; gt.len()];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve: Vec<(usize, usize)> = Vec::with_capacity(dets.len());
    for &d in &order {
        let det = &dets[d];
        let mut best: Option<(usize, f64)> = None;
        for &gi in by_frame.get(&det.frame).map(Vec::as_slice).unwrap_or(&[]) {
            if taken[gi] {
                continue;
            }
            let o = iou(&det.bbox, &gt[gi].bbox);
            if o >= iou_thr && best.is_none_or(|(_, bo)| o > bo) {
                best = Some((gi, o));
            }
        }
        match best {
            Some((gi, _)) => {
                taken[gi] = true;
                if gt[gi].visibility < AP_IGNORE_VISIBILITY {
                    continue;
                }
                tp += 1;
            }
            None => fp += 1,
        }
        curve.push((tp, tp + fp));
    }
    // Interpolated precisions are kept as fractions so hand-checkable cases come out exact.
    let points: Vec<(u64, u64)> = (0..=10u64)
        .map(|i| {
            curve
                .iter()
                .filter(|(t, _)| *t as u64 * 10 >= i * npos as u64)
                .map(|&(t, n)| (t as u64, n as u64))
                .fold(
                    (0, 1),
                    |best, p| if p.0 * best.1 > best.0 * p.1 { p } else { best },
                )
        })
        .collect();
    let ap = exact_mean(&points).unwrap_or_else(|| {
        points
            .iter()
            .map(|&(a, b)| a as f64 / b as f64)
            .sum::<f64>()
            / 11.0
    });
    Ok(ap)
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn exact_mean(fracs: &[(u64, u64)]) -> Option<f64> {
    let (mut num, mut den) = (0u128, 1u128);
    for &(a, b) in fracs {
        let (a, b) = (a as u128, b as u128);
        num = num.checked_mul(b)?.checked_add(a.checked_mul(den)?)?;
        den = den.checked_mul(b)?;
        let g = gcd(num, den).max(1);
        num /= g;
        den /= g;
    }
    let den = den.checked_mul(fracs.len() as u128)?;
    let g = gcd(num, den).max(1);
    Some((num / g) as f64 / (den / g) as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClearMot {
    pub mota: f64,
    pub fp: usize,
    pub fn_: usize,
    pub id_switches: usize,
    pub mostly_tracked: usize,
    pub mostly_lost: usize,
    pub num_gt: usize,
    pub num_tracks: usize,
    pub matches: usize,
}

fn check_unique<T>(items: &[T], key: impl Fn(&T) -> (u32, u32), what: &str) -> Result<()> {
    let mut seen = BTreeSet::new();
    for it in items {
        let k = key(it);
        if !seen.insert(k) {
            return Err(Error::Input(format!(
                "duplicate {what} entry for frame {} id {}",
                k.0, k.1
            )));
        }
    }
    Ok(())
}

fn group<T: Copy>(items: &[T], frame: impl Fn(&T) -> u32) -> BTreeMap<u32, Vec<T>> {
    let mut m: BTreeMap<u32, Vec<T>> = BTreeMap::new();
    for it in items {
        m.entry(frame(it)).or_default().push(*it);
    }
    m
}

/// CLEAR-MOT counts. Correspondences persist across frames while they stay
/// above the IoU threshold; the rest are matched by maximum total IoU.
pub fn clear_mot(results: &[TrackResult], gt: &[GtBox], iou_thr: f64) -> Result<ClearMot> {
    check_unique(results, |r| (r.frame, r.track_id), "result")?;
    check_unique(gt, |g| (g.frame, g.track_id), "ground-truth")?;
    let gt_by = group(gt, |g| g.frame);
    let res_by = group(results, |r| r.frame);
    let frames: BTreeSet<u32> = gt_by.keys().chain(res_by.keys()).copied().collect();

    let mut last: HashMap<u32, u32> = HashMap::new();
    let mut track_len: HashMap<u32, usize> = HashMap::new();
    let mut track_hits: HashMap<u32, usize> = HashMap::new();
    let mut out = ClearMot {
        num_gt: gt.len(),
        ..Default::default()
    };
    for f in frames {
        let gs = gt_by.get(&f).map(Vec::as_slice).unwrap_or(&[]);
        let rs = res_by.get(&f).map(Vec::as_slice).unwrap_or(&[]);
        let mut g_used = vec![false; gs.len()];
        let mut r_used = vec![false; rs.len()];
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for (gi, g) in gs.iter().enumerate() {
            *track_len.entry(g.track_id).or_default() += 1;
            if let Some(&rid) = last.get(&g.track_id) {
                if let Some(ri) = rs.iter().position(|r| r.track_id == rid) {
                    if !r_used[ri] && iou(&g.bbox, &rs[ri].bbox) >= iou_thr {
                        g_used[gi] = true;
                        r_used[ri] = true;
                        pairs.push((gi, ri));
                    }
                }
            }
        }
        let free_g: Vec<usize> = (0..gs.len()).filter(|&i| !g_used[i]).collect();
        let free_r: Vec<usize> = (0..rs.len()).filter(|&i| !r_used[i]).collect();
        let w: Vec<Vec<Option<f64>>> = free_g
            .iter()
            .map(|&gi| {
                free_r
                    .iter()
                    .map(|&ri| {
                        let o = iou(&gs[gi].bbox, &rs[ri].bbox);
                        (o >= iou_thr).then_some(o)
                    })
                    .collect()
            })
            .collect();
        for (a, b) in max_weight_matching(&w) {
            pairs.push((free_g[a], free_r[b]));
        }
        for &(gi, ri) in &pairs {
            let (gid, rid) = (gs[gi].track_id, rs[ri].track_id);
            if let Some(&prev) = last.get(&gid) {
                if prev != rid {
                    out.id_switches += 1;
                }
            }
            last.insert(gid, rid);
            *track_hits.entry(gid).or_default() += 1;
        }
        out.matches += pairs.len();
        out.fp += rs.len() - pairs.len();
        out.fn_ += gs.len() - pairs.len();
    }
    out.num_tracks = track_len.len();
    for (id, &len) in &track_len {
        let ratio = *track_hits.get(id).unwrap_or(&0) as f64 / len as f64;
        if ratio >= 0.8 {
            out.mostly_tracked += 1;
        }
        if ratio <= 0.2 {
            out.mostly_lost += 1;
        }
    }
    out.mota = if out.num_gt == 0 {
        return Err(Error::Undefined("MOTA without ground truth".into()));
    } else {
        1.0 - (out.fp + out.fn_ + out.id_switches) as f64 / out.num_gt as f64
    };
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IdScores {
    pub idf1: f64,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

/// Identity F1 from the optimal one-to-one matching of whole trajectories.
pub fn idf1(results: &[TrackResult], gt: &[GtBox], iou_thr: f64) -> Result<IdScores> {
    check_unique(results, |r| (r.frame, r.track_id), "result")?;
    check_unique(gt, |g| (g.frame, g.track_id), "ground-truth")?;
    if gt.is_empty() && results.is_empty() {
        return Err(Error::Undefined(
            "IDF1 without ground truth or results".into(),
        ));
    }
    let gids: Vec<u32> = gt
        .iter()
        .map(|g| g.track_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let rids: Vec<u32> = results
        .iter()
        .map(|r| r.track_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let gi: HashMap<u32, usize> = gids.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let ri: HashMap<u32, usize> = rids.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let (ng, nr) = (gids.len(), rids.len());
    let mut glen = vec![0usize; ng];
    let mut rlen = vec![0usize; nr];
    gt.iter().for_each(|g| glen[gi[&g.track_id]] += 1);
    results.iter().for_each(|r| rlen[ri[&r.track_id]] += 1);
    let mut overlap = vec![vec![0usize; nr]; ng];
    let res_by = group(results, |r| r.frame);
    for g in gt {
        for r in res_by.get(&g.frame).map(Vec::as_slice).unwrap_or(&[]) {
            if iou(&g.bbox, &r.bbox) >= iou_thr {
                overlap[gi[&g.track_id]][ri[&r.track_id]] += 1;
            }
        }
    }
    let n = ng + nr;
    let inf = (gt.len() + results.len() + 1) as f64 * 2.0;
    let mut cost = vec![vec![0.0; n]; n];
    for i in 0..ng {
        for j in 0..nr {
            cost[i][j] = (glen[i] + rlen[j] - 2 * overlap[i][j]) as f64;
        }
        for k in 0..ng {
            cost[i][nr + k] = if k == i { glen[i] as f64 } else { inf };
        }
    }
    for j in 0..nr {
        for k in 0..nr {
            cost[ng + k][j] = if k == j { rlen[j] as f64 } else { inf };
        }
    }
    let a = hungarian(&cost);
    let idtp: usize = (0..ng)
        .filter(|&i| a[i] < nr)
        .map(|i| overlap[i][a[i]])
        .sum();
    let idfn = gt.len() - idtp;
    let idfp = results.len() - idtp;
    Ok(IdScores {
        idf1: 2.0 * idtp as f64 / (gt.len() + results.len()) as f64,
        idtp,
        idfp,
        idfn,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap: Option<f64>,
    pub mota: Option<f64>,
    pub idf1: Option<f64>,
    pub mostly_tracked: usize,
    pub mostly_lost: usize,
    pub fp: usize,
    pub fn_: usize,
    pub id_switches: usize,
    pub per_sequence: BTreeMap<String, SequenceReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub ap: Option<f64>,
    pub mot: Option<ClearMot>,
    pub id: Option<IdScores>,
}

/// Aggregates per-sequence results: AP is averaged, counts are summed and
/// MOTA / IDF1 recomputed from the summed counts.
pub fn summarize(per_sequence: BTreeMap<String, SequenceReport>) -> EvalReport {
    let aps: Vec<f64> = per_sequence.values().filter_map(|s| s.ap).collect();
    let mut r = EvalReport {
        ap: (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64),
        ..Default::default()
    };
    let (mut num_gt, mut idtp, mut idden) = (0usize, 0usize, 0usize);
    let (mut any_mot, mut any_id) = (false, false);
    for s in per_sequence.values() {
        if let Some(m) = &s.mot {
            any_mot = true;
            r.fp += m.fp;
            r.fn_ += m.fn_;
            r.id_switches += m.id_switches;
            r.mostly_tracked += m.mostly_tracked;
            r.mostly_lost += m.mostly_lost;
            num_gt += m.num_gt;
        }
        if let Some(i) = &s.id {
            any_id = true;
            idtp += i.idtp;
            idden += 2 * i.idtp + i.idfp + i.idfn;
        }
    }
    if any_mot && num_gt > 0 {
        r.mota = Some(1.0 - (r.fp + r.fn_ + r.id_switches) as f64 / num_gt as f64);
    }
    if any_id && idden > 0 {
        r.idf1 = Some(2.0 * idtp as f64 / idden as f64);
    }
    r.per_sequence = per_sequence;
    r
}

/// Parses `frame,id,left,top,width,height,conf,...` result lines.
pub fn parse_results_str(text: &str) -> Result<Vec<(TrackResult, f64)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let perr = |msg: &str| Error::Parse {
            path: String::new(),
            line: i + 1,
            msg: msg.to_string(),
        };
        let cols: Vec<f64> = line
            .split(',')
            .take(7)
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|_| perr("non-numeric column"))
            })
            .collect::<Result<_>>()?;
        if cols.len() < 7 {
            return Err(perr("expected at least 7 columns"));
        }
        let bbox = BoundingBox::new(cols[2], cols[3], cols[4], cols[5]);
        if !bbox.is_valid() || cols[0] < 1.0 {
            return Err(perr("invalid frame or box"));
        }
        out.push((
            TrackResult {
                frame: cols[0] as u32,
                track_id: cols[1].max(0.0) as u32,
                bbox,
            },
            cols[6],
        ));
    }
    Ok(out)
}

pub fn read_results(path: &Path) -> Result<Vec<(TrackResult, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results_str(&text)
}

pub fn format_results(rows: &[(TrackResult, f64)]) -> String {
    rows.iter()
        .map(|(r, c)| {
            format!(
                "{},{},{},{},{},{},{},-1,-1,-1\n",
                r.frame, r.track_id, r.bbox.left, r.bbox.top, r.bbox.width, r.bbox.height, c
            )
        })
        .collect()
}

pub fn format_detections(dets: &[Detection]) -> String {
    let rows: Vec<_> = dets
        .iter()
        .map(|d| {
            (
                TrackResult {
                    frame: d.frame,
                    track_id: 0,
                    bbox: d.bbox,
                },
                d.confidence,
            )
        })
        .collect();
    format_results(&rows).replace(",0,", ",-1,")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(l: f64, t: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(l, t, w, h)
    }

    fn gt(frame: u32, id: u32, bb: BoundingBox) -> GtBox {
        GtBox {
            frame,
            track_id: id,
            bbox: bb,
            visibility: 1.0,
        }
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(5.0, 5.0, 1.0, 1.0)), 0.0);
        assert_eq!(iou(&a, &b(1.0, 0.0, 2.0, 2.0)), 2.0 / 6.0);
    }

    #[test]
    fn ap_hand_example() {
        let g = vec![
            gt(1, 1, b(0.0, 0.0, 10.0, 10.0)),
            gt(2, 2, b(0.0, 0.0, 10.0, 10.0)),
        ];
        let d = vec![
            Detection {
                frame: 1,
                bbox: b(0.0, 0.0, 10.0, 10.0),
                confidence: 0.9,
            },
            Detection {
                frame: 1,
                bbox: b(50.0, 0.0, 10.0, 10.0),
                confidence: 0.8,
            },
            Detection {
                frame: 2,
                bbox: b(0.0, 0.0, 10.0, 10.0),
                confidence: 0.7,
            },
        ];
        assert_eq!(average_precision(&d, &g, 0.5).unwrap(), 28.0 / 33.0);
        assert_eq!(average_precision(&[], &g, 0.5).unwrap(), 0.0);
        assert_eq!(average_precision(&[d[0], d[2]], &g, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn ap_ignores_low_visibility() {
        let mut g = vec![
            gt(1, 1, b(0.0, 0.0, 10.0, 10.0)),
            gt(1, 2, b(40.0, 0.0, 10.0, 10.0)),
        ];
        g[1].visibility = 0.3;
        let d = vec![
            Detection {
                frame: 1,
                bbox: b(40.0, 0.0, 10.0, 10.0),
                confidence: 0.9,
            },
            Detection {
                frame: 1,
                bbox: b(0.0, 0.0, 10.0, 10.0),
                confidence: 0.5,
            },
        ];
        assert_eq!(average_precision(&d, &g, 0.5).unwrap(), 1.0);
        g[0].visibility = 0.1;
        assert!(matches!(
            average_precision(&d, &g, 0.5),
            Err(Error::Undefined(_))
        ));
    }

    fn split_track() -> (Vec<TrackResult>, Vec<GtBox>) {
        let bb = b(0.0, 0.0, 10.0, 20.0);
        let g = (1..=4).map(|f| gt(f, 1, bb)).collect();
        let r = (1..=4)
            .map(|f| TrackResult {
                frame: f,
                track_id: if f <= 2 { 1 } else { 2 },
                bbox: bb,
            })
            .collect();
        (r, g)
    }

    #[test]
    fn split_track_scores() {
        let (r, g) = split_track();
        let m = clear_mot(&r, &g, 0.5).unwrap();
        assert_eq!((m.fp, m.fn_, m.id_switches), (0, 0, 1));
        assert_eq!(m.mota, 0.75);
        let i = idf1(&r, &g, 0.5).unwrap();
        assert_eq!((i.idtp, i.idfp, i.idfn), (2, 2, 2));
        assert_eq!(i.idf1, 0.5);
    }

    #[test]
    fn perfect_and_empty_results() {
        let (_, g) = split_track();
        let perfect: Vec<TrackResult> = g
            .iter()
            .map(|x| TrackResult {
                frame: x.frame,
                track_id: 9,
                bbox: x.bbox,
            })
            .collect();
        let m = clear_mot(&perfect, &g, 0.5).unwrap();
        assert_eq!((m.mota, m.mostly_tracked, m.mostly_lost), (1.0, 1, 0));
        assert_eq!(idf1(&perfect, &g, 0.5).unwrap().idf1, 1.0);
        let m = clear_mot(&[], &g, 0.5).unwrap();
        assert_eq!((m.fn_, m.mota, m.mostly_lost), (4, 0.0, 1));
        assert_eq!(idf1(&[], &g, 0.5).unwrap().idf1, 0.0);
    }

    #[test]
    fn duplicate_results_rejected() {
        let (mut r, g) = split_track();
        r.push(r[0]);
        assert!(matches!(clear_mot(&r, &g, 0.5), Err(Error::Input(_))));
    }

    #[test]
    fn result_file_roundtrip() {
        let rows = vec![(
            TrackResult {
                frame: 3,
                track_id: 2,
                bbox: b(1.5, 2.0, 10.0, 20.25),
            },
            0.75,
        )];
        assert_eq!(parse_results_str(&format_results(&rows)).unwrap(), rows);
    }
}
