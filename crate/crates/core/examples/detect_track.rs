//! Trains the tiny detector on toy frames (optionally after a baseline
//! de-identification), then reports AP, MOTA and IDF1 on held-out original frames.
//!
//! cargo run --example detect_track -- [none|white-cutout|blackwhite-blur|face-blur] [STEPS]

use std::time::Instant;

use incognipipe::baselines::{apply_baseline, Baseline};
use incognipipe::downstream::{evaluate_detector, train_tiny_detector, DetectorConfig};
use incognipipe::scene::{generate_toy_dataset, ToySceneSpec};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let variant = args.next().unwrap_or_else(|| "none".into());
    let steps = args.next().map(|s| s.parse()).transpose()?.unwrap_or(500);
    let train = generate_toy_dataset(&ToySceneSpec::default())?;
    let test = generate_toy_dataset(&ToySceneSpec {
        seed: 8,
        ..Default::default()
    })?;
    let train = match variant.as_str() {
        "none" => train,
        other => apply_baseline(&train, other.parse::<Baseline>()?)?,
    };

    let t = Instant::now();
    let (det, hist) = train_tiny_detector(
        &train,
        &DetectorConfig {
            steps,
            ..Default::default()
        },
    )?;
    println!(
        "trained on {variant} in {:.1}s, loss {:.3} -> {:.3}",
        t.elapsed().as_secs_f64(),
        hist[0],
        hist[hist.len() - 1]
    );

    let r = evaluate_detector(&det, &test)?;
    println!(
        "AP {:.3}  MOTA {:.3}  IDF1 {:.3}  FP {}  FN {}  IDSW {}",
        r.ap.unwrap_or(f64::NAN),
        r.mota.unwrap_or(f64::NAN),
        r.idf1.unwrap_or(f64::NAN),
        r.fp,
        r.fn_,
        r.id_switches
    );
    Ok(())
}
