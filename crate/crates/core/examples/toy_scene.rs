//! Renders a toy dataset to disk and prints per-sequence statistics.
//!
//! cargo run --example toy_scene -- [OUT_DIR]

use std::path::PathBuf;

use incognipipe::scene::{generate_toy_dataset, save_dataset, Domain, ToySceneSpec};

fn main() -> anyhow::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| "toy_data".into());
    for domain in [Domain::Real, Domain::Synthetic] {
        let spec = ToySceneSpec {
            domain,
            ..Default::default()
        };
        let ds = generate_toy_dataset(&spec)?;
        for seq in &ds.sequences {
            let n = seq.annotations.len();
            let occluded = seq
                .annotations
                .iter()
                .filter(|a| a.visibility < 1.0)
                .count();
            let mean_vis = seq.annotations.iter().map(|a| a.visibility).sum::<f64>() / n as f64;
            println!(
                "{:<18} frames {:>3}  instances {:>4}  occluded {:>4}  mean visibility {:.3}",
                seq.name,
                seq.num_frames(),
                n,
                occluded,
                mean_vis
            );
        }
        save_dataset(&out.join(domain.to_string()), &ds)?;
    }
    println!("written to {}", out.display());
    Ok(())
}
