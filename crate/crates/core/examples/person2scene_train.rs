//! Trains the scene adapter on pedestrian-free toy patches and checks that it
//! restores blurred patches.
//!
//! cargo run --example person2scene_train -- [STEPS] [LR]

use std::time::Instant;

use incognipipe::losses::ssim;
use incognipipe::person2scene::{
    protected_masks, sample_patch, train_person2scene, P2STrainConfig,
};
use incognipipe::privacy::AccessAudit;
use incognipipe::rng::rng_for;
use incognipipe::scene::{generate_toy_dataset, ToySceneSpec};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map(|s| s.parse()).transpose()?.unwrap_or(300);
    let lr = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1e-4);
    let ds = generate_toy_dataset(&ToySceneSpec::default())?;
    let mut cfg = P2STrainConfig {
        steps,
        lr,
        ..Default::default()
    };
    if let Some(a) = args.next() {
        cfg.sharpen_amount = (a.parse()?, a.parse()?);
    }

    let t = Instant::now();
    let tr = train_person2scene(&ds, &cfg)?;
    let h = &tr.history["total"];
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    println!(
        "{steps} steps in {:.1}s, loss {:.4} -> {:.4}, masked reads {}",
        t.elapsed().as_secs_f64(),
        avg(&h[..h.len().min(10)]),
        avg(&h[h.len().saturating_sub(10)..]),
        tr.audit.masked_reads
    );

    let prot = protected_masks(&ds, cfg.dilate);
    let mut rng = rng_for(99, "held-out patches");
    let mut audit = AccessAudit::default();
    let (mut before, mut after) = (0.0, 0.0);
    let n = 32;
    for _ in 0..n {
        let x = sample_patch(&ds, &prot, &cfg, &mut rng, &mut audit)?;
        let b = x.gaussian_blur(1.5);
        before += ssim(&b, &x)?;
        after += ssim(&tr.adapter.adapt(&b)?, &x)?;
    }
    println!(
        "SSIM to clean on blurred patches: blurred {:.4}, adapted {:.4}",
        before / n as f64,
        after / n as f64
    );
    Ok(())
}
