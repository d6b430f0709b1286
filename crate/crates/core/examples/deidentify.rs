//! Trains both stages at desk scale, de-identifies the toy training frames and
//! writes them out with a before/after strip of the first frame.
//!
//! cargo run --release --example deidentify -- [OUT_DIR] [--quick]

use std::path::PathBuf;
use std::time::Instant;

use incognipipe::experiment::{AblationRow, Bench, ExperimentConfig, Method};
use incognipipe::image::Image;
use incognipipe::scene::save_dataset;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(
        args.iter()
            .find(|a| !a.starts_with("--"))
            .map_or("deid-out", String::as_str),
    );
    let mut cfg = ExperimentConfig::default();
    if args.iter().any(|a| a == "--quick") {
        cfg = cfg.quick();
    }

    let mut bench = Bench::new(cfg)?;
    let t = Instant::now();
    bench.generator(true)?;
    bench.adapter(true)?;
    println!("trained both stages in {:.1}s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let res = bench.apply(Method::Pipeline(AblationRow::BlendP2sAug))?;
    let frames: usize = res.sequences.iter().map(|s| s.frames.len()).sum();
    println!(
        "{frames} frames de-identified in {:.1}s",
        t.elapsed().as_secs_f64()
    );
    println!(
        "source pixel reads {}, inside instance masks {}",
        bench.audit.pixel_reads, bench.audit.masked_reads
    );

    save_dataset(&out, &res)?;
    let before = &bench.train.sequences[0].frames[0];
    let after = &res.sequences[0].frames[0];
    let (h, w) = before.dims();
    let mut strip = Image::new(h, 2 * w);
    for y in 0..h {
        for x in 0..w {
            strip.set_pixel(y, x, before.pixel(y, x));
            strip.set_pixel(y, w + x, after.pixel(y, x));
        }
    }
    strip.save_png(&out.join("before_after.png"))?;
    println!("wrote {}", out.display());
    Ok(())
}
