//! Trains the pose-to-person generator on synthetic identities and writes a
//! sheet with every identity rendered into a few held poses.
//!
//! cargo run --example pose2person_train -- [STEPS] [LR] [OUT.png]

use std::path::PathBuf;
use std::time::Instant;

use incognipipe::image::Image;
use incognipipe::pose2person::{
    conditioning, frame_union_mask, train_pose2person, IdentityCatalog, P2PTrainConfig,
};
use incognipipe::privacy::AuditedFrame;
use incognipipe::scene::{generate_toy_dataset, Domain, ToySceneSpec};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map(|s| s.parse()).transpose()?.unwrap_or(400);
    let lr = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1e-4);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "pose2person.png".into()));

    let ds = generate_toy_dataset(&ToySceneSpec {
        domain: Domain::Synthetic,
        seed: 2001,
        occlusion_rate: 0.0,
        ..Default::default()
    })?;
    let catalog = IdentityCatalog::from_dataset(&ds)?;
    let cfg = P2PTrainConfig {
        steps,
        lr,
        ..Default::default()
    };

    let t = Instant::now();
    let trained = train_pose2person(&ds, &catalog, &cfg)?;
    let l1 = &trained.history["l1"];
    let tail = |v: &[f64]| {
        v[v.len().saturating_sub(25)..].iter().sum::<f64>() / v.len().min(25).max(1) as f64
    };
    println!(
        "{} steps in {:.1}s, l1 {:.4} -> {:.4}, d {:.4}, masked reads {}",
        steps,
        t.elapsed().as_secs_f64(),
        l1.first().unwrap_or(&f64::NAN),
        tail(l1),
        tail(&trained.history["d"]),
        trained.audit.masked_reads
    );

    let gcfg = &trained.generator.cfg;
    let seq = &ds.sequences[0];
    let poses: Vec<_> = seq
        .annotations
        .iter()
        .filter(|a| a.visibility > 0.999)
        .step_by(37)
        .take(4)
        .collect();
    let m = catalog.len();
    let (h, w) = (gcfg.height, gcfg.width);
    let mut sheet = Image::new(h * poses.len(), w * (m + 1));
    for (r, a) in poses.iter().enumerate() {
        let frame = seq.frame(a.frame);
        let protected = frame_union_mask(seq, a.frame);
        let src = AuditedFrame::new(frame, &protected);
        let mask = a.mask.as_ref().expect("toy instances carry masks");
        let (_, tr) = conditioning(
            &src,
            &a.bbox,
            mask,
            a.keypoints.as_ref(),
            0,
            cfg.margin,
            gcfg,
        )?;
        paste(&mut sheet, &tr.extract(frame), r * h, 0);
        for id in 0..m {
            let (inp, _) = conditioning(
                &src,
                &a.bbox,
                mask,
                a.keypoints.as_ref(),
                id,
                cfg.margin,
                gcfg,
            )?;
            paste(
                &mut sheet,
                &trained.generator.generate(&inp)?,
                r * h,
                (id + 1) * w,
            );
        }
    }
    sheet.save_png(&out)?;
    println!(
        "wrote {} (column 0: source crop, then identities 0..{m})",
        out.display()
    );
    Ok(())
}

fn paste(dst: &mut Image, src: &Image, y0: usize, x0: usize) {
    for y in 0..src.height() {
        for x in 0..src.width() {
            dst.set_pixel(y0 + y, x0 + x, src.pixel(y, x));
        }
    }
}
