//! Compares baselines and pipeline variants on one toy seed: deID against the
//! original gallery and AP/MOTA/IDF1 of a detector trained on each output.
//!
//! cargo run --release --example compare_methods -- [SEED] [--quick] [--fill] [--levels N] [--pipeline-only]

use std::time::Instant;

use incognipipe::baselines::Baseline;
use incognipipe::experiment::{
    format_table, score, train_evaluator, AblationRow, Bench, Columns, ExperimentConfig, Method,
};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let flag = |f: &str| args.iter().any(|a| a == f);
    let seed = args.first().and_then(|a| a.parse().ok()).unwrap_or(0);
    let mut cfg = ExperimentConfig::default();
    cfg.apply_seed(seed);
    if flag("--quick") {
        cfg = cfg.quick();
    }
    cfg.pipeline.blend_fill = flag("--fill");
    if let Some(i) = args.iter().position(|a| a == "--levels") {
        cfg.pipeline.blend_levels = args.get(i + 1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    }

    let t = Instant::now();
    let evaluator = train_evaluator(&cfg)?;
    println!("evaluator trained in {:.1}s", t.elapsed().as_secs_f64());

    let mut bench = Bench::new(cfg.clone())?;
    let mut methods = vec![
        Method::None,
        Method::Baseline(Baseline::WhiteCutout),
        Method::Baseline(Baseline::BlackWhiteBlur),
        Method::Pipeline(AblationRow::P2pMaskJoints),
        Method::Pipeline(AblationRow::Blend),
        Method::Pipeline(AblationRow::BlendP2sAug),
    ];
    if flag("--pipeline-only") {
        methods.drain(..3);
    }
    let cols = Columns {
        deid: true,
        reid: false,
        detection: true,
    };
    let mut rows = Vec::new();
    for m in methods {
        let t = Instant::now();
        let ds = bench.apply(m)?;
        let applied = t.elapsed().as_secs_f64();
        rows.push(score(&bench, m, &ds, Some(&evaluator), cols)?);
        println!(
            "{:<26} applied in {applied:.1}s, scored in {:.1}s",
            m.label(),
            t.elapsed().as_secs_f64() - applied
        );
    }
    println!("masked reads during the run: {}", bench.audit.masked_reads);
    print!("{}", format_table(&rows, &cfg.ks));
    Ok(())
}
