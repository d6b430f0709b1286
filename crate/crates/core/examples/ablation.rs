//! Ablation over the pipeline stages: each row adds one stage and is scored on
//! deID (fixed evaluator) and on a detector trained on its output.
//!
//! cargo run --release --example ablation -- [SEED] [--quick]

use incognipipe::experiment::{
    format_table, run_methods, train_evaluator, AblationRow, Bench, Columns, ExperimentConfig,
    Method,
};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.iter().find_map(|a| a.parse::<u64>().ok()).unwrap_or(0);
    let mut cfg = ExperimentConfig::default();
    cfg.apply_seed(seed);
    if args.iter().any(|a| a == "--quick") {
        cfg = cfg.quick();
    }

    let evaluator = train_evaluator(&cfg)?;
    let mut bench = Bench::new(cfg)?;
    let methods: Vec<Method> = AblationRow::ALL
        .iter()
        .map(|&r| Method::Pipeline(r))
        .collect();
    let cols = Columns {
        deid: true,
        reid: false,
        detection: true,
    };
    let rows = run_methods(&mut bench, &methods, Some(&evaluator), cols)?;
    print!("{}", format_table(&rows, &bench.cfg.ks));
    println!("masked reads during the run: {}", bench.audit.masked_reads);
    Ok(())
}
