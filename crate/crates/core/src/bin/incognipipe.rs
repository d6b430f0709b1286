//! Command-line entry point. Every command writes `manifest.json` into its
//! output directory; `rerun` replays a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use incognipipe::baselines::{apply_baseline, Baseline};
use incognipipe::checkpoint::Checkpoint;
use incognipipe::deid::{deidentify_dataset, identity_map_for, Models, PoseInput};
use incognipipe::downstream::{evaluate_detector, train_tiny_detector, DetectorConfig};
use incognipipe::experiment::{
    derive_seed, format_table, run_methods, train_evaluator, AblationRow, Bench, Columns,
    DetectionScores, ExperimentConfig, Method, COMPARISON,
};
use incognipipe::ident::{
    build_query_gallery, evaluate_identification, train_embedding, EmbeddingModel, IdentMode,
};
use incognipipe::manifest::Manifest;
use incognipipe::person2scene::{load_p2s, train_person2scene, P2STrainConfig};
use incognipipe::pose2person::{load_p2p, train_pose2person, IdentityCatalog};
use incognipipe::scene::{
    generate_toy_dataset, load_dataset, save_dataset, Domain, SceneDataset, ToySceneSpec,
};

const SEED_ENV: &str = "INCOGNIPIPE_SEED";
/// Set while replaying a manifest, whose arguments already pin the seed.
static IGNORE_SEED_ENV: AtomicBool = AtomicBool::new(false);

#[derive(Parser)]
#[command(
    name = "incognipipe",
    version,
    about = "Pedestrian dataset de-identification and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Experiment config (TOML). Defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides INCOGNIPIPE_SEED, which overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a procedural toy dataset in the MOT layout.
    GenToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        identities: usize,
        #[arg(long, default_value_t = 3)]
        sequences: usize,
        #[arg(long, default_value_t = 60)]
        frames: usize,
        #[arg(long, default_value_t = 144)]
        height: usize,
        #[arg(long, default_value_t = 240)]
        width: usize,
        #[arg(long, default_value_t = 0.25)]
        occlusion: f64,
        #[arg(long, default_value_t = 8)]
        max_per_sequence: usize,
        #[arg(long, value_enum, default_value_t = DomainArg::Real)]
        domain: DomainArg,
        /// Defaults to 7 when neither the flag nor INCOGNIPIPE_SEED is set.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the pose-to-person generator on a synthetic dataset.
    TrainP2p {
        #[command(flatten)]
        common: Common,
        /// Synthetic dataset; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// Condition on the mask only.
        #[arg(long)]
        mask_only: bool,
    },
    /// Train the scene adapter on pedestrian-free patches of a dataset.
    TrainP2s {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        no_augment: bool,
    },
    /// De-identify a dataset with trained checkpoints.
    Deidentify {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        /// Generator checkpoint (train-p2p output `p2p.json`).
        #[arg(long)]
        p2p: PathBuf,
        /// Adapter checkpoint (train-p2s output `p2s.json`).
        #[arg(long)]
        p2s: Option<PathBuf>,
        /// Comma-separated subset of p2p, blend, p2s.
        #[arg(long, default_value = "p2p,blend,p2s")]
        stage: String,
    },
    /// Apply a handcrafted baseline.
    Baseline {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        kind: String,
    },
    /// Train detectors on one dataset and score detection and tracking on another,
    /// or run an identification evaluation with `--mode reid|deid`.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = EvalMode::Detect)]
        mode: EvalMode,
        /// Training data (detect) or query data (reid/deid).
        #[arg(long)]
        data: PathBuf,
        /// Test data (detect) or original gallery data (reid/deid; defaults to --data).
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
    },
    /// Query-gallery identification: CMC (reid) or deID score (deid).
    EvalIdent {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: IdentArg,
        /// Dataset supplying the queries.
        #[arg(long)]
        data: PathBuf,
        /// Original dataset supplying the gallery; defaults to --data.
        #[arg(long)]
        gallery: Option<PathBuf>,
        /// Embedding checkpoint; when omitted one is trained on the gallery data.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run the component ablation (or the method comparison) end to end on toy data.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        quick: bool,
        #[arg(long, value_enum, default_value_t = TableArg::Ablation)]
        table: TableArg,
        /// Comma-separated subset of deid, reid, detect.
        #[arg(long, default_value = "deid,reid,detect")]
        columns: String,
    },
    /// Re-execute the command recorded in a manifest.
    Rerun {
        manifest: PathBuf,
        /// Replaces the recorded output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    Real,
    Synthetic,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum EvalMode {
    Detect,
    Reid,
    Deid,
}

#[derive(Clone, Copy, ValueEnum)]
enum IdentArg {
    Reid,
    Deid,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableArg {
    Ablation,
    Comparison,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.cmd, std::env::args().skip(1).collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<incognipipe::Error>()
                .map_or(1, |e| e.exit_code());
            ExitCode::from(code)
        }
    }
}

fn env_seed() -> anyhow::Result<Option<u64>> {
    if IGNORE_SEED_ENV.load(Ordering::Relaxed) {
        return Ok(None);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(v.trim().parse().map_err(|_| {
            incognipipe::Error::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
        })?)),
        Err(_) => Ok(None),
    }
}

/// Loads the config and applies the seed precedence flag > env > file.
/// Also returns the overriding seed, if any.
fn load_config(c: &Common) -> anyhow::Result<(ExperimentConfig, Option<u64>)> {
    let mut cfg = match &c.config {
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    let seed = c.seed.or(env_seed()?);
    if let Some(s) = seed {
        cfg.apply_seed(s);
    }
    cfg.validate()?;
    Ok((cfg, seed))
}

/// Recorded arguments: the invocation with `--seed` pinned to the overriding
/// value, or removed when the config file supplied the seeds.
fn pinned_args(raw: &[String], seed: Option<u64>) -> Vec<String> {
    let mut out = Vec::with_capacity(raw.len() + 2);
    let mut it = raw.iter();
    while let Some(a) = it.next() {
        if a == "--seed" {
            it.next();
        } else if !a.starts_with("--seed=") {
            out.push(a.clone());
        }
    }
    if let Some(seed) = seed {
        out.push("--seed".into());
        out.push(seed.to_string());
    }
    out
}

fn mkdir(p: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn load_data(p: &Path) -> anyhow::Result<SceneDataset> {
    if !p.exists() {
        return Err(incognipipe::Error::Data(format!("{} does not exist", p.display())).into());
    }
    Ok(load_dataset(p)?)
}

fn finish(mut m: Manifest, out: &Path, outputs: &[&str]) -> anyhow::Result<()> {
    for o in outputs {
        m.add_output(out, o)?;
    }
    m.save(&out.join("manifest.json"))?;
    Ok(())
}

fn run(cmd: Cmd, raw: Vec<String>) -> anyhow::Result<()> {
    match cmd {
        Cmd::GenToy {
            out,
            identities,
            sequences,
            frames,
            height,
            width,
            occlusion,
            max_per_sequence,
            domain,
            seed,
        } => {
            let seed = seed.or(env_seed()?).unwrap_or(7);
            let spec = ToySceneSpec {
                num_identities: identities,
                sequences,
                frames,
                height,
                width,
                occlusion_rate: occlusion,
                seed,
                domain: match domain {
                    DomainArg::Real => Domain::Real,
                    DomainArg::Synthetic => Domain::Synthetic,
                },
                max_per_sequence,
                ..Default::default()
            };
            let ds = generate_toy_dataset(&spec)?;
            save_dataset(&out, &ds)?;
            let m = Manifest::new(
                "gen-toy",
                pinned_args(&raw, Some(seed)),
                &spec,
                [("seed".into(), seed)].into(),
            )?;
            let names: Vec<String> = ds.sequences.iter().map(|s| s.name.clone()).collect();
            let mut outputs: Vec<&str> = names.iter().map(String::as_str).collect();
            outputs.push("dataset.json");
            finish(m, &out, &outputs)
        }
        Cmd::TrainP2p {
            common,
            data,
            steps,
            mask_only,
        } => {
            let (mut cfg, seed) = load_config(&common)?;
            if let Some(s) = steps {
                cfg.p2p.steps = s;
            }
            cfg.p2p.generator.use_joints = !mask_only;
            let ds = match &data {
                Some(p) => load_data(p)?,
                None => generate_toy_dataset(&cfg.synthetic_data)?,
            };
            let catalog = IdentityCatalog::from_dataset(&ds)?;
            let tr = train_pose2person(&ds, &catalog, &cfg.p2p)?;
            mkdir(&common.out)?;
            tr.to_checkpoint()?.save(&common.out.join("p2p.json"))?;
            write_json(&common.out.join("history.json"), &tr.history)?;
            let mut m = Manifest::new("train-p2p", pinned_args(&raw, seed), &cfg.p2p, seeds(&cfg))?;
            m.extra = serde_json::json!({ "audit": tr.audit });
            finish(m, &common.out, &["p2p.json", "history.json"])
        }
        Cmd::TrainP2s {
            common,
            data,
            steps,
            no_augment,
        } => {
            let (mut cfg, seed) = load_config(&common)?;
            let p2s = P2STrainConfig {
                steps: steps.unwrap_or(cfg.p2s.steps),
                augment: !no_augment,
                ..cfg.p2s.clone()
            };
            cfg.p2s = p2s;
            let ds = load_data(&data)?;
            let tr = train_person2scene(&ds, &cfg.p2s)?;
            mkdir(&common.out)?;
            tr.to_checkpoint()?.save(&common.out.join("p2s.json"))?;
            write_json(&common.out.join("history.json"), &tr.history)?;
            let mut m = Manifest::new("train-p2s", pinned_args(&raw, seed), &cfg.p2s, seeds(&cfg))?;
            m.extra = serde_json::json!({ "audit": tr.audit });
            finish(m, &common.out, &["p2s.json", "history.json"])
        }
        Cmd::Deidentify {
            common,
            input,
            p2p,
            p2s,
            stage,
        } => {
            let (cfg, seed) = load_config(&common)?;
            let gen = load_p2p(&Checkpoint::load(&p2p)?)?.generator;
            let mut pcfg = cfg.pipeline.clone().with_stages(&stage)?;
            pcfg.pose_input = if gen.cfg.use_joints {
                PoseInput::MaskJoints
            } else {
                PoseInput::Mask
            };
            let adapter = match (&p2s, pcfg.p2s) {
                (Some(p), true) => Some(load_p2s(&Checkpoint::load(p)?)?.adapter),
                (None, true) => bail!(incognipipe::Error::Usage(
                    "stage p2s needs --p2s CHECKPOINT".into()
                )),
                _ => None,
            };
            let ds = load_data(&input)?;
            let gmap = identity_map_for(&ds, &gen, pcfg.seed)?;
            let models = Models {
                generator: &gen,
                adapter: adapter.as_ref(),
            };
            let out = deidentify_dataset(&ds, &gmap, &models, &pcfg)?;
            save_dataset(&common.out, &out.dataset)?;
            let mut m = Manifest::new("deidentify", pinned_args(&raw, seed), &pcfg, seeds(&cfg))?;
            m.extra = serde_json::json!({
                "identity_map": gmap,
                "audit": out.audit,
                "frames": out.frames,
            });
            let names: Vec<String> = out
                .dataset
                .sequences
                .iter()
                .map(|s| s.name.clone())
                .collect();
            let outputs: Vec<&str> = names.iter().map(String::as_str).collect();
            finish(m, &common.out, &outputs)
        }
        Cmd::Baseline { input, out, kind } => {
            let kind: Baseline = kind.parse()?;
            let ds = load_data(&input)?;
            let res = apply_baseline(&ds, kind)?;
            save_dataset(&out, &res)?;
            let m = Manifest::new("baseline", pinned_args(&raw, None), &kind, BTreeMap::new())?;
            let names: Vec<String> = res.sequences.iter().map(|s| s.name.clone()).collect();
            let outputs: Vec<&str> = names.iter().map(String::as_str).collect();
            finish(m, &out, &outputs)
        }
        Cmd::Eval {
            common,
            mode,
            data,
            test,
            steps,
            checkpoint,
            k,
        } => match mode {
            EvalMode::Detect => {
                let (mut cfg, seed) = load_config(&common)?;
                if let Some(s) = steps {
                    cfg.detector.steps = s;
                }
                let train = load_data(&data)?;
                let test = load_data(test.as_ref().context("--test is required for detection")?)?;
                let mut runs = Vec::new();
                mkdir(&common.out)?;
                for r in 0..cfg.detector_runs {
                    let dcfg = DetectorConfig {
                        seed: derive_seed(cfg.detector.seed, &format!("run-{r}")),
                        ..cfg.detector.clone()
                    };
                    let (det, _) = train_tiny_detector(&train, &dcfg)?;
                    runs.push(evaluate_detector(&det, &test)?);
                }
                let scores = DetectionScores::from_runs(runs);
                write_json(&common.out.join("metrics.json"), &scores)?;
                let m = Manifest::new(
                    "eval",
                    pinned_args(&raw, seed),
                    &(&cfg.detector, cfg.detector_runs),
                    seeds(&cfg),
                )?;
                finish(m, &common.out, &["metrics.json"])
            }
            EvalMode::Reid | EvalMode::Deid => {
                let mode = if mode == EvalMode::Reid {
                    IdentArg::Reid
                } else {
                    IdentArg::Deid
                };
                eval_ident(
                    &common,
                    &raw,
                    mode,
                    &data,
                    test.as_deref(),
                    checkpoint.as_deref(),
                    k,
                    steps,
                    "eval",
                )
            }
        },
        Cmd::EvalIdent {
            common,
            mode,
            data,
            gallery,
            checkpoint,
            k,
            steps,
        } => eval_ident(
            &common,
            &raw,
            mode,
            &data,
            gallery.as_deref(),
            checkpoint.as_deref(),
            k,
            steps,
            "eval-ident",
        ),
        Cmd::Ablate {
            common,
            quick,
            table,
            columns,
        } => {
            let (mut cfg, seed) = load_config(&common)?;
            if quick {
                cfg = cfg.quick();
            }
            let mut cols = Columns {
                deid: false,
                reid: false,
                detection: false,
            };
            for c in columns.split(',').map(str::trim) {
                match c {
                    "deid" => cols.deid = true,
                    "reid" => cols.reid = true,
                    "detect" => cols.detection = true,
                    o => bail!(incognipipe::Error::Usage(format!(
                        "unknown column {o:?} (deid, reid, detect)"
                    ))),
                }
            }
            let methods: Vec<Method> = match table {
                TableArg::Ablation => AblationRow::ALL
                    .iter()
                    .map(|&r| Method::Pipeline(r))
                    .collect(),
                TableArg::Comparison => COMPARISON.to_vec(),
            };
            let evaluator = if cols.deid {
                Some(train_evaluator(&cfg)?)
            } else {
                None
            };
            let mut bench = Bench::new(cfg.clone())?;
            let rows = run_methods(&mut bench, &methods, evaluator.as_ref(), cols)?;
            mkdir(&common.out)?;
            write_json(&common.out.join("metrics.json"), &rows)?;
            fs::write(common.out.join("table.txt"), format_table(&rows, &cfg.ks))?;
            print!("{}", format_table(&rows, &cfg.ks));
            let mut m = Manifest::new("ablate", pinned_args(&raw, seed), &cfg, seeds(&cfg))?;
            m.extra = serde_json::json!({ "audit": bench.audit });
            finish(m, &common.out, &["metrics.json", "table.txt"])
        }
        Cmd::Rerun { manifest, out } => {
            let m = Manifest::load(&manifest)?;
            let mut args = m.args.clone();
            if let Some(o) = out {
                let pos = args
                    .iter()
                    .position(|a| a == "--out")
                    .context("recorded command has no --out")?;
                args[pos + 1] = o.display().to_string();
            }
            let mut argv = vec!["incognipipe".to_string()];
            argv.extend(args.iter().cloned());
            let cli =
                Cli::try_parse_from(&argv).map_err(|e| incognipipe::Error::Usage(e.to_string()))?;
            if matches!(cli.cmd, Cmd::Rerun { .. }) {
                bail!(incognipipe::Error::Usage(
                    "a manifest cannot replay rerun".into()
                ));
            }
            IGNORE_SEED_ENV.store(true, Ordering::Relaxed);
            run(cli.cmd, args)
        }
    }
}

fn seeds(cfg: &ExperimentConfig) -> BTreeMap<String, u64> {
    [
        ("master", cfg.seed),
        ("train_data", cfg.train_data.seed),
        ("test_data", cfg.test_data.seed),
        ("synthetic_data", cfg.synthetic_data.seed),
        ("p2p", cfg.p2p.seed),
        ("p2p_init", cfg.p2p.generator.seed),
        ("p2s", cfg.p2s.seed),
        ("p2s_init", cfg.p2s.adapter.seed),
        ("identity_map", cfg.pipeline.seed),
        ("detector", cfg.detector.seed),
        ("evaluator", cfg.evaluator.seed),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[allow(clippy::too_many_arguments)]
fn eval_ident(
    common: &Common,
    raw: &[String],
    mode: IdentArg,
    data: &Path,
    gallery: Option<&Path>,
    checkpoint: Option<&Path>,
    k: Option<Vec<usize>>,
    steps: Option<usize>,
    command: &str,
) -> anyhow::Result<()> {
    let (mut cfg, seed) = load_config(common)?;
    if let Some(k) = k {
        cfg.ks = k;
    }
    if let Some(s) = steps {
        cfg.evaluator.steps = s;
    }
    cfg.validate()?;
    let queries = load_data(data)?;
    let gallery_ds = match gallery {
        Some(g) => load_data(g)?,
        None => queries.clone(),
    };
    mkdir(&common.out)?;
    let mut outputs = vec!["metrics.json"];
    let model = match checkpoint {
        Some(p) => EmbeddingModel::from_checkpoint(&Checkpoint::load(p)?)?,
        None => {
            let (m, hist) = train_embedding(&gallery_ds, &cfg.evaluator)?;
            m.to_checkpoint(hist)?
                .save(&common.out.join("evaluator.json"))?;
            outputs.push("evaluator.json");
            m
        }
    };
    let split = build_query_gallery(&gallery_ds, cfg.n_query, cfg.seed)?;
    let mode = match mode {
        IdentArg::Reid => IdentMode::Reid,
        IdentArg::Deid => IdentMode::Deid,
    };
    let report = evaluate_identification(&model, &queries, &gallery_ds, &split, &cfg.ks, mode)?;
    write_json(&common.out.join("metrics.json"), &report)?;
    for (k, v) in &report.scores {
        println!("{k}: {v:.4}");
    }
    let m = Manifest::new(
        command,
        pinned_args(raw, seed),
        &(&cfg.evaluator, cfg.n_query, &cfg.ks),
        seeds(&cfg),
    )?;
    finish(m, &common.out, &outputs)
}
