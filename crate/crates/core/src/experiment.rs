//! End-to-end experiments on toy data: de-identification methods compared by
//! identification and downstream detection/tracking metrics.

use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::baselines::{apply_baseline, Baseline};
use crate::deid::{deidentify_dataset, identity_map_for, Models, PipelineConfig, PoseInput};
use crate::dettrack::EvalReport;
use crate::downstream::{evaluate_detector, train_tiny_detector, DetectorConfig};
use crate::error::{Error, Result};
use crate::ident::{
    build_query_gallery, evaluate_identification, train_embedding, EmbeddingConfig, EmbeddingModel,
    IdentMode, QueryGallerySplit,
};
use crate::person2scene::{train_person2scene, Adapter, P2STrainConfig};
use crate::pose2person::{train_pose2person, Generator, IdentityCatalog, P2PTrainConfig};
use crate::privacy::AccessAudit;
use crate::rng::rng_for;
use crate::scene::{generate_toy_dataset, Domain, SceneDataset, ToySceneSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every per-component seed below is derived from it.
    pub seed: u64,
    /// Frames to de-identify; downstream models train on them.
    pub train_data: ToySceneSpec,
    /// Untouched frames for downstream evaluation.
    pub test_data: ToySceneSpec,
    /// Source of the synthetic identities.
    pub synthetic_data: ToySceneSpec,
    /// Held-out identities for the fixed identification model; not reseeded.
    pub evaluator_data: ToySceneSpec,
    pub evaluator: EmbeddingConfig,
    pub p2p: P2PTrainConfig,
    pub p2s: P2STrainConfig,
    pub pipeline: PipelineConfig,
    pub detector: DetectorConfig,
    /// Detectors trained per method (distinct seeds); scores are averaged.
    pub detector_runs: usize,
    /// Embedding trained on a method's output for the reID utility column.
    pub reid_utility: EmbeddingConfig,
    pub n_query: usize,
    pub ks: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            train_data: ToySceneSpec::default(),
            test_data: ToySceneSpec::default(),
            synthetic_data: ToySceneSpec {
                domain: Domain::Synthetic,
                occlusion_rate: 0.0,
                ..Default::default()
            },
            evaluator_data: ToySceneSpec {
                num_identities: 32,
                seed: 1001,
                ..Default::default()
            },
            evaluator: EmbeddingConfig {
                steps: 1200,
                ..Default::default()
            },
            p2p: P2PTrainConfig {
                steps: 500,
                lr: 2e-4,
                ..Default::default()
            },
            p2s: P2STrainConfig {
                steps: 250,
                lr: 1e-3,
                ..Default::default()
            },
            pipeline: PipelineConfig::default(),
            detector: DetectorConfig::default(),
            detector_runs: 3,
            reid_utility: EmbeddingConfig {
                steps: 300,
                ..Default::default()
            },
            n_query: 5,
            ks: vec![1, 5],
        };
        cfg.apply_seed(0);
        cfg
    }
}

/// Seed for one component, derived from the master seed.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    // 31 bits keep seeds readable and representable in TOML integers.
    rng_for(master, &format!("derive/{tag}")).next_u64() >> 33
}

impl ExperimentConfig {
    /// Sets the master seed and re-derives every component seed from it.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train_data.seed = derive_seed(seed, "train-data");
        self.test_data.seed = derive_seed(seed, "test-data");
        self.synthetic_data.seed = derive_seed(seed, "synthetic-data");
        self.p2p.seed = derive_seed(seed, "p2p");
        self.p2p.generator.seed = derive_seed(seed, "p2p-init");
        self.p2s.seed = derive_seed(seed, "p2s");
        self.p2s.adapter.seed = derive_seed(seed, "p2s-init");
        self.pipeline.seed = derive_seed(seed, "identity-map");
        self.detector.seed = derive_seed(seed, "detector");
        self.reid_utility.seed = derive_seed(seed, "reid-utility");
    }

    /// Reduced step counts for smoke runs.
    pub fn quick(mut self) -> Self {
        self.evaluator.steps = self.evaluator.steps.min(200);
        self.p2p.steps = self.p2p.steps.min(150);
        self.p2s.steps = self.p2s.steps.min(60);
        self.detector.steps = self.detector.steps.min(250);
        self.reid_utility.steps = self.reid_utility.steps.min(100);
        self.train_data.frames = self.train_data.frames.min(30);
        self.test_data.frames = self.test_data.frames.min(30);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config(
                "ks must be a non-empty list of positive ranks".into(),
            ));
        }
        if self.detector_runs == 0 {
            return Err(Error::Config("detector_runs must be positive".into()));
        }
        if self.n_query == 0 {
            return Err(Error::Config("n_query must be positive".into()));
        }
        if self.synthetic_data.domain != Domain::Synthetic {
            return Err(Error::Config(
                "synthetic_data must use the synthetic domain".into(),
            ));
        }
        self.pipeline.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Rows of the component ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationRow {
    P2pMask,
    P2pMaskJoints,
    Blend,
    BlendP2s,
    BlendP2sAug,
}

impl AblationRow {
    pub const ALL: [AblationRow; 5] = [
        AblationRow::P2pMask,
        AblationRow::P2pMaskJoints,
        AblationRow::Blend,
        AblationRow::BlendP2s,
        AblationRow::BlendP2sAug,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationRow::P2pMask => "P2P (mask)",
            AblationRow::P2pMaskJoints => "P2P (mask+joints)",
            AblationRow::Blend => "+ blending",
            AblationRow::BlendP2s => "+ blending + P2S",
            AblationRow::BlendP2sAug => "+ blending + P2S + aug",
        }
    }

    /// Pipeline settings for this row on top of `base`.
    pub fn pipeline(self, base: &PipelineConfig) -> PipelineConfig {
        let (pose, blend, p2s, aug) = match self {
            AblationRow::P2pMask => (PoseInput::Mask, false, false, false),
            AblationRow::P2pMaskJoints => (PoseInput::MaskJoints, false, false, false),
            AblationRow::Blend => (PoseInput::MaskJoints, true, false, false),
            AblationRow::BlendP2s => (PoseInput::MaskJoints, true, true, false),
            AblationRow::BlendP2sAug => (PoseInput::MaskJoints, true, true, true),
        };
        PipelineConfig {
            p2p: true,
            blend,
            p2s,
            augment: aug,
            pose_input: pose,
            ..base.clone()
        }
    }
}

/// A de-identification method under comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    None,
    Baseline(Baseline),
    Pipeline(AblationRow),
}

impl Method {
    pub fn label(self) -> String {
        match self {
            Method::None => "none".into(),
            Method::Baseline(b) => serde_json::to_value(b)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default(),
            Method::Pipeline(r) => r.label().into(),
        }
    }
}

/// Everything a method's output is scored against.
pub struct Bench {
    pub cfg: ExperimentConfig,
    pub train: SceneDataset,
    pub test: SceneDataset,
    pub split: QueryGallerySplit,
    pub test_split: QueryGallerySplit,
    pub synthetic: SceneDataset,
    generators: BTreeMap<bool, Generator>,
    adapters: BTreeMap<bool, Adapter>,
    pub history: BTreeMap<String, Vec<f64>>,
    pub audit: AccessAudit,
}

impl Bench {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let train = generate_toy_dataset(&cfg.train_data)?;
        let test = generate_toy_dataset(&cfg.test_data)?;
        let synthetic = generate_toy_dataset(&cfg.synthetic_data)?;
        let split = build_query_gallery(&train, cfg.n_query, cfg.seed)?;
        let test_split = build_query_gallery(&test, cfg.n_query, cfg.seed)?;
        Ok(Self {
            cfg,
            train,
            test,
            split,
            test_split,
            synthetic,
            generators: BTreeMap::new(),
            adapters: BTreeMap::new(),
            history: BTreeMap::new(),
            audit: AccessAudit::default(),
        })
    }

    /// Generator with or without joints conditioning, trained on first use.
    pub fn generator(&mut self, joints: bool) -> Result<&Generator> {
        if !self.generators.contains_key(&joints) {
            let mut c = self.cfg.p2p.clone();
            c.generator.use_joints = joints;
            let catalog = IdentityCatalog::from_dataset(&self.synthetic)?;
            let tr = train_pose2person(&self.synthetic, &catalog, &c)?;
            self.audit.merge(tr.audit);
            let tag = if joints { "p2p" } else { "p2p-mask" };
            for (k, v) in tr.history {
                self.history.insert(format!("{tag}/{k}"), v);
            }
            self.generators.insert(joints, tr.generator);
        }
        Ok(&self.generators[&joints])
    }

    pub fn insert_generator(&mut self, g: Generator) {
        self.generators.insert(g.cfg.use_joints, g);
    }

    /// Adapter trained with or without augmentation, trained on first use.
    pub fn adapter(&mut self, augment: bool) -> Result<&Adapter> {
        if !self.adapters.contains_key(&augment) {
            let c = P2STrainConfig {
                augment,
                ..self.cfg.p2s.clone()
            };
            let tr = train_person2scene(&self.train, &c)?;
            self.audit.merge(tr.audit);
            let tag = if augment { "p2s" } else { "p2s-noaug" };
            for (k, v) in tr.history {
                self.history.insert(format!("{tag}/{k}"), v);
            }
            self.adapters.insert(augment, tr.adapter);
        }
        Ok(&self.adapters[&augment])
    }

    pub fn insert_adapter(&mut self, a: Adapter, augment: bool) {
        self.adapters.insert(augment, a);
    }

    /// The training frames after applying `method`.
    pub fn apply(&mut self, method: Method) -> Result<SceneDataset> {
        match method {
            Method::None => Ok(self.train.clone()),
            Method::Baseline(b) => apply_baseline(&self.train, b),
            Method::Pipeline(row) => {
                let pcfg = row.pipeline(&self.cfg.pipeline);
                let joints = pcfg.pose_input == PoseInput::MaskJoints;
                self.generator(joints)?;
                if pcfg.p2s {
                    self.adapter(pcfg.augment)?;
                }
                let g = &self.generators[&joints];
                let models = Models {
                    generator: g,
                    adapter: if pcfg.p2s {
                        Some(&self.adapters[&pcfg.augment])
                    } else {
                        None
                    },
                };
                let gmap = identity_map_for(&self.train, g, pcfg.seed)?;
                let out = deidentify_dataset(&self.train, &gmap, &models, &pcfg)?;
                self.audit.merge(out.audit);
                Ok(out.dataset)
            }
        }
    }
}

/// Which metrics to compute for a method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Columns {
    pub deid: bool,
    pub reid: bool,
    pub detection: bool,
}

impl Columns {
    pub const ALL: Columns = Columns {
        deid: true,
        reid: true,
        detection: true,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub method: String,
    /// deID rank-k of the method's queries against the original gallery.
    pub deid: Option<BTreeMap<String, f64>>,
    /// reID rank-k on original test frames of an embedding trained on the method's output.
    pub reid: Option<BTreeMap<String, f64>>,
    /// Detectors trained on the method's output, scored on original test frames.
    pub detection: Option<DetectionScores>,
}

/// Detection and tracking scores averaged over detector runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores {
    pub ap: Option<f64>,
    pub mota: Option<f64>,
    pub idf1: Option<f64>,
    pub runs: Vec<EvalReport>,
}

impl DetectionScores {
    pub fn from_runs(runs: Vec<EvalReport>) -> Self {
        let mean = |f: &dyn Fn(&EvalReport) -> Option<f64>| -> Option<f64> {
            let v: Option<Vec<f64>> = runs.iter().map(f).collect();
            v.filter(|v| !v.is_empty())
                .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        };
        Self {
            ap: mean(&|r| r.ap),
            mota: mean(&|r| r.mota),
            idf1: mean(&|r| r.idf1),
            runs,
        }
    }
}

impl MethodScores {
    pub fn ap(&self) -> Option<f64> {
        self.detection.as_ref().and_then(|d| d.ap)
    }

    pub fn deid_rank(&self, k: usize) -> Option<f64> {
        self.deid
            .as_ref()
            .and_then(|m| m.get(&format!("rank-{k}")).copied())
    }

    pub fn reid_rank(&self, k: usize) -> Option<f64> {
        self.reid
            .as_ref()
            .and_then(|m| m.get(&format!("rank-{k}")).copied())
    }
}

/// Trains the fixed identification model on held-out identities.
pub fn train_evaluator(cfg: &ExperimentConfig) -> Result<EmbeddingModel> {
    let ds = generate_toy_dataset(&cfg.evaluator_data)?;
    Ok(train_embedding(&ds, &cfg.evaluator)?.0)
}

/// Scores one method's output dataset.
pub fn score(
    bench: &Bench,
    method: Method,
    output: &SceneDataset,
    evaluator: Option<&EmbeddingModel>,
    cols: Columns,
) -> Result<MethodScores> {
    let cfg = &bench.cfg;
    let deid = match (cols.deid, evaluator) {
        (true, Some(m)) => Some(
            evaluate_identification(
                m,
                output,
                &bench.train,
                &bench.split,
                &cfg.ks,
                IdentMode::Deid,
            )?
            .scores,
        ),
        (true, None) => return Err(Error::Usage("deID column needs an evaluator model".into())),
        _ => None,
    };
    let reid = if cols.reid {
        let (m, _) = train_embedding(output, &cfg.reid_utility)?;
        Some(
            evaluate_identification(
                &m,
                &bench.test,
                &bench.test,
                &bench.test_split,
                &cfg.ks,
                IdentMode::Reid,
            )?
            .scores,
        )
    } else {
        None
    };
    let detection = if cols.detection {
        let mut runs = Vec::with_capacity(cfg.detector_runs);
        for r in 0..cfg.detector_runs {
            let dcfg = DetectorConfig {
                seed: derive_seed(cfg.detector.seed, &format!("run-{r}")),
                ..cfg.detector.clone()
            };
            let (det, _) = train_tiny_detector(output, &dcfg)?;
            runs.push(evaluate_detector(&det, &bench.test)?);
        }
        Some(DetectionScores::from_runs(runs))
    } else {
        None
    };
    Ok(MethodScores {
        method: method.label(),
        deid,
        reid,
        detection,
    })
}

/// Applies and scores a list of methods in order.
pub fn run_methods(
    bench: &mut Bench,
    methods: &[Method],
    evaluator: Option<&EmbeddingModel>,
    cols: Columns,
) -> Result<Vec<MethodScores>> {
    let mut out = Vec::with_capacity(methods.len());
    for &m in methods {
        let ds = bench.apply(m)?;
        out.push(score(bench, m, &ds, evaluator, cols)?);
    }
    Ok(out)
}

/// Methods of the privacy/utility comparison table.
pub const COMPARISON: [Method; 6] = [
    Method::None,
    Method::Baseline(Baseline::WhiteCutout),
    Method::Baseline(Baseline::BlackWhiteBlur),
    Method::Baseline(Baseline::FaceBlur),
    Method::Pipeline(AblationRow::BlendP2sAug),
    Method::Pipeline(AblationRow::Blend),
];

/// Plain-text table with one row per method.
pub fn format_table(rows: &[MethodScores], ks: &[usize]) -> String {
    let mut header = vec![format!("{:<26}", "method")];
    for &k in ks {
        header.push(format!("{:>9}", format!("deID@{k}")));
    }
    for &k in ks {
        header.push(format!("{:>9}", format!("reID@{k}")));
    }
    for c in ["AP", "MOTA", "IDF1"] {
        header.push(format!("{c:>7}"));
    }
    let mut out = header.concat().trim_end().to_string();
    out.push('\n');
    let pct = |v: Option<f64>, w: usize| match v {
        Some(v) => format!("{:>w$.1}", 100.0 * v),
        None => format!("{:>w$}", "-"),
    };
    for r in rows {
        let mut line = format!("{:<26}", r.method);
        for &k in ks {
            line += &pct(r.deid_rank(k), 9);
        }
        for &k in ks {
            line += &pct(r.reid_rank(k), 9);
        }
        let d = r.detection.as_ref();
        line += &pct(d.and_then(|d| d.ap), 7);
        line += &pct(d.and_then(|d| d.mota), 7);
        line += &pct(d.and_then(|d| d.idf1), 7);
        out += line.trim_end();
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrips_through_toml_and_seed_derivation_is_stable() {
        let mut cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let before = cfg.clone();
        cfg.apply_seed(3);
        assert_ne!(cfg.p2p.seed, before.p2p.seed);
        assert_eq!(cfg.evaluator, before.evaluator);
        assert_eq!(cfg.evaluator_data, before.evaluator_data);
        cfg.apply_seed(0);
        assert_eq!(cfg, before);
        assert!(ExperimentConfig::from_toml("seed = 1\nbogus = 2\n").is_err());
        assert!(ExperimentConfig::from_toml("ks = []\n").is_err());
        let partial = ExperimentConfig::from_toml("n_query = 3\n").unwrap();
        assert_eq!(partial.n_query, 3);
    }

    #[test]
    fn ablation_rows_map_to_pipeline_flags() {
        let base = PipelineConfig::default();
        let p = AblationRow::P2pMask.pipeline(&base);
        assert_eq!(
            (p.stages().as_str(), p.pose_input),
            ("p2p", PoseInput::Mask)
        );
        assert_eq!(AblationRow::Blend.pipeline(&base).stages(), "p2p,blend");
        let full = AblationRow::BlendP2sAug.pipeline(&base);
        assert!(full.p2s && full.augment);
        assert!(!AblationRow::BlendP2s.pipeline(&base).augment);
        for r in AblationRow::ALL {
            r.pipeline(&base).validate().unwrap();
        }
    }

    #[test]
    fn table_formatting() {
        let rows = vec![MethodScores {
            method: "none".into(),
            deid: Some([("rank-1".to_string(), 0.0)].into()),
            reid: None,
            detection: None,
        }];
        let t = format_table(&rows, &[1]);
        assert!(t.lines().nth(1).unwrap().starts_with("none"));
        assert!(t.contains("0.0"));
    }
}
