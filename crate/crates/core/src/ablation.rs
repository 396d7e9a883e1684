//! Guideline sampling versus uniform random negatives: train the same model
//! on both corpora over several seeds and compare held-out AUC with a paired
//! t-test.

use std::fmt::Write as _;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::baselines::{VbprDims, VbprParams, VbprScorer};
use crate::clustering::ClusterModel;
use crate::data::{Catalog, Split};
use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::model::{CuratorNetScorer, ModelDims, ModelParams};
use crate::numerics::AdamConfig;
use crate::sampling::{build_training_corpus, CorpusConfig, Sampler, TripleSet, RANDOM_STRATEGY};
use crate::training::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    CuratorNet,
    Vbpr,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::CuratorNet => "curatornet",
            ModelKind::Vbpr => "vbpr",
        }
    }

    /// Guideline set each model is trained on.
    pub fn default_strategies(&self) -> Vec<u8> {
        match self {
            ModelKind::CuratorNet => vec![1, 2, 3, 4, 5, 6],
            ModelKind::Vbpr => vec![3, 4],
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "curatornet" => Ok(ModelKind::CuratorNet),
            "vbpr" => Ok(ModelKind::Vbpr),
            other => Err(Error::InvalidArgument(format!("unknown model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub model: ModelKind,
    pub seeds: Vec<u64>,
    pub strategies: Vec<u8>,
    pub train_count: usize,
    pub valid_count: usize,
    pub train: TrainConfig,
    pub dims: ModelDims,
    pub vbpr_dims: VbprDims,
    pub skip_singletons: bool,
}

impl AblationConfig {
    /// Desk-scale run: three seeds, 20k training triples, 64-wide layers.
    pub fn desk(model: ModelKind, input_dim: usize) -> Self {
        AblationConfig {
            model,
            seeds: vec![0, 1, 2],
            strategies: model.default_strategies(),
            train_count: 20_000,
            valid_count: 1_000,
            train: TrainConfig {
                adam: AdamConfig {
                    lr: 1e-3,
                    ..Default::default()
                },
                max_epochs: 10,
                ..Default::default()
            },
            dims: ModelDims {
                input: input_dim,
                tower: [64, 64],
                head: [96, 64, 64],
            },
            vbpr_dims: VbprDims { latent: 64, visual: 64 },
            skip_singletons: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub guided_auc: f64,
    pub random_auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub model: ModelKind,
    pub runs: Vec<SeedResult>,
    pub mean_guided: f64,
    pub mean_random: f64,
    pub t_statistic: f64,
    pub p_value: f64,
}

impl AblationReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "model\t{}", self.model.name());
        let _ = writeln!(out, "seed\tguided_auc\trandom_auc\tdifference");
        for r in &self.runs {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:+.6}",
                r.seed,
                r.guided_auc,
                r.random_auc,
                r.guided_auc - r.random_auc
            );
        }
        let _ = writeln!(out, "mean\t{:.6}\t{:.6}\t{:+.6}", self.mean_guided, self.mean_random, self.mean_guided - self.mean_random);
        let _ = writeln!(out, "paired_t\t{}", self.t_statistic);
        let _ = writeln!(out, "p_value\t{}", self.p_value);
        out
    }
}

/// Two-sided paired t-test of `a − b`; returns `(t, p)`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument("paired t-test needs two equal samples of size >= 2".into()));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(if mean == 0.0 { (0.0, 1.0) } else { (mean.signum() * f64::INFINITY, 0.0) });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((t, 2.0 * (1.0 - dist.cdf(t.abs()))))
}

/// Trains `kind` on `corpus` and returns its macro AUC on the test split.
pub fn train_and_score(
    kind: ModelKind,
    catalog: &Catalog,
    split: &Split,
    corpus: (&TripleSet, &TripleSet),
    cfg: &AblationConfig,
    seed: u64,
) -> Result<f64> {
    let mut tc = cfg.train;
    tc.seed = seed;
    let (train_set, valid_set) = corpus;
    let auc = match kind {
        ModelKind::CuratorNet => {
            let init = ModelParams::init(cfg.dims, seed)?;
            let out = train(init, catalog, train_set.triples(), valid_set.triples(), &tc).map_err(|f| f.error)?;
            let scorer = CuratorNetScorer::new(&out.model, catalog)?;
            evaluate(&scorer, split, catalog, &[20])?.mean.auc
        }
        ModelKind::Vbpr => {
            let init = VbprParams::init(split.train.num_users(), catalog.len(), catalog.dim(), cfg.vbpr_dims, seed)?;
            let out = train(init, catalog, train_set.triples(), valid_set.triples(), &tc).map_err(|f| f.error)?;
            let scorer = VbprScorer::new(&out.model, catalog)?;
            evaluate(&scorer, split, catalog, &[20])?.mean.auc
        }
    };
    Ok(auc)
}

pub fn run_ablation(catalog: &Catalog, split: &Split, clusters: &ClusterModel, cfg: &AblationConfig) -> Result<AblationReport> {
    if cfg.seeds.len() < 2 {
        return Err(Error::InvalidArgument("the ablation needs at least two seeds".into()));
    }
    let mut sampler = Sampler::new(catalog, &split.train, clusters)?;
    sampler.skip_singletons = cfg.skip_singletons;
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let mut arms = [0.0; 2];
        for (arm, strategies) in [cfg.strategies.clone(), vec![RANDOM_STRATEGY]].into_iter().enumerate() {
            let corpus = build_training_corpus(
                &sampler,
                &CorpusConfig {
                    train_count: cfg.train_count,
                    valid_count: cfg.valid_count,
                    strategies,
                    seed,
                },
            )?;
            arms[arm] = train_and_score(cfg.model, catalog, split, (&corpus.train, &corpus.valid), cfg, seed)?;
        }
        log::info!("seed {seed}: guided AUC {:.4}, random AUC {:.4}", arms[0], arms[1]);
        runs.push(SeedResult {
            seed,
            guided_auc: arms[0],
            random_auc: arms[1],
        });
    }
    let guided: Vec<f64> = runs.iter().map(|r| r.guided_auc).collect();
    let random: Vec<f64> = runs.iter().map(|r| r.random_auc).collect();
    let (t, p) = paired_t_test(&guided, &random)?;
    let n = runs.len() as f64;
    Ok(AblationReport {
        model: cfg.model,
        mean_guided: guided.iter().sum::<f64>() / n,
        mean_random: random.iter().sum::<f64>() / n,
        runs,
        t_statistic: t,
        p_value: p,
    })
}
