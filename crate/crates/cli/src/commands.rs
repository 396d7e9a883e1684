use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use curatornet::ablation::{run_ablation, AblationConfig, ModelKind};
use curatornet::baselines::{
    vbpr_from_checkpoint, vbpr_to_checkpoint, Oracle, RandomRecommender, VbprDims, VbprParams, VbprScorer, VisRank,
    VBPR_CHECKPOINT_KIND,
};
use curatornet::checkpoint::Checkpoint;
use curatornet::clustering::{
    assignment_tsv, build_cluster_model, encode_cluster_model, load_cluster_model, projection_2d_tsv, ClusterConfig,
    ClusterModel,
};
use curatornet::data::{
    encode_artists, encode_embeddings_binary, load_artists, load_embeddings, load_transactions, split_train_test,
    BasketMode, Catalog, Dataset, Split, ARTISTS_FILE, ITEMS_FILE, SPLIT_MANIFEST_FILE, TEST_FILE, TRAIN_FILE,
};
use curatornet::evaluation::{evaluate, EvalReport, MethodReport, Recommender};
use curatornet::model::{from_checkpoint, rank_catalog, to_checkpoint, CuratorNetScorer, ModelDims, ModelParams, CHECKPOINT_KIND};
use curatornet::numerics::AdamConfig;
use curatornet::sampling::{
    build_training_corpus, encode_triples, load_triples, CorpusConfig, Sampler, TripleSet, GUIDELINE_STRATEGIES,
};
use curatornet::synthetic::{generate, SyntheticConfig};
use curatornet::training::{train as fit, TrainConfig};

use crate::manifest::Manifest;
use crate::{AblationArgs, ClusterArgs, EvalArgs, Hyper, IngestArgs, RecommendArgs, SampleArgs, TrainArgs};

const CLUSTERS_FILE: &str = "clusters.bin";
const ASSIGNMENT_FILE: &str = "clusters.tsv";
const PROJECTION_FILE: &str = "projection_2d.tsv";
const TRIPLES_TRAIN_FILE: &str = "triples_train.bin";
const TRIPLES_VALID_FILE: &str = "triples_valid.bin";
const CORPUS_REPORT_FILE: &str = "corpus.tsv";
const METHODS: [&str; 5] = ["curatornet", "vbpr", "visrank", "random", "oracle"];

fn open_dataset(dir: &Path, manifest: &mut Manifest) -> Result<Dataset> {
    let data = Dataset::open(dir).with_context(|| format!("opening data directory {} (run `curatornet ingest` first)", dir.display()))?;
    manifest.input("items", &dir.join(ITEMS_FILE))?;
    manifest.input("train", &dir.join(TRAIN_FILE))?;
    manifest.input("test", &dir.join(TEST_FILE))?;
    if data.catalog.has_artists() {
        manifest.input("artists", &dir.join(ARTISTS_FILE))?;
    }
    Ok(data)
}

fn open_clusters(dir: &Path, catalog: &Catalog, manifest: &mut Manifest) -> Result<ClusterModel> {
    let path = dir.join(CLUSTERS_FILE);
    let model = load_cluster_model(&path, catalog)
        .with_context(|| format!("loading {} (run `curatornet cluster` first)", path.display()))?;
    manifest.input("clusters", &path)?;
    Ok(model)
}

fn checkpoint_path(dir: &Path, model: ModelKind) -> PathBuf {
    dir.join(format!("{}.cnet", model.name()))
}

fn check_artist_strategies(catalog: &Catalog, strategies: &[u8]) -> Result<()> {
    if !catalog.has_artists() {
        if let Some(s) = strategies.iter().find(|&&s| matches!(s, 3 | 6)) {
            bail!("strategy {s} needs artist metadata, but the data has no artist column (ingest with --artists or drop strategies 3 and 6)");
        }
    }
    Ok(())
}

fn train_config(h: &Hyper, seed: u64, default_lr: f64, default_epochs: usize) -> TrainConfig {
    TrainConfig {
        adam: AdamConfig {
            lr: h.lr.unwrap_or(default_lr),
            ..Default::default()
        },
        lambda: h.lambda,
        batch_size: h.batch,
        max_epochs: h.epochs.unwrap_or(default_epochs),
        patience: h.patience,
        seed,
    }
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    let mut m = Manifest::new("ingest");
    let mut catalog = load_embeddings(&a.embeddings, a.dim).with_context(|| format!("loading {}", a.embeddings.display()))?;
    m.input("embeddings", &a.embeddings)?;
    if let Some(path) = &a.artists {
        let map = load_artists(path).with_context(|| format!("loading {}", path.display()))?;
        catalog.set_artists(&map)?;
        m.input("artists", path)?;
    }
    let mode = if a.one_item_baskets {
        BasketMode::OneItemBaskets
    } else {
        BasketMode::Indexed
    };
    let log = load_transactions(&a.transactions, &catalog, mode)
        .with_context(|| format!("loading {}", a.transactions.display()))?;
    m.input("transactions", &a.transactions)?;
    let split = split_train_test(&log);

    m.set("dim", a.dim);
    m.set("basket_mode", format!("{mode:?}"));
    m.set("items", catalog.len());
    m.set("users", split.train.num_users());
    m.set("train_baskets", split.train.num_baskets());
    m.set("test_users", split.test.len());
    let dir = &a.data_dir;
    m.stage(dir.join(ITEMS_FILE), encode_embeddings_binary(&catalog)?);
    if catalog.has_artists() {
        m.stage(dir.join(ARTISTS_FILE), encode_artists(&catalog).into_bytes());
    }
    m.stage(dir.join(TRAIN_FILE), split.train.to_tsv(&catalog).into_bytes());
    m.stage(dir.join(TEST_FILE), split.test_to_tsv(&catalog).into_bytes());
    m.stage(dir.join(SPLIT_MANIFEST_FILE), split.manifest(&catalog).into_bytes());
    m.commit(dir)?;
    println!(
        "ingested {} items, {} users, {} test users into {}",
        catalog.len(),
        split.train.num_users(),
        split.test.len(),
        dir.display()
    );
    Ok(())
}

pub fn cluster(a: &ClusterArgs) -> Result<()> {
    let mut m = Manifest::new("cluster");
    let data = open_dataset(&a.data_dir, &mut m)?;
    let cfg = ClusterConfig {
        k: a.k,
        pca_dim: a.pca_dim,
        restarts: a.restarts,
        seed: a.seed,
        ..Default::default()
    };
    let model = build_cluster_model(&data.catalog, &cfg)?;
    m.set("k", cfg.k);
    m.set("pca_dim", cfg.pca_dim);
    m.set("restarts", cfg.restarts);
    m.set("max_iters", cfg.max_iters);
    m.set("seed", cfg.seed);
    m.set("silhouette", model.silhouette);
    m.set("selected_restart", model.selected_restart);
    m.set("restart_silhouettes", join(&model.restart_silhouettes));
    let dir = &a.data_dir;
    m.stage(dir.join(CLUSTERS_FILE), encode_cluster_model(&model, &data.catalog)?);
    m.stage(dir.join(ASSIGNMENT_FILE), assignment_tsv(&model, &data.catalog).into_bytes());
    if let Some(tsv) = projection_2d_tsv(&model, &data.catalog) {
        m.stage(dir.join(PROJECTION_FILE), tsv.into_bytes());
    }
    m.commit(dir)?;
    println!(
        "k={} silhouette={:.4} (restart {} of {})",
        model.k,
        model.silhouette,
        model.selected_restart + 1,
        model.restart_silhouettes.len()
    );
    Ok(())
}

pub fn sample(a: &SampleArgs) -> Result<()> {
    let mut m = Manifest::new("sample");
    let data = open_dataset(&a.data_dir, &mut m)?;
    let clusters = open_clusters(&a.data_dir, &data.catalog, &mut m)?;
    let strategies = match &a.strategies {
        Some(s) => {
            check_artist_strategies(&data.catalog, s)?;
            s.clone()
        }
        None if data.catalog.has_artists() => GUIDELINE_STRATEGIES.to_vec(),
        None => {
            log::warn!("no artist metadata: sampling without strategies 3 and 6");
            vec![1, 2, 4, 5]
        }
    };
    let base = if a.paper_scale {
        CorpusConfig {
            train_count: CorpusConfig::FULL_TRAIN,
            valid_count: CorpusConfig::FULL_VALID,
            strategies: vec![],
            seed: a.seed,
        }
    } else {
        CorpusConfig::desk(a.seed)
    };
    let cfg = CorpusConfig {
        train_count: a.count.unwrap_or(base.train_count),
        valid_count: a.valid_count.unwrap_or(base.valid_count),
        strategies,
        seed: a.seed,
    };
    let mut sampler = Sampler::new(&data.catalog, &data.split.train, &clusters)?;
    sampler.skip_singletons = a.skip_singletons;
    let corpus = build_training_corpus(&sampler, &cfg)?;

    m.set("strategies", join(&cfg.strategies));
    m.set("train_count", cfg.train_count);
    m.set("valid_count", cfg.valid_count);
    m.set("skip_singletons", a.skip_singletons);
    m.set("seed", cfg.seed);
    m.set("train_realized", corpus.train.len());
    m.set("valid_realized", corpus.valid.len());
    let dir = &a.data_dir;
    m.stage(dir.join(TRIPLES_TRAIN_FILE), encode_triples(&corpus.train));
    m.stage(dir.join(TRIPLES_VALID_FILE), encode_triples(&corpus.valid));
    m.stage(dir.join(CORPUS_REPORT_FILE), corpus.manifest().into_bytes());
    m.commit(dir)?;
    print!("{}", corpus.manifest());
    Ok(())
}

fn load_corpus(dir: &Path, data: &Dataset, m: &mut Manifest) -> Result<(TripleSet, TripleSet)> {
    let mut sets = Vec::new();
    for (name, file) in [("triples_train", TRIPLES_TRAIN_FILE), ("triples_valid", TRIPLES_VALID_FILE)] {
        let path = dir.join(file);
        let set = load_triples(&path, data.catalog.len(), data.split.train.num_users())
            .with_context(|| format!("loading {} (run `curatornet sample` first)", path.display()))?;
        m.input(name, &path)?;
        sets.push(set);
    }
    let valid = sets.pop().expect("two sets");
    let train = sets.pop().expect("two sets");
    Ok((train, valid))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut m = Manifest::new("train");
    let data = open_dataset(&a.data_dir, &mut m)?;
    let (mut train_set, mut valid_set) = load_corpus(&a.data_dir, &data, &mut m)?;
    let strategies = match (&a.strategies, a.model) {
        (Some(s), _) => Some(s.clone()),
        (None, ModelKind::Vbpr) => Some(a.model.default_strategies()),
        (None, ModelKind::CuratorNet) => None,
    };
    if let Some(s) = &strategies {
        train_set = train_set.filter_strategies(s);
        valid_set = valid_set.filter_strategies(s);
        m.set("strategies", join(s));
    }
    if train_set.is_empty() {
        bail!("no training triples for the selected strategies");
    }
    let tc = train_config(&a.hyper, a.seed, AdamConfig::default().lr, TrainConfig::default().max_epochs);
    let mut meta = vec![("model".to_string(), a.model.name().to_string())];
    meta.extend(tc.echo());
    for (k, v) in &meta {
        m.set(k.clone(), v);
    }
    m.set("train_triples", train_set.len());
    m.set("valid_triples", valid_set.len());

    let (bytes, best_epoch, accuracy) = match a.model {
        ModelKind::CuratorNet => {
            let init = ModelParams::init(ModelDims::with_input(data.catalog.dim()), a.seed)?;
            let out = fit(init, &data.catalog, train_set.triples(), valid_set.triples(), &tc).map_err(|f| f.error)?;
            let acc = out.history[out.best_epoch - 1].valid_accuracy;
            (to_checkpoint(&out.model, meta, out.history).encode()?, out.best_epoch, acc)
        }
        ModelKind::Vbpr => {
            let init = VbprParams::init(
                data.split.train.num_users(),
                data.catalog.len(),
                data.catalog.dim(),
                VbprDims::default(),
                a.seed,
            )?;
            let out = fit(init, &data.catalog, train_set.triples(), valid_set.triples(), &tc).map_err(|f| f.error)?;
            let acc = out.history[out.best_epoch - 1].valid_accuracy;
            let ck = vbpr_to_checkpoint(&out.model, &data.catalog, &data.split.train, meta, out.history);
            (ck.encode()?, out.best_epoch, acc)
        }
    };
    let path = a.out.clone().unwrap_or_else(|| checkpoint_path(&a.data_dir, a.model));
    m.set("best_epoch", best_epoch);
    m.set("best_valid_accuracy", accuracy);
    m.stage(path.clone(), bytes);
    let manifest_dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    m.commit(&manifest_dir)?;
    println!(
        "{}: best epoch {best_epoch}, validation accuracy {accuracy:.4}, saved {}",
        a.model.name(),
        path.display()
    );
    Ok(())
}

fn checkpoint_lambda(ck: &Checkpoint) -> Option<f64> {
    ck.meta("lambda").and_then(|v| v.parse().ok())
}

fn evaluate_method(name: &str, data: &Dataset, dir: &Path, a: &EvalArgs, m: &mut Manifest) -> Result<MethodReport> {
    let (catalog, split): (&Catalog, &Split) = (&data.catalog, &data.split);
    let run = |r: &dyn Recommender| evaluate(r, split, catalog, &a.topk);
    let report = match name {
        "curatornet" => {
            let path = checkpoint_path(dir, ModelKind::CuratorNet);
            let ck = Checkpoint::load_kind(&path, CHECKPOINT_KIND).with_context(|| format!("loading {}", path.display()))?;
            m.input("curatornet", &path)?;
            let lambda = checkpoint_lambda(&ck);
            let (params, _) = from_checkpoint(ck)?;
            let mut r = run(&CuratorNetScorer::new(&params, catalog)?)?;
            r.lambda = lambda;
            r
        }
        "vbpr" => {
            let path = checkpoint_path(dir, ModelKind::Vbpr);
            let ck = Checkpoint::load_kind(&path, VBPR_CHECKPOINT_KIND).with_context(|| format!("loading {}", path.display()))?;
            m.input("vbpr", &path)?;
            let lambda = checkpoint_lambda(&ck);
            let params = vbpr_from_checkpoint(ck, catalog, &split.train)?;
            let mut r = run(&VbprScorer::new(&params, catalog)?)?;
            r.lambda = lambda;
            r
        }
        "visrank" => run(&VisRank::new(catalog)?)?,
        "random" => run(&RandomRecommender { seed: a.seed })?,
        "oracle" => run(&Oracle)?,
        other => bail!("unknown method {other:?}; expected one of {}", METHODS.join(", ")),
    };
    Ok(report)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let mut m = Manifest::new("eval");
    let data = open_dataset(&a.data_dir, &mut m)?;
    if data.split.test.is_empty() {
        bail!("the data directory has no test users");
    }
    let methods: Vec<String> = match &a.methods {
        Some(list) => list.iter().map(|s| s.trim().to_ascii_lowercase()).collect(),
        None => METHODS
            .iter()
            .filter(|&&name| match name {
                "curatornet" => checkpoint_path(&a.data_dir, ModelKind::CuratorNet).exists(),
                "vbpr" => checkpoint_path(&a.data_dir, ModelKind::Vbpr).exists(),
                _ => true,
            })
            .map(|s| s.to_string())
            .collect(),
    };
    let mut report = EvalReport::default();
    for name in &methods {
        report.methods.push(evaluate_method(name, &data, &a.data_dir, a, &mut m)?);
    }
    m.set("methods", methods.join(","));
    m.set("topk", join(&a.topk));
    m.set("random_seed", a.seed);
    let out = a.out.clone().unwrap_or_else(|| a.data_dir.clone());
    m.stage(out.join("report.txt"), report.to_text().into_bytes());
    m.stage(out.join("report.kv"), report.to_kv().into_bytes());
    m.stage(out.join("per_user.tsv"), report.per_user_tsv().into_bytes());
    m.commit(&out)?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn recommend(a: &RecommendArgs) -> Result<()> {
    let mut m = Manifest::new("recommend");
    let data = open_dataset(&a.data_dir, &mut m)?;
    let path = a
        .checkpoint
        .clone()
        .unwrap_or_else(|| checkpoint_path(&a.data_dir, ModelKind::CuratorNet));
    let ck = Checkpoint::load_kind(&path, CHECKPOINT_KIND).with_context(|| format!("loading {}", path.display()))?;
    m.input("checkpoint", &path)?;
    let (params, _) = from_checkpoint(ck)?;
    let k = a.topk.iter().copied().max().unwrap_or(20);
    let profile: Vec<&str> = a.profile.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
    let exclude: HashSet<String> = profile.iter().map(|s| s.to_string()).collect();
    let ranked = rank_catalog(&params, &profile, &data.catalog, &exclude, k)?;
    m.set("profile", profile.join(","));
    m.set("topk", k);
    let out = a.out.clone().unwrap_or_else(|| a.data_dir.clone());
    m.commit(&out)?;
    println!("rank\titem_id\tscore");
    for (r, (id, score)) in ranked.iter().enumerate() {
        println!("{}\t{id}\t{score:.6}", r + 1);
    }
    Ok(())
}

pub fn ablation(a: &AblationArgs) -> Result<()> {
    let mut m = Manifest::new("ablation");
    let (catalog, split, clusters, out) = match &a.data_dir {
        Some(dir) => {
            let data = open_dataset(dir, &mut m)?;
            let clusters = open_clusters(dir, &data.catalog, &mut m)?;
            (data.catalog, data.split, clusters, a.out.clone().unwrap_or_else(|| dir.clone()))
        }
        None => {
            let syn = SyntheticConfig::ablation();
            let data = generate(&syn)?;
            let split = split_train_test(&data.log);
            let cfg = ClusterConfig {
                k: syn.styles,
                pca_dim: 32,
                restarts: 5,
                max_iters: 100,
                seed: 0,
            };
            let clusters = build_cluster_model(&data.catalog, &cfg)?;
            m.set("dataset", format!("synthetic {syn:?}"));
            m.set("clusters", format!("{cfg:?}"));
            (data.catalog, split, clusters, a.out.clone().unwrap_or_else(|| PathBuf::from(".")))
        }
    };
    let mut cfg = AblationConfig::desk(a.model, catalog.dim());
    if a.paper_scale {
        cfg.train_count = CorpusConfig::FULL_TRAIN;
        cfg.valid_count = CorpusConfig::FULL_VALID;
        cfg.dims = ModelDims::with_input(catalog.dim());
        cfg.vbpr_dims = VbprDims::default();
        cfg.train = TrainConfig::default();
    }
    cfg.seeds = a.seeds.clone();
    if let Some(s) = &a.strategies {
        cfg.strategies = s.clone();
    }
    check_artist_strategies(&catalog, &cfg.strategies)?;
    cfg.train_count = a.count.unwrap_or(cfg.train_count);
    cfg.valid_count = a.valid_count.unwrap_or(cfg.valid_count);
    cfg.train = train_config(&a.hyper, 0, cfg.train.adam.lr, cfg.train.max_epochs);
    cfg.skip_singletons = a.skip_singletons;

    m.set("model", a.model.name());
    m.set("seeds", join(&cfg.seeds));
    m.set("strategies", join(&cfg.strategies));
    m.set("train_count", cfg.train_count);
    m.set("valid_count", cfg.valid_count);
    m.set("dims", format!("{:?}", cfg.dims));
    m.set("vbpr_dims", format!("{:?}", cfg.vbpr_dims));
    m.set("skip_singletons", cfg.skip_singletons);
    for (k, v) in cfg.train.echo() {
        if k != "seed" {
            m.set(k, v);
        }
    }
    let report = run_ablation(&catalog, &split, &clusters, &cfg)?;
    let text = report.to_text();
    m.set("mean_guided_auc", report.mean_guided);
    m.set("mean_random_auc", report.mean_random);
    m.set("p_value", report.p_value);
    m.stage(out.join(format!("ablation_{}.txt", a.model.name())), text.clone().into_bytes());
    m.commit(&out)?;
    print!("{text}");
    Ok(())
}
