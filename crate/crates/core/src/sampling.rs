//! BPR training triples: the six preference-aware sampling guidelines, the
//! uniform random-negative sampler used as ablation control, hash-based
//! deduplication and the persisted corpus format.
//!
//! Guidelines (strategy tag in parentheses):
//!
//! 1. basket leave-one-out: hide one item of a basket, profile is
//!    everything bought up to and including that basket;
//! 2. next basket: profile is everything bought before basket `k`,
//!    positive is an item of basket `k`;
//! 3. favorite artist: positive is an unpurchased work by one of the user's
//!    top artists, visually close to something the user owns;
//! 4. profile leave-one-out over the whole purchase history;
//! 5. single-item profile, positive from the same visual cluster;
//! 6. single-item profile, positive by the same artist and cluster.
//!
//! Guideline negatives are never owned by the user and never share the
//! positive's visual cluster; for 3 and 6 they also come from another artist.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::clustering::ClusterModel;
use crate::data::{Catalog, InteractionLog, ItemIdx, UserHistory, UserIdx};
use crate::error::{Error, Result};
use crate::io::{write_atomic, Reader};

pub const RANDOM_STRATEGY: u8 = 0;
pub const GUIDELINE_STRATEGIES: [u8; 6] = [1, 2, 3, 4, 5, 6];
pub const ATTEMPTS_PER_TRIPLE: usize = 100;
/// Number of top-ranked artists considered a user's favorites.
pub const FAVORITE_ARTISTS: usize = 3;
const NEGATIVE_TRIES: usize = 64;
const TRIPLES_MAGIC: &[u8] = b"CNTRP1";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TrainingTriple {
    pub user: UserIdx,
    /// Sorted ascending.
    pub profile: Vec<ItemIdx>,
    pub positive: ItemIdx,
    pub negative: ItemIdx,
    pub strategy: u8,
}

/// 64-bit digest over the sorted profile, the positive and the negative.
/// The user and strategy tag are not part of the digest, so identical
/// content produced by different strategies collides on purpose.
pub fn triple_hash(t: &TrainingTriple) -> u64 {
    let mut profile = t.profile.clone();
    profile.sort_unstable();
    let mut h = Sha256::new();
    h.update((profile.len() as u32).to_le_bytes());
    for i in profile {
        h.update(i.to_le_bytes());
    }
    h.update(t.positive.to_le_bytes());
    h.update(t.negative.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[derive(Debug, Clone, Default)]
pub struct TripleSet {
    triples: Vec<TrainingTriple>,
    seen: HashSet<u64>,
    counts: BTreeMap<u8, usize>,
}

impl TripleSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts unless a triple with the same hash is already present.
    pub fn insert(&mut self, t: TrainingTriple) -> bool {
        if !self.seen.insert(triple_hash(&t)) {
            return false;
        }
        *self.counts.entry(t.strategy).or_default() += 1;
        self.triples.push(t);
        true
    }

    pub fn contains_hash(&self, h: u64) -> bool {
        self.seen.contains(&h)
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[TrainingTriple] {
        &self.triples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TrainingTriple> {
        self.triples.iter()
    }

    pub fn count(&self, strategy: u8) -> usize {
        self.counts.get(&strategy).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<u8, usize> {
        &self.counts
    }

    /// Keeps only triples whose strategy is in `strategies`.
    pub fn filter_strategies(&self, strategies: &[u8]) -> TripleSet {
        let mut out = TripleSet::new();
        for t in self.triples.iter().filter(|t| strategies.contains(&t.strategy)) {
            out.insert(t.clone());
        }
        out
    }
}

impl FromIterator<TrainingTriple> for TripleSet {
    fn from_iter<I: IntoIterator<Item = TrainingTriple>>(iter: I) -> Self {
        let mut s = TripleSet::new();
        for t in iter {
            s.insert(t);
        }
        s
    }
}

/// Precomputed indices over the catalog, training log and clusters.
pub struct Sampler<'a> {
    catalog: &'a Catalog,
    log: &'a InteractionLog,
    clusters: &'a ClusterModel,
    cluster_members: Vec<Vec<ItemIdx>>,
    by_artist_cluster: HashMap<(u32, u32), Vec<ItemIdx>>,
    by_artist: HashMap<u32, Vec<ItemIdx>>,
    /// Per-user top artists, ranked by purchase count then artist index.
    favorites: Vec<Vec<u32>>,
    eligible: BTreeMap<u8, Vec<UserIdx>>,
    pub skip_singletons: bool,
}

impl<'a> Sampler<'a> {
    pub fn new(catalog: &'a Catalog, log: &'a InteractionLog, clusters: &'a ClusterModel) -> Result<Self> {
        if clusters.labels.len() != catalog.len() {
            return Err(Error::Shape(format!(
                "cluster model covers {} items, catalog has {}",
                clusters.labels.len(),
                catalog.len()
            )));
        }
        if log.is_empty() {
            return Err(Error::InvalidArgument("empty training log".into()));
        }
        let cluster_members = clusters.members();
        let mut by_artist_cluster: HashMap<(u32, u32), Vec<ItemIdx>> = HashMap::new();
        let mut by_artist: HashMap<u32, Vec<ItemIdx>> = HashMap::new();
        for i in 0..catalog.len() as ItemIdx {
            if let Some(a) = catalog.artist(i) {
                by_artist_cluster.entry((a, clusters.label(i))).or_default().push(i);
                by_artist.entry(a).or_default().push(i);
            }
        }
        let favorites = log
            .users()
            .iter()
            .map(|u| {
                let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
                for &i in u.positives() {
                    if let Some(a) = catalog.artist(i) {
                        *counts.entry(a).or_default() += 1;
                    }
                }
                let mut ranked: Vec<(u32, usize)> = counts.into_iter().collect();
                ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                ranked.into_iter().take(FAVORITE_ARTISTS).map(|(a, _)| a).collect()
            })
            .collect::<Vec<Vec<u32>>>();

        let n_items = catalog.len();
        let mut eligible: BTreeMap<u8, Vec<UserIdx>> = BTreeMap::new();
        for (u, user) in log.users().iter().enumerate() {
            let u = u as UserIdx;
            let owned = user.positives().len();
            if owned == 0 || owned >= n_items {
                continue;
            }
            eligible.entry(RANDOM_STRATEGY).or_default().push(u);
            if user.baskets.iter().enumerate().any(|(k, b)| k >= 1 || b.items.len() >= 2) {
                eligible.entry(1).or_default().push(u);
            }
            if user.baskets.len() >= 2 {
                eligible.entry(2).or_default().push(u);
            }
            if !favorites[u as usize].is_empty() {
                eligible.entry(3).or_default().push(u);
                eligible.entry(6).or_default().push(u);
            }
            if owned >= 2 {
                eligible.entry(4).or_default().push(u);
            }
            eligible.entry(5).or_default().push(u);
        }
        Ok(Sampler {
            catalog,
            log,
            clusters,
            cluster_members,
            by_artist_cluster,
            by_artist,
            favorites,
            eligible,
            skip_singletons: false,
        })
    }

    pub fn catalog(&self) -> &Catalog {
        self.catalog
    }

    pub fn log(&self) -> &InteractionLog {
        self.log
    }

    pub fn clusters(&self) -> &ClusterModel {
        self.clusters
    }

    pub fn eligible_users(&self, strategy: u8) -> &[UserIdx] {
        self.eligible.get(&strategy).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Uniform draw from `I \ I_u^+`.
    fn unowned<R: Rng + ?Sized>(&self, user: &UserHistory, rng: &mut R) -> Option<ItemIdx> {
        let owned = user.positives();
        let free = self.catalog.len().checked_sub(owned.len()).filter(|&f| f > 0)?;
        let mut j = rng.random_range(0..free) as ItemIdx;
        for &p in owned {
            if p <= j {
                j += 1;
            } else {
                break;
            }
        }
        Some(j)
    }

    fn guideline_negative<R: Rng + ?Sized>(
        &self,
        user: &UserHistory,
        positive: ItemIdx,
        avoid_artist: Option<u32>,
        rng: &mut R,
    ) -> Option<ItemIdx> {
        let pos_cluster = self.clusters.label(positive);
        for _ in 0..NEGATIVE_TRIES {
            let j = self.unowned(user, rng)?;
            if j == positive || self.clusters.label(j) == pos_cluster {
                continue;
            }
            if avoid_artist.is_some() && self.catalog.artist(j) == avoid_artist {
                continue;
            }
            return Some(j);
        }
        None
    }

    /// One sampling attempt for `strategy`; `None` means rejected.
    pub fn draw<R: Rng + ?Sized>(&self, strategy: u8, rng: &mut R) -> Option<TrainingTriple> {
        let &u = self.eligible_users(strategy).choose(rng)?;
        let user = self.log.user(u);
        let (profile, positive, negative) = match strategy {
            RANDOM_STRATEGY => {
                let &positive = user.positives().choose(rng)?;
                let mut profile: Vec<ItemIdx> = user.positives().iter().copied().filter(|&i| i != positive).collect();
                if profile.is_empty() {
                    if self.skip_singletons {
                        return None;
                    }
                    profile.push(positive);
                }
                let negative = self.unowned(user, rng)?;
                (profile, positive, negative)
            }
            1 => {
                let baskets: Vec<usize> = (0..user.baskets.len())
                    .filter(|&k| k >= 1 || user.baskets[k].items.len() >= 2)
                    .collect();
                let &k = baskets.choose(rng)?;
                let &positive = user.baskets[k].items.choose(rng)?;
                let profile: Vec<ItemIdx> = user.cumulative(k).into_iter().filter(|&i| i != positive).collect();
                let negative = self.guideline_negative(user, positive, None, rng)?;
                (profile, positive, negative)
            }
            2 => {
                let k = rng.random_range(1..user.baskets.len());
                let &positive = user.baskets[k].items.choose(rng)?;
                let profile = user.cumulative(k - 1);
                let negative = self.guideline_negative(user, positive, None, rng)?;
                (profile, positive, negative)
            }
            3 => {
                let &artist = self.favorites[u as usize].choose(rng)?;
                let owned_clusters: HashSet<u32> = user.positives().iter().map(|&i| self.clusters.label(i)).collect();
                let candidates: Vec<ItemIdx> = self.by_artist[&artist]
                    .iter()
                    .copied()
                    .filter(|&i| !user.owns(i) && owned_clusters.contains(&self.clusters.label(i)))
                    .collect();
                let &positive = candidates.choose(rng)?;
                let negative = self.guideline_negative(user, positive, Some(artist), rng)?;
                (user.positives().to_vec(), positive, negative)
            }
            4 => {
                let &positive = user.positives().choose(rng)?;
                let profile: Vec<ItemIdx> = user.positives().iter().copied().filter(|&i| i != positive).collect();
                let negative = self.guideline_negative(user, positive, None, rng)?;
                (profile, positive, negative)
            }
            5 => {
                let &anchor = user.positives().choose(rng)?;
                let cluster = &self.cluster_members[self.clusters.label(anchor) as usize];
                let positive = pick_other(cluster, anchor, rng)?;
                let negative = self.guideline_negative(user, positive, None, rng)?;
                (vec![anchor], positive, negative)
            }
            6 => {
                let with_artist: Vec<ItemIdx> = user
                    .positives()
                    .iter()
                    .copied()
                    .filter(|&i| self.catalog.artist(i).is_some())
                    .collect();
                let &anchor = with_artist.choose(rng)?;
                let artist = self.catalog.artist(anchor)?;
                let pool = self.by_artist_cluster.get(&(artist, self.clusters.label(anchor)))?;
                let positive = pick_other(pool, anchor, rng)?;
                let negative = self.guideline_negative(user, positive, Some(artist), rng)?;
                (vec![anchor], positive, negative)
            }
            _ => return None,
        };
        if profile.is_empty() || (strategy != RANDOM_STRATEGY && profile.binary_search(&positive).is_ok()) {
            return None;
        }
        Some(TrainingTriple {
            user: u,
            profile,
            positive,
            negative,
            strategy,
        })
    }

    /// Checks every triple invariant against the log and clusters.
    pub fn validate(&self, t: &TrainingTriple) -> std::result::Result<(), String> {
        if t.user as usize >= self.log.num_users() {
            return Err(format!("user index {} out of range", t.user));
        }
        let n = self.catalog.len() as ItemIdx;
        if t.positive >= n || t.negative >= n || t.profile.iter().any(|&i| i >= n) {
            return Err("item index out of range".into());
        }
        if t.profile.is_empty() {
            return Err("empty profile".into());
        }
        let user = self.log.user(t.user);
        let singleton_control = t.strategy == RANDOM_STRATEGY && t.profile == [t.positive];
        if t.profile.contains(&t.positive) && !singleton_control {
            return Err("positive inside profile".into());
        }
        if t.profile.contains(&t.negative) {
            return Err("negative inside profile".into());
        }
        if t.negative == t.positive {
            return Err("negative equals positive".into());
        }
        if user.owns(t.negative) {
            return Err("negative purchased by user".into());
        }
        match t.strategy {
            RANDOM_STRATEGY => {
                if !user.owns(t.positive) {
                    return Err("random-negative positive not purchased".into());
                }
            }
            1..=6 => {
                if self.clusters.label(t.positive) == self.clusters.label(t.negative) {
                    return Err("positive and negative share a visual cluster".into());
                }
                if matches!(t.strategy, 3 | 6) && self.catalog.artist(t.negative) == self.catalog.artist(t.positive) {
                    return Err("negative by the positive's artist".into());
                }
            }
            s => return Err(format!("unknown strategy {s}")),
        }
        Ok(())
    }

    fn sample_excluding(&self, strategy: u8, count: usize, exclude: &[&TripleSet], rng: &mut ChaCha8Rng) -> TripleSet {
        let mut out = TripleSet::new();
        if count == 0 {
            return out;
        }
        let budget = count.saturating_mul(ATTEMPTS_PER_TRIPLE);
        for _ in 0..budget {
            if out.len() >= count {
                break;
            }
            if let Some(t) = self.draw(strategy, rng) {
                let h = triple_hash(&t);
                if exclude.iter().any(|s| s.contains_hash(h)) {
                    continue;
                }
                out.insert(t);
            }
        }
        out
    }
}

fn pick_other<R: Rng + ?Sized>(pool: &[ItemIdx], exclude: ItemIdx, rng: &mut R) -> Option<ItemIdx> {
    if pool.iter().all(|&c| c == exclude) {
        return None;
    }
    loop {
        let &c = pool.choose(rng)?;
        if c != exclude {
            return Some(c);
        }
    }
}

/// Samples up to `count` distinct triples with one guideline (1–6) or the
/// random-negative control (0). Stops after `100 · count` attempts and
/// returns what it has, with a warning.
pub fn sample_triples(sampler: &Sampler<'_>, strategy: u8, count: usize, rng: &mut ChaCha8Rng) -> TripleSet {
    if matches!(strategy, 3 | 6) && !sampler.catalog.has_artists() {
        log::warn!("strategy {strategy} needs artist metadata; none loaded, emitting no triples");
        return TripleSet::new();
    }
    let out = sampler.sample_excluding(strategy, count, &[], rng);
    if out.len() < count {
        log::warn!(
            "strategy {strategy}: only {} of {count} triples within the attempt budget",
            out.len()
        );
    }
    out
}

/// Uniform user, uniform purchased positive, uniform unobserved negative.
pub fn sample_random_triples(sampler: &Sampler<'_>, count: usize, rng: &mut ChaCha8Rng) -> TripleSet {
    sample_triples(sampler, RANDOM_STRATEGY, count, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub train_count: usize,
    pub valid_count: usize,
    pub strategies: Vec<u8>,
    pub seed: u64,
}

impl CorpusConfig {
    pub const FULL_TRAIN: usize = 10_000_000;
    pub const FULL_VALID: usize = 300_000;

    pub fn desk(seed: u64) -> Self {
        CorpusConfig {
            train_count: 60_000,
            valid_count: 3_000,
            strategies: GUIDELINE_STRATEGIES.to_vec(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyReport {
    pub strategy: u8,
    pub train_quota: usize,
    pub train_realized: usize,
    pub valid_quota: usize,
    pub valid_realized: usize,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: TripleSet,
    pub valid: TripleSet,
    pub report: Vec<StrategyReport>,
}

impl Corpus {
    pub fn manifest(&self) -> String {
        let mut out = String::from("strategy\ttrain_quota\ttrain_realized\tvalid_quota\tvalid_realized\n");
        for r in &self.report {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.strategy, r.train_quota, r.train_realized, r.valid_quota, r.valid_realized
            );
        }
        let _ = writeln!(out, "total\t\t{}\t\t{}", self.train.len(), self.valid.len());
        out
    }
}

/// Even split of `total` over `n` slots, remainder to the first slot.
fn quotas(total: usize, n: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let mut q = vec![total / n; n];
    q[0] += total % n;
    q
}

const MAX_ROUNDS: usize = 16;

/// Fills one triple set: per-strategy quotas, cross-strategy dedup, and
/// redistribution of any strategy's shortfall over the strategies that can
/// still deliver.
fn fill(
    sampler: &Sampler<'_>,
    strategies: &[u8],
    total: usize,
    exclude: Option<&TripleSet>,
    rngs: &mut [ChaCha8Rng],
) -> (TripleSet, Vec<usize>) {
    let initial = quotas(total, strategies.len());
    let mut need = initial.clone();
    let mut exhausted: Vec<bool> = strategies
        .iter()
        .map(|&s| matches!(s, 3 | 6) && !sampler.catalog.has_artists())
        .collect();
    let mut set = TripleSet::new();
    for _ in 0..MAX_ROUNDS {
        // shortfall of exhausted strategies moves to the others
        let pool: usize = need.iter().zip(&exhausted).filter(|(_, &e)| e).map(|(n, _)| *n).sum();
        for (n, &e) in need.iter_mut().zip(&exhausted) {
            if e {
                *n = 0;
            }
        }
        let live: Vec<usize> = (0..strategies.len()).filter(|&i| !exhausted[i]).collect();
        if live.is_empty() {
            break;
        }
        for (slot, extra) in live.iter().zip(quotas(pool, live.len())) {
            need[*slot] += extra;
        }
        if need.iter().all(|&n| n == 0) {
            break;
        }
        let excludes: Vec<&TripleSet> = std::iter::once(&set).chain(exclude).collect();
        let batches: Vec<TripleSet> = rngs
            .par_iter_mut()
            .enumerate()
            .map(|(i, rng)| {
                if exhausted[i] || need[i] == 0 {
                    TripleSet::new()
                } else {
                    sampler.sample_excluding(strategies[i], need[i], &excludes, rng)
                }
            })
            .collect();
        for (i, batch) in batches.into_iter().enumerate() {
            if need[i] == 0 {
                continue;
            }
            let produced = batch.len();
            let requested = need[i];
            let mut accepted = 0;
            for t in batch.triples {
                if set.insert(t) {
                    accepted += 1;
                }
            }
            need[i] = requested - accepted;
            if produced < requested {
                exhausted[i] = true;
            }
        }
    }
    (set, initial)
}

fn strategy_seed(seed: u64, phase: u64, strategy: u8) -> u64 {
    seed ^ (phase.wrapping_mul(0x9E37_79B9_7F4A_7C15)) ^ ((strategy as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Samples the training set, then the validation set (deduplicated against
/// training), each split evenly across `config.strategies`.
pub fn build_training_corpus(sampler: &Sampler<'_>, config: &CorpusConfig) -> Result<Corpus> {
    if config.strategies.is_empty() {
        return Err(Error::InvalidArgument("no sampling strategies selected".into()));
    }
    let mut strategies = config.strategies.clone();
    strategies.sort_unstable();
    strategies.dedup();
    if let Some(s) = strategies.iter().find(|&&s| s > 6) {
        return Err(Error::InvalidArgument(format!("unknown strategy {s}")));
    }
    for &s in &strategies {
        if matches!(s, 3 | 6) && !sampler.catalog.has_artists() {
            log::warn!("strategy {s} needs artist metadata; its quota is redistributed");
        }
    }
    let mut train_rngs: Vec<ChaCha8Rng> = strategies
        .iter()
        .map(|&s| ChaCha8Rng::seed_from_u64(strategy_seed(config.seed, 1, s)))
        .collect();
    let (train, train_quota) = fill(sampler, &strategies, config.train_count, None, &mut train_rngs);
    let mut valid_rngs: Vec<ChaCha8Rng> = strategies
        .iter()
        .map(|&s| ChaCha8Rng::seed_from_u64(strategy_seed(config.seed, 2, s)))
        .collect();
    let (valid, valid_quota) = fill(sampler, &strategies, config.valid_count, Some(&train), &mut valid_rngs);
    let report = strategies
        .iter()
        .enumerate()
        .map(|(i, &s)| StrategyReport {
            strategy: s,
            train_quota: train_quota[i],
            train_realized: train.count(s),
            valid_quota: valid_quota[i],
            valid_realized: valid.count(s),
        })
        .collect();
    if train.len() < config.train_count {
        log::warn!("training corpus holds {} of {} requested triples", train.len(), config.train_count);
    }
    Ok(Corpus { train, valid, report })
}

/// Binary corpus: `CNTRP1`, u64 count, then per triple u32 user, u32
/// profile length, profile item indices, u32 positive, u32 negative and a
/// u8 strategy. Item indices refer to catalog order, users to the sorted
/// training log.
pub fn encode_triples(set: &TripleSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + set.len() * 24);
    out.extend_from_slice(TRIPLES_MAGIC);
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    for t in set.iter() {
        out.extend_from_slice(&t.user.to_le_bytes());
        out.extend_from_slice(&(t.profile.len() as u32).to_le_bytes());
        for i in &t.profile {
            out.extend_from_slice(&i.to_le_bytes());
        }
        out.extend_from_slice(&t.positive.to_le_bytes());
        out.extend_from_slice(&t.negative.to_le_bytes());
        out.push(t.strategy);
    }
    out
}

pub fn save_triples(set: &TripleSet, path: &Path) -> Result<()> {
    write_atomic(path, &encode_triples(set))
}

pub fn load_triples(path: &Path, num_items: usize, num_users: usize) -> Result<TripleSet> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(path, &bytes);
    r.expect_magic(TRIPLES_MAGIC)?;
    let count = r.u64()? as usize;
    let mut set = TripleSet::new();
    let check = |i: u32, what: &str, bound: usize| {
        if (i as usize) < bound {
            Ok(i)
        } else {
            Err(Error::format(path, format!("{what} index {i} out of range ({bound})")))
        }
    };
    for _ in 0..count {
        let user = check(r.u32()?, "user", num_users)?;
        let len = r.u32()? as usize;
        let profile = (0..len)
            .map(|_| check(r.u32()?, "item", num_items))
            .collect::<Result<Vec<_>>>()?;
        let positive = check(r.u32()?, "item", num_items)?;
        let negative = check(r.u32()?, "item", num_items)?;
        let strategy = r.u8()?;
        if strategy > 6 {
            return Err(Error::format(path, format!("unknown strategy {strategy}")));
        }
        if !set.insert(TrainingTriple {
            user,
            profile,
            positive,
            negative,
            strategy,
        }) {
            return Err(Error::format(path, "duplicate triple"));
        }
    }
    r.finish()?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Basket, ItemRecord};
    use ndarray::Array2;

    /// Catalog of `n` items; `cluster_of` and `artist_of` define metadata.
    fn fixture(
        n: usize,
        cluster_of: impl Fn(usize) -> u32,
        artist_of: impl Fn(usize) -> Option<String>,
    ) -> (Catalog, ClusterModel) {
        let records = (0..n)
            .map(|i| ItemRecord {
                item_id: format!("i{i:03}"),
                embedding: vec![1.0 + i as f32, 1.0],
                artist_id: artist_of(i),
            })
            .collect();
        let catalog = Catalog::from_records(records, 2).unwrap();
        let labels: Vec<u32> = (0..n).map(&cluster_of).collect();
        let k = labels.iter().max().unwrap() + 1;
        let clusters = ClusterModel {
            k: k as usize,
            pca: None,
            centroids: Array2::zeros((k as usize, 2)),
            labels,
            silhouette: 0.0,
            restart_silhouettes: vec![],
            selected_restart: 0,
            projection_2d: None,
        };
        (catalog, clusters)
    }

    fn log_of(users: &[(&str, Vec<Vec<u32>>)]) -> InteractionLog {
        InteractionLog::from_users(
            users
                .iter()
                .map(|(id, baskets)| {
                    UserHistory::new(
                        id.to_string(),
                        baskets
                            .iter()
                            .enumerate()
                            .map(|(k, items)| Basket {
                                index: k as u64,
                                items: items.clone(),
                            })
                            .collect(),
                    )
                })
                .collect(),
        )
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn hash_properties() {
        let t = TrainingTriple {
            user: 0,
            profile: vec![1, 2],
            positive: 3,
            negative: 4,
            strategy: 1,
        };
        assert_eq!(triple_hash(&t), triple_hash(&t.clone()));
        let swapped = TrainingTriple {
            profile: vec![2, 1],
            strategy: 5,
            user: 9,
            ..t.clone()
        };
        assert_eq!(triple_hash(&t), triple_hash(&swapped));
        let other = TrainingTriple { negative: 5, ..t.clone() };
        assert_ne!(triple_hash(&t), triple_hash(&other));
        let mut set = TripleSet::new();
        assert!(set.insert(t));
        assert!(!set.insert(swapped));
        assert_eq!(set.len(), 1);
    }

    #[test]
    fn strategy_one_hides_a_basket_item() {
        // items 0,1 in cluster 0; 2..10 in cluster 1
        let (cat, cl) = fixture(10, |i| if i < 2 { 0 } else { 1 }, |_| None);
        let log = log_of(&[("u", vec![vec![0, 1]])]);
        let s = Sampler::new(&cat, &log, &cl).unwrap();
        let set = sample_triples(&s, 1, 20, &mut rng(1));
        assert!(!set.is_empty());
        for t in set.iter() {
            assert!(t.profile == vec![0] && t.positive == 1 || t.profile == vec![1] && t.positive == 0);
            assert_eq!(cl.label(t.negative), 1);
            s.validate(t).unwrap();
        }
    }

    #[test]
    fn strategy_two_predicts_next_basket() {
        let (cat, cl) = fixture(10, |i| (i % 2) as u32, |_| None);
        let log = log_of(&[("u", vec![vec![0], vec![1]])]);
        let s = Sampler::new(&cat, &log, &cl).unwrap();
        let set = sample_triples(&s, 2, 10, &mut rng(2));
        assert!(!set.is_empty());
        for t in set.iter() {
            assert_eq!((t.profile.as_slice(), t.positive), (&[0u32][..], 1));
            assert_eq!(cl.label(t.negative), 0);
            assert!(t.negative != 0);
        }
    }

    #[test]
    fn strategy_five_stays_in_anchor_cluster() {
        let (cat, cl) = fixture(30, |i| (i / 10) as u32, |_| None);
        let log = log_of(&[("a", vec![vec![0, 11]]), ("b", vec![vec![25], vec![3]])]);
        let s = Sampler::new(&cat, &log, &cl).unwrap();
        let set = sample_triples(&s, 5, 200, &mut rng(3));
        assert!(set.len() > 50);
        for t in set.iter() {
            let x = t.profile[0];
            assert_eq!(t.profile.len(), 1);
            assert!(log.user(t.user).owns(x));
            assert_ne!(t.positive, x);
            assert_eq!(cl.label(t.positive), cl.label(x));
            assert_ne!(cl.label(t.negative), cl.label(t.positive));
            s.validate(t).unwrap();
        }
    }

    #[test]
    fn artist_strategies() {
        // artists by i % 3, clusters by i % 2
        let (cat, cl) = fixture(24, |i| (i % 2) as u32, |i| Some(format!("a{}", i % 3)));
        let log = log_of(&[("u", vec![vec![0, 3], vec![6]]), ("v", vec![vec![1]])]);
        let s = Sampler::new(&cat, &log, &cl).unwrap();
        let s3 = sample_triples(&s, 3, 30, &mut rng(4));
        assert!(!s3.is_empty());
        for t in s3.iter() {
            let user = log.user(t.user);
            assert_eq!(t.profile, user.positives().to_vec());
            assert!(!user.owns(t.positive));
            assert!(user.positives().iter().any(|&i| cl.label(i) == cl.label(t.positive)));
            s.validate(t).unwrap();
        }
        let s6 = sample_triples(&s, 6, 30, &mut rng(5));
        assert!(!s6.is_empty());
        for t in s6.iter() {
            let x = t.profile[0];
            assert_eq!(cat.artist(t.positive), cat.artist(x));
            assert_eq!(cl.label(t.positive), cl.label(x));
            assert_ne!(cat.artist(t.negative), cat.artist(x));
            s.validate(t).unwrap();
        }
    }

    #[test]
    fn artist_strategies_without_metadata_are_empty() {
        let (cat, cl) = fixture(10, |i| (i % 2) as u32, |_| None);
        let log = log_of(&[("u", vec![vec![0, 3]])]);
        let s = Sampler::new(&cat, &log, &cl).unwrap();
        assert!(sample_triples(&s, 3, 10, &mut rng(0)).is_empty());
        assert!(sample_triples(&s, 6, 10, &mut rng(0)).is_empty());
    }

    #[test]
    fn random_negatives_come_from_the_complement() {
        let (cat, cl) = fixture(3, |i| i as u32, |_| None);
        let log = log_of(&[("u", vec![vec![0, 1]])]);
        let s = Sampler::new(&cat, &log, &cl).unwrap();
        let mut r = rng(6);
        for _ in 0..50 {
            let t = s.draw(RANDOM_STRATEGY, &mut r).unwrap();
            assert_eq!(t.negative, 2);
        }
        let full = log_of(&[("u", vec![vec![0, 1, 2]])]);
        let s = Sampler::new(&cat, &full, &cl).unwrap();
        assert!(sample_random_triples(&s, 10, &mut r).is_empty());
    }

    #[test]
    fn random_singleton_profile_policy() {
        let (cat, cl) = fixture(5, |i| i as u32, |_| None);
        let log = log_of(&[("u", vec![vec![2]])]);
        let mut s = Sampler::new(&cat, &log, &cl).unwrap();
        let t = s.draw(RANDOM_STRATEGY, &mut rng(0)).unwrap();
        assert_eq!(t.profile, vec![2]);
        assert_eq!(t.positive, 2);
        s.validate(&t).unwrap();
        s.skip_singletons = true;
        assert!(s.draw(RANDOM_STRATEGY, &mut rng(0)).is_none());
    }

    #[test]
    fn random_negative_distribution_is_uniform() {
        // two eligible negatives; chi-square with 1 dof at p = 0.001 is 10.83
        let (cat, cl) = fixture(4, |i| i as u32, |_| None);
        let log = log_of(&[("u", vec![vec![0, 2]])]);
        let s = Sampler::new(&cat, &log, &cl).unwrap();
        let mut r = rng(7);
        let draws = 100_000;
        let mut ones = 0usize;
        for _ in 0..draws {
            let t = s.draw(RANDOM_STRATEGY, &mut r).unwrap();
            assert!(t.negative == 1 || t.negative == 3);
            ones += (t.negative == 1) as usize;
        }
        let frac = ones as f64 / draws as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
        let e = draws as f64 / 2.0;
        let chi2 = (ones as f64 - e).powi(2) / e + ((draws - ones) as f64 - e).powi(2) / e;
        assert!(chi2 < 10.83, "{chi2}");
    }

    #[test]
    fn validator_rejects_broken_triples() {
        let (cat, cl) = fixture(6, |i| (i % 2) as u32, |_| None);
        let log = log_of(&[("u", vec![vec![0, 1]])]);
        let s = Sampler::new(&cat, &log, &cl).unwrap();
        let good = TrainingTriple {
            user: 0,
            profile: vec![0],
            positive: 1,
            negative: 2,
            strategy: 1,
        };
        s.validate(&good).unwrap();
        let cases = [
            TrainingTriple { negative: 3, ..good.clone() },
            TrainingTriple { negative: 1, ..good.clone() },
            TrainingTriple { profile: vec![0, 1], ..good.clone() },
            TrainingTriple { negative: 0, ..good.clone() },
            TrainingTriple { profile: vec![], ..good.clone() },
        ];
        for bad in cases {
            assert!(s.validate(&bad).is_err(), "{bad:?}");
        }
    }

    fn corpus_fixture() -> (Catalog, ClusterModel, InteractionLog) {
        let (cat, cl) = fixture(60, |i| (i % 6) as u32, |i| Some(format!("a{}", i % 10)));
        let users: Vec<(String, Vec<Vec<u32>>)> = (0..12)
            .map(|u| {
                let base = (u * 5) % 60;
                (
                    format!("u{u:02}"),
                    vec![vec![base as u32, ((base + 6) % 60) as u32], vec![((base + 12) % 60) as u32]],
                )
            })
            .collect();
        let refs: Vec<(&str, Vec<Vec<u32>>)> = users.iter().map(|(u, b)| (u.as_str(), b.clone())).collect();
        (cat, cl, log_of(&refs))
    }

    #[test]
    fn corpus_quotas_dedup_and_determinism() {
        let (cat, cl, log) = corpus_fixture();
        let s = Sampler::new(&cat, &log, &cl).unwrap();
        let cfg = CorpusConfig {
            train_count: 6,
            valid_count: 6,
            strategies: GUIDELINE_STRATEGIES.to_vec(),
            seed: 11,
        };
        let c = build_training_corpus(&s, &cfg).unwrap();
        assert_eq!(c.train.len(), 6);
        for st in GUIDELINE_STRATEGIES {
            assert_eq!(c.train.count(st), 1, "strategy {st}");
        }
        let cfg = CorpusConfig {
            train_count: 600,
            valid_count: 60,
            ..cfg
        };
        let a = build_training_corpus(&s, &cfg).unwrap();
        let b = build_training_corpus(&s, &cfg).unwrap();
        assert_eq!(encode_triples(&a.train), encode_triples(&b.train));
        assert_eq!(encode_triples(&a.valid), encode_triples(&b.valid));
        for t in a.valid.iter() {
            assert!(!a.train.contains_hash(triple_hash(t)));
        }
        for t in a.train.iter().chain(a.valid.iter()) {
            s.validate(t).unwrap();
        }
        let realized: usize = a.report.iter().map(|r| r.train_realized).sum();
        assert_eq!(realized, a.train.len());
        assert_eq!(a.report.iter().map(|r| r.train_quota).sum::<usize>(), 600);
    }

    #[test]
    fn shortfall_moves_to_other_strategies() {
        let (cat, cl, log) = corpus_fixture();
        let mut cat = cat;
        cat.set_artists(&HashMap::new()).unwrap();
        let s = Sampler::new(&cat, &log, &cl).unwrap();
        let cfg = CorpusConfig {
            train_count: 120,
            valid_count: 0,
            strategies: GUIDELINE_STRATEGIES.to_vec(),
            seed: 1,
        };
        let c = build_training_corpus(&s, &cfg).unwrap();
        assert_eq!(c.train.count(3) + c.train.count(6), 0);
        assert_eq!(c.train.len(), 120);
        assert!(c.manifest().contains("total\t\t120\t\t0"));
    }

    #[test]
    fn quota_arithmetic() {
        assert_eq!(quotas(6, 6), vec![1; 6]);
        assert_eq!(quotas(10, 3), vec![4, 3, 3]);
        assert_eq!(quotas(0, 2), vec![0, 0]);
    }

    #[test]
    fn corpus_file_round_trip_and_errors() {
        let (cat, cl, log) = corpus_fixture();
        let s = Sampler::new(&cat, &log, &cl).unwrap();
        let c = build_training_corpus(&s, &CorpusConfig::desk(3).with_counts(200, 20)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.trp");
        save_triples(&c.train, &p).unwrap();
        let back = load_triples(&p, cat.len(), log.num_users()).unwrap();
        assert_eq!(back.triples(), c.train.triples());
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 2]).unwrap();
        assert!(load_triples(&p, cat.len(), log.num_users()).is_err());
        std::fs::write(&p, b"CNTRP9xxxxxxxx").unwrap();
        assert!(load_triples(&p, cat.len(), log.num_users())
            .unwrap_err()
            .to_string()
            .contains("unsupported"));
        save_triples(&c.train, &p).unwrap();
        assert!(load_triples(&p, 5, log.num_users()).is_err());
    }

    impl CorpusConfig {
        fn with_counts(mut self, train: usize, valid: usize) -> Self {
            self.train_count = train;
            self.valid_count = valid;
            self
        }
    }
}
