//! Top-k ranking evaluation over held-out final baskets.
//!
//! For every test user the candidates are all catalog items absent from the
//! user's training history and the relevant items are the held-out basket.
//! AUC is computed against the full candidate complement with ties counted
//! as one half. All metrics are macro-averaged over users.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::{Catalog, ItemIdx, Split, UserIdx};
use crate::error::{Error, Result};

pub const DEFAULT_KS: [usize; 2] = [20, 100];

/// Everything a recommender may look at when scoring one test user.
#[derive(Debug, Clone, Copy)]
pub struct EvalQuery<'a> {
    pub user: UserIdx,
    pub user_id: &'a str,
    /// Training history, sorted.
    pub profile: &'a [ItemIdx],
    pub candidates: &'a [ItemIdx],
    /// Held-out items; only the oracle uses them.
    pub relevant: &'a [ItemIdx],
}

pub trait Recommender: Sync {
    fn name(&self) -> String;

    /// One score per candidate, higher is better.
    fn score(&self, query: &EvalQuery<'_>) -> Result<Vec<f64>>;
}

/// Sorts by descending score, ties by ascending item id.
pub fn rank_scored(mut scored: Vec<(ItemIdx, f64)>, catalog: &Catalog) -> Vec<(ItemIdx, f64)> {
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| catalog.id(a.0).cmp(catalog.id(b.0)))
    });
    scored
}

/// Fraction of (relevant, non-relevant) pairs ordered correctly, ties 0.5.
pub fn auc(scores: &[f64], relevant: &[bool]) -> Result<f64> {
    if scores.len() != relevant.len() {
        return Err(Error::Shape(format!("{} scores for {} flags", scores.len(), relevant.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let n_rel = relevant.iter().filter(|&&r| r).count();
    let n_non = relevant.len() - n_rel;
    if n_rel == 0 || n_non == 0 {
        return Err(Error::InvalidArgument(
            "AUC needs at least one relevant and one non-relevant candidate".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mann-Whitney U with mid-ranks
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + end + 1) as f64 / 2.0;
        let rel_in_group = order[start..end].iter().filter(|&&i| relevant[i]).count();
        rank_sum += mid_rank * rel_in_group as f64;
        start = end;
    }
    let u = rank_sum - (n_rel * (n_rel + 1)) as f64 / 2.0;
    Ok(u / (n_rel as f64 * n_non as f64))
}

fn check_top_k(relevant: &HashSet<ItemIdx>, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if relevant.is_empty() {
        return Err(Error::InvalidArgument("empty relevant set".into()));
    }
    Ok(())
}

fn hits_at_k(ranked: &[ItemIdx], relevant: &HashSet<ItemIdx>, k: usize) -> usize {
    ranked.iter().take(k).filter(|i| relevant.contains(i)).count()
}

/// `(|top-k ∩ rel| / k, |top-k ∩ rel| / |rel|)`.
pub fn precision_recall_at_k(ranked: &[ItemIdx], relevant: &HashSet<ItemIdx>, k: usize) -> Result<(f64, f64)> {
    check_top_k(relevant, k)?;
    let hits = hits_at_k(ranked, relevant, k) as f64;
    Ok((hits / k as f64, hits / relevant.len() as f64))
}

/// Binary-relevance nDCG with the ideal DCG truncated at `min(k, |rel|)`.
pub fn ndcg_at_k(ranked: &[ItemIdx], relevant: &HashSet<ItemIdx>, k: usize) -> Result<f64> {
    check_top_k(relevant, k)?;
    let gain = |p: usize| 1.0 / ((p + 1) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(p, _)| gain(p + 1))
        .sum();
    let idcg: f64 = (1..=k.min(relevant.len())).map(gain).sum();
    Ok(dcg / idcg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserMetrics {
    pub user_id: String,
    pub relevant: usize,
    pub candidates: usize,
    pub auc: f64,
    /// Indexed like the report's `ks`.
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub auc: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub name: String,
    pub lambda: Option<f64>,
    pub ks: Vec<usize>,
    pub users: Vec<UserMetrics>,
    /// Users whose candidate set was all-relevant or had no relevant item.
    pub skipped_degenerate: usize,
    /// Users the method could not score (e.g. unknown to a factor model).
    pub skipped_unscorable: usize,
    pub mean: Summary,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

enum Outcome {
    Scored(UserMetrics),
    Degenerate,
    Unscorable,
}

fn evaluate_user(
    method: &dyn Recommender,
    catalog: &Catalog,
    user: UserIdx,
    user_id: &str,
    profile: &[ItemIdx],
    held_out: &[ItemIdx],
    ks: &[usize],
) -> Result<Outcome> {
    let candidates: Vec<ItemIdx> = (0..catalog.len() as ItemIdx)
        .filter(|i| profile.binary_search(i).is_err())
        .collect();
    let relevant_set: HashSet<ItemIdx> = held_out
        .iter()
        .copied()
        .filter(|i| profile.binary_search(i).is_err())
        .collect();
    if relevant_set.is_empty() || relevant_set.len() == candidates.len() {
        log::warn!("user {user_id}: degenerate candidate set, skipped");
        return Ok(Outcome::Degenerate);
    }
    let mut relevant: Vec<ItemIdx> = relevant_set.iter().copied().collect();
    relevant.sort_unstable();
    let query = EvalQuery {
        user,
        user_id,
        profile,
        candidates: &candidates,
        relevant: &relevant,
    };
    let scores = match method.score(&query) {
        Ok(s) => s,
        Err(Error::UnknownUser(u)) => {
            log::warn!("{}: cannot score unknown user {u}", method.name());
            return Ok(Outcome::Unscorable);
        }
        Err(e) => return Err(e),
    };
    if scores.len() != candidates.len() {
        return Err(Error::Shape(format!(
            "{} returned {} scores for {} candidates",
            method.name(),
            scores.len(),
            candidates.len()
        )));
    }
    let flags: Vec<bool> = candidates.iter().map(|i| relevant_set.contains(i)).collect();
    let auc = auc(&scores, &flags)?;
    let ranked: Vec<ItemIdx> = rank_scored(candidates.iter().copied().zip(scores).collect(), catalog)
        .into_iter()
        .map(|(i, _)| i)
        .collect();
    let mut m = UserMetrics {
        user_id: user_id.to_string(),
        relevant: relevant_set.len(),
        candidates: candidates.len(),
        auc,
        precision: Vec::with_capacity(ks.len()),
        recall: Vec::with_capacity(ks.len()),
        ndcg: Vec::with_capacity(ks.len()),
    };
    for &k in ks {
        let (p, r) = precision_recall_at_k(&ranked, &relevant_set, k)?;
        m.precision.push(p);
        m.recall.push(r);
        m.ndcg.push(ndcg_at_k(&ranked, &relevant_set, k)?);
    }
    Ok(Outcome::Scored(m))
}

/// Scores every test user of `split` with `method`.
pub fn evaluate(method: &dyn Recommender, split: &Split, catalog: &Catalog, ks: &[usize]) -> Result<MethodReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument("k values must be positive".into()));
    }
    let tests: Vec<(&UserIdx, &crate::data::Basket)> = split.test.iter().collect();
    let outcomes = tests
        .par_iter()
        .map(|(&u, basket)| {
            let user = split.train.user(u);
            evaluate_user(method, catalog, u, &user.id, user.positives(), &basket.items, ks)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut users = Vec::new();
    let (mut degenerate, mut unscorable) = (0, 0);
    for o in outcomes {
        match o {
            Outcome::Scored(m) => users.push(m),
            Outcome::Degenerate => degenerate += 1,
            Outcome::Unscorable => unscorable += 1,
        }
    }
    if unscorable > 0 {
        log::warn!("{}: {unscorable} test users could not be scored", method.name());
    }
    let column = |f: &dyn Fn(&UserMetrics) -> f64| mean(users.iter().map(f));
    let summary = Summary {
        auc: column(&|m| m.auc),
        precision: (0..ks.len()).map(|j| column(&|m| m.precision[j])).collect(),
        recall: (0..ks.len()).map(|j| column(&|m| m.recall[j])).collect(),
        ndcg: (0..ks.len()).map(|j| column(&|m| m.ndcg[j])).collect(),
    };
    Ok(MethodReport {
        name: method.name(),
        lambda: None,
        ks: ks.to_vec(),
        users,
        skipped_degenerate: degenerate,
        skipped_unscorable: unscorable,
        mean: summary,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub methods: Vec<MethodReport>,
}

impl EvalReport {
    fn label(m: &MethodReport) -> String {
        match m.lambda {
            Some(l) => format!("{}[lambda={l}]", m.name),
            None => m.name.clone(),
        }
    }

    /// Fixed-width table, one row per method.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# candidates: all items not in the user's training history; AUC over the full candidate complement, ties count 1/2; metrics macro-averaged over test users"
        );
        let ks = self.methods.first().map(|m| m.ks.clone()).unwrap_or_default();
        let _ = write!(out, "{:<28}{:>10}{:>8}", "method", "lambda", "AUC");
        for k in &ks {
            let _ = write!(out, "{:>9}{:>9}{:>10}", format!("R@{k}"), format!("P@{k}"), format!("nDCG@{k}"));
        }
        let _ = writeln!(out, "{:>8}{:>9}", "users", "skipped");
        for m in &self.methods {
            let lambda = m.lambda.map(|l| l.to_string()).unwrap_or_else(|| "-".into());
            let _ = write!(out, "{:<28}{:>10}{:>8.4}", m.name, lambda, m.mean.auc);
            for j in 0..m.ks.len() {
                let _ = write!(out, "{:>9.4}{:>9.4}{:>10.4}", m.mean.recall[j], m.mean.precision[j], m.mean.ndcg[j]);
            }
            let _ = writeln!(
                out,
                "{:>8}{:>9}",
                m.users.len(),
                m.skipped_degenerate + m.skipped_unscorable
            );
        }
        out
    }

    /// `method.metric=value` lines with full precision.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for m in &self.methods {
            let l = Self::label(m);
            let _ = writeln!(out, "{l}.users={}", m.users.len());
            let _ = writeln!(out, "{l}.skipped_degenerate={}", m.skipped_degenerate);
            let _ = writeln!(out, "{l}.skipped_unscorable={}", m.skipped_unscorable);
            let _ = writeln!(out, "{l}.auc={}", m.mean.auc);
            for (j, k) in m.ks.iter().enumerate() {
                let _ = writeln!(out, "{l}.recall@{k}={}", m.mean.recall[j]);
                let _ = writeln!(out, "{l}.precision@{k}={}", m.mean.precision[j]);
                let _ = writeln!(out, "{l}.ndcg@{k}={}", m.mean.ndcg[j]);
            }
        }
        out
    }

    pub fn per_user_tsv(&self) -> String {
        let mut out = String::from("method\tuser_id\trelevant\tcandidates\tauc");
        let ks = self.methods.first().map(|m| m.ks.clone()).unwrap_or_default();
        for k in &ks {
            let _ = write!(out, "\trecall@{k}\tprecision@{k}\tndcg@{k}");
        }
        out.push('\n');
        for m in &self.methods {
            let l = Self::label(m);
            for u in &m.users {
                let _ = write!(out, "{l}\t{}\t{}\t{}\t{}", u.user_id, u.relevant, u.candidates, u.auc);
                for j in 0..u.precision.len() {
                    let _ = write!(out, "\t{}\t{}\t{}", u.recall[j], u.precision[j], u.ndcg[j]);
                }
                out.push('\n');
            }
        }
        out
    }
}
