//! Reference recommenders: visually-aware matrix factorization (VBPR),
//! max-cosine VisRank, uniform Random and the Oracle upper bound.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, EpochRecord};
use crate::data::{Catalog, InteractionLog, ItemIdx, UserIdx};
use crate::error::{Error, Result};
use crate::evaluation::{EvalQuery, Recommender};
use crate::numerics::{cosine, neg_log_sigmoid, normal_matrix, sigmoid, TensorSet};
use crate::sampling::TrainingTriple;
use crate::training::PairwiseModel;

pub const VBPR_CHECKPOINT_KIND: &str = "VBPR1";
const FACTOR_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VbprDims {
    /// Latent factor size `K`.
    pub latent: usize,
    /// Visual factor size `D`.
    pub visual: usize,
}

impl Default for VbprDims {
    fn default() -> Self {
        VbprDims {
            latent: 200,
            visual: 200,
        }
    }
}

/// `x_ui = β_i + γ_u·γ_i + θ_u·(E f_i) + β_vis·f_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct VbprParams {
    pub gamma_u: Array2<f64>,
    pub theta_u: Array2<f64>,
    pub gamma_i: Array2<f64>,
    pub e: Array2<f64>,
    pub beta_i: Array1<f64>,
    pub beta_vis: Array1<f64>,
    /// When false `beta_vis` stays at zero.
    pub visual_bias: bool,
}

impl TensorSet for VbprParams {
    fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, f64>)> {
        vec![
            ("gamma_u", self.gamma_u.view().into_dyn()),
            ("theta_u", self.theta_u.view().into_dyn()),
            ("gamma_i", self.gamma_i.view().into_dyn()),
            ("e", self.e.view().into_dyn()),
            ("beta_i", self.beta_i.view().into_dyn()),
            ("beta_vis", self.beta_vis.view().into_dyn()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        vec![
            self.gamma_u.view_mut().into_dyn(),
            self.theta_u.view_mut().into_dyn(),
            self.gamma_i.view_mut().into_dyn(),
            self.e.view_mut().into_dyn(),
            self.beta_i.view_mut().into_dyn(),
            self.beta_vis.view_mut().into_dyn(),
        ]
    }
}

impl VbprParams {
    pub fn zeros(users: usize, items: usize, features: usize, dims: VbprDims) -> Self {
        VbprParams {
            gamma_u: Array2::zeros((users, dims.latent)),
            theta_u: Array2::zeros((users, dims.visual)),
            gamma_i: Array2::zeros((items, dims.latent)),
            e: Array2::zeros((dims.visual, features)),
            beta_i: Array1::zeros(items),
            beta_vis: Array1::zeros(features),
            visual_bias: true,
        }
    }

    /// Factors from `N(0, 0.01²)`; biases and the projection start at zero.
    pub fn init(users: usize, items: usize, features: usize, dims: VbprDims, seed: u64) -> Result<Self> {
        if users == 0 || items == 0 || features == 0 || dims.latent == 0 || dims.visual == 0 {
            return Err(Error::InvalidArgument("VBPR sizes must be positive".into()));
        }
        let mut p = VbprParams::zeros(users, items, features, dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        p.gamma_u = normal_matrix(users, dims.latent, FACTOR_STD, &mut rng);
        p.theta_u = normal_matrix(users, dims.visual, FACTOR_STD, &mut rng);
        p.gamma_i = normal_matrix(items, dims.latent, FACTOR_STD, &mut rng);
        Ok(p)
    }

    pub fn num_users(&self) -> usize {
        self.gamma_u.nrows()
    }

    pub fn num_items(&self) -> usize {
        self.gamma_i.nrows()
    }

    fn check(&self, u: UserIdx, i: ItemIdx, features: usize) -> Result<()> {
        if u as usize >= self.num_users() {
            return Err(Error::UnknownUser(format!("#{u}")));
        }
        if i as usize >= self.num_items() {
            return Err(Error::UnknownItem(format!("#{i}")));
        }
        if features != self.e.ncols() {
            return Err(Error::Shape(format!(
                "embedding has {features} dimensions, model expects {}",
                self.e.ncols()
            )));
        }
        Ok(())
    }

    pub fn score(&self, u: UserIdx, i: ItemIdx, f: ArrayView1<f64>) -> Result<f64> {
        self.check(u, i, f.len())?;
        let (u, i) = (u as usize, i as usize);
        Ok(self.beta_i[i]
            + self.gamma_u.row(u).dot(&self.gamma_i.row(i))
            + self.theta_u.row(u).dot(&self.e.dot(&f))
            + self.beta_vis.dot(&f))
    }

    fn check_triples(&self, catalog: &Catalog, triples: &[&TrainingTriple]) -> Result<()> {
        if catalog.len() != self.num_items() {
            return Err(Error::Shape(format!(
                "catalog has {} items, model {}",
                catalog.len(),
                self.num_items()
            )));
        }
        for t in triples {
            self.check(t.user, t.positive, catalog.dim())?;
            self.check(t.user, t.negative, catalog.dim())?;
        }
        Ok(())
    }

    fn batch_terms(&self, catalog: &Catalog, batch: &[&TrainingTriple]) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
        let pos: Vec<ItemIdx> = batch.iter().map(|t| t.positive).collect();
        let neg: Vec<ItemIdx> = batch.iter().map(|t| t.negative).collect();
        let delta = catalog.gather(&pos) - catalog.gather(&neg);
        let projected = delta.dot(&self.e.t());
        let visual_bias = delta.dot(&self.beta_vis);
        let margins = batch
            .iter()
            .enumerate()
            .map(|(b, t)| {
                let (u, i, j) = (t.user as usize, t.positive as usize, t.negative as usize);
                let gu = self.gamma_u.row(u);
                self.beta_i[i] - self.beta_i[j] + gu.dot(&self.gamma_i.row(i)) - gu.dot(&self.gamma_i.row(j))
                    + self.theta_u.row(u).dot(&projected.row(b))
                    + visual_bias[b]
            })
            .collect();
        (delta, projected, margins)
    }
}

/// Mean `−ln σ(x_uij)` plus `λ‖Θ‖²` and its gradient.
pub fn vbpr_loss(
    params: &VbprParams,
    catalog: &Catalog,
    batch: &[&TrainingTriple],
    lambda: f64,
) -> Result<(f64, VbprParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    params.check_triples(catalog, batch)?;
    let (delta, projected, margins) = params.batch_terms(catalog, batch);
    let n = batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    let mut weighted_theta = Array2::zeros((batch.len(), params.e.nrows()));
    let mut g = Array1::zeros(batch.len());
    for (b, t) in batch.iter().enumerate() {
        let x = margins[b];
        loss += neg_log_sigmoid(x);
        let gb = -sigmoid(-x) / n;
        g[b] = gb;
        let (u, i, j) = (t.user as usize, t.positive as usize, t.negative as usize);
        grads.beta_i[i] += gb;
        grads.beta_i[j] -= gb;
        let item_diff = &params.gamma_i.row(i) - &params.gamma_i.row(j);
        grads.gamma_u.row_mut(u).scaled_add(gb, &item_diff);
        grads.gamma_i.row_mut(i).scaled_add(gb, &params.gamma_u.row(u));
        grads.gamma_i.row_mut(j).scaled_add(-gb, &params.gamma_u.row(u));
        grads.theta_u.row_mut(u).scaled_add(gb, &projected.row(b));
        weighted_theta.row_mut(b).scaled_add(gb, &params.theta_u.row(u));
    }
    loss /= n;
    grads.e = weighted_theta.t().dot(&delta);
    if params.visual_bias {
        grads.beta_vis = delta.t().dot(&g);
    }
    if lambda > 0.0 {
        loss += lambda * params.squared_norm();
        for (mut gr, (_, p)) in grads.tensors_mut().into_iter().zip(params.tensors()) {
            gr.scaled_add(2.0 * lambda, &p);
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("VBPR loss".into()));
    }
    Ok((loss, grads))
}

impl PairwiseModel for VbprParams {
    fn loss_and_grad(&self, catalog: &Catalog, batch: &[&TrainingTriple], lambda: f64) -> Result<(f64, Self)> {
        vbpr_loss(self, catalog, batch, lambda)
    }

    fn margins(&self, catalog: &Catalog, triples: &[&TrainingTriple]) -> Result<Vec<f64>> {
        self.check_triples(catalog, triples)?;
        let mut out = Vec::with_capacity(triples.len());
        for chunk in triples.chunks(1024) {
            out.extend(self.batch_terms(catalog, chunk).2);
        }
        Ok(out)
    }
}

/// Trained VBPR with the item-side visual terms precomputed.
pub struct VbprScorer<'a> {
    params: &'a VbprParams,
    projected: Array2<f64>,
    visual_bias: Array1<f64>,
}

impl<'a> VbprScorer<'a> {
    pub fn new(params: &'a VbprParams, catalog: &Catalog) -> Result<Self> {
        if catalog.len() != params.num_items() || catalog.dim() != params.e.ncols() {
            return Err(Error::Shape("catalog does not match the VBPR model".into()));
        }
        let all: Vec<ItemIdx> = (0..catalog.len() as ItemIdx).collect();
        let f = catalog.gather(&all);
        Ok(VbprScorer {
            params,
            projected: f.dot(&params.e.t()),
            visual_bias: f.dot(&params.beta_vis),
        })
    }

    pub fn score_items(&self, user: UserIdx, candidates: &[ItemIdx]) -> Result<Vec<f64>> {
        let p = self.params;
        if user as usize >= p.num_users() {
            return Err(Error::UnknownUser(format!("#{user}")));
        }
        let (gu, tu) = (p.gamma_u.row(user as usize), p.theta_u.row(user as usize));
        Ok(candidates
            .iter()
            .map(|&i| {
                let i = i as usize;
                p.beta_i[i] + gu.dot(&p.gamma_i.row(i)) + tu.dot(&self.projected.row(i)) + self.visual_bias[i]
            })
            .collect())
    }
}

impl Recommender for VbprScorer<'_> {
    fn name(&self) -> String {
        "VBPR".into()
    }

    fn score(&self, query: &EvalQuery<'_>) -> Result<Vec<f64>> {
        self.score_items(query.user, query.candidates)
            .map_err(|e| match e {
                Error::UnknownUser(_) => Error::UnknownUser(query.user_id.to_string()),
                e => e,
            })
    }
}

pub fn vbpr_to_checkpoint(
    params: &VbprParams,
    catalog: &Catalog,
    log: &InteractionLog,
    mut meta: Vec<(String, String)>,
    history: Vec<EpochRecord>,
) -> Checkpoint {
    let mut ck = Checkpoint::new(VBPR_CHECKPOINT_KIND);
    ck.tensors = params.tensors().into_iter().map(|(n, t)| (n.to_string(), t.to_owned())).collect();
    meta.push(("visual_bias".into(), params.visual_bias.to_string()));
    ck.meta = meta;
    ck.history = history;
    ck.users = log.users().iter().map(|u| u.id.clone()).collect();
    ck.items = catalog.ids().to_vec();
    ck
}

/// Rebuilds VBPR parameters, checking the id tables against the data.
pub fn vbpr_from_checkpoint(mut ck: Checkpoint, catalog: &Catalog, log: &InteractionLog) -> Result<VbprParams> {
    if ck.kind != VBPR_CHECKPOINT_KIND {
        return Err(Error::Shape(format!("checkpoint holds a {} model", ck.kind)));
    }
    if ck.items != catalog.ids() {
        return Err(Error::Shape("checkpoint item table does not match the catalog".into()));
    }
    let users: Vec<&str> = log.users().iter().map(|u| u.id.as_str()).collect();
    if ck.users != users {
        return Err(Error::Shape("checkpoint user table does not match the training log".into()));
    }
    let e = ck.tensor("e").ok_or_else(|| Error::Shape("checkpoint lacks e".into()))?;
    let gu = ck.tensor("gamma_u").ok_or_else(|| Error::Shape("checkpoint lacks gamma_u".into()))?;
    if e.ndim() != 2 || gu.ndim() != 2 {
        return Err(Error::Shape("factor tensors must be matrices".into()));
    }
    let dims = VbprDims {
        latent: gu.shape()[1],
        visual: e.shape()[0],
    };
    let mut p = VbprParams::zeros(users.len(), catalog.len(), catalog.dim(), dims);
    p.visual_bias = ck.meta("visual_bias") != Some("false");
    let shapes: Vec<(&'static str, Vec<usize>)> = p.tensors().iter().map(|(n, t)| (*n, t.shape().to_vec())).collect();
    for ((name, shape), mut dst) in shapes.into_iter().zip(p.tensors_mut()) {
        dst.assign(&ck.take_tensor(name, &shape)?);
    }
    Ok(p)
}

pub fn save_vbpr(
    params: &VbprParams,
    catalog: &Catalog,
    log: &InteractionLog,
    path: &Path,
    meta: Vec<(String, String)>,
    history: Vec<EpochRecord>,
) -> Result<()> {
    vbpr_to_checkpoint(params, catalog, log, meta, history).save(path)
}

pub fn load_vbpr(path: &Path, catalog: &Catalog, log: &InteractionLog) -> Result<VbprParams> {
    vbpr_from_checkpoint(Checkpoint::load_kind(path, VBPR_CHECKPOINT_KIND)?, catalog, log)
}

/// `max_{j ∈ P} cos(f_i, f_j)` with the profile given one item per row.
pub fn visrank_score(profile: ArrayView2<f64>, f: ArrayView1<f64>) -> Result<f64> {
    if profile.nrows() == 0 {
        return Err(Error::InvalidArgument("empty profile".into()));
    }
    let mut best = f64::NEG_INFINITY;
    for row in profile.rows() {
        best = best.max(cosine(row, f)?);
    }
    Ok(best)
}

/// Training-free max-cosine ranker over unit-normalized catalog vectors.
pub struct VisRank {
    unit: Array2<f64>,
}

impl VisRank {
    pub fn new(catalog: &Catalog) -> Result<Self> {
        let all: Vec<ItemIdx> = (0..catalog.len() as ItemIdx).collect();
        let mut unit = catalog.gather(&all);
        for (i, mut row) in unit.axis_iter_mut(Axis(0)).enumerate() {
            let norm = row.dot(&row).sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroNorm(catalog.id(i as ItemIdx).to_string()));
            }
            row /= norm;
        }
        Ok(VisRank { unit })
    }

    pub fn score_items(&self, profile: &[ItemIdx], candidates: &[ItemIdx]) -> Result<Vec<f64>> {
        if profile.is_empty() {
            return Err(Error::InvalidArgument("empty profile".into()));
        }
        let members = self.unit.select(Axis(0), &profile.iter().map(|&i| i as usize).collect::<Vec<_>>());
        Ok(candidates
            .iter()
            .map(|&c| {
                members
                    .dot(&self.unit.row(c as usize))
                    .iter()
                    .fold(f64::NEG_INFINITY, |m, &v| m.max(v.clamp(-1.0, 1.0)))
            })
            .collect())
    }
}

impl Recommender for VisRank {
    fn name(&self) -> String {
        "VisRank".into()
    }

    fn score(&self, query: &EvalQuery<'_>) -> Result<Vec<f64>> {
        self.score_items(query.profile, query.candidates)
    }
}

/// Uniform random order, reproducible per user from one seed.
pub struct RandomRecommender {
    pub seed: u64,
}

impl Recommender for RandomRecommender {
    fn name(&self) -> String {
        "Random".into()
    }

    fn score(&self, query: &EvalQuery<'_>) -> Result<Vec<f64>> {
        let stream = (query.user as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ stream);
        Ok(query.candidates.iter().map(|_| rng.random::<f64>()).collect())
    }
}

pub fn random_rank<R: Rng + ?Sized>(candidates: &[ItemIdx], rng: &mut R) -> Vec<ItemIdx> {
    let mut out = candidates.to_vec();
    out.shuffle(rng);
    out
}

/// Relevant items first, each group in ascending id order.
pub struct Oracle;

impl Recommender for Oracle {
    fn name(&self) -> String {
        "Oracle".into()
    }

    fn score(&self, query: &EvalQuery<'_>) -> Result<Vec<f64>> {
        Ok(query
            .candidates
            .iter()
            .map(|c| if query.relevant.binary_search(c).is_ok() { 1.0 } else { 0.0 })
            .collect())
    }
}

pub fn oracle_rank(candidates: &[ItemIdx], relevant: &[ItemIdx], catalog: &Catalog) -> Vec<ItemIdx> {
    let mut out = candidates.to_vec();
    out.sort_by(|&a, &b| {
        let (ra, rb) = (relevant.contains(&a), relevant.contains(&b));
        rb.cmp(&ra).then_with(|| catalog.id(a).cmp(catalog.id(b)))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::toy_catalog;
    use crate::numerics::{finite_diff_check, Coordinates};
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2};

    const TOY: VbprDims = VbprDims { latent: 4, visual: 4 };

    #[test]
    fn score_terms() {
        let mut p = VbprParams::zeros(1, 2, 3, VbprDims { latent: 2, visual: 2 });
        let f = arr1(&[1.0, 2.0, -1.0]);
        assert_eq!(p.score(0, 1, f.view()).unwrap(), 0.0);
        p.beta_i = arr1(&[0.0, 0.7]);
        assert_eq!(p.score(0, 1, f.view()).unwrap(), 0.7);
        p.gamma_u = arr2(&[[1.0, 2.0]]);
        p.gamma_i = arr2(&[[0.0, 0.0], [0.5, -1.0]]);
        p.theta_u = arr2(&[[2.0, -1.0]]);
        p.e = arr2(&[[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]]);
        p.beta_vis = arr1(&[0.1, 0.1, 0.1]);
        // 0.7 + (0.5 - 2) + (2·1 - 1·1) + 0.1·2
        assert_abs_diff_eq!(p.score(0, 1, f.view()).unwrap(), 0.7 - 1.5 + 1.0 + 0.2, epsilon = 1e-12);
        assert!(matches!(p.score(3, 0, f.view()), Err(Error::UnknownUser(_))));
    }

    #[test]
    fn visual_terms_scale_linearly() {
        let mut p = VbprParams::init(1, 1, 3, VbprDims { latent: 2, visual: 2 }, 1).unwrap();
        p.gamma_u.fill(0.0);
        p.e = arr2(&[[0.3, -0.2, 0.5], [1.0, 0.1, 0.0]]);
        p.beta_vis = arr1(&[0.2, 0.0, -0.4]);
        let f = arr1(&[1.0, -2.0, 0.5]);
        let scaled = &f * 3.0;
        assert_abs_diff_eq!(
            p.score(0, 0, scaled.view()).unwrap(),
            3.0 * p.score(0, 0, f.view()).unwrap(),
            epsilon = 1e-12
        );
    }

    pub(crate) fn vbpr_instance(seed: u64) -> (VbprParams, Catalog, Vec<TrainingTriple>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = VbprParams::init(3, 6, 5, TOY, seed).unwrap();
        for mut t in p.tensors_mut() {
            t.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let cat = toy_catalog(&["a", "b", "c", "d", "e", "f"], 5);
        let triples = (0..5)
            .map(|_| TrainingTriple {
                user: rng.random_range(0..3),
                profile: vec![0],
                positive: rng.random_range(0..3),
                negative: rng.random_range(3..6),
                strategy: 4,
            })
            .collect();
        (p, cat, triples)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let (p, cat, triples) = vbpr_instance(seed);
            let batch: Vec<&TrainingTriple> = triples.iter().collect();
            let mut work = p.clone();
            let err = finite_diff_check(
                |th| {
                    work.assign_flat(th)?;
                    let (l, g) = vbpr_loss(&work, &cat, &batch, 0.01)?;
                    Ok((l, g.flatten()))
                },
                &p.flatten(),
                1e-6,
                Coordinates::All,
            )
            .unwrap();
            assert!(err < 1e-3, "seed {seed}: {err}");
        }
    }

    #[test]
    fn margins_match_scores() {
        let (p, cat, triples) = vbpr_instance(7);
        let refs: Vec<&TrainingTriple> = triples.iter().collect();
        let m = p.margins(&cat, &refs).unwrap();
        for (t, m) in triples.iter().zip(m) {
            let fi = cat.gather(&[t.positive]);
            let fj = cat.gather(&[t.negative]);
            let x = p.score(t.user, t.positive, fi.row(0)).unwrap() - p.score(t.user, t.negative, fj.row(0)).unwrap();
            assert_abs_diff_eq!(m, x, epsilon = 1e-9);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let (p, cat, _) = vbpr_instance(3);
        let log = InteractionLog::from_rows(vec![("u0".to_string(), 0, 0), ("u1".to_string(), 1, 0), ("u2".to_string(), 2, 0)]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.cnet");
        let p = {
            let mut q = p;
            for mut t in q.tensors_mut() {
                t.mapv_inplace(crate::numerics::quantize_f32);
            }
            q
        };
        save_vbpr(&p, &cat, &log, &path, vec![], vec![]).unwrap();
        assert_eq!(load_vbpr(&path, &cat, &log).unwrap(), p);
        let other = InteractionLog::from_rows(vec![("zz".to_string(), 0, 0)]);
        assert!(load_vbpr(&path, &cat, &other).is_err());
        assert!(crate::model::load_checkpoint(&path).is_err());
    }

    #[test]
    fn visrank_examples() {
        let prof = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(visrank_score(prof.view(), arr1(&[h, h]).view()).unwrap(), h, epsilon = 1e-12);
        assert_abs_diff_eq!(visrank_score(prof.view(), arr1(&[0.0, 3.0]).view()).unwrap(), 1.0, epsilon = 1e-12);
        let single = arr2(&[[1.0, 0.0]]);
        assert_eq!(visrank_score(single.view(), arr1(&[0.0, 2.0]).view()).unwrap(), 0.0);
        assert!(visrank_score(single.view(), arr1(&[0.0, 0.0]).view()).is_err());
        assert!(visrank_score(Array2::zeros((0, 2)).view(), arr1(&[1.0, 0.0]).view()).is_err());
    }

    #[test]
    fn visrank_recommender_is_permutation_invariant() {
        let cat = toy_catalog(&["a", "b", "c", "d", "e"], 6);
        let v = VisRank::new(&cat).unwrap();
        let cands = [3, 4];
        assert_eq!(v.score_items(&[0, 1, 2], &cands).unwrap(), v.score_items(&[2, 0, 1], &cands).unwrap());
        let self_score = v.score_items(&[1], &[1]).unwrap()[0];
        assert_abs_diff_eq!(self_score, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn oracle_and_random_orders() {
        let cat = toy_catalog(&["a", "b", "c", "d"], 2);
        assert_eq!(oracle_rank(&[0, 1, 2, 3], &[2, 1], &cat), vec![1, 2, 0, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut shuffled = random_rank(&[0, 1, 2, 3], &mut rng);
        shuffled.sort_unstable();
        assert_eq!(shuffled, vec![0, 1, 2, 3]);
    }
}
