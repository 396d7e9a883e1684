//! The CuratorNet ranking network.
//!
//! Every image goes through the same two-layer SELU tower. A profile is
//! summarized by concatenating the mean and the per-dimension max of its
//! members' tower outputs, which a three-layer SELU head maps to the user
//! representation. The preference score is the dot product of the user
//! representation and the candidate's tower output.
//!
//! Pooling sums members in ascending lexicographic order of their tower
//! outputs, so any permutation of a profile produces bit-identical results.
//! There is no per-user state: any profile of catalog items can be scored.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::{Checkpoint, EpochRecord};
use crate::data::{Catalog, ItemIdx, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::evaluation::{rank_scored, EvalQuery, Recommender};
use crate::numerics::{
    affine_forward, affine_rows, ensure_finite, lecun_normal, neg_log_sigmoid, selu, selu_grad, sigmoid, TensorSet,
};
use crate::sampling::TrainingTriple;
use crate::training::PairwiseModel;

pub const CHECKPOINT_KIND: &str = "CURATORNET";

/// Layer widths. The head's input is twice the tower output and its output
/// must match the tower output so that the two can be compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub input: usize,
    pub tower: [usize; 2],
    pub head: [usize; 3],
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            input: EMBEDDING_DIM,
            tower: [200, 200],
            head: [300, 200, 200],
        }
    }
}

impl ModelDims {
    pub fn with_input(input: usize) -> Self {
        ModelDims {
            input,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.tower.contains(&0) || self.head.contains(&0) {
            return Err(Error::InvalidArgument(format!("zero layer width in {self:?}")));
        }
        if self.head[2] != self.tower[1] {
            return Err(Error::InvalidArgument(format!(
                "head output {} must equal tower output {}",
                self.head[2], self.tower[1]
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
    pub w4: Array2<f64>,
    pub b4: Array1<f64>,
    pub w5: Array2<f64>,
    pub b5: Array1<f64>,
}

impl TensorSet for ModelParams {
    fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, f64>)> {
        vec![
            ("w1", self.w1.view().into_dyn()),
            ("b1", self.b1.view().into_dyn()),
            ("w2", self.w2.view().into_dyn()),
            ("b2", self.b2.view().into_dyn()),
            ("w3", self.w3.view().into_dyn()),
            ("b3", self.b3.view().into_dyn()),
            ("w4", self.w4.view().into_dyn()),
            ("b4", self.b4.view().into_dyn()),
            ("w5", self.w5.view().into_dyn()),
            ("b5", self.b5.view().into_dyn()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        vec![
            self.w1.view_mut().into_dyn(),
            self.b1.view_mut().into_dyn(),
            self.w2.view_mut().into_dyn(),
            self.b2.view_mut().into_dyn(),
            self.w3.view_mut().into_dyn(),
            self.b3.view_mut().into_dyn(),
            self.w4.view_mut().into_dyn(),
            self.b4.view_mut().into_dyn(),
            self.w5.view_mut().into_dyn(),
            self.b5.view_mut().into_dyn(),
        ]
    }
}

struct TowerPass {
    x: Array2<f64>,
    z1: Array2<f64>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    t: Array2<f64>,
}

struct HeadPass {
    h0: Array2<f64>,
    z3: Array2<f64>,
    a3: Array2<f64>,
    z4: Array2<f64>,
    a4: Array2<f64>,
    z5: Array2<f64>,
    u: Array2<f64>,
}

/// Pooled profile features and, per tower dimension, the row that
/// supplied the max.
struct Pooled {
    features: Array1<f64>,
    order: Vec<usize>,
    argmax: Vec<usize>,
}

fn lex_cmp(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Ordering {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Mean and max pooling over `members` (row indices into `t`).
fn pool(t: ArrayView2<f64>, members: &[usize]) -> Pooled {
    let d = t.ncols();
    let mut order = members.to_vec();
    order.sort_by(|&a, &b| lex_cmp(t.row(a), t.row(b)).then(a.cmp(&b)));
    let mut features = Array1::zeros(2 * d);
    let mut argmax = vec![order[0]; d];
    {
        let (mut mean, mut max) = features.view_mut().split_at(Axis(0), d);
        max.assign(&t.row(order[0]));
        for &m in &order {
            mean += &t.row(m);
        }
        mean /= order.len() as f64;
        for &m in &order[1..] {
            for (j, &v) in t.row(m).iter().enumerate() {
                if v > max[j] {
                    max[j] = v;
                    argmax[j] = m;
                }
            }
        }
    }
    Pooled { features, order, argmax }
}

fn selu_backward(grad: &mut Array2<f64>, z: &Array2<f64>) {
    Zip::from(grad).and(z).for_each(|g, &z| *g *= selu_grad(z));
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let [t1, t2] = dims.tower;
        let [h1, h2, h3] = dims.head;
        Ok(ModelParams {
            w1: Array2::zeros((t1, dims.input)),
            b1: Array1::zeros(t1),
            w2: Array2::zeros((t2, t1)),
            b2: Array1::zeros(t2),
            w3: Array2::zeros((h1, 2 * t2)),
            b3: Array1::zeros(h1),
            w4: Array2::zeros((h2, h1)),
            b4: Array1::zeros(h2),
            w5: Array2::zeros((h3, h2)),
            b5: Array1::zeros(h3),
        })
    }

    /// Weights drawn from `N(0, 1/fan_in)`, biases zero.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        let mut p = ModelParams::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in [&mut p.w1, &mut p.w2, &mut p.w3, &mut p.w4, &mut p.w5] {
            *w = lecun_normal(w.nrows(), w.ncols(), &mut rng);
        }
        Ok(p)
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input: self.w1.ncols(),
            tower: [self.w1.nrows(), self.w2.nrows()],
            head: [self.w3.nrows(), self.w4.nrows(), self.w5.nrows()],
        }
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.w1.ncols() {
            return Err(Error::Shape(format!(
                "embedding has {width} dimensions, model expects {}",
                self.w1.ncols()
            )));
        }
        Ok(())
    }

    fn tower_pass(&self, x: Array2<f64>) -> TowerPass {
        let z1 = affine_rows(self.w1.view(), self.b1.view(), x.view());
        let a1 = z1.mapv(selu);
        let z2 = affine_rows(self.w2.view(), self.b2.view(), a1.view());
        let t = z2.mapv(selu);
        TowerPass { x, z1, a1, z2, t }
    }

    fn head_pass(&self, h0: Array2<f64>) -> HeadPass {
        let z3 = affine_rows(self.w3.view(), self.b3.view(), h0.view());
        let a3 = z3.mapv(selu);
        let z4 = affine_rows(self.w4.view(), self.b4.view(), a3.view());
        let a4 = z4.mapv(selu);
        let z5 = affine_rows(self.w5.view(), self.b5.view(), a4.view());
        let u = z5.mapv(selu);
        HeadPass {
            h0,
            z3,
            a3,
            z4,
            a4,
            z5,
            u,
        }
    }

    fn head_single(&self, h0: ArrayView1<f64>) -> Result<Array1<f64>> {
        let a3 = affine_forward(self.w3.view(), self.b3.view(), h0, true)?;
        let a4 = affine_forward(self.w4.view(), self.b4.view(), a3.view(), true)?;
        affine_forward(self.w5.view(), self.b5.view(), a4.view(), true)
    }

    /// Tower outputs for every row of `x`.
    pub fn embed_items(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let t = self.tower_pass(x.to_owned()).t;
        ensure_finite(t.iter(), "item embedding")?;
        Ok(t)
    }

    /// Profile representation from pre-computed member tower outputs.
    fn profile_from_tower(&self, t: ArrayView2<f64>, members: &[usize]) -> Result<Array1<f64>> {
        if members.is_empty() {
            return Err(Error::InvalidArgument("empty profile".into()));
        }
        self.head_single(pool(t, members).features.view())
    }
}

/// `selu(W2·selu(W1·f + b1) + b2)`.
pub fn embed_item(params: &ModelParams, f: ArrayView1<f64>) -> Result<Array1<f64>> {
    params.check_input(f.len())?;
    ensure_finite(f.iter(), "visual embedding")?;
    let a1 = affine_forward(params.w1.view(), params.b1.view(), f, true)?;
    affine_forward(params.w2.view(), params.b2.view(), a1.view(), true)
}

/// User representation for a profile given as one embedding per row.
pub fn embed_profile(params: &ModelParams, profile: ArrayView2<f64>) -> Result<Array1<f64>> {
    if profile.nrows() == 0 {
        return Err(Error::InvalidArgument("empty profile".into()));
    }
    let t = params.embed_items(profile)?;
    let members: Vec<usize> = (0..t.nrows()).collect();
    params.profile_from_tower(t.view(), &members)
}

pub fn score(params: &ModelParams, profile: ArrayView2<f64>, f: ArrayView1<f64>) -> Result<f64> {
    let user = embed_profile(params, profile)?;
    let item = embed_item(params, f)?;
    Ok(user.dot(&item))
}

/// Mean `−ln σ(x_uij)` over the batch plus `λ‖Θ‖²`, with the exact gradient.
pub fn triple_loss(
    params: &ModelParams,
    catalog: &Catalog,
    batch: &[&TrainingTriple],
    lambda: f64,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    params.check_input(catalog.dim())?;
    let mut rows: BTreeMap<ItemIdx, usize> = BTreeMap::new();
    for t in batch {
        if t.profile.is_empty() {
            return Err(Error::InvalidArgument("empty profile in batch".into()));
        }
        for &i in t.profile.iter().chain([&t.positive, &t.negative]) {
            let next = rows.len();
            rows.entry(i).or_insert(next);
        }
    }
    let mut items = vec![0; rows.len()];
    for (&i, &r) in &rows {
        items[r] = i;
    }
    let tower = params.tower_pass(catalog.gather(&items));
    let d = tower.t.ncols();

    let pooled: Vec<Pooled> = batch
        .iter()
        .map(|t| {
            let members: Vec<usize> = t.profile.iter().map(|i| rows[i]).collect();
            pool(tower.t.view(), &members)
        })
        .collect();
    let mut h0 = Array2::zeros((batch.len(), 2 * d));
    for (b, p) in pooled.iter().enumerate() {
        h0.row_mut(b).assign(&p.features);
    }
    let head = params.head_pass(h0);

    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut du = Array2::zeros(head.u.raw_dim());
    let mut dt = Array2::<f64>::zeros(tower.t.raw_dim());
    for (b, t) in batch.iter().enumerate() {
        let (ip, ineg) = (rows[&t.positive], rows[&t.negative]);
        let diff = &tower.t.row(ip) - &tower.t.row(ineg);
        let u = head.u.row(b);
        let x = u.dot(&diff);
        loss += neg_log_sigmoid(x);
        let g = -sigmoid(-x) / n;
        du.row_mut(b).scaled_add(g, &diff);
        dt.row_mut(ip).scaled_add(g, &u);
        dt.row_mut(ineg).scaled_add(-g, &u);
    }
    loss /= n;

    let mut grads = params.zeros_like();
    let mut dz5 = du;
    selu_backward(&mut dz5, &head.z5);
    grads.w5 = dz5.t().dot(&head.a4);
    grads.b5 = dz5.sum_axis(Axis(0));
    let mut dz4 = dz5.dot(&params.w5);
    selu_backward(&mut dz4, &head.z4);
    grads.w4 = dz4.t().dot(&head.a3);
    grads.b4 = dz4.sum_axis(Axis(0));
    let mut dz3 = dz4.dot(&params.w4);
    selu_backward(&mut dz3, &head.z3);
    grads.w3 = dz3.t().dot(&head.h0);
    grads.b3 = dz3.sum_axis(Axis(0));
    let dh0 = dz3.dot(&params.w3);

    for (b, p) in pooled.iter().enumerate() {
        let dmean = dh0.slice(s![b, ..d]);
        let scale = 1.0 / p.order.len() as f64;
        for &m in &p.order {
            dt.row_mut(m).scaled_add(scale, &dmean);
        }
        for (j, &m) in p.argmax.iter().enumerate() {
            dt[[m, j]] += dh0[[b, d + j]];
        }
    }

    let mut dz2 = dt;
    selu_backward(&mut dz2, &tower.z2);
    grads.w2 = dz2.t().dot(&tower.a1);
    grads.b2 = dz2.sum_axis(Axis(0));
    let mut dz1 = dz2.dot(&params.w2);
    selu_backward(&mut dz1, &tower.z1);
    grads.w1 = dz1.t().dot(&tower.x);
    grads.b1 = dz1.sum_axis(Axis(0));

    if lambda > 0.0 {
        loss += lambda * params.squared_norm();
        for (mut g, (_, p)) in grads.tensors_mut().into_iter().zip(params.tensors()) {
            g.scaled_add(2.0 * lambda, &p);
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("triple loss".into()));
    }
    Ok((loss, grads))
}

/// Parameters paired with the tower output of every catalog item. The cache
/// is built once from immutable parameters; retrain to refresh it.
pub struct CuratorNetScorer<'a> {
    params: &'a ModelParams,
    catalog: &'a Catalog,
    items: Array2<f64>,
}

const CACHE_CHUNK: usize = 2048;

impl<'a> CuratorNetScorer<'a> {
    pub fn new(params: &'a ModelParams, catalog: &'a Catalog) -> Result<Self> {
        params.check_input(catalog.dim())?;
        let all: Vec<ItemIdx> = (0..catalog.len() as ItemIdx).collect();
        let chunks = all
            .par_chunks(CACHE_CHUNK)
            .map(|c| params.embed_items(catalog.gather(c).view()))
            .collect::<Result<Vec<_>>>()?;
        let mut items = Array2::zeros((catalog.len(), params.dims().tower[1]));
        for (k, c) in chunks.into_iter().enumerate() {
            let start = k * CACHE_CHUNK;
            items.slice_mut(s![start..start + c.nrows(), ..]).assign(&c);
        }
        Ok(CuratorNetScorer { params, catalog, items })
    }

    pub fn item_embeddings(&self) -> &Array2<f64> {
        &self.items
    }

    pub fn user_embedding(&self, profile: &[ItemIdx]) -> Result<Array1<f64>> {
        let members: Vec<usize> = profile.iter().map(|&i| i as usize).collect();
        if members.iter().any(|&m| m >= self.items.nrows()) {
            return Err(Error::InvalidArgument("profile item out of range".into()));
        }
        self.params.profile_from_tower(self.items.view(), &members)
    }

    pub fn score_items(&self, profile: &[ItemIdx], candidates: &[ItemIdx]) -> Result<Vec<f64>> {
        let user = self.user_embedding(profile)?;
        Ok(candidates.iter().map(|&i| self.items.row(i as usize).dot(&user)).collect())
    }

    /// Top `k` items of `I \ exclude` for `profile`, best first.
    pub fn rank(&self, profile: &[ItemIdx], exclude: &HashSet<ItemIdx>, k: usize) -> Result<Vec<(ItemIdx, f64)>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let candidates: Vec<ItemIdx> = (0..self.catalog.len() as ItemIdx).filter(|i| !exclude.contains(i)).collect();
        let scores = self.score_items(profile, &candidates)?;
        let mut ranked = rank_scored(candidates.into_iter().zip(scores).collect(), self.catalog);
        ranked.truncate(k);
        Ok(ranked)
    }
}

impl Recommender for CuratorNetScorer<'_> {
    fn name(&self) -> String {
        "CuratorNet".into()
    }

    fn score(&self, query: &EvalQuery<'_>) -> Result<Vec<f64>> {
        self.score_items(query.profile, query.candidates)
    }
}

/// Ranks `I \ exclude` for a profile of item ids; ties go to the smaller id.
pub fn rank_catalog(
    params: &ModelParams,
    profile: &[&str],
    catalog: &Catalog,
    exclude: &HashSet<String>,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if profile.is_empty() {
        return Err(Error::InvalidArgument("empty profile".into()));
    }
    let profile: Vec<ItemIdx> = profile
        .iter()
        .map(|id| catalog.index_of(id).ok_or_else(|| Error::UnknownItem(id.to_string())))
        .collect::<Result<_>>()?;
    let exclude: HashSet<ItemIdx> = exclude.iter().filter_map(|id| catalog.index_of(id)).collect();
    let scorer = CuratorNetScorer::new(params, catalog)?;
    Ok(scorer
        .rank(&profile, &exclude, k)?
        .into_iter()
        .map(|(i, s)| (catalog.id(i).to_string(), s))
        .collect())
}

impl PairwiseModel for ModelParams {
    fn loss_and_grad(&self, catalog: &Catalog, batch: &[&TrainingTriple], lambda: f64) -> Result<(f64, Self)> {
        triple_loss(self, catalog, batch, lambda)
    }

    fn margins(&self, catalog: &Catalog, triples: &[&TrainingTriple]) -> Result<Vec<f64>> {
        let scorer = CuratorNetScorer::new(self, catalog)?;
        triples
            .par_iter()
            .map(|t| {
                let user = scorer.user_embedding(&t.profile)?;
                let items = scorer.item_embeddings();
                Ok(user.dot(&(&items.row(t.positive as usize) - &items.row(t.negative as usize))))
            })
            .collect()
    }
}

pub fn to_checkpoint(params: &ModelParams, meta: Vec<(String, String)>, history: Vec<EpochRecord>) -> Checkpoint {
    let mut ck = Checkpoint::new(CHECKPOINT_KIND);
    ck.tensors = params.tensors().into_iter().map(|(n, t)| (n.to_string(), t.to_owned())).collect();
    ck.meta = meta;
    ck.history = history;
    ck
}

pub fn from_checkpoint(mut ck: Checkpoint) -> Result<(ModelParams, Checkpoint)> {
    if ck.kind != CHECKPOINT_KIND {
        return Err(Error::Shape(format!("checkpoint holds a {} model", ck.kind)));
    }
    let w1 = ck.tensor("w1").ok_or_else(|| Error::Shape("checkpoint lacks w1".into()))?;
    let w3 = ck.tensor("w3").ok_or_else(|| Error::Shape("checkpoint lacks w3".into()))?;
    let w4 = ck.tensor("w4").ok_or_else(|| Error::Shape("checkpoint lacks w4".into()))?;
    let w5 = ck.tensor("w5").ok_or_else(|| Error::Shape("checkpoint lacks w5".into()))?;
    let w2 = ck.tensor("w2").ok_or_else(|| Error::Shape("checkpoint lacks w2".into()))?;
    if [w1, w2, w3, w4, w5].iter().any(|w| w.ndim() != 2) {
        return Err(Error::Shape("weight tensors must be matrices".into()));
    }
    let dims = ModelDims {
        input: w1.shape()[1],
        tower: [w1.shape()[0], w2.shape()[0]],
        head: [w3.shape()[0], w4.shape()[0], w5.shape()[0]],
    };
    let mut p = ModelParams::zeros(dims)?;
    let shapes: Vec<(&'static str, Vec<usize>)> = p.tensors().iter().map(|(n, t)| (*n, t.shape().to_vec())).collect();
    for ((name, shape), mut dst) in shapes.into_iter().zip(p.tensors_mut()) {
        dst.assign(&ck.take_tensor(name, &shape)?);
    }
    if !ck.tensors.is_empty() {
        return Err(Error::Shape(format!("unexpected tensor {}", ck.tensors[0].0)));
    }
    Ok((p, ck))
}

pub fn save_checkpoint(
    params: &ModelParams,
    path: &Path,
    meta: Vec<(String, String)>,
    history: Vec<EpochRecord>,
) -> Result<()> {
    to_checkpoint(params, meta, history).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    Ok(from_checkpoint(Checkpoint::load_kind(path, CHECKPOINT_KIND)?)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::toy_catalog;
    use crate::numerics::{finite_diff_check, Coordinates, SELU_ALPHA, SELU_LAMBDA};
    use crate::training::{train, triple_accuracy, TrainConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2};
    use proptest::prelude::*;
    use rand::Rng;

    pub(crate) const TOY: ModelDims = ModelDims {
        input: 8,
        tower: [4, 4],
        head: [6, 4, 4],
    };

    fn selu_ref(x: f64) -> f64 {
        if x > 0.0 {
            SELU_LAMBDA * x
        } else {
            SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
        }
    }

    #[test]
    fn zero_params_give_zero_outputs() {
        let p = ModelParams::zeros(TOY).unwrap();
        let f = Array1::from_elem(8, 0.3);
        assert_eq!(embed_item(&p, f.view()).unwrap(), Array1::<f64>::zeros(4));
        let prof = Array2::from_elem((2, 8), 0.5);
        assert_eq!(score(&p, prof.view(), f.view()).unwrap(), 0.0);
    }

    #[test]
    fn toy_tower_by_hand() {
        let dims = ModelDims {
            input: 2,
            tower: [2, 2],
            head: [3, 2, 2],
        };
        let mut p = ModelParams::zeros(dims).unwrap();
        p.w1 = arr2(&[[1.0, -1.0], [0.5, 2.0]]);
        p.b1 = arr1(&[0.0, -1.0]);
        p.w2 = arr2(&[[1.0, 1.0], [-2.0, 0.5]]);
        p.b2 = arr1(&[0.1, 0.0]);
        let f = arr1(&[1.0, 2.0]);
        // layer 1: z = (-1, 3.5); layer 2 on selu(z)
        let a = [selu_ref(-1.0), selu_ref(3.5)];
        let expected = [selu_ref(a[0] + a[1] + 0.1), selu_ref(-2.0 * a[0] + 0.5 * a[1])];
        let out = embed_item(&p, f.view()).unwrap();
        assert_abs_diff_eq!(out[0], expected[0], epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], expected[1], epsilon = 1e-12);

        // head: pooled (t, t) for a singleton profile, identity-like layers
        p.w3 = arr2(&[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]]);
        p.w4 = arr2(&[[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]]);
        p.w5 = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let t = out.clone();
        let h1 = [selu_ref(t[0]), selu_ref(t[1]), selu_ref(t[0] + t[1])];
        let h2 = [selu_ref(h1[0]), selu_ref(h1[1] + h1[2])];
        let user = [selu_ref(h2[0]), selu_ref(h2[1])];
        let s = score(&p, f.view().insert_axis(Axis(0)), f.view()).unwrap();
        assert_abs_diff_eq!(s, user[0] * t[0] + user[1] * t[1], epsilon = 1e-12);
    }

    #[test]
    fn pooling_properties() {
        let p = ModelParams::init(TOY, 3).unwrap();
        let x = arr2(&[[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]]);
        let single = embed_profile(&p, x.view()).unwrap();
        let doubled = ndarray::concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        assert_eq!(embed_profile(&p, doubled.view()).unwrap(), single);
        let t = p.embed_items(x.view()).unwrap();
        let pooled = pool(t.view(), &[0]);
        assert_eq!(pooled.features.slice(s![..4]), pooled.features.slice(s![4..]));
        assert!(embed_profile(&p, Array2::zeros((0, 8)).view()).is_err());
    }

    fn random_profile(rows: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, 8), |_| rng.random_range(-1.0..1.0))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn profile_permutation_invariance(seed in 0u64..1000, rows in 1usize..8, rot in 0usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = ModelParams::init(TOY, seed).unwrap();
            let prof = random_profile(rows, &mut rng);
            let mut idx: Vec<usize> = (0..rows).collect();
            idx.rotate_left(rot % rows);
            idx.swap(0, rows - 1);
            let permuted = prof.select(Axis(0), &idx);
            prop_assert_eq!(embed_profile(&p, prof.view()).unwrap(), embed_profile(&p, permuted.view()).unwrap());
        }
    }

    #[test]
    fn score_difference_is_margin() {
        let p = ModelParams::init(TOY, 9).unwrap();
        let cat = toy_catalog(&["a", "b", "c", "d"], 8);
        let t = TrainingTriple {
            user: 0,
            profile: vec![0, 1],
            positive: 2,
            negative: 3,
            strategy: 1,
        };
        let prof = cat.gather(&[0, 1]);
        let emb = cat.gather(&[2, 3]);
        let xi = score(&p, prof.view(), emb.row(0)).unwrap();
        let xj = score(&p, prof.view(), emb.row(1)).unwrap();
        let m = p.margins(&cat, &[&t]).unwrap()[0];
        assert_abs_diff_eq!(m, xi - xj, epsilon = 1e-10);
        let (loss, _) = triple_loss(&p, &cat, &[&t], 0.0).unwrap();
        assert_abs_diff_eq!(loss, neg_log_sigmoid(xi - xj), epsilon = 1e-10);
    }

    #[test]
    fn loss_at_zero_margin_is_ln2_plus_reg() {
        let p = ModelParams::init(TOY, 1).unwrap();
        let cat = toy_catalog(&["a", "b", "c"], 8);
        let t = TrainingTriple {
            user: 0,
            profile: vec![0],
            positive: 1,
            negative: 1,
            strategy: 0,
        };
        let lambda = 0.01;
        let (loss, _) = triple_loss(&p, &cat, &[&t], lambda).unwrap();
        assert_abs_diff_eq!(loss, 2f64.ln() + lambda * p.squared_norm(), epsilon = 1e-12);
        assert!(loss >= lambda * p.squared_norm());
    }

    /// Random toy instance: non-zero biases, profiles of size 1–5.
    pub(crate) fn gradient_instance(seed: u64) -> (ModelParams, Catalog, Vec<TrainingTriple>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::init(TOY, seed).unwrap();
        for mut t in p.tensors_mut() {
            if t.ndim() == 1 {
                t.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            }
        }
        let ids: Vec<String> = (0..12).map(|i| format!("i{i:02}")).collect();
        let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let cat = toy_catalog(&id_refs, 8);
        let triples = (0..6)
            .map(|_| {
                let size = rng.random_range(1..=5);
                let mut profile: Vec<ItemIdx> = rand::seq::index::sample(&mut rng, 10, size)
                    .into_iter()
                    .map(|i| i as ItemIdx)
                    .collect();
                profile.sort_unstable();
                TrainingTriple {
                    user: 0,
                    profile,
                    positive: 10,
                    negative: 11,
                    strategy: 1,
                }
            })
            .collect();
        (p, cat, triples)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let (p, cat, triples) = gradient_instance(seed);
            let batch: Vec<&TrainingTriple> = triples.iter().collect();
            let theta = p.flatten();
            let mut work = p.clone();
            let err = finite_diff_check(
                |th| {
                    work.assign_flat(th)?;
                    let (l, g) = triple_loss(&work, &cat, &batch, 0.01)?;
                    Ok((l, g.flatten()))
                },
                &theta,
                1e-6,
                Coordinates::All,
            )
            .unwrap();
            assert!(err < 1e-3, "seed {seed}: {err}");
        }
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let p = ModelParams::init(TOY, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cnet");
        save_checkpoint(&p, &path, vec![("lambda".into(), "0".into())], vec![]).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), p);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_checkpoint(&path).is_err());
        std::fs::write(&path, b"NOPE1").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn ranking_rules() {
        let p = ModelParams::init(TOY, 2).unwrap();
        let ids = ["a", "b", "c", "d", "e"];
        let cat = toy_catalog(&ids, 8);
        let all: HashSet<String> = ids.iter().map(|s| s.to_string()).collect();
        assert!(rank_catalog(&p, &["a"], &cat, &all, 3).unwrap().is_empty());
        let full = rank_catalog(&p, &["a"], &cat, &HashSet::new(), 10).unwrap();
        assert_eq!(full.len(), 5);
        assert!(full.windows(2).all(|w| w[0].1 >= w[1].1));
        assert!(rank_catalog(&p, &["a"], &cat, &HashSet::new(), 0).is_err());
        assert!(rank_catalog(&p, &["zz"], &cat, &HashSet::new(), 1).is_err());
        // zero parameters tie every item: id order
        let z = ModelParams::zeros(TOY).unwrap();
        let tied = rank_catalog(&z, &["c"], &cat, &HashSet::new(), 5).unwrap();
        let order: Vec<&str> = tied.iter().map(|(i, _)| i.as_str()).collect();
        assert_eq!(order, ids);
    }

    fn separable_task(n: usize) -> (Catalog, Vec<TrainingTriple>) {
        // "good" items have a positive first coordinate
        let ids: Vec<String> = (0..40).map(|i| format!("i{i:02}")).collect();
        let records = ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
                let sign = if i < 20 { 1.0 } else { -1.0 };
                let mut e: Vec<f32> = (0..8).map(|_| rng.random_range(-0.3..0.3)).collect();
                e[0] = sign * (1.0 + rng.random_range(0.0..0.5));
                crate::data::ItemRecord {
                    item_id: id.clone(),
                    embedding: e,
                    artist_id: None,
                }
            })
            .collect();
        let cat = Catalog::from_records(records, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let triples = (0..n)
            .map(|_| TrainingTriple {
                user: 0,
                profile: vec![rng.random_range(0..20)],
                positive: rng.random_range(0..20),
                negative: rng.random_range(20..40),
                strategy: 5,
            })
            .collect();
        (cat, triples)
    }

    fn toy_config(lambda: f64) -> TrainConfig {
        TrainConfig {
            adam: crate::numerics::AdamConfig {
                lr: 1e-2,
                ..Default::default()
            },
            lambda,
            batch_size: 10,
            max_epochs: 60,
            patience: 60,
            seed: 4,
        }
    }

    #[test]
    fn overfits_small_corpus() {
        let (cat, triples) = separable_task(50);
        let out = train(ModelParams::init(TOY, 4).unwrap(), &cat, &triples, &triples, &toy_config(0.0)).unwrap();
        let refs: Vec<&TrainingTriple> = triples.iter().collect();
        let (acc, _) = triple_accuracy(&out.model, &cat, &refs).unwrap();
        assert!(acc >= 0.98, "{acc}");
    }

    #[test]
    fn training_is_deterministic_and_regularization_shrinks() {
        let (cat, triples) = separable_task(50);
        let run = |lambda| {
            let out = train(ModelParams::init(TOY, 4).unwrap(), &cat, &triples, &triples, &toy_config(lambda)).unwrap();
            to_checkpoint(&out.model, vec![], out.history).encode().unwrap()
        };
        assert_eq!(run(0.0), run(0.0));
        let norm = |lambda| {
            let mut cfg = toy_config(lambda);
            cfg.max_epochs = 20;
            train(ModelParams::init(TOY, 4).unwrap(), &cat, &triples, &triples, &cfg)
                .unwrap()
                .model
                .squared_norm()
        };
        assert!(norm(10.0) < norm(0.0));
    }

    #[test]
    fn divergence_reports_last_good_model() {
        let (cat, triples) = separable_task(20);
        let mut cfg = toy_config(0.0);
        cfg.adam.lr = 1e300;
        cfg.max_epochs = 5;
        let err = train(ModelParams::init(TOY, 4).unwrap(), &cat, &triples, &triples, &cfg).unwrap_err();
        assert!(matches!(err.error, Error::Diverged { .. }), "{}", err.error);
    }

    #[test]
    fn no_per_user_parameters() {
        let p = ModelParams::init(ModelDims::default(), 0).unwrap();
        let names: Vec<&str> = p.tensors().iter().map(|(n, _)| *n).collect();
        assert_eq!(names, ["w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4", "w5", "b5"]);
        assert_eq!(p.w1.dim(), (200, 2048));
        assert_eq!(p.w3.dim(), (300, 400));
        assert_eq!(p.w5.dim(), (200, 200));
    }
}
