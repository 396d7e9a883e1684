//! Visual clusters: PCA, k-means (k-means++ seeding, Lloyd iterations) over
//! several restarts, keeping the run with the best silhouette coefficient.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Catalog, ItemIdx};
use crate::error::{Error, Result};
use crate::io::{write_atomic, Reader};

const CLUSTER_MAGIC: &[u8] = b"CNCLU1";

#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `dim × d`, orthonormal columns ordered by decreasing variance.
    pub projection: Array2<f64>,
    pub explained_variance: Vec<f64>,
}

impl Pca {
    pub fn transform(&self, data: ArrayView2<f64>) -> Array2<f64> {
        (&data - &self.mean).dot(&self.projection)
    }

    pub fn inverse_transform(&self, reduced: ArrayView2<f64>) -> Array2<f64> {
        reduced.dot(&self.projection.t()) + &self.mean
    }
}

/// Projects the rows of `data` onto the top-`d` eigenvectors of their
/// sample covariance.
///
/// The eigenproblem is solved on whichever of the covariance (`dim × dim`)
/// or Gram (`n × n`) matrix is smaller; both share the non-zero spectrum.
pub fn pca_fit_transform(data: ArrayView2<f64>, d: usize) -> Result<(Pca, Array2<f64>)> {
    let (n, dim) = data.dim();
    if d == 0 || d > n || d > dim {
        return Err(Error::InvalidArgument(format!(
            "PCA to {d} dimensions needs 1 <= d <= min(#items={n}, dim={dim})"
        )));
    }
    let mean = data.mean_axis(Axis(0)).expect("non-empty");
    let centered = &data - &mean;
    let denom = (n.max(2) - 1) as f64;

    let (values, mut vectors) = if dim <= n {
        let cov = centered.t().dot(&centered) / denom;
        top_eigenpairs(&cov, d)
    } else {
        let gram = centered.dot(&centered.t()) / denom;
        let (values, u) = top_eigenpairs(&gram, d);
        let mut v = Array2::zeros((dim, d));
        let floor = values.first().copied().unwrap_or(0.0).abs() * 1e-10;
        for (k, &value) in values.iter().enumerate().take(d) {
            if value > floor && value > 0.0 {
                let col = centered.t().dot(&u.column(k)) / (denom * value).sqrt();
                v.column_mut(k).assign(&col);
            }
        }
        (values, v)
    };
    orthonormal_completion(&mut vectors);
    for mut col in vectors.columns_mut() {
        fix_sign(col.view_mut());
    }
    let reduced = centered.dot(&vectors);
    let explained_variance = values.into_iter().map(|v| v.max(0.0)).collect();
    Ok((
        Pca {
            mean,
            projection: vectors,
            explained_variance,
        },
        reduced,
    ))
}

fn top_eigenpairs(sym: &Array2<f64>, d: usize) -> (Vec<f64>, Array2<f64>) {
    let m = sym.nrows();
    let dm = DMatrix::from_fn(m, m, |i, j| sym[[i, j]]);
    let eig = SymmetricEigen::new(dm);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut vecs = Array2::zeros((m, d));
    let mut vals = Vec::with_capacity(d);
    for (k, &idx) in order.iter().take(d).enumerate() {
        vals.push(eig.eigenvalues[idx]);
        for r in 0..m {
            vecs[[r, k]] = eig.eigenvectors[(r, idx)];
        }
    }
    (vals, vecs)
}

/// Re-orthonormalizes the columns (modified Gram-Schmidt) and replaces any
/// degenerate column with a unit vector orthogonal to the others.
fn orthonormal_completion(v: &mut Array2<f64>) {
    let (dim, d) = v.dim();
    let mut basis_cursor = 0usize;
    for k in 0..d {
        let mut col = v.column(k).to_owned();
        loop {
            for j in 0..k {
                let prev = v.column(j);
                let proj = prev.dot(&col);
                col.scaled_add(-proj, &prev);
            }
            let norm = col.dot(&col).sqrt();
            if norm > 1e-8 {
                col /= norm;
                break;
            }
            col = Array1::zeros(dim);
            col[basis_cursor % dim] = 1.0;
            basis_cursor += 1;
        }
        v.column_mut(k).assign(&col);
    }
}

fn fix_sign(mut col: ndarray::ArrayViewMut1<f64>) {
    let mut best = 0usize;
    for (i, v) in col.iter().enumerate() {
        if v.abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < 0.0 {
        col.mapv_inplace(|x| -x);
    }
}

#[inline]
fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Array2<f64>,
    pub labels: Vec<u32>,
    pub inertia: f64,
    /// Inertia after each assignment step, starting with the seeding.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

pub fn kmeans<R: Rng + ?Sized>(points: ArrayView2<f64>, k: usize, max_iters: usize, rng: &mut R) -> Result<KMeansResult> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k-means with k={k} on {n} points")));
    }
    let mut centroids = kmeans_plus_plus(points, k, rng);
    let (mut labels, inertia) = assign(points, centroids.view());
    let mut history = vec![inertia];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        update_centroids(points, &labels, &mut centroids);
        let (new_labels, inertia) = assign(points, centroids.view());
        history.push(inertia);
        let changed = new_labels != labels;
        labels = new_labels;
        if !changed {
            break;
        }
    }
    let inertia = *history.last().expect("at least one assignment");
    Ok(KMeansResult {
        centroids,
        labels,
        inertia,
        inertia_history: history,
        iterations,
    })
}

fn kmeans_plus_plus<R: Rng + ?Sized>(points: ArrayView2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = points.nrows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                if target < w {
                    pick = Some(i);
                    break;
                }
                target -= w;
            }
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("positive mass"))
        } else {
            // all remaining points coincide with a chosen centre
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    let mut centroids = Array2::zeros((k, points.ncols()));
    for (c, &i) in chosen.iter().enumerate() {
        centroids.row_mut(c).assign(&points.row(i));
    }
    centroids
}

fn assign(points: ArrayView2<f64>, centroids: ArrayView2<f64>) -> (Vec<u32>, f64) {
    let res: Vec<(u32, f64)> = (0..points.nrows())
        .into_par_iter()
        .map(|i| {
            let p = points.row(i);
            let mut best = (0u32, f64::INFINITY);
            for (c, row) in centroids.rows().into_iter().enumerate() {
                let d = sq_dist(p, row);
                if d < best.1 {
                    best = (c as u32, d);
                }
            }
            best
        })
        .collect();
    let inertia = res.iter().map(|r| r.1).sum();
    (res.into_iter().map(|r| r.0).collect(), inertia)
}

/// Recomputes centroids as cluster means. An empty cluster is re-seeded at
/// the point farthest from its centroid.
fn update_centroids(points: ArrayView2<f64>, labels: &[u32], centroids: &mut Array2<f64>) {
    let k = centroids.nrows();
    let mut sums = Array2::<f64>::zeros(centroids.dim());
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        sums.row_mut(l as usize).scaled_add(1.0, &points.row(i));
        counts[l as usize] += 1;
    }
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            let mean = sums.row(c).mapv(|v| v / count as f64);
            centroids.row_mut(c).assign(&mean);
        }
    }
    let mut taken = vec![false; points.nrows()];
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let far = (0..points.nrows())
            .filter(|&i| !taken[i] && counts[labels[i] as usize] > 1)
            .map(|i| (i, sq_dist(points.row(i), centroids.row(labels[i] as usize))))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        if let Some((i, _)) = far {
            taken[i] = true;
            counts[labels[i] as usize] -= 1;
            counts[c] = 1;
            centroids.row_mut(c).assign(&points.row(i));
        }
    }
}

/// Pairwise Euclidean distances, stored as the strict upper triangle.
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(points: ArrayView2<f64>) -> Self {
        let n = points.nrows();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| ((i + 1)..n).map(|j| sq_dist(points.row(i), points.row(j)).sqrt()).collect())
            .collect();
        DistanceMatrix {
            n,
            values: rows.into_iter().flatten().collect(),
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        // offset of row a in the condensed layout
        let row = a * self.n - a * (a + 1) / 2;
        self.values[row + (b - a - 1)]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Mean silhouette over all points with Euclidean distance. Points in
/// singleton clusters contribute 0.
pub fn silhouette(points: ArrayView2<f64>, labels: &[u32]) -> Result<f64> {
    silhouette_with(&DistanceMatrix::new(points), labels)
}

pub fn silhouette_with(dist: &DistanceMatrix, labels: &[u32]) -> Result<f64> {
    let n = dist.len();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} points", labels.len())));
    }
    let k = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l as usize] += 1;
    }
    let populated = sizes.iter().filter(|&&s| s > 0).count();
    if populated < 2 {
        return Err(Error::InvalidArgument("silhouette needs at least two non-empty clusters".into()));
    }
    let per_point: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = labels[i] as usize;
            if sizes[own] <= 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sums[labels[j] as usize] += dist.get(i, j);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    Ok(per_point.iter().sum::<f64>() / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterConfig {
    pub k: usize,
    pub pca_dim: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: 100,
            pca_dim: 200,
            restarts: 20,
            max_iters: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub k: usize,
    /// Present when built in-process; the persisted form keeps only
    /// centroids and labels.
    pub pca: Option<Pca>,
    pub centroids: Array2<f64>,
    /// Cluster label per catalog item.
    pub labels: Vec<u32>,
    pub silhouette: f64,
    pub restart_silhouettes: Vec<f64>,
    pub selected_restart: usize,
    /// 2-D PCA coordinates per catalog item, for external plotting.
    pub projection_2d: Option<Array2<f64>>,
}

impl ClusterModel {
    #[inline]
    pub fn label(&self, item: ItemIdx) -> u32 {
        self.labels[item as usize]
    }

    /// Items of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<ItemIdx>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i as ItemIdx);
        }
        out
    }
}

pub fn build_cluster_model(catalog: &Catalog, config: &ClusterConfig) -> Result<ClusterModel> {
    if config.restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let all: Vec<ItemIdx> = (0..catalog.len() as ItemIdx).collect();
    let data = catalog.gather(&all);
    let (pca, reduced) = pca_fit_transform(data.view(), config.pca_dim)?;
    let dist = DistanceMatrix::new(reduced.view());
    let runs: Vec<(KMeansResult, f64)> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(r as u64));
            let run = kmeans(reduced.view(), config.k, config.max_iters, &mut rng)?;
            let sil = silhouette_with(&dist, &run.labels)?;
            Ok((run, sil))
        })
        .collect::<Result<_>>()?;
    let restart_silhouettes: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let mut best = 0;
    for (r, &s) in restart_silhouettes.iter().enumerate() {
        if s > restart_silhouettes[best] {
            best = r;
        }
    }
    let (run, sil) = runs.into_iter().nth(best).expect("restarts >= 1");
    let projection_2d = (reduced.ncols() >= 2).then(|| reduced.slice(s![.., ..2]).to_owned());
    Ok(ClusterModel {
        k: config.k,
        pca: Some(pca),
        centroids: run.centroids,
        labels: run.labels,
        silhouette: sil,
        restart_silhouettes,
        selected_restart: best,
        projection_2d,
    })
}

pub fn encode_cluster_model(model: &ClusterModel, catalog: &Catalog) -> Result<Vec<u8>> {
    if model.labels.len() != catalog.len() {
        return Err(Error::Shape(format!(
            "{} labels for a catalog of {}",
            model.labels.len(),
            catalog.len()
        )));
    }
    let mut out = Vec::new();
    out.extend_from_slice(CLUSTER_MAGIC);
    out.extend_from_slice(&(model.k as u32).to_le_bytes());
    out.extend_from_slice(&(model.centroids.ncols() as u32).to_le_bytes());
    out.extend_from_slice(&model.silhouette.to_le_bytes());
    for v in model.centroids.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    for (i, id) in catalog.ids().iter().enumerate() {
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        out.extend_from_slice(&model.labels[i].to_le_bytes());
    }
    Ok(out)
}

pub fn save_cluster_model(model: &ClusterModel, catalog: &Catalog, path: &Path) -> Result<()> {
    write_atomic(path, &encode_cluster_model(model, catalog)?)
}

/// Loads a persisted model and maps its labels onto `catalog`, which must
/// be covered exactly.
pub fn load_cluster_model(path: &Path, catalog: &Catalog) -> Result<ClusterModel> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(path, &bytes);
    r.expect_magic(CLUSTER_MAGIC)?;
    let k = r.u32()? as usize;
    let d = r.u32()? as usize;
    let silhouette = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let mut centroids = Array2::zeros((k, d));
    for v in centroids.iter_mut() {
        *v = r.f32()? as f64;
    }
    let mut labels = vec![u32::MAX; catalog.len()];
    let mut remaining = catalog.len();
    while remaining > 0 {
        let len = r.u16()? as usize;
        let id = r.str(len)?;
        let label = r.u32()?;
        let item = catalog.index_of(id).ok_or_else(|| Error::UnknownItem(id.to_string()))?;
        if label as usize >= k {
            return Err(Error::format(path, format!("label {label} out of range for k={k}")));
        }
        if labels[item as usize] != u32::MAX {
            return Err(Error::format(path, format!("item {id:?} labelled twice")));
        }
        labels[item as usize] = label;
        remaining -= 1;
    }
    r.finish()?;
    Ok(ClusterModel {
        k,
        pca: None,
        centroids,
        labels,
        silhouette,
        restart_silhouettes: vec![silhouette],
        selected_restart: 0,
        projection_2d: None,
    })
}

pub fn assignment_tsv(model: &ClusterModel, catalog: &Catalog) -> String {
    let mut out = String::from("item_id\tcluster\n");
    for (i, id) in catalog.ids().iter().enumerate() {
        let _ = writeln!(out, "{id}\t{}", model.labels[i]);
    }
    out
}

pub fn projection_2d_tsv(model: &ClusterModel, catalog: &Catalog) -> Option<String> {
    let proj = model.projection_2d.as_ref()?;
    let mut out = String::from("item_id\tx\ty\tcluster\n");
    for (i, id) in catalog.ids().iter().enumerate() {
        let _ = writeln!(out, "{id}\t{}\t{}\t{}", proj[[i, 0]], proj[[i, 1]], model.labels[i]);
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand_distr::{Distribution, Normal};

    fn blobs(centres: &[Vec<f64>], per: usize, sigma: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let dim = centres[0].len();
        let mut pts = Array2::zeros((centres.len() * per, dim));
        let mut truth = Vec::new();
        for (c, centre) in centres.iter().enumerate() {
            for p in 0..per {
                let row = c * per + p;
                for d in 0..dim {
                    pts[[row, d]] = centre[d] + noise.sample(&mut rng);
                }
                truth.push(c);
            }
        }
        (pts, truth)
    }

    fn same_partition(a: &[u32], b: &[usize]) -> bool {
        let mut map = std::collections::HashMap::new();
        let mut inv = std::collections::HashMap::new();
        a.iter().zip(b).all(|(&x, &y)| *map.entry(x).or_insert(y) == y && *inv.entry(y).or_insert(x) == x)
    }

    #[test]
    fn pca_recovers_embedded_subspace() {
        // 3-d data living in a 2-d plane of R^6
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let basis = array![[1.0, 2.0, 0.0, -1.0, 0.5, 0.0], [0.0, 1.0, 1.0, 1.0, 0.0, -2.0]];
        let coeffs = Array2::from_shape_fn((30, 2), |_| rng.random_range(-3.0..3.0));
        let data = coeffs.dot(&basis) + 4.0;
        let (pca, reduced) = pca_fit_transform(data.view(), 2).unwrap();
        let recon = pca.inverse_transform(reduced.view());
        let err = (&recon - &data).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
        assert!(pca.explained_variance[0] >= pca.explained_variance[1]);
        let gram = pca.projection.t().dot(&pca.projection);
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(gram[[i, j]], if i == j { 1.0 } else { 0.0 }, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn pca_gram_route_matches_covariance_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = Array2::from_shape_fn((8, 12), |_| rng.random_range(-1.0..1.0));
        let (pca, reduced) = pca_fit_transform(data.view(), 3).unwrap();
        // component variances equal the reported eigenvalues
        for k in 0..3 {
            let col = reduced.column(k);
            let var = col.dot(&col) / 7.0;
            assert_abs_diff_eq!(var, pca.explained_variance[k], epsilon = 1e-9);
        }
        let small = data.slice(s![.., ..6]).to_owned();
        let (p2, r2) = pca_fit_transform(small.view(), 3).unwrap();
        assert!(p2.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(r2.dim(), (8, 3));
    }

    #[test]
    fn pca_two_points() {
        let data = array![[1.0, 2.0, 3.0], [3.0, 2.0, -1.0]];
        let (_, reduced) = pca_fit_transform(data.view(), 1).unwrap();
        let half = ((2.0f64 * 2.0 + 4.0 * 4.0).sqrt()) / 2.0;
        let mut v = [reduced[[0, 0]], reduced[[1, 0]]];
        v.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(v[0], -half, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], half, epsilon = 1e-12);
    }

    #[test]
    fn pca_rank_deficient_still_orthonormal() {
        let data = array![[1.0, 1.0, 1.0, 1.0], [1.0, 1.0, 1.0, 1.0], [2.0, 0.0, 0.0, 0.0]];
        let (pca, _) = pca_fit_transform(data.view(), 3).unwrap();
        let gram = pca.projection.t().dot(&pca.projection);
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(gram[[i, j]], if i == j { 1.0 } else { 0.0 }, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn pca_argument_errors() {
        let data = Array2::<f64>::ones((3, 4));
        assert!(pca_fit_transform(data.view(), 4).is_err());
        assert!(pca_fit_transform(data.view(), 0).is_err());
        let wide = Array2::<f64>::ones((10, 2));
        assert!(pca_fit_transform(wide.view(), 3).is_err());
    }

    #[test]
    fn kmeans_degenerate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = Array2::from_shape_fn((7, 3), |_| rng.random_range(-5.0..5.0));
        let r = kmeans(pts.view(), 7, 100, &mut rng).unwrap();
        assert_eq!(r.inertia, 0.0);
        let r1 = kmeans(pts.view(), 1, 100, &mut rng).unwrap();
        let mean = pts.mean_axis(Axis(0)).unwrap();
        for d in 0..3 {
            assert_abs_diff_eq!(r1.centroids[[0, d]], mean[d], epsilon = 1e-12);
        }
        assert!(kmeans(pts.view(), 0, 10, &mut rng).is_err());
        assert!(kmeans(pts.view(), 8, 10, &mut rng).is_err());
    }

    #[test]
    fn kmeans_recovers_two_blobs_and_inertia_decreases() {
        let (pts, truth) = blobs(&[vec![0.0; 4], vec![20.0; 4]], 40, 1.0, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = kmeans(pts.view(), 2, 100, &mut rng).unwrap();
        assert!(same_partition(&r.labels, &truth));
        assert!(r.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{:?}", r.inertia_history);
    }

    #[test]
    fn kmeans_never_leaves_clusters_empty() {
        // heavy duplication makes empty clusters likely
        let mut rows = vec![[0.0, 0.0]; 20];
        rows.extend([[10.0, 0.0], [10.0, 0.1], [0.0, 10.0], [5.0, 5.0]]);
        let pts = Array2::from_shape_fn((rows.len(), 2), |(i, j)| rows[i][j]);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = kmeans(pts.view(), 5, 50, &mut rng).unwrap();
            let mut counts = [0; 5];
            r.labels.iter().for_each(|&l| counts[l as usize] += 1);
            assert!(counts.iter().all(|&c| c > 0), "seed {seed}: {counts:?}");
            assert!(r.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        }
    }

    #[test]
    fn silhouette_hand_computed() {
        let pts = array![[0.0], [1.0], [10.0], [11.0]];
        let s = silhouette(pts.view(), &[0, 0, 1, 1]).unwrap();
        // a = 1 everywhere; b = 10.5 for the outer points, 9.5 for the inner
        let expected = ((1.0 - 1.0 / 10.5) + (1.0 - 1.0 / 9.5)) / 2.0;
        assert_abs_diff_eq!(s, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(s, 0.899_749_373, epsilon = 1e-9);
    }

    #[test]
    fn silhouette_edge_cases() {
        let same = Array2::<f64>::zeros((4, 2));
        assert_eq!(silhouette(same.view(), &[0, 0, 1, 1]).unwrap(), 0.0);
        assert!(silhouette(same.view(), &[0, 0, 0, 0]).is_err());
        let pts = array![[0.0], [1.0], [50.0]];
        // the singleton contributes 0
        let s = silhouette(pts.view(), &[0, 0, 1]).unwrap();
        let a0 = 1.0;
        let b0 = 50.0;
        let a1 = 1.0;
        let b1 = 49.0;
        let manual = ((b0 - a0) / b0 + (b1 - a1) / b1) / 3.0;
        assert_abs_diff_eq!(s, manual, epsilon = 1e-12);
    }

    #[test]
    fn silhouette_approaches_one_with_separation() {
        let mut last = 0.0;
        for sep in [5.0, 50.0, 5000.0] {
            let (pts, truth) = blobs(&[vec![0.0; 3], vec![sep; 3]], 10, 1.0, 4);
            let labels: Vec<u32> = truth.iter().map(|&t| t as u32).collect();
            let s = silhouette(pts.view(), &labels).unwrap();
            assert!(s > last);
            last = s;
        }
        assert!(last > 0.999);
    }

    #[test]
    fn distance_matrix_indexing() {
        let pts = array![[0.0, 0.0], [3.0, 4.0], [6.0, 8.0], [0.0, 1.0]];
        let d = DistanceMatrix::new(pts.view());
        for i in 0..4 {
            for j in 0..4 {
                let expected = sq_dist(pts.row(i), pts.row(j)).sqrt();
                assert_abs_diff_eq!(d.get(i, j), expected, epsilon = 1e-12);
            }
        }
    }
}
