//! Dense numerics shared by the learned models: SELU activations, affine
//! layers, initialization, Adam and a central-difference gradient checker.
//!
//! Tensors are `ndarray` arrays of `f64`. Trainable parameters are kept
//! representable in `f32` (see [`quantize_f32`]) so that checkpoints, which
//! persist 32-bit floats, round-trip exactly.

use ndarray::{Array1, Array2, ArrayD, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

#[inline]
pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
    }
}

/// Derivative of [`selu`] with respect to its input. At exactly zero the
/// left branch is used.
#[inline]
pub fn selu_grad(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

pub fn selu_array<D: ndarray::Dimension>(x: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    x.mapv(selu)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln σ(x)` evaluated without overflow.
#[inline]
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// `y = W·x + b`, optionally followed by elementwise SELU.
pub fn affine_forward(
    w: ArrayView2<f64>,
    b: ArrayView1<f64>,
    x: ArrayView1<f64>,
    activate: bool,
) -> Result<Array1<f64>> {
    if w.ncols() != x.len() || w.nrows() != b.len() {
        return Err(Error::Shape(format!(
            "affine: W is {}x{}, b has {}, x has {}",
            w.nrows(),
            w.ncols(),
            b.len(),
            x.len()
        )));
    }
    let mut y = w.dot(&x) + b;
    if activate {
        y.mapv_inplace(selu);
    }
    ensure_finite(y.iter(), "affine output")?;
    Ok(y)
}

/// Batched affine layer over the rows of `x`: `X·Wᵀ + b`.
pub(crate) fn affine_rows(w: ArrayView2<f64>, b: ArrayView1<f64>, x: ArrayView2<f64>) -> Array2<f64> {
    debug_assert_eq!(w.ncols(), x.ncols());
    x.dot(&w.t()) + b
}

pub fn ensure_finite<'a>(values: impl IntoIterator<Item = &'a f64>, what: &str) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Zero-mean normal weights with standard deviation `1/sqrt(fan_in)`.
pub fn lecun_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    normal_matrix(rows, cols, 1.0 / (cols.max(1) as f64).sqrt(), rng)
}

pub fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("standard deviation is finite and positive");
    let mut w = Array2::zeros((rows, cols));
    for v in w.iter_mut() {
        *v = quantize_f32(dist.sample(rng));
    }
    w
}

/// Rounds to the nearest `f32` and widens back.
#[inline]
pub fn quantize_f32(x: f64) -> f64 {
    x as f32 as f64
}

pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("cosine: {} vs {}", a.len(), b.len())));
    }
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("cosine operand".into()));
    }
    Ok((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad Adam hyperparameters {self:?}")))
        }
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ArrayD<f64>,
    pub v: ArrayD<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn zeros(shape: &[usize]) -> Self {
        AdamState {
            m: ArrayD::zeros(shape),
            v: ArrayD::zeros(shape),
            t: 0,
        }
    }

    /// In-place Adam update. New parameter values are rounded to `f32`.
    pub fn update(&mut self, mut param: ArrayViewMutD<f64>, grad: ArrayViewD<f64>, cfg: &AdamConfig) -> Result<()> {
        if param.shape() != grad.shape() || param.shape() != self.m.shape() {
            return Err(Error::Shape(format!(
                "adam: param {:?}, grad {:?}, state {:?}",
                param.shape(),
                grad.shape(),
                self.m.shape()
            )));
        }
        ensure_finite(grad.iter(), "gradient")?;
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2, lr, eps) = (cfg.beta1, cfg.beta2, cfg.lr, cfg.eps);
        Zip::from(&mut param)
            .and(&grad)
            .and(&mut self.m)
            .and(&mut self.v)
            .for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = quantize_f32(*p - lr * m_hat / (v_hat.sqrt() + eps));
            });
        Ok(())
    }
}

/// Pure form of one Adam step: returns the updated parameter and state.
pub fn adam_step(
    param: ArrayViewD<f64>,
    grad: ArrayViewD<f64>,
    state: &AdamState,
    cfg: &AdamConfig,
) -> Result<(ArrayD<f64>, AdamState)> {
    cfg.validate()?;
    let mut p = param.to_owned();
    let mut s = state.clone();
    s.update(p.view_mut(), grad, cfg)?;
    Ok((p, s))
}

/// A named collection of trainable tensors that can be walked in a fixed
/// order. Gradients are represented with the same type as the parameters.
pub trait TensorSet: Clone {
    fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, f64>)>;
    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for mut t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn squared_norm(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>()).sum()
    }

    fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for (_, t) in self.tensors() {
            out.extend(t.iter().copied());
        }
        out
    }

    fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_values() {
            return Err(Error::Shape(format!(
                "flat assignment of {} values into {}",
                values.len(),
                self.num_values()
            )));
        }
        let mut offset = 0;
        for mut t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = values[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Adam state for every tensor of a [`TensorSet`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: AdamConfig,
    states: Vec<AdamState>,
}

impl Optimizer {
    pub fn new<T: TensorSet>(params: &T, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        let states = params.tensors().iter().map(|(_, t)| AdamState::zeros(t.shape())).collect();
        Ok(Optimizer { config, states })
    }

    pub fn step<T: TensorSet>(&mut self, params: &mut T, grads: &T) -> Result<()> {
        let grads = grads.tensors();
        for ((state, p), (_, g)) in self.states.iter_mut().zip(params.tensors_mut()).zip(grads) {
            state.update(p, g, &self.config)?;
        }
        Ok(())
    }
}

/// Which coordinates [`finite_diff_check`] perturbs.
#[derive(Debug, Clone, Copy)]
pub enum Coordinates {
    All,
    /// At most this many, evenly strided through the parameter vector.
    Sampled(usize),
}

/// Compares the analytic gradient returned by `f` at `theta` against central
/// differences `(f(θ+e) − f(θ−e)) / 2e` and returns the worst relative
/// error, with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(mut f: F, theta: &[f64], eps: f64, coords: Coordinates) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    let (_, analytic) = f(theta)?;
    if analytic.len() != theta.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            theta.len()
        )));
    }
    let indices: Vec<usize> = match coords {
        Coordinates::All => (0..theta.len()).collect(),
        Coordinates::Sampled(n) if n >= theta.len() => (0..theta.len()).collect(),
        Coordinates::Sampled(n) => {
            let stride = theta.len() as f64 / n as f64;
            (0..n).map(|i| (i as f64 * stride) as usize).collect()
        }
    };
    let mut work = theta.to_vec();
    let mut worst: f64 = 0.0;
    for i in indices {
        let orig = work[i];
        work[i] = orig + eps;
        let (plus, _) = f(&work)?;
        work[i] = orig - eps;
        let (minus, _) = f(&work)?;
        work[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss at perturbed coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2, IxDyn};
    use proptest::prelude::*;

    #[test]
    fn selu_reference_points() {
        assert_eq!(selu(0.0), 0.0);
        assert_abs_diff_eq!(selu(1.0), 1.050_700_987_355_480_5, epsilon = 1e-15);
        // the negative branch saturates at -λα
        let expected = SELU_LAMBDA * SELU_ALPHA * ((-20.0f64).exp() - 1.0);
        assert_abs_diff_eq!(selu(-20.0), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(selu(-20.0), -1.758_099_34, epsilon = 1e-8);
    }

    #[test]
    fn affine_examples() {
        let eye = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let zero_b = arr1(&[0.0, 0.0]);
        let y = affine_forward(eye.view(), zero_b.view(), arr1(&[3.0, -4.0]).view(), false).unwrap();
        assert_eq!(y, arr1(&[3.0, -4.0]));

        let y = affine_forward(eye.view(), zero_b.view(), arr1(&[1.0, -1.0]).view(), true).unwrap();
        assert_abs_diff_eq!(y[0], 1.050_700_987_355_480_5, epsilon = 1e-12);
        assert_abs_diff_eq!(y[1], SELU_LAMBDA * SELU_ALPHA * ((-1.0f64).exp() - 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(y[1], -1.111_330_7, epsilon = 1e-6);

        let w = Array2::zeros((1, 3));
        let y = affine_forward(w.view(), arr1(&[5.0]).view(), arr1(&[7.0, 8.0, 9.0]).view(), false).unwrap();
        assert_eq!(y, arr1(&[5.0]));

        let err = affine_forward(eye.view(), zero_b.view(), arr1(&[1.0]).view(), false);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let p = ArrayD::from_elem(IxDyn(&[2]), 0.5);
        let g = ArrayD::zeros(IxDyn(&[2]));
        let s = AdamState::zeros(&[2]);
        let (p2, s2) = adam_step(p.view(), g.view(), &s, &AdamConfig::default()).unwrap();
        assert_eq!(p2, p);
        assert!(s2.m.iter().all(|&v| v == 0.0));
        assert!(s2.v.iter().all(|&v| v == 0.0));
        assert_eq!(s2.t, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let p = ArrayD::from_elem(IxDyn(&[1]), 1.0);
        let g = ArrayD::from_elem(IxDyn(&[1]), 1.0);
        let (p1, s1) = adam_step(p.view(), g.view(), &AdamState::zeros(&[1]), &cfg).unwrap();
        // m̂ = 1, v̂ = 1, step = 0.1 / (1 + 1e-8)
        assert_abs_diff_eq!(p1[0], 0.9, epsilon = 1e-6);
        let (p2, _) = adam_step(p1.view(), g.view(), &s1, &cfg).unwrap();
        assert!(p2[0] < p1[0] && p1[0] < 1.0);
    }

    #[test]
    fn adam_rejects_nan_gradient() {
        let p = ArrayD::zeros(IxDyn(&[1]));
        let g = ArrayD::from_elem(IxDyn(&[1]), f64::NAN);
        let r = adam_step(p.view(), g.view(), &AdamState::zeros(&[1]), &AdamConfig::default());
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn cosine_examples() {
        let v = arr1(&[0.3, -2.0, 4.0]);
        assert_abs_diff_eq!(cosine(v.view(), v.view()).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(cosine(arr1(&[1.0, 0.0]).view(), arr1(&[0.0, 1.0]).view()).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cosine(arr1(&[1.0, 1.0]).view(), arr1(&[2.0, 2.0]).view()).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert!(matches!(
            cosine(arr1(&[0.0, 0.0]).view(), arr1(&[1.0, 0.0]).view()),
            Err(Error::ZeroNorm(_))
        ));
    }

    #[test]
    fn finite_diff_on_quadratic() {
        let theta = vec![0.3, -1.2, 2.5, 0.0];
        let err = finite_diff_check(
            |t| Ok((t.iter().map(|v| v * v).sum::<f64>() / 2.0, t.to_vec())),
            &theta,
            1e-4,
            Coordinates::All,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn finite_diff_on_selu() {
        let err = finite_diff_check(|t| Ok((selu(t[0]), vec![selu_grad(t[0])])), &[1.0], 1e-4, Coordinates::All).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn finite_diff_detects_wrong_gradient() {
        let err = finite_diff_check(|t| Ok((t[0] * t[0], vec![t[0]])), &[1.0], 1e-4, Coordinates::All).unwrap();
        assert!(err > 0.4);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert_abs_diff_eq!(neg_log_sigmoid(0.0), std::f64::consts::LN_2, epsilon = 1e-15);
        assert!(neg_log_sigmoid(1000.0) < 1e-300);
        assert_abs_diff_eq!(neg_log_sigmoid(-1000.0), 1000.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sigmoid(-800.0), 0.0, epsilon = 1e-300);
    }

    proptest! {
        #[test]
        fn selu_is_monotone(a in -50.0f64..50.0, b in -50.0f64..50.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(selu(lo) <= selu(hi));
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 4),
            b in proptest::collection::vec(-10.0f64..10.0, 4),
            s in 0.01f64..100.0,
        ) {
            let a = Array1::from(a);
            let b = Array1::from(b);
            prop_assume!(a.dot(&a) > 1e-6 && b.dot(&b) > 1e-6);
            let ab = cosine(a.view(), b.view()).unwrap();
            let ba = cosine(b.view(), a.view()).unwrap();
            let scaled = cosine((&a * s).view(), b.view()).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((ab - scaled).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn adam_is_deterministic(p in -5.0f64..5.0, g in -5.0f64..5.0) {
            let p = ArrayD::from_elem(IxDyn(&[3]), p);
            let g = ArrayD::from_elem(IxDyn(&[3]), g);
            let s = AdamState::zeros(&[3]);
            let cfg = AdamConfig::default();
            let a = adam_step(p.view(), g.view(), &s, &cfg).unwrap();
            let b = adam_step(p.view(), g.view(), &s, &cfg).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn selu_ratio_tends_to_lambda() {
        assert_abs_diff_eq!(selu(1e6) / 1e6, SELU_LAMBDA, epsilon = 1e-12);
    }
}
