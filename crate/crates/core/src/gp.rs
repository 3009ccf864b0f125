//! Gaussian-process emulator with an anisotropic squared-exponential kernel,
//! and nearest positive semi-definite matrix projection.
//!
//! Inputs are standardized per column and targets centered before fitting.
//! Hyperparameters `(log ℓ_1..ℓ_q, log s² [, log g])` maximize the log
//! marginal likelihood by multi-start bounded BFGS with analytic gradients.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optim::{minimize, BfgsOptions};
use crate::points::PointSet;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NuggetMode {
    /// Fixed nugget `1e-8·var(y)`; duplicate inputs are rejected.
    Interpolating,
    /// Nugget estimated jointly with the kernel hyperparameters.
    Estimated,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GpConfig {
    pub n_starts: usize,
    /// Lengthscale bounds in standardized input units.
    pub lengthscale_bounds: (f64, f64),
    pub nugget_mode: NuggetMode,
    pub max_iter: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            n_starts: 8,
            lengthscale_bounds: (1e-2, 1e2),
            nugget_mode: NuggetMode::Interpolating,
            max_iter: 200,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GpModel {
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    xs: PointSet,
    x_min: Vec<f64>,
    x_max: Vec<f64>,
    y_mean: f64,
    lengthscales: Vec<f64>,
    signal_variance: f64,
    nugget: f64,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    nll: f64,
    training_hash: String,
    n_train: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpSummary {
    pub n: usize,
    pub q: usize,
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub nugget: f64,
    pub neg_log_likelihood: f64,
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: f64,
    pub training_sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Some standardized coordinate lies more than 0.5 outside the training range.
    pub extrapolating: Vec<bool>,
}

/// Hash of the raw training data, used to tie summaries to their design.
pub fn training_hash(x: &PointSet, y: &[f64]) -> String {
    let mut h = Sha256::new();
    h.update((x.len() as u64).to_le_bytes());
    h.update((x.dim() as u64).to_le_bytes());
    for v in x.as_flat().iter().chain(y) {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

struct Objective<'a> {
    sqd: &'a [DMatrix<f64>],
    y: &'a DVector<f64>,
    fixed_nugget: Option<f64>,
}

impl Objective<'_> {
    fn q(&self) -> usize {
        self.sqd.len()
    }

    fn kernel(&self, theta: &[f64]) -> (DMatrix<f64>, f64, f64) {
        let q = self.q();
        let n = self.y.len();
        let s2 = theta[q].exp();
        let g = self.fixed_nugget.unwrap_or_else(|| theta[q + 1].exp());
        let inv_l2: Vec<f64> = theta[..q].iter().map(|t| (-2.0 * t).exp()).collect();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let r: f64 = (0..q).map(|d| self.sqd[d][(i, j)] * inv_l2[d]).sum();
                let v = s2 * (-0.5 * r).exp();
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            k[(i, i)] += g;
        }
        (k, s2, g)
    }

    fn nll(&self, theta: &[f64]) -> f64 {
        let (k, _, _) = self.kernel(theta);
        let Some(ch) = k.cholesky() else {
            return f64::INFINITY;
        };
        let a = ch.solve(self.y);
        let log_det: f64 = ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        0.5 * self.y.dot(&a) + log_det + 0.5 * self.y.len() as f64 * LN_2PI
    }

    /// `½ tr((K⁻¹ − ααᵀ) ∂K/∂θ)` for each hyperparameter.
    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        let q = self.q();
        let n = self.y.len();
        let (k, _, g) = self.kernel(theta);
        let mut out = vec![0.0; theta.len()];
        let Some(ch) = k.clone().cholesky() else {
            return out;
        };
        let a = ch.solve(self.y);
        let kinv = ch.inverse();
        let inv_l2: Vec<f64> = theta[..q].iter().map(|t| (-2.0 * t).exp()).collect();
        for i in 0..n {
            for j in 0..n {
                let w = kinv[(i, j)] - a[i] * a[j];
                let kij = if i == j { k[(i, j)] - g } else { k[(i, j)] };
                for d in 0..q {
                    out[d] += w * kij * self.sqd[d][(i, j)] * inv_l2[d];
                }
                out[q] += w * kij;
                if i == j && self.fixed_nugget.is_none() {
                    out[q + 1] += w * g;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= 0.5);
        out
    }
}

fn standardize(x: &PointSet) -> (Vec<f64>, Vec<f64>, PointSet) {
    let mean = x.column_means();
    let scale: Vec<f64> = x
        .column_sds()
        .into_iter()
        .map(|s| if s > 0.0 && s.is_finite() { s } else { 1.0 })
        .collect();
    let mut xs = x.clone();
    for i in 0..xs.len() {
        for (j, v) in xs.row_mut(i).iter_mut().enumerate() {
            *v = (*v - mean[j]) / scale[j];
        }
    }
    (mean, scale, xs)
}

/// Fits a GP to `(x, y)`.
pub fn gp_fit(x: &PointSet, y: &[f64], cfg: &GpConfig) -> Result<GpModel> {
    let n = x.len();
    if n < 3 {
        return Err(Error::Argument(format!("need at least 3 training points, got {n}")));
    }
    if y.len() != n {
        return Err(Error::Shape(format!("{n} inputs but {} targets", y.len())));
    }
    if x.as_flat().iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite training data".into()));
    }
    let q = x.dim();
    let (x_mean, x_scale, xs) = standardize(x);
    if cfg.nugget_mode == NuggetMode::Interpolating {
        for i in 0..n {
            for j in 0..i {
                if crate::points::sq_dist(xs.row(i), xs.row(j)).sqrt() < 1e-12 {
                    return Err(Error::DuplicateDesign(j, i));
                }
            }
        }
    }
    let x_min: Vec<f64> = (0..q).map(|j| xs.column(j).into_iter().fold(f64::INFINITY, f64::min)).collect();
    let x_max: Vec<f64> = (0..q).map(|j| xs.column(j).into_iter().fold(f64::NEG_INFINITY, f64::max)).collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let var_y = yc.norm_squared() / (n - 1) as f64;
    let hash = training_hash(x, y);

    if var_y == 0.0 {
        // Constant targets: the centered data are identically zero.
        return Ok(GpModel {
            x_mean,
            x_scale,
            xs,
            x_min,
            x_max,
            y_mean,
            lengthscales: vec![1.0; q],
            signal_variance: 0.0,
            nugget: 0.0,
            chol: DMatrix::identity(n, n),
            alpha: DVector::zeros(n),
            nll: f64::NEG_INFINITY,
            training_hash: hash,
            n_train: n,
        });
    }

    let sqd: Vec<DMatrix<f64>> = (0..q)
        .map(|d| DMatrix::from_fn(n, n, |i, j| (xs.row(i)[d] - xs.row(j)[d]).powi(2)))
        .collect();
    let base_nugget = 1e-8 * var_y;
    let estimated = cfg.nugget_mode == NuggetMode::Estimated;
    let obj = Objective {
        sqd: &sqd,
        y: &yc,
        fixed_nugget: if estimated { None } else { Some(base_nugget) },
    };
    let (lo, hi) = (cfg.lengthscale_bounds.0.ln(), cfg.lengthscale_bounds.1.ln());
    let mut bounds = vec![(lo, hi); q];
    bounds.push(((1e-6 * var_y).ln(), (1e6 * var_y).ln()));
    if estimated {
        bounds.push(((1e-8 * var_y).ln(), var_y.ln()));
    }
    let opts = BfgsOptions {
        max_iter: cfg.max_iter,
        gtol: 1e-6,
        ftol: 1e-10,
    };
    let starts = cfg.n_starts.max(1);
    let runs: Vec<_> = (0..starts)
        .into_par_iter()
        .map(|s| {
            let theta0 = start_point(s, starts, q, var_y, estimated);
            minimize(|t| obj.nll(t), |t| obj.grad(t), &theta0, Some(&bounds), &opts)
        })
        .collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for m in runs {
        if m.f.is_finite() && best.as_ref().is_none_or(|(_, f)| m.f < *f) {
            best = Some((m.x, m.f));
        }
    }
    let Some((theta, nll)) = best else {
        return Err(Error::Conditioning(format!(
            "no hyperparameter start gave a factorizable kernel matrix (n = {n})"
        )));
    };

    let (mut k, s2, mut g) = obj.kernel(&theta);
    let g_max = 1e-4 * var_y;
    let chol = loop {
        if let Some(ch) = k.clone().cholesky() {
            break ch;
        }
        let g_next = (g * 10.0).max(base_nugget);
        if g_next > g_max * (1.0 + 1e-12) {
            return Err(Error::Conditioning(format!(
                "kernel matrix not positive definite with nugget up to {g_max:e}"
            )));
        }
        for i in 0..n {
            k[(i, i)] += g_next - g;
        }
        g = g_next;
    };
    let alpha = if estimated {
        chol.solve(&yc)
    } else {
        refine_weights(&chol, &k, g, &yc)
    };
    Ok(GpModel {
        x_mean,
        x_scale,
        xs,
        x_min,
        x_max,
        y_mean,
        lengthscales: theta[..q].iter().map(|t| t.exp()).collect(),
        signal_variance: s2,
        nugget: g,
        chol: chol.l(),
        alpha,
        nll,
        training_hash: hash,
        n_train: n,
    })
}

/// Weights for the noise-free interpolant `K_0 α = y`, where `K = K_0 + gI`
/// is what was factorized. The nugget only regularizes the factorization, so
/// the weights are refined against `K_0` until the training residual stops
/// shrinking.
fn refine_weights(
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    k: &DMatrix<f64>,
    g: f64,
    y: &DVector<f64>,
) -> DVector<f64> {
    let mut k0 = k.clone();
    for i in 0..k0.nrows() {
        k0[(i, i)] -= g;
    }
    let mut alpha = chol.solve(y);
    let mut resid = y - &k0 * &alpha;
    let mut norm = resid.amax();
    for _ in 0..REFINE_ITERS {
        if norm <= 1e-12 * (1.0 + y.amax()) {
            break;
        }
        let trial = &alpha + chol.solve(&resid);
        let r = y - &k0 * &trial;
        if r.amax() >= norm {
            break;
        }
        alpha = trial;
        resid = r;
        norm = resid.amax();
    }
    alpha
}

const REFINE_ITERS: usize = 50;

/// Deterministic spread of starting points over the log-lengthscale box.
fn start_point(s: usize, n_starts: usize, q: usize, var_y: f64, estimated: bool) -> Vec<f64> {
    let (lo, hi) = (0.1f64.ln(), 10f64.ln());
    let mut t: Vec<f64> = (0..q)
        .map(|d| {
            let k = (s + 3 * d) % n_starts;
            lo + (hi - lo) * (k as f64 + 0.5) / n_starts as f64
        })
        .collect();
    t.push(var_y.ln());
    if estimated {
        t.push((1e-2 * var_y).ln());
    }
    t
}

impl GpModel {
    pub fn dim(&self) -> usize {
        self.x_mean.len()
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    pub fn summary(&self) -> GpSummary {
        GpSummary {
            n: self.n_train,
            q: self.dim(),
            lengthscales: self.lengthscales.clone(),
            signal_variance: self.signal_variance,
            nugget: self.nugget,
            neg_log_likelihood: self.nll,
            x_mean: self.x_mean.clone(),
            x_scale: self.x_scale.clone(),
            y_mean: self.y_mean,
            training_sha256: self.training_hash.clone(),
        }
    }

    /// Mean and latent sd at one point, plus the extrapolation flag.
    pub fn predict_one(&self, x: &[f64]) -> (f64, f64, bool) {
        let q = self.dim();
        let z: Vec<f64> = (0..q).map(|j| (x[j] - self.x_mean[j]) / self.x_scale[j]).collect();
        let extrapolating = (0..q).any(|j| z[j] < self.x_min[j] - 0.5 || z[j] > self.x_max[j] + 0.5);
        if self.signal_variance == 0.0 {
            return (self.y_mean, 0.0, extrapolating);
        }
        let inv_l2: Vec<f64> = self.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
        let kstar = DVector::from_iterator(
            self.n_train,
            self.xs.rows().map(|r| {
                let d: f64 = (0..q).map(|j| (r[j] - z[j]).powi(2) * inv_l2[j]).sum();
                self.signal_variance * (-0.5 * d).exp()
            }),
        );
        let mean = self.y_mean + kstar.dot(&self.alpha);
        let v = self
            .chol
            .solve_lower_triangular(&kstar)
            .unwrap_or_else(|| DVector::zeros(self.n_train));
        let var = (self.signal_variance - v.norm_squared()).max(0.0);
        (mean, var.sqrt(), extrapolating)
    }
}

pub fn gp_predict(model: &GpModel, x_new: &PointSet) -> Result<Prediction> {
    if x_new.dim() != model.dim() {
        return Err(Error::Shape(format!(
            "prediction inputs have {} columns, model has {}",
            x_new.dim(),
            model.dim()
        )));
    }
    if x_new.as_flat().iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite prediction input".into()));
    }
    let mut out = Prediction {
        mean: Vec::with_capacity(x_new.len()),
        sd: Vec::with_capacity(x_new.len()),
        extrapolating: Vec::with_capacity(x_new.len()),
    };
    for r in x_new.rows() {
        let (m, s, e) = model.predict_one(r);
        out.mean.push(m);
        out.sd.push(s);
        out.extrapolating.push(e);
    }
    Ok(out)
}

/// Frobenius-nearest PSD matrix: symmetrize, clip negative eigenvalues.
pub fn nearest_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape("nearest_psd needs a square matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite matrix entry".into()));
    }
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&v| v >= 0.0) {
        return Ok(sym);
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    Ok(0.5 * (&out + out.transpose()))
}
