//! Adaptive Metropolis MCMC and Laplace approximations for black-box
//! log-densities.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::FamilyParams;
use crate::optim::{minimize, numerical_gradient, BfgsOptions};
use crate::points::PointSet;
use crate::rng::RngStream;

/// Iterations per acceptance-monitoring window.
pub const WINDOW: usize = 100;
const HAARIO_SCALE: f64 = 2.38 * 2.38;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McmcConfig {
    /// Total iterations, burn-in included.
    pub n_samples: usize,
    pub burn_in: usize,
    pub adapt_start: usize,
    pub target_dim: usize,
    /// Standard deviation of the isotropic proposal used before adaptation.
    pub initial_step_scale: f64,
    pub jitter: f64,
    /// Proposal covariance used before adaptation instead of the isotropic
    /// `initial_step_scale²·I` (row-major `d×d`).
    #[serde(default)]
    pub initial_covariance: Option<Vec<f64>>,
    pub stream: RngStream,
}

impl McmcConfig {
    /// Defaults: 25% burn-in, adaptation from `max(100, 10d)`, jitter `1e-8`.
    pub fn new(n_samples: usize, target_dim: usize, stream: RngStream) -> Self {
        McmcConfig {
            n_samples,
            burn_in: n_samples / 4,
            adapt_start: (10 * target_dim).max(100),
            target_dim,
            initial_step_scale: 0.1,
            jitter: 1e-8,
            initial_covariance: None,
            stream,
        }
    }

    /// Keeps `retained` states after discarding `burn_in`.
    pub fn with_retained(retained: usize, burn_in: usize, target_dim: usize, stream: RngStream) -> Self {
        McmcConfig {
            burn_in,
            ..McmcConfig::new(retained + burn_in, target_dim, stream)
        }
    }

    pub fn step_scale(mut self, s: f64) -> Self {
        self.initial_step_scale = s;
        self
    }

    pub fn initial_covariance(mut self, cov: Option<Vec<f64>>) -> Self {
        self.initial_covariance = cov;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_dim == 0 {
            return Err(Error::Argument("target dimension must be positive".into()));
        }
        if self.burn_in >= self.n_samples {
            return Err(Error::Argument(format!(
                "burn-in {} must be below n_samples {}",
                self.burn_in, self.n_samples
            )));
        }
        if self.adapt_start < 2 * self.target_dim {
            return Err(Error::Argument("adapt_start must be at least 2d".into()));
        }
        if !(self.jitter > 0.0) || !(self.initial_step_scale > 0.0) {
            return Err(Error::Argument("jitter and step scale must be positive".into()));
        }
        if let Some(c) = &self.initial_covariance {
            if c.len() != self.target_dim * self.target_dim {
                return Err(Error::Shape("initial covariance must be d×d".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Chain {
    /// Post burn-in states.
    pub states: PointSet,
    /// Acceptance fraction over all iterations.
    pub acceptance_rate: f64,
    /// Per-dimension effective sample size of `states`.
    pub ess: Vec<f64>,
    /// No proposal was accepted for `10·d` consecutive windows at some point.
    pub stuck: bool,
}

/// Running mean and scatter matrix (Welford).
struct RunningCov {
    n: usize,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

impl RunningCov {
    fn new(d: usize) -> Self {
        RunningCov {
            n: 0,
            mean: DVector::zeros(d),
            scatter: DMatrix::zeros(d, d),
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let x = DVector::from_column_slice(x);
        let delta = &x - &self.mean;
        self.mean += &delta / self.n as f64;
        let delta2 = &x - &self.mean;
        self.scatter += &delta * delta2.transpose();
    }

    fn covariance(&self) -> DMatrix<f64> {
        let c = &self.scatter / (self.n.max(2) - 1) as f64;
        0.5 * (&c + c.transpose())
    }
}

/// Haario adaptive Metropolis.
pub fn adaptive_metropolis<F>(log_density: &F, init: &[f64], cfg: &McmcConfig) -> Result<Chain>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    cfg.validate()?;
    let d = cfg.target_dim;
    if init.len() != d {
        return Err(Error::Shape(format!("init has length {}, expected {d}", init.len())));
    }
    let mut current = init.to_vec();
    let mut lp = log_density(&current);
    if !lp.is_finite() {
        return Err(Error::Initialization(format!(
            "log-density at the initial state {init:?} is {lp}"
        )));
    }
    let mut rng = cfg.stream.rng();
    let mut history = RunningCov::new(d);
    let mut factor = match &cfg.initial_covariance {
        Some(c) => {
            let c = DMatrix::from_row_slice(d, d, c) + DMatrix::identity(d, d) * cfg.jitter;
            crate::families::psd_root(&crate::gp::nearest_psd(&c)?)?
        }
        None => DMatrix::identity(d, d) * cfg.initial_step_scale,
    };
    let mut states = PointSet::with_capacity(d, cfg.n_samples - cfg.burn_in);
    let mut proposal = vec![0.0; d];
    let mut z = DVector::zeros(d);
    let mut accepted = 0usize;
    let mut window_accepts = 0usize;
    let mut dead_windows = 0usize;
    let mut stuck = false;

    for it in 0..cfg.n_samples {
        history.push(&current);
        if it >= cfg.adapt_start {
            let cov = history.covariance() * (HAARIO_SCALE / d as f64) + DMatrix::identity(d, d) * cfg.jitter;
            factor = match cov.clone().cholesky() {
                Some(ch) => ch.l(),
                None => crate::families::psd_root(&crate::gp::nearest_psd(&cov)?)?,
            };
        }
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let step = &factor * &z;
        for k in 0..d {
            proposal[k] = current[k] + step[k];
        }
        let lp_new = log_density(&proposal);
        let u: f64 = rng.random();
        // NaN proposals are rejected along with -inf ones.
        if lp_new.is_finite() && u.ln() < lp_new - lp {
            current.copy_from_slice(&proposal);
            lp = lp_new;
            accepted += 1;
            window_accepts += 1;
        }
        if (it + 1) % WINDOW == 0 {
            if window_accepts == 0 {
                dead_windows += 1;
                if dead_windows >= 10 * d {
                    stuck = true;
                }
            } else {
                dead_windows = 0;
            }
            window_accepts = 0;
        }
        if it >= cfg.burn_in {
            states.push(&current)?;
        }
    }
    let ess = (0..d).map(|j| effective_sample_size(&states.column(j))).collect();
    Ok(Chain {
        states,
        acceptance_rate: accepted as f64 / cfg.n_samples as f64,
        ess,
        stuck,
    })
}

/// Effective sample size by Geyer's initial positive sequence estimator.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let acov = |lag: usize| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let c0 = acov(0);
    if c0 <= 0.0 {
        return n as f64;
    }
    let mut sum = 0.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = (acov(2 * k) + acov(2 * k + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        k += 1;
    }
    // tau = -1 + 2 Σ Γ_k, with Γ_0 including the lag-0 term.
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    (n as f64 / tau).min(n as f64 * (n as f64).log10().max(1.0))
}

/// Gaussian approximation at the mode of a log-density.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LaplaceFit {
    /// Normal for `d = 1`, MVN otherwise.
    pub params: FamilyParams,
    pub mode: Vec<f64>,
    pub log_density_at_mode: f64,
    /// The covariance had to be projected onto the PSD cone.
    pub repaired: bool,
}

const LAPLACE_RESTARTS: usize = 10;
const LAPLACE_JITTER_SEED: u64 = 0x1a91_ace0;

/// Mode by quasi-Newton ascent with jittered restarts around `init`,
/// covariance from a central finite-difference Hessian.
pub fn laplace_fit<F>(log_density: &F, init: &[f64]) -> Result<LaplaceFit>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let d = init.len();
    if d == 0 {
        return Err(Error::Argument("empty initial point".into()));
    }
    let neg = |x: &[f64]| -log_density(x);
    let opts = BfgsOptions {
        max_iter: 500,
        gtol: 1e-8,
        ftol: 1e-15,
    };
    let mut jitter_rng = rand_chacha::ChaCha8Rng::seed_from_u64(LAPLACE_JITTER_SEED);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut last = init.to_vec();
    for r in 0..LAPLACE_RESTARTS {
        let x0: Vec<f64> = if r == 0 {
            init.to_vec()
        } else {
            init.iter()
                .map(|&v| v + 0.1 * v.abs().max(1.0) * jitter_rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        if !neg(&x0).is_finite() {
            continue;
        }
        let m = minimize(neg, |x| numerical_gradient(&neg, x), &x0, None, &opts);
        last = m.x.clone();
        let good = m.converged && m.f.is_finite();
        if good && best.as_ref().is_none_or(|(_, f)| m.f < *f) {
            best = Some((m.x, m.f));
        }
    }
    let Some((mut mode, mut f_mode)) = best else {
        return Err(Error::Convergence {
            what: "Laplace mode search",
            iterations: LAPLACE_RESTARTS,
            last,
        });
    };

    // Newton polish with the finite-difference Hessian.
    for _ in 0..5 {
        let h = hessian(&neg, &mode);
        let g = DVector::from_vec(numerical_gradient(&neg, &mode));
        let Some(step) = h.clone().cholesky().map(|c| c.solve(&g)) else {
            break;
        };
        let trial: Vec<f64> = mode.iter().zip(step.iter()).map(|(a, b)| a - b).collect();
        let f_trial = neg(&trial);
        if f_trial.is_finite() && f_trial <= f_mode {
            mode = trial;
            f_mode = f_trial;
        } else {
            break;
        }
    }

    let precision = hessian(&neg, &mode);
    let eig = SymmetricEigen::new(precision.clone());
    let scale = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if !scale.is_finite() || eig.eigenvalues.iter().any(|v| v.abs() <= 1e-12 * scale || !v.is_finite()) {
        return Err(Error::Singular(format!(
            "Hessian at the mode has eigenvalues {:?}",
            eig.eigenvalues.as_slice()
        )));
    }
    let inv = eig.eigenvalues.map(|v| 1.0 / v);
    let mut cov = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
    let repaired = eig.eigenvalues.iter().any(|&v| v < 0.0);
    if repaired {
        cov = crate::gp::nearest_psd(&cov)?;
    }
    let params = if d == 1 {
        FamilyParams::normal(mode[0], cov[(0, 0)].sqrt())?
    } else {
        FamilyParams::mvn(&mode, &cov)?
    };
    Ok(LaplaceFit {
        params,
        mode,
        log_density_at_mode: -f_mode,
        repaired,
    })
}

/// Central finite-difference Hessian, step `cbrt(eps)·max(1, |x_i|)`.
pub fn hessian<F: Fn(&[f64]) -> f64 + ?Sized>(f: &F, x: &[f64]) -> DMatrix<f64> {
    let d = x.len();
    let h0 = f64::EPSILON.cbrt();
    let h: Vec<f64> = x.iter().map(|v| h0 * v.abs().max(1.0)).collect();
    let f0 = f(x);
    let mut y = x.to_vec();
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        y[i] = x[i] + h[i];
        let fp = f(&y);
        y[i] = x[i] - h[i];
        let fm = f(&y);
        y[i] = x[i];
        out[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut eval = |si: f64, sj: f64| {
                y[i] = x[i] + si * h[i];
                y[j] = x[j] + sj * h[j];
                let v = f(&y);
                y[i] = x[i];
                y[j] = x[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * h[i] * h[j]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}
