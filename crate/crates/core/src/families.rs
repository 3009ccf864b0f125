//! Parametric families for the conditional posterior of `α`, plus the
//! auxiliary distributions used by the reference problems.
//!
//! Parameter layouts (`FamilyParams::values`):
//!
//! | family | layout |
//! |---|---|
//! | `Normal` | `[μ, σ]` |
//! | `MultivariateNormal(p)` | `[μ_1..μ_p, σ_1²..σ_p², σ_12, σ_13, .., σ_(p-1)p]` |
//! | `Weibull` | `[λ (scale), κ (shape)]` |
//!
//! MVN covariances are stored as components and assembled on demand; the
//! assembled matrix is never repaired here (see [`crate::gp::nearest_psd`]).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::PointSet;
use crate::stats::{ln_beta, ln_factorial, norm_cdf, norm_ppf, LN_SQRT_2PI};

const WEIBULL_MAX_ITER: usize = 200;
const WEIBULL_RTOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FamilyTag {
    Normal,
    MultivariateNormal(usize),
    Weibull,
}

impl FamilyTag {
    /// Dimension `p` of `α`.
    pub fn dim(&self) -> usize {
        match self {
            FamilyTag::Normal | FamilyTag::Weibull => 1,
            FamilyTag::MultivariateNormal(p) => *p,
        }
    }

    /// Number of parameters `r`.
    pub fn n_params(&self) -> usize {
        match self {
            FamilyTag::Normal | FamilyTag::Weibull => 2,
            FamilyTag::MultivariateNormal(p) => 2 * p + p * (p - 1) / 2,
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            FamilyTag::Normal => vec!["mu".into(), "sigma".into()],
            FamilyTag::Weibull => vec!["lambda".into(), "kappa".into()],
            FamilyTag::MultivariateNormal(p) => {
                let mut names: Vec<String> = (1..=*p).map(|i| format!("mu{i}")).collect();
                names.extend((1..=*p).map(|i| format!("var{i}")));
                for i in 1..=*p {
                    for j in i + 1..=*p {
                        names.push(format!("cov{i}{j}"));
                    }
                }
                names
            }
        }
    }

    /// Which parameters are strictly positive (scale- or variance-like).
    pub fn positive_mask(&self) -> Vec<bool> {
        match self {
            FamilyTag::Normal => vec![false, true],
            FamilyTag::Weibull => vec![true, true],
            FamilyTag::MultivariateNormal(p) => {
                let mut m = vec![false; *p];
                m.extend(std::iter::repeat(true).take(*p));
                m.extend(std::iter::repeat(false).take(p * (p - 1) / 2));
                m
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let FamilyTag::MultivariateNormal(0) = self {
            return Err(Error::Argument("multivariate normal needs p >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyParams {
    tag: FamilyTag,
    values: Vec<f64>,
}

impl FamilyParams {
    pub fn new(tag: FamilyTag, values: Vec<f64>) -> Result<Self> {
        tag.validate()?;
        if values.len() != tag.n_params() {
            return Err(Error::Shape(format!(
                "{:?} takes {} parameters, got {}",
                tag,
                tag.n_params(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite parameters {values:?}")));
        }
        match tag {
            FamilyTag::Normal if values[1] < 0.0 => {
                return Err(Error::Argument("normal sd must be non-negative".into()))
            }
            FamilyTag::Weibull if values[0] <= 0.0 || values[1] <= 0.0 => {
                return Err(Error::Argument("Weibull scale and shape must be positive".into()))
            }
            FamilyTag::MultivariateNormal(p) if values[p..2 * p].iter().any(|v| *v < 0.0) => {
                return Err(Error::Argument("variances must be non-negative".into()))
            }
            _ => {}
        }
        Ok(FamilyParams { tag, values })
    }

    pub fn normal(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(FamilyTag::Normal, vec![mu, sigma])
    }

    pub fn weibull(scale: f64, shape: f64) -> Result<Self> {
        Self::new(FamilyTag::Weibull, vec![scale, shape])
    }

    /// MVN from a mean and a symmetric covariance matrix.
    pub fn mvn(mean: &[f64], cov: &DMatrix<f64>) -> Result<Self> {
        let p = mean.len();
        if cov.nrows() != p || cov.ncols() != p {
            return Err(Error::Shape("covariance does not match mean".into()));
        }
        let mut values = mean.to_vec();
        values.extend((0..p).map(|i| cov[(i, i)]));
        for i in 0..p {
            for j in i + 1..p {
                values.push(0.5 * (cov[(i, j)] + cov[(j, i)]));
            }
        }
        Self::new(FamilyTag::MultivariateNormal(p), values)
    }

    pub fn tag(&self) -> FamilyTag {
        self.tag
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> Vec<f64> {
        match self.tag {
            FamilyTag::Normal => vec![self.values[0]],
            FamilyTag::MultivariateNormal(p) => self.values[..p].to_vec(),
            FamilyTag::Weibull => {
                let (l, k) = (self.values[0], self.values[1]);
                vec![l * crate::stats::ln_gamma(1.0 + 1.0 / k).exp()]
            }
        }
    }

    /// Covariance assembled from the stored components (no repair).
    pub fn covariance(&self) -> DMatrix<f64> {
        match self.tag {
            FamilyTag::Normal => DMatrix::from_element(1, 1, self.values[1] * self.values[1]),
            FamilyTag::Weibull => {
                let (l, k) = (self.values[0], self.values[1]);
                let g1 = crate::stats::ln_gamma(1.0 + 1.0 / k).exp();
                let g2 = crate::stats::ln_gamma(1.0 + 2.0 / k).exp();
                DMatrix::from_element(1, 1, l * l * (g2 - g1 * g1))
            }
            FamilyTag::MultivariateNormal(p) => {
                let mut c = DMatrix::zeros(p, p);
                for i in 0..p {
                    c[(i, i)] = self.values[p + i];
                }
                let mut k = 2 * p;
                for i in 0..p {
                    for j in i + 1..p {
                        c[(i, j)] = self.values[k];
                        c[(j, i)] = self.values[k];
                        k += 1;
                    }
                }
                c
            }
        }
    }

    /// Marginal of coordinate `i` as a univariate member (Normal or Weibull).
    pub fn marginal(&self, i: usize) -> Result<FamilyParams> {
        match self.tag {
            FamilyTag::MultivariateNormal(p) if i < p => {
                FamilyParams::normal(self.values[i], self.values[p + i].max(0.0).sqrt())
            }
            FamilyTag::Normal | FamilyTag::Weibull if i == 0 => Ok(self.clone()),
            _ => Err(Error::Argument(format!("no marginal {i} for {:?}", self.tag))),
        }
    }

    /// CDF of a univariate member.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        match self.tag {
            FamilyTag::Normal => {
                let (m, s) = (self.values[0], self.values[1]);
                Ok(if s == 0.0 {
                    if x < m {
                        0.0
                    } else {
                        1.0
                    }
                } else {
                    norm_cdf((x - m) / s)
                })
            }
            FamilyTag::Weibull => {
                let (l, k) = (self.values[0], self.values[1]);
                Ok(if x <= 0.0 {
                    0.0
                } else {
                    -(-(x / l).powf(k)).exp_m1()
                })
            }
            FamilyTag::MultivariateNormal(_) => Err(Error::UnsupportedFamily(
                "CDF is only defined for univariate families".into(),
            )),
        }
    }

    /// Natural-log density. Points outside the support give `-∞`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        match self.tag {
            FamilyTag::Normal => {
                let (m, s) = (self.values[0], self.values[1]);
                let z = (x[0] - m) / s;
                -0.5 * z * z - s.ln() - LN_SQRT_2PI
            }
            FamilyTag::Weibull => {
                let (l, k) = (self.values[0], self.values[1]);
                if x[0] < 0.0 {
                    return f64::NEG_INFINITY;
                }
                let r = x[0] / l;
                k.ln() - l.ln() + (k - 1.0) * r.ln() - r.powf(k)
            }
            FamilyTag::MultivariateNormal(p) => {
                let cov = self.covariance();
                let Some(chol) = cov.cholesky() else {
                    return f64::NEG_INFINITY;
                };
                let diff = DVector::from_iterator(p, (0..p).map(|i| x[i] - self.values[i]));
                let z = chol.l().solve_lower_triangular(&diff).unwrap_or(diff);
                let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum();
                -0.5 * z.norm_squared() - log_det - p as f64 * LN_SQRT_2PI
            }
        }
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }
}

/// Auxiliary distributions with scalar support.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AuxDistribution {
    Beta { a: f64, b: f64 },
    Binomial { n: u64, p: f64 },
    Poisson { rate: f64 },
}

impl AuxDistribution {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            AuxDistribution::Beta { a, b } => a > 0.0 && b > 0.0,
            AuxDistribution::Binomial { p, .. } => (0.0..=1.0).contains(&p),
            AuxDistribution::Poisson { rate } => rate > 0.0 && rate.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(format!("invalid parameters {self:?}")))
        }
    }

    /// Log density (Beta) or log mass (Binomial, Poisson).
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            AuxDistribution::Beta { a, b } => {
                if x <= 0.0 || x >= 1.0 {
                    // Boundary values are in the support only when the density is finite there.
                    if (x == 0.0 && a == 1.0) || (x == 1.0 && b == 1.0) {
                        return -ln_beta(a, b);
                    }
                    return f64::NEG_INFINITY;
                }
                (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_beta(a, b)
            }
            AuxDistribution::Binomial { n, p } => {
                if x < 0.0 || x.fract() != 0.0 || x > n as f64 {
                    return f64::NEG_INFINITY;
                }
                let k = x as u64;
                let log_choose = ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k);
                log_choose + xlogy(k as f64, p) + xlogy((n - k) as f64, 1.0 - p)
            }
            AuxDistribution::Poisson { rate } => {
                if x < 0.0 || x.fract() != 0.0 {
                    return f64::NEG_INFINITY;
                }
                let k = x as u64;
                xlogy(k as f64, rate) - rate - ln_factorial(k)
            }
        }
    }
}

/// `x·ln(y)` with the convention `0·ln(0) = 0`.
fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Consistent parameter estimates from i.i.d. samples.
///
/// Normal/MVN use the sample mean and unbiased (co)variance. Weibull uses the
/// maximum-likelihood fit by Newton iteration on the profile equation for the
/// shape.
pub fn estimate_params(samples: &PointSet, tag: FamilyTag) -> Result<FamilyParams> {
    tag.validate()?;
    let n = samples.len();
    // Moment estimators are defined from two samples; the Weibull fit needs three.
    let min_n = if tag == FamilyTag::Weibull { 3 } else { tag.dim() + 1 };
    if n < min_n {
        return Err(Error::Argument(format!("need at least {min_n} samples, got {n}")));
    }
    if samples.dim() != tag.dim() {
        return Err(Error::Shape(format!(
            "samples have {} columns but {:?} needs {}",
            samples.dim(),
            tag,
            tag.dim()
        )));
    }
    if samples.as_flat().iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite sample".into()));
    }
    match tag {
        FamilyTag::Normal => {
            let (m, s) = crate::stats::mean_sd(samples.as_flat());
            if samples.as_flat().iter().all(|v| *v == samples.as_flat()[0]) {
                return Err(Error::DegenerateSample("all samples are equal".into()));
            }
            FamilyParams::normal(m, s)
        }
        FamilyTag::MultivariateNormal(p) => {
            let mean = samples.column_means();
            let mut cov = DMatrix::zeros(p, p);
            for r in samples.rows() {
                for i in 0..p {
                    let di = r[i] - mean[i];
                    for j in i..p {
                        cov[(i, j)] += di * (r[j] - mean[j]);
                    }
                }
            }
            let denom = (n - 1) as f64;
            for i in 0..p {
                for j in i..p {
                    cov[(i, j)] /= denom;
                    cov[(j, i)] = cov[(i, j)];
                }
                if samples.rows().all(|r| r[i] == samples.row(0)[i]) {
                    return Err(Error::DegenerateSample(format!("column {i} has zero variance")));
                }
            }
            FamilyParams::mvn(&mean, &cov)
        }
        FamilyTag::Weibull => weibull_mle(samples.as_flat()),
    }
}

fn weibull_mle(x: &[f64]) -> Result<FamilyParams> {
    if x.iter().any(|v| *v <= 0.0) {
        return Err(Error::Domain("Weibull samples must be positive".into()));
    }
    let logs: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let n = logs.len() as f64;
    let mean_log = logs.iter().sum::<f64>() / n;
    let max_log = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sd_log = (logs.iter().map(|l| (l - mean_log).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if x.iter().all(|v| *v == x[0]) {
        return Err(Error::DegenerateSample("all samples are equal".into()));
    }

    // Profile score f(k) = Σ w ln x / Σ w − 1/k − mean(ln x), w = (x / max x)^k.
    let moments = |k: f64| {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &l in &logs {
            let w = (k * (l - max_log)).exp();
            s0 += w;
            s1 += w * l;
            s2 += w * l * l;
        }
        (s0, s1, s2)
    };
    let mut k = std::f64::consts::PI / (6f64.sqrt() * sd_log);
    for _ in 0..WEIBULL_MAX_ITER {
        let (s0, s1, s2) = moments(k);
        let a = s1 / s0;
        let f = a - 1.0 / k - mean_log;
        let df = s2 / s0 - a * a + 1.0 / (k * k);
        let mut k_new = k - f / df;
        if !(k_new > 0.0) || !k_new.is_finite() {
            k_new = 0.5 * k;
        }
        let done = ((k_new - k) / k).abs() < WEIBULL_RTOL;
        k = k_new;
        if done {
            let (s0, _, _) = moments(k);
            // λ = (mean x^k)^(1/k), computed relative to max x for stability.
            let scale = (max_log + (s0 / n).ln() / k).exp();
            return FamilyParams::weibull(scale, k);
        }
    }
    let (s0, _, _) = moments(k);
    Err(Error::Convergence {
        what: "Weibull maximum likelihood",
        iterations: WEIBULL_MAX_ITER,
        last: vec![(max_log + (s0 / n).ln() / k).exp(), k],
    })
}

/// `n` i.i.d. draws. MVN covariances must already be PSD.
pub fn sample_family<R: Rng + ?Sized>(params: &FamilyParams, n: usize, rng: &mut R) -> Result<PointSet> {
    let p = params.tag.dim();
    let mut out = PointSet::with_capacity(p, n);
    match params.tag {
        FamilyTag::Normal => {
            let (m, s) = (params.values[0], params.values[1]);
            for _ in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                out.push(&[m + s * z])?;
            }
        }
        FamilyTag::Weibull => {
            let (l, k) = (params.values[0], params.values[1]);
            for _ in 0..n {
                let u: f64 = rng.random();
                out.push(&[l * (-(-u).ln_1p()).powf(1.0 / k)])?;
            }
        }
        FamilyTag::MultivariateNormal(_) => {
            let root = psd_root(&params.covariance())?;
            let mean = DVector::from_column_slice(&params.values[..p]);
            for _ in 0..n {
                let z = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let x = &mean + &root * z;
                out.push(x.as_slice())?;
            }
        }
    }
    Ok(out)
}

/// Symmetric square root factor `V·sqrt(Λ)` of a PSD matrix.
pub(crate) fn psd_root(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(cov.clone());
    let scale = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    if eig.eigenvalues.iter().any(|&v| v < -tol) {
        return Err(Error::Shape(format!(
            "covariance is not positive semi-definite (eigenvalues {:?})",
            eig.eigenvalues.as_slice()
        )));
    }
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

/// Exact inverse CDF of a univariate member.
pub fn quantile(params: &FamilyParams, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("quantile level {u} outside (0, 1)")));
    }
    match params.tag {
        FamilyTag::Normal => Ok(params.values[0] + params.values[1] * norm_ppf(u)),
        FamilyTag::Weibull => {
            let u_star = -(-u).ln_1p();
            Ok(params.values[0] * u_star.powf(1.0 / params.values[1]))
        }
        FamilyTag::MultivariateNormal(_) => Err(Error::UnsupportedFamily(
            "quantile of a multivariate normal; project with a linear combination first".into(),
        )),
    }
}
