//! Reference problems: the diamond-in-a-box (DB) model with its closed forms,
//! and the modified HPV / cervical-cancer ecological study.

use std::sync::{Arc, OnceLock};

use nalgebra::{Matrix2, Vector2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cutcore::{ConditionalPosterior, GammaPrior, ProblemSpec};
use crate::doe::{LogDensityFn, PointSampler, QuantileFn};
use crate::error::{Error, Result};
use crate::families::{AuxDistribution, FamilyParams};
use crate::points::PointSet;
use crate::rng::{Rng, RngStream};
use crate::sampler::{adaptive_metropolis, McmcConfig};
use crate::stats::{norm_logpdf, norm_ppf};

/// JSON has no infinity; write it as the string `"inf"`.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Wire {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Wire::deserialize(d)? {
            Wire::Num(v) => Ok(v),
            Wire::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Wire::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
        }
    }
}

/// Diamond-in-a-box settings. `sigma_alpha = ∞` encodes a flat prior on `α`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbConfig {
    pub n1: usize,
    pub n2: usize,
    pub sigma: f64,
    pub mu_alpha: f64,
    #[serde(with = "extended_f64")]
    pub sigma_alpha: f64,
    pub mu_gamma: f64,
    pub sigma_gamma: f64,
    pub true_alpha: f64,
    pub true_gamma: f64,
    /// Scale-error sd used to generate data (inference still uses `sigma`).
    pub sigma_star: Option<f64>,
    /// When set, each generated data set draws `γ ~ N(μ_γ, σ_γ⋆²)` instead of using `true_gamma`.
    pub sigma_gamma_star: Option<f64>,
}

impl Default for DbConfig {
    fn default() -> Self {
        DbConfig {
            n1: 10,
            n2: 100,
            sigma: 0.1,
            mu_alpha: 1.0,
            sigma_alpha: 0.1,
            mu_gamma: 10.0,
            sigma_gamma: 0.1,
            true_alpha: 1.0,
            true_gamma: 10.0,
            sigma_star: None,
            sigma_gamma_star: None,
        }
    }
}

impl DbConfig {
    /// Prior precision of `α` (0 for a flat prior).
    pub fn tau_alpha(&self) -> f64 {
        if self.sigma_alpha.is_infinite() {
            0.0
        } else {
            1.0 / (self.sigma_alpha * self.sigma_alpha)
        }
    }

    pub fn n(&self) -> usize {
        self.n1 + self.n2
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.sigma, self.mu_alpha, self.mu_gamma, self.sigma_gamma, self.true_alpha, self.true_gamma];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("DB parameters must be finite (except sigma_alpha)".into()));
        }
        if !(self.sigma > 0.0 && self.sigma_gamma > 0.0 && self.sigma_alpha > 0.0) {
            return Err(Error::Argument("DB standard deviations must be positive".into()));
        }
        if self.n1 == 0 {
            return Err(Error::Argument("n1 must be at least 1".into()));
        }
        for s in [self.sigma_star, self.sigma_gamma_star].into_iter().flatten() {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Argument("misspecification sds must be finite and non-negative".into()));
            }
        }
        Ok(())
    }
}

/// `n1 + n2` observations: the diamond alone, then diamond plus case.
pub fn db_generate(cfg: &DbConfig, rng: &mut Rng) -> Result<Vec<f64>> {
    let sd = cfg.sigma_star.unwrap_or(cfg.sigma);
    if !(sd >= 0.0) || cfg.n1 == 0 {
        return Err(Error::Argument("generator needs sigma ≥ 0 and n1 ≥ 1".into()));
    }
    let gamma = match cfg.sigma_gamma_star {
        Some(s) => cfg.mu_gamma + s * rng.sample::<f64, _>(StandardNormal),
        None => cfg.true_gamma,
    };
    let mut y = Vec::with_capacity(cfg.n());
    for i in 0..cfg.n() {
        let base = if i < cfg.n1 { cfg.true_alpha } else { cfg.true_alpha + gamma };
        y.push(base + sd * rng.sample::<f64, _>(StandardNormal));
    }
    Ok(y)
}

/// Group means `(ȳ₁, ȳ₂)`; `ȳ₂` is 0 when `n2 = 0`.
pub fn db_means(cfg: &DbConfig, y: &[f64]) -> (f64, f64) {
    let (a, b) = y.split_at(cfg.n1.min(y.len()));
    let m1 = a.iter().sum::<f64>() / a.len().max(1) as f64;
    let m2 = if b.is_empty() { 0.0 } else { b.iter().sum::<f64>() / b.len() as f64 };
    (m1, m2)
}

/// Full-Bayes marginal posterior of `α`.
///
/// Integrating `γ` out gives `ȳ₂ | α ~ N(α + μ_γ, σ²/n₂ + σ_γ²)`, so the
/// posterior is the precision-weighted combination of the three sources.
pub fn db_marginal_posterior(cfg: &DbConfig, ybar1: f64, ybar2: f64) -> Result<FamilyParams> {
    cfg.validate()?;
    let s2 = cfg.sigma * cfg.sigma;
    let n1 = cfg.n1 as f64;
    let n2 = cfg.n2 as f64;
    let tau = cfg.tau_alpha();
    let v = n2 * cfg.sigma_gamma * cfg.sigma_gamma + s2;
    let denom = (n1 + s2 * tau) * v + n2 * s2;
    let num = n1 * v * ybar1 + n2 * s2 * (ybar2 - cfg.mu_gamma) + s2 * v * tau * cfg.mu_alpha;
    FamilyParams::normal(num / denom, (s2 * v / denom).sqrt())
}

/// The cut-distribution of `α`: the conditional averaged over `γ ~ N(μ_γ, σ_γ²)`.
pub fn db_cut_analytic(cfg: &DbConfig, ybar1: f64, ybar2: f64) -> Result<FamilyParams> {
    cfg.validate()?;
    let s2 = cfg.sigma * cfg.sigma;
    let n1 = cfg.n1 as f64;
    let n2 = cfg.n2 as f64;
    let prec = n1 + n2 + s2 * cfg.tau_alpha();
    let mean = (n1 * ybar1 + n2 * (ybar2 - cfg.mu_gamma) + s2 * cfg.tau_alpha() * cfg.mu_alpha) / prec;
    let var = (s2 + n2 * n2 * cfg.sigma_gamma * cfg.sigma_gamma / prec) / prec;
    FamilyParams::normal(mean, var.sqrt())
}

/// Constants of the conditional `α | γ, y ~ N(B + Cγ, A)`.
pub fn db_conditional_constants(cfg: &DbConfig, sum_y: f64) -> (f64, f64, f64) {
    let s2 = cfg.sigma * cfg.sigma;
    let tau = cfg.tau_alpha();
    let a = 1.0 / (cfg.n() as f64 / s2 + tau);
    let b = a * (sum_y / s2 + cfg.mu_alpha * tau);
    let c = -a * cfg.n2 as f64 / s2;
    (a, b, c)
}

pub fn db_conditional(cfg: &DbConfig, sum_y: f64, gamma: f64) -> Result<FamilyParams> {
    cfg.validate()?;
    let (a, b, c) = db_conditional_constants(cfg, sum_y);
    FamilyParams::normal(b + c * gamma, a.sqrt())
}

/// Black-box log conditional of the DB model (up to a constant).
#[derive(Clone, Debug)]
pub struct DbConditional {
    pub cfg: DbConfig,
    pub ybar1: f64,
    pub ybar2: f64,
}

impl ConditionalPosterior for DbConditional {
    fn alpha_dim(&self) -> usize {
        1
    }

    fn log_density(&self, alpha: &[f64], gamma: &[f64]) -> f64 {
        let c = &self.cfg;
        let s2 = c.sigma * c.sigma;
        let a = alpha[0];
        let r1 = self.ybar1 - a;
        let r2 = self.ybar2 - a - gamma[0];
        let lik = -(c.n1 as f64 * r1 * r1 + c.n2 as f64 * r2 * r2) / (2.0 * s2);
        let d = a - c.mu_alpha;
        lik - 0.5 * c.tau_alpha() * d * d
    }

    fn initial_alpha(&self, gamma: &[f64]) -> Vec<f64> {
        let c = &self.cfg;
        let sum = c.n1 as f64 * self.ybar1 + c.n2 as f64 * (self.ybar2 - gamma[0]);
        vec![sum / c.n() as f64]
    }

    fn step_scale(&self) -> f64 {
        self.cfg.sigma / (self.cfg.n() as f64).sqrt()
    }
}

/// Problem spec for DB data summarized by `(ȳ₁, ȳ₂)`; the `γ` prior is
/// `N(μ_γ, σ_γ²)` with design box `μ_γ ± 6σ_γ`.
pub fn db_problem(cfg: &DbConfig, ybar1: f64, ybar2: f64) -> Result<ProblemSpec> {
    cfg.validate()?;
    let (mg, sg) = (cfg.mu_gamma, cfg.sigma_gamma);
    let sampler: PointSampler = Arc::new(move |rng: &mut Rng| vec![mg + sg * rng.sample::<f64, _>(StandardNormal)]);
    let quantile: QuantileFn = Arc::new(move |u| mg + sg * norm_ppf(u));
    let log_density: LogDensityFn = Arc::new(move |g: &[f64]| norm_logpdf(g[0], mg, sg));
    Ok(ProblemSpec {
        name: "diamond-in-a-box".into(),
        gamma: GammaPrior {
            dim: 1,
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY)],
            design_box: vec![(mg - 6.0 * sg, mg + 6.0 * sg)],
            sampler: Some(sampler),
            quantiles: Some(vec![quantile]),
            log_density,
            pool: None,
        },
        conditional: Arc::new(DbConditional {
            cfg: cfg.clone(),
            ybar1,
            ybar2,
        }),
        alpha_bounds: vec![(f64::NEG_INFINITY, f64::INFINITY)],
    })
}

// ---------------------------------------------------------------------------
// Ecological study

pub const ECO_POPULATIONS: usize = 13;
pub const ECO_K: usize = 5;
pub const ECO_CSV: &str = include_str!("../data/eco.csv");
pub const ECO_SHA256: &str = "b308f38b7bf4ef97c164c039d8597a06b4c82ad7b11d895678046c596bcfa8f5";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EcoData {
    pub y: Vec<u64>,
    pub z: Vec<u64>,
    pub n: Vec<u64>,
    pub t: Vec<u64>,
    /// `c[j][k]` is `C_j^{k+1}`.
    pub c: Vec<[f64; ECO_K]>,
}

impl EcoData {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// The embedded data set; its hash is checked on first use.
pub fn eco_data() -> &'static EcoData {
    static DATA: OnceLock<EcoData> = OnceLock::new();
    DATA.get_or_init(|| {
        let digest = hex::encode(Sha256::digest(ECO_CSV.as_bytes()));
        assert_eq!(digest, ECO_SHA256, "embedded ecological data has been modified");
        let data = crate::io::parse_eco_csv(ECO_CSV).expect("embedded ecological data parses");
        assert_eq!(data.len(), ECO_POPULATIONS);
        data
    })
}

const G_FLOOR: f64 = 1e-12;

/// The nonlinear link `g`, with a flag set when the bracket was clamped.
pub fn eco_g_flagged(x: &[f64]) -> (f64, bool) {
    use std::f64::consts::PI;
    let t2 = x[0].exp() * (13.0 * (x[0] - 0.6).powi(2)).sin() * x[1].exp() * (7.0 * x[1]).sin();
    let t3 = x[2] * x[3].sqrt() * (2.0 * PI * x[4]).sin().powi(2) / 38.0;
    let bracket = 1.35 + t2 + t3;
    // NaN (e.g. from a negative x4) is clamped and flagged too.
    let clamped = !(bracket > 0.0);
    let b = if clamped { G_FLOOR } else { bracket };
    (19.0 / 700.0 * b.cbrt(), clamped)
}

pub fn eco_g(x: &[f64]) -> f64 {
    eco_g_flagged(x).0
}

/// `φ_j = g(γ_1^{-C_j^1}, …, γ_5^{-C_j^5})`.
pub fn eco_phi(gamma: &[f64], c: &[f64]) -> Result<f64> {
    let mut x = [0.0; ECO_K];
    for k in 0..ECO_K {
        if gamma[k] == 0.0 && c[k] > 0.0 {
            return Err(Error::Domain(format!("gamma_{} = 0 with positive exponent", k + 1)));
        }
        x[k] = gamma[k].powf(-c[k]);
    }
    Ok(eco_g(&x))
}

fn phis(gamma: &[f64], data: &EcoData) -> Option<Vec<f64>> {
    data.c.iter().map(|c| eco_phi(gamma, c).ok()).collect()
}

fn poisson_log_lik(alpha: &[f64], phi: &[f64], data: &EcoData) -> f64 {
    let mut s = 0.0;
    for j in 0..data.len() {
        if data.t[j] == 0 {
            // Zero exposure: a point mass at y = 0.
            if data.y[j] > 0 {
                return f64::NEG_INFINITY;
            }
            continue;
        }
        let eta = alpha[0] + alpha[1] * phi[j] + (data.t[j] as f64).ln();
        if eta > 700.0 || !eta.is_finite() {
            return f64::NEG_INFINITY;
        }
        s += AuxDistribution::Poisson { rate: eta.exp() }.log_density(data.y[j] as f64);
    }
    s
}

const ALPHA_PRIOR_SD: f64 = 100.0;

/// Unnormalized `log π(α | γ, y)`: Poisson likelihood times `N(0, 100²)` priors.
pub fn eco_log_conditional_alpha(alpha: &[f64], gamma: &[f64], data: &EcoData) -> f64 {
    let Some(phi) = phis(gamma, data) else {
        return f64::NEG_INFINITY;
    };
    poisson_log_lik(alpha, &phi, data) + alpha_prior(alpha)
}

fn alpha_prior(alpha: &[f64]) -> f64 {
    norm_logpdf(alpha[0], 0.0, ALPHA_PRIOR_SD) + norm_logpdf(alpha[1], 0.0, ALPHA_PRIOR_SD)
}

/// Number of populations whose `φ_j(γ)` falls outside `(0, 1)`.
pub fn eco_phi_violations(gamma: &[f64], data: &EcoData) -> usize {
    data.c
        .iter()
        .filter(|c| !matches!(eco_phi(gamma, &c[..]), Ok(p) if p > 0.0 && p < 1.0))
        .count()
}

/// Unnormalized `log π(γ | z)`: Binomial likelihood times `Beta(2, 2)` priors.
pub fn eco_log_posterior_gamma(gamma: &[f64], data: &EcoData) -> f64 {
    let mut s = 0.0;
    for g in &gamma[..ECO_K] {
        s += AuxDistribution::Beta { a: 2.0, b: 2.0 }.log_density(*g);
    }
    if !s.is_finite() {
        return f64::NEG_INFINITY;
    }
    for j in 0..data.len() {
        let Ok(phi) = eco_phi(gamma, &data.c[j]) else {
            return f64::NEG_INFINITY;
        };
        if !(phi > 0.0 && phi < 1.0) {
            return f64::NEG_INFINITY;
        }
        s += AuxDistribution::Binomial { n: data.n[j], p: phi }.log_density(data.z[j] as f64);
    }
    s
}

/// Mode and negative inverse Hessian of `log π(α | γ, y)` by Newton's method.
/// The target is concave in `α` for fixed `φ`.
pub fn eco_alpha_mode(phi: &[f64], data: &EcoData) -> Option<(Vector2<f64>, Matrix2<f64>)> {
    let tot_y: f64 = data.y.iter().map(|v| *v as f64).sum();
    let tot_t: f64 = data.t.iter().map(|v| *v as f64).sum();
    let mut a = Vector2::new((tot_y / tot_t).ln(), 0.0);
    let prior_prec = 1.0 / (ALPHA_PRIOR_SD * ALPHA_PRIOR_SD);
    for _ in 0..100 {
        let mut g = -a * prior_prec;
        let mut h = Matrix2::identity() * prior_prec;
        for j in 0..data.len() {
            let x = Vector2::new(1.0, phi[j]);
            let mu = (a.dot(&x) + (data.t[j] as f64).ln()).exp();
            g += x * (data.y[j] as f64 - mu);
            h += x * x.transpose() * mu;
        }
        let step = h.try_inverse()? * g;
        // Halve until the step stays in a region where the rates do not overflow.
        let mut t = 1.0;
        while t > 1e-6 && (a + step * t).iter().any(|v| v.abs() > 1e6) {
            t *= 0.5;
        }
        a += step * t;
        if step.norm() * t < 1e-12 * (1.0 + a.norm()) {
            break;
        }
    }
    let mut h = Matrix2::identity() * prior_prec;
    for j in 0..data.len() {
        let x = Vector2::new(1.0, phi[j]);
        let mu = (a.dot(&x) + (data.t[j] as f64).ln()).exp();
        h += x * x.transpose() * mu;
    }
    let cov = h.try_inverse()?;
    a.iter().all(|v| v.is_finite()).then_some((a, cov))
}

#[derive(Clone, Debug)]
pub struct EcoConditional {
    pub data: EcoData,
}

impl ConditionalPosterior for EcoConditional {
    fn alpha_dim(&self) -> usize {
        2
    }

    fn log_density(&self, alpha: &[f64], gamma: &[f64]) -> f64 {
        eco_log_conditional_alpha(alpha, gamma, &self.data)
    }

    fn bind<'a>(&'a self, gamma: &[f64]) -> Box<dyn Fn(&[f64]) -> f64 + Send + Sync + 'a> {
        match phis(gamma, &self.data) {
            Some(phi) => Box::new(move |a| poisson_log_lik(a, &phi, &self.data) + alpha_prior(a)),
            None => Box::new(|_| f64::NEG_INFINITY),
        }
    }

    fn initial_alpha(&self, gamma: &[f64]) -> Vec<f64> {
        phis(gamma, &self.data)
            .and_then(|phi| eco_alpha_mode(&phi, &self.data))
            .map(|(a, _)| vec![a[0], a[1]])
            .unwrap_or_else(|| vec![-7.0, 0.0])
    }

    fn initial_covariance(&self, gamma: &[f64]) -> Option<Vec<f64>> {
        let phi = phis(gamma, &self.data)?;
        let (_, cov) = eco_alpha_mode(&phi, &self.data)?;
        // Scaled for a reasonable pre-adaptation acceptance rate in 2-D.
        let s = 2.38 * 2.38 / 2.0;
        Some(vec![s * cov[(0, 0)], s * cov[(0, 1)], s * cov[(1, 0)], s * cov[(1, 1)]])
    }

    fn min_burn_in(&self) -> usize {
        300
    }
}

const ECO_INIT_DRAWS: usize = 100_000;

/// Draws from `π(γ | z)` by adaptive Metropolis, keeping every `thin`-th state.
pub fn eco_gamma_pool(n_keep: usize, burn_in: usize, thin: usize, stream: RngStream) -> Result<PointSet> {
    let data = eco_data();
    let thin = thin.max(1);
    let target = |g: &[f64]| eco_log_posterior_gamma(g, data);
    // The posterior has poor local modes; start from the best of many uniform draws.
    let mut rng = stream.child(0).rng();
    let mut init = vec![0.5; ECO_K];
    let mut best = target(&init);
    for _ in 0..ECO_INIT_DRAWS {
        let g: Vec<f64> = (0..ECO_K).map(|_| rng.random::<f64>()).collect();
        let lp = target(&g);
        if lp > best {
            best = lp;
            init = g;
        }
    }
    let cfg = McmcConfig::with_retained(n_keep * thin, burn_in.max(1), ECO_K, stream.child(1)).step_scale(0.02);
    let chain = adaptive_metropolis(&target, &init, &cfg)?;
    let idx: Vec<usize> = (0..n_keep).map(|i| (i + 1) * thin - 1).collect();
    Ok(chain.states.select(&idx))
}

/// The ecological problem with `γ | z` represented by `pool`.
pub fn eco_problem(pool: Arc<PointSet>) -> Result<ProblemSpec> {
    if pool.dim() != ECO_K {
        return Err(Error::Shape(format!("gamma pool must have {ECO_K} columns")));
    }
    let data = eco_data();
    let log_density: LogDensityFn = Arc::new(move |g: &[f64]| eco_log_posterior_gamma(g, data));
    Ok(ProblemSpec {
        name: "ecological".into(),
        gamma: GammaPrior {
            dim: ECO_K,
            bounds: vec![(0.0, 1.0); ECO_K],
            design_box: vec![(0.0, 1.0); ECO_K],
            sampler: None,
            quantiles: None,
            log_density,
            pool: Some(pool),
        },
        conditional: Arc::new(EcoConditional { data: data.clone() }),
        alpha_bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); 2],
    })
}
