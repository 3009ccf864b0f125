//! Sequential ECP: candidate `γ` locations are scored by the emulator-induced
//! variance of a conditional-posterior quantile, and the best one is added to
//! the training set each round.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cutcore::{ecp_finish, fit_bank, fit_location, fit_locations, make_design, training_design, DesignMethod, EcpConfig, EcpOutput, EmulatorBank, ProblemSpec, LocationFit};
use crate::doe::energy;
use crate::error::{Error, Result};
use crate::families::{quantile, FamilyParams, FamilyTag};
use crate::gp::nearest_psd;
use crate::points::PointSet;
use crate::rng::{Rng, RngStream};
use crate::stats::{mean_sd, norm_ppf};

fn check_u(u: f64) -> Result<()> {
    if u > 0.0 && u < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("quantile level {u} outside (0, 1)")))
    }
}

/// `Var(μ̂) + Φ⁻¹(u)²·Var(σ̂)`.
pub fn acquisition_normal(mu_hat: f64, mu_var: f64, sigma_hat: f64, sigma_var: f64, u: f64) -> f64 {
    let _ = mu_hat;
    let _ = sigma_hat;
    let z = norm_ppf(u);
    mu_var + z * z * sigma_var
}

/// Second-order Delta form for the Weibull quantile `λ·u⋆^κ`, where `κ` is the
/// reciprocal of the usual shape parameter and `u⋆ = −log(1−u)`.
pub fn acquisition_weibull_reciprocal(lambda_hat: f64, lambda_var: f64, kappa_hat: f64, kappa_var: f64, u: f64) -> f64 {
    let us = -(1.0 - u).ln();
    let l2 = us.ln().powi(2);
    us.powf(2.0 * kappa_hat)
        * (lambda_var * (1.0 + 2.0 * kappa_var * l2) + lambda_hat * lambda_hat * kappa_var * l2 * (1.0 - kappa_var / 4.0 * l2))
}

/// Acquisition for the Weibull family in the usual `(λ scale, κ shape)`
/// parameterization. The shape moments are mapped to its reciprocal by the
/// first-order Delta method before applying the reciprocal-shape form.
pub fn acquisition_weibull(lambda_hat: f64, lambda_var: f64, kappa_hat: f64, kappa_var: f64, u: f64) -> Result<f64> {
    if !(lambda_hat > 0.0 && kappa_hat > 0.0) {
        return Err(Error::Domain("Weibull acquisition needs positive λ̂ and κ̂".into()));
    }
    if lambda_var < 0.0 || kappa_var < 0.0 {
        return Err(Error::Domain("negative predictive variance".into()));
    }
    check_u(u)?;
    let kp = 1.0 / kappa_hat;
    let kp_var = kappa_var / kappa_hat.powi(4);
    Ok(acquisition_weibull_reciprocal(lambda_hat, lambda_var, kp, kp_var, u))
}

fn combined_variance(mean_len: usize, cov: &DMatrix<f64>, t: &[f64]) -> f64 {
    let mut v = 0.0;
    for i in 0..mean_len {
        for j in 0..mean_len {
            v += t[i] * t[j] * cov[(i, j)];
        }
    }
    v
}

/// `u`-quantile of `Σ tᵢαᵢ` under an MVN (or Normal) member. Non-PSD
/// covariances are repaired first.
pub fn linear_combination_quantile(params: &FamilyParams, t: &[f64], u: f64) -> Result<f64> {
    check_u(u)?;
    let p = params.tag().dim();
    if params.tag() == FamilyTag::Weibull {
        return Err(Error::UnsupportedFamily("linear combinations need a Normal or MVN member".into()));
    }
    if t.len() != p || t.iter().all(|v| *v == 0.0) {
        return Err(Error::Argument("t must have one non-zero-vector entry per component".into()));
    }
    let mean = params.mean();
    let mut cov = params.covariance();
    if SymmetricEigen::new(cov.clone()).eigenvalues.iter().any(|e| *e < 0.0) {
        cov = nearest_psd(&cov)?;
    }
    let v = combined_variance(p, &cov, t);
    if v < -1e-12 * cov.amax() {
        return Err(Error::Numerical(format!("combined variance {v} is negative after repair")));
    }
    let centre: f64 = t.iter().zip(&mean).map(|(a, b)| a * b).sum();
    Ok(centre + norm_ppf(u) * v.max(0.0).sqrt())
}

/// Second-order Delta approximation to `Var(ζ̂_u)` for the linear combination
/// `Σ tᵢαᵢ`. `hat` and `tilde` hold predictive means and variances in the MVN
/// parameter layout `[μ.., σ².., σ_ij..]`. The correction constant for
/// `E(δ₂^{1/2})` is `(1/(16E(δ₂)))^{3/2}`.
pub fn acquisition_mvn(p: usize, hat: &[f64], tilde: &[f64], t: &[f64], u: f64) -> Result<f64> {
    let r = 2 * p + p * (p.saturating_sub(1)) / 2;
    if p == 0 || hat.len() != r || tilde.len() != r || t.len() != p {
        return Err(Error::Shape(format!("MVN acquisition expects {r} parameters and {p} coefficients")));
    }
    check_u(u)?;
    let z = norm_ppf(u);
    let e1: f64 = (0..p).map(|i| t[i] * hat[i]).sum();
    let e1_sq = e1 * e1 + (0..p).map(|i| t[i] * t[i] * tilde[i]).sum::<f64>();
    let mut e2: f64 = (0..p).map(|i| t[i] * t[i] * hat[p + i]).sum();
    let mut corr: f64 = (0..p).map(|i| t[i].powi(4) * tilde[p + i]).sum();
    let mut k = 2 * p;
    for i in 0..p {
        for j in i + 1..p {
            e2 += 2.0 * t[i] * t[j] * hat[k];
            corr += 2.0 * t[i] * t[j] * tilde[k];
            k += 1;
        }
    }
    if !(e2 > 0.0) {
        return Err(Error::Domain(format!("E(δ₂) = {e2} is not positive")));
    }
    let e2_half = e2.sqrt() - 0.5 * (1.0 / (16.0 * e2)).powf(1.5) * corr;
    let first = e1_sq + z * z * e2 + 2.0 * z * e1 * e2_half;
    let second = e1 + z * e2_half;
    Ok(first - second * second)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McScore {
    pub value: f64,
    pub rejections: usize,
    /// More than half of all proposals were invalid.
    pub ill_posed: bool,
}

fn member_quantile(family: FamilyTag, psi: &[f64], t: &[f64], u: f64) -> Option<f64> {
    let params = FamilyParams::new(family, psi.to_vec()).ok()?;
    match family {
        FamilyTag::Normal | FamilyTag::Weibull => quantile(&params, u).ok(),
        FamilyTag::MultivariateNormal(_) => linear_combination_quantile(&params, t, u).ok(),
    }
}

/// Monte Carlo acquisition: sample variance of the family quantile over
/// draws of `ψ` from independent normal predictives. Invalid draws are
/// resampled and counted.
pub fn acquisition_mc(family: FamilyTag, hat: &[f64], tilde: &[f64], t: &[f64], u: f64, n_mc: usize, rng: &mut Rng) -> Result<McScore> {
    if n_mc < 1000 {
        return Err(Error::Argument("acquisition_mc needs n_mc ≥ 1000".into()));
    }
    if hat.len() != family.n_params() || tilde.len() != hat.len() {
        return Err(Error::Shape("ψ moments do not match the family".into()));
    }
    if tilde.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Domain("negative predictive variance".into()));
    }
    check_u(u)?;
    if tilde.iter().all(|v| *v == 0.0) {
        // Every draw is the same member; its sample variance is exactly zero.
        return match member_quantile(family, hat, t, u) {
            Some(q) if q.is_finite() => Ok(McScore {
                value: 0.0,
                rejections: 0,
                ill_posed: false,
            }),
            _ => Err(Error::Domain("predictive mean is not a valid family member".into())),
        };
    }
    let sds: Vec<f64> = tilde.iter().map(|v| v.sqrt()).collect();
    let mut values = Vec::with_capacity(n_mc);
    let mut rejections = 0usize;
    let mut psi = vec![0.0; hat.len()];
    let max_attempts = 100 * n_mc;
    while values.len() < n_mc {
        if values.len() + rejections >= max_attempts {
            return Err(Error::Numerical(format!("{rejections} of {max_attempts} ψ draws were invalid")));
        }
        for j in 0..psi.len() {
            psi[j] = hat[j] + sds[j] * rng.sample::<f64, _>(StandardNormal);
        }
        match member_quantile(family, &psi, t, u) {
            Some(q) if q.is_finite() => values.push(q),
            _ => rejections += 1,
        }
    }
    let (_, sd) = mean_sd(&values);
    Ok(McScore {
        value: sd * sd,
        rejections,
        ill_posed: rejections > n_mc,
    })
}

/// Predictive means and variances of each `ψ_j` on its natural scale.
/// Log-emulated parameters use lognormal moments.
pub fn psi_moments(bank: &EmulatorBank, gamma: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (m, s, _) = bank.predict_latent(gamma);
    let mut hat = Vec::with_capacity(m.len());
    let mut tilde = Vec::with_capacity(m.len());
    for ((mj, sj), lg) in m.iter().zip(&s).zip(&bank.log_scale) {
        if *lg {
            let s2 = sj * sj;
            hat.push((mj + 0.5 * s2).exp());
            tilde.push(s2.exp_m1() * (2.0 * mj + s2).exp());
        } else {
            hat.push(*mj);
            tilde.push(sj * sj);
        }
    }
    (hat, tilde)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeqConfig {
    pub ecp: EcpConfig,
    /// Build-phase budget `L₀`; `ecp.l` is the final budget.
    pub l0: usize,
    pub n_candidates: usize,
    pub u: f64,
    /// Linear-combination coefficients (MVN only); all ones when absent.
    pub t: Option<Vec<f64>>,
    /// Draws for the Monte Carlo fallback.
    pub n_mc: usize,
}

impl SeqConfig {
    pub fn new(ecp: EcpConfig, l0: usize) -> Self {
        SeqConfig {
            ecp,
            l0,
            n_candidates: 500,
            u: 0.9,
            t: None,
            n_mc: 2000,
        }
    }

    fn coefficients(&self) -> Vec<f64> {
        self.t.clone().unwrap_or_else(|| vec![1.0; self.ecp.family.dim()])
    }
}

/// One sequential round, as written to the trace CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    pub gamma: Vec<f64>,
    pub score: f64,
    pub rejections: usize,
    pub fallback: bool,
}

pub struct SeqOutput {
    pub output: EcpOutput,
    pub trace: Vec<RoundTrace>,
}

/// Score for one candidate, with the MC rejection count (0 for Delta forms).
fn score(bank: &EmulatorBank, gamma: &[f64], cfg: &SeqConfig, t: &[f64], stream: RngStream) -> Result<(f64, usize)> {
    let (hat, tilde) = psi_moments(bank, gamma);
    let delta = match bank.family {
        FamilyTag::Normal => Ok(acquisition_normal(hat[0], tilde[0], hat[1], tilde[1], cfg.u)),
        FamilyTag::Weibull => acquisition_weibull(hat[0], tilde[0], hat[1], tilde[1], cfg.u),
        FamilyTag::MultivariateNormal(p) => acquisition_mvn(p, &hat, &tilde, t, cfg.u),
    };
    match delta {
        Ok(v) if v.is_finite() => Ok((v.max(0.0), 0)),
        _ => {
            let mc = acquisition_mc(bank.family, &hat, &tilde, t, cfg.u, cfg.n_mc, &mut stream.rng())?;
            Ok((mc.value, mc.rejections))
        }
    }
}

/// The candidate whose addition gives the training set the smallest energy
/// distance to the candidate pool.
fn support_fallback(design: &PointSet, candidates: &PointSet) -> usize {
    let energies: Vec<f64> = (0..candidates.len())
        .into_par_iter()
        .map(|c| {
            let mut d = design.clone();
            d.push(candidates.row(c)).expect("same dimension");
            energy(&d, candidates)
        })
        .collect();
    argmin_first(&energies)
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn argmin_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// Sequential ECP. Streams follow [`crate::cutcore::ecp_sample`], with
/// candidates on `child(4).child(round)` and MC scoring on `child(5)`.
pub fn sequential_ecp(problem: &ProblemSpec, cfg: &SeqConfig, stream: RngStream) -> Result<SeqOutput> {
    let ecp = &cfg.ecp;
    ecp.validate(problem)?;
    if cfg.l0 < 3 || cfg.l0 > ecp.l {
        return Err(Error::Config(format!("build budget L0 = {} must lie in [3, L = {}]", cfg.l0, ecp.l)));
    }
    if cfg.n_candidates < 10 {
        return Err(Error::Config("at least 10 candidates are needed".into()));
    }
    check_u(cfg.u).map_err(|e| Error::Config(e.to_string()))?;
    let t = cfg.coefficients();
    if t.len() != ecp.family.dim() || t.iter().all(|v| *v == 0.0) {
        return Err(Error::Config("t must be a non-zero vector matching the alpha dimension".into()));
    }
    let design = training_design(problem, ecp, cfg.l0, stream.child(0))?;
    let mut fits: Vec<LocationFit> = fit_locations(problem, ecp, &design.points, stream.child(1), 0)?;
    let mut trace = Vec::new();
    for round in 0..ecp.l - cfg.l0 {
        let bank = fit_bank(&fits, ecp, stream.child(2))?;
        let cand = make_design(&problem.gamma, &DesignMethod::Iid, cfg.n_candidates, stream.child(4).child(round as u64))?.points;
        let mc = stream.child(5).child(round as u64);
        let scored: Vec<(f64, usize)> = (0..cand.len())
            .into_par_iter()
            .map(|c| score(&bank, cand.row(c), cfg, &t, mc.child(c as u64)))
            .collect::<Result<_>>()?;
        let scores: Vec<f64> = scored.iter().map(|s| s.0).collect();
        let rejections = scored.iter().map(|s| s.1).sum();
        let best = argmax_first(&scores);
        let fallback = !(scores[best] > 0.0);
        let pick = if fallback { support_fallback(&bank.design, &cand) } else { best };
        let gamma = cand.row(pick).to_vec();
        let idx = cfg.l0 + round;
        let fit = fit_location(problem, ecp, &gamma, stream.child(1).child(idx as u64)).map_err(|e| Error::at_location(idx, e))?;
        fits.push(fit);
        trace.push(RoundTrace {
            round,
            gamma,
            score: scores[pick],
            rejections,
            fallback,
        });
    }
    let output = ecp_finish(problem, ecp, fits, stream)?;
    Ok(SeqOutput { output, trace })
}
