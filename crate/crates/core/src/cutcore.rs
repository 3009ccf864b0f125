//! Cut-distribution engines: direct sampling (DS), DS with a single
//! moment-matched normal, and conditional-posterior emulation (ECP).

use std::sync::Arc;

use nalgebra::SymmetricEigen;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::doe::{
    iid_design, inflate_variance, lhs_design, mined_design, support_points, Bounds, DesignMatrix, InflateMode,
    LogDensityFn, MinedOptions, PointSampler, Provenance, QuantileFn, SupportOptions, SupportTarget,
};
use crate::error::{Error, Result};
use crate::families::{estimate_params, sample_family, FamilyParams, FamilyTag};
use crate::gp::{gp_fit, GpConfig, GpModel, GpSummary, NuggetMode};
use crate::points::PointSet;
use crate::rng::RngStream;
use crate::sampler::{adaptive_metropolis, laplace_fit, McmcConfig};

/// The module posterior `π(γ | z)` in whatever forms are available.
#[derive(Clone)]
pub struct GammaPrior {
    pub dim: usize,
    /// Support of `γ` (may be infinite).
    pub bounds: Bounds,
    /// Finite box covering the bulk of the distribution, used where a
    /// bounded domain is required (minimum-energy designs, power inflation).
    pub design_box: Bounds,
    pub sampler: Option<PointSampler>,
    /// Independent margins only.
    pub quantiles: Option<Vec<QuantileFn>>,
    pub log_density: LogDensityFn,
    /// Draws from `π(γ | z)`, e.g. a long MCMC run.
    pub pool: Option<Arc<PointSet>>,
}

/// `π(α | γ, y)` as a black box.
pub trait ConditionalPosterior: Send + Sync {
    fn alpha_dim(&self) -> usize;

    fn log_density(&self, alpha: &[f64], gamma: &[f64]) -> f64;

    /// Log-density with `γ` fixed; override to precompute `γ`-only terms.
    fn bind<'a>(&'a self, gamma: &[f64]) -> Box<dyn Fn(&[f64]) -> f64 + Send + Sync + 'a> {
        let g = gamma.to_vec();
        Box::new(move |a| self.log_density(a, &g))
    }

    /// Chain starting point.
    fn initial_alpha(&self, gamma: &[f64]) -> Vec<f64>;

    /// Pre-adaptation proposal covariance (row-major). `None` means isotropic.
    fn initial_covariance(&self, _gamma: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Standard deviation of the isotropic pre-adaptation proposal.
    fn step_scale(&self) -> f64 {
        0.1
    }

    fn min_burn_in(&self) -> usize {
        200
    }
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub gamma: GammaPrior,
    pub conditional: Arc<dyn ConditionalPosterior>,
    pub alpha_bounds: Bounds,
}

impl ProblemSpec {
    pub fn alpha_dim(&self) -> usize {
        self.conditional.alpha_dim()
    }

    pub fn gamma_dim(&self) -> usize {
        self.gamma.dim
    }

    /// One conditional chain at `γ` keeping `m` states.
    pub fn conditional_chain(&self, gamma: &[f64], m: usize, stream: RngStream) -> Result<PointSet> {
        let p = self.alpha_dim();
        let burn = m.div_ceil(3).max(self.conditional.min_burn_in());
        let cfg = McmcConfig::with_retained(m, burn, p, stream)
            .step_scale(self.conditional.step_scale())
            .initial_covariance(self.conditional.initial_covariance(gamma));
        let target = self.conditional.bind(gamma);
        let init = self.conditional.initial_alpha(gamma);
        Ok(adaptive_metropolis(&*target, &init, &cfg)?.states)
    }
}

/// How the `γ` locations are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignMethod {
    Iid,
    Lhs,
    SupportPoints,
    MinEd,
    #[serde(skip)]
    Fixed(Arc<PointSet>),
}

impl DesignMethod {
    pub fn name(&self) -> &'static str {
        match self {
            DesignMethod::Iid => "iid",
            DesignMethod::Lhs => "lhs",
            DesignMethod::SupportPoints => "sp",
            DesignMethod::MinEd => "mined",
            DesignMethod::Fixed(_) => "fixed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(DesignMethod::Iid),
            "lhs" => Ok(DesignMethod::Lhs),
            "sp" | "support" => Ok(DesignMethod::SupportPoints),
            "mined" => Ok(DesignMethod::MinEd),
            other => Err(Error::Config(format!("unknown sampler '{other}'"))),
        }
    }

    /// Whether `prior` carries what this method needs.
    pub fn check(&self, prior: &GammaPrior) -> Result<()> {
        let ok = match self {
            DesignMethod::Iid => prior.sampler.is_some() || prior.pool.is_some(),
            DesignMethod::Lhs => prior.quantiles.is_some(),
            DesignMethod::SupportPoints => prior.pool.is_some() || prior.quantiles.is_some(),
            DesignMethod::MinEd => {
                prior.quantiles.is_some() || prior.sampler.is_some() || prior.pool.is_some()
            }
            DesignMethod::Fixed(p) => p.dim() == prior.dim,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "sampler '{}' is not available for this prior",
                self.name()
            )))
        }
    }
}

/// Size of the LHS pool that stands in for an analytic prior in support-point selection.
pub const ANALYTIC_POOL: usize = 10_000;

/// Draws `L` locations from `π(γ | z)` with the given method.
pub fn make_design(prior: &GammaPrior, method: &DesignMethod, l: usize, stream: RngStream) -> Result<DesignMatrix> {
    method.check(prior)?;
    match method {
        DesignMethod::Iid => match (&prior.sampler, &prior.pool) {
            (Some(s), _) => iid_design(prior.dim, s, l, stream),
            (None, Some(pool)) => {
                if pool.len() < l {
                    return Err(Error::Argument(format!("pool of {} cannot supply {l} draws", pool.len())));
                }
                let mut rng = stream.rng();
                let idx = rand::seq::index::sample(&mut rng, pool.len(), l).into_vec();
                DesignMatrix::new(pool.select(&idx), Provenance::Iid, format!("pool(N={})", pool.len()))
            }
            _ => unreachable!("checked above"),
        },
        DesignMethod::Lhs => lhs_design(prior.quantiles.as_ref().expect("checked"), l, stream),
        DesignMethod::SupportPoints => {
            let target = match (&prior.pool, &prior.quantiles) {
                (Some(pool), _) => SupportTarget::Pool(pool),
                (None, Some(q)) => SupportTarget::Quantiles(q, ANALYTIC_POOL),
                _ => unreachable!("checked above"),
            };
            support_points(target, l, stream, &SupportOptions::default())
        }
        DesignMethod::MinEd => {
            let init_method = if prior.quantiles.is_some() {
                DesignMethod::Lhs
            } else {
                DesignMethod::Iid
            };
            let init = make_design(prior, &init_method, l, stream.child(0))?;
            mined_design(
                &prior.log_density,
                l,
                &init,
                &prior.design_box,
                stream.child(1),
                &MinedOptions::default(),
            )
        }
        DesignMethod::Fixed(points) => {
            if points.len() < l {
                return Err(Error::Argument(format!(
                    "fixed design has {} points, {l} requested",
                    points.len()
                )));
            }
            let idx: Vec<usize> = (0..l).collect();
            DesignMatrix::new(points.select(&idx), Provenance::Fixed, "given")
        }
    }
}

/// Equal-weight finite mixture of family members.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub family: FamilyTag,
    pub components: Vec<FamilyParams>,
}

impl Mixture {
    pub fn new(components: Vec<FamilyParams>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::Argument("a mixture needs at least one component".into()));
        };
        let family = first.tag();
        if components.iter().any(|c| c.tag() != family) {
            return Err(Error::Argument("mixture components must share a family".into()));
        }
        Ok(Mixture { family, components })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.components.iter().map(|c| c.density(x)).sum::<f64>() / self.components.len() as f64
    }

    /// CDF of margin `j`.
    pub fn marginal_cdf(&self, j: usize, x: f64) -> Result<f64> {
        let mut s = 0.0;
        for c in &self.components {
            s += c.marginal(j)?.cdf(x)?;
        }
        Ok(s / self.components.len() as f64)
    }

    /// `n` draws; draw `i` comes from component `i mod M`.
    pub fn sample(&self, n: usize, stream: RngStream) -> Result<PointSet> {
        let m = self.components.len();
        let p = self.family.dim();
        let mut out = PointSet::from_flat(p, vec![0.0; n * p])?;
        let mut rng = stream.rng();
        for (c, comp) in self.components.iter().enumerate().take(n) {
            let count = n / m + usize::from(c < n % m);
            let draws = sample_family(comp, count, &mut rng)?;
            for (k, r) in draws.rows().enumerate() {
                out.row_mut(c + k * m).copy_from_slice(r);
            }
        }
        Ok(out)
    }
}

pub fn mixture_density(mixture: &Mixture, x: &[f64]) -> f64 {
    mixture.density(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutApproximation {
    RawSamples(PointSet),
    Mixture(Mixture),
}

impl CutApproximation {
    pub fn dim(&self) -> usize {
        match self {
            CutApproximation::RawSamples(s) => s.dim(),
            CutApproximation::Mixture(m) => m.family.dim(),
        }
    }

    /// `n` draws. Raw samples are resampled uniformly with replacement.
    pub fn sample(&self, n: usize, stream: RngStream) -> Result<PointSet> {
        match self {
            CutApproximation::Mixture(m) => m.sample(n, stream),
            CutApproximation::RawSamples(s) => {
                if s.is_empty() {
                    return Err(Error::Argument("no samples to resample".into()));
                }
                let mut rng = stream.rng();
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..s.len())).collect();
                Ok(s.select(&idx))
            }
        }
    }

    /// Draws representing the approximation for scoring: the raw samples
    /// themselves, or `n` mixture draws.
    pub fn scoring_draws(&self, n: usize, stream: RngStream) -> Result<PointSet> {
        match self {
            CutApproximation::RawSamples(s) => Ok(s.clone()),
            CutApproximation::Mixture(m) => m.sample(n, stream),
        }
    }
}

/// Direct sampling: one conditional chain of `m` kept states per design location.
pub fn direct_sample(
    problem: &ProblemSpec,
    l: usize,
    m: usize,
    design: &DesignMethod,
    stream: RngStream,
) -> Result<CutApproximation> {
    if l == 0 || m == 0 {
        return Err(Error::Argument("DS needs L ≥ 1 and m ≥ 1".into()));
    }
    let gammas = make_design(&problem.gamma, design, l, stream.child(0))?;
    direct_sample_at(problem, &gammas.points, m, stream)
}

/// DS at given locations (plug-in when `gammas` has a single row).
pub fn direct_sample_at(problem: &ProblemSpec, gammas: &PointSet, m: usize, stream: RngStream) -> Result<CutApproximation> {
    let chains = stream.child(1);
    let parts: Vec<PointSet> = (0..gammas.len())
        .into_par_iter()
        .map(|i| {
            problem
                .conditional_chain(gammas.row(i), m, chains.child(i as u64))
                .map_err(|e| Error::at_location(i, e))
        })
        .collect::<Result<_>>()?;
    let mut out = PointSet::with_capacity(problem.alpha_dim(), gammas.len() * m);
    for part in &parts {
        out.extend(part)?;
    }
    Ok(CutApproximation::RawSamples(out))
}

/// A single normal (or MVN) fitted by moments to pooled samples.
pub fn little_aggregate(samples: &PointSet) -> Result<CutApproximation> {
    let p = samples.dim();
    if samples.len() < p + 2 {
        return Err(Error::Argument(format!(
            "need at least {} samples, got {}",
            p + 2,
            samples.len()
        )));
    }
    let tag = if p == 1 {
        FamilyTag::Normal
    } else {
        FamilyTag::MultivariateNormal(p)
    };
    let params = estimate_params(samples, tag)?;
    if p > 1 {
        let eig = SymmetricEigen::new(params.covariance());
        let top = eig.eigenvalues.max();
        if eig.eigenvalues.min() <= 1e-12 * top {
            return Err(Error::DegenerateSample("pooled samples have a singular covariance".into()));
        }
    }
    Ok(CutApproximation::Mixture(Mixture::new(vec![params])?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase1 {
    Mcmc,
    Laplace,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EcpConfig {
    /// Budget: number of conditional-posterior fits.
    pub l: usize,
    /// Kept states per conditional chain.
    pub m: usize,
    /// Mixture components (prediction locations).
    pub big_m: usize,
    pub family: FamilyTag,
    pub design: DesignMethod,
    pub predict_design: DesignMethod,
    pub inflate: Option<(f64, InflateMode)>,
    pub bootstrap_b: Option<usize>,
    pub phase1: Phase1,
    pub gp: GpConfig,
}

/// `2^q + 4q + 1`.
pub fn default_budget(q: usize) -> usize {
    (1usize << q) + 4 * q + 1
}

impl EcpConfig {
    pub fn new(q: usize, family: FamilyTag) -> Self {
        EcpConfig {
            l: default_budget(q),
            m: 500,
            big_m: 10_000,
            family,
            design: DesignMethod::SupportPoints,
            predict_design: DesignMethod::SupportPoints,
            inflate: None,
            bootstrap_b: None,
            phase1: Phase1::Mcmc,
            gp: GpConfig {
                nugget_mode: NuggetMode::Estimated,
                ..GpConfig::default()
            },
        }
    }

    pub fn validate(&self, problem: &ProblemSpec) -> Result<()> {
        if self.l < 3 {
            return Err(Error::Config(format!("budget L = {} is below 3", self.l)));
        }
        if self.phase1 == Phase1::Mcmc && self.m < 3 {
            return Err(Error::Config(format!("m = {} is below 3", self.m)));
        }
        if self.big_m == 0 {
            return Err(Error::Config("M must be at least 1".into()));
        }
        if self.family.dim() != problem.alpha_dim() {
            return Err(Error::Config(format!(
                "family {:?} does not match alpha dimension {}",
                self.family,
                problem.alpha_dim()
            )));
        }
        if self.phase1 == Phase1::Laplace && self.family == FamilyTag::Weibull {
            return Err(Error::UnsupportedFamily("Laplace phase 1 yields Normal/MVN only".into()));
        }
        if let Some(b) = self.bootstrap_b {
            if b == 0 {
                return Err(Error::Config("bootstrap B must be at least 1".into()));
            }
            if b >= 2 && self.m < 10 {
                return Err(Error::Config("bootstrap needs m ≥ 10".into()));
            }
        }
        self.design.check(&problem.gamma)?;
        self.predict_design.check(&problem.gamma)
    }
}

/// Phase-1 output at one location.
#[derive(Clone, Debug)]
pub struct LocationFit {
    pub gamma: Vec<f64>,
    pub params: FamilyParams,
    /// Conditional draws (absent for Laplace fits).
    pub samples: Option<PointSet>,
}

pub fn fit_location(problem: &ProblemSpec, cfg: &EcpConfig, gamma: &[f64], stream: RngStream) -> Result<LocationFit> {
    match cfg.phase1 {
        Phase1::Mcmc => {
            let samples = problem.conditional_chain(gamma, cfg.m, stream)?;
            let params = estimate_params(&samples, cfg.family)?;
            Ok(LocationFit {
                gamma: gamma.to_vec(),
                params,
                samples: Some(samples),
            })
        }
        Phase1::Laplace => {
            let target = problem.conditional.bind(gamma);
            let fit = laplace_fit(&*target, &problem.conditional.initial_alpha(gamma))?;
            let params = if cfg.family == FamilyTag::Normal || fit.params.tag() == cfg.family {
                fit.params
            } else {
                FamilyParams::mvn(&fit.mode, &fit.params.covariance())?
            };
            Ok(LocationFit {
                gamma: gamma.to_vec(),
                params,
                samples: None,
            })
        }
    }
}

/// Training rows for the emulators.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub gammas: PointSet,
    pub params: Vec<FamilyParams>,
    pub bootstrapped: bool,
}

/// Bootstrap re-estimates: `B` resamples with replacement per location.
/// `B = 1` returns the plain estimates.
pub fn ecp_bootstrap_augment(fits: &[LocationFit], family: FamilyTag, b: usize, stream: RngStream) -> Result<TrainingSet> {
    let q = fits.first().map_or(0, |f| f.gamma.len());
    if b <= 1 {
        let mut gammas = PointSet::with_capacity(q, fits.len());
        for f in fits {
            gammas.push(&f.gamma)?;
        }
        return Ok(TrainingSet {
            gammas,
            params: fits.iter().map(|f| f.params.clone()).collect(),
            bootstrapped: false,
        });
    }
    let per: Vec<Vec<FamilyParams>> = fits
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let Some(s) = &f.samples else {
                return Err(Error::Config("bootstrap needs MCMC phase 1".into()));
            };
            if s.len() < 10 {
                return Err(Error::Config("bootstrap needs m ≥ 10".into()));
            }
            let mut rng = stream.child(i as u64).rng();
            (0..b)
                .map(|_| {
                    let idx: Vec<usize> = (0..s.len()).map(|_| rng.random_range(0..s.len())).collect();
                    estimate_params(&s.select(&idx), family)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::at_location(i, e))
        })
        .collect::<Result<_>>()?;
    let mut gammas = PointSet::with_capacity(q, fits.len() * b);
    let mut params = Vec::with_capacity(fits.len() * b);
    for (f, ps) in fits.iter().zip(per) {
        for p in ps {
            gammas.push(&f.gamma)?;
            params.push(p);
        }
    }
    Ok(TrainingSet {
        gammas,
        params,
        bootstrapped: true,
    })
}

/// Per-parameter emulators `γ ↦ ψ_j`. Scale- and variance-like parameters
/// are emulated on the log scale.
#[derive(Clone, Debug)]
pub struct EmulatorBank {
    pub family: FamilyTag,
    pub surfaces: Vec<GpModel>,
    pub log_scale: Vec<bool>,
    pub design: PointSet,
}

/// Latent (emulated-scale) value of each parameter.
pub fn to_latent(params: &FamilyParams) -> Vec<f64> {
    params
        .values()
        .iter()
        .zip(params.tag().positive_mask())
        .map(|(v, pos)| if pos { v.ln() } else { *v })
        .collect()
}

impl EmulatorBank {
    pub fn fit(family: FamilyTag, training: &TrainingSet, gp: &GpConfig) -> Result<Self> {
        let names = family.param_names();
        let log_scale = family.positive_mask();
        let targets: Vec<Vec<f64>> = training.params.iter().map(to_latent).collect();
        let mut cfg = gp.clone();
        if training.bootstrapped {
            cfg.nugget_mode = NuggetMode::Estimated;
        }
        let surfaces = (0..family.n_params())
            .into_par_iter()
            .map(|j| {
                let y: Vec<f64> = targets.iter().map(|t| t[j]).collect();
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::surface(
                        names[j].clone(),
                        Error::Domain("non-finite training target (non-positive scale?)".into()),
                    ));
                }
                gp_fit(&training.gammas, &y, &cfg).map_err(|e| Error::surface(names[j].clone(), e))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EmulatorBank {
            family,
            surfaces,
            log_scale,
            design: training.gammas.clone(),
        })
    }

    pub fn summaries(&self) -> Vec<(String, GpSummary)> {
        self.family
            .param_names()
            .into_iter()
            .zip(self.surfaces.iter().map(|s| s.summary()))
            .collect()
    }

    /// Latent predictive means and sds at one location, plus extrapolation.
    pub fn predict_latent(&self, gamma: &[f64]) -> (Vec<f64>, Vec<f64>, bool) {
        let mut means = Vec::with_capacity(self.surfaces.len());
        let mut sds = Vec::with_capacity(self.surfaces.len());
        let mut extrap = false;
        for s in &self.surfaces {
            let (m, sd, e) = s.predict_one(gamma);
            means.push(m);
            sds.push(sd);
            extrap |= e;
        }
        (means, sds, extrap)
    }

    /// Plug-in family member at `γ`; returns whether an MVN covariance was repaired.
    pub fn predict_params(&self, gamma: &[f64]) -> Result<(FamilyParams, bool, bool)> {
        let (latent, _, extrap) = self.predict_latent(gamma);
        let values: Vec<f64> = latent
            .iter()
            .zip(&self.log_scale)
            .map(|(v, lg)| if *lg { v.exp() } else { *v })
            .collect();
        let params = FamilyParams::new(self.family, values)?;
        if let FamilyTag::MultivariateNormal(_) = self.family {
            let cov = params.covariance();
            let eig = SymmetricEigen::new(cov.clone());
            if eig.eigenvalues.iter().any(|v| *v < 0.0) {
                let fixed = crate::gp::nearest_psd(&cov)?;
                let mean = params.mean();
                return Ok((FamilyParams::mvn(&mean, &fixed)?, true, extrap));
            }
        }
        Ok((params, false, extrap))
    }
}

/// Counters from an ECP run.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EcpReport {
    pub psd_repairs: usize,
    pub extrapolations: usize,
    pub components: usize,
    pub training_rows: usize,
    pub warnings: Vec<String>,
}

pub const PSD_WARN_FRACTION: f64 = 0.2;

/// Phase 2: mixture of predicted family members at the prediction design.
pub fn ecp_predict(bank: &EmulatorBank, locations: &PointSet) -> Result<(Mixture, EcpReport)> {
    let preds: Vec<(FamilyParams, bool, bool)> = (0..locations.len())
        .into_par_iter()
        .map(|i| bank.predict_params(locations.row(i)).map_err(|e| Error::at_location(i, e)))
        .collect::<Result<_>>()?;
    let mut report = EcpReport {
        components: preds.len(),
        training_rows: bank.design.len(),
        ..Default::default()
    };
    let mut comps = Vec::with_capacity(preds.len());
    for (p, repaired, extrap) in preds {
        report.psd_repairs += usize::from(repaired);
        report.extrapolations += usize::from(extrap);
        comps.push(p);
    }
    if report.psd_repairs as f64 > PSD_WARN_FRACTION * report.components as f64 {
        report.warnings.push(format!(
            "{} of {} predicted covariances needed PSD repair",
            report.psd_repairs, report.components
        ));
    }
    Ok((Mixture::new(comps)?, report))
}

/// Training design for phase 1, with optional variance inflation. A pool
/// representing `π(γ | z)` is inflated before the design is selected from it;
/// otherwise the selected design itself is inflated.
pub fn training_design(problem: &ProblemSpec, cfg: &EcpConfig, l: usize, stream: RngStream) -> Result<DesignMatrix> {
    let Some((omega, mode)) = cfg.inflate else {
        return make_design(&problem.gamma, &cfg.design, l, stream);
    };
    let bounds = match mode {
        InflateMode::Linear => &problem.gamma.bounds,
        InflateMode::Power => &problem.gamma.design_box,
    };
    let finite = bounds.iter().any(|(a, b)| a.is_finite() || b.is_finite());
    let bounds = finite.then_some(bounds.as_slice());
    match &problem.gamma.pool {
        Some(pool) => {
            let base = DesignMatrix::new((**pool).clone(), Provenance::Fixed, "pool")?;
            let inflated = inflate_variance(&base, omega, bounds, mode)?;
            let mut prior = problem.gamma.clone();
            prior.pool = Some(Arc::new(inflated.points));
            prior.sampler = None;
            let mut design = make_design(&prior, &cfg.design, l, stream)?;
            design.provenance = Provenance::Inflated {
                base: Box::new(design.provenance.clone()),
                omega,
                mode,
            };
            Ok(design)
        }
        None => {
            let base = make_design(&problem.gamma, &cfg.design, l, stream)?;
            inflate_variance(&base, omega, bounds, mode)
        }
    }
}

/// Phase 1 at every row of `gammas`, chains on `stream.child(ℓ)`.
pub fn fit_locations(problem: &ProblemSpec, cfg: &EcpConfig, gammas: &PointSet, stream: RngStream, offset: usize) -> Result<Vec<LocationFit>> {
    (0..gammas.len())
        .into_par_iter()
        .map(|i| {
            fit_location(problem, cfg, gammas.row(i), stream.child((offset + i) as u64))
                .map_err(|e| Error::at_location(offset + i, e))
        })
        .collect()
}

pub fn fit_bank(fits: &[LocationFit], cfg: &EcpConfig, stream: RngStream) -> Result<EmulatorBank> {
    let training = ecp_bootstrap_augment(fits, cfg.family, cfg.bootstrap_b.unwrap_or(1), stream)?;
    EmulatorBank::fit(cfg.family, &training, &cfg.gp)
}

/// Output of [`ecp_sample`].
#[derive(Clone, Debug)]
pub struct EcpOutput {
    pub approximation: CutApproximation,
    pub bank: EmulatorBank,
    pub report: EcpReport,
    pub fits: Vec<LocationFit>,
}

/// The full ECP pipeline. Streams: `child(0)` training design, `child(1)`
/// conditional chains, `child(2)` bootstrap, `child(3)` prediction design.
pub fn ecp_sample(problem: &ProblemSpec, cfg: &EcpConfig, stream: RngStream) -> Result<EcpOutput> {
    cfg.validate(problem)?;
    let design = training_design(problem, cfg, cfg.l, stream.child(0))?;
    let fits = fit_locations(problem, cfg, &design.points, stream.child(1), 0)?;
    ecp_finish(problem, cfg, fits, stream)
}

/// Phase 2 given phase-1 fits.
pub fn ecp_finish(problem: &ProblemSpec, cfg: &EcpConfig, fits: Vec<LocationFit>, stream: RngStream) -> Result<EcpOutput> {
    let bank = fit_bank(&fits, cfg, stream.child(2))?;
    let locations = make_design(&problem.gamma, &cfg.predict_design, cfg.big_m, stream.child(3))?;
    let (mixture, report) = ecp_predict(&bank, &locations.points)?;
    Ok(EcpOutput {
        approximation: CutApproximation::Mixture(mixture),
        bank,
        report,
        fits,
    })
}
