//! Ecological benchmark: DS and ECP against a DS ground truth with one draw
//! per `γ` location.

use std::sync::Arc;

use clap::{Args, ValueEnum};
use cutpost::cutcore::{direct_sample, ecp_sample, make_design, DesignMethod, EcpConfig};
use cutpost::diagnostics::{ks_two_sample, Kde};
use cutpost::doe::InflateMode;
use cutpost::families::FamilyTag;
use cutpost::problems::{eco_gamma_pool, eco_problem, ECO_K};
use cutpost::{PointSet, Result, RngStream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{ensure, median, timed, Preset, RunOptions, Sampler, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EcoMethod {
    Ds,
    Ecp,
}

impl EcoMethod {
    pub fn name(self) -> &'static str {
        match self {
            EcoMethod::Ds => "ds",
            EcoMethod::Ecp => "ecp",
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct EcoArgs {
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<usize>>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Ground-truth DS budget (one draw per location).
    #[arg(long)]
    pub ground_truth_l: Option<usize>,
    /// Retained states in the `γ` posterior pool.
    #[arg(long)]
    pub pool_size: Option<usize>,
    /// Burn-in of the `γ` chain.
    #[arg(long)]
    pub pool_burn_in: Option<usize>,
    /// ECP mixture components (shared support-point prediction design).
    #[arg(long)]
    pub components: Option<usize>,
    /// Power-inflation exponent for the ECP training pool; 1 disables it.
    #[arg(long)]
    pub omega: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EcoConfig {
    pub budgets: Vec<usize>,
    pub reps: usize,
    pub ground_truth_l: usize,
    pub pool_size: usize,
    pub pool_burn_in: usize,
    pub pool_thin: usize,
    /// Conditional draws per method, split as `m = total / L`.
    pub total_draws: usize,
    pub components: usize,
    /// Draws taken from each mixture component when scoring ECP.
    pub draws_per_component: usize,
    pub ds_sampler: Sampler,
    pub omega: f64,
    pub kde_points: usize,
}

impl EcoConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => EcoConfig {
                budgets: vec![25, 50, 100],
                reps: 5,
                ground_truth_l: 2000,
                pool_size: 20_000,
                pool_burn_in: 5000,
                pool_thin: 5,
                total_draws: 100_000,
                components: 2000,
                draws_per_component: 10,
                ds_sampler: Sampler::Sp,
                omega: 0.8,
                kde_points: 201,
            },
            Preset::Paper => EcoConfig {
                budgets: vec![10, 25, 50, 100, 250, 1000],
                reps: 25,
                ground_truth_l: 10_000,
                pool_size: 100_000,
                pool_burn_in: 10_000,
                pool_thin: 5,
                total_draws: 100_000,
                components: 10_000,
                draws_per_component: 10,
                ds_sampler: Sampler::Sp,
                omega: 0.8,
                kde_points: 201,
            },
        }
    }

    pub fn resolve(preset: Preset, a: &EcoArgs) -> Result<Self> {
        let mut c = Self::preset(preset);
        if let Some(v) = &a.budgets {
            c.budgets = v.clone();
        }
        if let Some(v) = a.reps {
            c.reps = v;
        }
        if let Some(v) = a.ground_truth_l {
            c.ground_truth_l = v;
        }
        if let Some(v) = a.pool_size {
            c.pool_size = v;
        }
        if let Some(v) = a.pool_burn_in {
            c.pool_burn_in = v;
        }
        if let Some(v) = a.components {
            c.components = v;
        }
        if let Some(v) = a.omega {
            c.omega = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(!self.budgets.is_empty() && self.budgets.iter().all(|l| *l >= 3), || {
            "eco budgets must be at least 3".into()
        })?;
        ensure(self.reps >= 1, || "reps must be at least 1".into())?;
        ensure(self.pool_thin >= 1, || "pool_thin must be at least 1".into())?;
        let largest = self.budgets.iter().copied().max().unwrap_or(0).max(self.components).max(self.ground_truth_l);
        ensure(self.pool_size >= largest, || {
            format!("pool of {} cannot supply {largest} locations", self.pool_size)
        })?;
        ensure(self.ground_truth_l >= 2, || "ground truth needs at least 2 draws".into())?;
        for &l in &self.budgets {
            ensure(self.total_draws / l >= 3, || format!("total_draws / L must be at least 3 at L = {l}"))?;
        }
        ensure(self.components >= 1 && self.draws_per_component >= 1, || {
            "components and draws_per_component must be positive".into()
        })?;
        ensure(self.omega > 0.0 && self.omega <= 1.0, || "omega must lie in (0, 1]".into())?;
        ensure(self.kde_points >= 2, || "kde_points must be at least 2".into())?;
        ensure(self.ds_sampler != Sampler::Lhs, || "lhs needs independent margins; the eco prior is a pool".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EcoRow {
    pub method: EcoMethod,
    pub l: usize,
    pub rep: usize,
    pub ks: [f64; 2],
    pub wall_ms: Option<f64>,
}

impl EcoRow {
    pub fn ks_max(&self) -> f64 {
        self.ks[0].max(self.ks[1])
    }

    pub fn ks_mean(&self) -> f64 {
        0.5 * (self.ks[0] + self.ks[1])
    }
}

pub struct EcoResults {
    pub rows: Vec<EcoRow>,
    /// `(source, L, marginal, x, density)`; source `truth` has no budget.
    pub kde: Vec<(String, Option<usize>, usize, f64, f64)>,
    /// `(marginal, x, density)` of the `γ` pool.
    pub gamma_kde: Vec<(usize, f64, f64)>,
}

impl EcoResults {
    /// Median over replicates of the KS distance for one marginal.
    pub fn median_ks(&self, method: EcoMethod, l: usize, marginal: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.l == l)
            .map(|r| r.ks[marginal])
            .collect();
        (!v.is_empty()).then(|| median(&v))
    }

    pub fn tables(&self, seed: u64) -> Vec<Table> {
        let mut t = Table::new(
            "eco_benchmark",
            &["method", "L", "rep", "seed", "ks_alpha1", "ks_alpha2", "ks_max", "ks_mean", "wall_ms"],
        );
        for r in &self.rows {
            t.push(vec![
                r.method.name().into(),
                r.l.into(),
                r.rep.into(),
                seed.into(),
                r.ks[0].into(),
                r.ks[1].into(),
                r.ks_max().into(),
                r.ks_mean().into(),
                r.wall_ms.into(),
            ]);
        }
        let mut k = Table::new("eco_kde", &["source", "L", "marginal", "x", "density"]);
        for (s, l, j, x, d) in &self.kde {
            k.push(vec![s.as_str().into(), (*l).into(), (j + 1).into(), (*x).into(), (*d).into()]);
        }
        let mut g = Table::new("eco_gamma_kde", &["marginal", "x", "density"]);
        for (j, x, d) in &self.gamma_kde {
            g.push(vec![(j + 1).into(), (*x).into(), (*d).into()]);
        }
        vec![t, k, g]
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Streams: `child(0)` pool, `child(1)` ground truth, `child(2)` prediction
/// design, `child(3).child(budget).child(rep)` for both methods of a cell.
pub fn run(cfg: &EcoConfig, opts: RunOptions) -> Result<EcoResults> {
    cfg.validate()?;
    let master = RngStream::new(opts.seed);
    let pool = eco_gamma_pool(cfg.pool_size, cfg.pool_burn_in, cfg.pool_thin, master.child(0))?;
    let problem = eco_problem(Arc::new(pool))?;
    let truth = direct_sample(&problem, cfg.ground_truth_l, 1, &DesignMethod::Iid, master.child(1))?
        .scoring_draws(0, master.child(1))?;
    let predict = Arc::new(make_design(&problem.gamma, &DesignMethod::SupportPoints, cfg.components, master.child(2))?.points);

    let mut cells = Vec::new();
    for (bi, &l) in cfg.budgets.iter().enumerate() {
        for rep in 0..cfg.reps {
            for method in [EcoMethod::Ds, EcoMethod::Ecp] {
                cells.push((method, bi, l, rep));
            }
        }
    }
    let results = cells
        .into_par_iter()
        .map(|(method, bi, l, rep)| {
            let stream = master.child(3).child(bi as u64).child(rep as u64);
            let m = cfg.total_draws / l;
            let (draws, wall_ms) = timed(opts, || match method {
                EcoMethod::Ds => direct_sample(&problem, l, m, &cfg.ds_sampler.method(), stream)?.scoring_draws(0, stream),
                EcoMethod::Ecp => {
                    let mut ecp = EcpConfig::new(ECO_K, FamilyTag::MultivariateNormal(2));
                    ecp.l = l;
                    ecp.m = m;
                    ecp.big_m = cfg.components;
                    ecp.predict_design = DesignMethod::Fixed(predict.clone());
                    if cfg.omega < 1.0 {
                        ecp.inflate = Some((cfg.omega, InflateMode::Power));
                    }
                    ecp_sample(&problem, &ecp, stream)?
                        .approximation
                        .scoring_draws(cfg.components * cfg.draws_per_component, stream.child(9))
                }
            })?;
            let mut ks = [0.0; 2];
            for (j, k) in ks.iter_mut().enumerate() {
                *k = ks_two_sample(&draws.column(j), &truth.column(j))?.distance;
            }
            Ok((
                EcoRow {
                    method,
                    l,
                    rep,
                    ks,
                    wall_ms,
                },
                (rep == 0).then_some(draws),
            ))
        })
        .collect::<Result<Vec<(EcoRow, Option<PointSet>)>>>()?;

    let mut kde = Vec::new();
    for j in 0..2 {
        let col = truth.column(j);
        let k = Kde::new(&col, None)?;
        let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        let xs = grid(lo - 3.0 * k.bandwidth(), hi + 3.0 * k.bandwidth(), cfg.kde_points);
        kde.extend(xs.iter().map(|x| ("truth".to_string(), None, j, *x, k.density(*x))));
        for (row, draws) in &results {
            let Some(d) = draws else { continue };
            let k = Kde::new(&d.column(j), None)?;
            kde.extend(xs.iter().map(|x| (row.method.name().to_string(), Some(row.l), j, *x, k.density(*x))));
        }
    }
    let pool = problem.gamma.pool.as_ref().expect("eco prior is a pool");
    let mut gamma_kde = Vec::new();
    for j in 0..ECO_K {
        let k = Kde::new(&pool.column(j), None)?;
        gamma_kde.extend(grid(0.0, 1.0, cfg.kde_points).into_iter().map(|x| (j, x, k.density(x))));
    }
    Ok(EcoResults {
        rows: results.into_iter().map(|(r, _)| r).collect(),
        kde,
        gamma_kde,
    })
}
