//! Diamond-in-a-box benchmark: every method is scored by KS distance to the
//! closed-form cut-distribution.

use clap::{Args, ValueEnum};
use cutpost::cutcore::{direct_sample, ecp_sample, little_aggregate, CutApproximation, EcpConfig, Phase1, ProblemSpec};
use cutpost::diagnostics::ks_to_cdf;
use cutpost::families::{FamilyParams, FamilyTag};
use cutpost::problems::{db_cut_analytic, db_problem, DbConfig};
use cutpost::seqecp::{sequential_ecp, SeqConfig};
use cutpost::stats::norm_cdf;
use cutpost::{Result, RngStream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{ensure, median, timed, Preset, RunOptions, Sampler, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DbMethod {
    Ds,
    DsNormal,
    Ecp,
    EcpLaplace,
    SeqEcp,
}

impl DbMethod {
    pub fn name(self) -> &'static str {
        match self {
            DbMethod::Ds => "ds",
            DbMethod::DsNormal => "ds-normal",
            DbMethod::Ecp => "ecp",
            DbMethod::EcpLaplace => "ecp-laplace",
            DbMethod::SeqEcp => "seq-ecp",
        }
    }

    fn is_ecp(self) -> bool {
        matches!(self, DbMethod::Ecp | DbMethod::EcpLaplace | DbMethod::SeqEcp)
    }
}

#[derive(Debug, Default, Args)]
pub struct DbArgs {
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<usize>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Option<Vec<DbMethod>>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub samplers: Option<Vec<Sampler>>,
    /// Draws from each approximation, split as `m = total / L` for DS.
    #[arg(long)]
    pub total_draws: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbBenchConfig {
    pub budgets: Vec<usize>,
    pub reps: usize,
    pub methods: Vec<DbMethod>,
    pub samplers: Vec<Sampler>,
    pub total_draws: usize,
    /// ECP mixture components.
    pub components: usize,
    /// Observed group means; fixed so every replicate targets the same cut.
    pub ybar1: f64,
    pub ybar2: f64,
    pub problem: DbConfig,
}

impl DbBenchConfig {
    pub fn preset(preset: Preset) -> Self {
        let base = DbBenchConfig {
            budgets: vec![10, 50, 250],
            reps: 25,
            methods: vec![DbMethod::Ds, DbMethod::DsNormal, DbMethod::Ecp],
            samplers: vec![Sampler::Iid, Sampler::Sp],
            total_draws: 10_000,
            components: 10_000,
            ybar1: 1.0,
            ybar2: 11.0,
            problem: DbConfig::default(),
        };
        match preset {
            Preset::Desk => base,
            Preset::Paper => DbBenchConfig {
                budgets: vec![10, 25, 50, 100, 250, 500],
                methods: vec![DbMethod::Ds, DbMethod::DsNormal, DbMethod::Ecp, DbMethod::EcpLaplace, DbMethod::SeqEcp],
                samplers: vec![Sampler::Iid, Sampler::Lhs, Sampler::Sp, Sampler::Mined],
                ..base
            },
        }
    }

    pub fn resolve(preset: Preset, a: &DbArgs) -> Result<Self> {
        let mut c = Self::preset(preset);
        if let Some(v) = &a.budgets {
            c.budgets = v.clone();
        }
        if let Some(v) = a.reps {
            c.reps = v;
        }
        if let Some(v) = &a.methods {
            c.methods = v.clone();
        }
        if let Some(v) = &a.samplers {
            c.samplers = v.clone();
        }
        if let Some(v) = a.total_draws {
            c.total_draws = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        ensure(!self.budgets.is_empty() && self.budgets.iter().all(|l| *l > 0), || {
            "budgets must be non-empty positive integers".into()
        })?;
        ensure(self.reps >= 1, || "reps must be at least 1".into())?;
        ensure(!self.methods.is_empty() && !self.samplers.is_empty(), || {
            "at least one method and one sampler are needed".into()
        })?;
        ensure(self.components >= 1, || "components must be at least 1".into())?;
        let problem = db_problem(&self.problem, self.ybar1, self.ybar2)?;
        for s in &self.samplers {
            s.method().check(&problem.gamma)?;
        }
        for &l in &self.budgets {
            let m = self.total_draws / l;
            ensure(m >= 1, || format!("total_draws {} gives m = 0 at L = {l}", self.total_draws))?;
            for method in &self.methods {
                if method.is_ecp() {
                    ensure(l >= 3, || format!("{} needs L ≥ 3, got {l}", method.name()))?;
                    if *method != DbMethod::EcpLaplace {
                        ensure(m >= 3, || format!("{} needs m = total/L ≥ 3 at L = {l}", method.name()))?;
                    }
                }
                if *method == DbMethod::DsNormal {
                    ensure(l * m >= 3, || "ds-normal needs at least 3 pooled draws".into())?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DbRow {
    pub method: DbMethod,
    pub sampler: Sampler,
    pub l: usize,
    pub rep: usize,
    pub ks: f64,
    pub wall_ms: Option<f64>,
}

pub struct DbResults {
    pub rows: Vec<DbRow>,
}

impl DbResults {
    /// Median KS over replicates for one (method, sampler, L) cell.
    pub fn median_ks(&self, method: DbMethod, sampler: Sampler, l: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.sampler == sampler && r.l == l)
            .map(|r| r.ks)
            .collect();
        (!v.is_empty()).then(|| median(&v))
    }

    pub fn tables(&self, seed: u64) -> Vec<Table> {
        let mut t = Table::new("db_benchmark", &["method", "sampler", "L", "rep", "seed", "ks", "log_ks", "wall_ms"]);
        for r in &self.rows {
            t.push(vec![
                r.method.name().into(),
                r.sampler.name().into(),
                r.l.into(),
                r.rep.into(),
                seed.into(),
                r.ks.into(),
                r.ks.ln().into(),
                r.wall_ms.into(),
            ]);
        }
        let mut s = Table::new("db_summary", &["method", "sampler", "L", "reps", "median_ks"]);
        let mut keys: Vec<(DbMethod, Sampler, usize)> = Vec::new();
        for r in &self.rows {
            if !keys.contains(&(r.method, r.sampler, r.l)) {
                keys.push((r.method, r.sampler, r.l));
            }
        }
        for (m, sa, l) in keys {
            let n = self.rows.iter().filter(|r| r.method == m && r.sampler == sa && r.l == l).count();
            s.push(vec![
                m.name().into(),
                sa.name().into(),
                l.into(),
                n.into(),
                self.median_ks(m, sa, l).into(),
            ]);
        }
        vec![t, s]
    }
}

/// Draws from one method's approximation of the cut-distribution.
pub fn db_draws(
    problem: &ProblemSpec,
    cfg: &DbBenchConfig,
    method: DbMethod,
    sampler: Sampler,
    l: usize,
    stream: RngStream,
) -> Result<Vec<f64>> {
    let m = cfg.total_draws / l;
    let design = sampler.method();
    let approx = match method {
        DbMethod::Ds => direct_sample(problem, l, m, &design, stream)?,
        DbMethod::DsNormal => {
            let CutApproximation::RawSamples(raw) = direct_sample(problem, l, m, &design, stream)? else {
                unreachable!("direct sampling returns raw draws")
            };
            little_aggregate(&raw)?
        }
        DbMethod::Ecp | DbMethod::EcpLaplace | DbMethod::SeqEcp => {
            let mut ecp = EcpConfig::new(1, FamilyTag::Normal);
            ecp.l = l;
            ecp.m = m;
            ecp.big_m = cfg.components;
            ecp.design = design;
            if method == DbMethod::EcpLaplace {
                ecp.phase1 = Phase1::Laplace;
            }
            if method == DbMethod::SeqEcp {
                let l0 = l.div_ceil(2).max(3);
                sequential_ecp(problem, &SeqConfig::new(ecp, l0), stream)?.output.approximation
            } else {
                ecp_sample(problem, &ecp, stream)?.approximation
            }
        }
    };
    Ok(approx.scoring_draws(cfg.total_draws, stream.child(9))?.column(0))
}

pub fn ks_to_normal(draws: &[f64], target: &FamilyParams) -> Result<f64> {
    let (mu, sd) = (target.values()[0], target.values()[1]);
    Ok(ks_to_cdf(draws, |x| norm_cdf((x - mu) / sd))?.distance)
}

/// Runs every (budget, sampler, rep, method) cell. Methods within a
/// (budget, sampler, rep) share one stream.
pub fn run(cfg: &DbBenchConfig, opts: RunOptions) -> Result<DbResults> {
    cfg.validate()?;
    let problem = db_problem(&cfg.problem, cfg.ybar1, cfg.ybar2)?;
    let cut = db_cut_analytic(&cfg.problem, cfg.ybar1, cfg.ybar2)?;
    let master = RngStream::new(opts.seed);
    let mut cells = Vec::new();
    for (bi, &l) in cfg.budgets.iter().enumerate() {
        for (si, &sampler) in cfg.samplers.iter().enumerate() {
            for rep in 0..cfg.reps {
                for &method in &cfg.methods {
                    let stream = master.child(bi as u64).child(si as u64).child(rep as u64);
                    cells.push((method, sampler, l, rep, stream));
                }
            }
        }
    }
    let rows = cells
        .into_par_iter()
        .map(|(method, sampler, l, rep, stream)| {
            let (ks, wall_ms) = timed(opts, || {
                let draws = db_draws(&problem, cfg, method, sampler, l, stream)?;
                ks_to_normal(&draws, &cut)
            })?;
            Ok(DbRow {
                method,
                sampler,
                l,
                rep,
                ks,
                wall_ms,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DbResults { rows })
}
