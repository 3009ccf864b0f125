//! Design samplers compared on the diamond-in-a-box prior `N(μ_γ, σ_γ²)`.

use clap::Args;
use cutpost::cutcore::make_design;
use cutpost::diagnostics::{ks_to_cdf, Kde};
use cutpost::problems::{db_problem, DbConfig};
use cutpost::stats::{norm_cdf, norm_pdf};
use cutpost::{Error, Result, RngStream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{ensure, median, timed, Preset, RunOptions, Sampler, Table};

#[derive(Debug, Default, Args)]
pub struct DoeArgs {
    /// Design size.
    #[arg(long = "l")]
    pub l: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub samplers: Option<Vec<Sampler>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoeConfig {
    pub l: usize,
    pub reps: usize,
    pub samplers: Vec<Sampler>,
    pub kde_points: usize,
    pub problem: DbConfig,
}

impl DoeConfig {
    pub fn preset(_preset: Preset) -> Self {
        DoeConfig {
            l: 30,
            reps: 25,
            samplers: vec![Sampler::Iid, Sampler::Lhs, Sampler::Sp, Sampler::Mined],
            kde_points: 201,
            problem: DbConfig::default(),
        }
    }

    pub fn resolve(preset: Preset, a: &DoeArgs) -> Result<Self> {
        let mut c = Self::preset(preset);
        if let Some(v) = a.l {
            c.l = v;
        }
        if let Some(v) = a.reps {
            c.reps = v;
        }
        if let Some(v) = &a.samplers {
            c.samplers = v.clone();
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        ensure(self.l >= 1, || "L must be at least 1".into())?;
        ensure(self.reps >= 1, || "reps must be at least 1".into())?;
        ensure(!self.samplers.is_empty(), || "at least one sampler is needed".into())?;
        ensure(self.kde_points >= 2, || "kde_points must be at least 2".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DoeRow {
    pub sampler: Sampler,
    pub rep: usize,
    pub ks: f64,
    pub wall_ms: Option<f64>,
}

pub struct DoeResults {
    pub l: usize,
    pub rows: Vec<DoeRow>,
    /// `(sampler, x, density)` from the first replicate; `None` is the prior.
    pub kde: Vec<(Option<Sampler>, f64, f64)>,
}

impl DoeResults {
    pub fn median_ks(&self, sampler: Sampler) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.sampler == sampler).map(|r| r.ks).collect();
        (!v.is_empty()).then(|| median(&v))
    }

    pub fn tables(&self, seed: u64) -> Vec<Table> {
        let mut t = Table::new("doe_compare", &["sampler", "L", "rep", "seed", "ks", "wall_ms"]);
        for r in &self.rows {
            t.push(vec![
                r.sampler.name().into(),
                self.l.into(),
                r.rep.into(),
                seed.into(),
                r.ks.into(),
                r.wall_ms.into(),
            ]);
        }
        let mut k = Table::new("doe_kde", &["source", "x", "density"]);
        for (s, x, d) in &self.kde {
            k.push(vec![s.map_or("prior", |s| s.name()).into(), (*x).into(), (*d).into()]);
        }
        vec![t, k]
    }
}

/// KS of each sampler's design to the prior, plus KDE curves of the first
/// replicate. Replicate `r` uses stream `child(r)` for every sampler.
pub fn run(cfg: &DoeConfig, opts: RunOptions) -> Result<DoeResults> {
    cfg.validate()?;
    let problem = db_problem(&cfg.problem, 0.0, 0.0)?;
    let (mg, sg) = (cfg.problem.mu_gamma, cfg.problem.sigma_gamma);
    let master = RngStream::new(opts.seed);
    let cells: Vec<(Sampler, usize)> = cfg
        .samplers
        .iter()
        .flat_map(|s| (0..cfg.reps).map(move |r| (*s, r)))
        .collect();
    let designs = cells
        .into_par_iter()
        .map(|(sampler, rep)| {
            let (design, wall_ms) = timed(opts, || {
                make_design(&problem.gamma, &sampler.method(), cfg.l, master.child(rep as u64))
            })?;
            let x = design.points.column(0);
            let ks = ks_to_cdf(&x, |v| norm_cdf((v - mg) / sg))?.distance;
            Ok((DoeRow { sampler, rep, ks, wall_ms }, x))
        })
        .collect::<Result<Vec<_>>>()?;
    let grid: Vec<f64> = (0..cfg.kde_points)
        .map(|i| mg - 4.0 * sg + 8.0 * sg * i as f64 / (cfg.kde_points - 1) as f64)
        .collect();
    let mut kde: Vec<(Option<Sampler>, f64, f64)> = grid.iter().map(|x| (None, *x, norm_pdf(*x, mg, sg))).collect();
    for (row, x) in &designs {
        if row.rep != 0 || x.len() < 2 {
            continue;
        }
        match Kde::new(x, None) {
            Ok(k) => kde.extend(grid.iter().map(|g| (Some(row.sampler), *g, k.density(*g)))),
            Err(Error::DegenerateSample(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(DoeResults {
        l: cfg.l,
        rows: designs.into_iter().map(|(r, _)| r).collect(),
        kde,
    })
}
