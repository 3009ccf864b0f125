//! Interval coverage of full and cut posteriors when the generating model
//! differs from the assumed one.

use clap::{Args, ValueEnum};
use cutpost::diagnostics::{coverage_base, coverage_study, CoverageMethod, CoverageRow, Sweep};
use cutpost::problems::DbConfig;
use cutpost::{Result, RngStream};
use serde::{Deserialize, Serialize};

use crate::{ensure, Preset, RunOptions, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SweepArg {
    SigmaStar,
    SigmaGammaStar,
}

impl From<SweepArg> for Sweep {
    fn from(s: SweepArg) -> Self {
        match s {
            SweepArg::SigmaStar => Sweep::SigmaStar,
            SweepArg::SigmaGammaStar => Sweep::SigmaGammaStar,
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct CoverageArgs {
    #[arg(long, value_enum)]
    pub sweep: Option<SweepArg>,
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long)]
    pub reps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub sweep: SweepArg,
    pub grid: Vec<f64>,
    pub reps: usize,
    pub base: DbConfig,
}

fn default_grid(sweep: SweepArg, preset: Preset) -> Vec<f64> {
    match (sweep, preset) {
        (SweepArg::SigmaStar, Preset::Desk) => vec![0.1, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0],
        (SweepArg::SigmaStar, Preset::Paper) => (1..=60).map(|i| i as f64 / 10.0).collect(),
        (SweepArg::SigmaGammaStar, Preset::Desk) => vec![0.1, 0.25, 0.5, 1.0, 2.0, 3.0],
        (SweepArg::SigmaGammaStar, Preset::Paper) => (1..=30).map(|i| i as f64 / 10.0).collect(),
    }
}

impl CoverageConfig {
    pub fn preset(preset: Preset, sweep: SweepArg) -> Self {
        CoverageConfig {
            sweep,
            grid: default_grid(sweep, preset),
            reps: match preset {
                Preset::Desk => 5000,
                Preset::Paper => 10_000,
            },
            base: coverage_base(),
        }
    }

    pub fn resolve(preset: Preset, a: &CoverageArgs) -> Result<Self> {
        let mut c = Self::preset(preset, a.sweep.unwrap_or(SweepArg::SigmaStar));
        if let Some(v) = &a.grid {
            c.grid = v.clone();
        }
        if let Some(v) = a.reps {
            c.reps = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        ensure(self.reps >= 100, || "coverage needs at least 100 reps".into())?;
        ensure(!self.grid.is_empty() && self.grid.iter().all(|v| *v > 0.0 && v.is_finite()), || {
            "grid values must be positive and finite".into()
        })
    }
}

pub struct CoverageResults {
    pub rows: Vec<CoverageRow>,
}

impl CoverageResults {
    pub fn get(&self, setting: f64, method: CoverageMethod) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| r.setting == setting && r.method == method.name())
    }

    pub fn tables(&self) -> Vec<Table> {
        let mut t = Table::new("coverage", &["setting", "method", "coverage", "mse", "reps", "seed"]);
        for r in &self.rows {
            t.push(vec![
                r.setting.into(),
                r.method.as_str().into(),
                r.coverage.into(),
                r.mse.into(),
                r.reps.into(),
                r.seed.into(),
            ]);
        }
        vec![t]
    }
}

pub fn run(cfg: &CoverageConfig, opts: RunOptions) -> Result<CoverageResults> {
    cfg.validate()?;
    let rows = coverage_study(
        &cfg.base,
        cfg.sweep.into(),
        &cfg.grid,
        cfg.reps,
        &[CoverageMethod::Full, CoverageMethod::Cut],
        RngStream::new(opts.seed),
        opts.seed,
    )?;
    Ok(CoverageResults { rows })
}
