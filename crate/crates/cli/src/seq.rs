//! Sequential ECP against one-shot ECP at the same final budget.

use clap::Args;
use cutpost::cutcore::{ecp_sample, EcpConfig};
use cutpost::families::FamilyTag;
use cutpost::problems::{db_cut_analytic, db_problem, DbConfig};
use cutpost::seqecp::{sequential_ecp, RoundTrace, SeqConfig};
use cutpost::{Result, RngStream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::db::ks_to_normal;
use crate::{ensure, median, timed, Preset, RunOptions, Sampler, Table};

#[derive(Debug, Default, Args)]
pub struct SeqArgs {
    /// Build-phase budget.
    #[arg(long)]
    pub l0: Option<usize>,
    /// Final budget.
    #[arg(long = "l")]
    pub l: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqDemoConfig {
    pub l0: usize,
    pub l: usize,
    pub reps: usize,
    pub total_draws: usize,
    pub components: usize,
    pub candidates: usize,
    pub u: f64,
    pub sampler: Sampler,
    pub ybar1: f64,
    pub ybar2: f64,
    pub problem: DbConfig,
}

impl SeqDemoConfig {
    pub fn preset(_preset: Preset) -> Self {
        SeqDemoConfig {
            l0: 5,
            l: 10,
            reps: 25,
            total_draws: 10_000,
            components: 10_000,
            candidates: 500,
            u: 0.9,
            sampler: Sampler::Sp,
            ybar1: 1.0,
            ybar2: 11.0,
            problem: DbConfig::default(),
        }
    }

    pub fn resolve(preset: Preset, a: &SeqArgs) -> Result<Self> {
        let mut c = Self::preset(preset);
        if let Some(v) = a.l0 {
            c.l0 = v;
        }
        if let Some(v) = a.l {
            c.l = v;
        }
        if let Some(v) = a.reps {
            c.reps = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        ensure(self.l0 >= 3 && self.l0 <= self.l, || format!("need 3 ≤ L0 ≤ L, got L0 = {}, L = {}", self.l0, self.l))?;
        ensure(self.reps >= 1, || "reps must be at least 1".into())?;
        ensure(self.total_draws / self.l >= 3, || "total_draws / L must be at least 3".into())?;
        ensure(self.components >= 1 && self.candidates >= 10, || "need M ≥ 1 and at least 10 candidates".into())?;
        ensure(self.u > 0.0 && self.u < 1.0, || "u must lie in (0, 1)".into())
    }

    fn ecp(&self) -> EcpConfig {
        let mut ecp = EcpConfig::new(1, FamilyTag::Normal);
        ecp.l = self.l;
        ecp.m = self.total_draws / self.l;
        ecp.big_m = self.components;
        ecp.design = self.sampler.method();
        ecp
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeqRow {
    pub sequential: bool,
    pub rep: usize,
    pub ks: f64,
    pub wall_ms: Option<f64>,
}

pub struct SeqResults {
    pub l0: usize,
    pub l: usize,
    pub rows: Vec<SeqRow>,
    pub traces: Vec<(usize, RoundTrace)>,
}

impl SeqResults {
    pub fn median_ks(&self, sequential: bool) -> f64 {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.sequential == sequential).map(|r| r.ks).collect();
        median(&v)
    }

    pub fn tables(&self, seed: u64) -> Vec<Table> {
        let mut t = Table::new("seq_demo", &["method", "L0", "L", "rep", "seed", "ks", "wall_ms"]);
        for r in &self.rows {
            t.push(vec![
                if r.sequential { "seq-ecp" } else { "ecp" }.into(),
                self.l0.into(),
                self.l.into(),
                r.rep.into(),
                seed.into(),
                r.ks.into(),
                r.wall_ms.into(),
            ]);
        }
        let mut tr = Table::new("seq_trace", &["rep", "round", "gamma", "score", "rejections", "fallback"]);
        for (rep, r) in &self.traces {
            tr.push(vec![
                (*rep).into(),
                r.round.into(),
                r.gamma[0].into(),
                r.score.into(),
                r.rejections.into(),
                r.fallback.into(),
            ]);
        }
        vec![t, tr]
    }
}

/// Replicate `r` runs both variants on stream `child(r)`.
pub fn run(cfg: &SeqDemoConfig, opts: RunOptions) -> Result<SeqResults> {
    cfg.validate()?;
    let problem = db_problem(&cfg.problem, cfg.ybar1, cfg.ybar2)?;
    let cut = db_cut_analytic(&cfg.problem, cfg.ybar1, cfg.ybar2)?;
    let master = RngStream::new(opts.seed);
    let cells: Vec<(bool, usize)> = (0..cfg.reps).flat_map(|r| [(false, r), (true, r)]).collect();
    let out = cells
        .into_par_iter()
        .map(|(sequential, rep)| {
            let stream = master.child(rep as u64);
            let ((approx, trace), wall_ms) = timed(opts, || {
                if sequential {
                    let mut sc = SeqConfig::new(cfg.ecp(), cfg.l0);
                    sc.n_candidates = cfg.candidates;
                    sc.u = cfg.u;
                    let o = sequential_ecp(&problem, &sc, stream)?;
                    Ok((o.output.approximation, o.trace))
                } else {
                    Ok((ecp_sample(&problem, &cfg.ecp(), stream)?.approximation, Vec::new()))
                }
            })?;
            let draws = approx.scoring_draws(cfg.total_draws, stream.child(9))?.column(0);
            let ks = ks_to_normal(&draws, &cut)?;
            Ok((
                SeqRow {
                    sequential,
                    rep,
                    ks,
                    wall_ms,
                },
                trace,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for (row, trace) in out {
        traces.extend(trace.into_iter().map(|t| (row.rep, t)));
        rows.push(row);
    }
    Ok(SeqResults {
        l0: cfg.l0,
        l: cfg.l,
        rows,
        traces,
    })
}
