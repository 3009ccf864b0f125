//! Design-of-experiments samplers for the cut parameters `γ`: i.i.d., Latin
//! hypercube, support points, minimum-energy designs, and variance inflation
//! of training designs.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::{dist, PointSet};
use crate::rng::{Rng, RngStream};

/// Per-margin inverse CDF.
pub type QuantileFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// Draws one point from a distribution.
pub type PointSampler = Arc<dyn Fn(&mut Rng) -> Vec<f64> + Send + Sync>;
/// Unnormalized log-density.
pub type LogDensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

pub type Bounds = Vec<(f64, f64)>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Iid,
    Lhs,
    Support,
    Mined,
    Inflated {
        base: Box<Provenance>,
        omega: f64,
        mode: InflateMode,
    },
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InflateMode {
    Linear,
    Power,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub points: PointSet,
    pub provenance: Provenance,
    /// What the design represents, e.g. `"pool(N=10000)"` or `"quantiles"`.
    pub target: String,
    /// Algorithm settings and counters worth keeping with the design.
    pub metadata: BTreeMap<String, String>,
}

impl DesignMatrix {
    pub fn new(points: PointSet, provenance: Provenance, target: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Argument("a design needs at least one point".into()));
        }
        Ok(DesignMatrix {
            points,
            provenance,
            target: target.into(),
            metadata: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    /// True when every point lies in the (closed) box.
    pub fn within(&self, bounds: &[(f64, f64)]) -> bool {
        self.points
            .rows()
            .all(|r| r.iter().zip(bounds).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi))
    }
}

fn check_size(l: usize) -> Result<()> {
    if l == 0 {
        Err(Error::Argument("design size L must be at least 1".into()))
    } else {
        Ok(())
    }
}

pub fn iid_design(dim: usize, sampler: &PointSampler, l: usize, stream: RngStream) -> Result<DesignMatrix> {
    check_size(l)?;
    let mut rng = stream.rng();
    let mut pts = PointSet::with_capacity(dim, l);
    for _ in 0..l {
        pts.push(&sampler(&mut rng))?;
    }
    DesignMatrix::new(pts, Provenance::Iid, "sampler")
}

const LHS_RESTARTS: usize = 50;
const LHS_MAXIMIN_MAX_L: usize = 2000;

fn unit_lhs(q: usize, l: usize, rng: &mut Rng) -> PointSet {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(q);
    for _ in 0..q {
        let mut perm: Vec<usize> = (0..l).collect();
        perm.shuffle(rng);
        cols.push(perm.iter().map(|&p| (p as f64 + rng.random::<f64>()) / l as f64).collect());
    }
    let mut pts = PointSet::with_capacity(q, l);
    for i in 0..l {
        let row: Vec<f64> = cols.iter().map(|c| c[i]).collect();
        pts.push(&row).expect("row length matches");
    }
    pts
}

fn min_pairwise(pts: &PointSet) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..pts.len() {
        for j in 0..i {
            best = best.min(dist(pts.row(i), pts.row(j)));
        }
    }
    best
}

/// Latin hypercube on the unit cube. For `q > 1` (and `L ≤ 2000`) the best of
/// 50 random hypercubes under the maximin criterion is kept.
pub fn unit_lhs_design(q: usize, l: usize, stream: RngStream) -> PointSet {
    let mut rng = stream.rng();
    let mut best = unit_lhs(q, l, &mut rng);
    if q > 1 && l > 1 && l <= LHS_MAXIMIN_MAX_L {
        let mut best_d = min_pairwise(&best);
        for _ in 1..LHS_RESTARTS {
            let cand = unit_lhs(q, l, &mut rng);
            let d = min_pairwise(&cand);
            if d > best_d {
                best = cand;
                best_d = d;
            }
        }
    }
    best
}

pub fn lhs_design(quantiles: &[QuantileFn], l: usize, stream: RngStream) -> Result<DesignMatrix> {
    check_size(l)?;
    let q = quantiles.len();
    if q == 0 {
        return Err(Error::Argument("no margins".into()));
    }
    let mut pts = unit_lhs_design(q, l, stream);
    for i in 0..l {
        for (j, v) in pts.row_mut(i).iter_mut().enumerate() {
            let u = *v;
            *v = quantiles[j](u);
            if !v.is_finite() {
                return Err(Error::Mapping { margin: j, u });
            }
        }
    }
    Ok(DesignMatrix::new(pts, Provenance::Lhs, "quantiles")?
        .with_meta("maximin_restarts", if q > 1 && l <= LHS_MAXIMIN_MAX_L { LHS_RESTARTS } else { 1 }))
}

/// What support points should represent.
pub enum SupportTarget<'a> {
    Pool(&'a PointSet),
    /// Analytic margins (independent); represented by an LHS pool of the given size.
    Quantiles(&'a [QuantileFn], usize),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupportOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Snap each point to its nearest unused pool member at the end.
    pub project: bool,
    /// Scale each column to unit sd first, so narrow coordinates are not
    /// ignored by the Euclidean energy.
    pub standardize: bool,
}

impl Default for SupportOptions {
    fn default() -> Self {
        SupportOptions {
            max_iter: 500,
            rel_tol: 1e-8,
            project: false,
            standardize: true,
        }
    }
}

/// Energy distance between a design and a pool (up to the pool-only constant).
pub fn energy(design: &PointSet, pool: &PointSet) -> f64 {
    let (l, n) = (design.len() as f64, pool.len() as f64);
    let cross: f64 = design.rows().map(|d| pool.rows().map(|y| dist(d, y)).sum::<f64>()).sum();
    let mut within = 0.0;
    for i in 0..design.len() {
        for j in 0..design.len() {
            within += dist(design.row(i), design.row(j));
        }
    }
    2.0 * cross / (n * l) - within / (l * l)
}

/// Result of a support-points run, with the per-iteration energy trace.
pub struct SupportRun {
    pub design: DesignMatrix,
    pub energies: Vec<f64>,
}

pub fn support_points(target: SupportTarget<'_>, l: usize, stream: RngStream, opts: &SupportOptions) -> Result<DesignMatrix> {
    support_points_traced(target, l, stream, opts).map(|r| r.design)
}

/// Majorization-minimization on the energy distance.
pub fn support_points_traced(
    target: SupportTarget<'_>,
    l: usize,
    stream: RngStream,
    opts: &SupportOptions,
) -> Result<SupportRun> {
    check_size(l)?;
    let owned;
    let (pool, desc) = match target {
        SupportTarget::Pool(p) => (p, format!("pool(N={})", p.len())),
        SupportTarget::Quantiles(qf, n_pool) => {
            owned = lhs_design(qf, n_pool.max(l), stream.child(1))?.points;
            (&owned, format!("quantiles(lhs pool N={})", n_pool.max(l)))
        }
    };
    let n = pool.len();
    if n < l {
        return Err(Error::Argument(format!("pool of {n} points cannot supply {l} support points")));
    }
    if n == l {
        let design = DesignMatrix::new(pool.clone(), Provenance::Support, desc)?.with_meta("iterations", 0);
        return Ok(SupportRun {
            design,
            energies: vec![],
        });
    }
    let q = pool.dim();
    let orig = pool;
    let shift = if opts.standardize { pool.column_means() } else { vec![0.0; q] };
    let scale: Vec<f64> = if opts.standardize {
        pool.column_sds().into_iter().map(|s| if s > 0.0 { s } else { 1.0 }).collect()
    } else {
        vec![1.0; q]
    };
    let scaled;
    let pool = if opts.standardize {
        let mut p = pool.clone();
        for r in 0..n {
            for (k, v) in p.row_mut(r).iter_mut().enumerate() {
                *v = (*v - shift[k]) / scale[k];
            }
        }
        scaled = p;
        &scaled
    } else {
        pool
    };
    let mut rng = stream.child(0).rng();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    // Coincident starting points would never separate under the MM update.
    let mut seen = std::collections::HashSet::new();
    let start: Vec<usize> = idx
        .into_iter()
        .filter(|&i| seen.insert(pool.row(i).iter().map(|v| v.to_bits()).collect::<Vec<u64>>()))
        .take(l)
        .collect();
    if start.len() < l {
        return Err(Error::Argument(format!("pool has fewer than {l} distinct points")));
    }
    let mut d = pool.select(&start);
    let ratio = n as f64 / l as f64;
    let mut energies = Vec::new();
    let mut iterations = 0;
    let mut next = d.clone();
    let mut accepted: Option<PointSet> = None;
    let mut halvings = 0;
    loop {
        // One pass computes both the update and the energy of the current iterate.
        let parts: Vec<(Vec<f64>, f64, f64)> = (0..l)
            .into_par_iter()
            .map(|i| {
                let di = d.row(i);
                let mut cross = 0.0;
                let mut within = 0.0;
                let mut qsum = 0.0;
                let mut num = vec![0.0; q];
                for y in pool.rows() {
                    let r = dist(di, y);
                    cross += r;
                    if r > 0.0 {
                        qsum += 1.0 / r;
                        for k in 0..q {
                            num[k] += y[k] / r;
                        }
                    }
                }
                for j in 0..l {
                    if j == i {
                        continue;
                    }
                    let dj = d.row(j);
                    let r = dist(di, dj);
                    within += r;
                    if r > 0.0 {
                        for k in 0..q {
                            num[k] += ratio * (di[k] - dj[k]) / r;
                        }
                    }
                }
                let row = if qsum > 0.0 {
                    num.iter().map(|v| v / qsum).collect()
                } else {
                    di.to_vec()
                };
                (row, cross, within)
            })
            .collect();
        let mut cross = 0.0;
        let mut within = 0.0;
        for (i, (row, c, w)) in parts.iter().enumerate() {
            next.row_mut(i).copy_from_slice(row);
            cross += c;
            within += w;
        }
        let e = 2.0 * cross / (n as f64 * l as f64) - within / (l as f64 * l as f64);
        let prev = energies.last().copied();
        if let (Some(pe), Some(pd)) = (prev, accepted.as_ref()) {
            // A point landing on a pool member breaks the majorizer; fall back
            // to bisection towards the last accepted iterate.
            if e > pe {
                halvings += 1;
                if halvings > 40 {
                    d = pd.clone();
                    break;
                }
                for (x, y) in d.as_flat_mut().iter_mut().zip(pd.as_flat()) {
                    *x = 0.5 * (*x + y);
                }
                continue;
            }
        }
        halvings = 0;
        let done = prev.is_some_and(|pe: f64| (pe - e).abs() <= opts.rel_tol * pe.abs().max(f64::MIN_POSITIVE));
        energies.push(e);
        if done || iterations >= opts.max_iter {
            break;
        }
        accepted = Some(d.clone());
        std::mem::swap(&mut d, &mut next);
        iterations += 1;
    }
    if opts.project {
        let mut used = vec![false; n];
        for i in 0..l {
            let (best, _) = pool
                .rows()
                .enumerate()
                .filter(|(k, _)| !used[*k])
                .map(|(k, y)| (k, dist(d.row(i), y)))
                .fold((usize::MAX, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            used[best] = true;
            d.row_mut(i).copy_from_slice(orig.row(best));
        }
    } else if opts.standardize {
        for i in 0..l {
            for (k, v) in d.row_mut(i).iter_mut().enumerate() {
                *v = *v * scale[k] + shift[k];
            }
        }
    }
    let design = DesignMatrix::new(d, Provenance::Support, desc)?
        .with_meta("iterations", iterations)
        .with_meta("projected", opts.project);
    Ok(SupportRun { design, energies })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MinedOptions {
    pub proposals_per_point: usize,
    pub cooling: f64,
    pub initial_temperature: f64,
}

impl Default for MinedOptions {
    fn default() -> Self {
        MinedOptions {
            proposals_per_point: 2000,
            cooling: 0.99,
            initial_temperature: 1.0,
        }
    }
}

struct MinedState {
    q_dim: usize,
    k: f64,
    /// log charge per point
    log_q: Vec<f64>,
}

impl MinedState {
    fn log_charge(&self, lf: f64) -> f64 {
        -lf / (2.0 * self.q_dim as f64)
    }

    /// Log of the pair term `(q_i q_j / d_ij)^k`.
    fn pair(&self, lqi: f64, lqj: f64, a: &[f64], b: &[f64]) -> f64 {
        let d = dist(a, b);
        if d == 0.0 {
            return f64::INFINITY;
        }
        self.k * (lqi + lqj - d.ln())
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Minimum-energy design by coordinate-wise simulated annealing.
pub fn mined_design(
    log_density: &LogDensityFn,
    l: usize,
    init: &DesignMatrix,
    bounds: &[(f64, f64)],
    stream: RngStream,
    opts: &MinedOptions,
) -> Result<DesignMatrix> {
    check_size(l)?;
    if init.len() != l {
        return Err(Error::Shape(format!("init has {} points, expected {l}", init.len())));
    }
    let q_dim = init.dim();
    if bounds.len() != q_dim {
        return Err(Error::Shape("bounds do not match design dimension".into()));
    }
    let mut x = init.points.clone();
    for i in 0..l {
        for (v, (lo, hi)) in x.row_mut(i).iter_mut().zip(bounds) {
            *v = v.clamp(*lo, *hi);
        }
    }
    let lf: Vec<f64> = x.rows().map(|r| log_density(r)).collect();
    if lf.iter().any(|v| !v.is_finite()) {
        return Err(Error::Initialization(
            "log-density is not finite at every initial design point".into(),
        ));
    }
    let st = MinedState {
        q_dim,
        k: 4.0 * q_dim as f64,
        log_q: vec![],
    };
    let mut st = MinedState {
        log_q: lf.iter().map(|v| st.log_charge(*v)).collect(),
        ..st
    };
    // Step widths follow the bounds, or the initial spread where unbounded.
    let init_sd = init.points.column_sds();
    let width: Vec<f64> = (0..q_dim)
        .map(|c| {
            let (lo, hi) = bounds[c];
            if (hi - lo).is_finite() {
                hi - lo
            } else if init_sd[c] > 0.0 {
                4.0 * init_sd[c]
            } else {
                1.0
            }
        })
        .collect();
    let mut rng = stream.rng();
    let mut temp = opts.initial_temperature;
    let mut accepted = 0usize;
    let mut prop = vec![0.0; q_dim];
    for sweep in 0..opts.proposals_per_point {
        let c = sweep % q_dim;
        let shrink = (temp / opts.initial_temperature).sqrt().max(1e-3);
        for i in 0..l {
            prop.copy_from_slice(x.row(i));
            let z: f64 = rng.sample(StandardNormal);
            prop[c] = (prop[c] + 0.25 * width[c] * shrink * z).clamp(bounds[c].0, bounds[c].1);
            let lf_new = log_density(&prop);
            let u: f64 = rng.random();
            if !lf_new.is_finite() {
                continue;
            }
            let lq_new = st.log_charge(lf_new);
            let delta = if l == 1 {
                lq_new - st.log_q[0]
            } else {
                // Only pairs involving point i change; compare log of their summed terms.
                let old = log_sum_exp((0..l).filter(|&j| j != i).map(|j| st.pair(st.log_q[i], st.log_q[j], x.row(i), x.row(j))));
                let new = log_sum_exp((0..l).filter(|&j| j != i).map(|j| st.pair(lq_new, st.log_q[j], &prop, x.row(j))));
                let rest = log_sum_exp(
                    (0..l)
                        .flat_map(|a| (0..a).map(move |b| (a, b)))
                        .filter(|&(a, b)| a != i && b != i)
                        .map(|(a, b)| st.pair(st.log_q[a], st.log_q[b], x.row(a), x.row(b))),
                );
                (log_sum_exp([rest, new].into_iter()) - log_sum_exp([rest, old].into_iter())) / st.k
            };
            if delta.is_nan() {
                continue;
            }
            if delta <= 0.0 || u < (-delta / temp).exp() {
                x.row_mut(i).copy_from_slice(&prop);
                st.log_q[i] = lq_new;
                accepted += 1;
            }
        }
        temp *= opts.cooling;
    }
    Ok(DesignMatrix::new(x, Provenance::Mined, "log-density")?
        .with_meta("proposals_per_point", opts.proposals_per_point)
        .with_meta("cooling", opts.cooling)
        .with_meta("accepted", accepted))
}

/// Value of the minimum-energy criterion (log scale) for a design.
pub fn mined_log_criterion(log_density: &LogDensityFn, design: &PointSet) -> f64 {
    let q_dim = design.dim();
    let st = MinedState {
        q_dim,
        k: 4.0 * q_dim as f64,
        log_q: design.rows().map(|r| -log_density(r) / (2.0 * q_dim as f64)).collect(),
    };
    let l = design.len();
    if l == 1 {
        return st.log_q[0];
    }
    log_sum_exp(
        (0..l)
            .flat_map(|a| (0..a).map(move |b| (a, b)))
            .map(|(a, b)| st.pair(st.log_q[a], st.log_q[b], design.row(a), design.row(b))),
    ) / st.k
}

pub const POWER_GRID: usize = 512;

/// Spreads a training design. Linear mode scales deviations from the column
/// mean by `1 + ω`; power mode raises a per-margin KDE to the power `ω` and
/// maps the points' ranks through the flattened CDF.
pub fn inflate_variance(
    design: &DesignMatrix,
    omega: f64,
    bounds: Option<&[(f64, f64)]>,
    mode: InflateMode,
) -> Result<DesignMatrix> {
    let q = design.dim();
    let l = design.len();
    if let Some(b) = bounds {
        if b.len() != q {
            return Err(Error::Shape("bounds do not match design dimension".into()));
        }
    }
    let mut out = design.points.clone();
    match mode {
        InflateMode::Linear => {
            if !(omega > 0.0) {
                return Err(Error::Argument(format!("linear inflation needs omega > 0, got {omega}")));
            }
            let m = design.points.column_means();
            for i in 0..l {
                for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                    *v = m[j] + (1.0 + omega) * (*v - m[j]);
                    if let Some(b) = bounds {
                        if *v < b[j].0 || *v > b[j].1 {
                            return Err(Error::Bounds(format!(
                                "linear inflation moved margin {j} to {v}, outside [{}, {}]; use power mode",
                                b[j].0, b[j].1
                            )));
                        }
                    }
                }
            }
        }
        InflateMode::Power => {
            if !(omega > 0.0 && omega <= 1.0) {
                return Err(Error::Argument(format!("power inflation needs omega in (0, 1], got {omega}")));
            }
            let Some(b) = bounds.filter(|b| b.iter().all(|(lo, hi)| lo.is_finite() && hi.is_finite())) else {
                return Err(Error::Argument("power inflation needs finite bounds".into()));
            };
            if l < 2 {
                return Err(Error::Argument("power inflation needs at least 2 points".into()));
            }
            for j in 0..q {
                let col = design.points.column(j);
                let kde = crate::diagnostics::Kde::new(&col, None)?;
                // The flattened density has sd ≈ sd/√ω; a grid over the whole box
                // would not resolve narrow margins.
                let (_, sd) = crate::stats::mean_sd(&col);
                let reach = 10.0 * sd.max(kde.bandwidth()) / omega.sqrt();
                let (cmin, cmax) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, c), v| (a.min(*v), c.max(*v)));
                let (lo, hi) = (b[j].0.max(cmin - reach), b[j].1.min(cmax + reach));
                let grid: Vec<f64> = (0..POWER_GRID)
                    .map(|g| lo + (hi - lo) * g as f64 / (POWER_GRID - 1) as f64)
                    .collect();
                let dens: Vec<f64> = grid.iter().map(|&g| kde.density(g).powf(omega)).collect();
                let mut cdf = vec![0.0; POWER_GRID];
                for g in 1..POWER_GRID {
                    cdf[g] = cdf[g - 1] + 0.5 * (dens[g] + dens[g - 1]) * (grid[g] - grid[g - 1]);
                }
                let total = cdf[POWER_GRID - 1];
                if !(total > 0.0) {
                    return Err(Error::DegenerateSample(format!("margin {j} has no density mass inside the bounds")));
                }
                cdf.iter_mut().for_each(|c| *c /= total);
                let mut order: Vec<usize> = (0..l).collect();
                order.sort_by(|&a, &bb| col[a].total_cmp(&col[bb]).then(a.cmp(&bb)));
                for (rank, &i) in order.iter().enumerate() {
                    let u = (rank as f64 + 0.5) / l as f64;
                    out.row_mut(i)[j] = invert_grid_cdf(&grid, &cdf, u);
                }
            }
        }
    }
    Ok(DesignMatrix {
        points: out,
        provenance: Provenance::Inflated {
            base: Box::new(design.provenance.clone()),
            omega,
            mode,
        },
        target: design.target.clone(),
        metadata: design.metadata.clone(),
    }
    .with_meta("inflate_grid", if mode == InflateMode::Power { POWER_GRID } else { 0 }))
}

fn invert_grid_cdf(grid: &[f64], cdf: &[f64], u: f64) -> f64 {
    let k = cdf.partition_point(|c| *c < u).clamp(1, grid.len() - 1);
    let (c0, c1) = (cdf[k - 1], cdf[k]);
    let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
    grid[k - 1] + t * (grid[k] - grid[k - 1])
}
