//! KS distances, ECDF, 1-D KDE and the misspecification coverage study.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{db_cut_analytic, db_generate, db_means, DbConfig};
use crate::rng::RngStream;
use crate::stats::{mean_sd, norm_ppf, quantile_sorted, LN_SQRT_2PI};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub distance: f64,
    pub n: usize,
    /// Sample value at which the supremum is attained.
    pub location: f64,
}

fn sorted_finite(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite sample".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// One-sample KS distance to a continuous CDF.
pub fn ks_to_cdf(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    if samples.is_empty() {
        return Err(Error::Argument("KS needs at least one sample".into()));
    }
    let s = sorted_finite(samples)?;
    let n = s.len() as f64;
    let mut best = KsResult {
        distance: 0.0,
        n: s.len(),
        location: s[0],
    };
    for (i, x) in s.iter().enumerate() {
        let f = cdf(*x);
        let d = ((i + 1) as f64 / n - f).abs().max((f - i as f64 / n).abs());
        if d > best.distance {
            best.distance = d;
            best.location = *x;
        }
    }
    Ok(best)
}

/// Two-sample KS distance over the merged order statistics.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("KS needs non-empty samples".into()));
    }
    let a = sorted_finite(a)?;
    let b = sorted_finite(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best = KsResult {
        distance: 0.0,
        n: a.len().min(b.len()),
        location: a[0].min(b[0]),
    };
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        // Exact when the counts are below 2^53, as they always are here.
        let d = (i as f64 / na - j as f64 / nb).abs();
        if d > best.distance {
            best.distance = d;
            best.location = x;
        }
    }
    Ok(best)
}

#[derive(Clone, Debug)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Argument("ECDF needs at least one sample".into()));
        }
        Ok(Ecdf {
            sorted: sorted_finite(samples)?,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|v| *v <= x) as f64 / self.sorted.len() as f64
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }
}

/// Gaussian-kernel density estimate on the line.
#[derive(Clone, Debug)]
pub struct Kde {
    samples: Vec<f64>,
    bandwidth: f64,
}

impl Kde {
    /// Silverman's rule `0.9·min(sd, IQR/1.34)·n^{-1/5}` unless `bandwidth` is given.
    pub fn new(samples: &[f64], bandwidth: Option<f64>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Argument("KDE needs at least two samples".into()));
        }
        let sorted = sorted_finite(samples)?;
        let h = match bandwidth {
            Some(h) if h > 0.0 && h.is_finite() => h,
            Some(h) => return Err(Error::Argument(format!("invalid bandwidth {h}"))),
            None => {
                let (_, sd) = mean_sd(&sorted);
                let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
                let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
                if !(spread > 0.0) {
                    return Err(Error::DegenerateSample("KDE sample has zero spread".into()));
                }
                0.9 * spread * (sorted.len() as f64).powf(-0.2)
            }
        };
        Ok(Kde {
            samples: sorted,
            bandwidth: h,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        // Kernels beyond 40 bandwidths contribute below f64 resolution.
        let lo = self.samples.partition_point(|v| *v < x - 40.0 * h);
        let hi = self.samples.partition_point(|v| *v <= x + 40.0 * h);
        let s: f64 = self.samples[lo..hi]
            .iter()
            .map(|v| {
                let z = (x - v) / h;
                (-0.5 * z * z - LN_SQRT_2PI).exp()
            })
            .sum();
        s / (self.samples.len() as f64 * h)
    }

    /// Density on an evenly spaced grid covering the sample ± 3 bandwidths.
    pub fn grid(&self, points: usize) -> Vec<(f64, f64)> {
        let lo = self.samples[0] - 3.0 * self.bandwidth;
        let hi = self.samples[self.samples.len() - 1] + 3.0 * self.bandwidth;
        let step = (hi - lo) / (points.max(2) - 1) as f64;
        (0..points.max(2))
            .map(|i| {
                let x = lo + step * i as f64;
                (x, self.density(x))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoverageMethod {
    Full,
    Cut,
}

impl CoverageMethod {
    pub fn name(self) -> &'static str {
        match self {
            CoverageMethod::Full => "full",
            CoverageMethod::Cut => "cut",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sweep {
    SigmaStar,
    SigmaGammaStar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub setting: f64,
    pub method: String,
    pub coverage: f64,
    pub mse: f64,
    pub reps: usize,
    pub seed: u64,
}

/// The assumed model of the misspecification study: `n₁ = 10`, `n₂ = 90`,
/// `α = 0`, `σ = 1`, `σ_γ = 0.5`, flat prior on `α`, `μ_γ = 0`.
pub fn coverage_base() -> DbConfig {
    DbConfig {
        n1: 10,
        n2: 90,
        sigma: 1.0,
        mu_alpha: 0.0,
        sigma_alpha: f64::INFINITY,
        mu_gamma: 0.0,
        sigma_gamma: 0.5,
        true_alpha: 0.0,
        true_gamma: 0.0,
        sigma_star: None,
        sigma_gamma_star: None,
    }
}

/// Coverage of equal-tailed 95% intervals and MSE of the posterior mean for
/// `α`. Data come from the starred truth; inference uses the assumed values
/// in `base`. The true `γ` is redrawn every replicate.
pub fn coverage_study(
    base: &DbConfig,
    sweep: Sweep,
    grid: &[f64],
    reps: usize,
    methods: &[CoverageMethod],
    stream: RngStream,
    seed: u64,
) -> Result<Vec<CoverageRow>> {
    if reps < 100 {
        return Err(Error::Argument("coverage study needs at least 100 reps".into()));
    }
    base.validate()?;
    let z = norm_ppf(0.975);
    let mut rows = Vec::new();
    for (gi, &setting) in grid.iter().enumerate() {
        let mut truth = base.clone();
        match sweep {
            Sweep::SigmaStar => {
                truth.sigma_star = Some(setting);
                truth.sigma_gamma_star = Some(base.sigma_gamma);
            }
            Sweep::SigmaGammaStar => {
                truth.sigma_star = Some(base.sigma);
                truth.sigma_gamma_star = Some(setting);
            }
        }
        let cell = stream.child(gi as u64);
        let results: Vec<Vec<(bool, f64)>> = (0..reps)
            .into_par_iter()
            .map(|r| -> Result<Vec<(bool, f64)>> {
                let y = db_generate(&truth, &mut cell.child(r as u64).rng())?;
                let (y1, y2) = db_means(base, &y);
                methods
                    .iter()
                    .map(|m| {
                        let post = match m {
                            CoverageMethod::Full => crate::problems::db_marginal_posterior(base, y1, y2)?,
                            CoverageMethod::Cut => db_cut_analytic(base, y1, y2)?,
                        };
                        let (mu, sd) = (post.values()[0], post.values()[1]);
                        let err = mu - base.true_alpha;
                        Ok((err.abs() <= z * sd, err * err))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for (mi, m) in methods.iter().enumerate() {
            let hits = results.iter().filter(|r| r[mi].0).count();
            let mse = results.iter().map(|r| r[mi].1).sum::<f64>() / reps as f64;
            rows.push(CoverageRow {
                setting,
                method: m.name().into(),
                coverage: hits as f64 / reps as f64,
                mse,
                reps,
                seed,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::norm_cdf;

    #[test]
    fn ks_single_point() {
        let r = ks_to_cdf(&[0.0], norm_cdf).unwrap();
        assert!((r.distance - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ks_quantile_construction() {
        let n = 50;
        let s: Vec<f64> = (0..n).map(|i| norm_ppf((i as f64 + 0.5) / n as f64)).collect();
        let r = ks_to_cdf(&s, norm_cdf).unwrap();
        assert!((r.distance - 0.5 / n as f64).abs() < 1e-9);
    }

    #[test]
    fn ks_two_sample_trivial() {
        assert_eq!(ks_two_sample(&[0.0], &[1.0]).unwrap().distance, 1.0);
        let a = [3.0, 1.0, 2.0];
        assert_eq!(ks_two_sample(&a, &a).unwrap().distance, 0.0);
    }

    #[test]
    fn ecdf_value() {
        let e = Ecdf::new(&[1.0, 2.0, 3.0]).unwrap();
        assert!((e.eval(2.0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn kde_bandwidth_override_and_degenerate() {
        let k = Kde::new(&[0.0, 1.0, 2.0], Some(0.37)).unwrap();
        assert_eq!(k.bandwidth(), 0.37);
        assert!(matches!(Kde::new(&[1.0, 1.0, 1.0], None), Err(Error::DegenerateSample(_))));
    }
}
