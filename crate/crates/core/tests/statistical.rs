//! Seeded statistical checks with tolerances set from the sampling error of
//! each estimator.

mod common;

use std::sync::Arc;

use common::{median, phi};
use cutpost::cutcore::*;
use cutpost::diagnostics::ks_to_cdf;
use cutpost::doe::*;
use cutpost::families::*;
use cutpost::gp::{gp_fit, gp_predict, GpConfig, NuggetMode};
use cutpost::problems::*;
use cutpost::sampler::{adaptive_metropolis, McmcConfig};
use cutpost::seqecp::*;
use cutpost::stats::{mean_sd, norm_cdf};
use cutpost::{PointSet, RngStream};
use rand::Rng as _;
use rand_distr::StandardNormal;

fn db() -> (DbConfig, ProblemSpec, FamilyParams) {
    let cfg = DbConfig::default();
    let problem = db_problem(&cfg, 1.0, 11.0).unwrap();
    let cut = db_cut_analytic(&cfg, 1.0, 11.0).unwrap();
    (cfg, problem, cut)
}

fn ks_normal(draws: &[f64], p: &FamilyParams) -> f64 {
    let (m, s) = (p.values()[0], p.values()[1]);
    ks_to_cdf(draws, |x| phi((x - m) / s)).unwrap().distance
}

#[test]
fn weibull_mle_is_consistent() {
    let truth = FamilyParams::weibull(2.0, 1.5).unwrap();
    let x = sample_family(&truth, 100_000, &mut RngStream::new(11).rng()).unwrap();
    let fit = estimate_params(&x, FamilyTag::Weibull).unwrap();
    assert!((fit.values()[0] - 2.0).abs() < 0.03, "{:?}", fit.values());
    assert!((fit.values()[1] - 1.5).abs() < 0.03, "{:?}", fit.values());
}

#[test]
fn normal_sampling_clt() {
    let x = sample_family(&FamilyParams::normal(0.0, 1.0).unwrap(), 100_000, &mut RngStream::new(12).rng()).unwrap();
    let (m, s) = mean_sd(&x.column(0));
    assert!(m.abs() < 0.02 && (s - 1.0).abs() < 0.02, "{m} {s}");
}

#[test]
fn perfectly_correlated_mvn() {
    let cov = nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
    let p = FamilyParams::mvn(&[0.0, 1.0], &cov).unwrap();
    let x = sample_family(&p, 1000, &mut RngStream::new(13).rng()).unwrap();
    let (a, b) = (x.column(0), x.column(1));
    let (ma, sa) = mean_sd(&a);
    let (mb, sb) = mean_sd(&b);
    let r: f64 = a.iter().zip(&b).map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>() / ((a.len() - 1) as f64 * sa * sb);
    assert!(r > 0.999, "{r}");
}

#[test]
fn am_recovers_normal_target() {
    let target = |x: &[f64]| -0.5 * ((x[0] - 3.0) / 2.0).powi(2);
    let chain = adaptive_metropolis(&target, &[0.0], &McmcConfig::new(50_000, 1, RngStream::new(21))).unwrap();
    let (m, s) = mean_sd(&chain.states.column(0));
    let se = 2.0 / chain.ess[0].sqrt();
    assert!((m - 3.0).abs() < 0.06 && (m - 3.0).abs() < 5.0 * se, "mean {m}, ess {}", chain.ess[0]);
    assert!((s - 2.0).abs() < 0.06, "sd {s}");
    assert!(chain.acceptance_rate > 0.1 && chain.acceptance_rate < 0.9);
}

#[test]
fn am_on_db_conditional_matches_closed_form() {
    let (cfg, problem, _) = db();
    let sum_y = 10.0 + 100.0 * 11.0;
    let want = db_conditional(&cfg, sum_y, 10.0).unwrap();
    let s = problem.conditional_chain(&[10.0], 20_000, RngStream::new(22)).unwrap();
    let (m, sd) = mean_sd(&s.column(0));
    let chain_ess = cutpost::sampler::effective_sample_size(&s.column(0));
    let se = want.values()[1] / chain_ess.sqrt();
    assert!((m - want.values()[0]).abs() < 3.0 * se, "mean {m} vs {}", want.values()[0]);
    // sd of a sample variance is about var·√(2/n).
    let var_se = want.values()[1].powi(2) * (2.0 / chain_ess).sqrt();
    assert!((sd * sd - want.values()[1].powi(2)).abs() < 3.0 * var_se);
}

#[test]
fn iid_design_clt() {
    let sampler: PointSampler = Arc::new(|rng: &mut cutpost::rng::Rng| vec![10.0 + 0.1 * rng.sample::<f64, _>(StandardNormal)]);
    let d = iid_design(1, &sampler, 10_000, RngStream::new(31)).unwrap();
    let (m, _) = mean_sd(&d.points.column(0));
    assert!((m - 10.0).abs() < 0.004);
}

#[test]
fn lhs_normal_margin_ks() {
    let q: Vec<QuantileFn> = vec![Arc::new(cutpost::stats::norm_ppf)];
    let worst = (0..25)
        .map(|s| {
            let d = lhs_design(&q, 100, RngStream::new(s)).unwrap();
            ks_to_cdf(&d.points.column(0), norm_cdf).unwrap().distance
        })
        .fold(0.0, f64::max);
    assert!(worst < 0.035, "{worst}");
}

#[test]
fn support_point_of_symmetric_pool_is_central() {
    let mut rng = RngStream::new(41).rng();
    let mut pool = PointSet::new(1);
    for _ in 0..100_000 {
        let z: f64 = rng.sample(StandardNormal);
        pool.push(&[z]).unwrap();
        pool.push(&[-z]).unwrap();
    }
    let d = support_points(SupportTarget::Pool(&pool), 1, RngStream::new(42), &SupportOptions::default()).unwrap();
    assert!(d.points.row(0)[0].abs() < 0.02, "{:?}", d.points.row(0));
}

#[test]
fn support_points_beat_iid_at_30() {
    let q: Vec<QuantileFn> = vec![Arc::new(|u| 10.0 + 0.1 * cutpost::stats::norm_ppf(u))];
    let prior = FamilyParams::normal(10.0, 0.1).unwrap();
    let mut sp = Vec::new();
    let mut iid = Vec::new();
    let sampler: PointSampler = Arc::new(|rng: &mut cutpost::rng::Rng| vec![10.0 + 0.1 * rng.sample::<f64, _>(StandardNormal)]);
    for s in 0..25 {
        let d = support_points(SupportTarget::Quantiles(&q, 10_000), 30, RngStream::new(s), &SupportOptions::default()).unwrap();
        sp.push(ks_normal(&d.points.column(0), &prior));
        let d = iid_design(1, &sampler, 30, RngStream::new(s)).unwrap();
        iid.push(ks_normal(&d.points.column(0), &prior));
    }
    let m = median(&iid);
    assert!(sp.iter().all(|k| *k < m), "sp {sp:?}, iid median {m}");
}

#[test]
fn mined_single_point_finds_mode() {
    let ld: LogDensityFn = Arc::new(|x: &[f64]| -0.5 * x[0] * x[0]);
    let init = DesignMatrix::new(PointSet::from_scalars(&[2.5]), Provenance::Iid, "test").unwrap();
    let d = mined_design(&ld, 1, &init, &[(-5.0, 5.0)], RngStream::new(51), &MinedOptions::default()).unwrap();
    assert!(d.points.row(0)[0].abs() < 0.05, "{:?}", d.points.row(0));
}

#[test]
fn mined_uniform_spreads_out() {
    let ld: LogDensityFn = Arc::new(|_: &[f64]| 0.0);
    let init = DesignMatrix::new(PointSet::from_scalars(&[0.4, 0.45, 0.5, 0.55]), Provenance::Iid, "test").unwrap();
    let d = mined_design(&ld, 4, &init, &[(0.0, 1.0)], RngStream::new(52), &MinedOptions::default()).unwrap();
    let mut x = d.points.column(0);
    x.sort_by(f64::total_cmp);
    let gap = x.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    // Exhaustive search over a 101-point grid puts the best 4-point min gap at 1/3.
    let mut best = 0.0f64;
    for a in 0..=100 {
        for b in a + 1..=100 {
            for c in b + 1..=100 {
                for e in c + 1..=100 {
                    best = best.max(((b - a).min(c - b).min(e - c)) as f64 / 100.0);
                }
            }
        }
    }
    assert!((best - 0.33).abs() < 1e-12);
    assert!(gap > 0.15, "{x:?}");
    assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn power_inflation_identity() {
    let mut rng = RngStream::new(61).rng();
    let pts: Vec<f64> = (0..500).map(|_| 10.0 + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    let d = DesignMatrix::new(PointSet::from_scalars(&pts), Provenance::Iid, "test").unwrap();
    let out = inflate_variance(&d, 1.0, Some(&[(9.4, 10.6)]), InflateMode::Power).unwrap();
    let k = cutpost::diagnostics::ks_two_sample(&out.points.column(0), &pts).unwrap().distance;
    assert!(k < 0.05, "{k}");
}

#[test]
fn linear_inflation_hits_ten_percent() {
    let mut rng = RngStream::new(62).rng();
    let pts: Vec<f64> = (0..200).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let d = DesignMatrix::new(PointSet::from_scalars(&pts), Provenance::Iid, "test").unwrap();
    let out = inflate_variance(&d, 0.10, None, InflateMode::Linear).unwrap();
    let (_, a) = mean_sd(&pts);
    let (_, b) = mean_sd(&out.points.column(0));
    assert!((b / a - 1.10).abs() < 1e-12);
}

fn grid(lo: f64, hi: f64, n: usize) -> PointSet {
    PointSet::from_scalars(&(0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect::<Vec<_>>())
}

#[test]
fn gp_reproduces_linear_conditional_mean() {
    let (cfg, _, _) = db();
    let sum_y = 10.0 + 1100.0;
    let (_, b, c) = db_conditional_constants(&cfg, sum_y);
    let x = grid(9.6, 10.4, 7);
    let y: Vec<f64> = x.column(0).iter().map(|g| b + c * g).collect();
    let range = (y[0] - y[6]).abs();
    let model = gp_fit(&x, &y, &GpConfig::default()).unwrap();
    let mut rng = RngStream::new(71).rng();
    let held: Vec<f64> = (0..100).map(|_| rng.random_range(9.6..10.4)).collect();
    let p = gp_predict(&model, &PointSet::from_scalars(&held)).unwrap();
    for (g, m) in held.iter().zip(&p.mean) {
        assert!((m - (b + c * g)).abs() < 1e-4 * range, "at {g}: {m}");
    }
    let fine = gp_predict(&model, &grid(9.6, 10.4, 401)).unwrap();
    for (g, m) in grid(9.6, 10.4, 401).column(0).iter().zip(&fine.mean) {
        assert!((m - (b + c * g)).abs() < 1e-3 * c.abs() * 0.8);
    }
}

#[test]
fn gp_interpolates_training_points() {
    let x = grid(0.0, 1.0, 9);
    let y: Vec<f64> = x.column(0).iter().map(|v| (6.0 * v).sin()).collect();
    let model = gp_fit(&x, &y, &GpConfig::default()).unwrap();
    let p = gp_predict(&model, &x).unwrap();
    for i in 0..9 {
        assert!((p.mean[i] - y[i]).abs() < 1e-6);
        assert!(p.sd[i] < 1e-4 * model.signal_variance().sqrt());
    }
}

#[test]
fn ds_with_many_locations_matches_cut() {
    let (_, problem, cut) = db();
    let draws = direct_sample(&problem, 10_000, 1, &DesignMethod::Iid, RngStream::new(81))
        .unwrap()
        .scoring_draws(0, RngStream::new(0))
        .unwrap();
    let k = ks_normal(&draws.column(0), &cut);
    assert!(k < 0.02, "{k}");
}

#[test]
fn ds_plug_in_matches_conditional() {
    let (cfg, problem, _) = db();
    let draws = direct_sample_at(&problem, &PointSet::from_scalars(&[10.0]), 10_000, RngStream::new(82))
        .unwrap()
        .scoring_draws(0, RngStream::new(0))
        .unwrap();
    let want = db_conditional(&cfg, 1110.0, 10.0).unwrap();
    let k = ks_normal(&draws.column(0), &want);
    assert!(k < 0.02, "{k}");
}

#[test]
fn ds_small_budget_is_worse() {
    let (_, problem, cut) = db();
    let mut small = Vec::new();
    for s in 0..25 {
        let d = direct_sample(&problem, 10, 1000, &DesignMethod::Iid, RngStream::new(100 + s)).unwrap();
        small.push(ks_normal(&d.scoring_draws(0, RngStream::new(0)).unwrap().column(0), &cut));
    }
    let big = direct_sample(&problem, 10_000, 1, &DesignMethod::Iid, RngStream::new(99)).unwrap();
    let big = ks_normal(&big.scoring_draws(0, RngStream::new(0)).unwrap().column(0), &cut);
    assert!(median(&small) > big, "{} vs {big}", median(&small));
}

#[test]
fn little_aggregation_of_a_normal_sample() {
    let x = sample_family(&FamilyParams::normal(1.0, 0.1).unwrap(), 20_000, &mut RngStream::new(83).rng()).unwrap();
    let CutApproximation::Mixture(m) = little_aggregate(&x).unwrap() else {
        panic!("expected a mixture");
    };
    let c = &m.components[0];
    assert!((c.values()[0] - 1.0).abs() < 5.0 * 0.1 / 20_000f64.sqrt());
    assert!((c.values()[1] - 0.1).abs() < 5.0 * 0.1 / 40_000f64.sqrt());
}

fn db_fits(problem: &ProblemSpec, l: usize, m: usize, stream: RngStream) -> Vec<LocationFit> {
    let mut cfg = EcpConfig::new(1, FamilyTag::Normal);
    cfg.m = m;
    let design = training_design(problem, &cfg, l, stream.child(0)).unwrap();
    fit_locations(problem, &cfg, &design.points, stream.child(1), 0).unwrap()
}

#[test]
fn bootstrap_shapes() {
    let (_, problem, _) = db();
    let fits = db_fits(&problem, 7, 200, RngStream::new(91));
    let t = ecp_bootstrap_augment(&fits, FamilyTag::Normal, 50, RngStream::new(92)).unwrap();
    assert_eq!(t.gammas.len(), 350);
    assert_eq!(t.params.len(), 350);
    for l in 0..7 {
        let block: Vec<f64> = (0..50).map(|b| t.params[l * 50 + b].values()[0]).collect();
        assert!((0..50).all(|b| t.gammas.row(l * 50 + b) == t.gammas.row(l * 50)));
        assert!(block.iter().any(|v| *v != block[0]));
    }
    let plain = ecp_bootstrap_augment(&fits, FamilyTag::Normal, 1, RngStream::new(92)).unwrap();
    for (f, p) in fits.iter().zip(&plain.params) {
        assert_eq!(f.params.values(), p.values());
    }
}

#[test]
fn bootstrap_spread_vanishes_with_m() {
    let (_, problem, _) = db();
    let fits = db_fits(&problem, 3, 1_000_000, RngStream::new(93));
    let t = ecp_bootstrap_augment(&fits, FamilyTag::Normal, 20, RngStream::new(94)).unwrap();
    for l in 0..3 {
        for j in 0..2 {
            let v: Vec<f64> = (0..20).map(|b| t.params[l * 20 + b].values()[j]).collect();
            let (m, s) = mean_sd(&v);
            assert!(s < 1e-2 * m.abs(), "location {l}, param {j}: sd {s}");
        }
    }
}

#[test]
fn acquisition_normal_against_mc() {
    let want = 0.04 + 1.959964f64.powi(2) * 0.01;
    assert!((acquisition_normal(0.0, 0.04, 1.0, 0.01, 0.975) - want).abs() < 1e-5);
    let mc = acquisition_mc(FamilyTag::Normal, &[0.0, 1.0], &[0.04, 0.01], &[1.0], 0.975, 1_000_000, &mut RngStream::new(101).rng()).unwrap();
    // The sample variance of n normals has sd var·√(2/n).
    assert!((mc.value - want).abs() < 3.0 * want * (2.0 / 1e6f64).sqrt() + 1e-4, "{}", mc.value);
}

#[test]
fn acquisition_weibull_against_mc() {
    let delta = acquisition_weibull(2.0, 0.01, 1.5, 0.02, 0.9).unwrap();
    let mc = acquisition_mc(FamilyTag::Weibull, &[2.0, 1.5], &[0.01, 0.02], &[1.0], 0.9, 1_000_000, &mut RngStream::new(102).rng()).unwrap();
    assert!((delta - mc.value).abs() < 0.25 * mc.value, "{delta} vs {}", mc.value);
}

#[test]
fn acquisition_mvn_against_mc() {
    let hat = [0.5, -0.2, 0.04, 0.09, 0.01];
    let tilde = [1e-4, 2e-4, 1e-6, 2e-6, 5e-7];
    let delta = acquisition_mvn(2, &hat, &tilde, &[1.0, 1.0], 0.9).unwrap();
    let mc = acquisition_mc(FamilyTag::MultivariateNormal(2), &hat, &tilde, &[1.0, 1.0], 0.9, 1_000_000, &mut RngStream::new(103).rng()).unwrap();
    assert!((delta - mc.value).abs() < 0.25 * mc.value, "{delta} vs {}", mc.value);
    let one = acquisition_mvn(1, &[1.0, 0.25], &[0.01, 1e-4], &[1.0], 0.9).unwrap();
    let norm = acquisition_normal(1.0, 0.01, 0.5, 1e-4 / (4.0 * 0.25), 0.9);
    assert!((one - norm).abs() < 0.1 * norm, "{one} vs {norm}");
}

#[test]
fn acquisition_mc_normal_converges() {
    let want = acquisition_normal(1.0, 0.02, 0.5, 0.005, 0.8);
    let mc = acquisition_mc(FamilyTag::Normal, &[1.0, 0.5], &[0.02, 0.005], &[1.0], 0.8, 100_000, &mut RngStream::new(104).rng()).unwrap();
    assert!((mc.value - want).abs() < 3.0 * want * (2.0 / 1e5f64).sqrt(), "{} vs {want}", mc.value);
}

#[test]
fn linear_combination_quantiles() {
    let p = FamilyParams::mvn(&[1.0, 2.0], &nalgebra::DMatrix::identity(2, 2)).unwrap();
    let q = linear_combination_quantile(&p, &[1.0, 1.0], 0.975).unwrap();
    assert!((q - (3.0 + 1.959964 * 2f64.sqrt())).abs() < 1e-5);
    let n = FamilyParams::normal(0.3, 2.0).unwrap();
    assert!((linear_combination_quantile(&n, &[1.0], 0.3).unwrap() - quantile(&n, 0.3).unwrap()).abs() < 1e-12);
}

#[test]
fn sequential_with_no_rounds_is_plain_ecp() {
    let (_, problem, _) = db();
    let mut ecp = EcpConfig::new(1, FamilyTag::Normal);
    ecp.l = 6;
    ecp.m = 300;
    ecp.big_m = 500;
    let a = ecp_sample(&problem, &ecp, RngStream::new(111)).unwrap();
    let b = sequential_ecp(&problem, &SeqConfig::new(ecp, 6), RngStream::new(111)).unwrap();
    assert!(b.trace.is_empty());
    let da = a.approximation.scoring_draws(1000, RngStream::new(5)).unwrap();
    let db = b.output.approximation.scoring_draws(1000, RngStream::new(5)).unwrap();
    assert_eq!(da.as_flat(), db.as_flat());
}

#[test]
fn acquisition_vanishes_at_training_points() {
    let (_, problem, _) = db();
    let mut ecp = EcpConfig::new(1, FamilyTag::Normal);
    ecp.l = 6;
    ecp.m = 300;
    ecp.big_m = 100;
    ecp.gp = GpConfig {
        nugget_mode: NuggetMode::Interpolating,
        ..GpConfig::default()
    };
    let out = ecp_sample(&problem, &ecp, RngStream::new(112)).unwrap();
    let score = |g: f64| {
        let (h, t) = psi_moments(&out.bank, &[g]);
        acquisition_normal(h[0], t[0], h[1], t[1], 0.9)
    };
    let at_train = score(out.fits[0].gamma[0]);
    let between = (0..50).map(|i| score(9.7 + 0.6 * i as f64 / 49.0)).fold(0.0, f64::max);
    assert!(at_train < 1e-6 * between, "{at_train} vs {between}");
}
