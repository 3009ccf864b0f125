#![allow(dead_code)]

use cutpost::problems::DbConfig;
use rand::Rng;

/// Adaptive Simpson on `[a, b]` to absolute tolerance `tol`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64, whole: f64, m: f64, fm: f64, tol: f64, depth: u32) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1) + rec(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    rec(f, a, fa, b, fb, whole, m, fm, tol, 50)
}

/// Φ by series and continued fraction, independent of the library's erf.
pub fn phi(x: f64) -> f64 {
    0.5 * erfc_ref(-x / std::f64::consts::SQRT_2)
}

fn erfc_ref(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc_ref(-x);
    }
    if x < 2.0 {
        // Maclaurin series of erf.
        let mut sum = 0.0;
        let mut term = x;
        let mut n = 0.0;
        loop {
            let t = term / (2.0 * n + 1.0);
            sum += t;
            if t.abs() <= 1e-17 * sum.abs() {
                break;
            }
            n += 1.0;
            term *= -x * x / n;
        }
        1.0 - 2.0 / std::f64::consts::PI.sqrt() * sum
    } else {
        // Lentz continued fraction.
        let mut f = x;
        let mut c = x;
        let mut d = 0.0;
        for k in 1..20_000 {
            let a = k as f64 / 2.0;
            d = x + a * d;
            d = 1.0 / d;
            c = x + a / c;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (-x * x).exp() / (f * std::f64::consts::PI.sqrt())
    }
}

pub fn normal_pdf(x: f64, mu: f64, sd: f64) -> f64 {
    let z = (x - mu) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Two-sample KS by evaluating both ECDFs at every observation.
pub fn ks_brute(a: &[f64], b: &[f64]) -> f64 {
    let ecdf = |s: &[f64], x: f64| s.iter().filter(|v| **v <= x).count() as f64 / s.len() as f64;
    a.iter().chain(b).map(|&x| (ecdf(a, x) - ecdf(b, x)).abs()).fold(0.0, f64::max)
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// `∫ f` over `[a, b]` split into `pieces` panels, so narrow peaks are not missed.
pub fn integrate_split(f: &dyn Fn(f64) -> f64, a: f64, b: f64, pieces: usize, tol: f64) -> f64 {
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| integrate(f, a + i as f64 * h, a + (i + 1) as f64 * h, tol / pieces as f64))
        .sum()
}

/// The DB model written out from its generative description.
pub struct DbOracle {
    n1: f64,
    n2: f64,
    s2: f64,
    tau: f64,
    mu_a: f64,
    mu_g: f64,
    sd_g: f64,
    y1: f64,
    y2: f64,
}

impl DbOracle {
    pub fn new(cfg: &DbConfig, y1: f64, y2: f64) -> Self {
        DbOracle {
            n1: cfg.n1 as f64,
            n2: cfg.n2 as f64,
            s2: cfg.sigma * cfg.sigma,
            tau: if cfg.sigma_alpha.is_infinite() { 0.0 } else { cfg.sigma_alpha.powi(-2) },
            mu_a: cfg.mu_alpha,
            mu_g: cfg.mu_gamma,
            sd_g: cfg.sigma_gamma,
            y1,
            y2,
        }
    }

    /// Log likelihood of the group means plus log prior of `α`.
    pub fn log_joint_alpha(&self, a: f64, g: f64) -> f64 {
        -0.5 * self.n1 * (self.y1 - a).powi(2) / self.s2 - 0.5 * self.n2 * (self.y2 - a - g).powi(2) / self.s2
            - 0.5 * self.tau * (a - self.mu_a).powi(2)
    }

    /// Mean and variance of `α | γ, y` by quadrature over `α`, plus the log
    /// of the unnormalized `α` integral.
    pub fn conditional_quad(&self, g: f64) -> (f64, f64, f64) {
        let (centre, _, _) = self.conditional(g);
        let prec = (self.n1 + self.n2) / self.s2 + self.tau;
        let w = 12.0 / prec.sqrt();
        let peak = self.log_joint_alpha(centre, g);
        let f = |k: i32| move |a: f64| (self.log_joint_alpha(a, g) - peak).exp() * (a - centre).powi(k);
        let z = integrate(&f(0), centre - w, centre + w, 1e-13);
        let m1 = integrate(&f(1), centre - w, centre + w, 1e-15) / z;
        let m2 = integrate(&f(2), centre - w, centre + w, 1e-17) / z;
        (centre + m1, m2 - m1 * m1, peak + z.ln())
    }

    /// The same three quantities by completing the square in `α`.
    pub fn conditional(&self, g: f64) -> (f64, f64, f64) {
        let prec = (self.n1 + self.n2) / self.s2 + self.tau;
        let centre = ((self.n1 * self.y1 + self.n2 * (self.y2 - g)) / self.s2 + self.tau * self.mu_a) / prec;
        let log_z = self.log_joint_alpha(centre, g) + 0.5 * (2.0 * std::f64::consts::PI / prec).ln();
        (centre, 1.0 / prec, log_z)
    }

    /// Mean and sd of `∫ π(α | γ, y) w(γ) dγ` for the normalized weight `w`.
    pub fn mix(&self, log_w: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
        let grid: Vec<f64> = (0..=400).map(|i| lo + (hi - lo) * i as f64 / 400.0).collect();
        let top = grid.iter().map(|g| log_w(*g)).fold(f64::NEG_INFINITY, f64::max);
        let w = |g: f64| (log_w(g) - top).exp();
        let z = integrate_split(&w, lo, hi, 16, 1e-13);
        let m = integrate_split(&|g| w(g) * self.conditional(g).0, lo, hi, 16, 1e-13) / z;
        let s = integrate_split(
            &|g| {
                let (cm, cv, _) = self.conditional(g);
                w(g) * (cv + cm * cm)
            },
            lo,
            hi,
            16,
            1e-13,
        ) / z;
        (m, (s - m * m).sqrt())
    }

    pub fn cut(&self) -> (f64, f64) {
        let (mg, sg) = (self.mu_g, self.sd_g);
        self.mix(&|g| -0.5 * ((g - mg) / sg).powi(2), mg - 12.0 * sg, mg + 12.0 * sg)
    }

    /// Full posterior: `γ` weighted by prior times the `α`-marginal likelihood.
    pub fn full(&self) -> (f64, f64) {
        let (mg, sg) = (self.mu_g, self.sd_g);
        self.mix(
            &|g| -0.5 * ((g - mg) / sg).powi(2) + self.conditional(g).2,
            mg - 12.0 * sg,
            mg + 12.0 * sg,
        )
    }
}

pub fn random_db(rng: &mut impl Rng) -> (DbConfig, f64, f64) {
    let cfg = DbConfig {
        n1: rng.random_range(1..30),
        n2: rng.random_range(0..150),
        sigma: rng.random_range(0.05..2.0),
        mu_alpha: rng.random_range(-5.0..5.0),
        sigma_alpha: if rng.random_bool(0.2) { f64::INFINITY } else { rng.random_range(0.1..10.0) },
        mu_gamma: rng.random_range(-10.0..10.0),
        sigma_gamma: rng.random_range(0.05..2.0),
        ..DbConfig::default()
    };
    let y1 = cfg.mu_alpha + rng.random_range(-1.0..1.0);
    let y2 = y1 + cfg.mu_gamma + rng.random_range(-1.0..1.0);
    (cfg, y1, y2)
}

