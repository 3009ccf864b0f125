//! Small-dimensional quasi-Newton minimization with optional box constraints.
//!
//! Projected BFGS: the search direction is restricted to the free variables
//! (those not pinned at a bound by the gradient), trial points are projected
//! back onto the box, and step lengths come from Armijo backtracking.

#[derive(Clone, Debug)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Convergence on the projected-gradient infinity norm.
    pub gtol: f64,
    /// Convergence on relative objective change between iterations.
    pub ftol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 200,
            gtol: 1e-6,
            ftol: 1e-12,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Central-difference gradient with per-coordinate step `cbrt(eps)·max(1, |x_i|)`.
pub fn numerical_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> Vec<f64> {
    let h0 = f64::EPSILON.cbrt();
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = h0 * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn project(x: &mut [f64], bounds: Option<&[(f64, f64)]>) {
    if let Some(b) = bounds {
        for (xi, &(lo, hi)) in x.iter_mut().zip(b) {
            *xi = xi.clamp(lo, hi);
        }
    }
}

fn free_mask(x: &[f64], g: &[f64], bounds: Option<&[(f64, f64)]>) -> Vec<bool> {
    match bounds {
        None => vec![true; x.len()],
        Some(b) => x
            .iter()
            .zip(g)
            .zip(b)
            .map(|((&xi, &gi), &(lo, hi))| !((xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0)))
            .collect(),
    }
}

fn projected_gradient_norm(x: &[f64], g: &[f64], bounds: Option<&[(f64, f64)]>) -> f64 {
    let mut y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
    project(&mut y, bounds);
    y.iter()
        .zip(x)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Minimizes `f` from `x0`. Non-finite objective values are treated as `+∞`
/// and rejected by the line search.
pub fn minimize<F, G>(
    f: F,
    grad: G,
    x0: &[f64],
    bounds: Option<&[(f64, f64)]>,
    opts: &BfgsOptions,
) -> Minimum
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut x = x0.to_vec();
    project(&mut x, bounds);
    let mut fx = eval(&x);
    if !fx.is_finite() {
        return Minimum {
            x,
            f: fx,
            iterations: 0,
            converged: false,
        };
    }
    let mut g = grad(&x);
    let mut h = identity(n);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        if projected_gradient_norm(&x, &g, bounds) < opts.gtol {
            converged = true;
            break;
        }
        let free = free_mask(&x, &g, bounds);
        let mut d = direction(&h, &g, &free);
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            h = identity(n);
            d = direction(&h, &g, &free);
            slope = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                converged = true;
                break;
            }
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            project(&mut trial, bounds);
            let ft = eval(&trial);
            let actual: f64 = trial.iter().zip(&x).zip(&g).map(|((a, b), c)| (a - b) * c).sum();
            if ft.is_finite() && ft <= fx + 1e-4 * actual.min(0.0) {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            // Line search failed; a restart from steepest descent has already been tried
            // when the BFGS matrix was reset, so treat this as a stationary point.
            if h != identity(n) {
                h = identity(n);
                continue;
            }
            converged = projected_gradient_norm(&x, &g, bounds) < opts.gtol.sqrt();
            break;
        };
        let g_new = grad(&x_new);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-12 * s_norm * y_norm {
            bfgs_update(&mut h, &s, &y, sy);
        }
        let rel = (fx - f_new).abs() / fx.abs().max(f_new.abs()).max(1.0);
        x = x_new;
        fx = f_new;
        g = g_new;
        if rel < opts.ftol {
            converged = true;
            break;
        }
    }
    Minimum {
        x,
        f: fx,
        iterations,
        converged,
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn direction(h: &[Vec<f64>], g: &[f64], free: &[bool]) -> Vec<f64> {
    let n = g.len();
    (0..n)
        .map(|i| {
            if !free[i] {
                return 0.0;
            }
            -(0..n).filter(|&j| free[j]).map(|j| h[i][j] * g[j]).sum::<f64>()
        })
        .collect()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_unconstrained() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let g = |x: &[f64]| {
            vec![
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ]
        };
        let opts = BfgsOptions {
            max_iter: 500,
            gtol: 1e-9,
            ftol: 0.0,
        };
        let m = minimize(f, g, &[-1.2, 1.0], None, &opts);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{m:?}");
    }

    #[test]
    fn bound_is_active() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2);
        let m = minimize(
            f,
            |x| numerical_gradient(&f, x),
            &[0.0, 0.0],
            Some(&[(-1.0, 2.0), (0.0, 5.0)]),
            &BfgsOptions::default(),
        );
        assert!((m.x[0] - 2.0).abs() < 1e-9 && m.x[1].abs() < 1e-9, "{m:?}");
    }
}
