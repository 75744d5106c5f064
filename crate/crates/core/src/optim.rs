//! Accelerated proximal gradient with backtracking, adaptive step growth and
//! gradient-based restart, plus golden-section search for 1-D convex problems.

use crate::vector::{dot, norm2, sub};

/// Composite objective `f(x) + g(x)` with smooth `f` (possibly with a
/// restricted domain) and prox-friendly `g`.
pub(crate) trait Composite {
    /// Value and gradient of `f` at `x`; `None` outside the domain.
    fn smooth(&self, x: &[f64], grad: &mut [f64]) -> Option<f64>;
    /// Value of `f` at `x` only.
    fn smooth_value(&self, x: &[f64]) -> Option<f64> {
        let mut g = vec![0.0; x.len()];
        self.smooth(x, &mut g)
    }
    fn nonsmooth(&self, x: &[f64]) -> f64;
    /// `argmin_u g(u) + ‖u - v‖²/(2t)`.
    fn prox(&self, v: &[f64], t: f64) -> Vec<f64>;
}

#[derive(Debug, Clone)]
pub(crate) struct ApgOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub initial_step: f64,
    pub shrink: f64,
    pub grow: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct ApgResult {
    pub x: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f + g` from a domain point `x0`.
///
/// `observe` is called on each accepted iterate with its objective value.
pub(crate) fn minimize(
    problem: &impl Composite,
    x0: Vec<f64>,
    opts: &ApgOptions,
    mut observe: impl FnMut(&[f64], f64),
) -> Option<ApgResult> {
    let n = x0.len();
    let mut x = x0;
    let mut f_x = problem.smooth_value(&x)? + problem.nonsmooth(&x);
    observe(&x, f_x);
    let mut y = x.clone();
    let mut momentum = 1.0_f64;
    let mut step = opts.initial_step;
    let mut grad = vec![0.0; n];
    let mut residual = f64::INFINITY;

    for k in 0..opts.max_iterations {
        let f_y = match problem.smooth(&y, &mut grad) {
            Some(v) => v,
            None => {
                y.clone_from(&x);
                momentum = 1.0;
                problem.smooth(&y, &mut grad)?
            }
        };
        let (x_new, f_new) = loop {
            let trial: Vec<f64> = y.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
            let cand = problem.prox(&trial, step);
            if let Some(fc) = problem.smooth_value(&cand) {
                let diff = sub(&cand, &y);
                let model = f_y + dot(&grad, &diff) + dot(&diff, &diff) / (2.0 * step);
                if fc <= model + 1e-15 * f_y.abs().max(1.0) {
                    break (cand, fc);
                }
            }
            step *= opts.shrink;
            if step < 1e-300 {
                return Some(ApgResult {
                    x,
                    residual,
                    iterations: k,
                    converged: false,
                });
            }
        };
        let gap = sub(&x_new, &y);
        residual = norm2(&gap) / step;
        let total_new = f_new + problem.nonsmooth(&x_new);
        let moved = sub(&x_new, &x);
        if dot(&gap, &moved) < 0.0 {
            // gradient restart: the momentum points uphill
            momentum = 1.0;
            y.clone_from(&x_new);
        } else {
            let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / next;
            y = x_new
                .iter()
                .zip(&moved)
                .map(|(a, m)| a + beta * m)
                .collect();
            momentum = next;
        }
        x = x_new;
        f_x = total_new;
        observe(&x, f_x);
        if residual <= opts.tolerance {
            return Some(ApgResult {
                x,
                residual,
                iterations: k + 1,
                converged: true,
            });
        }
        step *= opts.grow;
    }
    Some(ApgResult {
        x,
        residual,
        iterations: opts.max_iterations,
        converged: residual <= opts.tolerance,
    })
}

/// Golden-section search for the minimizer of a convex function on `[lo, hi]`.
/// Returns `(argmin, value)` among all evaluated points.
pub(crate) fn golden_section<E>(
    mut f: impl FnMut(f64) -> Result<f64, E>,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<(f64, f64), E> {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
            if fc < best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
            if fd < best.1 {
                best = (d, fd);
            }
        }
    }
    for end in [lo, hi] {
        let fe = f(end)?;
        if fe < best.1 {
            best = (end, fe);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Lasso;
    impl Composite for Lasso {
        fn smooth(&self, x: &[f64], g: &mut [f64]) -> Option<f64> {
            // ½(x₀ - 3)² + 5(x₁ + 1)²
            g[0] = x[0] - 3.0;
            g[1] = 10.0 * (x[1] + 1.0);
            Some(0.5 * (x[0] - 3.0).powi(2) + 5.0 * (x[1] + 1.0).powi(2))
        }
        fn nonsmooth(&self, x: &[f64]) -> f64 {
            x[0].abs() + x[1].abs()
        }
        fn prox(&self, v: &[f64], t: f64) -> Vec<f64> {
            v.iter().map(|a| a.signum() * (a.abs() - t).max(0.0)).collect()
        }
    }

    #[test]
    fn soft_threshold_solution() {
        let opts = ApgOptions {
            tolerance: 1e-10,
            max_iterations: 10_000,
            initial_step: 1.0,
            shrink: 0.5,
            grow: 1.25,
        };
        let res = minimize(&Lasso, vec![0.0, 0.0], &opts, |_, _| {}).unwrap();
        assert!(res.converged);
        assert!((res.x[0] - 2.0).abs() < 1e-8);
        assert!((res.x[1] + 0.9).abs() < 1e-8);
    }

    #[test]
    fn golden_section_finds_kink() {
        let (x, v) = golden_section(
            |t| Ok::<_, ()>((t - 0.3).abs() + 1.0),
            -2.0,
            5.0,
            1e-9,
        )
        .unwrap();
        assert!((x - 0.3).abs() < 1e-8);
        assert!((v - 1.0).abs() < 1e-8);
    }
}
