//! Box-constrained Levenberg-Marquardt on a residual vector.
//!
//! The Jacobian is formed by central differences. Bounds are enforced by
//! projecting every trial point onto the box and freezing variables whose
//! bound is active under the current gradient.

use nalgebra::{DMatrix, DVector};

use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy)]
pub struct LmOptions<T> {
    pub max_iterations: usize,
    /// Stop when the projected gradient's largest component falls below this.
    pub gradient_tol: T,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub cost_tol: T,
    /// Stop when the step is shorter than `step_tol·(1 + ‖x‖)`.
    pub step_tol: T,
    /// Absolute perturbation used for the central-difference Jacobian.
    pub diff_step: T,
    pub initial_damping: T,
}

impl<T: Real> Default for LmOptions<T> {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tol: lit(1e-10),
            cost_tol: lit(1e-12),
            step_tol: lit(1e-14),
            diff_step: lit(1e-7),
            initial_damping: lit(1e-3),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmReport<T: Real> {
    pub params: DVector<T>,
    pub cost: T,
    pub initial_cost: T,
    /// Number of accepted steps.
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Bounds<T: Real> {
    pub lower: DVector<T>,
    pub upper: DVector<T>,
}

impl<T: Real> Bounds<T> {
    pub fn project(&self, x: &mut DVector<T>) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn contains(&self, x: &DVector<T>) -> bool {
        (0..x.len()).all(|i| x[i] >= self.lower[i] && x[i] <= self.upper[i])
    }
}

fn sum_sq<T: Real>(r: &DVector<T>) -> T {
    r.iter().fold(T::zero(), |acc, v| acc + *v * *v)
}

pub fn numeric_jacobian<T, F>(residual: &F, x: &DVector<T>, step: T) -> DMatrix<T>
where
    T: Real,
    F: Fn(&DVector<T>) -> DVector<T>,
{
    let r0 = residual(x);
    let mut jac = DMatrix::zeros(r0.len(), x.len());
    let two = lit::<T>(2.0);
    let mut xp = x.clone();
    for j in 0..x.len() {
        let orig = xp[j];
        xp[j] = orig + step;
        let rp = residual(&xp);
        xp[j] = orig - step;
        let rm = residual(&xp);
        xp[j] = orig;
        for i in 0..r0.len() {
            jac[(i, j)] = (rp[i] - rm[i]) / (two * step);
        }
    }
    jac
}

/// Minimizes `‖residual(x)‖²` starting at `x0`.
pub fn minimize<T, F>(
    residual: F,
    x0: &DVector<T>,
    bounds: Option<&Bounds<T>>,
    opts: &LmOptions<T>,
) -> LmReport<T>
where
    T: Real,
    F: Fn(&DVector<T>) -> DVector<T>,
{
    let n = x0.len();
    let mut x = x0.clone();
    if let Some(b) = bounds {
        b.project(&mut x);
    }
    let mut cost = sum_sq(&residual(&x));
    let initial_cost = cost;
    let mut damping = opts.initial_damping;
    let mut iterations = 0;
    let mut converged = false;
    let tiny = lit::<T>(1e-30);
    let max_damping = lit::<T>(1e16);
    let ten = lit::<T>(10.0);

    if !cost.is_finite() {
        return LmReport {
            params: x,
            cost,
            initial_cost,
            iterations,
            converged: false,
        };
    }

    'outer: while iterations < opts.max_iterations {
        if cost == T::zero() {
            converged = true;
            break;
        }
        let r = residual(&x);
        let jac = numeric_jacobian(&residual, &x, opts.diff_step);
        let grad = jac.transpose() * &r;
        let jtj = jac.transpose() * &jac;

        let mut active = vec![false; n];
        if let Some(b) = bounds {
            for i in 0..n {
                active[i] = (x[i] <= b.lower[i] && grad[i] > T::zero())
                    || (x[i] >= b.upper[i] && grad[i] < T::zero());
            }
        }
        let gmax = (0..n)
            .filter(|i| !active[*i])
            .fold(T::zero(), |m, i| m.max(grad[i].abs()));
        if gmax < opts.gradient_tol {
            converged = true;
            break;
        }

        loop {
            let mut a = jtj.clone();
            let mut rhs = -grad.clone();
            for i in 0..n {
                let d = jtj[(i, i)].max(tiny);
                a[(i, i)] += damping * d;
                if active[i] {
                    for k in 0..n {
                        a[(i, k)] = T::zero();
                        a[(k, i)] = T::zero();
                    }
                    a[(i, i)] = T::one();
                    rhs[i] = T::zero();
                }
            }
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => match a.lu().solve(&rhs) {
                    Some(s) => s,
                    None => {
                        damping *= ten;
                        if damping > max_damping {
                            converged = true;
                            break 'outer;
                        }
                        continue;
                    }
                },
            };
            let mut x_new = &x + &step;
            if let Some(b) = bounds {
                b.project(&mut x_new);
            }
            let cost_new = sum_sq(&residual(&x_new));
            if cost_new.is_finite() && cost_new < cost {
                let moved = (&x_new - &x).norm();
                let decrease = cost - cost_new;
                x = x_new;
                cost = cost_new;
                iterations += 1;
                damping = (damping / ten).max(lit(1e-12));
                if decrease <= opts.cost_tol * (cost + decrease)
                    || moved <= opts.step_tol * (T::one() + x.norm())
                {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            damping *= ten;
            if damping > max_damping {
                // no descent direction left at working precision
                converged = true;
                break 'outer;
            }
        }
    }

    LmReport {
        params: x,
        cost,
        initial_cost,
        iterations,
        converged,
    }
}
