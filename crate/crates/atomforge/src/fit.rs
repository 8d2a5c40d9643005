//! Small dense least-squares machinery: enough for 3-4 parameter curve fits
//! without pulling in a full optimization stack.

use crate::error::{Error, Result};

/// Solve A x = b for small dense systems, in place, with partial pivoting.
/// `a` is row-major n×n.
pub fn solve_linear(a: &mut [f64], b: &mut [f64], n: usize) -> Result<Vec<f64>> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n);
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * n + col].abs() < 1e-300 {
            return Err(Error::Model("singular linear system".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col * n + k] * x[k];
        }
        x[col] = acc / a[col * n + col];
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative cost-improvement threshold for convergence.
    pub cost_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            cost_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmFit {
    pub params: Vec<f64>,
    /// Final half sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
}

/// Levenberg-Marquardt with a forward-difference Jacobian. `residuals`
/// fills `out` (length n_res) given the parameter vector.
pub fn levenberg_marquardt(
    n_res: usize,
    p0: &[f64],
    opts: LmOptions,
    residuals: impl Fn(&[f64], &mut [f64]),
) -> Result<LmFit> {
    let n_par = p0.len();
    if n_res < n_par {
        return Err(Error::Model(format!(
            "{n_res} residuals cannot determine {n_par} parameters"
        )));
    }
    let mut params = p0.to_vec();
    let mut res = vec![0.0; n_res];
    residuals(&params, &mut res);
    let mut cost = 0.5 * res.iter().map(|r| r * r).sum::<f64>();
    if !cost.is_finite() {
        return Err(Error::FitDiverged("initial residuals not finite".into()));
    }

    let mut jac = vec![0.0; n_res * n_par];
    let mut res_h = vec![0.0; n_res];
    let mut lambda = 1e-3;
    let mut iterations = 0;

    for iter in 0..opts.max_iterations {
        iterations = iter + 1;
        // Jacobian by forward differences.
        for j in 0..n_par {
            let h = 1e-7 * params[j].abs().max(1e-4);
            let mut bumped = params.clone();
            bumped[j] += h;
            residuals(&bumped, &mut res_h);
            for i in 0..n_res {
                jac[i * n_par + j] = (res_h[i] - res[i]) / h;
            }
        }
        // Normal equations JtJ + λ diag(JtJ).
        let mut jtj = vec![0.0; n_par * n_par];
        let mut jtr = vec![0.0; n_par];
        for i in 0..n_res {
            for a in 0..n_par {
                let ja = jac[i * n_par + a];
                jtr[a] += ja * res[i];
                for b in a..n_par {
                    jtj[a * n_par + b] += ja * jac[i * n_par + b];
                }
            }
        }
        for a in 0..n_par {
            for b in 0..a {
                jtj[a * n_par + b] = jtj[b * n_par + a];
            }
        }

        let mut improved = false;
        for _ in 0..12 {
            let mut lhs = jtj.clone();
            for a in 0..n_par {
                lhs[a * n_par + a] += lambda * jtj[a * n_par + a].max(1e-12);
            }
            let mut rhs: Vec<f64> = jtr.iter().map(|g| -g).collect();
            let step = match solve_linear(&mut lhs, &mut rhs, n_par) {
                Ok(s) => s,
                Err(_) => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial: Vec<f64> = params.iter().zip(&step).map(|(p, s)| p + s).collect();
            residuals(&trial, &mut res_h);
            let trial_cost = 0.5 * res_h.iter().map(|r| r * r).sum::<f64>();
            if trial_cost.is_finite() && trial_cost < cost {
                let rel_drop = (cost - trial_cost) / cost.max(1e-300);
                params = trial;
                std::mem::swap(&mut res, &mut res_h);
                cost = trial_cost;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel_drop < opts.cost_tolerance {
                    return Ok(LmFit {
                        params,
                        cost,
                        iterations,
                    });
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // Damping exhausted: we are at a (local) minimum.
            return Ok(LmFit {
                params,
                cost,
                iterations,
            });
        }
    }
    Ok(LmFit {
        params,
        cost,
        iterations,
    })
}

/// Least squares min ‖A w - y‖ subject to w ≥ 0 and Σw = 1, by enumerating
/// active sets. A is row-major n×k with k small (≤ 16 subsets at k = 4).
pub fn simplex_least_squares(a: &[f64], y: &[f64], n: usize, k: usize) -> Result<Vec<f64>> {
    assert_eq!(a.len(), n * k);
    assert_eq!(y.len(), n);
    if n < k {
        return Err(Error::Model(format!(
            "{n} samples cannot determine {k} mixture weights"
        )));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    // Subsets of components forced to zero; at least one component free.
    for mask in 0..(1u32 << k) - 1 {
        let free: Vec<usize> = (0..k).filter(|i| mask & (1 << i) == 0).collect();
        let Some(w) = solve_equality_constrained(a, y, n, k, &free) else {
            continue;
        };
        if w.iter().any(|&wi| wi < -1e-10) {
            continue;
        }
        let mut cost = 0.0;
        for i in 0..n {
            let mut pred = 0.0;
            for j in 0..k {
                pred += a[i * k + j] * w[j];
            }
            cost += (pred - y[i]).powi(2);
        }
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, w));
        }
    }
    let (_, mut w) = best.ok_or_else(|| Error::Model("no feasible simplex solution".into()))?;
    for wi in &mut w {
        *wi = wi.max(0.0);
    }
    // Renormalize away the clamp's rounding dust.
    let sum: f64 = w.iter().sum();
    for wi in &mut w {
        *wi /= sum;
    }
    Ok(w)
}

/// Minimize ‖A w - y‖ with w zero outside `free` and Σ_{free} w = 1.
/// Eliminates the constraint through the last free weight.
fn solve_equality_constrained(
    a: &[f64],
    y: &[f64],
    n: usize,
    k: usize,
    free: &[usize],
) -> Option<Vec<f64>> {
    let m = free.len();
    let last = free[m - 1];
    if m == 1 {
        let mut w = vec![0.0; k];
        w[last] = 1.0;
        return Some(w);
    }
    // Substitute w_last = 1 - Σ others: rows become
    // Σ_j (A_ij - A_il) w_j = y_i - A_il.
    let red = m - 1;
    let mut jtj = vec![0.0; red * red];
    let mut jty = vec![0.0; red];
    for i in 0..n {
        let ail = a[i * k + last];
        let yi = y[i] - ail;
        for (jj, &j) in free[..red].iter().enumerate() {
            let aij = a[i * k + j] - ail;
            jty[jj] += aij * yi;
            for (uu, &u) in free[..red].iter().enumerate().skip(jj) {
                jtj[jj * red + uu] += aij * (a[i * k + u] - ail);
            }
        }
    }
    for jj in 0..red {
        for uu in 0..jj {
            jtj[jj * red + uu] = jtj[uu * red + jj];
        }
    }
    let sol = solve_linear(&mut jtj, &mut jty, red).ok()?;
    let mut w = vec![0.0; k];
    let mut acc = 0.0;
    for (jj, &j) in free[..red].iter().enumerate() {
        w[j] = sol[jj];
        acc += sol[jj];
    }
    w[last] = 1.0 - acc;
    Some(w)
}
