//! Small unconstrained minimizers: BFGS with backtracking line search and
//! a Nelder-Mead fallback for when the line search stalls.

/// Outcome of a minimization. `converged` means the gradient norm met the
/// tolerance, not merely that iterations ran out.
#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Objective returning (value, gradient).
pub type ValueGrad<'a> = &'a dyn Fn(&[f64]) -> (f64, Vec<f64>);

/// BFGS on `f`. Stops when the gradient L2 norm falls to `tol`.
pub fn bfgs(f: ValueGrad<'_>, x0: &[f64], tol: f64, max_iter: usize) -> OptimResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut grad) = f(&x);
    // Inverse Hessian approximation, row-major.
    let mut h = identity(n);
    let mut iterations = 0;
    let mut stagnant = 0usize;

    while iterations < max_iter {
        if norm(&grad) <= tol {
            return OptimResult {
                x,
                iterations,
                converged: true,
            };
        }
        iterations += 1;

        // Search direction d = -H g.
        let mut d = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                d[i] -= h[i * n + j] * grad[j];
            }
        }
        let mut slope: f64 = d.iter().zip(&grad).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            // Not a descent direction; reset to steepest descent.
            h = identity(n);
            for i in 0..n {
                d[i] = -grad[i];
            }
            slope = -grad.iter().map(|g| g * g).sum::<f64>();
        }

        // Backtracking Armijo line search.
        let mut alpha = 1.0;
        let mut ok = false;
        let mut x_new = x.clone();
        let mut fx_new = fx;
        let mut grad_new = grad.clone();
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + alpha * d[i];
            }
            let (fv, gv) = f(&x_new);
            if fv.is_finite() && fv <= fx + 1e-4 * alpha * slope {
                fx_new = fv;
                grad_new = gv;
                ok = true;
                break;
            }
            alpha *= 0.5;
        }
        if !ok {
            let g_norm = norm(&grad);
            return OptimResult {
                x,
                iterations,
                converged: g_norm <= tol,
            };
        }

        // BFGS inverse update with curvature guard.
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 * norm(&s) * norm(&y) {
            let rho = 1.0 / sy;
            // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            let mut hy = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    hy[i] += h[i * n + j] * y[j];
                }
            }
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            let mut h_next = h.clone();
            for i in 0..n {
                for j in 0..n {
                    h_next[i * n + j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                        + rho * rho * yhy * s[i] * s[j]
                        + rho * s[i] * s[j];
                }
            }
            h = h_next;
        }

        // Steps at floating-point resolution cannot make progress the
        // Armijo test can certify; stop and let the caller polish.
        let step_norm = norm(&s);
        if step_norm <= 1e-12 * (1.0 + norm(&x)) {
            stagnant += 1;
        } else {
            stagnant = 0;
        }
        x = x_new;
        fx = fx_new;
        grad = grad_new;
        if stagnant >= 2 {
            break;
        }
    }

    let g_norm = norm(&grad);
    OptimResult {
        x,
        iterations,
        converged: g_norm <= tol,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

/// Nelder-Mead simplex on a value-only objective.
pub fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    initial_step: f64,
    max_evals: usize,
) -> Vec<f64> {
    let n = x0.len();
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += initial_step.max(1e-4 * x0[i].abs());
        simplex.push(v);
    }
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
    let mut evals = values.len();

    while evals < max_evals {
        // Order best to worst.
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        let ordered: Vec<Vec<f64>> = idx.iter().map(|&i| simplex[i].clone()).collect();
        let ordered_vals: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
        simplex = ordered;
        values = ordered_vals;

        if (values[n] - values[0]).abs() <= 1e-12 * (values[0].abs() + 1e-12) {
            break;
        }

        // Centroid of all but the worst.
        let mut centroid = vec![0.0; n];
        for v in simplex.iter().take(n) {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }

        let worst = simplex[n].clone();
        let reflect: Vec<f64> = (0..n)
            .map(|i| centroid[i] + alpha * (centroid[i] - worst[i]))
            .collect();
        let f_reflect = eval(&reflect);
        evals += 1;

        if f_reflect < values[0] {
            let expand: Vec<f64> = (0..n)
                .map(|i| centroid[i] + gamma * (reflect[i] - centroid[i]))
                .collect();
            let f_expand = eval(&expand);
            evals += 1;
            if f_expand < f_reflect {
                simplex[n] = expand;
                values[n] = f_expand;
            } else {
                simplex[n] = reflect;
                values[n] = f_reflect;
            }
        } else if f_reflect < values[n - 1] {
            simplex[n] = reflect;
            values[n] = f_reflect;
        } else {
            let contract: Vec<f64> = (0..n)
                .map(|i| centroid[i] + rho * (worst[i] - centroid[i]))
                .collect();
            let f_contract = eval(&contract);
            evals += 1;
            if f_contract < values[n] {
                simplex[n] = contract;
                values[n] = f_contract;
            } else {
                // Shrink toward the best vertex.
                let best = simplex[0].clone();
                for k in 1..=n {
                    for (x, b) in simplex[k].iter_mut().zip(&best) {
                        *x = b + sigma * (*x - b);
                    }
                    values[k] = eval(&simplex[k]);
                    evals += 1;
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..=n {
        if values[i] < values[best] {
            best = i;
        }
    }
    simplex.swap_remove(best)
}

/// Damped Newton iteration on the gradient itself: drives the gradient
/// norm down past the floor where value-based line searches stall on
/// floating-point resolution. The Jacobian of the (analytic) gradient is
/// taken by forward differences.
pub fn newton_polish(
    grad: &dyn Fn(&[f64]) -> Vec<f64>,
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64, usize) {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = grad(&x);
    let mut g_norm = norm(&g);
    let mut iterations = 0;

    while iterations < max_iter && g_norm > tol {
        iterations += 1;
        // Forward-difference Jacobian of the gradient (column-major build).
        let mut jac = vec![0.0; n * n];
        for k in 0..n {
            let h = 1e-6 * x[k].abs().max(1.0);
            let mut xk = x.clone();
            xk[k] += h;
            let gk = grad(&xk);
            for r in 0..n {
                jac[r * n + k] = (gk[r] - g[r]) / h;
            }
        }
        let mut delta = match solve_linear(&jac, &g, n) {
            Some(d) => d.iter().map(|v| -v).collect::<Vec<f64>>(),
            None => g.iter().map(|v| -v).collect(),
        };
        // Cap the step so a near-singular Jacobian cannot fling the
        // iterate out of the basin.
        let step = norm(&delta);
        if step > 1.0 {
            for d in &mut delta {
                *d /= step;
            }
        }

        let mut improved = false;
        let mut lambda = 1.0;
        for _ in 0..8 {
            let xt: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + lambda * d).collect();
            let gt = grad(&xt);
            let gt_norm = norm(&gt);
            if gt_norm.is_finite() && gt_norm < g_norm {
                x = xt;
                g = gt;
                g_norm = gt_norm;
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (x, g_norm, iterations)
}

/// Gaussian elimination with partial pivoting for tiny dense systems.
fn solve_linear(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let mut pivot = col;
        for r in (col + 1)..n {
            if m[r * n + col].abs() > m[pivot * n + col].abs() {
                pivot = r;
            }
        }
        if m[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for c in 0..n {
                m.swap(col * n + c, pivot * n + c);
            }
            rhs.swap(col, pivot);
        }
        let diag = m[col * n + col];
        for r in (col + 1)..n {
            let factor = m[r * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                m[r * n + c] -= factor * m[col * n + c];
            }
            rhs[r] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = rhs[col];
        for c in (col + 1)..n {
            acc -= m[col * n + c] * x[c];
        }
        x[col] = acc / m[col * n + col];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(x: &[f64]) -> (f64, Vec<f64>) {
        // f = (x0 - 3)^2 + 10 (x1 + 2)^2
        let v = (x[0] - 3.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2);
        let g = vec![2.0 * (x[0] - 3.0), 20.0 * (x[1] + 2.0)];
        (v, g)
    }

    #[test]
    fn bfgs_solves_quadratic() {
        let r = bfgs(&quadratic, &[0.0, 0.0], 1e-10, 200);
        assert!(r.converged);
        assert!((r.x[0] - 3.0).abs() < 1e-8);
        assert!((r.x[1] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn bfgs_handles_rosenbrock() {
        let rosen = |x: &[f64]| {
            let v = (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
            let g = vec![
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ];
            (v, g)
        };
        let r = bfgs(&rosen, &[-1.2, 1.0], 1e-8, 500);
        assert!((r.x[0] - 1.0).abs() < 1e-5);
        assert!((r.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn nelder_mead_finds_minimum() {
        let f = |x: &[f64]| (x[0] - 1.5).powi(2) + (x[1] - 0.5).powi(4) + 2.0;
        let x = nelder_mead(&f, &[10.0, -10.0], 1.0, 4000);
        assert!((x[0] - 1.5).abs() < 1e-3);
        assert!((x[1] - 0.5).abs() < 2e-2);
    }
}
