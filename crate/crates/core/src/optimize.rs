//! BFGS with finite-difference gradients and an Armijo backtracking line
//! search.

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    /// Stop once the sup-norm of the gradient falls below this.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Central-difference step relative to `max(1, |x_i|)`.
    pub fd_rel_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions { grad_tol: 1e-6, max_iter: 500, fd_rel_step: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
}

fn eval<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> f64 {
    let v = f(x);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], rel_step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = rel_step * x[i].abs().max(1.0);
            probe[i] = x[i] + h;
            let up = eval(f, &probe);
            probe[i] = x[i] - h;
            let down = eval(f, &probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// Minimises `f` from `x0`. The returned objective never exceeds `f(x0)`.
pub fn minimize<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], opts: &BfgsOptions) -> BfgsOutcome {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = eval(&f, &x);
    let mut trace = vec![fx];
    if !fx.is_finite() {
        return BfgsOutcome { x, value: fx, iterations: 0, converged: false, trace };
    }
    let mut g = fd_gradient(&f, &x, opts.fd_rel_step);
    let mut h_inv = identity(n);
    let mut converged = sup_norm(&g) < opts.grad_tol;
    let mut iterations = 0;
    let mut just_reset = true;

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let mut dir: Vec<f64> = h_inv.iter().map(|row| -dot(row, &g)).collect();
        if dot(&dir, &g) >= 0.0 {
            h_inv = identity(n);
            just_reset = true;
            dir = g.iter().map(|v| -v).collect();
        }
        let slope = dot(&dir, &g);

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let ft = eval(&f, &trial);
            if ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            if just_reset {
                break;
            }
            h_inv = identity(n);
            just_reset = true;
            continue;
        };
        just_reset = false;

        let g_new = fd_gradient(&f, &x_new, opts.fd_rel_step);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            // H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ
            let rho = 1.0 / sy;
            let hy: Vec<f64> = h_inv.iter().map(|row| dot(row, &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h_inv[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        let stalled = (fx - f_new).abs() <= 1e-15 * (1.0 + fx.abs()) && sup_norm(&s) <= 1e-12;
        x = x_new;
        fx = f_new;
        g = g_new;
        trace.push(fx);
        converged = sup_norm(&g) < opts.grad_tol;
        if stalled {
            break;
        }
    }

    BfgsOutcome { x, value: fx, iterations, converged, trace }
}
