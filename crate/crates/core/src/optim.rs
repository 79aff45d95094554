//! Derivative-free minimization: Nelder–Mead simplex followed by a
//! coordinate-wise golden-section polish.

/// Stopping rules shared by the simplex and the polish.
#[derive(Debug, Clone, Copy)]
pub struct MinimizeOptions {
    pub max_evals: usize,
    /// Relative spread of simplex values at which the simplex stops.
    pub ftol: f64,
    /// Initial simplex edge per coordinate (scalar, applied to every axis).
    pub initial_step: f64,
    /// Number of coordinate sweeps in the polish; zero disables it.
    pub polish_sweeps: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            ftol: 1e-9,
            initial_step: 0.1,
            polish_sweeps: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

struct Counted<F> {
    f: F,
    evals: usize,
    best_x: Vec<f64>,
    best: f64,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v < self.best {
            self.best = v;
            self.best_x.clear();
            self.best_x.extend_from_slice(x);
        }
        v
    }
}

/// Minimizes `f` from `x0`. Non-finite values are treated as `+∞`, so the
/// objective may signal infeasible points that way. The returned point is the
/// best one ever evaluated, hence never worse than `x0`.
pub fn minimize<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &MinimizeOptions) -> Minimum {
    let dim = x0.len();
    let mut c = Counted {
        f,
        evals: 0,
        best_x: x0.to_vec(),
        best: f64::INFINITY,
    };
    if dim == 0 {
        let v = c.eval(x0);
        return Minimum {
            x: vec![],
            value: v,
            evals: 1,
            converged: true,
        };
    }

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(x0.to_vec());
    for i in 0..dim {
        let mut p = x0.to_vec();
        p[i] += if p[i].abs() > 1.0 {
            opts.initial_step * p[i].abs()
        } else {
            opts.initial_step
        };
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| c.eval(p)).collect();
    let budget = if opts.polish_sweeps > 0 {
        opts.max_evals * 3 / 4
    } else {
        opts.max_evals
    };

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;
    while c.evals < budget {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let (lo, hi) = (values[0], values[dim]);
        if hi.is_finite() && (hi - lo).abs() <= opts.ftol * (lo.abs() + hi.abs()).max(1e-300) {
            converged = true;
            break;
        }
        let spread = simplex
            .iter()
            .skip(1)
            .flat_map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread < 1e-12 {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; dim];
        for p in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / dim as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[dim])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let xr = along(-alpha);
        let fr = c.eval(&xr);
        if fr < values[0] {
            let xe = along(-gamma);
            let fe = c.eval(&xe);
            if fe < fr {
                simplex[dim] = xe;
                values[dim] = fe;
            } else {
                simplex[dim] = xr;
                values[dim] = fr;
            }
            continue;
        }
        if fr < values[dim - 1] {
            simplex[dim] = xr;
            values[dim] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[dim] {
            let x = along(-rho);
            let v = c.eval(&x);
            (x, v)
        } else {
            let x = along(rho);
            let v = c.eval(&x);
            (x, v)
        };
        if fc < values[dim].min(fr) {
            simplex[dim] = xc;
            values[dim] = fc;
            continue;
        }
        for i in 1..=dim {
            let shrunk: Vec<f64> = simplex[0]
                .iter()
                .zip(&simplex[i])
                .map(|(b, p)| b + sigma * (p - b))
                .collect();
            values[i] = c.eval(&shrunk);
            simplex[i] = shrunk;
        }
    }

    if opts.polish_sweeps > 0 {
        let step = simplex
            .iter()
            .skip(1)
            .map(|p| {
                p.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
            .max(1e-4);
        polish(&mut c, step, opts);
    }

    Minimum {
        value: c.best,
        x: c.best_x,
        evals: c.evals,
        converged,
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

fn polish<F: FnMut(&[f64]) -> f64>(c: &mut Counted<F>, step: f64, opts: &MinimizeOptions) {
    let dim = c.best_x.len();
    for _ in 0..opts.polish_sweeps {
        let start = c.best;
        for i in 0..dim {
            if c.evals + 30 > opts.max_evals {
                return;
            }
            let x = c.best_x.clone();
            let probe = |c: &mut Counted<F>, t: f64| {
                let mut p = x.clone();
                p[i] = t;
                c.eval(&p)
            };
            let (mut a, mut b) = (x[i] - step, x[i] + step);
            let mut x1 = b - INV_PHI * (b - a);
            let mut x2 = a + INV_PHI * (b - a);
            let mut f1 = probe(c, x1);
            let mut f2 = probe(c, x2);
            for _ in 0..24 {
                if f1 < f2 {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - INV_PHI * (b - a);
                    f1 = probe(c, x1);
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + INV_PHI * (b - a);
                    f2 = probe(c, x2);
                }
                if (b - a).abs() < 1e-7 * (1.0 + x[i].abs()) {
                    break;
                }
            }
        }
        if (start - c.best).abs() <= opts.ftol * start.abs().max(1e-300) {
            break;
        }
    }
}

/// Golden-section minimization of a unimodal scalar function on `[a, b]`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (b - a).abs() > tol {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    if f1 < f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}
