//! Polak-Ribière nonlinear conjugate gradient with a strong-Wolfe line
//! search, inside a box (trial points are projected onto the bounds).

#[derive(Debug, Clone)]
pub struct CgOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Relative change in objective treated as convergence.
    pub f_tol: f64,
    pub lower: f64,
    pub upper: f64,
    /// Largest allowed per-coordinate move in one line search.
    pub max_step: f64,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            grad_tol: 1e-6,
            f_tol: 1e-10,
            lower: -15.0,
            upper: 15.0,
            max_step: 3.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.1;
const MAX_LS: usize = 25;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Problem<'a, F> {
    f: &'a mut F,
    opts: &'a CgOptions,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>> Problem<'_, F> {
    fn project(&self, x: &mut [f64]) {
        for v in x.iter_mut() {
            *v = v.clamp(self.opts.lower, self.opts.upper);
        }
    }

    fn eval(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.evaluations += 1;
        match (self.f)(x) {
            Some((v, g)) if v.is_finite() && g.iter().all(|c| c.is_finite()) => Some((v, g)),
            _ => None,
        }
    }

    /// Gradient with components that push out of an active bound zeroed.
    fn projected(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(g)
            .map(|(xi, gi)| {
                if (*xi <= self.opts.lower && *gi > 0.0) || (*xi >= self.opts.upper && *gi < 0.0) {
                    0.0
                } else {
                    *gi
                }
            })
            .collect()
    }
}

struct Trial {
    a: f64,
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

fn line_search<F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>>(
    p: &mut Problem<'_, F>,
    x: &[f64],
    f0: f64,
    d: &[f64],
    slope0: f64,
    a_init: f64,
) -> Option<Trial> {
    let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let a_max = if dmax > 0.0 { p.opts.max_step / dmax } else { return None };

    let try_at = |p: &mut Problem<'_, F>, a: f64| -> Option<Trial> {
        let mut xt: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + a * di).collect();
        p.project(&mut xt);
        let (f, g) = p.eval(&xt)?;
        let slope = dot(&g, d);
        Some(Trial { a, x: xt, f, g, slope })
    };

    let sufficient = |t: &Trial| t.f <= f0 + C1 * t.a * slope0;
    let curvature = |t: &Trial| t.slope.abs() <= -C2 * slope0;

    let mut lo: Option<Trial> = None;
    let mut lo_a = 0.0;
    let (mut lo_f, mut lo_slope) = (f0, slope0);
    let mut a = a_init.min(a_max);
    let mut hi_a = f64::NAN;
    let mut hi_f = f64::INFINITY;

    // bracketing phase
    let mut bracketed = false;
    for i in 0..MAX_LS {
        match try_at(p, a) {
            None => {
                hi_a = a;
                hi_f = f64::INFINITY;
                bracketed = true;
                break;
            }
            Some(t) => {
                if !sufficient(&t) || (i > 0 && t.f >= lo_f) {
                    hi_a = t.a;
                    hi_f = t.f;
                    bracketed = true;
                    break;
                }
                if curvature(&t) {
                    return Some(t);
                }
                if t.slope >= 0.0 {
                    // minimum lies between this point and the previous one
                    hi_a = lo_a;
                    hi_f = lo_f;
                    lo_a = t.a;
                    lo_f = t.f;
                    lo_slope = t.slope;
                    lo = Some(t);
                    bracketed = true;
                    break;
                }
                lo_a = t.a;
                lo_f = t.f;
                lo_slope = t.slope;
                lo = Some(t);
                if a >= a_max {
                    return lo;
                }
                a = (2.0 * a).min(a_max);
            }
        }
    }
    if !bracketed {
        return lo;
    }

    // zoom phase
    for _ in 0..MAX_LS {
        let width = hi_a - lo_a;
        let mut aj = if hi_f.is_finite() {
            let denom = 2.0 * (hi_f - lo_f - lo_slope * width);
            if denom.abs() > 1e-300 {
                lo_a - lo_slope * width * width / denom
            } else {
                lo_a + 0.5 * width
            }
        } else {
            lo_a + 0.5 * width
        };
        let (a_lo, a_hi) = if lo_a < hi_a { (lo_a, hi_a) } else { (hi_a, lo_a) };
        let margin = 0.1 * (a_hi - a_lo);
        if !aj.is_finite() || aj < a_lo + margin || aj > a_hi - margin {
            aj = 0.5 * (lo_a + hi_a);
        }
        if (a_hi - a_lo) < 1e-14 * a_hi.max(1e-300) {
            break;
        }
        match try_at(p, aj) {
            None => {
                hi_a = aj;
                hi_f = f64::INFINITY;
            }
            Some(t) => {
                if !sufficient(&t) || t.f >= lo_f {
                    hi_a = t.a;
                    hi_f = t.f;
                } else {
                    if curvature(&t) {
                        return Some(t);
                    }
                    if t.slope * (hi_a - lo_a) >= 0.0 {
                        hi_a = lo_a;
                        hi_f = lo_f;
                    }
                    lo_a = t.a;
                    lo_f = t.f;
                    lo_slope = t.slope;
                    lo = Some(t);
                }
            }
        }
    }
    lo
}

/// Minimizes `f` starting at `x0`. `f` returns `None` where the objective
/// cannot be evaluated; the line search backs off from such points.
/// Returns `None` only when `x0` itself cannot be evaluated.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &CgOptions) -> Option<CgOutcome>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut p = Problem {
        f: &mut f,
        opts,
        evaluations: 0,
    };
    let mut x = x0.to_vec();
    let (mut fx, g_raw) = p.eval(&x)?;
    let mut g = p.projected(&x, &g_raw);
    let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut gnorm = dot(&g, &g).sqrt();
    let mut prev_step = None::<(f64, f64)>; // (alpha, slope) of the last accepted step
    let mut converged = gnorm < opts.grad_tol;
    let mut iterations = 0;
    let mut since_restart = 0;

    while !converged && iterations < opts.max_iters {
        iterations += 1;
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            d = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
            since_restart = 0;
        }
        let a_init = match prev_step {
            Some((a_prev, s_prev)) => (a_prev * s_prev / slope).clamp(1e-10, 1e10),
            None => 1.0 / gnorm.max(1.0),
        };
        let trial = line_search(&mut p, &x, fx, &d, slope, a_init);
        let Some(t) = trial else {
            if since_restart == 0 {
                break;
            }
            // retry along steepest descent before giving up
            d = g.iter().map(|v| -v).collect();
            since_restart = 0;
            prev_step = None;
            continue;
        };
        let f_new = t.f;
        let g_new = p.projected(&t.x, &t.g);
        let df = fx - f_new;
        prev_step = Some((t.a, slope));

        let gg_old = dot(&g, &g);
        let beta = if gg_old > 0.0 {
            (g_new.iter().zip(&g).map(|(a, b)| a * (a - b)).sum::<f64>() / gg_old).max(0.0)
        } else {
            0.0
        };
        since_restart += 1;
        let restart = since_restart >= x.len().max(1) * 2;
        d = g_new
            .iter()
            .zip(&d)
            .map(|(gi, di)| if restart { -gi } else { -gi + beta * di })
            .collect();
        if restart {
            since_restart = 0;
        }
        x = t.x;
        fx = f_new;
        g = g_new;
        gnorm = dot(&g, &g).sqrt();
        if gnorm < opts.grad_tol || df.abs() <= opts.f_tol * fx.abs().max(1.0) {
            converged = true;
        }
    }

    Some(CgOutcome {
        x,
        f: fx,
        grad_norm: gnorm,
        iterations,
        evaluations: p.evaluations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        Some((f, g))
    }

    #[test]
    fn minimizes_quadratic() {
        let opts = CgOptions::default();
        let out = minimize(
            |x| {
                let f = 0.5 * (3.0 * x[0] * x[0] + x[1] * x[1]) - x[0] + 2.0 * x[1];
                Some((f, vec![3.0 * x[0] - 1.0, x[1] + 2.0]))
            },
            &[4.0, 4.0],
            &opts,
        )
        .unwrap();
        assert!((out.x[0] - 1.0 / 3.0).abs() < 1e-5, "{:?}", out);
        assert!((out.x[1] + 2.0).abs() < 1e-5);
        assert!(out.converged);
    }

    #[test]
    fn minimizes_rosenbrock() {
        let opts = CgOptions {
            max_iters: 2000,
            f_tol: 0.0,
            ..Default::default()
        };
        let out = minimize(rosenbrock, &[-1.2, 1.0], &opts).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-4, "{:?}", out);
        assert!((out.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn respects_bounds_and_failures() {
        // unbounded below along x; stops on the box edge
        let opts = CgOptions {
            lower: -2.0,
            upper: 2.0,
            ..Default::default()
        };
        let out = minimize(|x| Some((x[0], vec![1.0])), &[0.0], &opts).unwrap();
        assert!((out.x[0] + 2.0).abs() < 1e-12);
        assert!(out.converged);

        // objective undefined for x > 1
        let out = minimize(
            |x| (x[0] <= 1.0).then(|| (-(x[0]), vec![-1.0])),
            &[0.0],
            &CgOptions::default(),
        )
        .unwrap();
        assert!(out.x[0] <= 1.0 && out.f <= 0.0);
        assert!(minimize(|_| None, &[0.0], &CgOptions::default()).is_none());
    }
}
