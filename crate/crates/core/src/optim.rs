//! Bounded Nelder–Mead simplex minimizer.
//!
//! Bounds are enforced by projecting every trial point onto the box. The
//! simplex is rebuilt around the incumbent after each convergence, which
//! guards against the classic premature collapse of a degenerate simplex.

#[derive(Clone, Debug)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// Stop when every simplex edge is shorter than this (relative to bounds).
    pub x_tol: f64,
    /// Initial simplex step as a fraction of each bound width.
    pub initial_step: f64,
    /// Simplex rebuilds after convergence.
    pub rebuilds: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_evals: 4000,
            f_tol: 1e-16,
            x_tol: 1e-12,
            initial_step: 0.05,
            rebuilds: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Minimize `f` from `start` inside `bounds`. Non-finite objective values are
/// treated as `f64::MAX`.
pub fn nelder_mead<F>(f: F, start: &[f64], bounds: &[(f64, f64)], opts: &NelderMeadOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = start.len();
    assert_eq!(n, bounds.len(), "one bound per coordinate");
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::MAX
        }
    };

    let mut best_x = start.to_vec();
    project(&mut best_x, bounds);
    let mut best_f = eval(&best_x);
    if n == 0 {
        return Minimum {
            x: best_x,
            f: best_f,
            evals: evals.get(),
        };
    }

    let widths: Vec<f64> = bounds
        .iter()
        .map(|(lo, hi)| {
            let w = hi - lo;
            if w.is_finite() && w > 0.0 {
                w
            } else {
                1.0
            }
        })
        .collect();

    for round in 0..=opts.rebuilds {
        let step_scale = opts.initial_step / (1u32 << round.min(8)) as f64;
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((best_x.clone(), best_f));
        for k in 0..n {
            let mut x = best_x.clone();
            let step = step_scale * widths[k];
            x[k] += step;
            if x[k] > bounds[k].1 {
                x[k] = best_x[k] - step;
            }
            project(&mut x, bounds);
            let fx = eval(&x);
            simplex.push((x, fx));
        }

        while evals.get() < opts.max_evals {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let f_best = simplex[0].1;
            let f_worst = simplex[n].1;
            let spread = (f_worst - f_best).abs();
            let size = simplex[1..]
                .iter()
                .flat_map(|(x, _)| {
                    x.iter()
                        .zip(&simplex[0].0)
                        .zip(&widths)
                        .map(|((a, b), w)| (a - b).abs() / w)
                })
                .fold(0.0f64, f64::max);
            if spread <= opts.f_tol * (1.0 + f_best.abs()) || size <= opts.x_tol {
                break;
            }

            let mut centroid = vec![0.0; n];
            for (x, _) in &simplex[..n] {
                for (c, v) in centroid.iter_mut().zip(x) {
                    *c += v / n as f64;
                }
            }
            let worst = simplex[n].0.clone();
            let along = |t: f64| {
                let mut p: Vec<f64> = centroid.iter().zip(&worst).map(|(c, w)| c + t * (c - w)).collect();
                project(&mut p, bounds);
                p
            };

            let xr = along(1.0);
            let fr = eval(&xr);
            if fr < simplex[0].1 {
                let xe = along(2.0);
                let fe = eval(&xe);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr < simplex[n].1 {
                    let xc = along(0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                } else {
                    let xc = along(-0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                };
                if fc < simplex[n].1.min(fr) {
                    simplex[n] = (xc, fc);
                } else {
                    let x0 = simplex[0].0.clone();
                    for (x, fx) in simplex.iter_mut().skip(1) {
                        for (v, b) in x.iter_mut().zip(&x0) {
                            *v = b + 0.5 * (*v - b);
                        }
                        *fx = eval(x);
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if simplex[0].1 <= best_f {
            best_x = simplex[0].0.clone();
            best_f = simplex[0].1;
        }
        if evals.get() >= opts.max_evals {
            break;
        }
    }

    Minimum {
        x: best_x,
        f: best_f,
        evals: evals.get(),
    }
}
