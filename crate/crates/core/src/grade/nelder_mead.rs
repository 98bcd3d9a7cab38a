//! Nelder–Mead downhill simplex with the standard coefficients
//! (reflection 1, expansion 2, contraction 1/2, shrink 1/2).

#[derive(Debug, Clone)]
pub(crate) struct Options {
    pub max_evaluations: usize,
    /// Stop when all vertex values lie within `f_abs + f_rel * |best|` of
    /// the best value...
    pub f_abs: f64,
    pub f_rel: f64,
    /// ...and every coordinate lies within `x_rel * (1 + |best|)` of the
    /// best vertex.
    pub x_rel: f64,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            max_evaluations: 20_000,
            f_abs: 1e-20,
            f_rel: 1e-13,
            x_rel: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimizes `f` from `x0`. The initial simplex offsets each coordinate by
/// 5% of its value, or by 0.00025 when the coordinate is zero.
///
/// The best vertex value never increases, so the result is no worse than
/// `f(x0)`.
pub(crate) fn minimize<F>(f: F, x0: &[f64], opts: &Options) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let evaluations = std::cell::Cell::new(0);
    let eval = |x: &[f64]| {
        evaluations.set(evaluations.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] = if x[i] != 0.0 { x[i] * 1.05 } else { 0.00025 };
        let fx = eval(&x);
        simplex.push((x, fx));
    }

    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best_x, best_f) = (&simplex[0].0, simplex[0].1);
        let f_spread = simplex.iter().map(|(_, v)| (v - best_f).abs()).fold(0.0, f64::max);
        let x_spread = simplex
            .iter()
            .flat_map(|(x, _)| x.iter().zip(best_x).map(|(a, b)| (a - b).abs() / (1.0 + b.abs())))
            .fold(0.0, f64::max);
        if f_spread <= opts.f_abs + opts.f_rel * best_f.abs() && x_spread <= opts.x_rel {
            converged = true;
            break;
        }
        if evaluations.get() >= opts.max_evaluations {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(1.0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let xc = along(0.5);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < fr.min(worst.1) {
            simplex[n] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = best
                .iter()
                .zip(&vertex.0)
                .map(|(b, v)| b + 0.5 * (v - b))
                .collect();
            let fx = eval(&x);
            *vertex = (x, fx);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    Minimum {
        x,
        f,
        evaluations: evaluations.get(),
        converged,
    }
}
