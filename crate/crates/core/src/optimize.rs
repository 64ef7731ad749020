//! Nelder–Mead simplex minimizer.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// Stop when the simplex diameter falls below this.
    pub x_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_evals: 2000,
            f_tol: 1e-12,
            x_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

/// Minimizes `f` from `start` with initial simplex steps `step`.
/// Non-finite objective values are treated as `+inf`.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    start: &[f64],
    step: &[f64],
    opts: &NelderMeadOptions,
) -> Minimum {
    let dim = start.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(start.to_vec());
    for i in 0..dim {
        let mut p = start.to_vec();
        p[i] += step[i];
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| eval(p, &mut evals)).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut centroid = vec![0.0; dim];
    let mut trial = vec![0.0; dim];
    let mut trial2 = vec![0.0; dim];

    while evals < opts.max_evals {
        // order: best first
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[dim] - values[0];
        let diameter = simplex[1..]
            .iter()
            .map(|p| {
                p.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if (spread.is_finite() && spread <= opts.f_tol * (1.0 + values[0].abs()))
            || diameter <= opts.x_tol
        {
            break;
        }

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for p in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / dim as f64;
            }
        }
        let worst = simplex[dim].clone();
        for k in 0..dim {
            trial[k] = centroid[k] + alpha * (centroid[k] - worst[k]);
        }
        let fr = eval(&trial, &mut evals);
        if fr < values[0] {
            for k in 0..dim {
                trial2[k] = centroid[k] + gamma * (trial[k] - centroid[k]);
            }
            let fe = eval(&trial2, &mut evals);
            if fe < fr {
                simplex[dim].copy_from_slice(&trial2);
                values[dim] = fe;
            } else {
                simplex[dim].copy_from_slice(&trial);
                values[dim] = fr;
            }
            continue;
        }
        if fr < values[dim - 1] {
            simplex[dim].copy_from_slice(&trial);
            values[dim] = fr;
            continue;
        }
        // contraction (outside if the reflection improved on the worst)
        let outside = fr < values[dim];
        for k in 0..dim {
            trial2[k] = if outside {
                centroid[k] + rho * (trial[k] - centroid[k])
            } else {
                centroid[k] + rho * (worst[k] - centroid[k])
            };
        }
        let fc = eval(&trial2, &mut evals);
        if fc < values[dim].min(fr) {
            simplex[dim].copy_from_slice(&trial2);
            values[dim] = fc;
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].clone();
        for i in 1..=dim {
            for k in 0..dim {
                simplex[i][k] = best[k] + sigma * (simplex[i][k] - best[k]);
            }
            values[i] = eval(&simplex[i], &mut evals);
        }
    }

    let best = (0..=dim)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    Minimum {
        x: simplex[best].clone(),
        value: values[best],
        evals,
    }
}
