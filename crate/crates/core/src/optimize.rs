//! Bounded Nelder-Mead simplex search with jittered restarts.
//!
//! Parameters are mapped onto the unit cube spanned by their bounds and
//! every trial point is clamped back into it. Restarts run in parallel; the
//! winner is the lowest objective value, ties going to the lowest restart
//! index, so the outcome does not depend on scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Objective evaluations allowed per restart.
    pub max_evaluations: usize,
    /// Relative parameter spread of the simplex at which a run stops.
    pub x_tolerance: f64,
    pub restarts: usize,
    /// Standard deviation of restart jitter, in units of the bound width.
    pub jitter: f64,
    /// Edge length of the initial simplex, in units of the bound width.
    pub initial_step: f64,
    pub seed: u64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_evaluations: 20_000,
            x_tolerance: 1e-8,
            restarts: 8,
            jitter: 0.15,
            initial_step: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub evaluations: usize,
    /// Best objective value after each simplex iteration.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    /// Evaluations summed over all restarts.
    pub evaluations: usize,
    pub winning_restart: usize,
    /// Running best value after each restart, in restart order.
    pub best_by_restart: Vec<f64>,
    pub restarts: Vec<RestartOutcome>,
}

struct Cube<'a> {
    lower: &'a [f64],
    upper: &'a [f64],
}

impl Cube<'_> {
    fn to_x(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(self.upper))
            .map(|(&u, (&lo, &hi))| lo + u.clamp(0.0, 1.0) * (hi - lo))
            .collect()
    }

    fn to_u(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(self.upper))
            .map(|(&x, (&lo, &hi))| if hi > lo { ((x - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 })
            .collect()
    }

    /// Largest relative spread of the simplex around its best vertex.
    fn spread(&self, simplex: &[(Vec<f64>, f64)]) -> f64 {
        let best = self.to_x(&simplex[0].0);
        simplex[1..]
            .iter()
            .flat_map(|(u, _)| {
                let x = self.to_x(u);
                x.into_iter().zip(best.clone()).enumerate().map(|(i, (a, b))| {
                    let scale = b.abs().max(1e-3 * (self.upper[i] - self.lower[i]));
                    (a - b).abs() / scale
                })
            })
            .fold(0.0, f64::max)
    }
}

fn nelder_mead<F: Fn(&[f64]) -> f64>(
    objective: &F,
    cube: &Cube,
    start: Vec<f64>,
    opts: &SimplexOptions,
) -> RestartOutcome {
    let n = start.len();
    let evaluations = std::cell::Cell::new(0usize);
    let eval = |u: &[f64]| {
        evaluations.set(evaluations.get() + 1);
        let v = objective(&cube.to_x(u));
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let clamp = |u: Vec<f64>| u.into_iter().map(|v| v.clamp(0.0, 1.0)).collect::<Vec<_>>();

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(&start);
    simplex.push((start.clone(), v0));
    for i in 0..n {
        let mut u = start.clone();
        // step away from the nearer bound
        u[i] = if u[i] + opts.initial_step <= 1.0 { u[i] + opts.initial_step } else { u[i] - opts.initial_step };
        let v = eval(&u);
        simplex.push((u, v));
    }

    let mut trace = Vec::new();
    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        trace.push(simplex[0].1);
        if cube.spread(&simplex) < opts.x_tolerance {
            converged = true;
            break;
        }
        if evaluations.get() >= opts.max_evaluations {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(u, _)| u[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> {
            clamp(centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect())
        };
        let reflected = along(1.0);
        let fr = eval(&reflected);
        if fr < simplex[0].1 {
            let expanded = along(2.0);
            let fe = eval(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < worst.1 {
            let c = along(0.5);
            let f = eval(&c);
            (c, f)
        } else {
            let c = along(-0.5);
            let f = eval(&c);
            (c, f)
        };
        if fc < worst.1.min(fr) {
            simplex[n] = (contracted, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let u: Vec<f64> = best.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
            let f = eval(&u);
            *vertex = (u, f);
        }
    }
    RestartOutcome {
        x: cube.to_x(&simplex[0].0),
        value: simplex[0].1,
        converged,
        evaluations: evaluations.get(),
        trace,
    }
}

/// Minimises `objective` inside the box `lower..=upper` starting from `x0`.
///
/// Restart 0 starts at `x0`; the others start from `x0` perturbed by
/// Gaussian jitter. Each restart re-seeds its simplex once at the point it
/// converged to, which guards against premature collapse.
pub fn minimize<F>(objective: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &SimplexOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    assert_eq!(x0.len(), lower.len());
    assert_eq!(x0.len(), upper.len());
    let cube = Cube { lower, upper };
    let u0 = cube.to_u(x0);
    let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
    let jitter = Normal::new(0.0, opts.jitter.max(f64::MIN_POSITIVE)).expect("finite jitter");
    let restarts = opts.restarts.max(1);
    let starts: Vec<Vec<f64>> = (0..restarts)
        .map(|r| {
            if r == 0 {
                u0.clone()
            } else {
                u0.iter().map(|&u| (u + jitter.sample(&mut rng)).clamp(0.0, 1.0)).collect()
            }
        })
        .collect();

    let outcomes: Vec<RestartOutcome> = starts
        .into_par_iter()
        .map(|start| {
            let first = nelder_mead(&objective, &cube, start, opts);
            let polish_opts = SimplexOptions {
                max_evaluations: opts.max_evaluations.saturating_sub(first.evaluations),
                initial_step: opts.initial_step * 0.1,
                ..*opts
            };
            let second = nelder_mead(&objective, &cube, cube.to_u(&first.x), &polish_opts);
            let mut trace = first.trace;
            let floor = trace.last().copied().unwrap_or(f64::INFINITY);
            trace.extend(second.trace.iter().map(|&v| v.min(floor)));
            let evaluations = first.evaluations + second.evaluations;
            if second.value <= first.value {
                RestartOutcome { x: second.x, value: second.value, converged: second.converged, evaluations, trace }
            } else {
                RestartOutcome { x: first.x, value: first.value, converged: first.converged, evaluations, trace }
            }
        })
        .collect();

    let mut winner = 0;
    let mut best_by_restart = Vec::with_capacity(outcomes.len());
    for (i, o) in outcomes.iter().enumerate() {
        if o.value < outcomes[winner].value {
            winner = i;
        }
        best_by_restart.push(outcomes[winner].value);
    }
    Minimum {
        x: outcomes[winner].x.clone(),
        value: outcomes[winner].value,
        converged: outcomes[winner].converged,
        evaluations: outcomes.iter().map(|o| o.evaluations).sum(),
        winning_restart: winner,
        best_by_restart,
        restarts: outcomes,
    }
}

/// Central finite-difference Hessian of `f` at `x`.
pub fn hessian<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], steps: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len();
    let f0 = f(x);
    let mut h = vec![vec![0.0; n]; n];
    let shifted = |di: (usize, f64), dj: Option<(usize, f64)>| {
        let mut p = x.to_vec();
        p[di.0] += di.1;
        if let Some((j, d)) = dj {
            p[j] += d;
        }
        f(&p)
    };
    for i in 0..n {
        let hi = steps[i];
        h[i][i] = (shifted((i, hi), None) - 2.0 * f0 + shifted((i, -hi), None)) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let v = (shifted((i, hi), Some((j, hj))) - shifted((i, hi), Some((j, -hj)))
                - shifted((i, -hi), Some((j, hj)))
                + shifted((i, -hi), Some((j, -hj))))
                / (4.0 * hi * hj);
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    h
}
