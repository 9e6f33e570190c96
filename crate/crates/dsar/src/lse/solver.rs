//! Local Newton solver with projected line search and a profile fallback.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lse::{eval_objective, sigma2_eps_local, LocalSummary, Theta, ThetaBounds};
use crate::network::WorkerShard;

/// Solver controls; defaults match the documented contract.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Converged when the (projected) gradient inf-norm drops below this.
    pub grad_tol: f64,
    /// Stop when the accepted step falls below this.
    pub step_tol: f64,
    pub bounds: ThetaBounds,
    /// Number of spread rho starting values (1 = default start only).
    pub multistart: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 100,
            grad_tol: 1e-8,
            step_tol: 1e-12,
            bounds: ThetaBounds::default(),
            multistart: 1,
        }
    }
}

/// Outcome diagnostics of one local fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub iterations: usize,
    pub grad_norm: f64,
    pub value: f64,
    pub converged: bool,
}

const ARMIJO_C: f64 = 1e-4;

/// Minimize Q_k on a shard: Newton iterations with backtracking (Armijo,
/// halving), rho clamped to the parameter space. If a Newton direction fails
/// to descend, one profile step is taken instead: exact beta given rho
/// (linear least squares) followed by a safeguarded 1-D Newton step in rho.
pub fn fit_local(
    shard: &WorkerShard,
    init: Option<Theta>,
    opts: &SolverOptions,
) -> Result<(LocalSummary, FitReport)> {
    let default_start = initial_theta(shard, opts)?;
    let mut starts = vec![init.unwrap_or(default_start)];
    if opts.multistart > 1 {
        let lo = opts.bounds.rho_min;
        let hi = opts.bounds.rho_max;
        for s in 1..opts.multistart {
            let frac = s as f64 / opts.multistart as f64;
            let rho = lo + frac * (hi - lo);
            let mut theta = beta_given_rho(shard, rho)?;
            theta.rho = rho;
            starts.push(theta);
        }
    }

    let mut best: Option<(Theta, FitReport)> = None;
    for start in starts {
        let (theta, report) = newton_loop(shard, start, opts)?;
        let better = match &best {
            None => true,
            Some((_, old)) => report.value < old.value,
        };
        if better {
            best = Some((theta, report));
        }
        if best.as_ref().unwrap().1.converged && opts.multistart == 1 {
            break;
        }
    }
    let (theta, report) = best.unwrap();
    if !report.converged {
        return Err(Error::SolverNonConvergence {
            worker: shard.worker_id(),
            iterations: report.iterations,
            grad_norm: report.grad_norm,
            last_rho: theta.rho,
        });
    }

    let eval = eval_objective(shard, &theta, 2)?;
    let summary = LocalSummary::new(
        shard.worker_id(),
        theta.clone(),
        eval.hessian.unwrap(),
        shard.n_local(),
        sigma2_eps_local(shard, &theta),
    );
    Ok((summary, report))
}

/// Default start: rho = 0 with the shard OLS coefficients.
fn initial_theta(shard: &WorkerShard, _opts: &SolverOptions) -> Result<Theta> {
    beta_given_rho(shard, 0.0)
}

/// Exact beta minimizer at fixed rho (linear least squares on shard rows).
fn beta_given_rho(shard: &WorkerShard, rho: f64) -> Result<Theta> {
    let p = shard.p();
    let ds = crate::lse::DsDiag::new(rho);
    let stats = shard.stats();
    let mut ztz = DMatrix::<f64>::zeros(p, p);
    let mut ztw = DVector::<f64>::zeros(p);
    let mut z = vec![0.0f64; p];
    for i in 0..shard.n_local() {
        let d = ds.d(shard.dtilde_local()[i]);
        let x = shard.local_covariates(i);
        let g = stats.wx_in.row(i);
        for j in 0..p {
            z[j] = d * (x[j] - rho * g[j]);
        }
        let w = d
            * (shard.local_response(i) - rho * (stats.wy_out[i] + stats.wy_in[i])
                + rho * rho * stats.w2y[i]);
        for j in 0..p {
            ztw[j] += z[j] * w;
            for l in 0..=j {
                ztz[(j, l)] += z[j] * z[l];
            }
        }
    }
    for j in 0..p {
        for l in (j + 1)..p {
            ztz[(j, l)] = ztz[(l, j)];
        }
    }
    let beta = ztz
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&ztw))
        .or_else(|| ztz.lu().solve(&ztw))
        .ok_or(Error::SingularHessian {
            context: "beta least-squares normal equations",
            worker: Some(shard.worker_id()),
        })?;
    Ok(Theta {
        rho,
        beta: beta.iter().copied().collect(),
    })
}

/// Gradient inf-norm with the rho component projected out at an active bound
/// (a gradient pushing outward at a clamped rho is stationary).
fn projected_grad_norm(grad: &DVector<f64>, rho: f64, bounds: &ThetaBounds) -> f64 {
    const BOUND_EPS: f64 = 1e-9;
    let mut norm = 0.0f64;
    for (j, &g) in grad.iter().enumerate() {
        let at_lo = rho <= bounds.rho_min + BOUND_EPS && g > 0.0;
        let at_hi = rho >= bounds.rho_max - BOUND_EPS && g < 0.0;
        let proj = if j == 0 && (at_lo || at_hi) { 0.0 } else { g };
        norm = norm.max(proj.abs());
    }
    norm
}

fn newton_loop(
    shard: &WorkerShard,
    start: Theta,
    opts: &SolverOptions,
) -> Result<(Theta, FitReport)> {
    let mut theta = start;
    theta.rho = opts.bounds.clamp(theta.rho);
    let mut eval = eval_objective(shard, &theta, 2)?;
    let mut iterations = 0usize;
    let mut rescues = 0usize;

    while iterations < opts.max_iter {
        let grad = eval.gradient.as_ref().unwrap();
        let gnorm = projected_grad_norm(grad, theta.rho, &opts.bounds);
        if gnorm <= opts.grad_tol {
            return Ok((
                theta,
                FitReport {
                    iterations,
                    grad_norm: gnorm,
                    value: eval.value,
                    converged: true,
                },
            ));
        }
        iterations += 1;

        let hess = eval.hessian.as_ref().unwrap();
        let direction = hess
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&(-grad)))
            .or_else(|| hess.clone().lu().solve(&(-grad)));

        let mut productive = false;
        if let Some(delta) = direction {
            if let Some((next, next_eval, step)) =
                line_search(shard, &theta, &eval, &delta, opts)?
            {
                theta = next;
                eval = next_eval;
                productive = step > opts.step_tol;
            }
        }

        if !productive {
            // Newton stalled (non-descending or degenerate step). Rescue by
            // minimizing the rho-profile directly: exact beta given rho plus
            // a safeguarded 1-D search, then resume Newton from there.
            if rescues >= 2 {
                break;
            }
            rescues += 1;
            let before = eval.value;
            let (rho_star, _) = profile_minimize(shard, opts)?;
            let mut cand = beta_given_rho(shard, rho_star)?;
            cand.rho = rho_star;
            let cand_eval = eval_objective(shard, &cand, 2)?;
            if cand_eval.value <= before {
                let moved = cand.max_abs_diff(&theta);
                theta = cand;
                eval = cand_eval;
                if moved <= opts.step_tol {
                    break;
                }
            } else {
                break;
            }
        }
    }

    let grad = eval.gradient.as_ref().unwrap();
    let gnorm = projected_grad_norm(grad, theta.rho, &opts.bounds);
    Ok((
        theta,
        FitReport {
            iterations,
            grad_norm: gnorm,
            value: eval.value,
            // Accept boundary/stationary points at a relaxed tolerance after
            // the iteration budget; truly unconverged fits stay flagged.
            converged: gnorm <= opts.grad_tol.max(1e-6),
        },
    ))
}

/// Minimize the rho-profile q(rho) = Q(rho, beta(rho)) by a coarse grid scan
/// plus golden-section refinement inside the best bracket.
fn profile_minimize(shard: &WorkerShard, opts: &SolverOptions) -> Result<(f64, f64)> {
    let lo_bound = opts.bounds.rho_min;
    let hi_bound = opts.bounds.rho_max;
    let q = |rho: f64| -> f64 {
        beta_given_rho(shard, rho)
            .and_then(|theta| eval_objective(shard, &theta, 0))
            .map(|e| e.value)
            .unwrap_or(f64::INFINITY)
    };
    let grid = 32usize;
    let mut best_i = 0usize;
    let mut best_v = f64::INFINITY;
    for i in 0..=grid {
        let rho = lo_bound + (hi_bound - lo_bound) * i as f64 / grid as f64;
        let v = q(rho);
        if v < best_v {
            best_v = v;
            best_i = i;
        }
    }
    if !best_v.is_finite() {
        return Err(Error::SingularHessian {
            context: "rho-profile least squares",
            worker: Some(shard.worker_id()),
        });
    }
    let step = (hi_bound - lo_bound) / grid as f64;
    let mut lo = lo_bound + step * best_i.saturating_sub(1) as f64;
    let mut hi = (lo_bound + step * (best_i + 1) as f64).min(hi_bound);
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - phi * (hi - lo);
    let mut b = lo + phi * (hi - lo);
    let mut fa = q(a);
    let mut fb = q(b);
    for _ in 0..80 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = q(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = q(b);
        }
        if hi - lo < 1e-11 {
            break;
        }
    }
    // Boundary minima: prefer the exact bound when it beats the interior
    // golden point, so bound-active stationarity is detected downstream.
    let mut rho = 0.5 * (lo + hi);
    let mut val = q(rho);
    for bound in [lo_bound, hi_bound] {
        let v = q(bound);
        if v <= val {
            rho = bound;
            val = v;
        }
    }
    Ok((rho, val))
}

type StepOutcome = Option<(Theta, crate::lse::ObjectiveEval, f64)>;

/// Backtracking Armijo line search along `delta` with rho projection.
fn line_search(
    shard: &WorkerShard,
    theta: &Theta,
    eval: &crate::lse::ObjectiveEval,
    delta: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<StepOutcome> {
    let grad = eval.gradient.as_ref().unwrap();
    let slope = grad.dot(delta);
    let mut t = 1.0f64;
    let x0 = theta.as_dvector();
    while t >= opts.step_tol {
        let mut trial = &x0 + delta * t;
        trial[0] = opts.bounds.clamp(trial[0]);
        let cand = Theta::from_dvector(&trial);
        let step = cand.max_abs_diff(theta);
        if step == 0.0 {
            return Ok(None);
        }
        let cand_eval = eval_objective(shard, &cand, 2)?;
        let sufficient = if slope < 0.0 {
            cand_eval.value <= eval.value + ARMIJO_C * t * slope
        } else {
            cand_eval.value < eval.value
        };
        if sufficient {
            return Ok(Some((cand, cand_eval, step)));
        }
        t *= 0.5;
    }
    Ok(None)
}

/// The literal one-step Newton update theta - ddotQ^{-1} dotQ at `at`
/// (no line search, no projection).
pub fn one_newton_step(shard: &WorkerShard, at: &Theta) -> Result<Theta> {
    let eval = eval_objective(shard, at, 2)?;
    let grad = eval.gradient.unwrap();
    let hess = eval.hessian.unwrap();

    let svd = hess.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !smin.is_finite() || smin <= 0.0 || smax / smin > 1e12 {
        return Err(Error::SingularHessian {
            context: "one-step Newton refinement (fall back to a full local fit)",
            worker: Some(shard.worker_id()),
        });
    }
    let delta = hess
        .lu()
        .solve(&(-&grad))
        .ok_or(Error::SingularHessian {
            context: "one-step Newton refinement (fall back to a full local fit)",
            worker: Some(shard.worker_id()),
        })?;
    let next = at.as_dvector() + delta;
    Ok(Theta::from_dvector(&next))
}
