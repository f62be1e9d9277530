//! Nesterov accelerated gradient descent (FISTA form) on `1/2 ||Ax - y||^2`.

use super::{
    fbp, half_sq_dist, relative_step, Regularizer, SolveReport, SolverConfig, Stopwatch, VariationalProblem,
    DIVERGENCE_FACTOR, NORM_MARGIN,
};
use crate::error::{Error, Result};
use crate::projector::Image;

pub fn agd(p: &VariationalProblem, cfg: &SolverConfig) -> Result<(Image, SolveReport)> {
    cfg.validate()?;
    if p.regularizer != Regularizer::None {
        return Err(Error::InvalidConfig("agd solves the unregularized problem only".into()));
    }
    let clock = Stopwatch::start();
    let op = &p.operator;
    let y = &p.data.values;
    let (n, m) = (op.domain_len(), op.range_len());

    let norm = op.operator_norm(cfg.norm_iters, cfg.seed);
    let lipschitz = norm * norm * (1.0 + NORM_MARGIN);
    if lipschitz == 0.0 {
        // A = 0: every image is a minimizer.
        let report = report(0, vec![half_sq_dist(&vec![0.0; m], y)], &clock, cfg);
        return Ok((Image::zeros(op.grid.clone()), report));
    }
    let step = cfg.step_scale / lipschitz;

    let mut x = if cfg.warm_start_fbp {
        fbp(&p.data, &op.grid, cfg)?.0.values
    } else {
        vec![0.0; n]
    };
    if cfg.nonnegativity {
        x.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let mut ax = vec![0.0; m];
    op.forward_into(&x, &mut ax);
    let initial = half_sq_dist(&ax, y);

    let mut x_prev = x.clone();
    let mut ax_prev = ax.clone();
    let mut z = x.clone();
    let mut az = ax.clone();
    let mut resid = vec![0.0; m];
    let mut grad = vec![0.0; n];
    let mut t = 1.0f64;
    let mut trace = vec![initial];
    let mut best = (initial, x.clone());
    let mut iterations = 0;

    for k in 1..=cfg.max_iters {
        for ((r, a), b) in resid.iter_mut().zip(&az).zip(y) {
            *r = a - b;
        }
        op.adjoint_into(&resid, &mut grad);
        std::mem::swap(&mut x_prev, &mut x);
        std::mem::swap(&mut ax_prev, &mut ax);
        for ((xi, zi), gi) in x.iter_mut().zip(&z).zip(&grad) {
            *xi = zi - step * gi;
            if cfg.nonnegativity && *xi < 0.0 {
                *xi = 0.0;
            }
        }
        op.forward_into(&x, &mut ax);
        let obj = half_sq_dist(&ax, y);
        trace.push(obj);
        iterations = k;
        if !obj.is_finite() || obj > DIVERGENCE_FACTOR * initial {
            return Err(Error::Diverged {
                iteration: k,
                objective: obj,
                initial,
            });
        }
        if obj < best.0 {
            best.0 = obj;
            best.1.copy_from_slice(&x);
        }
        if cfg.tolerance > 0.0 && relative_step(&x, &x_prev) <= cfg.tolerance {
            break;
        }

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        t = t_next;
        // A z follows from linearity, saving one projection per iteration.
        for i in 0..n {
            z[i] = x[i] + beta * (x[i] - x_prev[i]);
        }
        for i in 0..m {
            az[i] = ax[i] + beta * (ax[i] - ax_prev[i]);
        }
    }

    let image = Image::from_values(op.grid.clone(), best.1)?;
    Ok((image, report(iterations, trace, &clock, cfg)))
}

fn report(iterations: usize, trace: Vec<f64>, clock: &Stopwatch, cfg: &SolverConfig) -> SolveReport {
    SolveReport {
        iterations_run: iterations,
        objective_trace: trace,
        primal_dual_gap_trace: None,
        ergodic_objective_trace: None,
        wall_time_s: clock.seconds(),
        config_echo: cfg.clone(),
    }
}
