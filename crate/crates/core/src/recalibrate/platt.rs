use super::{fit_targets, sigmoid, DimSamples, FitConfig, FitMeta, FitMode, PlattParams, RecalParams, Recalibrator};
use crate::error::{Error, Result};
use crate::metrics::log_loss;
use crate::optimize::lbfgs;
use crate::types::ConfidenceSample;

/// Mean clamped NLL of `sigmoid(alpha * c + beta)` against `targets`.
pub fn platt_nll(params: PlattParams, confidences: &[f64], targets: &[f64], epsilon: f64) -> f64 {
    let total: f64 = confidences
        .iter()
        .zip(targets)
        .map(|(&c, &t)| log_loss(params.apply(c), t, epsilon))
        .sum();
    total / confidences.len() as f64
}

// Relative tolerance for summation noise in the objective.
const ROUNDING_SLACK: f64 = 1e-13;

struct NewtonFit {
    params: PlattParams,
    converged: bool,
    iterations: usize,
}

/// Damped Newton on the two-parameter convex Platt objective.
fn newton_platt(confidences: &[f64], targets: &[f64], cfg: &FitConfig) -> Result<NewtonFit> {
    let n = confidences.len() as f64;
    let bound = cfg.param_bound;
    let clamp = |p: PlattParams| PlattParams { alpha: p.alpha.clamp(-bound, bound), beta: p.beta.clamp(-bound, bound) };
    let mut params = PlattParams::IDENTITY_INIT;
    let mut value = platt_nll(params, confidences, targets, cfg.epsilon);

    for iter in 0..cfg.max_iterations {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&c, &t) in confidences.iter().zip(targets) {
            let p = params.apply(c);
            let r = p - t;
            let w = p * (1.0 - p);
            ga += r * c;
            gb += r;
            haa += w * c * c;
            hab += w * c;
            hbb += w;
        }
        let (ga, gb, haa, hab, hbb) = (ga / n, gb / n, haa / n, hab / n, hbb / n);
        if !(ga.is_finite() && gb.is_finite()) {
            return Err(Error::NonFinite("platt gradient"));
        }
        if ga.abs().max(gb.abs()) < cfg.gradient_tolerance {
            return Ok(NewtonFit { params, converged: true, iterations: iter });
        }
        let det = haa * hbb - hab * hab;
        let (da, db) = if det > 1e-14 * (haa * hbb).max(f64::MIN_POSITIVE) && det.is_finite() {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else {
            (ga, gb)
        };
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let candidate = clamp(PlattParams { alpha: params.alpha - step * da, beta: params.beta - step * db });
            let v = platt_nll(candidate, confidences, targets, cfg.epsilon);
            // Near the optimum a full Newton step may only tie up to rounding.
            if v < value || (step == 1.0 && v <= value + ROUNDING_SLACK * value.abs()) {
                accepted = Some((candidate, v));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((p, v)) => {
                params = p;
                value = v;
            }
            // No decrease is possible along the Newton direction.
            None => return Ok(NewtonFit { params, converged: false, iterations: iter }),
        }
    }
    Ok(NewtonFit { params, converged: false, iterations: cfg.max_iterations })
}

/// Fits global Platt scaling `g(c) = sigmoid(alpha * c + beta)` by NLL
/// minimization, starting from `(1, 0)`.
pub fn fit_platt(samples: &[ConfidenceSample], cfg: &FitConfig) -> Result<Recalibrator> {
    cfg.validate()?;
    let outcomes: Vec<bool> = samples.iter().map(|s| s.outcome).collect();
    let targets = fit_targets(&outcomes, cfg)?;
    let confidences: Vec<f64> = samples.iter().map(|s| s.confidence).collect();
    let fit = newton_platt(&confidences, &targets, cfg)?;
    Recalibrator::new(
        RecalParams::Platt(fit.params),
        FitMeta { n: samples.len(), seed: None, converged: fit.converged, iterations: fit.iterations, mode: None },
    )
}

/// Mean clamped NLL of the averaged per-dimension sigmoids; writes the
/// gradient with respect to `[alpha_0, beta_0, alpha_1, ...]` into `grad`.
fn joint_objective(theta: &[f64], data: &DimSamples, targets: &[f64], epsilon: f64, grad: &mut [f64]) -> f64 {
    let d = data.dims();
    let inv_d = 1.0 / d as f64;
    grad.fill(0.0);
    let mut total = 0.0;
    let mut sig = vec![0.0; d];
    for (row, &t) in data.per_dim_confidence.iter().zip(targets) {
        let mut p = 0.0;
        for (k, &c) in row.iter().enumerate() {
            sig[k] = sigmoid(theta[2 * k] * c + theta[2 * k + 1]);
            p += sig[k];
        }
        p *= inv_d;
        total += log_loss(p, t, epsilon);
        if p <= epsilon || p >= 1.0 - epsilon {
            continue; // clamped region is flat
        }
        let dl_dp = (p - t) / (p * (1.0 - p));
        for (k, &c) in row.iter().enumerate() {
            let ds = dl_dp * sig[k] * (1.0 - sig[k]) * inv_d;
            grad[2 * k] += ds * c;
            grad[2 * k + 1] += ds;
        }
    }
    let n = targets.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    total / n
}

/// Fits one affine-sigmoid transform per action dimension.
///
/// In [`FitMode::Joint`] the objective is the NLL of the averaged sigmoids,
/// minimized with L-BFGS over all `2D` parameters from `(1, 0)` per
/// dimension; the objective is not convex. In [`FitMode::Independent`] each
/// dimension gets its own global Platt fit on that dimension's confidence.
pub fn fit_actionwise_platt(data: &DimSamples, cfg: &FitConfig, mode: FitMode) -> Result<Recalibrator> {
    cfg.validate()?;
    data.validate()?;
    let targets = fit_targets(&data.outcomes, cfg)?;
    let d = data.dims();
    let (params, converged, iterations) = match mode {
        FitMode::Independent => {
            let mut params = Vec::with_capacity(d);
            let (mut converged, mut iterations) = (true, 0);
            for dim in 0..d {
                let column: Vec<f64> = data.per_dim_confidence.iter().map(|row| row[dim]).collect();
                let fit = newton_platt(&column, &targets, cfg)?;
                converged &= fit.converged;
                iterations = iterations.max(fit.iterations);
                params.push(fit.params);
            }
            (params, converged, iterations)
        }
        FitMode::Joint => {
            let x0: Vec<f64> = (0..d).flat_map(|_| [1.0, 0.0]).collect();
            let min = lbfgs(
                |theta, grad| joint_objective(theta, data, &targets, cfg.epsilon, grad),
                x0,
                cfg.param_bound,
                cfg.max_iterations,
                cfg.gradient_tolerance,
            );
            if !min.value.is_finite() {
                return Err(Error::NonFinite("action-wise platt objective"));
            }
            let params = min.x.chunks(2).map(|p| PlattParams { alpha: p[0], beta: p[1] }).collect();
            (params, min.converged, min.iterations)
        }
    };
    Recalibrator::new(
        RecalParams::ActionwisePlatt(params),
        FitMeta { n: data.len(), seed: None, converged, iterations, mode: Some(mode) },
    )
}
