//! Linear quantile regression with an L1 coefficient penalty.
//!
//! Minimises `sum_i pinball_tau(y_i - b0 - x_i.b) + penalty * |b|_1` with
//! the intercept unpenalised. The objective is piecewise linear and
//! convex; the solver anneals a smoothed version with accelerated
//! proximal gradient steps, then polishes with exact coordinate descent
//! whose one-dimensional steps are weighted-quantile problems solved at
//! breakpoints. Ties and flat stretches resolve to the lowest minimiser,
//! so an intercept-only fit returns the lower sample quantile exactly.

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileModel {
    pub tau: f64,
    pub l1_penalty: f64,
    pub intercept: f64,
    pub coefs: Vec<f64>,
}

impl QuantileModel {
    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows()).map(|i| self.predict_row(x.row(i))).collect()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut out = self.intercept;
        for (c, v) in self.coefs.iter().zip(row) {
            out += c * v;
        }
        out
    }
}

/// Mean pinball loss at level `tau`.
pub fn pinball_loss(tau: f64, y_true: &[f64], y_pred: &[f64]) -> f64 {
    assert_eq!(y_true.len(), y_pred.len(), "pinball inputs must align");
    assert!(!y_true.is_empty(), "pinball needs at least one observation");
    let total: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| {
            let u = t - p;
            if u >= 0.0 {
                tau * u
            } else {
                (tau - 1.0) * u
            }
        })
        .sum();
    total / y_true.len() as f64
}

fn check_objective(tau: f64, residual: &[f64], coefs: &[f64], penalty: f64) -> f64 {
    let mut obj = 0.0;
    for &u in residual {
        obj += if u >= 0.0 { tau * u } else { (tau - 1.0) * u };
    }
    obj + penalty * coefs.iter().map(|c| c.abs()).sum::<f64>()
}

/// Derivative of the smoothed pinball (uniform-kernel convolution of
/// half-width `kappa`).
fn psi(u: f64, tau: f64, kappa: f64) -> f64 {
    if u >= kappa {
        tau
    } else if u <= -kappa {
        tau - 1.0
    } else {
        u / (2.0 * kappa) + tau - 0.5
    }
}

fn smooth_pinball(u: f64, tau: f64, kappa: f64) -> f64 {
    if u >= kappa {
        tau * u
    } else if u <= -kappa {
        (tau - 1.0) * u
    } else {
        u * u / (4.0 * kappa) + (tau - 0.5) * u + kappa / 4.0
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Largest eigenvalue of the Gram matrix of [1 | X] by power iteration.
fn gram_spectral_bound(x: &Matrix) -> f64 {
    let n = x.rows();
    let d = x.cols() + 1;
    let mut gram = vec![0.0; d * d];
    for i in 0..n {
        let row = x.row(i);
        // augmented row: leading 1 for the intercept
        for a in 0..d {
            let va = if a == 0 { 1.0 } else { row[a - 1] };
            for b in a..d {
                let vb = if b == 0 { 1.0 } else { row[b - 1] };
                gram[a * d + b] += va * vb;
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            gram[a * d + b] = gram[b * d + a];
        }
    }
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 1.0;
    for _ in 0..60 {
        let mut w = vec![0.0; d];
        for a in 0..d {
            let mut acc = 0.0;
            for b in 0..d {
                acc += gram[a * d + b] * v[b];
            }
            w[a] = acc;
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 0.0 {
            return 1.0;
        }
        lambda = norm;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
    }
    lambda.max(1e-12)
}

struct Fista<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    tau: f64,
    penalty: f64,
}

impl<'a> Fista<'a> {
    /// theta = (intercept, coefs...)
    fn smooth_objective(&self, theta: &[f64], kappa: f64) -> f64 {
        let mut obj = 0.0;
        for i in 0..self.x.rows() {
            let mut pred = theta[0];
            for (c, v) in theta[1..].iter().zip(self.x.row(i)) {
                pred += c * v;
            }
            obj += smooth_pinball(self.y[i] - pred, self.tau, kappa);
        }
        obj + self.penalty * theta[1..].iter().map(|c| c.abs()).sum::<f64>()
    }

    fn gradient(&self, theta: &[f64], kappa: f64, grad: &mut [f64]) {
        grad.fill(0.0);
        for i in 0..self.x.rows() {
            let row = self.x.row(i);
            let mut pred = theta[0];
            for (c, v) in theta[1..].iter().zip(row) {
                pred += c * v;
            }
            let p = psi(self.y[i] - pred, self.tau, kappa);
            grad[0] -= p;
            for (g, v) in grad[1..].iter_mut().zip(row) {
                *g -= p * v;
            }
        }
    }

    /// One annealing stage at fixed kappa; mutates theta in place.
    fn stage(&self, theta: &mut Vec<f64>, kappa: f64, lipschitz: f64, max_iter: usize) {
        let dim = theta.len();
        let mut z = theta.clone();
        let mut prev = theta.clone();
        let mut grad = vec![0.0; dim];
        let mut t: f64 = 1.0;
        let mut last_obj = self.smooth_objective(theta, kappa);
        for _ in 0..max_iter {
            self.gradient(&z, kappa, &mut grad);
            let mut next = vec![0.0; dim];
            next[0] = z[0] - grad[0] / lipschitz;
            for j in 1..dim {
                next[j] = soft_threshold(z[j] - grad[j] / lipschitz, self.penalty / lipschitz);
            }
            let obj = self.smooth_objective(&next, kappa);
            if obj > last_obj {
                // adaptive restart: drop momentum and retry from theta
                t = 1.0;
                z = theta.clone();
                self.gradient(&z, kappa, &mut grad);
                next[0] = z[0] - grad[0] / lipschitz;
                for j in 1..dim {
                    next[j] =
                        soft_threshold(z[j] - grad[j] / lipschitz, self.penalty / lipschitz);
                }
            }
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let momentum = (t - 1.0) / t_next;
            for j in 0..dim {
                z[j] = next[j] + momentum * (next[j] - prev[j]);
            }
            prev.copy_from_slice(&next);
            *theta = next;
            t = t_next;
            let obj = self.smooth_objective(theta, kappa);
            if (last_obj - obj).abs() <= 1e-12 * (1.0 + obj.abs()) {
                break;
            }
            last_obj = obj;
        }
    }
}

/// Exact minimiser over one coordinate: given breakpoints `c_i` with
/// weights `w_i` and per-point quantile levels `tau_i`, plus an optional
/// L1 penalty on the coordinate, returns the lowest minimiser of
/// `sum_i w_i * pinball_{tau_i}(c_i - b) + penalty * |b|`.
fn coordinate_minimum(points: &mut Vec<(f64, f64, f64)>, penalty: f64) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    points.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let n = points.len();

    // Candidate minimisers: every breakpoint, plus the penalty kink at 0.
    let mut cands: Vec<f64> = points.iter().map(|p| p.0).collect();
    if penalty > 0.0 {
        cands.push(0.0);
        cands.sort_unstable_by(f64::total_cmp);
        cands.dedup();
    } else {
        cands.dedup();
    }

    // Right-derivative below every breakpoint; each point switches from
    // slope -w*t to +w*(1-t) as b passes its c, a jump of exactly +w.
    let below_all: f64 = points.iter().map(|&(_, w, t)| -w * t).sum();
    let mut cum = 0.0;
    let mut next = 0;
    for &c in &cands {
        while next < n && points[next].0 <= c {
            cum += points[next].1;
            next += 1;
        }
        let pen = if penalty > 0.0 {
            if c >= 0.0 {
                penalty
            } else {
                -penalty
            }
        } else {
            0.0
        };
        if below_all + cum + pen >= 0.0 {
            return c;
        }
    }
    // Unreachable for tau in (0, 1): the derivative past the last candidate
    // is strictly positive. Kept as a safe fallback.
    points[n - 1].0
}

pub fn fit_quantile(x: &Matrix, y: &[f64], tau: f64, l1_penalty: f64) -> Result<QuantileModel> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::config(format!("tau must lie strictly in (0, 1), got {tau}")));
    }
    if !(l1_penalty >= 0.0 && l1_penalty.is_finite()) {
        return Err(Error::config(format!("l1 penalty must be finite and >= 0, got {l1_penalty}")));
    }
    if x.rows() != y.len() {
        return Err(Error::internal(format!(
            "design matrix has {} rows but target has {}",
            x.rows(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::data("cannot fit a quantile model on zero rows"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("quantile target contains non-finite values"));
    }

    let n = x.rows();
    let d = x.cols();
    let start_intercept = crate::stats::quantile_lower(y, tau);

    // Intercept-only model: the exact answer is the lower sample quantile.
    if d == 0 {
        return Ok(QuantileModel { tau, l1_penalty, intercept: start_intercept, coefs: vec![] });
    }

    // Phase 1: annealed smoothing with accelerated proximal gradient.
    let mut theta = vec![0.0; d + 1];
    theta[0] = start_intercept;
    let scale = crate::stats::std_dev(y).max(1e-8);
    let gram_bound = gram_spectral_bound(x);
    let fista = Fista { x, y, tau, penalty: l1_penalty };
    for exp in 1..=7 {
        let kappa = scale * 10f64.powi(-exp);
        let lipschitz = (gram_bound / (2.0 * kappa)) * 1.05;
        fista.stage(&mut theta, kappa, lipschitz, 800);
    }

    // Phase 2: exact coordinate descent on the true objective. The
    // feature contribution is tracked separately from the intercept so a
    // model whose coefficients are all zero reduces to an exact sample
    // quantile with no float drift.
    let mut intercept = theta[0];
    let mut coefs = theta[1..].to_vec();
    let mut linear: Vec<f64> = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (c, v) in coefs.iter().zip(x.row(i)) {
                acc += c * v;
            }
            acc
        })
        .collect();
    let objective_at = |intercept: f64, coefs: &[f64], linear: &[f64]| {
        let residual: Vec<f64> =
            (0..n).map(|i| y[i] - intercept - linear[i]).collect();
        check_objective(tau, &residual, coefs, l1_penalty)
    };

    let mut obj = objective_at(intercept, &coefs, &linear);
    let zero_coefs = vec![0.0; d];
    let zero_linear = vec![0.0; n];
    let start_obj = objective_at(start_intercept, &zero_coefs, &zero_linear);
    if obj > start_obj {
        // The smoothing phase went somewhere worse than the trivial start;
        // restart the polish from the constant model.
        intercept = start_intercept;
        coefs = zero_coefs;
        linear = zero_linear;
        obj = start_obj;
    }

    const MAX_SWEEPS: usize = 400;
    let mut points: Vec<(f64, f64, f64)> = Vec::with_capacity(n);
    let mut converged = false;
    let mut gap = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        // intercept step: plain tau-quantile of y minus the feature part
        points.clear();
        points.extend((0..n).map(|i| (y[i] - linear[i], 1.0, tau)));
        intercept = coordinate_minimum(&mut points, 0.0);

        for j in 0..d {
            points.clear();
            for i in 0..n {
                let v = x.get(i, j);
                if v == 0.0 {
                    continue;
                }
                let c = (y[i] - intercept - linear[i] + v * coefs[j]) / v;
                let (w, t) = if v > 0.0 { (v, tau) } else { (-v, 1.0 - tau) };
                points.push((c, w, t));
            }
            let new_bj = if points.is_empty() {
                if l1_penalty > 0.0 {
                    0.0
                } else {
                    coefs[j]
                }
            } else {
                coordinate_minimum(&mut points, l1_penalty)
            };
            if new_bj != coefs[j] {
                let delta = new_bj - coefs[j];
                for i in 0..n {
                    let v = x.get(i, j);
                    if v != 0.0 {
                        linear[i] += v * delta;
                    }
                }
                coefs[j] = new_bj;
            }
        }

        let new_obj = objective_at(intercept, &coefs, &linear);
        gap = obj - new_obj;
        if gap <= 1e-11 * (1.0 + new_obj.abs()) {
            obj = new_obj;
            converged = true;
            break;
        }
        obj = new_obj;
    }

    if !converged {
        return Err(Error::internal(format!(
            "quantile solver failed to converge after {MAX_SWEEPS} sweeps; \
             objective still improving by {gap:.3e} per sweep (objective {obj:.6e})"
        )));
    }

    Ok(QuantileModel { tau, l1_penalty, intercept, coefs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn pinball_of_a_perfect_prediction_is_zero() {
        let y = vec![1.0, 2.0, 3.0];
        assert_eq!(pinball_loss(0.1, &y, &y), 0.0);
        assert_eq!(pinball_loss(0.9, &y, &y), 0.0);
    }

    #[test]
    fn pinball_penalises_the_expected_side_more() {
        // tau = 0.9: under-prediction (y above) costs 0.9/unit, over costs 0.1.
        let y = vec![2.0];
        assert!((pinball_loss(0.9, &y, &[1.0]) - 0.9).abs() < 1e-15);
        assert!((pinball_loss(0.9, &y, &[3.0]) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn intercept_only_fit_is_the_lower_sample_quantile() {
        let mut rng = crate::rng::stream(21, 0x71);
        for trial in 0..40 {
            let n = 5 + (trial % 37);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            for &tau in &[0.1, 0.25, 0.5, 0.9] {
                let x = Matrix::zeros(n, 0);
                let model = fit_quantile(&x, &y, tau, 0.3).unwrap();
                let expected = crate::stats::quantile_lower(&y, tau);
                assert_eq!(model.intercept, expected, "n={n} tau={tau}");
                assert!(model.coefs.is_empty());
            }
        }
    }

    #[test]
    fn perfect_linear_data_is_recovered_without_penalty() {
        let mut rng = crate::rng::stream(22, 0x71);
        let n = 120;
        let xs: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = Matrix::from_flat(xs, n, 2);
        let y: Vec<f64> = (0..n).map(|i| 1.5 + 2.0 * x.get(i, 0) - 0.7 * x.get(i, 1)).collect();
        for &tau in &[0.1, 0.5, 0.9] {
            let model = fit_quantile(&x, &y, tau, 0.0).unwrap();
            let loss = pinball_loss(tau, &y, &model.predict(&x));
            assert!(loss < 1e-8, "tau={tau} loss={loss}");
        }
    }

    /// Exhaustive oracle for one-feature LAD: some optimal line passes
    /// through two sample points, so enumerating all pairs bounds the
    /// optimum from below.
    fn lad_pair_oracle(xs: &[f64], y: &[f64]) -> f64 {
        let n = xs.len();
        let objective = |a: f64, b: f64| -> f64 {
            xs.iter().zip(y).map(|(&x, &t)| (t - a - b * x).abs() * 0.5).sum()
        };
        let mut best = f64::INFINITY;
        for i in 0..n {
            for k in (i + 1)..n {
                if xs[k] == xs[i] {
                    continue;
                }
                let slope = (y[k] - y[i]) / (xs[k] - xs[i]);
                let inter = y[i] - slope * xs[i];
                best = best.min(objective(inter, slope));
            }
        }
        best
    }

    #[test]
    fn median_regression_matches_the_pair_enumeration_oracle() {
        let mut rng = crate::rng::stream(23, 0x71);
        for trial in 0..5 {
            let n = 40 + trial * 10;
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y: Vec<f64> = xs
                .iter()
                .map(|&x| 4.0 + 1.8 * x + rng.random_range(-1.0..1.0))
                .collect();
            let x = Matrix::from_flat(xs.clone(), n, 1);
            let model = fit_quantile(&x, &y, 0.5, 0.0).unwrap();
            let mine = check_objective(
                0.5,
                &(0..n).map(|i| y[i] - model.predict_row(x.row(i))).collect::<Vec<_>>(),
                &model.coefs,
                0.0,
            );
            let oracle = lad_pair_oracle(&xs, &y);
            assert!(
                mine <= oracle * (1.0 + 1e-6) + 1e-12,
                "trial {trial}: solver objective {mine} vs oracle {oracle}"
            );
            // Symmetric noise: the median slope should sit near the OLS slope.
            let (coefs, _) = crate::linalg::lstsq(&x, &y, 0.0).unwrap();
            assert!(
                (model.coefs[0] - coefs[0]).abs() < 0.2,
                "LAD slope {} vs OLS slope {}",
                model.coefs[0],
                coefs[0]
            );
        }
    }

    #[test]
    fn heavy_penalty_shrinks_every_coefficient_to_zero() {
        let mut rng = crate::rng::stream(24, 0x71);
        let n = 80;
        let xs: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Matrix::from_flat(xs, n, 3);
        let y: Vec<f64> = (0..n).map(|i| 5.0 + x.get(i, 0) + rng.random_range(-0.5..0.5)).collect();
        let model = fit_quantile(&x, &y, 0.5, 1e6).unwrap();
        assert!(model.coefs.iter().all(|&c| c == 0.0), "coefs {:?}", model.coefs);
        assert_eq!(model.intercept, crate::stats::quantile_lower(&y, 0.5));
    }

    #[test]
    fn penalised_objective_never_exceeds_the_constant_start() {
        // The polish starts from (quantile, 0) when smoothing misbehaves, so
        // the final penalised objective is bounded by the best constant fit.
        let mut rng = crate::rng::stream(25, 0x71);
        let n = 100;
        let xs: Vec<f64> = (0..n * 4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = Matrix::from_flat(xs, n, 4);
        let y: Vec<f64> =
            (0..n).map(|i| 120.0 + 6.0 * x.get(i, 0) + rng.random_range(-4.0..4.0)).collect();
        for &tau in &[0.1, 0.9] {
            let model = fit_quantile(&x, &y, tau, 0.1).unwrap();
            let fitted = pinball_loss(tau, &y, &model.predict(&x));
            let constant =
                pinball_loss(tau, &y, &vec![crate::stats::quantile_lower(&y, tau); n]);
            assert!(
                fitted <= constant + 1e-12,
                "tau={tau}: fitted pinball {fitted} vs best constant {constant}"
            );
        }
    }

    #[test]
    fn roughly_tau_of_the_sample_sits_below_the_fitted_line() {
        let mut rng = crate::rng::stream(26, 0x71);
        let n = 600;
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..4.0)).collect();
        let y: Vec<f64> =
            xs.iter().map(|&x| 10.0 + 3.0 * x + rng.random_range(-2.0..2.0)).collect();
        let x = Matrix::from_flat(xs, n, 1);
        for &tau in &[0.1, 0.9] {
            let model = fit_quantile(&x, &y, tau, 0.0).unwrap();
            let preds = model.predict(&x);
            let below =
                y.iter().zip(&preds).filter(|(t, p)| t < p).count() as f64 / n as f64;
            assert!(
                (below - tau).abs() < 0.05,
                "tau={tau}: fraction below fitted line {below}"
            );
        }
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        let x = Matrix::from_flat(vec![1.0, 2.0, 3.0], 3, 1);
        let y = vec![1.0, 2.0, 3.0];
        assert!(fit_quantile(&x, &y, 0.0, 0.1).is_err());
        assert!(fit_quantile(&x, &y, 1.0, 0.1).is_err());
        assert!(fit_quantile(&x, &y, 0.5, -0.1).is_err());
        assert!(fit_quantile(&x, &[1.0, f64::NAN, 3.0], 0.5, 0.1).is_err());
    }
}
