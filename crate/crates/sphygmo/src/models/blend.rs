//! Convex blend of the primary and stacked predictions.
//!
//! The blended prediction is `alpha * primary + (1 - alpha) * stacked`.
//! MSE as a function of alpha is a parabola, so the unconstrained
//! minimiser has a closed form; it is clamped to [0, 1]. A coarse grid
//! evaluation is kept alongside for reporting.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Alpha used when the two sets of predictions are identical and the
/// blend weight is unidentifiable.
pub const DEGENERATE_BLEND_ALPHA: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendChoice {
    /// Closed-form minimiser clamped to [0, 1]; this is what predictions use.
    pub alpha: f64,
    /// True when primary and stacked predictions coincide everywhere and
    /// alpha fell back to the default.
    pub degenerate: bool,
    /// (alpha, mse) over the 0.1-spaced grid, for reports.
    pub grid: Vec<(f64, f64)>,
    /// Grid point with the lowest MSE (ties take the smaller alpha).
    pub grid_alpha: f64,
}

fn blend_mse(y: &[f64], primary: &[f64], stacked: &[f64], alpha: f64) -> f64 {
    let n = y.len() as f64;
    y.iter()
        .zip(primary)
        .zip(stacked)
        .map(|((t, p), s)| {
            let b = alpha * p + (1.0 - alpha) * s;
            (b - t).powi(2)
        })
        .sum::<f64>()
        / n
}

/// MSE of the blend at each grid alpha {0.0, 0.1, ..., 1.0}.
pub fn blend_grid(y: &[f64], primary: &[f64], stacked: &[f64]) -> Vec<(f64, f64)> {
    (0..=10)
        .map(|k| {
            let alpha = k as f64 / 10.0;
            (alpha, blend_mse(y, primary, stacked, alpha))
        })
        .collect()
}

pub fn blend_alpha(y: &[f64], primary: &[f64], stacked: &[f64]) -> Result<BlendChoice> {
    let n = y.len();
    if primary.len() != n || stacked.len() != n {
        return Err(Error::internal(format!(
            "blend inputs disagree in length: {} targets, {} primary, {} stacked",
            n,
            primary.len(),
            stacked.len()
        )));
    }
    if n == 0 {
        return Err(Error::data("cannot choose a blend weight from zero rows"));
    }
    if y.iter().chain(primary).chain(stacked).any(|v| !v.is_finite()) {
        return Err(Error::data("blend inputs contain non-finite values"));
    }

    // MSE(alpha) = mean((s - y + alpha d)^2) with d = p - s; the vertex is
    // alpha = sum(d (y - s)) / sum(d^2).
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let d = primary[i] - stacked[i];
        num += d * (y[i] - stacked[i]);
        den += d * d;
    }

    let grid = blend_grid(y, primary, stacked);
    let grid_alpha = grid
        .iter()
        .fold((f64::INFINITY, 0.0), |best, &(a, mse)| {
            if mse < best.0 {
                (mse, a)
            } else {
                best
            }
        })
        .1;

    if den == 0.0 {
        return Ok(BlendChoice {
            alpha: DEGENERATE_BLEND_ALPHA,
            degenerate: true,
            grid,
            grid_alpha,
        });
    }

    Ok(BlendChoice {
        alpha: (num / den).clamp(0.0, 1.0),
        degenerate: false,
        grid,
        grid_alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn noisy_pair(seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = crate::rng::stream(seed, 0xb1e4d);
        let n = 400;
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(90.0..180.0)).collect();
        let primary: Vec<f64> =
            y.iter().map(|t| t + rng.random_range(-6.0..6.0)).collect();
        let stacked: Vec<f64> =
            y.iter().map(|t| t + rng.random_range(-8.0..8.0)).collect();
        (y, primary, stacked)
    }

    #[test]
    fn identical_predictions_fall_back_to_the_default_alpha() {
        let y = vec![1.0, 2.0, 3.0];
        let p = vec![1.1, 2.1, 2.9];
        let choice = blend_alpha(&y, &p, &p).unwrap();
        assert!(choice.degenerate);
        assert_eq!(choice.alpha, DEGENERATE_BLEND_ALPHA);
    }

    #[test]
    fn closed_form_beats_both_endpoints() {
        for seed in 0..6 {
            let (y, p, s) = noisy_pair(seed);
            let choice = blend_alpha(&y, &p, &s).unwrap();
            assert!(!choice.degenerate);
            let at = |a| blend_mse(&y, &p, &s, a);
            let best = at(choice.alpha);
            assert!(best <= at(0.0) + 1e-12, "alpha* worse than stacked alone");
            assert!(best <= at(1.0) + 1e-12, "alpha* worse than primary alone");
        }
    }

    #[test]
    fn closed_form_matches_a_fine_numeric_scan() {
        let (y, p, s) = noisy_pair(9);
        let choice = blend_alpha(&y, &p, &s).unwrap();
        let scan_best = (0..=10_000)
            .map(|k| k as f64 / 10_000.0)
            .fold((f64::INFINITY, 0.0), |best, a| {
                let m = blend_mse(&y, &p, &s, a);
                if m < best.0 {
                    (m, a)
                } else {
                    best
                }
            })
            .1;
        assert!(
            (choice.alpha - scan_best).abs() <= 1e-4,
            "closed form {} vs scan {}",
            choice.alpha,
            scan_best
        );
    }

    #[test]
    fn alpha_is_clamped_to_the_unit_interval() {
        // Stacked is strictly better and anti-correlated adjustments push
        // the unconstrained vertex below zero.
        let y = vec![0.0, 0.0, 0.0, 0.0];
        let s = vec![0.1, -0.1, 0.1, -0.1];
        let p = vec![1.0, -1.0, 1.0, -1.0];
        let choice = blend_alpha(&y, &p, &s).unwrap();
        assert_eq!(choice.alpha, 0.0);
        // And the mirror case clamps to one.
        let choice = blend_alpha(&y, &s, &p).unwrap();
        assert_eq!(choice.alpha, 1.0);
    }

    #[test]
    fn grid_has_eleven_points_and_contains_both_endpoints() {
        let (y, p, s) = noisy_pair(10);
        let choice = blend_alpha(&y, &p, &s).unwrap();
        assert_eq!(choice.grid.len(), 11);
        assert_eq!(choice.grid[0].0, 0.0);
        assert_eq!(choice.grid[10].0, 1.0);
        let grid_min = choice
            .grid
            .iter()
            .map(|&(_, m)| m)
            .fold(f64::INFINITY, f64::min);
        // The continuous minimiser is at least as good as the best grid point.
        assert!(blend_mse(&y, &p, &s, choice.alpha) <= grid_min + 1e-12);
        assert!((choice.grid_alpha * 10.0).fract() == 0.0);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(blend_alpha(&[1.0, 2.0], &[1.0], &[1.0, 2.0]).is_err());
    }
}
