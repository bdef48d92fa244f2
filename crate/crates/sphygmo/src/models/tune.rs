//! Hyperparameter search over the boosted-tree space: exhaustive grid
//! over a declared lattice, or Bayesian optimisation with a Gaussian
//! process surrogate and expected improvement.
//!
//! The search minimises the objective. Evaluations that fail are recorded
//! as +inf and never become the incumbent, so one broken configuration
//! cannot sink a whole sweep.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::{Error, Result};

use super::TreeParams;

const EI_XI: f64 = 0.01;
const GP_NOISE_JITTER: f64 = 1e-6;
const GP_LENGTH_SCALE: f64 = 0.3;
const INITIAL_POINTS: usize = 5;
const CANDIDATES_PER_ROUND: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneMethod {
    Grid,
    Bayes,
}

/// Search region. Grid mode walks the full cartesian lattice; Bayesian
/// mode treats each dimension's min..max as a continuous range (the
/// learning rate on a log scale) and ignores interior lattice points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamSpace {
    pub n_estimators: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub max_depth: Vec<usize>,
}

impl Default for ParamSpace {
    fn default() -> Self {
        ParamSpace {
            n_estimators: vec![50, 150, 300, 500],
            learning_rate: vec![0.001, 0.01, 0.05, 0.2],
            max_depth: vec![3, 5, 7, 10],
        }
    }
}

impl ParamSpace {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators.is_empty()
            || self.learning_rate.is_empty()
            || self.max_depth.is_empty()
        {
            return Err(Error::config("every tuned dimension needs at least one lattice value"));
        }
        for &v in &self.n_estimators {
            if !(50..=500).contains(&v) {
                return Err(Error::config(format!("n_estimators lattice value {v} out of [50, 500]")));
            }
        }
        for &v in &self.learning_rate {
            if !(0.001..=0.2).contains(&v) {
                return Err(Error::config(format!(
                    "learning_rate lattice value {v} out of [0.001, 0.2]"
                )));
            }
        }
        for &v in &self.max_depth {
            if !(3..=10).contains(&v) {
                return Err(Error::config(format!("max_depth lattice value {v} out of [3, 10]")));
            }
        }
        Ok(())
    }

    fn bounds(&self) -> Bounds {
        let minmax_u = |vs: &[usize]| {
            let lo = *vs.iter().min().unwrap();
            let hi = *vs.iter().max().unwrap();
            (lo, hi)
        };
        let (ne_lo, ne_hi) = minmax_u(&self.n_estimators);
        let (d_lo, d_hi) = minmax_u(&self.max_depth);
        let lr_lo = self.learning_rate.iter().cloned().fold(f64::INFINITY, f64::min);
        let lr_hi = self.learning_rate.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Bounds { ne_lo, ne_hi, lr_lo, lr_hi, d_lo, d_hi }
    }
}

struct Bounds {
    ne_lo: usize,
    ne_hi: usize,
    lr_lo: f64,
    lr_hi: f64,
    d_lo: usize,
    d_hi: usize,
}

impl Bounds {
    /// Decode a point in [0,1]^3 to concrete parameters.
    fn decode(&self, z: [f64; 3], base: &TreeParams) -> TreeParams {
        let lerp_u = |lo: usize, hi: usize, t: f64| -> usize {
            if hi <= lo {
                lo
            } else {
                (lo as f64 + t * (hi - lo) as f64).round() as usize
            }
        };
        let lr = if self.lr_hi <= self.lr_lo {
            self.lr_lo
        } else {
            (self.lr_lo.ln() + z[1] * (self.lr_hi.ln() - self.lr_lo.ln())).exp()
        };
        TreeParams {
            n_estimators: lerp_u(self.ne_lo, self.ne_hi, z[0]),
            learning_rate: lr.clamp(self.lr_lo, self.lr_hi),
            max_depth: lerp_u(self.d_lo, self.d_hi, z[2]),
            ..base.clone()
        }
    }

    /// Re-encode concrete parameters to the normalized cube.
    fn encode(&self, p: &TreeParams) -> [f64; 3] {
        let unlerp_u = |lo: usize, hi: usize, v: usize| -> f64 {
            if hi <= lo {
                0.5
            } else {
                (v - lo) as f64 / (hi - lo) as f64
            }
        };
        let z_lr = if self.lr_hi <= self.lr_lo {
            0.5
        } else {
            (p.learning_rate.ln() - self.lr_lo.ln()) / (self.lr_hi.ln() - self.lr_lo.ln())
        };
        [
            unlerp_u(self.ne_lo, self.ne_hi, p.n_estimators),
            z_lr,
            unlerp_u(self.d_lo, self.d_hi, p.max_depth),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneEvaluation {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// +inf records a failed evaluation.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneTrace {
    pub method: TuneMethod,
    pub evaluations: Vec<TuneEvaluation>,
    /// Index of the incumbent within `evaluations`.
    pub best_index: usize,
}

fn dedup_key(p: &TreeParams) -> (usize, usize, u64) {
    (p.n_estimators, p.max_depth, (p.learning_rate * 1e9).round() as u64)
}

/// Gaussian-process posterior over the normalized cube, used by the
/// Bayesian mode. Kept crate-visible so calibration tests can poke at it.
pub(crate) struct Surrogate {
    xs: Vec<[f64; 3]>,
    /// standardized objectives
    ys: Vec<f64>,
    kernel: Vec<f64>,
    alpha: Vec<f64>,
}

fn rbf(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let mut s = 0.0;
    for d in 0..3 {
        let delta = (a[d] - b[d]) / GP_LENGTH_SCALE;
        s += delta * delta;
    }
    (-0.5 * s).exp()
}

impl Surrogate {
    /// Fit on the finite-objective evaluations; `None` when fewer than two
    /// points exist to standardize against.
    pub(crate) fn fit(xs: Vec<[f64; 3]>, raw_ys: &[f64]) -> Option<Surrogate> {
        let m = xs.len();
        if m < 2 {
            return None;
        }
        let mean = raw_ys.iter().sum::<f64>() / m as f64;
        let sd = (raw_ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / m as f64)
            .sqrt()
            .max(1e-12);
        let ys: Vec<f64> = raw_ys.iter().map(|y| (y - mean) / sd).collect();

        let mut kernel = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                kernel[i * m + j] = rbf(&xs[i], &xs[j]);
            }
            kernel[i * m + i] += GP_NOISE_JITTER;
        }
        let alpha = crate::linalg::solve_spd(&kernel, m, &ys)?;
        Some(Surrogate { xs, ys, kernel, alpha })
    }

    /// Posterior mean and standard deviation in standardized units.
    pub(crate) fn posterior(&self, z: &[f64; 3]) -> (f64, f64) {
        let m = self.xs.len();
        let kstar: Vec<f64> = self.xs.iter().map(|x| rbf(x, z)).collect();
        let mu: f64 = kstar.iter().zip(&self.alpha).map(|(k, a)| k * a).sum();
        let v = crate::linalg::solve_spd(&self.kernel, m, &kstar)
            .map(|u| kstar.iter().zip(&u).map(|(k, ui)| k * ui).sum::<f64>())
            .unwrap_or(0.0);
        let var = (1.0 + GP_NOISE_JITTER - v).max(0.0);
        (mu, var.sqrt())
    }

    pub(crate) fn best_observed(&self) -> f64 {
        self.ys.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Expected improvement for minimisation, in the same units as `mu`.
pub(crate) fn expected_improvement(mu: f64, sigma: f64, best: f64, xi: f64) -> f64 {
    let gap = best - mu - xi;
    if sigma < 1e-12 {
        return gap.max(0.0);
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let z = gap / sigma;
    (gap * normal.cdf(z) + sigma * normal.pdf(z)).max(0.0)
}

pub fn tune_hyperparameters<F>(
    mut objective: F,
    base: &TreeParams,
    space: &ParamSpace,
    method: TuneMethod,
    budget: usize,
    seed: u64,
) -> Result<(TreeParams, TuneTrace)>
where
    F: FnMut(&TreeParams) -> Result<f64>,
{
    space.validate()?;
    if budget == 0 {
        return Err(Error::config("tuning budget must be at least 1"));
    }

    let mut evaluations: Vec<TuneEvaluation> = Vec::new();
    let mut evaluate = |params: &TreeParams, evaluations: &mut Vec<TuneEvaluation>| {
        let value = match objective(params) {
            Ok(v) if v.is_finite() => v,
            Ok(v) => {
                log::warn!("objective returned non-finite value {v}; recording +inf");
                f64::INFINITY
            }
            Err(e) => {
                log::warn!("objective evaluation failed ({e}); recording +inf");
                f64::INFINITY
            }
        };
        evaluations.push(TuneEvaluation {
            n_estimators: params.n_estimators,
            learning_rate: params.learning_rate,
            max_depth: params.max_depth,
            objective: value,
        });
    };

    match method {
        TuneMethod::Grid => {
            'outer: for &ne in &space.n_estimators {
                for &lr in &space.learning_rate {
                    for &depth in &space.max_depth {
                        if evaluations.len() >= budget {
                            break 'outer;
                        }
                        let params = TreeParams {
                            n_estimators: ne,
                            learning_rate: lr,
                            max_depth: depth,
                            ..base.clone()
                        };
                        evaluate(&params, &mut evaluations);
                    }
                }
            }
        }
        TuneMethod::Bayes => {
            use rand::Rng;
            let bounds = space.bounds();
            let mut rng = crate::rng::stream(seed, 0x7b5e);
            let mut seen: std::collections::BTreeSet<(usize, usize, u64)> =
                std::collections::BTreeSet::new();

            let n_init = INITIAL_POINTS.min(budget);
            let mut tries = 0;
            while evaluations.len() < n_init && tries < 200 {
                tries += 1;
                let z = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
                let params = bounds.decode(z, base);
                if !seen.insert(dedup_key(&params)) {
                    continue;
                }
                evaluate(&params, &mut evaluations);
            }

            while evaluations.len() < budget {
                // surrogate over the finite evaluations only
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for e in &evaluations {
                    if e.objective.is_finite() {
                        let p = TreeParams {
                            n_estimators: e.n_estimators,
                            learning_rate: e.learning_rate,
                            max_depth: e.max_depth,
                            ..base.clone()
                        };
                        xs.push(bounds.encode(&p));
                        ys.push(e.objective);
                    }
                }
                let surrogate = Surrogate::fit(xs, &ys);

                let mut chosen: Option<(f64, TreeParams)> = None;
                for _ in 0..CANDIDATES_PER_ROUND {
                    let z = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
                    let params = bounds.decode(z, base);
                    if seen.contains(&dedup_key(&params)) {
                        continue;
                    }
                    let score = match &surrogate {
                        Some(gp) => {
                            let (mu, sigma) = gp.posterior(&bounds.encode(&params));
                            expected_improvement(mu, sigma, gp.best_observed(), EI_XI)
                        }
                        // Nothing finite yet: explore uniformly.
                        None => rng.random::<f64>(),
                    };
                    match &chosen {
                        Some((best_score, _)) if score <= *best_score => {}
                        _ => chosen = Some((score, params)),
                    }
                }
                let Some((_, params)) = chosen else {
                    // candidate pool exhausted (tiny discrete space): stop early
                    break;
                };
                seen.insert(dedup_key(&params));
                evaluate(&params, &mut evaluations);
            }
        }
    }

    if evaluations.is_empty() {
        return Err(Error::data("tuning produced no evaluations"));
    }
    let best_index = evaluations
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.objective.total_cmp(&b.1.objective))
        .map(|(i, _)| i)
        .unwrap();
    if !evaluations[best_index].objective.is_finite() {
        return Err(Error::data("every tuning evaluation failed; no usable configuration"));
    }

    let best = &evaluations[best_index];
    let winner = TreeParams {
        n_estimators: best.n_estimators,
        learning_rate: best.learning_rate,
        max_depth: best.max_depth,
        ..base.clone()
    };
    Ok((winner, TuneTrace { method, evaluations, best_index }))
}
