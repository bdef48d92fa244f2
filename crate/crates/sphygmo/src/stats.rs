//! Small numeric helpers shared across the pipeline.
//!
//! Quantiles come in two flavours and the distinction matters:
//! [`quantile_linear`] interpolates (used for report percentiles, medians,
//! IQR scales), while [`quantile_lower`] returns the lowest order statistic
//! that minimizes pinball loss (used wherever a result must agree with a
//! pinball-loss optimum, e.g. quantile-head intercepts).

pub fn mean(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "mean of empty slice");
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n - 1 denominator). Zero for slices of length one.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Population variance (n denominator), for contexts where the slice is
/// the whole population of interest (e.g. per-stage training losses).
pub fn variance_population(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("NaN in quantile input"));
    s
}

/// Interpolating quantile (the numpy default): p in [0, 1].
pub fn quantile_linear(xs: &[f64], p: f64) -> f64 {
    assert!(!xs.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&p), "quantile level {p} outside [0, 1]");
    let s = sorted_copy(xs);
    let h = p * (s.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        s[lo]
    } else {
        s[lo] + (h - lo as f64) * (s[hi] - s[lo])
    }
}

/// Lowest sample value minimizing pinball loss at level `tau`: the order
/// statistic with 1-based rank ceil(n * tau), clamped to [1, n].
pub fn quantile_lower(xs: &[f64], tau: f64) -> f64 {
    assert!(!xs.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&tau), "quantile level {tau} outside [0, 1]");
    let s = sorted_copy(xs);
    let rank = (tau * s.len() as f64).ceil() as usize;
    s[rank.clamp(1, s.len()) - 1]
}

pub fn median(xs: &[f64]) -> f64 {
    quantile_linear(xs, 0.5)
}

/// Interquartile range with interpolating quartiles.
pub fn iqr(xs: &[f64]) -> f64 {
    quantile_linear(xs, 0.75) - quantile_linear(xs, 0.25)
}

/// Survival function of the Kolmogorov distribution,
/// Q(x) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 x^2).
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * x * x).exp();
        sum += sign * term;
        if term < 1e-14 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov test.
///
/// Returns `(statistic, p_value)` where the statistic is the maximum gap
/// between the two empirical CDFs and the p-value comes from the
/// asymptotic Kolmogorov distribution evaluated at
/// sqrt(n1 * n2 / (n1 + n2)) * statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert!(!a.is_empty() && !b.is_empty(), "KS test on an empty sample");
    let sa = sorted_copy(a);
    let sb = sorted_copy(b);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let mut i = 0;
    let mut j = 0;
    let mut d = 0.0_f64;
    while i < sa.len() || j < sb.len() {
        // Step both CDFs past every sample tied at the current pooled
        // value before measuring the gap.
        let v = match (sa.get(i), sb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < sa.len() && sa[i] == v {
            i += 1;
        }
        while j < sb.len() && sb[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let effective_n = na * nb / (na + nb);
    (d, kolmogorov_survival(effective_n.sqrt() * d))
}

/// Pearson correlation; zero when either side is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "correlation length mismatch");
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_variance_match_hand_values() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn linear_quantile_interpolates() {
        let xs = [10.0, 20.0, 30.0, 40.0];
        assert_eq!(quantile_linear(&xs, 0.0), 10.0);
        assert_eq!(quantile_linear(&xs, 1.0), 40.0);
        assert_eq!(median(&xs), 25.0);
        assert!((quantile_linear(&xs, 0.25) - 17.5).abs() < 1e-12);
    }

    #[test]
    fn lower_quantile_is_the_pinball_minimizer() {
        // Brute-force the pinball loss over candidate values and check the
        // helper lands on the smallest minimizer.
        let xs = [3.0, 1.0, 4.0, 1.5, 9.0, 2.6, 5.3, 5.8, 9.7, 0.2];
        for tau in [0.1, 0.25, 0.5, 0.9] {
            let loss = |c: f64| -> f64 {
                xs.iter()
                    .map(|y| {
                        let u = y - c;
                        if u >= 0.0 {
                            tau * u
                        } else {
                            (tau - 1.0) * u
                        }
                    })
                    .sum()
            };
            let q = quantile_lower(&xs, tau);
            let mut sorted = xs.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let best = sorted
                .iter()
                .copied()
                .min_by(|a, b| loss(*a).partial_cmp(&loss(*b)).unwrap())
                .unwrap();
            assert_eq!(q, best, "tau {tau}");
        }
    }

    /// Brute-force empirical-CDF comparison: evaluate both CDFs at every
    /// pooled value and take the largest gap.
    fn ks_stat_by_enumeration(a: &[f64], b: &[f64]) -> f64 {
        let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        pooled.sort_by(|x, y| x.partial_cmp(y).unwrap());
        pooled.dedup();
        pooled
            .iter()
            .map(|&v| {
                let fa = a.iter().filter(|&&x| x <= v).count() as f64 / a.len() as f64;
                let fb = b.iter().filter(|&&x| x <= v).count() as f64 / b.len() as f64;
                (fa - fb).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn ks_statistic_matches_enumeration() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [3.5, 4.5, 5.0, 6.0];
        let (d, _) = ks_two_sample(&a, &b);
        assert_eq!(d, 0.75);
        assert_eq!(d, ks_stat_by_enumeration(&a, &b));

        // Ties across samples exercise the pooled stepping.
        let c = [1.0, 2.0, 2.0, 3.0, 4.0];
        let e = [2.0, 2.5, 4.0, 4.0];
        let (d2, _) = ks_two_sample(&c, &e);
        assert!((d2 - 0.35).abs() < 1e-12);
        assert_eq!(d2, ks_stat_by_enumeration(&c, &e));
    }

    #[test]
    fn ks_of_a_sample_against_itself_is_zero() {
        let a = [3.0, 1.0, 4.0, 1.5, 9.0];
        let (d, p) = ks_two_sample(&a, &a);
        assert_eq!(d, 0.0);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn kolmogorov_survival_matches_reference_values() {
        // Reference values from scipy.special.kolmogorov.
        let cases = [
            (0.05, 1.0),
            (0.5, 0.9639452436648751),
            (0.8, 0.5441424115741981),
            (1.0, 0.26999967167735456),
            (1.5, 0.022217962616525127),
            (2.0, 0.0006709252557796953),
            (3.0, 3.045995948942526e-8),
        ];
        for (x, q) in cases {
            let got = kolmogorov_survival(x);
            assert!(
                (got - q).abs() <= 1e-12 + 1e-10 * q,
                "Q({x}) = {got}, want {q}"
            );
        }
        // 4-vs-4 case end to end: D = 0.75, effective n = 2.
        let (d, p) = ks_two_sample(&[1.0, 2.0, 3.0, 4.0], &[3.5, 4.5, 5.0, 6.0]);
        assert_eq!(d, 0.75);
        assert!((p - 0.21055163272601088).abs() < 1e-9);
    }

    #[test]
    fn pearson_handles_constant_inputs() {
        let xs = [1.0, 1.0, 1.0];
        let ys = [2.0, 3.0, 4.0];
        assert_eq!(pearson(&xs, &ys), 0.0);
        assert!((pearson(&ys, &ys) - 1.0).abs() < 1e-12);
    }
}
