//! Small statistical helpers shared across estimators.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation with the n-1 denominator. `None` below two values.
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

/// Weighted mean and variance. The variance uses the effective sample size
/// `(sum w)^2 / sum w^2` for the small-sample correction, so unit weights
/// reduce to the ordinary n-1 estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedMoments {
    pub mean: f64,
    pub variance: f64,
    pub n_eff: f64,
}

pub fn weighted_moments(xs: &[f64], ws: &[f64]) -> Option<WeightedMoments> {
    debug_assert_eq!(xs.len(), ws.len());
    let sw: f64 = ws.iter().sum();
    if sw <= 0.0 {
        return None;
    }
    let sw2: f64 = ws.iter().map(|w| w * w).sum();
    let mean = xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>() / sw;
    let n_eff = sw * sw / sw2;
    let biased = xs
        .iter()
        .zip(ws)
        .map(|(x, w)| w * (x - mean) * (x - mean))
        .sum::<f64>()
        / sw;
    let variance = if n_eff > 1.0 {
        biased * n_eff / (n_eff - 1.0)
    } else {
        0.0
    };
    Some(WeightedMoments {
        mean,
        variance,
        n_eff,
    })
}

pub fn normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Two-sided p-value of `estimate / se` under the standard normal.
/// A zero standard error yields 1 for a zero estimate and 0 otherwise.
pub fn two_sided_normal_p(estimate: f64, se: f64) -> f64 {
    if se <= 0.0 {
        return if estimate == 0.0 { 1.0 } else { 0.0 };
    }
    let z = (estimate / se).abs();
    (2.0 * Normal::standard().sf(z)).clamp(0.0, 1.0)
}

/// Two-sided p-value of a t statistic.
pub fn two_sided_t_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t == 0.0 {
        return 1.0;
    }
    if !df.is_finite() || df > 1e7 {
        return (2.0 * Normal::standard().sf(t.abs())).clamp(0.0, 1.0);
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Welch unequal-variance t-test from group moments.
pub fn welch_from_moments(m1: f64, v1: f64, n1: f64, m2: f64, v2: f64, n2: f64) -> WelchTest {
    let s1 = v1 / n1;
    let s2 = v2 / n2;
    let se2 = s1 + s2;
    if se2 <= 0.0 {
        let p_value = if m1 == m2 { 1.0 } else { 0.0 };
        let t = if m1 == m2 { 0.0 } else { f64::INFINITY.copysign(m1 - m2) };
        return WelchTest {
            t,
            df: f64::INFINITY,
            p_value,
        };
    }
    let t = (m1 - m2) / se2.sqrt();
    let df = se2 * se2 / (s1 * s1 / (n1 - 1.0) + s2 * s2 / (n2 - 1.0));
    WelchTest {
        t,
        df,
        p_value: two_sided_t_p(t, df),
    }
}

pub fn welch_test(a: &[f64], b: &[f64]) -> Option<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let va = sample_sd(a)?.powi(2);
    let vb = sample_sd(b)?.powi(2);
    Some(welch_from_moments(
        mean(a),
        va,
        a.len() as f64,
        mean(b),
        vb,
        b.len() as f64,
    ))
}

/// Quantile with linear interpolation between order statistics (type 7).
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
