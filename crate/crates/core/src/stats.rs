//! Interval estimators and small descriptive helpers.

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Two-sided standard-normal quantile for a confidence level, e.g. 1.95996
/// at 0.95.
pub fn z_for_confidence(conf: f64) -> Result<f64> {
    if !(conf > 0.0 && conf < 1.0) {
        return Err(Error::param(format!("confidence level must be in (0,1), got {conf}")));
    }
    let n = Normal::standard();
    Ok(n.inverse_cdf(0.5 + conf / 2.0))
}

/// Wilson score interval for a binomial proportion. `n == 0` yields the
/// uninformative interval [0, 1].
pub fn wilson_interval(n_err: u64, n: u64, conf: f64) -> Result<(f64, f64)> {
    let z = z_for_confidence(conf)?;
    if n == 0 {
        return Ok((0.0, 1.0));
    }
    if n_err > n {
        return Err(Error::param(format!("error count {n_err} exceeds trials {n}")));
    }
    let nf = n as f64;
    let p = n_err as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let mut lo = (centre - half).max(0.0);
    let mut hi = (centre + half).min(1.0);
    // Exact boundary values; the formula lands there up to rounding.
    if n_err == 0 {
        lo = 0.0;
    }
    if n_err == n {
        hi = 1.0;
    }
    Ok((lo, hi))
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 { 0.5 * (v[mid - 1] + v[mid]) } else { v[mid] })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapCi {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Percentile bootstrap of the mean over `resamples` resamples. The interval
/// is widened to contain the point estimate if percentile noise puts it
/// outside.
pub fn bootstrap_mean_ci<R: Rng + ?Sized>(
    values: &[f64],
    resamples: usize,
    conf: f64,
    rng: &mut R,
) -> Result<BootstrapCi> {
    let point = mean(values).ok_or_else(|| Error::InsufficientData("bootstrap of empty sample".into()))?;
    if !(conf > 0.0 && conf < 1.0) || resamples == 0 {
        return Err(Error::param("bootstrap needs resamples > 0 and conf in (0,1)"));
    }
    let n = values.len();
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - conf) / 2.0;
    let lo = quantile_sorted(&stats, alpha).min(point);
    let hi = quantile_sorted(&stats, 1.0 - alpha).max(point);
    Ok(BootstrapCi { point, lo, hi })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn z_at_95() {
        assert!((z_for_confidence(0.95).unwrap() - 1.959_963_984_540_054).abs() < 1e-9);
        assert!(z_for_confidence(1.0).is_err());
    }

    #[test]
    fn wilson_examples() {
        let (lo, _) = wilson_interval(0, 100, 0.95).unwrap();
        assert_eq!(lo, 0.0);
        let (_, hi) = wilson_interval(40, 40, 0.95).unwrap();
        assert_eq!(hi, 1.0);
        // mpmath with z = 1.959963984540054: [0.0210937388288, 0.0425034141476]
        let (lo, hi) = wilson_interval(30, 1000, 0.95).unwrap();
        assert!((lo - 0.021_093_738_828_834_7).abs() < 1e-9, "{lo}");
        assert!((hi - 0.042_503_414_147_587_1).abs() < 1e-9, "{hi}");
        assert_eq!(wilson_interval(0, 0, 0.95).unwrap(), (0.0, 1.0));
        assert!(wilson_interval(5, 4, 0.95).is_err());
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn bootstrap_constant_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ci = bootstrap_mean_ci(&[2.5; 5], 10_000, 0.95, &mut rng).unwrap();
        assert_eq!((ci.lo, ci.point, ci.hi), (2.5, 2.5, 2.5));
    }

    #[test]
    fn bootstrap_brackets_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ci = bootstrap_mean_ci(&[1.0, 2.0, 4.0, 8.0, 3.0], 2_000, 0.95, &mut rng).unwrap();
        assert!(ci.lo <= ci.point && ci.point <= ci.hi);
        assert!(ci.lo >= 1.0 && ci.hi <= 8.0);
        assert!(bootstrap_mean_ci(&[], 10, 0.95, &mut rng).is_err());
    }
}
