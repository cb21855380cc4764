use crate::error::{Error, Result};

/// Percentile with linear interpolation between order statistics of an
/// ascending-sorted sample (`p` in `[0, 100]`).
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let pos = p / 100.0 * (n - 1) as f64;
    let i = pos.floor() as usize;
    if i + 1 >= n {
        return sorted[n - 1];
    }
    let frac = pos - i as f64;
    sorted[i] + frac * (sorted[i + 1] - sorted[i])
}

/// Percentile-clipped min-max scaling to `[0, 1]`.
///
/// Values are clamped to the `[low, high]` percentiles and mapped affinely;
/// a degenerate range maps everything to 0.5.
pub fn robust_norm(values: &[f64], clip: (f64, f64)) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Dimension("cannot normalize an empty sample".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value in normalization input".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));
    let lo = percentile_sorted(&sorted, clip.0);
    let hi = percentile_sorted(&sorted, clip.1);
    Ok(scale(values, lo, hi))
}

fn scale(values: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    if hi <= lo {
        return vec![0.5; values.len()];
    }
    let range = hi - lo;
    values
        .iter()
        .map(|&v| (v.clamp(lo, hi) - lo) / range)
        .collect()
}

/// Joint quality `alpha * g_hat + beta * b_hat`.
pub fn quality(g_hat: f64, b_hat: f64, alpha: f64, beta: f64) -> f64 {
    alpha * g_hat + beta * b_hat
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_max_identity() {
        assert_eq!(robust_norm(&[2.0, 4.0, 6.0], (0.0, 100.0)).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(robust_norm(&[4.0, 6.0, 2.0], (0.0, 100.0)).unwrap(), vec![0.5, 1.0, 0.0]);
    }

    #[test]
    fn constant_input() {
        assert_eq!(robust_norm(&[7.0; 3], (1.0, 99.0)).unwrap(), vec![0.5; 3]);
        assert_eq!(robust_norm(&[3.0], (1.0, 99.0)).unwrap(), vec![0.5]);
    }

    #[test]
    fn empty_input() {
        assert!(matches!(robust_norm(&[], (1.0, 99.0)), Err(Error::Dimension(_))));
    }

    #[test]
    fn clipped_range() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        let out = robust_norm(&xs, (1.0, 99.0)).unwrap();
        // p1 = 1 + 0.01 * 999 = 10.99, p99 = 1 + 0.99 * 999 = 990.01
        assert_eq!(out[0], 0.0);
        assert_eq!(out[999], 1.0);
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        let expected = (500.0 - 10.99) / (990.01 - 10.99);
        assert!((out[499] - expected).abs() < 1e-12);
    }

    #[test]
    fn quality_examples() {
        assert_eq!(quality(1.0, 0.0, 0.5, 0.5), 0.5);
        assert_eq!(quality(0.37, 0.91, 1.0, 0.0), 0.37);
        assert!((quality(0.6, 0.8, 0.5, 0.5) - 0.7).abs() < 1e-15);
    }
}
