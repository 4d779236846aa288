//! Small numerical-statistics helpers shared by the inference and
//! evaluation modules: log-domain normalization, weighted quantiles, and
//! basic moments.

// Float-math methods for the standalone no_std build; builds whose
// dependency graph links std resolve these inherently and would flag
// the import as unused.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;

/// `log(sum_i exp(x_i))` computed stably. Returns `-inf` for an empty slice
/// or when every entry is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    if !m.is_finite() {
        return f64::NEG_INFINITY;
    }
    let mut acc = 0.0;
    for &x in xs {
        acc += (x - m).exp();
    }
    m + acc.ln()
}

/// Normalized weights from unnormalized log-weights (softmax).
///
/// Non-finite entries (including NaN) are treated as `-inf`. If no entry is
/// finite the result is uniform, so downstream summaries degrade gracefully
/// instead of producing NaNs.
pub fn weights_from_log(log_w: &[f64]) -> Vec<f64> {
    let n = log_w.len();
    if n == 0 {
        return Vec::new();
    }
    let cleaned: Vec<f64> = log_w
        .iter()
        .map(|&x| if x.is_nan() { f64::NEG_INFINITY } else { x })
        .collect();
    let lse = log_sum_exp(&cleaned);
    if !lse.is_finite() {
        let u = 1.0 / n as f64;
        return cleaned.iter().map(|_| u).collect();
    }
    cleaned.iter().map(|&x| (x - lse).exp()).collect()
}

/// Weighted quantile with linear interpolation.
///
/// Sorting by value, with normalized weights `w_k` and exclusive cumulative
/// weights `F_(k-1)`, each sample sits at position `p_k = F_(k-1) / (1 - w_last)`
/// on `[0, 1]`; the quantile interpolates linearly between neighboring
/// positions and clamps at the extremes. For `n` equally weighted samples
/// this reproduces the usual `(n-1)*q` linear-interpolation quantile.
///
/// Degenerate inputs fall back conservatively: an empty slice returns NaN, a
/// single sample (or all mass on the last sorted sample) returns that
/// sample's value, and non-positive total weight falls back to uniform
/// weights.
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> f64 {
    assert_eq!(values.len(), weights.len(), "values/weights length mismatch");
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n == 1 {
        return values[0];
    }
    let q = q.clamp(0.0, 1.0);

    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_unstable_by(|&a, &b| values[a].total_cmp(&values[b]));

    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    let get_w = |i: usize| -> f64 {
        if total > 0.0 {
            weights[i].max(0.0) / total
        } else {
            1.0 / n as f64
        }
    };

    let w_last = get_w(idx[n - 1]);
    let denom = 1.0 - w_last;
    if denom <= 0.0 {
        return values[idx[n - 1]];
    }

    let mut cumulative = 0.0;
    let mut prev_pos = 0.0;
    let mut prev_val = values[idx[0]];
    for (k, &i) in idx.iter().enumerate() {
        let pos = (cumulative / denom).min(1.0);
        let val = values[i];
        if k == 0 {
            if q <= pos {
                return val;
            }
        } else if q <= pos {
            let span = pos - prev_pos;
            if span <= 0.0 {
                return val;
            }
            let t = (q - prev_pos) / span;
            return prev_val + t * (val - prev_val);
        }
        prev_pos = pos;
        prev_val = val;
        cumulative += get_w(i);
    }
    values[idx[n - 1]]
}

/// Median of a slice (average of the two central order statistics for even
/// lengths). NaN for an empty slice.
pub fn median(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_unstable_by(|a, b| a.total_cmp(b));
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample standard deviation (`n - 1` denominator); 0 when fewer
/// than two samples.
pub fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (n - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    #[test]
    fn log_sum_exp_matches_direct_sum() {
        let xs = [0.0, 1.0, -2.0, 3.5];
        let direct: f64 = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert_abs_diff_eq!(log_sum_exp(&xs), direct, epsilon = 1e-12);
        // Large offsets do not overflow.
        let shifted = [1000.0, 1001.0];
        assert_abs_diff_eq!(
            log_sum_exp(&shifted),
            1001.0 + (1.0 + (-1.0f64).exp()).ln(),
            epsilon = 1e-12
        );
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn weights_normalize_and_handle_degenerate_input() {
        let w = weights_from_log(&[0.0, 0.0, (4.0f64).ln()]);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[2], 4.0 / 6.0, epsilon = 1e-12);
        let u = weights_from_log(&[f64::NEG_INFINITY, f64::NAN]);
        assert_abs_diff_eq!(u[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(u[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn uniform_weighted_quantile_matches_linear_interpolation() {
        // 1..=100 with uniform weights: the 95th percentile interpolates
        // between the 95th and 96th order statistics at fraction 0.05.
        let values: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let weights = vec![1.0; 100];
        let q = weighted_quantile(&values, &weights, 0.95);
        assert_abs_diff_eq!(q, 95.05, epsilon = 1e-9);
        assert_abs_diff_eq!(
            weighted_quantile(&values, &weights, 0.0),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            weighted_quantile(&values, &weights, 1.0),
            100.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn weighted_quantile_respects_mass() {
        // Nearly all mass on the value 10: positions are stretched toward it,
        // p = [0, 1], so q = 0.9 interpolates to 1 + 0.9 * (10 - 1).
        let values = [1.0, 10.0];
        let weights = [0.01, 0.99];
        assert_abs_diff_eq!(weighted_quantile(&values, &weights, 0.9), 9.1, epsilon = 1e-12);
        // One-hot weight vector returns that sample everywhere.
        let one_hot = [0.0, 1.0];
        assert_eq!(weighted_quantile(&values, &one_hot, 0.5), 10.0);
        // Unsorted input is handled.
        let v = [5.0, 1.0, 3.0];
        let w = [1.0, 1.0, 1.0];
        assert_abs_diff_eq!(weighted_quantile(&v, &w, 0.5), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn median_and_std_basics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_abs_diff_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sample_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]), 2.138089935299395, epsilon = 1e-12);
        assert_eq!(sample_std(&[1.0]), 0.0);
    }
}
