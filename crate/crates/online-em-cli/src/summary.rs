//! Box-plot-ready quantile summaries of replication results.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SummaryError {
    #[error("no finite samples to summarise")]
    Empty,
}

/// Five-number summary: whiskers at the most extreme samples within
/// 1.5 interquartile ranges of the box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileSummary {
    pub lo_whisker: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub hi_whisker: f64,
}

/// Quantile by linear interpolation between order statistics of a sorted
/// slice (the `(n-1)p` convention).
fn interpolated_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Summarises the finite entries of `samples`; non-finite entries (failed
/// replications) are excluded. Errors when nothing finite remains.
pub fn summarize_quantiles(samples: &[f64]) -> Result<QuantileSummary, SummaryError> {
    let mut finite: Vec<f64> = samples.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(SummaryError::Empty);
    }
    finite.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q25 = interpolated_quantile(&finite, 0.25);
    let median = interpolated_quantile(&finite, 0.5);
    let q75 = interpolated_quantile(&finite, 0.75);
    let iqr = q75 - q25;
    let lo_fence = q25 - 1.5 * iqr;
    let hi_fence = q75 + 1.5 * iqr;
    let lo_whisker = finite.iter().copied().find(|&v| v >= lo_fence).unwrap();
    let hi_whisker = finite.iter().rev().copied().find(|&v| v <= hi_fence).unwrap();
    Ok(QuantileSummary {
        lo_whisker,
        q25,
        median,
        q75,
        hi_whisker,
    })
}

/// Interquartile range of a normal with standard deviation `sd / sqrt(n)`:
/// the asymptotic reference shown next to replication boxes.
pub fn asymptotic_reference_iqr(sd: f64, n: usize) -> f64 {
    1.349 * sd / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_set_interpolation() {
        let s = summarize_quantiles(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(s.q25, 2.0);
        assert_eq!(s.median, 3.0);
        assert_eq!(s.q75, 4.0);
        assert_eq!(s.lo_whisker, 1.0);
        assert_eq!(s.hi_whisker, 5.0);
    }

    #[test]
    fn constant_samples_collapse() {
        let s = summarize_quantiles(&[2.5; 9]).unwrap();
        assert_eq!(s.lo_whisker, 2.5);
        assert_eq!(s.q25, 2.5);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.q75, 2.5);
        assert_eq!(s.hi_whisker, 2.5);
    }

    #[test]
    fn whiskers_exclude_outliers() {
        let mut data: Vec<f64> = (0..100).map(|i| i as f64 / 10.0).collect();
        data.push(1000.0);
        let s = summarize_quantiles(&data).unwrap();
        assert!(s.hi_whisker <= 9.9 + 1e-12);
    }

    #[test]
    fn nan_rows_are_excluded() {
        let s = summarize_quantiles(&[f64::NAN, 1.0, 2.0, 3.0, f64::NAN, 4.0, 5.0]).unwrap();
        assert_eq!(s.median, 3.0);
        assert!(matches!(
            summarize_quantiles(&[f64::NAN, f64::NAN]),
            Err(SummaryError::Empty)
        ));
    }

    #[test]
    fn reference_iqr_formula() {
        let iqr = asymptotic_reference_iqr(47.8, 10_000);
        assert!((iqr - 1.349 * 47.8 / 100.0).abs() < 1e-12);
    }
}
