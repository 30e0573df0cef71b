//! QoS estimators shared by the simulator and by field-log analysis.
//!
//! Jitter here is always the mean absolute IP packet delay variation of
//! consecutive packets of one flow. Iperf's smoothed jitter column in field
//! logs is a different estimator and is never fed through these functions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Bootstrap resamples used by [`mean_abs_jitter`].
pub const BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("delay at position {index} is {value}; delays must be finite and non-negative")]
    InvalidDelay { index: usize, value: f64 },
    #[error("window length must be positive, got {0}")]
    InvalidWindow(f64),
    #[error("delivery times must be non-decreasing (entry {index} at {time} follows {previous})")]
    Unordered { index: usize, time: f64, previous: f64 },
    #[error("delivered count {delivered} exceeds offered count {offered}")]
    Accounting { offered: u64, delivered: u64 },
    #[error("no packets offered")]
    NothingOffered,
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("series {0} is constant; correlation is undefined")]
    ConstantSeries(char),
    #[error("series contains a non-finite value")]
    NonFinite,
}

/// Sojourn times of consecutively delivered packets of one flow, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySeries(Vec<f64>);

impl DelaySeries {
    pub fn new(delays: Vec<f64>) -> Result<Self, MetricsError> {
        if let Some((index, &value)) = delays
            .iter()
            .enumerate()
            .find(|(_, d)| !(d.is_finite() && **d >= 0.0))
        {
            return Err(MetricsError::InvalidDelay { index, value });
        }
        Ok(Self(delays))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn require_pairs(&self) -> Result<(), MetricsError> {
        if self.0.len() < 2 {
            Err(MetricsError::InsufficientData {
                needed: 2,
                got: self.0.len(),
            })
        } else {
            Ok(())
        }
    }
}

impl TryFrom<Vec<f64>> for DelaySeries {
    type Error = MetricsError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

/// Signed delay differences `T[j+1] - T[j]`.
pub fn ipdv_series(delays: &DelaySeries) -> Result<Vec<f64>, MetricsError> {
    delays.require_pairs()?;
    Ok(delays.0.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Running mean of `|T[j+1] - T[j]|` over pairs fed in order.
///
/// The simulator and [`mean_abs_jitter`] both use this accumulator so they
/// produce identical floating-point results on the same data.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AbsIpdvAccumulator {
    sum: f64,
    count: u64,
}

impl AbsIpdvAccumulator {
    #[inline]
    pub fn push_pair(&mut self, previous: f64, next: f64) {
        self.sum += (next - previous).abs();
        self.count += 1;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// `None` when no pair has been seen.
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterEstimate {
    /// Mean absolute delay variation, seconds.
    pub mean_abs_ipdv: f64,
    pub n_samples: usize,
    /// Half-width of the percentile bootstrap 95% interval. Approximate:
    /// successive differences are not independent. `None` when no resampling
    /// was requested.
    pub ci95_halfwidth: Option<f64>,
}

/// Mean absolute jitter with a 1000-resample bootstrap interval.
pub fn mean_abs_jitter(delays: &DelaySeries, seed: u64) -> Result<JitterEstimate, MetricsError> {
    mean_abs_jitter_with(delays, BOOTSTRAP_RESAMPLES, seed)
}

pub fn mean_abs_jitter_with(
    delays: &DelaySeries,
    resamples: usize,
    seed: u64,
) -> Result<JitterEstimate, MetricsError> {
    delays.require_pairs()?;
    let mut acc = AbsIpdvAccumulator::default();
    for w in delays.0.windows(2) {
        acc.push_pair(w[0], w[1]);
    }
    let mean = acc.mean().expect("at least one pair");
    let ci95_halfwidth = (resamples > 0).then(|| {
        let abs: Vec<f64> = delays.0.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        let (lo, hi) = bootstrap_mean_interval(&abs, resamples, 0.95, seed);
        0.5 * (hi - lo)
    });
    Ok(JitterEstimate {
        mean_abs_ipdv: mean,
        n_samples: delays.len() - 1,
        ci95_halfwidth,
    })
}

/// Percentile bootstrap interval for the mean of `data`.
pub fn bootstrap_mean_interval(data: &[f64], resamples: usize, level: f64, seed: u64) -> (f64, f64) {
    assert!(!data.is_empty() && resamples > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = data.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| data[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = 0.5 * (1.0 - level);
    (percentile_sorted(&means, alpha), percentile_sorted(&means, 1.0 - alpha))
}

/// Linear-interpolated quantile of an already sorted slice.
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    match sorted.get(i + 1) {
        Some(&next) => sorted[i] + frac * (next - sorted[i]),
        None => sorted[i],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowRate {
    pub window_start: f64,
    /// Delivered amount per second.
    pub rate: f64,
}

/// Tumbling-window delivery rate.
///
/// `deliveries` holds `(time, amount)` pairs in non-decreasing time order.
/// Windows tile `[start, end)`; when `span` is `None` they start at the
/// window boundary at or below the first delivery and run until the last
/// delivery is covered. Deliveries outside an explicit span are ignored.
pub fn windowed_throughput(
    deliveries: &[(f64, f64)],
    window_seconds: f64,
    span: Option<(f64, f64)>,
) -> Result<Vec<WindowRate>, MetricsError> {
    if !(window_seconds > 0.0 && window_seconds.is_finite()) {
        return Err(MetricsError::InvalidWindow(window_seconds));
    }
    for (index, w) in deliveries.windows(2).enumerate() {
        if w[1].0 < w[0].0 {
            return Err(MetricsError::Unordered {
                index: index + 1,
                time: w[1].0,
                previous: w[0].0,
            });
        }
    }
    let (start, n_windows) = match span {
        Some((start, end)) => (start, ((end - start) / window_seconds).ceil().max(0.0) as usize),
        None => match (deliveries.first(), deliveries.last()) {
            (Some(first), Some(last)) => {
                let start = (first.0 / window_seconds).floor() * window_seconds;
                (start, ((last.0 - start) / window_seconds).floor() as usize + 1)
            }
            _ => (0.0, 0),
        },
    };
    let mut amounts = vec![0.0; n_windows];
    for &(t, amount) in deliveries {
        let k = ((t - start) / window_seconds).floor();
        if k >= 0.0 && (k as usize) < n_windows {
            amounts[k as usize] += amount;
        }
    }
    Ok(amounts
        .into_iter()
        .enumerate()
        .map(|(k, amount)| WindowRate {
            window_start: start + k as f64 * window_seconds,
            rate: amount / window_seconds,
        })
        .collect())
}

/// Fraction of offered packets that were not delivered.
pub fn loss_rate(offered: u64, delivered: u64) -> Result<f64, MetricsError> {
    if offered == 0 {
        return Err(MetricsError::NothingOffered);
    }
    if delivered > offered {
        return Err(MetricsError::Accounting { offered, delivered });
    }
    Ok((offered - delivered) as f64 / offered as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub pearson_r: f64,
    pub spearman_rho: f64,
    pub n: usize,
}

/// Pearson and Spearman (average-rank ties) correlation of paired series.
pub fn correlate(a: &[f64], b: &[f64]) -> Result<SeriesStats, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 3 {
        return Err(MetricsError::InsufficientData {
            needed: 3,
            got: a.len(),
        });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let pearson_r = pearson(a, b)?;
    let spearman_rho = pearson(&average_ranks(a), &average_ranks(b))?;
    Ok(SeriesStats {
        pearson_r,
        spearman_rho,
        n: a.len(),
    })
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || a.iter().all(|&x| x == a[0]) {
        return Err(MetricsError::ConstantSeries('a'));
    }
    if sbb == 0.0 || b.iter().all(|&y| y == b[0]) {
        return Err(MetricsError::ConstantSeries('b'));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(v: &[f64]) -> DelaySeries {
        DelaySeries::new(v.to_vec()).unwrap()
    }

    #[test]
    fn ipdv_examples() {
        assert_eq!(ipdv_series(&series(&[1.0, 3.0, 2.0])).unwrap(), vec![2.0, -1.0]);
        assert_eq!(ipdv_series(&series(&[5.0, 5.0, 5.0])).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(
            ipdv_series(&series(&[1.0])),
            Err(MetricsError::InsufficientData { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn ipdv_reversal_antisymmetry() {
        let d = [0.3, 1.7, 0.2, 0.9, 4.0];
        let fwd = ipdv_series(&series(&d)).unwrap();
        let mut rev_in = d.to_vec();
        rev_in.reverse();
        let rev = ipdv_series(&series(&rev_in)).unwrap();
        let expected: Vec<f64> = fwd.iter().rev().map(|x| -x).collect();
        assert_eq!(rev, expected);
    }

    #[test]
    fn delay_series_rejects_bad_values() {
        assert!(matches!(
            DelaySeries::new(vec![1.0, -0.5]),
            Err(MetricsError::InvalidDelay { index: 1, .. })
        ));
        assert!(DelaySeries::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn mean_abs_jitter_examples() {
        let est = mean_abs_jitter(&series(&[1.0, 3.0, 2.0]), 7).unwrap();
        assert_eq!(est.mean_abs_ipdv, 1.5);
        assert_eq!(est.n_samples, 2);

        let est = mean_abs_jitter(&series(&[4.0; 10]), 7).unwrap();
        assert_eq!(est.mean_abs_ipdv, 0.0);
        assert_eq!(est.ci95_halfwidth, Some(0.0));

        let est = mean_abs_jitter_with(&series(&[1.0, 2.0]), 0, 7).unwrap();
        assert_eq!(est.ci95_halfwidth, None);
    }

    #[test]
    fn bootstrap_interval_brackets_mean_and_is_seeded() {
        let data: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64).collect();
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        let (lo, hi) = bootstrap_mean_interval(&data, 1000, 0.95, 3);
        assert!(lo < mean && mean < hi);
        assert_eq!((lo, hi), bootstrap_mean_interval(&data, 1000, 0.95, 3));
        // the standard error of this sample mean is about 2.06
        assert!((hi - lo) > 4.0 && (hi - lo) < 12.0, "{lo} {hi}");
    }

    #[test]
    fn windowed_examples() {
        let d: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 * 0.1, 1.0)).collect();
        let w = windowed_throughput(&d, 1.0, None).unwrap();
        assert_eq!(w, vec![WindowRate { window_start: 0.0, rate: 10.0 }]);

        let w = windowed_throughput(&[], 1.0, Some((0.0, 3.0))).unwrap();
        assert_eq!(w.len(), 3);
        assert!(w.iter().all(|r| r.rate == 0.0));

        let w = windowed_throughput(&[(0.5, 2.0), (2.5, 4.0)], 0.5, None).unwrap();
        assert_eq!(w.len(), 5);
        assert_eq!(w[0].rate, 4.0);
        assert_eq!(w[4].rate, 8.0);

        assert!(matches!(
            windowed_throughput(&[(1.0, 1.0), (0.5, 1.0)], 1.0, None),
            Err(MetricsError::Unordered { index: 1, .. })
        ));
        assert!(matches!(windowed_throughput(&d, 0.0, None), Err(MetricsError::InvalidWindow(_))));
    }

    #[test]
    fn loss_rate_examples() {
        assert_eq!(loss_rate(1000, 900).unwrap(), 0.1);
        assert_eq!(loss_rate(1000, 1000).unwrap(), 0.0);
        assert!(matches!(loss_rate(10, 11), Err(MetricsError::Accounting { .. })));
        assert!(matches!(loss_rate(0, 0), Err(MetricsError::NothingOffered)));
    }

    #[test]
    fn correlate_examples() {
        let s = correlate(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((s.pearson_r - 1.0).abs() < 1e-15);
        assert!((s.spearman_rho - 1.0).abs() < 1e-15);
        let s = correlate(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap();
        assert!((s.pearson_r + 1.0).abs() < 1e-15);

        assert!(matches!(correlate(&[1.0, 2.0], &[1.0, 2.0]), Err(MetricsError::InsufficientData { .. })));
        assert!(matches!(correlate(&[1.0, 2.0, 3.0], &[1.0, 2.0]), Err(MetricsError::LengthMismatch(3, 2))));
        assert!(matches!(
            correlate(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(MetricsError::ConstantSeries('a'))
        ));
        assert!(matches!(
            correlate(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]),
            Err(MetricsError::ConstantSeries('b'))
        ));
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
        // monotone but nonlinear relation still gives rho = 1
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.0, 8.0, 27.0, 64.0];
        let s = correlate(&a, &b).unwrap();
        assert!((s.spearman_rho - 1.0).abs() < 1e-15);
        assert!(s.pearson_r < 1.0);
    }
}
