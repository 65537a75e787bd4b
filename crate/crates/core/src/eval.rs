//! Horizontal error statistics: empirical CDF, MAE and percentile tables.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CdfPoint<T> {
    pub error_m: T,
    pub fraction: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PercentileRow<T> {
    pub quantile: T,
    pub error_m: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ThresholdRow<T> {
    pub threshold_m: T,
    pub fraction: T,
}

pub const REPORT_QUANTILES: [f64; 5] = [0.5, 0.67, 0.8, 0.9, 0.95];
pub const REPORT_THRESHOLDS_M: [f64; 4] = [1.0, 2.0, 5.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ErrorReport<T> {
    /// Per-frame x–y errors in input order.
    pub errors_m: Vec<T>,
    /// Right-continuous empirical CDF, one point per distinct error.
    pub cdf: Vec<CdfPoint<T>>,
    pub mae_m: T,
    pub percentiles: Vec<PercentileRow<T>>,
    pub fraction_below: Vec<ThresholdRow<T>>,
    /// Frames with a ground truth but no estimate.
    #[serde(default)]
    pub missing: usize,
}

/// Linear interpolation between order statistics at rank `(n − 1)·q`.
pub fn percentile<T: Real>(sorted: &[T], q: T) -> Result<T> {
    if sorted.is_empty() {
        return Err(Error::NoData);
    }
    let q = q.clamp(T::zero(), T::one());
    let h = lit::<T>((sorted.len() - 1) as f64) * q;
    let lo = h.floor();
    let i = crate::scalar::to_f64(lo) as usize;
    if i + 1 >= sorted.len() {
        return Ok(sorted[sorted.len() - 1]);
    }
    Ok(sorted[i] + (h - lo) * (sorted[i + 1] - sorted[i]))
}

/// Empirical `P(e ≤ x)`.
pub fn fraction_below<T: Real>(sorted: &[T], x: T) -> T {
    if sorted.is_empty() {
        return T::zero();
    }
    let count = sorted.partition_point(|e| *e <= x);
    lit::<T>(count as f64) / lit(sorted.len() as f64)
}

/// Statistics over precomputed errors.
pub fn report_from_errors<T: Real>(errors: Vec<T>) -> Result<ErrorReport<T>> {
    if errors.is_empty() {
        return Err(Error::NoData);
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::Config("non-finite position error".into()));
    }
    let mut sorted = errors.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = lit::<T>(sorted.len() as f64);
    let mut cdf: Vec<CdfPoint<T>> = Vec::new();
    for (i, e) in sorted.iter().enumerate() {
        let fraction = lit::<T>((i + 1) as f64) / n;
        match cdf.last_mut() {
            Some(last) if last.error_m == *e => last.fraction = fraction,
            _ => cdf.push(CdfPoint { error_m: *e, fraction }),
        }
    }
    let mae = errors.iter().fold(T::zero(), |a, e| a + *e) / n;
    let percentiles = REPORT_QUANTILES
        .iter()
        .map(|q| {
            Ok(PercentileRow {
                quantile: lit(*q),
                error_m: percentile(&sorted, lit(*q))?,
            })
        })
        .collect::<Result<_>>()?;
    let fraction_below = REPORT_THRESHOLDS_M
        .iter()
        .map(|t| ThresholdRow {
            threshold_m: lit(*t),
            fraction: self::fraction_below(&sorted, lit(*t)),
        })
        .collect();
    Ok(ErrorReport {
        errors_m: errors,
        cdf,
        mae_m: mae,
        percentiles,
        fraction_below,
        missing: 0,
    })
}

pub fn xy_error<T: Real>(estimate: &Vector3<T>, truth: &Vector3<T>) -> T {
    let dx = estimate.x - truth.x;
    let dy = estimate.y - truth.y;
    (dx * dx + dy * dy).sqrt()
}

/// x–y error statistics of aligned estimate/truth sequences.
pub fn compute_error_cdf<T: Real>(
    estimates: &[Vector3<T>],
    ground_truth: &[Vector3<T>],
) -> Result<ErrorReport<T>> {
    if estimates.len() != ground_truth.len() {
        return Err(Error::Alignment(format!(
            "{} estimates for {} ground-truth positions",
            estimates.len(),
            ground_truth.len()
        )));
    }
    report_from_errors(
        estimates
            .iter()
            .zip(ground_truth)
            .map(|(e, t)| xy_error(e, t))
            .collect(),
    )
}

/// Estimates, matching truth positions and the count of unmatched truth entries.
pub type Aligned<T> = (Vec<Vector3<T>>, Vec<Vector3<T>>, usize);

/// Pairs estimates with ground truth by exact timestamp. Every estimate must
/// match; unmatched truth entries are counted as missing.
pub fn align_by_timestamp<T: Real>(
    estimates: &[(T, Vector3<T>)],
    truth: &[(T, Vector3<T>)],
) -> Result<Aligned<T>> {
    let mut est = Vec::with_capacity(estimates.len());
    let mut tru = Vec::with_capacity(estimates.len());
    let mut used = vec![false; truth.len()];
    for (t, p) in estimates {
        let j = truth
            .iter()
            .enumerate()
            .position(|(j, (tt, _))| !used[j] && tt == t)
            .ok_or_else(|| Error::Alignment(format!("no ground truth at timestamp {t}")))?;
        used[j] = true;
        est.push(*p);
        tru.push(truth[j].1);
    }
    let missing = used.iter().filter(|u| !**u).count();
    Ok((est, tru, missing))
}

/// Two-column CSV `error_m,fraction` of the CDF.
pub fn cdf_csv<T: Real>(report: &ErrorReport<T>) -> String {
    let mut out = String::from("error_m,fraction\n");
    for p in &report.cdf {
        out.push_str(&format!("{},{}\n", p.error_m, p.fraction));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn small_example() {
        let r = report_from_errors(vec![3.0, 1.0, 4.0, 2.0]).unwrap();
        let sorted = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(fraction_below(&sorted, 2.5), 0.5);
        assert_eq!(r.mae_m, 2.5);
        assert_eq!(r.cdf.len(), 4);
        assert_eq!(r.cdf[3].fraction, 1.0);
        assert_eq!(percentile(&sorted, 0.5).unwrap(), 2.5);
        assert_eq!(r.errors_m, vec![3.0, 1.0, 4.0, 2.0]);
    }

    #[test]
    fn all_zero_errors_step_at_zero() {
        let r = report_from_errors(vec![0.0; 5]).unwrap();
        assert_eq!(r.cdf, vec![CdfPoint { error_m: 0.0, fraction: 1.0 }]);
        assert_eq!(r.mae_m, 0.0);
    }

    #[test]
    fn empty_input_is_no_data() {
        assert!(matches!(report_from_errors::<f64>(vec![]), Err(Error::NoData)));
        assert!(matches!(compute_error_cdf::<f64>(&[], &[]), Err(Error::NoData)));
    }

    #[test]
    fn half_normal_quantile() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let e: Vec<f64> = (0..10_000).map(|_| rng.sample::<f64, _>(StandardNormal).abs()).collect();
        let r = report_from_errors(e).unwrap();
        let p90 = r.percentiles.iter().find(|p| p.quantile == 0.9).unwrap().error_m;
        assert!((p90 / 1.6449 - 1.0).abs() < 0.03, "p90 {p90}");
    }

    #[test]
    fn xy_error_ignores_height() {
        let r = compute_error_cdf(&[Vector3::new(3.0, 4.0, 100.0)], &[Vector3::zeros()]).unwrap();
        assert_eq!(r.errors_m, vec![5.0]);
    }

    #[test]
    fn alignment_requires_exact_timestamps() {
        let truth = vec![(0.0, Vector3::zeros()), (0.1, Vector3::x()), (0.2, Vector3::y())];
        let (e, t, missing) = align_by_timestamp(&[(0.2, Vector3::zeros()), (0.0, Vector3::zeros())], &truth).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(t[0], Vector3::y());
        assert_eq!(missing, 1);
        assert!(matches!(
            align_by_timestamp(&[(0.1000001, Vector3::zeros())], &truth),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let r = report_from_errors(vec![1.0, 2.0]).unwrap();
        assert_eq!(cdf_csv(&r), "error_m,fraction\n1,0.5\n2,1\n");
    }

    proptest! {
        #[test]
        fn cdf_is_monotone_and_consistent(errors in proptest::collection::vec(0.0f64..50.0, 1..200)) {
            let r = report_from_errors(errors.clone()).unwrap();
            for w in r.cdf.windows(2) {
                prop_assert!(w[0].error_m < w[1].error_m);
                prop_assert!(w[0].fraction < w[1].fraction);
            }
            prop_assert_eq!(r.cdf.last().unwrap().fraction, 1.0);
            prop_assert!(r.cdf[0].fraction > 0.0);
            let mean = errors.iter().sum::<f64>() / errors.len() as f64;
            prop_assert!((r.mae_m - mean).abs() <= 1e-12 * mean.max(1.0));
            let mut sorted = errors.clone();
            sorted.sort_by(f64::total_cmp);
            for p in &r.percentiles {
                // the interpolated percentile brackets the CDF level
                let below = fraction_below(&sorted, p.error_m);
                prop_assert!(below + 1.0 / sorted.len() as f64 >= p.quantile - 1e-12);
            }
            for w in r.percentiles.windows(2) {
                prop_assert!(w[0].error_m <= w[1].error_m);
            }
        }
    }
}
