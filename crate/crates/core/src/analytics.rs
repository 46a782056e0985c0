//! Voltage-violation counting and descriptive statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("cannot summarize an empty series")]
    Empty,
    #[error("invalid band [{0}, {1}]: need 0 < lower < upper")]
    Band(f64, f64),
    #[error("bin width must be > 0, got {0}")]
    BinWidth(f64),
}

/// Acceptable per-unit magnitude range; values strictly outside violate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationBand {
    pub lower: f64,
    pub upper: f64,
}

impl Default for ViolationBand {
    fn default() -> Self {
        ViolationBand {
            lower: 0.95,
            upper: 1.05,
        }
    }
}

impl ViolationBand {
    pub fn new(lower: f64, upper: f64) -> Result<Self, AnalyticsError> {
        let band = ViolationBand { lower, upper };
        band.validate()?;
        Ok(band)
    }

    pub fn validate(&self) -> Result<(), AnalyticsError> {
        if 0.0 < self.lower && self.lower < self.upper && self.upper.is_finite() {
            Ok(())
        } else {
            Err(AnalyticsError::Band(self.lower, self.upper))
        }
    }

    pub fn violates(&self, v: f64) -> bool {
        v < self.lower || v > self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ViolationCount {
    pub count: usize,
    /// Positions into the magnitude slice.
    pub buses: Vec<usize>,
}

pub fn count_violations(v_mag: &[f64], band: &ViolationBand) -> ViolationCount {
    let buses: Vec<usize> = v_mag
        .iter()
        .enumerate()
        .filter(|(_, &v)| band.violates(v))
        .map(|(i, _)| i)
        .collect();
    ViolationCount {
        count: buses.len(),
        buses,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub minimum: f64,
    pub maximum: f64,
    pub median: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std_dev: f64,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len().is_multiple_of(2) {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    })
}

pub fn summarize(series: &[f64]) -> Result<SummaryStats, AnalyticsError> {
    let median = median(series).ok_or(AnalyticsError::Empty)?;
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(SummaryStats {
        minimum: series.iter().copied().fold(f64::INFINITY, f64::min),
        maximum: series.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        median,
        mean,
        std_dev: var.sqrt(),
    })
}

/// Counts per half-open bin `[k·w, (k+1)·w)`, keyed by `k`. Empty bins are
/// absent.
pub fn histogram(series: &[f64], bin_width: f64) -> Result<BTreeMap<i64, usize>, AnalyticsError> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(AnalyticsError::BinWidth(bin_width));
    }
    let mut bins = BTreeMap::new();
    for &x in series {
        *bins.entry((x / bin_width).floor() as i64).or_insert(0) += 1;
    }
    Ok(bins)
}

/// One (fleet size, violation count) observation.
pub trait ChargingObservation {
    fn n_charging(&self) -> usize;
    fn n_violations(&self) -> usize;
}

impl ChargingObservation for (usize, usize) {
    fn n_charging(&self) -> usize {
        self.0
    }

    fn n_violations(&self) -> usize {
        self.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetBinStat {
    /// Inclusive lower edge of the `n_charging` bin.
    pub lower: usize,
    /// Exclusive upper edge.
    pub upper: usize,
    pub n_records: usize,
    pub median_violations: f64,
    pub max_violations: usize,
}

/// Groups observations into `n_charging` bins of `bin_width` vehicles and
/// reports the median and worst violation count of each non-empty bin.
pub fn violations_vs_fleet<T: ChargingObservation>(
    records: &[T],
    bin_width: usize,
) -> Result<Vec<FleetBinStat>, AnalyticsError> {
    if records.is_empty() {
        return Err(AnalyticsError::Empty);
    }
    if bin_width == 0 {
        return Err(AnalyticsError::BinWidth(0.0));
    }
    let mut bins: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for r in records {
        bins.entry(r.n_charging() / bin_width)
            .or_default()
            .push(r.n_violations());
    }
    Ok(bins
        .into_iter()
        .map(|(k, counts)| {
            let as_f64: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            FleetBinStat {
                lower: k * bin_width,
                upper: (k + 1) * bin_width,
                n_records: counts.len(),
                median_violations: median(&as_f64).expect("bin is non-empty"),
                max_violations: *counts.iter().max().expect("bin is non-empty"),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counts_strictly_outside_band() {
        let band = ViolationBand::default();
        assert_eq!(count_violations(&[1.0, 1.0], &band).count, 0);
        let c = count_violations(&[0.94, 0.96, 1.06], &band);
        assert_eq!(c.count, 2);
        assert_eq!(c.buses, vec![0, 2]);
        assert_eq!(count_violations(&[0.95, 1.05], &band).count, 0);
        assert_eq!(count_violations(&vec![0.01; 2000], &band).count, 2000);
    }

    #[test]
    fn band_validation() {
        assert!(ViolationBand::new(0.95, 1.05).is_ok());
        assert!(ViolationBand::new(1.05, 0.95).is_err());
        assert!(ViolationBand::new(0.0, 1.0).is_err());
    }

    #[test]
    fn summary_fixtures() {
        let s = summarize(&[5.0]).unwrap();
        assert_eq!(
            (s.minimum, s.maximum, s.median, s.mean, s.std_dev),
            (5.0, 5.0, 5.0, 5.0, 0.0)
        );

        let s = summarize(&[1400.0, 40800.0, 13100.0]).unwrap();
        assert_eq!((s.minimum, s.maximum, s.median), (1400.0, 40800.0, 13100.0));

        let s = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 2.5);
        assert!((s.std_dev - 1.25f64.sqrt()).abs() < 1e-15);

        assert_eq!(summarize(&[]), Err(AnalyticsError::Empty));
    }

    #[test]
    fn histogram_bins() {
        assert!(histogram(&[], 1.0).unwrap().is_empty());
        let h = histogram(&[0.0, 0.0, 1.0, 5.0], 1.0).unwrap();
        assert_eq!(h, BTreeMap::from([(0, 2), (1, 1), (5, 1)]));
        assert!(histogram(&[1.0], 0.0).is_err());
    }

    #[test]
    fn fleet_bins() {
        let flat = violations_vs_fleet(&[(0usize, 0usize), (0, 0)], 10).unwrap();
        assert_eq!(flat.len(), 1);
        assert_eq!((flat[0].median_violations, flat[0].max_violations), (0.0, 0));

        let pair = violations_vs_fleet(&[(105usize, 2usize), (109, 386)], 10).unwrap();
        assert_eq!(pair[0].median_violations, 194.0);
        assert_eq!(pair[0].max_violations, 386);
        assert_eq!((pair[0].lower, pair[0].upper), (100, 110));

        let gaps = violations_vs_fleet(&[(0usize, 0usize), (50, 3)], 10).unwrap();
        assert_eq!(gaps.iter().map(|b| b.lower).collect::<Vec<_>>(), vec![0, 50]);
        assert!(violations_vs_fleet::<(usize, usize)>(&[], 10).is_err());
    }

    proptest! {
        #[test]
        fn histogram_counts_sum_to_length(
            xs in proptest::collection::vec(-1e4f64..1e4, 0..300),
            width in 0.01f64..500.0,
        ) {
            let h = histogram(&xs, width).unwrap();
            prop_assert_eq!(h.values().sum::<usize>(), xs.len());
        }

        #[test]
        fn tightening_never_decreases_count(
            vs in proptest::collection::vec(0.0f64..1.2, 0..100),
            shrink_lo in 0.0f64..0.04,
            shrink_hi in 0.0f64..0.04,
        ) {
            let wide = ViolationBand::default();
            let tight = ViolationBand { lower: 0.95 + shrink_lo, upper: 1.05 - shrink_hi };
            prop_assert!(count_violations(&vs, &tight).count >= count_violations(&vs, &wide).count);
        }

        #[test]
        fn constant_series_has_zero_spread(x in -1e6f64..1e6, n in 1usize..50) {
            let s = summarize(&vec![x; n]).unwrap();
            prop_assert!(s.std_dev <= 1e-9 * x.abs().max(1.0));
            prop_assert_eq!(s.minimum, x);
            prop_assert_eq!(s.median, x);
            prop_assert_eq!(s.maximum, x);
            prop_assert!((s.mean - x).abs() <= 1e-9 * x.abs().max(1.0));
        }

        #[test]
        fn summary_order_holds(xs in proptest::collection::vec(-1e6f64..1e6, 1..100)) {
            let s = summarize(&xs).unwrap();
            prop_assert!(s.minimum <= s.median && s.median <= s.maximum);
            prop_assert!(s.std_dev >= 0.0);
        }

        #[test]
        fn bin_max_at_least_median(
            obs in proptest::collection::vec((0usize..500, 0usize..300), 1..200),
            width in 1usize..60,
        ) {
            for bin in violations_vs_fleet(&obs, width).unwrap() {
                prop_assert!(bin.max_violations as f64 >= bin.median_violations);
            }
        }
    }
}
