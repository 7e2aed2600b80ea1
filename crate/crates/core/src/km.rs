//! Coordinate-binned estimates of the first two Kramers-Moyal conditional moments.
//!
//! Each kept bin `j` yields `y1[j] = mean(dx / dt)` and `y2[j] = mean(dx^2 / dt)`
//! (or the centered variant, see [`SecondMoment`]), which become the regression
//! targets for drift and squared diffusion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::IncrementPairs;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BinRange {
    /// Data minimum and maximum.
    Auto,
    Fixed([f64; 2]),
    /// Empirical quantiles of the pair start states, e.g. `[0.005, 0.995]`.
    Quantile([f64; 2]),
}

/// How the second conditional moment is formed per bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondMoment {
    /// `mean(dx^2) / dt`; carries an `f(x)^2 dt` bias.
    #[default]
    Raw,
    /// `mean((dx - mean dx)^2) / dt`, i.e. raw minus `dt * y1^2`.
    Centered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinningConfig {
    pub n_bins: usize,
    #[serde(default = "default_range")]
    pub range: BinRange,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
    #[serde(default)]
    pub second_moment: SecondMoment,
}

fn default_range() -> BinRange {
    BinRange::Quantile([0.005, 0.995])
}

fn default_min_count() -> usize {
    100
}

impl Default for BinningConfig {
    fn default() -> Self {
        Self { n_bins: 50, range: default_range(), min_count: default_min_count(), second_moment: SecondMoment::Raw }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedMoments {
    pub centers: Vec<f64>,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub counts: Vec<usize>,
    pub delta_t: f64,
    /// Pairs outside the range or in discarded bins.
    pub dropped: usize,
}

impl BinnedMoments {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Linear-interpolated empirical quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn resolve_range(x: &[f64], range: BinRange) -> Result<(f64, f64)> {
    let (lo, hi) = match range {
        BinRange::Fixed([lo, hi]) => (lo, hi),
        BinRange::Auto => x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))),
        BinRange::Quantile([pl, ph]) => {
            if !(0.0..=1.0).contains(&pl) || !(0.0..=1.0).contains(&ph) || pl >= ph {
                return Err(Error::Config(format!("bad quantile range [{pl}, {ph}]")));
            }
            let mut sorted = x.to_vec();
            sorted.sort_unstable_by(f64::total_cmp);
            (quantile(&sorted, pl), quantile(&sorted, ph))
        }
    };
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InsufficientData(format!("degenerate bin range [{lo}, {hi}]")));
    }
    Ok((lo, hi))
}

pub fn bin_moments(pairs: &IncrementPairs, cfg: &BinningConfig) -> Result<BinnedMoments> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("increment pairs"));
    }
    if !(pairs.delta_t > 0.0) {
        return Err(Error::Domain(format!("delta_t must be positive, got {}", pairs.delta_t)));
    }
    if cfg.n_bins < 2 {
        return Err(Error::InsufficientData(format!("at least 2 bins are required, got {}", cfg.n_bins)));
    }
    if cfg.min_count == 0 {
        return Err(Error::Config("min_count must be positive".into()));
    }
    let (lo, hi) = resolve_range(&pairs.x, cfg.range)?;
    let g = cfg.n_bins;
    let width = (hi - lo) / g as f64;
    let dt = pairs.delta_t;

    let bin_of = |x: f64| -> Option<usize> {
        if !(lo..=hi).contains(&x) {
            return None;
        }
        let j = (g as f64 * (x - lo) / (hi - lo)).floor() as usize;
        Some(j.min(g - 1))
    };

    let mut count = vec![0usize; g];
    let mut sum1 = vec![0.0f64; g];
    let mut sum2 = vec![0.0f64; g];
    for (&x, &d) in pairs.x.iter().zip(&pairs.dx) {
        if let Some(j) = bin_of(x) {
            count[j] += 1;
            sum1[j] += d / dt;
            sum2[j] += d * d / dt;
        }
    }

    // second pass for the centered moment, avoiding cancellation in raw - mean^2
    let mut centered = vec![0.0f64; g];
    if cfg.second_moment == SecondMoment::Centered {
        let mean_dx: Vec<f64> =
            (0..g).map(|j| if count[j] > 0 { sum1[j] * dt / count[j] as f64 } else { 0.0 }).collect();
        for (&x, &d) in pairs.x.iter().zip(&pairs.dx) {
            if let Some(j) = bin_of(x) {
                let r = d - mean_dx[j];
                centered[j] += r * r / dt;
            }
        }
    }

    let mut out = BinnedMoments {
        centers: Vec::new(),
        y1: Vec::new(),
        y2: Vec::new(),
        counts: Vec::new(),
        delta_t: dt,
        dropped: pairs.len(),
    };
    for j in 0..g {
        if count[j] < cfg.min_count {
            continue;
        }
        let n = count[j] as f64;
        out.centers.push(lo + (j as f64 + 0.5) * width);
        out.y1.push(sum1[j] / n);
        out.y2.push(match cfg.second_moment {
            SecondMoment::Raw => sum2[j] / n,
            SecondMoment::Centered => centered[j] / n,
        });
        out.counts.push(count[j]);
        out.dropped -= count[j];
    }
    if out.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no bin reached min_count = {} ({} pairs over {g} bins)",
            cfg.min_count,
            pairs.len()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed(g: usize, lo: f64, hi: f64, min_count: usize) -> BinningConfig {
        BinningConfig { n_bins: g, range: BinRange::Fixed([lo, hi]), min_count, second_moment: SecondMoment::Raw }
    }

    #[test]
    fn direct_means() {
        let pairs = IncrementPairs::new(vec![0.1, 0.1, 0.9], vec![1.0, 3.0, 5.0], 1.0).unwrap();
        let b = bin_moments(&pairs, &fixed(2, 0.0, 1.0, 1)).unwrap();
        assert_eq!(b.centers, [0.25, 0.75]);
        assert_eq!(b.y1, [2.0, 5.0]);
        assert_eq!(b.y2, [5.0, 25.0]);
        assert_eq!(b.counts, [2, 1]);
        assert_eq!(b.dropped, 0);
    }

    #[test]
    fn constant_drift_deterministic_increments() {
        let (c, dt) = (1.5, 0.25);
        let x: Vec<f64> = (0..400).map(|i| -1.0 + i as f64 * 0.005).collect();
        let pairs = IncrementPairs::new(x.clone(), vec![c * dt; x.len()], dt).unwrap();
        let b = bin_moments(&pairs, &fixed(4, -1.0, 1.0, 1)).unwrap();
        for j in 0..b.len() {
            assert_eq!(b.y1[j], c);
            assert!((b.y2[j] - c * c * dt).abs() < 1e-15);
        }
        let centered = BinningConfig { second_moment: SecondMoment::Centered, ..fixed(4, -1.0, 1.0, 1) };
        let b = bin_moments(&pairs, &centered).unwrap();
        assert!(b.y2.iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn right_edge_goes_to_last_bin_and_outside_is_dropped() {
        let pairs = IncrementPairs::new(vec![0.0, 1.0, 1.5, -0.1], vec![1.0; 4], 1.0).unwrap();
        let b = bin_moments(&pairs, &fixed(2, 0.0, 1.0, 1)).unwrap();
        assert_eq!(b.counts, [1, 1]);
        assert_eq!(b.dropped, 2);
    }

    #[test]
    fn sparse_bins_are_removed() {
        let pairs = IncrementPairs::new(vec![0.1, 0.2, 0.3, 0.9], vec![0.0; 4], 1.0).unwrap();
        let b = bin_moments(&pairs, &fixed(2, 0.0, 1.0, 2)).unwrap();
        assert_eq!(b.centers, [0.25]);
        assert_eq!(b.counts, [3]);
        assert_eq!(b.counts.iter().sum::<usize>() + b.dropped, 4);
    }

    #[test]
    fn errors() {
        let pairs = IncrementPairs::new(vec![0.1, 0.9], vec![0.0; 2], 1.0).unwrap();
        assert!(matches!(bin_moments(&pairs, &fixed(2, 0.0, 1.0, 5)), Err(Error::InsufficientData(_))));
        assert!(matches!(bin_moments(&pairs, &fixed(1, 0.0, 1.0, 1)), Err(Error::InsufficientData(_))));
        let empty = IncrementPairs::new(vec![], vec![], 1.0).unwrap();
        assert!(matches!(bin_moments(&empty, &fixed(2, 0.0, 1.0, 1)), Err(Error::EmptyInput(_))));
        let bad_dt = IncrementPairs::new(vec![0.5], vec![0.0], 0.0).unwrap();
        assert!(matches!(bin_moments(&bad_dt, &fixed(2, 0.0, 1.0, 1)), Err(Error::Domain(_))));
    }

    #[test]
    fn auto_and_quantile_ranges() {
        let x: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        assert_eq!(resolve_range(&x, BinRange::Auto).unwrap(), (0.0, 100.0));
        let (lo, hi) = resolve_range(&x, BinRange::Quantile([0.05, 0.95])).unwrap();
        assert!((lo - 5.0).abs() < 1e-12 && (hi - 95.0).abs() < 1e-12);
    }

    #[test]
    fn centers_increase_and_y2_nonnegative() {
        let x: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
        let dx: Vec<f64> = (0..1000).map(|i| ((i * 31) % 17) as f64 - 8.0).collect();
        let pairs = IncrementPairs::new(x, dx, 0.01).unwrap();
        for sm in [SecondMoment::Raw, SecondMoment::Centered] {
            let cfg = BinningConfig { second_moment: sm, ..fixed(20, 0.0, 1.0, 10) };
            let b = bin_moments(&pairs, &cfg).unwrap();
            assert!(b.centers.windows(2).all(|w| w[0] < w[1]));
            assert!(b.y2.iter().all(|&v| v >= 0.0));
            assert!(b.counts.iter().all(|&c| c >= 10));
        }
    }
}
