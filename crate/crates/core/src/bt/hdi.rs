use serde::{Deserialize, Serialize};

use super::BtError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }

    pub fn excludes_zero(&self) -> bool {
        !self.contains(0.0)
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }
}

/// Number of sorted samples a window of `mass` must cover. The tiny
/// downward nudge keeps products like 0.95 * 100 from rounding up to 96.
pub(crate) fn window_len(mass: f64, n: usize) -> usize {
    ((mass * n as f64) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Narrowest interval spanning `ceil(mass * n)` of the samples. Among equally
/// narrow windows the one starting at the smallest sample wins.
pub fn hdi(samples: &[f64], mass: f64) -> Result<Interval, BtError> {
    if samples.len() < 2 {
        return Err(BtError::InsufficientSamples(samples.len()));
    }
    if !(mass > 0.0 && mass < 1.0) {
        return Err(BtError::InvalidConfig(format!("HDI mass {mass} outside (0, 1)")));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(BtError::InvalidConfig("non-finite sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = window_len(mass, sorted.len());
    let best = (0..=sorted.len() - k)
        .map(|i| (i, sorted[i + k - 1] - sorted[i]))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    Ok(Interval {
        low: sorted[best.0],
        high: sorted[best.0 + k - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn uniform_grid_takes_earliest_window() {
        let s: Vec<f64> = (0..100).map(f64::from).collect();
        assert_eq!(hdi(&s, 0.95).unwrap(), Interval { low: 0.0, high: 94.0 });
        let mut rev = s.clone();
        rev.reverse();
        assert_eq!(hdi(&rev, 0.95).unwrap(), Interval { low: 0.0, high: 94.0 });
    }

    #[test]
    fn constant_samples() {
        assert_eq!(hdi(&[2.5; 10], 0.95).unwrap(), Interval { low: 2.5, high: 2.5 });
    }

    #[test]
    fn normal_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s: Vec<f64> = (0..4000).map(|_| rng.sample(StandardNormal)).collect();
        let i = hdi(&s, 0.95).unwrap();
        assert!((i.low + 1.96).abs() < 0.15 && (i.high - 1.96).abs() < 0.15, "{i:?}");
    }

    #[test]
    fn picks_dense_region() {
        let s = [0.0, 10.0, 10.1, 10.2, 10.3, 10.4, 10.5, 10.6, 10.7, 10.8];
        assert_eq!(hdi(&s, 0.9).unwrap(), Interval { low: 10.0, high: 10.8 });
    }

    #[test]
    fn errors() {
        assert!(matches!(hdi(&[1.0], 0.95), Err(BtError::InsufficientSamples(1))));
        assert!(hdi(&[1.0, 2.0], 1.0).is_err());
        assert!(hdi(&[1.0, f64::NAN], 0.5).is_err());
    }

    proptest! {
        #[test]
        fn covers_mass_and_beats_equal_tailed(
            s in prop::collection::vec(-100.0f64..100.0, 2..200),
            mass in 0.05f64..0.99,
        ) {
            let i = hdi(&s, mass).unwrap();
            let k = window_len(mass, s.len());
            let inside = s.iter().filter(|x| i.contains(**x)).count();
            prop_assert!(inside >= k);
            let mut sorted = s.clone();
            sorted.sort_by(f64::total_cmp);
            let start = (s.len() - k) / 2;
            let equal_tailed = sorted[start + k - 1] - sorted[start];
            prop_assert!(i.width() <= equal_tailed);
        }
    }
}
