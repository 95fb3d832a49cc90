//! Degree-of-interest functions for ordering components.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoiKind {
    /// `|E[c^3]|`.
    Skewness,
    /// `|E[c^4] - 3|`.
    #[default]
    Kurtosis,
    /// `|E[c^4]|`, without the Gaussian offset.
    RawKurtosis,
}

impl DoiKind {
    pub fn parse(s: &str) -> Option<DoiKind> {
        match s {
            "skewness" => Some(DoiKind::Skewness),
            "kurtosis" => Some(DoiKind::Kurtosis),
            "raw_kurtosis" => Some(DoiKind::RawKurtosis),
            _ => None,
        }
    }
}

/// Interestingness of a unit-variance component.
pub fn doi(c: &[f64], kind: DoiKind) -> f64 {
    let n = c.len() as f64;
    match kind {
        DoiKind::Skewness => (c.iter().map(|v| v * v * v).sum::<f64>() / n).abs(),
        DoiKind::Kurtosis => (c.iter().map(|v| (v * v) * (v * v)).sum::<f64>() / n - 3.0).abs(),
        DoiKind::RawKurtosis => (c.iter().map(|v| (v * v) * (v * v)).sum::<f64>() / n).abs(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{ChiSquared, Distribution, StandardNormal};

    #[test]
    fn gaussian_scores_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(doi(&c, DoiKind::Skewness) < 0.2);
        assert!(doi(&c, DoiKind::Kurtosis) < 0.2);
    }

    #[test]
    fn alternating_series_has_no_skew() {
        let c: Vec<f64> = (0..100).map(|t| if t % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(doi(&c, DoiKind::Skewness), 0.0);
        assert_eq!(doi(&c, DoiKind::Kurtosis), 2.0);
        assert_eq!(doi(&c, DoiKind::RawKurtosis), 1.0);
    }

    #[test]
    fn heavy_tails_score_high() {
        // Student t with 5 degrees of freedom, rescaled to unit variance:
        // t = z / sqrt(chi2_5 / 5), Var = 5/3, excess kurtosis 6.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let chi = ChiSquared::<f64>::new(5.0).unwrap();
        let raw: Vec<f64> = (0..5000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z / (chi.sample(&mut rng) / 5.0).sqrt()
            })
            .collect();
        let sd = (raw.iter().map(|v| v * v).sum::<f64>() / raw.len() as f64).sqrt();
        let c: Vec<f64> = raw.iter().map(|v| v / sd).collect();
        assert!(doi(&c, DoiKind::Kurtosis) > 0.5);
    }
}
