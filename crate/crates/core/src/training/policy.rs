use rand::Rng;

use crate::env::Action;
use crate::model::argmax;

/// Draws the exploration coin: `Some(uniform action)` with probability ε.
pub fn explore<R: Rng>(epsilon: f64, rng: &mut R) -> Option<usize> {
    let coin: f64 = rng.random();
    (coin < epsilon).then(|| rng.random_range(0..Action::COUNT))
}

/// ε-greedy over `scores`; greedy ties go to the lowest index.
pub fn epsilon_greedy<T: PartialOrd + Copy, R: Rng>(scores: &[T], epsilon: f64, rng: &mut R) -> usize {
    explore(epsilon, rng).unwrap_or_else(|| argmax(scores))
}

/// Linear schedule from `start` to `end` over `steps`, then flat.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearSchedule {
    pub start: f64,
    pub end: f64,
    pub steps: u64,
}

impl LinearSchedule {
    pub fn at(&self, step: u64) -> f64 {
        if self.steps == 0 || step >= self.steps {
            return self.end;
        }
        self.start + (self.end - self.start) * step as f64 / self.steps as f64
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn greedy_picks_max_and_breaks_ties_low() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(epsilon_greedy(&[0.0, 1.0, 0.0, 0.0], 0.0, &mut rng), 1);
        assert_eq!(epsilon_greedy(&[0.5f32; 4], 0.0, &mut rng), 0);
    }

    #[test]
    fn full_exploration_is_uniform() {
        // χ² with 3 degrees of freedom, 99% critical value 11.345.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[epsilon_greedy(&[9.0, 0.0, 0.0, 0.0], 1.0, &mut rng)] += 1;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 11.345, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn schedule_interpolates() {
        let s = LinearSchedule {
            start: 1.0,
            end: 0.05,
            steps: 100,
        };
        assert_eq!(s.at(0), 1.0);
        assert!((s.at(50) - 0.525).abs() < 1e-12);
        assert_eq!(s.at(100), 0.05);
        assert_eq!(s.at(10_000), 0.05);
    }
}
