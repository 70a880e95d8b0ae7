use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::SynthError;
use crate::rng::RngState;

/// Draws a probability vector from Dirichlet(`alpha`) by normalizing
/// independent Gamma(alpha_i, 1) variates.
pub fn draw_species_probs(alpha: &[f64], rng: &mut RngState) -> Result<Vec<f64>, SynthError> {
    if alpha.is_empty() {
        return Err(SynthError::BadAlpha("empty concentration vector".into()));
    }
    if let Some(a) = alpha.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
        return Err(SynthError::BadAlpha(format!("concentration {a} is not positive")));
    }
    if alpha.len() == 1 {
        return Ok(vec![1.0]);
    }
    let gammas: Vec<Gamma<f64>> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("shape validated above"))
        .collect();
    for _ in 0..16 {
        let draws: Vec<f64> = gammas.iter().map(|g| g.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return Ok(draws.into_iter().map(|g| g / sum).collect());
        }
    }
    // Every Gamma underflowed: only possible for vanishing concentrations,
    // where the Dirichlet collapses onto vertex i with probability alpha_i / sum.
    let total: f64 = alpha.iter().sum();
    let onehot = sample_categorical(&alpha.iter().map(|a| a / total).collect::<Vec<_>>(), rng);
    Ok((0..alpha.len()).map(|i| if i == onehot { 1.0 } else { 0.0 }).collect())
}

/// Index drawn with probability `p[i]`. `p` must be non-negative and sum to
/// one up to rounding.
pub fn sample_categorical(p: &[f64], rng: &mut RngState) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&pi| pi > 0.0).unwrap_or(p.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn empirical_mean(alpha: &[f64], n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        let mut acc = vec![0.0; alpha.len()];
        for _ in 0..n {
            for (a, p) in acc.iter_mut().zip(draw_species_probs(alpha, &mut rng).unwrap()) {
                *a += p;
            }
        }
        acc.into_iter().map(|a| a / n as f64).collect()
    }

    #[test]
    fn mean_matches_normalized_concentration() {
        let m = empirical_mean(&[9.0, 2.0, 1.0], 100_000, 11);
        for (got, want) in m.iter().zip([9.0 / 12.0, 2.0 / 12.0, 1.0 / 12.0]) {
            assert!((got - want).abs() <= 0.005, "{m:?}");
        }
        let m = empirical_mean(&[5.0, 5.0], 100_000, 12);
        assert!((m[0] - 0.5).abs() <= 0.005 && (m[1] - 0.5).abs() <= 0.005);
    }

    #[test]
    fn single_species_is_degenerate() {
        let mut rng = rng_from_seed(0);
        for _ in 0..10 {
            assert_eq!(draw_species_probs(&[3.0], &mut rng).unwrap(), vec![1.0]);
        }
    }

    #[test]
    fn rejects_non_positive_concentration() {
        let mut rng = rng_from_seed(0);
        assert!(draw_species_probs(&[1.0, 0.0], &mut rng).is_err());
        assert!(draw_species_probs(&[-1.0], &mut rng).is_err());
        assert!(draw_species_probs(&[f64::NAN, 1.0], &mut rng).is_err());
        assert!(draw_species_probs(&[], &mut rng).is_err());
    }

    #[test]
    fn random_concentrations_sum_to_one() {
        let mut rng = rng_from_seed(5);
        for _ in 0..100_000 {
            let k = rng.random_range(1..6);
            let alpha: Vec<f64> = (0..k).map(|_| 10f64.powf(rng.random_range(-3.0..2.0))).collect();
            let p = draw_species_probs(&alpha, &mut rng).unwrap();
            assert!(p.iter().all(|&x| x >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn categorical_follows_weights() {
        let mut rng = rng_from_seed(3);
        let mut hits = [0usize; 3];
        for _ in 0..60_000 {
            hits[sample_categorical(&[0.5, 0.0, 0.5], &mut rng)] += 1;
        }
        assert_eq!(hits[1], 0);
        assert!((hits[0] as f64 / 60_000.0 - 0.5).abs() < 0.01);
    }
}
