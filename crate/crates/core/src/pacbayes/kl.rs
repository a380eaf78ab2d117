use crate::error::{Error, Result};

/// `KL(U(−σ, σ) ‖ U(−τ, τ)) = Σ ln(τ_i / σ_i)` for product uniform laws.
pub fn kl_uniform(sigma: &[f64], tau: &[f64]) -> Result<f64> {
    if sigma.len() != tau.len() {
        return Err(Error::ParamCount {
            expected: tau.len(),
            got: sigma.len(),
        });
    }
    let bad: Vec<usize> = sigma
        .iter()
        .zip(tau)
        .enumerate()
        .filter(|(_, (s, t))| !(**s > 0.0 && s <= t))
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        return Err(Error::SupportViolation { indices: bad });
    }
    Ok(sigma.iter().zip(tau).map(|(s, t)| (t / s).ln()).sum())
}

/// Upper bound on `KL(N(0, diag σ²) ‖ N(0, τI))` carrying a `+1` slack:
/// `½(m ln τ − Σ ln σ_i² − m + Σ σ_i²/τ + 1)`.
pub fn kl_gaussian(sigma: &[f64], tau: f64) -> f64 {
    let m = sigma.len() as f64;
    let log_var: f64 = sigma.iter().map(|s| (s * s).ln()).sum();
    let var: f64 = sigma.iter().map(|s| s * s).sum();
    0.5 * (m * tau.ln() - log_var - m + var / tau + 1.0)
}

/// KL bound for the posterior truncated to the neighborhood box, valid when
/// its normalizer is at least ½.
pub fn truncated_kl_bound(kl: f64) -> f64 {
    2.0 * (kl + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_examples() {
        assert_eq!(kl_uniform(&[0.3, 2.0], &[0.3, 2.0]).unwrap(), 0.0);
        let tau = [1.0, 2.0, 0.5, 3.0, 7.0];
        let sigma: Vec<f64> = tau.iter().map(|t| t / std::f64::consts::E).collect();
        assert!((kl_uniform(&sigma, &tau).unwrap() - 5.0).abs() < 1e-12);
        assert!(matches!(
            kl_uniform(&[1.0, 3.0], &[2.0, 2.0]),
            Err(Error::SupportViolation { indices }) if indices == vec![1]
        ));
    }

    #[test]
    fn uniform_matches_numerical_integration() {
        // Oracle: midpoint quadrature of ∫ q ln(q/p) over the posterior support.
        let sigma = [0.4, 0.9];
        let tau = [1.0, 1.5];
        let q = 1.0 / (4.0 * sigma[0] * sigma[1]);
        let p = 1.0 / (4.0 * tau[0] * tau[1]);
        let cells = 400;
        let (dx, dy) = (2.0 * sigma[0] / cells as f64, 2.0 * sigma[1] / cells as f64);
        let mut integral = 0.0;
        for i in 0..cells {
            for j in 0..cells {
                let x = -sigma[0] + (i as f64 + 0.5) * dx;
                let y = -sigma[1] + (j as f64 + 0.5) * dy;
                let inside_prior = x.abs() <= tau[0] && y.abs() <= tau[1];
                assert!(inside_prior);
                integral += q * (q / p).ln() * dx * dy;
            }
        }
        assert!((integral - kl_uniform(&sigma, &tau).unwrap()).abs() < 1e-2);
    }

    #[test]
    fn gaussian_examples() {
        assert!((kl_gaussian(&[2.0, 2.0, 2.0], 4.0) - 0.5).abs() < 1e-12);
        assert!((kl_gaussian(&[1.0], 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(truncated_kl_bound(0.5), 3.0);
    }

    proptest! {
        #[test]
        fn gaussian_decreasing_below_prior_scale(
            tau in 0.1f64..10.0,
            a in 0.01f64..0.99, b in 0.01f64..0.99,
            rest in prop::collection::vec(0.1f64..2.0, 0..4),
        ) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-6);
            let s = tau.sqrt();
            let mut small = vec![lo * s];
            small.extend(&rest);
            let mut large = vec![hi * s];
            large.extend(&rest);
            prop_assert!(kl_gaussian(&small, tau) > kl_gaussian(&large, tau));
        }

        #[test]
        fn uniform_nonincreasing_in_sigma(
            tau in prop::collection::vec(0.5f64..5.0, 1..6),
            f1 in 0.05f64..1.0, f2 in 0.05f64..1.0,
        ) {
            let (lo, hi) = if f1 < f2 { (f1, f2) } else { (f2, f1) };
            let s_lo: Vec<f64> = tau.iter().map(|t| t * lo).collect();
            let s_hi: Vec<f64> = tau.iter().map(|t| t * hi).collect();
            let k_lo = kl_uniform(&s_lo, &tau).unwrap();
            let k_hi = kl_uniform(&s_hi, &tau).unwrap();
            prop_assert!(k_hi <= k_lo + 1e-12);
            prop_assert!(k_hi >= 0.0);
        }
    }
}
