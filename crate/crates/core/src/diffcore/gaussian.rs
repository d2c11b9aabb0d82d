//! Diagonal Gaussian utilities: KL to the standard normal, the log-variance
//! parameterization, and reparameterized sampling.

use super::{DiffError, RngStream};

pub const SIGMA_MIN: f64 = 1e-6;
pub const SIGMA_MAX: f64 = 1e3;

/// `KL(N(mu, diag(sigma²)) ‖ N(0, I)) = ½ Σ (μ² + σ² − 1 − 2 log σ)`.
pub fn gaussian_kl(mu: &[f64], sigma: &[f64]) -> Result<f64, DiffError> {
    check_pair(mu, sigma)?;
    Ok(0.5
        * mu
            .iter()
            .zip(sigma)
            .map(|(&m, &s)| m * m + s * s - 1.0 - 2.0 * s.ln())
            .sum::<f64>())
}

/// `(∂KL/∂μ, ∂KL/∂σ) = (μ, σ − 1/σ)`.
pub fn gaussian_kl_grad(mu: &[f64], sigma: &[f64]) -> Result<(Vec<f64>, Vec<f64>), DiffError> {
    check_pair(mu, sigma)?;
    Ok((mu.to_vec(), sigma.iter().map(|&s| s - 1.0 / s).collect()))
}

/// σ = exp(½·logvar) clamped to `[SIGMA_MIN, SIGMA_MAX]`, with dσ/dlogvar
/// (zero where the clamp is active).
pub fn sigma_from_logvar(logvar: f64) -> (f64, f64) {
    let s = (0.5 * logvar).exp();
    if s < SIGMA_MIN {
        (SIGMA_MIN, 0.0)
    } else if s > SIGMA_MAX {
        (SIGMA_MAX, 0.0)
    } else {
        (s, 0.5 * s)
    }
}

pub fn clamp_sigma(s: f64) -> f64 {
    s.clamp(SIGMA_MIN, SIGMA_MAX)
}

/// `mu + sigma ⊙ ε` with ε standard normal; σ is clamped first.
pub fn reparam_sample(mu: &[f64], sigma: &[f64], rng: &mut RngStream) -> Result<Vec<f64>, DiffError> {
    Ok(reparam_sample_with_noise(mu, sigma, rng)?.0)
}

/// Like [`reparam_sample`] but also returns ε, which the backward pass needs
/// (∂z/∂σ = ε).
pub fn reparam_sample_with_noise(
    mu: &[f64],
    sigma: &[f64],
    rng: &mut RngStream,
) -> Result<(Vec<f64>, Vec<f64>), DiffError> {
    if mu.len() != sigma.len() {
        return Err(DiffError::Dimension(format!("mu {} vs sigma {}", mu.len(), sigma.len())));
    }
    let eps: Vec<f64> = mu.iter().map(|_| rng.normal()).collect();
    let z = mu
        .iter()
        .zip(sigma)
        .zip(&eps)
        .map(|((&m, &s), &e)| m + clamp_sigma(s) * e)
        .collect();
    Ok((z, eps))
}

fn check_pair(mu: &[f64], sigma: &[f64]) -> Result<(), DiffError> {
    if mu.len() != sigma.len() {
        return Err(DiffError::Dimension(format!("mu {} vs sigma {}", mu.len(), sigma.len())));
    }
    if let Some(s) = sigma.iter().find(|&&s| !(s > 0.0)) {
        return Err(DiffError::Domain(format!("sigma must be positive, got {s}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_closed_form_cases() {
        assert_eq!(gaussian_kl(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!((gaussian_kl(&[1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(gaussian_kl(&[0.0], &[0.0]), Err(DiffError::Domain(_))));
        assert!(matches!(gaussian_kl(&[0.0], &[-1.0]), Err(DiffError::Domain(_))));
    }

    #[test]
    fn kl_gradient_matches_differences() {
        let mu = [0.3, -1.2];
        let sigma = [0.7, 1.9];
        let (gm, gs) = gaussian_kl_grad(&mu, &sigma).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let mut a = mu;
            let mut b = mu;
            a[j] += h;
            b[j] -= h;
            let fd = (gaussian_kl(&a, &sigma).unwrap() - gaussian_kl(&b, &sigma).unwrap()) / (2.0 * h);
            assert!((fd - gm[j]).abs() < 1e-7);
            let mut a = sigma;
            let mut b = sigma;
            a[j] += h;
            b[j] -= h;
            let fd = (gaussian_kl(&mu, &a).unwrap() - gaussian_kl(&mu, &b).unwrap()) / (2.0 * h);
            assert!((fd - gs[j]).abs() < 1e-7);
        }
    }

    #[test]
    fn degenerate_sigma_returns_mean() {
        let mut rng = RngStream::new(9);
        let z = reparam_sample(&[1.5, -2.0], &[0.0, 0.0], &mut rng).unwrap();
        assert!((z[0] - 1.5).abs() < 1e-4 && (z[1] + 2.0).abs() < 1e-4);
    }

    #[test]
    fn reset_stream_reproduces_sample() {
        let mut rng = RngStream::new(4);
        let a = reparam_sample(&[0.0; 3], &[1.0; 3], &mut rng).unwrap();
        rng.reset();
        let b = reparam_sample(&[0.0; 3], &[1.0; 3], &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_mean_converges() {
        let mut rng = RngStream::new(21);
        let mu = [0.4, -1.0];
        let sigma = [2.0, 0.5];
        let n = 100_000;
        let mut sum = [0.0; 2];
        for _ in 0..n {
            let z = reparam_sample(&mu, &sigma, &mut rng).unwrap();
            sum[0] += z[0];
            sum[1] += z[1];
        }
        for j in 0..2 {
            let se = sigma[j] / (n as f64).sqrt();
            assert!((sum[j] / n as f64 - mu[j]).abs() < 3.0 * se);
        }
    }

    #[test]
    fn logvar_clamp_kills_gradient() {
        assert_eq!(sigma_from_logvar(0.0), (1.0, 0.5));
        assert_eq!(sigma_from_logvar(-100.0).1, 0.0);
        assert_eq!(sigma_from_logvar(100.0).0, SIGMA_MAX);
    }
}
