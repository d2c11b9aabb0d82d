use super::{GroupError, GroupModel};
use crate::diffcore::{backprop_tape, forward_with_tape, sigma_from_logvar, Matrix, MlpGrads, RngStream};

/// Soft conditional coverage `sum(q c) / sum(q)` of a fuzzy group.
pub fn coverage_loss(q: &[f64], covered: &[bool]) -> Result<f64, GroupError> {
    Ok(coverage_loss_grad(q, covered)?.0)
}

/// Value and gradient `(c_i - L) / sum(q)`.
pub fn coverage_loss_grad(q: &[f64], covered: &[bool]) -> Result<(f64, Vec<f64>), GroupError> {
    if q.len() != covered.len() {
        return Err(GroupError::Shape(format!("{} memberships vs {} bits", q.len(), covered.len())));
    }
    let mass: f64 = q.iter().sum();
    if !(mass > 0.0) {
        return Err(GroupError::Domain("memberships sum to zero".into()));
    }
    let hit: f64 = q.iter().zip(covered).filter(|(_, &c)| c).map(|(x, _)| x).sum();
    let l = hit / mass;
    let g = covered.iter().map(|&c| (f64::from(u8::from(c)) - l) / mass).collect();
    Ok((l, g))
}

/// Relative weights of the three objective terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub coverage: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

impl LossWeights {
    pub fn full(beta: f64) -> Self {
        Self {
            coverage: 1.0,
            reconstruction: 1.0,
            kl: beta,
        }
    }

    /// Coverage and KL only; used while the reconstruction decoder is frozen.
    pub fn group_stage(beta: f64) -> Self {
        Self {
            coverage: 1.0,
            reconstruction: 0.0,
            kl: beta,
        }
    }

    pub fn reconstruction_stage() -> Self {
        Self {
            coverage: 0.0,
            reconstruction: 1.0,
            kl: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub coverage: f64,
    pub reconstruction: f64,
    /// Batch mean of the per-row KL to the standard normal.
    pub kl: f64,
}

#[derive(Debug, Clone)]
pub struct GroupGrads {
    pub mu_net: MlpGrads,
    pub logvar_net: MlpGrads,
    pub member_net: MlpGrads,
    pub recon_net: MlpGrads,
}

/// Loss and gradients for a batch with explicit reparameterization noise
/// `eps` (`n x latent_dim`).
pub fn fareg_loss_with_noise(
    model: &GroupModel,
    x: &Matrix,
    covered: &[bool],
    eps: &Matrix,
    weights: LossWeights,
) -> Result<(LossBreakdown, GroupGrads), GroupError> {
    let n = x.rows();
    let k = model.latent_dim();
    if n == 0 {
        return Err(GroupError::Domain("empty batch".into()));
    }
    if covered.len() != n || eps.shape() != (n, k) {
        return Err(GroupError::Shape(format!(
            "batch {n} rows, {} bits, noise {:?}",
            covered.len(),
            eps.shape()
        )));
    }
    let (mu, mu_tape) = forward_with_tape(&model.mu_net, x)?;
    let (lv, lv_tape) = forward_with_tape(&model.logvar_net, x)?;
    let mut sigma = Matrix::zeros(n, k);
    let mut dsigma_dlv = Matrix::zeros(n, k);
    let mut z = Matrix::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            let (s, ds) = sigma_from_logvar(lv[(i, j)]);
            sigma[(i, j)] = s;
            dsigma_dlv[(i, j)] = ds;
            z[(i, j)] = mu[(i, j)] + s * eps[(i, j)];
        }
    }

    let (q, m_tape) = forward_with_tape(&model.member_net, &z)?;
    let (l_cc, dq) = coverage_loss_grad(q.as_slice(), covered)?;
    let dq = Matrix::from_vec(n, 1, dq.into_iter().map(|g| g * weights.coverage).collect())?;
    let (member_g, mut dz) = backprop_tape(&model.member_net, &m_tape, &dq)?;

    let (xr, r_tape) = forward_with_tape(&model.recon_net, &z)?;
    let scale = 1.0 / (n * x.cols()) as f64;
    let mut l_mse = 0.0;
    let mut dxr = Matrix::zeros(n, x.cols());
    for (g, (a, b)) in dxr.as_mut_slice().iter_mut().zip(xr.as_slice().iter().zip(x.as_slice())) {
        let diff = a - b;
        l_mse += diff * diff * scale;
        *g = 2.0 * diff * scale * weights.reconstruction;
    }
    let (recon_g, dz_rec) = backprop_tape(&model.recon_net, &r_tape, &dxr)?;
    for (a, b) in dz.as_mut_slice().iter_mut().zip(dz_rec.as_slice()) {
        *a += b;
    }

    let mut l_kl = 0.0;
    let mut dmu = Matrix::zeros(n, k);
    let mut dlv = Matrix::zeros(n, k);
    let kl_scale = weights.kl / n as f64;
    for i in 0..n {
        for j in 0..k {
            let (m, s) = (mu[(i, j)], sigma[(i, j)]);
            l_kl += 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln()) / n as f64;
            dmu[(i, j)] = dz[(i, j)] + kl_scale * m;
            let ds = dz[(i, j)] * eps[(i, j)] + kl_scale * (s - 1.0 / s);
            dlv[(i, j)] = ds * dsigma_dlv[(i, j)];
        }
    }
    let (mu_g, _) = backprop_tape(&model.mu_net, &mu_tape, &dmu)?;
    let (lv_g, _) = backprop_tape(&model.logvar_net, &lv_tape, &dlv)?;
    let total = weights.coverage * l_cc + weights.reconstruction * l_mse + weights.kl * l_kl;
    if !total.is_finite() {
        return Err(GroupError::NonFinite("loss".into()));
    }
    Ok((
        LossBreakdown {
            total,
            coverage: l_cc,
            reconstruction: l_mse,
            kl: l_kl,
        },
        GroupGrads {
            mu_net: mu_g,
            logvar_net: lv_g,
            member_net: member_g,
            recon_net: recon_g,
        },
    ))
}

/// Full objective with fresh reparameterization noise.
pub fn fareg_loss(
    model: &GroupModel,
    x: &Matrix,
    covered: &[bool],
    beta: f64,
    rng: &mut RngStream,
) -> Result<LossBreakdown, GroupError> {
    let eps = standard_noise(x.rows(), model.latent_dim(), rng);
    Ok(fareg_loss_with_noise(model, x, covered, &eps, LossWeights::full(beta))?.0)
}

pub fn standard_noise(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.normal()).collect();
    Matrix::from_vec(rows, cols, data).expect("shape matches data")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, MlpParams};

    #[test]
    fn coverage_loss_examples() {
        assert_eq!(coverage_loss(&[0.3, 0.9], &[true, true]).unwrap(), 1.0);
        assert_eq!(coverage_loss(&[0.3, 0.9], &[false, false]).unwrap(), 0.0);
        assert!((coverage_loss(&[0.8, 0.2], &[false, true]).unwrap() - 0.2).abs() < 1e-15);
        assert!(coverage_loss(&[0.0, 0.0], &[true, false]).is_err());
        assert!(coverage_loss(&[0.5], &[true, false]).is_err());
    }

    #[test]
    fn vanishes_for_perfect_reconstruction() {
        let m = GroupModel::zeros(3, 2).unwrap();
        let x = Matrix::zeros(4, 3);
        let eps = Matrix::zeros(4, 2);
        let (l, _) = fareg_loss_with_noise(&m, &x, &[false; 4], &eps, LossWeights::full(1.5)).unwrap();
        assert_eq!(l.total, 0.0);
    }

    fn flat_all(m: &GroupModel) -> Vec<f64> {
        [&m.mu_net, &m.logvar_net, &m.member_net, &m.recon_net]
            .iter()
            .flat_map(|p| p.flatten())
            .collect()
    }

    fn assign_all(m: &mut GroupModel, flat: &[f64]) {
        let mut at = 0;
        for p in [&mut m.mu_net, &mut m.logvar_net, &mut m.member_net, &mut m.recon_net] {
            let k = p.num_params();
            p.assign_flat(&flat[at..at + k]).unwrap();
            at += k;
        }
    }

    fn flat_grads(g: &GroupGrads) -> Vec<f64> {
        [&g.mu_net, &g.logvar_net, &g.member_net, &g.recon_net]
            .iter()
            .flat_map(|p: &&MlpParams| p.flatten())
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = RngStream::new(12);
        let model = GroupModel::with_hidden(3, 2, &[5, 4], &mut rng).unwrap();
        let x = standard_noise(8, 3, &mut rng);
        let eps = standard_noise(8, 2, &mut rng);
        let covered: Vec<bool> = (0..8).map(|i| i % 3 != 0).collect();
        for w in [LossWeights::full(0.7), LossWeights::group_stage(2.0), LossWeights::reconstruction_stage()] {
            let err = grad_check(
                |flat| {
                    let mut m = model.clone();
                    assign_all(&mut m, flat);
                    let (l, g) = fareg_loss_with_noise(&m, &x, &covered, &eps, w).unwrap();
                    (l.total, flat_grads(&g))
                },
                &flat_all(&model),
            );
            assert!(err < 1e-4, "{w:?}: {err}");
        }
    }
}
