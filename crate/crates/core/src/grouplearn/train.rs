use serde::{Deserialize, Serialize};

use super::loss::{fareg_loss_with_noise, standard_noise, LossWeights};
use super::{coverage_loss, project_min_mass, GroupError, GroupModel, DEFAULT_LATENT_DIM};
use crate::diffcore::{adam_step, sigmoid, AdamState, Matrix, RngStream};

/// Validation memberships may fall this far below `delta` for a checkpoint
/// to remain eligible; the bias is only corrected on the training half.
pub const VALIDATION_MASS_SLACK: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Minimum mean membership of the learned group.
    pub delta: f64,
    /// Weight of the KL term.
    pub beta: f64,
    pub epochs: usize,
    /// Epochs for the reconstruction decoder; defaults to `epochs`.
    pub recon_epochs: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Number of sampled groups.
    pub t_samples: usize,
    pub latent_dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::synthetic()
    }
}

impl TrainConfig {
    pub fn synthetic() -> Self {
        Self {
            delta: 0.3,
            beta: 2.0,
            epochs: 2000,
            recon_epochs: None,
            batch_size: 500,
            learning_rate: 0.001,
            t_samples: 20,
            latent_dim: DEFAULT_LATENT_DIM,
            seed: 0,
        }
    }

    pub fn nursery() -> Self {
        Self {
            delta: 0.1,
            beta: 0.1,
            epochs: 800,
            recon_epochs: None,
            batch_size: 500,
            learning_rate: 0.01,
            t_samples: 100,
            latent_dim: DEFAULT_LATENT_DIM,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), GroupError> {
        let bad = |m: &str| Err(GroupError::Config(m.to_string()));
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be nonnegative");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.latent_dim == 0 {
            return bad("epochs, batch_size and latent_dim must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.t_samples == 0 {
            return bad("t_samples must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean stage-one objective over the epoch's batches.
    pub train_loss: f64,
    pub train_mass: f64,
    pub val_coverage: f64,
    pub val_mass: f64,
    pub projected: bool,
}

#[derive(Debug, Clone)]
pub struct TrainedGroupModel {
    pub model: GroupModel,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; `None` when no checkpoint met the
    /// validation mass floor and the final parameters were kept.
    pub selected_epoch: Option<usize>,
    pub recon_loss: f64,
}

/// Additive membership-bias shift that lifts the mean of
/// `sigmoid(logit + shift)` to at least `target`.
pub fn bias_shift_for_mean(logits: &[f64], target: f64) -> f64 {
    let mean = |b: f64| logits.iter().map(|&l| sigmoid(l + b)).sum::<f64>() / logits.len() as f64;
    if mean(0.0) >= target {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while mean(hi) < target && hi < 1e6 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mean(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Enforces the minimum-mass constraint on the training half: the projected
/// memberships fix the required mean, realized through the membership bias.
fn enforce_mass(model: &mut GroupModel, x: &Matrix, delta: f64) -> Result<(bool, f64), GroupError> {
    let (mu, _) = model.encode(x)?;
    let logits = model.membership_logits(&mu)?;
    let q: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
    let n = q.len() as f64;
    let mass = q.iter().sum::<f64>() / n;
    if mass >= delta {
        return Ok((false, mass));
    }
    let projected = project_min_mass(&q, delta * n)?;
    let target = projected.iter().sum::<f64>() / n;
    let shift = bias_shift_for_mean(&logits, target.max(delta));
    model.shift_membership_bias(shift);
    let q_after = model.membership_probs(&mu)?;
    Ok((true, q_after.iter().sum::<f64>() / n))
}

/// Two-stage training on the training half, with checkpoint selection on the
/// validation half.
pub fn train_group_model(
    train_x: &Matrix,
    train_covered: &[bool],
    val_x: &Matrix,
    val_covered: &[bool],
    config: &TrainConfig,
    rng: &mut RngStream,
) -> Result<TrainedGroupModel, GroupError> {
    train_group_model_with(train_x, train_covered, val_x, val_covered, config, None, rng)
}

/// [`train_group_model`] with optional hidden widths for every network.
pub fn train_group_model_with(
    train_x: &Matrix,
    train_covered: &[bool],
    val_x: &Matrix,
    val_covered: &[bool],
    config: &TrainConfig,
    hidden: Option<&[usize]>,
    rng: &mut RngStream,
) -> Result<TrainedGroupModel, GroupError> {
    config.validate()?;
    let n = train_x.rows();
    if n == 0 || val_x.rows() == 0 {
        return Err(GroupError::Domain("training and validation halves must be nonempty".into()));
    }
    if train_covered.len() != n || val_covered.len() != val_x.rows() || val_x.cols() != train_x.cols() {
        return Err(GroupError::Shape("coverage bits or widths do not match the data".into()));
    }
    let mut init = rng.derive("init");
    let mut model = match hidden {
        Some(h) => GroupModel::with_hidden(train_x.cols(), config.latent_dim, h, &mut init)?,
        None => GroupModel::new(train_x.cols(), config.latent_dim, &mut init)?,
    };
    let mut batches = rng.derive("batches");
    let mut noise = rng.derive("noise");
    let mut adam_mu = AdamState::new(&model.mu_net, config.learning_rate);
    let mut adam_lv = AdamState::new(&model.logvar_net, config.learning_rate);
    let mut adam_m = AdamState::new(&model.member_net, config.learning_rate);
    enforce_mass(&mut model, train_x, config.delta)?;

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, GroupModel)> = None;
    let weights = LossWeights::group_stage(config.beta);
    for epoch in 0..config.epochs {
        let order = batches.permutation(n);
        let mut loss_sum = 0.0;
        let mut count = 0;
        let mut projected = false;
        for chunk in order.chunks(config.batch_size) {
            let xb = train_x.select_rows(chunk);
            let cb: Vec<bool> = chunk.iter().map(|&i| train_covered[i]).collect();
            let eps = standard_noise(chunk.len(), config.latent_dim, &mut noise);
            let (loss, grads) = fareg_loss_with_noise(&model, &xb, &cb, &eps, weights)?;
            adam_step(&mut model.mu_net, &grads.mu_net, &mut adam_mu)?;
            adam_step(&mut model.logvar_net, &grads.logvar_net, &mut adam_lv)?;
            adam_step(&mut model.member_net, &grads.member_net, &mut adam_m)?;
            projected |= enforce_mass(&mut model, train_x, config.delta)?.0;
            loss_sum += loss.total;
            count += 1;
        }
        let train_mass = model.mean_memberships(train_x)?.iter().sum::<f64>() / n as f64;
        let vq = model.mean_memberships(val_x)?;
        let val_mass = vq.iter().sum::<f64>() / vq.len() as f64;
        let val_coverage = coverage_loss(&vq, val_covered)?;
        if !val_coverage.is_finite() {
            return Err(GroupError::NonFinite(format!("validation coverage at epoch {epoch}")));
        }
        if val_mass >= config.delta - VALIDATION_MASS_SLACK && best.as_ref().is_none_or(|b| val_coverage < b.0) {
            best = Some((val_coverage, epoch, model.clone()));
        }
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / count as f64,
            train_mass,
            val_coverage,
            val_mass,
            projected,
        });
    }
    let selected_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, m)) = best {
        model = m;
    }

    let mut adam_r = AdamState::new(&model.recon_net, config.learning_rate);
    let rec_weights = LossWeights::reconstruction_stage();
    let mut recon_loss = f64::NAN;
    for _ in 0..config.recon_epochs.unwrap_or(config.epochs) {
        let order = batches.permutation(n);
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks(config.batch_size) {
            let xb = train_x.select_rows(chunk);
            let cb: Vec<bool> = chunk.iter().map(|&i| train_covered[i]).collect();
            let eps = standard_noise(chunk.len(), config.latent_dim, &mut noise);
            let (loss, grads) = fareg_loss_with_noise(&model, &xb, &cb, &eps, rec_weights)?;
            adam_step(&mut model.recon_net, &grads.recon_net, &mut adam_r)?;
            sum += loss.reconstruction;
            count += 1;
        }
        recon_loss = sum / count as f64;
    }
    Ok(TrainedGroupModel {
        model,
        history,
        selected_epoch,
        recon_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 60,
            batch_size: 64,
            learning_rate: 0.01,
            ..TrainConfig::synthetic()
        }
    }

    #[test]
    fn bias_shift_reaches_target() {
        let logits = [-3.0, -2.0, -5.0, 0.5];
        let b = bias_shift_for_mean(&logits, 0.6);
        let m = logits.iter().map(|&l| sigmoid(l + b)).sum::<f64>() / 4.0;
        assert!(m >= 0.6 && m < 0.6 + 1e-9);
        assert_eq!(bias_shift_for_mean(&logits, 0.01), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::synthetic().validate().is_ok());
        assert!(TrainConfig { delta: 1.0, ..TrainConfig::synthetic() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::synthetic() }.validate().is_err());
        let toml_cfg: TrainConfig = toml::from_str("delta = 0.2\nbeta = 0.5").unwrap();
        assert_eq!(toml_cfg.delta, 0.2);
        assert_eq!(toml_cfg.epochs, 2000);
        assert!(toml::from_str::<TrainConfig>("gamma = 1").is_err());
    }

    #[test]
    fn training_keeps_mass_and_is_deterministic() {
        let mut rng = RngStream::new(5);
        let x = standard_noise(200, 3, &mut rng);
        let c: Vec<bool> = (0..200).map(|i| x[(i, 0)] > -1.0).collect();
        let (tx, vx) = (x.select_rows(&(0..100).collect::<Vec<_>>()), x.select_rows(&(100..200).collect::<Vec<_>>()));
        let cfg = small_config();
        let a = train_group_model_with(&tx, &c[..100], &vx, &c[100..], &cfg, Some(&[8, 8]), &mut RngStream::new(1))
            .unwrap();
        for r in &a.history {
            assert!(r.train_mass >= cfg.delta - 1e-9, "{r:?}");
        }
        let b = train_group_model_with(&tx, &c[..100], &vx, &c[100..], &cfg, Some(&[8, 8]), &mut RngStream::new(1))
            .unwrap();
        assert_eq!(a.model, b.model);
        // Uncovered points sit at low x0; the learned group should favor them.
        let q = a.model.mean_memberships(&vx).unwrap();
        let val_cov = coverage_loss(&q, &c[100..]).unwrap();
        let marginal = c[100..].iter().filter(|&&b| b).count() as f64 / 100.0;
        assert!(val_cov < marginal, "{val_cov} vs {marginal}");
    }
}
