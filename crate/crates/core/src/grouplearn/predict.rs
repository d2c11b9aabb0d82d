use log::warn;

use super::{GroupError, GroupModel};
use crate::conformal::{
    calibrate, calibration_scores, union_at_thresholds, ClassifierOutput, ConformalNoise, PredictionSet, Threshold,
};
use crate::diffcore::{Matrix, RngStream};

/// Groups smaller than this are not recalibrated on.
pub const MIN_GROUP_SIZE: usize = 10;

/// One realized group over the calibration set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSample {
    bits: Vec<bool>,
    members: Vec<usize>,
}

impl GroupSample {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        let members = (0..bits.len()).filter(|&i| bits[i]).collect();
        Self { bits, members }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Independent Bernoulli draws from precomputed memberships.
pub fn sample_from_probs(q: &[f64], t: usize, rng: &mut RngStream) -> Vec<GroupSample> {
    (0..t)
        .map(|_| GroupSample::from_bits(q.iter().map(|&p| rng.bernoulli(p)).collect()))
        .collect()
}

/// `t` groups drawn from the memberships of the encoder means.
pub fn sample_groups(
    model: &GroupModel,
    calib_x: &Matrix,
    t: usize,
    rng: &mut RngStream,
) -> Result<Vec<GroupSample>, GroupError> {
    let q = model.mean_memberships(calib_x)?;
    Ok(sample_from_probs(&q, t, rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupThreshold {
    pub size: usize,
    pub threshold: Threshold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaregPrediction {
    pub sets: Vec<PredictionSet>,
    pub marginal: Threshold,
    /// Thresholds of the groups that were large enough, in sample order.
    pub groups: Vec<GroupThreshold>,
    pub skipped: usize,
}

/// Marginal set united with the sets recalibrated on each group.
pub fn fareg_predict_with_groups(
    calib: &ClassifierOutput,
    calib_labels: &[usize],
    test: &ClassifierOutput,
    alpha: f64,
    groups: &[GroupSample],
    noise: &ConformalNoise,
) -> Result<FaregPrediction, GroupError> {
    let scores = calibration_scores(calib, calib_labels, &noise.calibration)?;
    let marginal = calibrate(&scores, alpha)?.threshold;
    let mut thresholds = vec![marginal];
    let mut kept = Vec::new();
    let mut skipped = 0;
    for g in groups {
        if g.bits().len() != calib.len() {
            return Err(GroupError::Shape(format!(
                "group over {} points, calibration has {}",
                g.bits().len(),
                calib.len()
            )));
        }
        if g.len() < MIN_GROUP_SIZE {
            skipped += 1;
            continue;
        }
        let member_scores: Vec<f64> = g.members().iter().map(|&i| scores[i]).collect();
        let th = calibrate(&member_scores, alpha)?.threshold;
        thresholds.push(th);
        kept.push(GroupThreshold {
            size: g.len(),
            threshold: th,
        });
    }
    if skipped > 0 {
        warn!("skipped {skipped} sampled groups with fewer than {MIN_GROUP_SIZE} members");
    }
    if noise.test.len() != test.len() {
        return Err(GroupError::Shape("test noise length differs from test rows".into()));
    }
    Ok(FaregPrediction {
        sets: union_at_thresholds(test, &noise.test, &thresholds),
        marginal,
        groups: kept,
        skipped,
    })
}

/// Draws conformal noise (calibration then test), then `t` groups, then
/// builds the union sets.
#[allow(clippy::too_many_arguments)]
pub fn fareg_predict(
    model: &GroupModel,
    calib_x: &Matrix,
    calib: &ClassifierOutput,
    calib_labels: &[usize],
    test: &ClassifierOutput,
    alpha: f64,
    t: usize,
    rng: &mut RngStream,
) -> Result<FaregPrediction, GroupError> {
    let noise = ConformalNoise::draw(calib.len(), test.len(), rng);
    let groups = sample_groups(model, calib_x, t, rng)?;
    fareg_predict_with_groups(calib, calib_labels, test, alpha, &groups, &noise)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    /// Latent coordinate whose perturbation moves the mean membership most.
    pub latent: usize,
    pub membership_change: f64,
    /// Per input feature: mean absolute reconstruction change per unit of
    /// latent perturbation, divided by the feature's standard deviation
    /// (1 for constant features).
    pub ratios: Vec<f64>,
    /// Top features by ratio, ties broken by index.
    pub ranking: Vec<usize>,
}

pub fn attribute_features(
    model: &GroupModel,
    reference: &Matrix,
    epsilon: f64,
    top_k: usize,
) -> Result<Attribution, GroupError> {
    if !(epsilon > 0.0) {
        return Err(GroupError::Domain("epsilon must be positive".into()));
    }
    if reference.rows() == 0 {
        return Err(GroupError::Domain("empty reference data".into()));
    }
    let n = reference.rows();
    let (mu, _) = model.encode(reference)?;
    let shifted = |j: usize, s: f64| {
        let mut z = mu.clone();
        for i in 0..n {
            z[(i, j)] += s;
        }
        z
    };
    let mut latent = 0;
    let mut membership_change = f64::NEG_INFINITY;
    for j in 0..model.latent_dim() {
        let up: f64 = model.membership_probs(&shifted(j, epsilon))?.iter().sum();
        let down: f64 = model.membership_probs(&shifted(j, -epsilon))?.iter().sum();
        let change = (up - down).abs() / n as f64;
        if change > membership_change {
            membership_change = change;
            latent = j;
        }
    }
    let up = model.reconstruct(&shifted(latent, epsilon))?;
    let down = model.reconstruct(&shifted(latent, -epsilon))?;
    let d = reference.cols();
    let mut ratios = vec![0.0; d];
    for f in 0..d {
        let col = reference.column(f);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let change: f64 = (0..n).map(|i| (up[(i, f)] - down[(i, f)]).abs()).sum::<f64>() / n as f64;
        ratios[f] = change / (2.0 * epsilon) / scale;
    }
    let mut ranking: Vec<usize> = (0..d).collect();
    ranking.sort_by(|&a, &b| ratios[b].total_cmp(&ratios[a]).then(a.cmp(&b)));
    ranking.truncate(top_k);
    Ok(Attribution {
        latent,
        membership_change,
        ratios,
        ranking,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::marginal_cp_with_noise;

    fn outputs(n: usize, rng: &mut RngStream) -> ClassifierOutput {
        let mut m = Matrix::zeros(n, 3);
        for i in 0..n {
            let a = rng.uniform() + 0.05;
            let b = rng.uniform() + 0.05;
            let c = rng.uniform() + 0.05;
            let s = a + b + c;
            m.row_mut(i).copy_from_slice(&[a / s, b / s, c / s]);
        }
        ClassifierOutput::new(m).unwrap()
    }

    #[test]
    fn group_sample_members_match_bits() {
        let g = GroupSample::from_bits(vec![true, false, true, true]);
        assert_eq!(g.members(), &[0, 2, 3]);
        assert_eq!(g.len(), 3);
    }

    #[test]
    fn saturated_and_half_memberships() {
        let mut rng = RngStream::new(1);
        let groups = sample_from_probs(&vec![1.0 - 1e-9; 500], 3, &mut rng);
        assert!(groups.iter().all(|g| g.len() >= 499));
        let n = 10_000;
        let groups = sample_from_probs(&vec![0.5; n], 5, &mut rng);
        let tol = 3.0 * (n as f64 / 4.0).sqrt();
        for g in &groups {
            assert!((g.len() as f64 - n as f64 / 2.0).abs() <= tol);
        }
        let a = sample_from_probs(&[0.3, 0.6, 0.9], 4, &mut RngStream::new(9));
        let b = sample_from_probs(&[0.3, 0.6, 0.9], 4, &mut RngStream::new(9));
        assert_eq!(a, b);
    }

    #[test]
    fn no_groups_or_full_groups_give_marginal_sets() {
        let mut rng = RngStream::new(2);
        let calib = outputs(200, &mut rng);
        let test = outputs(50, &mut rng);
        let labels: Vec<usize> = (0..200).map(|_| rng.below(3)).collect();
        let noise = ConformalNoise::draw(200, 50, &mut rng);
        let marginal = marginal_cp_with_noise(&calib, &labels, &test, 0.1, &noise).unwrap();
        let none = fareg_predict_with_groups(&calib, &labels, &test, 0.1, &[], &noise).unwrap();
        assert_eq!(none.sets, marginal);
        let full = vec![GroupSample::from_bits(vec![true; 200]); 3];
        assert_eq!(fareg_predict_with_groups(&calib, &labels, &test, 0.1, &full, &noise).unwrap().sets, marginal);
        let tiny = vec![GroupSample::from_bits((0..200).map(|i| i < 5).collect())];
        let p = fareg_predict_with_groups(&calib, &labels, &test, 0.1, &tiny, &noise).unwrap();
        assert_eq!((p.skipped, p.groups.len()), (1, 0));
        let some = sample_from_probs(&vec![0.3; 200], 5, &mut rng);
        let p = fareg_predict_with_groups(&calib, &labels, &test, 0.1, &some, &noise).unwrap();
        for (a, b) in p.sets.iter().zip(&marginal) {
            assert!(a.is_superset_of(b));
        }
    }

    #[test]
    fn attribution_with_zero_decoder_ties_by_index() {
        let mut rng = RngStream::new(3);
        let mut m = GroupModel::new(4, 2, &mut rng).unwrap();
        m.recon_net = m.recon_net.zeros_like();
        let x = Matrix::from_rows(&[vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 0.0, 1.0, 0.0]]).unwrap();
        let a = attribute_features(&m, &x, 1e-3, 4).unwrap();
        assert_eq!(a.ratios, vec![0.0; 4]);
        assert_eq!(a.ranking, vec![0, 1, 2, 3]);
    }

    #[test]
    fn attribution_finds_wired_feature() {
        use crate::diffcore::{Activation, MlpParams};
        let mut rng = RngStream::new(4);
        let mut m = GroupModel::new(5, 3, &mut rng).unwrap();
        // Membership responds only to z[1]; reconstruction of feature 3 only to z[1].
        let mut member = MlpParams::zeros(&[3, 1], Activation::Sigmoid).unwrap();
        member.layers[0].weight[(1, 0)] = 2.0;
        let mut recon = MlpParams::zeros(&[3, 5], Activation::Identity).unwrap();
        recon.layers[0].weight[(1, 3)] = 1.5;
        recon.layers[0].weight[(0, 0)] = 4.0;
        m = GroupModel::from_parts(m.mu_net, m.logvar_net, member, recon).unwrap();
        let x = crate::grouplearn::loss::standard_noise(30, 5, &mut rng);
        let a = attribute_features(&m, &x, 1e-3, 2).unwrap();
        assert_eq!(a.latent, 1);
        assert_eq!(a.ranking[0], 3);
    }
}
