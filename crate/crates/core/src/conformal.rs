//! Split conformal prediction for classification with adaptive prediction
//! set (APS) scores.
//!
//! Scores follow the nonconformity convention: smaller means more
//! conforming. The threshold is the ⌈(1−α)(N+1)⌉-th smallest calibration
//! score and a label enters the set when its score does not exceed it.
//! Each test instance draws one uniform `u` that is shared by all of its
//! candidate labels, which keeps sets nested in the threshold.

use std::collections::HashMap;

use log::warn;
use thiserror::Error;

use crate::diffcore::{Matrix, RngStream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConformalError {
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("miscoverage level {0} is outside (0, 1)")]
    InvalidAlpha(f64),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("row {row} is not a probability vector")]
    NotSimplex { row: usize },
    #[error("length mismatch: {0}")]
    Length(String),
}

/// Class-probability rows emitted by a base classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierOutput {
    probs: Matrix,
}

impl ClassifierOutput {
    pub fn new(probs: Matrix) -> Result<Self, ConformalError> {
        for i in 0..probs.rows() {
            let row = probs.row(i);
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-9 || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(ConformalError::NotSimplex { row: i });
            }
        }
        Ok(Self { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.rows() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.probs.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.probs.row(i)
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn select(&self, idx: &[usize]) -> ClassifierOutput {
        ClassifierOutput {
            probs: self.probs.select_rows(idx),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Finite(f64),
    /// Every label is admitted: the requested quantile lies beyond the
    /// calibration sample.
    AllInclusive,
}

impl Threshold {
    pub fn admits(&self, score: f64) -> bool {
        match *self {
            Threshold::Finite(eta) => score <= eta,
            Threshold::AllInclusive => true,
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Threshold::Finite(eta) => eta,
            Threshold::AllInclusive => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibratedPredictor {
    pub threshold: Threshold,
    pub calibration_size: usize,
    pub alpha: f64,
}

/// A set of class labels, kept sorted and free of duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct PredictionSet {
    labels: Vec<usize>,
}

impl PredictionSet {
    pub fn new(mut labels: Vec<usize>) -> Self {
        labels.sort_unstable();
        labels.dedup();
        Self { labels }
    }

    pub fn full(classes: usize) -> Self {
        Self {
            labels: (0..classes).collect(),
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.labels.binary_search(&label).is_ok()
    }

    pub fn is_superset_of(&self, other: &PredictionSet) -> bool {
        other.labels.iter().all(|&l| self.contains(l))
    }
}

/// Labels ordered by descending probability, ties by ascending index.
fn rank_order(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order
}

/// APS nonconformity score: probability mass ranked strictly above `label`
/// plus `u · p_label`.
pub fn aps_score(probs: &[f64], label: usize, u: f64) -> Result<f64, ConformalError> {
    if label >= probs.len() {
        return Err(ConformalError::LabelOutOfRange {
            label,
            classes: probs.len(),
        });
    }
    let mut above = 0.0;
    for &c in &rank_order(probs) {
        if c == label {
            return Ok(above + u * probs[c]);
        }
        above += probs[c];
    }
    unreachable!("label present in its own ranking")
}

/// APS scores of every label for one instance, indexed by label.
pub fn aps_scores_all(probs: &[f64], u: f64) -> Vec<f64> {
    let mut scores = vec![0.0; probs.len()];
    let mut above = 0.0;
    for c in rank_order(probs) {
        scores[c] = above + u * probs[c];
        above += probs[c];
    }
    scores
}

/// Index of the finite-sample conformal quantile, `⌈(1−α)(N+1)⌉` (1-based).
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    let raw = (1.0 - alpha) * (n as f64 + 1.0);
    // absorb representation error such as 0.9 * 10 = 9.000000000000002
    (raw - 1e-9).ceil().max(1.0) as usize
}

pub fn calibrate(scores: &[f64], alpha: f64) -> Result<CalibratedPredictor, ConformalError> {
    if scores.is_empty() {
        return Err(ConformalError::EmptyCalibration);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ConformalError::InvalidAlpha(alpha));
    }
    let n = scores.len();
    let k = quantile_rank(n, alpha);
    let threshold = if k > n {
        Threshold::AllInclusive
    } else {
        let mut sorted = scores.to_vec();
        let (_, kth, _) = sorted.select_nth_unstable_by(k - 1, f64::total_cmp);
        Threshold::Finite(*kth)
    };
    Ok(CalibratedPredictor {
        threshold,
        calibration_size: n,
        alpha,
    })
}

pub fn predict_set(probs: &[f64], pred: &CalibratedPredictor, u: f64) -> PredictionSet {
    set_at_threshold(probs, pred.threshold, u)
}

pub fn set_at_threshold(probs: &[f64], threshold: Threshold, u: f64) -> PredictionSet {
    if threshold == Threshold::AllInclusive {
        return PredictionSet::full(probs.len());
    }
    let labels = aps_scores_all(probs, u)
        .into_iter()
        .enumerate()
        .filter(|&(_, s)| threshold.admits(s))
        .map(|(c, _)| c)
        .collect();
    PredictionSet { labels }
}

pub fn union_sets(sets: &[PredictionSet]) -> PredictionSet {
    PredictionSet::new(sets.iter().flat_map(|s| s.labels.iter().copied()).collect())
}

/// Randomization for one split-conformal run: one uniform per calibration
/// point, then one per test instance, drawn in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalNoise {
    pub calibration: Vec<f64>,
    pub test: Vec<f64>,
}

impl ConformalNoise {
    pub fn draw(calibration: usize, test: usize, rng: &mut RngStream) -> Self {
        let calibration = (0..calibration).map(|_| rng.uniform()).collect();
        let test = (0..test).map(|_| rng.uniform()).collect();
        Self { calibration, test }
    }

    /// `u = 1` everywhere: the non-randomized APS variant.
    pub fn deterministic(calibration: usize, test: usize) -> Self {
        Self {
            calibration: vec![1.0; calibration],
            test: vec![1.0; test],
        }
    }
}

/// Score of each calibration point's true label.
pub fn calibration_scores(
    outputs: &ClassifierOutput,
    labels: &[usize],
    noise: &[f64],
) -> Result<Vec<f64>, ConformalError> {
    if labels.len() != outputs.len() || noise.len() != outputs.len() {
        return Err(ConformalError::Length(format!(
            "{} rows, {} labels, {} noise draws",
            outputs.len(),
            labels.len(),
            noise.len()
        )));
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| aps_score(outputs.row(i), y, noise[i]))
        .collect()
}

/// The union over `thresholds` of the APS sets of every test row.
pub fn union_at_thresholds(test: &ClassifierOutput, noise: &[f64], thresholds: &[Threshold]) -> Vec<PredictionSet> {
    (0..test.len())
        .map(|i| {
            let sets: Vec<PredictionSet> = thresholds
                .iter()
                .map(|&t| set_at_threshold(test.row(i), t, noise[i]))
                .collect();
            union_sets(&sets)
        })
        .collect()
}

/// Classic split conformal prediction over the whole calibration set.
pub fn marginal_cp(
    calib: &ClassifierOutput,
    calib_labels: &[usize],
    test: &ClassifierOutput,
    alpha: f64,
    rng: &mut RngStream,
) -> Result<Vec<PredictionSet>, ConformalError> {
    let noise = ConformalNoise::draw(calib.len(), test.len(), rng);
    marginal_cp_with_noise(calib, calib_labels, test, alpha, &noise)
}

pub fn marginal_cp_with_noise(
    calib: &ClassifierOutput,
    calib_labels: &[usize],
    test: &ClassifierOutput,
    alpha: f64,
    noise: &ConformalNoise,
) -> Result<Vec<PredictionSet>, ConformalError> {
    let scores = calibration_scores(calib, calib_labels, &noise.calibration)?;
    let pred = calibrate(&scores, alpha)?;
    check_test_noise(test, noise)?;
    Ok((0..test.len())
        .map(|i| predict_set(test.row(i), &pred, noise.test[i]))
        .collect())
}

/// Per-feature equalized coverage: for every sensitive feature, recalibrate
/// on the calibration points sharing the test instance's value, then union
/// the per-feature sets.
///
/// `calib_groups[k][i]` is the value of sensitive feature `k` for
/// calibration point `i`; `test_groups` likewise for test rows.
pub fn partial_cp(
    calib: &ClassifierOutput,
    calib_labels: &[usize],
    calib_groups: &[Vec<usize>],
    test: &ClassifierOutput,
    test_groups: &[Vec<usize>],
    alpha: f64,
    rng: &mut RngStream,
) -> Result<Vec<PredictionSet>, ConformalError> {
    let noise = ConformalNoise::draw(calib.len(), test.len(), rng);
    partial_cp_with_noise(calib, calib_labels, calib_groups, test, test_groups, alpha, &noise)
}

pub fn partial_cp_with_noise(
    calib: &ClassifierOutput,
    calib_labels: &[usize],
    calib_groups: &[Vec<usize>],
    test: &ClassifierOutput,
    test_groups: &[Vec<usize>],
    alpha: f64,
    noise: &ConformalNoise,
) -> Result<Vec<PredictionSet>, ConformalError> {
    if calib_groups.len() != test_groups.len() {
        return Err(ConformalError::Length(format!(
            "{} calibration features vs {} test features",
            calib_groups.len(),
            test_groups.len()
        )));
    }
    check_test_noise(test, noise)?;
    let scores = calibration_scores(calib, calib_labels, &noise.calibration)?;
    let marginal = calibrate(&scores, alpha)?.threshold;
    if calib_groups.is_empty() {
        return Ok(union_at_thresholds(test, &noise.test, &[marginal]));
    }

    let mut per_feature: Vec<HashMap<usize, Threshold>> = Vec::with_capacity(calib_groups.len());
    for (k, values) in calib_groups.iter().enumerate() {
        if values.len() != calib.len() || test_groups[k].len() != test.len() {
            return Err(ConformalError::Length(format!("sensitive feature {k} misaligned")));
        }
        let mut buckets: HashMap<usize, Vec<f64>> = HashMap::new();
        for (i, &v) in values.iter().enumerate() {
            buckets.entry(v).or_default().push(scores[i]);
        }
        let mut thresholds = HashMap::with_capacity(buckets.len());
        for (v, s) in buckets {
            thresholds.insert(v, calibrate(&s, alpha)?.threshold);
        }
        per_feature.push(thresholds);
    }

    let mut sets = Vec::with_capacity(test.len());
    for i in 0..test.len() {
        let thresholds: Vec<Threshold> = per_feature
            .iter()
            .enumerate()
            .map(|(k, map)| {
                let v = test_groups[k][i];
                *map.get(&v).unwrap_or_else(|| {
                    warn!("sensitive feature {k} value {v} absent from calibration; using marginal threshold");
                    &marginal
                })
            })
            .collect();
        let per: Vec<PredictionSet> = thresholds
            .iter()
            .map(|&t| set_at_threshold(test.row(i), t, noise.test[i]))
            .collect();
        sets.push(union_sets(&per));
    }
    Ok(sets)
}

fn check_test_noise(test: &ClassifierOutput, noise: &ConformalNoise) -> Result<(), ConformalError> {
    if noise.test.len() != test.len() {
        return Err(ConformalError::Length(format!(
            "{} test rows, {} noise draws",
            test.len(),
            noise.test.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn output(rows: &[Vec<f64>]) -> ClassifierOutput {
        ClassifierOutput::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn aps_examples() {
        assert_eq!(aps_score(&[1.0, 0.0, 0.0], 0, 0.0).unwrap(), 0.0);
        let third = 1.0 / 3.0;
        assert!((aps_score(&[third, third, third], 2, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((aps_score(&[0.5, 0.3, 0.2], 1, 0.5).unwrap() - 0.65).abs() < 1e-12);
        assert!(matches!(
            aps_score(&[0.5, 0.5], 2, 0.0),
            Err(ConformalError::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn all_scores_agree_with_single_label_scores() {
        let p = [0.1, 0.4, 0.2, 0.3];
        let all = aps_scores_all(&p, 0.37);
        for (c, s) in all.iter().enumerate() {
            assert_eq!(*s, aps_score(&p, c, 0.37).unwrap());
        }
    }

    #[test]
    fn calibration_index_arithmetic() {
        let nine: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        assert_eq!(calibrate(&nine, 0.1).unwrap().threshold, Threshold::Finite(0.9));

        let nineteen: Vec<f64> = (1..=19).rev().map(|i| i as f64).collect();
        assert_eq!(quantile_rank(19, 0.1), 18);
        assert_eq!(calibrate(&nineteen, 0.1).unwrap().threshold, Threshold::Finite(18.0));

        let five = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert_eq!(calibrate(&five, 0.05).unwrap().threshold, Threshold::AllInclusive);

        assert_eq!(calibrate(&[], 0.1), Err(ConformalError::EmptyCalibration));
        assert!(matches!(calibrate(&[0.1], 1.0), Err(ConformalError::InvalidAlpha(_))));
    }

    #[test]
    fn prediction_set_examples() {
        let sentinel = CalibratedPredictor {
            threshold: Threshold::AllInclusive,
            calibration_size: 5,
            alpha: 0.05,
        };
        assert_eq!(predict_set(&[0.7, 0.2, 0.1], &sentinel, 0.3).labels(), &[0, 1, 2]);

        let zero = CalibratedPredictor {
            threshold: Threshold::Finite(0.0),
            calibration_size: 10,
            alpha: 0.1,
        };
        assert_eq!(predict_set(&[0.2, 0.7, 0.1], &zero, 0.0).labels(), &[1]);

        let point6 = CalibratedPredictor {
            threshold: Threshold::Finite(0.6),
            calibration_size: 10,
            alpha: 0.1,
        };
        assert_eq!(predict_set(&[0.5, 0.3, 0.2], &point6, 0.0).labels(), &[0, 1]);
    }

    #[test]
    fn union_examples() {
        let a = PredictionSet::new(vec![0]);
        assert_eq!(union_sets(&[a.clone(), PredictionSet::default()]), a);
        let u = union_sets(&[PredictionSet::new(vec![0, 1]), PredictionSet::new(vec![1, 2])]);
        assert_eq!(u.labels(), &[0, 1, 2]);
        let b = PredictionSet::new(vec![2, 4]);
        assert_eq!(union_sets(&vec![b.clone(); 5]), b);
        assert!(union_sets(&[]).is_empty());
    }

    #[test]
    fn rejects_non_simplex_rows() {
        let m = Matrix::from_rows(&[vec![0.5, 0.6]]).unwrap();
        assert_eq!(ClassifierOutput::new(m), Err(ConformalError::NotSimplex { row: 0 }));
    }

    #[test]
    fn single_valued_partial_equals_marginal() {
        let mut rng = RngStream::new(8);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| {
                let a = rng.uniform();
                let b = rng.uniform() * (1.0 - a);
                vec![a, b, 1.0 - a - b]
            })
            .collect();
        let labels: Vec<usize> = (0..40).map(|_| rng.below(3)).collect();
        let cal = output(&rows[..40]);
        let test = output(&rows[40..]);
        let noise = ConformalNoise::draw(40, 20, &mut rng);
        let m = marginal_cp_with_noise(&cal, &labels, &test, 0.1, &noise).unwrap();
        let p = partial_cp_with_noise(&cal, &labels, &[vec![0; 40]], &test, &[vec![0; 20]], 0.1, &noise).unwrap();
        assert_eq!(m, p);
    }

    #[test]
    fn calibration_order_does_not_matter() {
        let mut rng = RngStream::new(2);
        let scores: Vec<f64> = (0..50).map(|_| rng.uniform()).collect();
        let mut shuffled = scores.clone();
        rng.shuffle(&mut shuffled);
        assert_eq!(calibrate(&scores, 0.1).unwrap(), calibrate(&shuffled, 0.1).unwrap());
    }
}
