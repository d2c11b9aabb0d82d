use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::conformal::ClassifierOutput;
use crate::diffcore::{
    adam_step, backprop_tape, forward_with_tape, mlp_forward, softmax_in_place, Activation, AdamState, Matrix,
    MlpGrads, MlpParams, RngStream, DEFAULT_HIDDEN,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN.to_vec(),
            epochs: 200,
            learning_rate: 0.001,
            batch_size: 128,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.epochs == 0 || self.batch_size == 0 || self.hidden.contains(&0) {
            return Err(HarnessError::Config("classifier epochs, batch_size and widths must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(HarnessError::Config("classifier learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Softmax MLP emitting class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseClassifier {
    pub params: MlpParams,
}

impl BaseClassifier {
    pub fn predict(&self, x: &Matrix) -> Result<ClassifierOutput, HarnessError> {
        let probs = mlp_forward(&self.params, x).map_err(|e| HarnessError::Training(e.to_string()))?;
        ClassifierOutput::new(renormalize(probs)).map_err(|e| HarnessError::Training(e.to_string()))
    }

    pub fn accuracy(&self, x: &Matrix, labels: &[usize]) -> Result<f64, HarnessError> {
        let out = self.predict(x)?;
        let hits = (0..out.len())
            .filter(|&i| {
                let row = out.row(i);
                let best = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).unwrap();
                best == labels[i]
            })
            .count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }
}

/// Removes the last bits of rounding drift so rows pass strict simplex checks.
fn renormalize(mut p: Matrix) -> Matrix {
    for i in 0..p.rows() {
        let row = p.row_mut(i);
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    p
}

/// Mean cross-entropy of a softmax network and its parameter gradients.
/// The backward pass starts from the logits, `(p - onehot(y)) / n`.
pub fn cross_entropy_loss_grad(
    params: &MlpParams,
    x: &Matrix,
    labels: &[usize],
) -> Result<(f64, MlpGrads), HarnessError> {
    let train_err = |e: crate::diffcore::DiffError| HarnessError::Training(e.to_string());
    let mut logit_net = params.clone();
    logit_net.layers.last_mut().expect("classifier has layers").activation = Activation::Identity;
    let (logits, tape) = forward_with_tape(&logit_net, x).map_err(train_err)?;
    let n = x.rows();
    let k = logits.cols();
    if labels.len() != n || labels.iter().any(|&y| y >= k) {
        return Err(HarnessError::Training("labels do not match the batch".into()));
    }
    let mut up = logits.clone();
    let mut loss = 0.0;
    for i in 0..n {
        let row = up.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += (lse - row[labels[i]]) / n as f64;
        softmax_in_place(row);
        row[labels[i]] -= 1.0;
        row.iter_mut().for_each(|v| *v /= n as f64);
    }
    if !loss.is_finite() {
        return Err(HarnessError::Training("non-finite classifier loss".into()));
    }
    let (grads, _) = backprop_tape(&logit_net, &tape, &up).map_err(train_err)?;
    let mut grads = grads;
    grads.layers.last_mut().expect("classifier has layers").activation = Activation::Softmax;
    Ok((loss, grads))
}

pub fn train_base_classifier(
    x: &Matrix,
    labels: &[usize],
    num_classes: usize,
    config: &ClassifierConfig,
    rng: &mut RngStream,
) -> Result<BaseClassifier, HarnessError> {
    config.validate()?;
    if x.rows() == 0 {
        return Err(HarnessError::Data("empty classifier training set".into()));
    }
    let mut widths = vec![x.cols()];
    widths.extend_from_slice(&config.hidden);
    widths.push(num_classes);
    let mut params = MlpParams::new(&widths, Activation::Softmax, &mut rng.derive("init"))
        .map_err(|e| HarnessError::Training(e.to_string()))?;
    let mut order_rng = rng.derive("batches");
    let mut adam = AdamState::new(&params, config.learning_rate);
    for _ in 0..config.epochs {
        let order = order_rng.permutation(x.rows());
        for chunk in order.chunks(config.batch_size) {
            let xb = x.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (_, g) = cross_entropy_loss_grad(&params, &xb, &yb)?;
            adam_step(&mut params, &g, &mut adam).map_err(|e| HarnessError::Training(e.to_string()))?;
        }
    }
    Ok(BaseClassifier { params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::grad_check;

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = RngStream::new(1);
        let params = MlpParams::new(&[3, 6, 4], Activation::Softmax, &mut rng).unwrap();
        let x = Matrix::from_vec(8, 3, (0..24).map(|_| rng.normal()).collect()).unwrap();
        let y: Vec<usize> = (0..8).map(|i| i % 4).collect();
        let err = grad_check(
            |flat| {
                let mut p = params.clone();
                p.assign_flat(flat).unwrap();
                let (l, g) = cross_entropy_loss_grad(&p, &x, &y).unwrap();
                (l, g.flatten())
            },
            &params.flatten(),
        );
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn separable_data_is_learned() {
        let mut rng = RngStream::new(2);
        let n = 200;
        let mut x = Matrix::zeros(n, 2);
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            x[(i, 0)] = rng.uniform() + if c == 1 { 1.5 } else { 0.0 };
            x[(i, 1)] = rng.uniform();
            y.push(c);
        }
        let cfg = ClassifierConfig {
            epochs: 60,
            learning_rate: 0.01,
            ..ClassifierConfig::default()
        };
        let clf = train_base_classifier(&x, &y, 2, &cfg, &mut RngStream::new(3)).unwrap();
        assert!(clf.accuracy(&x, &y).unwrap() >= 0.95);
        let again = train_base_classifier(&x, &y, 2, &cfg, &mut RngStream::new(3)).unwrap();
        assert_eq!(clf, again);
        let out = clf.predict(&x).unwrap();
        for i in 0..n {
            assert!((out.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
