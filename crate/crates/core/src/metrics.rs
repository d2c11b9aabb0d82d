//! Coverage and efficiency metrics, and worst-slab coverage audits with
//! linear or quadratic projections.
//!
//! A slab `[a, b]` on a projection `t = π(x)` contains every point with
//! `a <= t <= b`, so tied projections always enter or leave together.
//! [`worst_slab`] finds the minimum-coverage slab of sufficient mass exactly:
//! Dinkelbach iteration on the ratio `covered / mass`, each step an `O(n)`
//! prefix-sum sweep in integer arithmetic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::PredictionSet;
use crate::diffcore::{Matrix, RngStream};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("length mismatch: {0}")]
    Length(String),
}

fn check_len(what: &str, a: usize, b: usize) -> Result<(), MetricError> {
    if a != b {
        return Err(MetricError::Length(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

/// Per-instance indicator that the true label lies in its set.
pub fn covered_bits(sets: &[PredictionSet], labels: &[usize]) -> Result<Vec<bool>, MetricError> {
    check_len("sets vs labels", sets.len(), labels.len())?;
    Ok(sets.iter().zip(labels).map(|(s, &y)| s.contains(y)).collect())
}

/// Coverage restricted to `mask`.
pub fn group_coverage(sets: &[PredictionSet], labels: &[usize], mask: &[bool]) -> Result<f64, MetricError> {
    check_len("mask vs labels", mask.len(), labels.len())?;
    let bits = covered_bits(sets, labels)?;
    let (hit, total) = bits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0usize, 0usize), |(h, t), (&c, _)| (h + usize::from(c), t + 1));
    if total == 0 {
        return Err(MetricError::Domain("mask selects no instances".into()));
    }
    Ok(hit as f64 / total as f64)
}

pub fn average_coverage(sets: &[PredictionSet], labels: &[usize]) -> Result<f64, MetricError> {
    group_coverage(sets, labels, &vec![true; labels.len()])
}

pub fn average_size(sets: &[PredictionSet]) -> Result<f64, MetricError> {
    if sets.is_empty() {
        return Err(MetricError::Domain("no prediction sets".into()));
    }
    Ok(sets.iter().map(|s| s.len()).sum::<usize>() as f64 / sets.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Linear,
    Quadratic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlabProbe {
    pub kind: ProbeKind,
    pub v: Vec<f64>,
    /// Symmetric `d x d`; `None` for linear probes.
    pub w: Option<Matrix>,
    pub delta: f64,
}

fn check_delta(delta: f64) -> Result<(), MetricError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(MetricError::Domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

impl SlabProbe {
    pub fn linear(v: Vec<f64>, delta: f64) -> Result<Self, MetricError> {
        check_delta(delta)?;
        Ok(Self {
            kind: ProbeKind::Linear,
            v,
            w: None,
            delta,
        })
    }

    /// `w` is replaced by `(w + wᵀ) / 2`.
    pub fn quadratic(w: Matrix, v: Vec<f64>, delta: f64) -> Result<Self, MetricError> {
        check_delta(delta)?;
        let d = v.len();
        if w.shape() != (d, d) {
            return Err(MetricError::Length(format!("W is {:?}, v has {d} entries", w.shape())));
        }
        let mut sym = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                sym[(i, j)] = 0.5 * (w[(i, j)] + w[(j, i)]);
            }
        }
        Ok(Self {
            kind: ProbeKind::Quadratic,
            v,
            w: Some(sym),
            delta,
        })
    }

    /// Linear: `v` with entries on `[-1, 1]`, unit-normalized. Quadratic:
    /// `W` and `v` entries on `[-1, 1]`, `W` symmetrized.
    pub fn random(kind: ProbeKind, d: usize, delta: f64, rng: &mut RngStream) -> Result<Self, MetricError> {
        match kind {
            ProbeKind::Linear => {
                let mut v: Vec<f64> = (0..d).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    v.iter_mut().for_each(|x| *x /= norm);
                }
                Self::linear(v, delta)
            }
            ProbeKind::Quadratic => {
                let w: Vec<f64> = (0..d * d).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
                let v: Vec<f64> = (0..d).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
                let w = Matrix::from_vec(d, d, w).map_err(|e| MetricError::Length(e.to_string()))?;
                Self::quadratic(w, v, delta)
            }
        }
    }

    pub fn project(&self, features: &Matrix) -> Result<Vec<f64>, MetricError> {
        let d = self.v.len();
        if features.cols() != d {
            return Err(MetricError::Length(format!("probe dim {d}, features have {}", features.cols())));
        }
        let xw = match &self.w {
            Some(w) => Some(features.matmul(w).map_err(|e| MetricError::Length(e.to_string()))?),
            None => None,
        };
        Ok((0..features.rows())
            .map(|i| {
                let x = features.row(i);
                let lin: f64 = x.iter().zip(&self.v).map(|(a, b)| a * b).sum();
                let quad: f64 = xw.as_ref().map_or(0.0, |m| m.row(i).iter().zip(x).map(|(a, b)| a * b).sum());
                lin + quad
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlabResult {
    /// `a <= b`; equal only when every selected projection coincides.
    pub a: f64,
    pub b: f64,
    pub coverage: f64,
    pub mass: f64,
}

/// Smallest integer count whose fraction of `n` reaches `delta`.
fn min_count(n: usize, delta: f64) -> Result<usize, MetricError> {
    if !(delta > 0.0) || delta > 1.0 || (n as f64) * delta < 1.0 - 1e-12 {
        return Err(MetricError::Domain(format!("delta {delta} infeasible for n = {n}")));
    }
    let mut l = ((delta * n as f64).ceil() as usize).clamp(1, n);
    while l > 1 && (l - 1) as f64 / n as f64 >= delta {
        l -= 1;
    }
    while (l as f64) / (n as f64) < delta && l < n {
        l += 1;
    }
    Ok(l)
}

struct Blocks {
    value: Vec<f64>,
    mass: Vec<i64>,
    covered: Vec<i64>,
}

fn blocks(t: &[f64], covered: &[bool]) -> Blocks {
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.sort_by(|&i, &j| t[i].total_cmp(&t[j]));
    let mut b = Blocks {
        value: Vec::new(),
        mass: Vec::new(),
        covered: Vec::new(),
    };
    for &i in &order {
        if b.value.last() == Some(&t[i]) {
            *b.mass.last_mut().unwrap() += 1;
            *b.covered.last_mut().unwrap() += i64::from(covered[i]);
        } else {
            b.value.push(t[i]);
            b.mass.push(1);
            b.covered.push(i64::from(covered[i]));
        }
    }
    b
}

/// Block window `[lo, hi]` minimizing `q*S - p*M` subject to `M >= l`.
fn best_window(b: &Blocks, p: i64, q: i64, l: i64) -> (i128, usize, usize) {
    let k = b.value.len();
    let mut pm = vec![0i64; k + 1];
    let mut g = vec![0i128; k + 1];
    for i in 0..k {
        pm[i + 1] = pm[i] + b.mass[i];
        g[i + 1] = g[i] + q as i128 * b.covered[i] as i128 - p as i128 * b.mass[i] as i128;
    }
    let mut best = (i128::MAX, 0, 0);
    let mut ptr = 0usize;
    let mut max_g = (i128::MIN, 0usize);
    for j in 1..=k {
        while ptr < j && pm[ptr] <= pm[j] - l {
            if g[ptr] > max_g.0 {
                max_g = (g[ptr], ptr);
            }
            ptr += 1;
        }
        if max_g.0 != i128::MIN {
            let val = g[j] - max_g.0;
            if val < best.0 {
                best = (val, max_g.1, j - 1);
            }
        }
    }
    best
}

fn window_result(b: &Blocks, lo: usize, hi: usize, n: usize) -> (i64, i64, SlabResult) {
    let s: i64 = b.covered[lo..=hi].iter().sum();
    let m: i64 = b.mass[lo..=hi].iter().sum();
    (
        s,
        m,
        SlabResult {
            a: b.value[lo],
            b: b.value[hi],
            coverage: s as f64 / m as f64,
            mass: m as f64 / n as f64,
        },
    )
}

/// Minimum-coverage slab on precomputed projections.
pub fn worst_slab_on_projection(t: &[f64], covered: &[bool], delta: f64) -> Result<SlabResult, MetricError> {
    check_len("projections vs covered bits", t.len(), covered.len())?;
    if t.is_empty() {
        return Err(MetricError::Domain("no instances".into()));
    }
    if t.iter().any(|x| !x.is_finite()) {
        return Err(MetricError::Domain("non-finite projection".into()));
    }
    let n = t.len();
    let l = min_count(n, delta)? as i64;
    let b = blocks(t, covered);
    let (mut s, mut m, mut res) = window_result(&b, 0, b.value.len() - 1, n);
    loop {
        let (val, lo, hi) = best_window(&b, s, m, l);
        if val >= 0 {
            return Ok(res);
        }
        (s, m, res) = window_result(&b, lo, hi, n);
    }
}

pub fn worst_slab(probe: &SlabProbe, features: &Matrix, covered: &[bool]) -> Result<SlabResult, MetricError> {
    let t = probe.project(features)?;
    worst_slab_on_projection(&t, covered, probe.delta)
}

/// Exhaustive reference over all feasible block windows.
pub fn worst_slab_exhaustive(t: &[f64], covered: &[bool], delta: f64) -> Result<SlabResult, MetricError> {
    check_len("projections vs covered bits", t.len(), covered.len())?;
    if t.is_empty() {
        return Err(MetricError::Domain("no instances".into()));
    }
    let n = t.len();
    let l = min_count(n, delta)? as i64;
    let b = blocks(t, covered);
    let mut best: Option<(i64, i64, SlabResult)> = None;
    for lo in 0..b.value.len() {
        for hi in lo..b.value.len() {
            let (s, m, r) = window_result(&b, lo, hi, n);
            if m < l {
                continue;
            }
            if best.as_ref().is_none_or(|(bs, bm, _)| s * bm < bs * m) {
                best = Some((s, m, r));
            }
        }
    }
    Ok(best.expect("whole range is always feasible").2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WscAudit {
    pub min_coverage: f64,
    /// Worst-slab coverage per probe, in draw order.
    pub probe_coverages: Vec<f64>,
}

/// Draws `n_probes` random probes and reports the worst slab coverage.
pub fn wsc_audit(
    sets: &[PredictionSet],
    labels: &[usize],
    features: &Matrix,
    delta: f64,
    n_probes: usize,
    kind: ProbeKind,
    rng: &mut RngStream,
) -> Result<WscAudit, MetricError> {
    if n_probes == 0 {
        return Err(MetricError::Domain("n_probes must be at least 1".into()));
    }
    check_len("features vs labels", features.rows(), labels.len())?;
    let bits = covered_bits(sets, labels)?;
    let probes = (0..n_probes)
        .map(|_| SlabProbe::random(kind, features.cols(), delta, rng))
        .collect::<Result<Vec<_>, _>>()?;
    audit_with_probes(&probes, features, &bits)
}

/// Worst-slab coverage for a fixed probe list.
pub fn audit_with_probes(probes: &[SlabProbe], features: &Matrix, covered: &[bool]) -> Result<WscAudit, MetricError> {
    if probes.is_empty() {
        return Err(MetricError::Domain("no probes".into()));
    }
    let probe_coverages = probes
        .iter()
        .map(|p| worst_slab(p, features, covered).map(|r| r.coverage))
        .collect::<Result<Vec<_>, _>>()?;
    let min_coverage = probe_coverages.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(WscAudit {
        min_coverage,
        probe_coverages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sets_of(v: &[&[usize]]) -> Vec<PredictionSet> {
        v.iter().map(|s| PredictionSet::new(s.to_vec())).collect()
    }

    #[test]
    fn coverage_and_size_examples() {
        let sets = sets_of(&[&[0], &[1], &[2]]);
        let g = group_coverage(&sets, &[0, 0, 2], &[true; 3]).unwrap();
        assert!((g - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(group_coverage(&sets, &[0, 0, 2], &[false, true, false]).unwrap(), 0.0);
        assert!(group_coverage(&sets, &[0, 0, 2], &[false; 3]).is_err());
        let full: Vec<PredictionSet> = (0..4).map(|_| PredictionSet::full(6)).collect();
        assert_eq!(average_coverage(&full, &[5, 0, 1, 2]).unwrap(), 1.0);
        assert_eq!(average_size(&full).unwrap(), 6.0);
        let empty = sets_of(&[&[], &[]]);
        assert_eq!(average_coverage(&empty, &[0, 1]).unwrap(), 0.0);
        assert_eq!(average_size(&sets_of(&[&[0], &[0, 1], &[0, 1, 2]])).unwrap(), 2.0);
        assert!(average_size(&[]).is_err());
    }

    #[test]
    fn worst_slab_small_example() {
        let r = worst_slab_on_projection(&[1.0, 2.0, 3.0, 4.0], &[true, true, false, false], 0.5).unwrap();
        assert_eq!(r.coverage, 0.0);
        assert_eq!((r.a, r.b), (3.0, 4.0));
        assert_eq!(r.mass, 0.5);
    }

    #[test]
    fn constant_probe_selects_everything() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let p = SlabProbe::quadratic(Matrix::zeros(2, 2), vec![0.0; 2], 0.25).unwrap();
        let r = worst_slab(&p, &x, &[true, false, true, true]).unwrap();
        assert_eq!(r.mass, 1.0);
        assert_eq!(r.coverage, 0.75);
    }

    #[test]
    fn infeasible_delta_is_rejected() {
        assert!(worst_slab_on_projection(&[1.0, 2.0], &[true, true], 0.4).is_err());
        assert!(worst_slab_on_projection(&[1.0, 2.0], &[true, true], 1.5).is_err());
        assert!(SlabProbe::linear(vec![1.0], 0.0).is_err());
    }

    #[test]
    fn quadratic_is_symmetrized_and_projects() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, -1.0]]).unwrap();
        let p = SlabProbe::quadratic(w, vec![1.0, 0.0], 0.5).unwrap();
        let ws = p.w.as_ref().unwrap();
        assert_eq!(ws[(0, 1)], ws[(1, 0)]);
        let x = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(p.project(&x).unwrap(), vec![1.0 + 2.0 - 1.0 + 1.0]);
    }

    #[test]
    fn random_linear_probe_is_unit() {
        let mut rng = RngStream::new(3);
        let p = SlabProbe::random(ProbeKind::Linear, 10, 0.5, &mut rng).unwrap();
        let norm: f64 = p.v.iter().map(|x| x * x).sum::<f64>();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn delta_monotone_on_fixed_draws() {
        let mut rng = RngStream::new(8);
        let n = 300;
        let t: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let c: Vec<bool> = t.iter().map(|&x| rng.bernoulli(if x < 0.3 { 0.5 } else { 0.95 })).collect();
        let mut prev = 0.0;
        for k in 1..=9 {
            let r = worst_slab_on_projection(&t, &c, k as f64 / 10.0).unwrap();
            assert!(r.coverage >= prev - 1e-15);
            prev = r.coverage;
        }
    }

    proptest! {
        #[test]
        fn matches_exhaustive(
            raw in prop::collection::vec((0u8..12, any::<bool>()), 1..120),
            dk in 1usize..20,
        ) {
            let t: Vec<f64> = raw.iter().map(|r| r.0 as f64).collect();
            let c: Vec<bool> = raw.iter().map(|r| r.1).collect();
            let n = t.len();
            let delta = (dk as f64 / 20.0).max(1.0 / n as f64);
            let fast = worst_slab_on_projection(&t, &c, delta).unwrap();
            let slow = worst_slab_exhaustive(&t, &c, delta).unwrap();
            prop_assert!((fast.coverage - slow.coverage).abs() < 1e-12);
            prop_assert!(fast.mass >= delta - 1e-12);
            prop_assert!(fast.a <= fast.b);
        }

        #[test]
        fn translation_invariant(
            raw in prop::collection::vec((-1000i32..1000, any::<bool>()), 4..80),
            shift in -50i32..50,
        ) {
            let t: Vec<f64> = raw.iter().map(|r| r.0 as f64).collect();
            let s: Vec<f64> = t.iter().map(|x| x + shift as f64).collect();
            let c: Vec<bool> = raw.iter().map(|r| r.1).collect();
            let a = worst_slab_on_projection(&t, &c, 0.3).unwrap();
            let b = worst_slab_on_projection(&s, &c, 0.3).unwrap();
            prop_assert_eq!(a.coverage, b.coverage);
            prop_assert_eq!(a.mass, b.mass);
            prop_assert_eq!(a.a + shift as f64, b.a);
        }
    }
}
