use super::GroupError;

/// Euclidean projection of `q` onto `{v in [0,1]^N : sum(v) >= min_mass}`.
///
/// The solution has the form `v_i = min(1, q_i + w/2)`. Sorting `q` in
/// descending order, the number `k` of coordinates clamped at 1 is found by
/// scanning `k` from `N - 1` down to 0 with
/// `w = 2 (min_mass - k - sum_{i >= k} q_(i)) / (N - k)`.
pub fn project_min_mass(q: &[f64], min_mass: f64) -> Result<Vec<f64>, GroupError> {
    let n = q.len();
    if q.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(GroupError::Domain("membership probabilities must lie in [0, 1]".into()));
    }
    if !min_mass.is_finite() || min_mass > n as f64 {
        return Err(GroupError::Infeasible(format!("required mass {min_mass} exceeds {n} entries")));
    }
    let total: f64 = q.iter().sum();
    if total >= min_mass {
        return Ok(q.to_vec());
    }
    let mut sorted = q.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    // suffix[k] = sum of sorted[k..]
    let mut suffix = vec![0.0; n + 1];
    for k in (0..n).rev() {
        suffix[k] = suffix[k + 1] + sorted[k];
    }
    let mut half_shift = None;
    for k in (0..n).rev() {
        let w = 2.0 * (min_mass - k as f64 - suffix[k]) / (n - k) as f64;
        let lifted_next = sorted[k] + w / 2.0;
        let clamped_ok = k == 0 || sorted[k - 1] + w / 2.0 >= 1.0;
        if w >= 0.0 && clamped_ok && lifted_next < 1.0 + 1e-15 {
            half_shift = Some(w / 2.0);
            break;
        }
    }
    let h = half_shift.unwrap_or(1.0);
    Ok(q.iter().map(|&x| (x + h).min(1.0)).collect())
}
