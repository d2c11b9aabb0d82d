use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};
use crate::diffcore::RngStream;

/// Train / calibration / test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub calibration: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, calibration: f64, test: f64, seed: u64) -> Result<Self, DataError> {
        let s = Self {
            train,
            calibration,
            test,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let f = [self.train, self.calibration, self.test];
        if f.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(DataError::Split(format!("fractions must be positive, got {f:?}")));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(DataError::Split(format!("fractions must sum to 1, got {f:?}")));
        }
        Ok(())
    }

    /// Part sizes for `n` rows: rounded train and calibration, remainder test.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize), DataError> {
        self.validate()?;
        let a = (self.train * n as f64).round() as usize;
        let b = (self.calibration * n as f64).round() as usize;
        if a == 0 || b == 0 || a + b >= n {
            return Err(DataError::Split(format!("{n} rows cannot fill every part")));
        }
        Ok((a, b, n - a - b))
    }
}

/// Seeded shuffle then contiguous partition. `rng` is reseeded from
/// `spec.seed` through a derived stream so the partition depends only on the
/// fractions and that seed.
pub fn split(data: &Dataset, spec: &SplitSpec, rng: &RngStream) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let (a, b, _) = spec.sizes(data.len())?;
    let mut stream = rng.derive(&format!("split-{}", spec.seed));
    let perm = stream.permutation(data.len());
    Ok((
        data.subset(&perm[..a]),
        data.subset(&perm[a..a + b]),
        data.subset(&perm[a + b..]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::gen_metric_eval;

    #[test]
    fn sizes_and_disjointness() {
        let d = gen_metric_eval(100, &mut RngStream::new(1));
        let spec = SplitSpec::new(0.5, 0.25, 0.25, 3).unwrap();
        let (a, b, c) = split(&d, &spec, &RngStream::new(0)).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (50, 25, 25));
        let mut all: Vec<Vec<u64>> = [&a, &b, &c]
            .iter()
            .flat_map(|p| (0..p.len()).map(|i| p.features.row(i).iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
            .collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 100);
        let (a2, _, _) = split(&d, &spec, &RngStream::new(0)).unwrap();
        assert_eq!(a, a2);
    }

    #[test]
    fn degenerate_specs_fail() {
        assert!(SplitSpec::new(1.0, 0.0, 0.0, 0).is_err());
        assert!(SplitSpec::new(0.5, 0.3, 0.3, 0).is_err());
        let spec = SplitSpec::new(0.98, 0.01, 0.01, 0).unwrap();
        let d = gen_metric_eval(10, &mut RngStream::new(1));
        assert!(matches!(split(&d, &spec, &RngStream::new(0)), Err(DataError::Split(_))));
    }
}
