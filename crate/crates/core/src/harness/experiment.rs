use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::classifier::{train_base_classifier, BaseClassifier};
use super::config::{AuditFeatures, DatasetKind, ExperimentConfig, Method, NURSERY_PATH_ENV};
use super::HarnessError;
use crate::conformal::{
    calibrate, calibration_scores, marginal_cp_with_noise, partial_cp_with_noise, predict_set, ClassifierOutput,
    ConformalNoise, PredictionSet,
};
use crate::datagen::{
    corrupt_group, gen_eight_subgroup, gen_metric_eval, gen_synthetic_xnor, load_nursery, nursery_surrogate, split,
    Dataset, SplitSpec,
};
use crate::diffcore::{Matrix, RngStream};
use crate::grouplearn::{
    fareg_predict_with_groups, sample_groups, train_group_model, FaregPrediction, TrainConfig, TrainedGroupModel,
};
use crate::metrics::{audit_with_probes, average_coverage, average_size, group_coverage, ProbeKind, SlabProbe};

/// Outcome of one method on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub seed: u64,
    /// Coverage on the ground-truth protected group; NaN without one.
    pub group_coverage: f64,
    pub wsc: f64,
    pub wsc_plus: f64,
    pub average_coverage: f64,
    pub average_size: f64,
    pub seconds: Option<f64>,
}

/// Worst-slab coverage of every probe, for CDF plots.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRecord {
    pub method: String,
    pub seed: u64,
    pub kind: ProbeKind,
    pub coverages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub runs: usize,
    pub group_coverage: (f64, f64),
    pub wsc: (f64, f64),
    pub wsc_plus: (f64, f64),
    pub average_coverage: (f64, f64),
    pub average_size: (f64, f64),
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutcome {
    pub records: Vec<RunRecord>,
    pub probes: Vec<ProbeRecord>,
    pub aggregates: Vec<Aggregate>,
    pub failures: Vec<(u64, String)>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Aggregates per method in `methods` order; records are sorted by seed
/// first, so the result does not depend on execution order.
pub fn aggregate(records: &[RunRecord], methods: &[Method]) -> Vec<Aggregate> {
    methods
        .iter()
        .filter_map(|m| {
            let mut rs: Vec<&RunRecord> = records.iter().filter(|r| r.method == m.name()).collect();
            if rs.is_empty() {
                return None;
            }
            rs.sort_by_key(|r| r.seed);
            let col = |f: fn(&RunRecord) -> f64| mean_std(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            Some(Aggregate {
                method: m.name().to_string(),
                runs: rs.len(),
                group_coverage: col(|r| r.group_coverage),
                wsc: col(|r| r.wsc),
                wsc_plus: col(|r| r.wsc_plus),
                average_coverage: col(|r| r.average_coverage),
                average_size: col(|r| r.average_size),
            })
        })
        .collect()
}

/// Full dataset of `n + test_n` rows for one seed.
pub fn build_dataset(config: &ExperimentConfig, rng: &RngStream) -> Result<Dataset, HarnessError> {
    let d = &config.dataset;
    let total = d.n + d.test_n;
    let mut gen = rng.derive("data");
    let data = match d.kind {
        DatasetKind::Xnor => gen_synthetic_xnor(total, &mut gen),
        DatasetKind::EightSubgroup => gen_eight_subgroup(total, &mut gen),
        DatasetKind::MetricEval => gen_metric_eval(total, &mut gen),
        DatasetKind::Nursery | DatasetKind::NurserySurrogate => {
            let full = if d.kind == DatasetKind::Nursery {
                let path = match &d.path {
                    Some(p) => p.clone(),
                    None => std::env::var_os(NURSERY_PATH_ENV).map(Into::into).ok_or_else(|| {
                        HarnessError::Data(format!("nursery needs dataset.path or {NURSERY_PATH_ENV}"))
                    })?,
                };
                load_nursery(&path)?
            } else {
                nursery_surrogate()
            };
            let full = if d.corrupt {
                corrupt_group(&full, &mut rng.derive("corrupt"))?
            } else {
                full
            };
            if total > full.len() {
                return Err(HarnessError::Data(format!("requested {total} rows from {}", full.len())));
            }
            let perm = gen.permutation(full.len());
            full.subset(&perm[..total])
        }
    };
    Ok(data)
}

pub struct Splits {
    pub train: Dataset,
    pub calib: Dataset,
    pub test: Dataset,
}

pub fn split_dataset(config: &ExperimentConfig, data: &Dataset, rng: &RngStream) -> Result<Splits, HarnessError> {
    let d = &config.dataset;
    let total = data.len() as f64;
    let n_train = (d.n as f64 * d.train_fraction).round();
    let spec = SplitSpec {
        train: n_train / total,
        calibration: (d.n as f64 - n_train) / total,
        test: d.test_n as f64 / total,
        seed: 0,
    };
    let (train, calib, test) = split(data, &spec, rng)?;
    Ok(Splits { train, calib, test })
}

/// Everything a seed needs before any method runs.
pub struct Prepared {
    pub seed: u64,
    pub rng: RngStream,
    pub splits: Splits,
    pub classifier: BaseClassifier,
    pub calib_x: Matrix,
    pub test_x: Matrix,
    pub calib_out: ClassifierOutput,
    pub test_out: ClassifierOutput,
    pub noise: ConformalNoise,
}

pub fn prepare(config: &ExperimentConfig, seed: u64) -> Result<Prepared, HarnessError> {
    let rng = RngStream::new(seed);
    let data = build_dataset(config, &rng)?;
    let splits = split_dataset(config, &data, &rng)?;
    let enc = config.dataset.encoding;
    let train_x = splits.train.encode(enc);
    let classifier = train_base_classifier(
        &train_x,
        &splits.train.labels,
        splits.train.num_classes,
        &config.classifier,
        &mut rng.derive("classifier"),
    )?;
    let calib_x = splits.calib.encode(enc);
    let test_x = splits.test.encode(enc);
    let calib_out = classifier.predict(&calib_x)?;
    let test_out = classifier.predict(&test_x)?;
    let noise = ConformalNoise::draw(calib_out.len(), test_out.len(), &mut rng.derive("cp-noise"));
    Ok(Prepared {
        seed,
        rng,
        splits,
        classifier,
        calib_x,
        test_x,
        calib_out,
        test_out,
        noise,
    })
}

/// Half-split of the calibration set for group learning: training and
/// validation index lists.
pub fn fareg_halves(p: &Prepared) -> (Vec<usize>, Vec<usize>) {
    let n = p.calib_out.len();
    let perm = p.rng.derive("fareg-split").permutation(n);
    let half = n / 2;
    (perm[..half].to_vec(), perm[half..].to_vec())
}

/// Covered bits on both halves against the marginal threshold calibrated on
/// the training half.
pub fn fareg_covered_bits(
    p: &Prepared,
    alpha: f64,
    train_idx: &[usize],
    val_idx: &[usize],
) -> Result<(Vec<bool>, Vec<bool>), HarnessError> {
    let scores_for = |idx: &[usize]| {
        calibration_scores(
            &p.calib_out.select(idx),
            &idx.iter().map(|&i| p.splits.calib.labels[i]).collect::<Vec<_>>(),
            &idx.iter().map(|&i| p.noise.calibration[i]).collect::<Vec<_>>(),
        )
    };
    let train_scores = scores_for(train_idx)?;
    let pred = calibrate(&train_scores, alpha)?;
    let bits = |idx: &[usize]| -> Vec<bool> {
        idx.iter()
            .map(|&i| predict_set(p.calib_out.row(i), &pred, p.noise.calibration[i]).contains(p.splits.calib.labels[i]))
            .collect()
    };
    Ok((bits(train_idx), bits(val_idx)))
}

pub fn train_fareg(p: &Prepared, config: &ExperimentConfig, tc: &TrainConfig) -> Result<TrainedGroupModel, HarnessError> {
    let (ti, vi) = fareg_halves(p);
    let (tc_bits, vc_bits) = fareg_covered_bits(p, config.alpha, &ti, &vi)?;
    let mut tc = tc.clone();
    tc.seed = p.seed;
    let trained = train_group_model(
        &p.calib_x.select_rows(&ti),
        &tc_bits,
        &p.calib_x.select_rows(&vi),
        &vc_bits,
        &tc,
        &mut p.rng.derive("fareg-train"),
    )?;
    info!(
        "seed {}: group model selected epoch {:?}, recon loss {:.4}",
        p.seed, trained.selected_epoch, trained.recon_loss
    );
    Ok(trained)
}

pub fn fareg_sets(
    p: &Prepared,
    alpha: f64,
    trained: &TrainedGroupModel,
    t: usize,
) -> Result<FaregPrediction, HarnessError> {
    let groups = sample_groups(&trained.model, &p.calib_x, t, &mut p.rng.derive("groups"))?;
    Ok(fareg_predict_with_groups(
        &p.calib_out,
        &p.splits.calib.labels,
        &p.test_out,
        alpha,
        &groups,
        &p.noise,
    )?)
}

pub fn method_sets(
    p: &Prepared,
    config: &ExperimentConfig,
    method: Method,
    trained: Option<&TrainedGroupModel>,
    t: usize,
) -> Result<Vec<PredictionSet>, HarnessError> {
    let calib_labels = &p.splits.calib.labels;
    Ok(match method {
        Method::Marginal => marginal_cp_with_noise(&p.calib_out, calib_labels, &p.test_out, config.alpha, &p.noise)?,
        Method::Partial => partial_cp_with_noise(
            &p.calib_out,
            calib_labels,
            &p.splits.calib.sensitive_values(),
            &p.test_out,
            &p.splits.test.sensitive_values(),
            config.alpha,
            &p.noise,
        )?,
        Method::Fareg => {
            let trained = trained.ok_or_else(|| HarnessError::Training("group model missing".into()))?;
            fareg_sets(p, config.alpha, trained, t)?.sets
        }
    })
}

fn audit_features(p: &Prepared, config: &ExperimentConfig) -> Matrix {
    match config.audit.features {
        AuditFeatures::All => p.test_x.clone(),
        AuditFeatures::Sensitive => {
            let cols = p.splits.test.sensitive_columns();
            if cols.is_empty() {
                p.test_x.clone()
            } else {
                p.splits.test.column_subset(&cols)
            }
        }
    }
}

/// Same probes for every method of a seed.
pub fn draw_probes(
    rng: &RngStream,
    kind: ProbeKind,
    dim: usize,
    delta: f64,
    n_probes: usize,
) -> Result<Vec<SlabProbe>, HarnessError> {
    let mut r = rng.derive(match kind {
        ProbeKind::Linear => "probes-linear",
        ProbeKind::Quadratic => "probes-quadratic",
    });
    (0..n_probes)
        .map(|_| SlabProbe::random(kind, dim, delta, &mut r).map_err(HarnessError::from))
        .collect()
}

/// Metrics of every method for one prepared seed.
pub fn evaluate(
    p: &Prepared,
    config: &ExperimentConfig,
    trained: Option<&TrainedGroupModel>,
    t: usize,
    train_seconds: f64,
) -> Result<(Vec<RunRecord>, Vec<ProbeRecord>), HarnessError> {
    let feats = audit_features(p, config);
    let mut probe_sets = Vec::new();
    for &kind in &config.audit.kinds {
        probe_sets.push((kind, draw_probes(&p.rng, kind, feats.cols(), config.audit.delta, config.audit.n_probes)?));
    }
    let labels = &p.splits.test.labels;
    let mut records = Vec::new();
    let mut probes = Vec::new();
    for &method in &config.methods {
        let start = Instant::now();
        let sets = method_sets(p, config, method, trained, t)?;
        let mut seconds = start.elapsed().as_secs_f64();
        if method == Method::Fareg {
            seconds += train_seconds;
        }
        let group_cov = match &p.splits.test.unfair_flag {
            Some(flag) if flag.iter().any(|&f| f) => group_coverage(&sets, labels, flag)?,
            _ => f64::NAN,
        };
        let bits = crate::metrics::covered_bits(&sets, labels)?;
        let (mut wsc, mut wsc_plus) = (f64::NAN, f64::NAN);
        for (kind, ps) in &probe_sets {
            let audit = audit_with_probes(ps, &feats, &bits)?;
            match kind {
                ProbeKind::Linear => wsc = audit.min_coverage,
                ProbeKind::Quadratic => wsc_plus = audit.min_coverage,
            }
            probes.push(ProbeRecord {
                method: method.name().into(),
                seed: p.seed,
                kind: *kind,
                coverages: audit.probe_coverages,
            });
        }
        records.push(RunRecord {
            method: method.name().into(),
            seed: p.seed,
            group_coverage: group_cov,
            wsc,
            wsc_plus,
            average_coverage: average_coverage(&sets, labels)?,
            average_size: average_size(&sets)?,
            seconds: config.record_timing.then_some(seconds),
        });
    }
    Ok((records, probes))
}

fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<(Vec<RunRecord>, Vec<ProbeRecord>), HarnessError> {
    let p = prepare(config, seed)?;
    let start = Instant::now();
    let trained = if config.methods.contains(&Method::Fareg) {
        Some(train_fareg(&p, config, &config.train_config())?)
    } else {
        None
    };
    let train_seconds = start.elapsed().as_secs_f64();
    evaluate(&p, config, trained.as_ref(), config.train_config().t_samples, train_seconds)
}

pub fn seeds(config: &ExperimentConfig) -> Vec<u64> {
    (0..config.repeats as u64).map(|r| config.seed + r).collect()
}

/// Runs every repeat; a failing repeat is logged and skipped.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    config.validate()?;
    let mut out = ExperimentOutcome::default();
    let mut last_err = None;
    for seed in seeds(config) {
        match run_seed(config, seed) {
            Ok((r, p)) => {
                out.records.extend(r);
                out.probes.extend(p);
            }
            Err(e) => {
                warn!("seed {seed} failed: {e}");
                out.failures.push((seed, e.to_string()));
                last_err = Some(e);
            }
        }
    }
    if out.records.is_empty() {
        return Err(last_err.unwrap_or_else(|| HarnessError::Training("no repeat completed".into())));
    }
    out.aggregates = aggregate(&out.records, &config.methods);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Delta,
    T,
    Beta,
    /// Training plus calibration size.
    N,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        match s {
            "delta" => Ok(Self::Delta),
            "T" | "t" => Ok(Self::T),
            "beta" => Ok(Self::Beta),
            "n" => Ok(Self::N),
            other => Err(HarnessError::Usage(format!("unknown sweep parameter {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Delta => "delta",
            Self::T => "T",
            Self::Beta => "beta",
            Self::N => "n",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub parameter: SweepParam,
    pub rows: Vec<SweepRow>,
    pub records: Vec<(f64, RunRecord)>,
}

fn with_value(config: &ExperimentConfig, param: SweepParam, value: f64) -> Result<ExperimentConfig, HarnessError> {
    let mut c = config.clone();
    let mut tc = c.train_config();
    match param {
        SweepParam::Delta => tc.delta = value,
        SweepParam::Beta => tc.beta = value,
        SweepParam::T => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(HarnessError::Usage(format!("T must be a positive integer, got {value}")));
            }
            tc.t_samples = value as usize;
        }
        SweepParam::N => {
            if value < 4.0 || value.fract() != 0.0 {
                return Err(HarnessError::Usage(format!("n must be an integer >= 4, got {value}")));
            }
            c.dataset.n = value as usize;
        }
    }
    c.fareg = Some(tc);
    c.validate()?;
    Ok(c)
}

/// Runs the experiment for each value. Data and classifiers are shared
/// across values of a seed when the parameter only affects group learning,
/// and the group model is shared across values of `T`; every derived random
/// stream is keyed by name, so results equal those of standalone runs.
pub fn run_sweep(config: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<SweepOutcome, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Usage("sweep needs at least one value".into()));
    }
    config.validate()?;
    let configs = values
        .iter()
        .map(|&v| with_value(config, param, v))
        .collect::<Result<Vec<_>, _>>()?;
    let mut records: Vec<(usize, RunRecord)> = Vec::new();
    for seed in seeds(config) {
        let shared = if param == SweepParam::N {
            None
        } else {
            match prepare(config, seed) {
                Ok(p) => Some(p),
                Err(e) => {
                    warn!("seed {seed} failed: {e}");
                    continue;
                }
            }
        };
        let mut t_model: Option<TrainedGroupModel> = None;
        for (vi, c) in configs.iter().enumerate() {
            let result = (|| -> Result<Vec<RunRecord>, HarnessError> {
                let own;
                let p = match &shared {
                    Some(p) => p,
                    None => {
                        own = prepare(c, seed)?;
                        &own
                    }
                };
                let tc = c.train_config();
                let start = Instant::now();
                let trained = if !c.methods.contains(&Method::Fareg) {
                    None
                } else if param == SweepParam::T {
                    if t_model.is_none() {
                        t_model = Some(train_fareg(p, c, &tc)?);
                    }
                    t_model.clone()
                } else {
                    Some(train_fareg(p, c, &tc)?)
                };
                let secs = start.elapsed().as_secs_f64();
                Ok(evaluate(p, c, trained.as_ref(), tc.t_samples, secs)?.0)
            })();
            match result {
                Ok(rs) => records.extend(rs.into_iter().map(|r| (vi, r))),
                Err(e) => warn!("seed {seed}, {} = {}: {e}", param.name(), values[vi]),
            }
        }
    }
    let mut rows = Vec::new();
    for (vi, &value) in values.iter().enumerate() {
        let rs: Vec<RunRecord> = records.iter().filter(|(i, _)| *i == vi).map(|(_, r)| r.clone()).collect();
        if rs.is_empty() {
            return Err(HarnessError::Training(format!("no repeat completed for {} = {value}", param.name())));
        }
        for a in aggregate(&rs, &config.methods) {
            rows.push(SweepRow { value, aggregate: a });
        }
    }
    Ok(SweepOutcome {
        parameter: param,
        rows,
        records: records.into_iter().map(|(i, r)| (values[i], r)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub seed: u64,
    pub delta: f64,
    pub kind: ProbeKind,
    pub min_coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditAggregate {
    pub delta: f64,
    pub kind: ProbeKind,
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
}

/// Worst-slab audits of marginal sets for several mass floors. Probe draws
/// are shared across mass floors within a seed.
pub fn run_audit(config: &ExperimentConfig) -> Result<(Vec<AuditRecord>, Vec<AuditAggregate>), HarnessError> {
    config.validate()?;
    let mut records = Vec::new();
    for seed in seeds(config) {
        let p = prepare(config, seed)?;
        let sets = method_sets(&p, config, Method::Marginal, None, 0)?;
        let bits = crate::metrics::covered_bits(&sets, &p.splits.test.labels)?;
        let feats = audit_features(&p, config);
        for &kind in &config.audit.kinds {
            let base = draw_probes(&p.rng, kind, feats.cols(), config.audit.deltas[0], config.audit.n_probes)?;
            for &delta in &config.audit.deltas {
                let probes: Vec<SlabProbe> = base.iter().map(|pr| SlabProbe { delta, ..pr.clone() }).collect();
                let a = audit_with_probes(&probes, &feats, &bits)?;
                records.push(AuditRecord {
                    seed,
                    delta,
                    kind,
                    min_coverage: a.min_coverage,
                });
            }
        }
    }
    let mut aggs = Vec::new();
    for &kind in &config.audit.kinds {
        for &delta in &config.audit.deltas {
            let vals: Vec<f64> = records
                .iter()
                .filter(|r| r.kind == kind && r.delta == delta)
                .map(|r| r.min_coverage)
                .collect();
            let (mean, std) = mean_std(&vals);
            aggs.push(AuditAggregate {
                delta,
                kind,
                runs: vals.len(),
                mean,
                std,
            });
        }
    }
    Ok((records, aggs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_basics() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert!(mean_std(&[]).0.is_nan());
    }

    #[test]
    fn aggregate_is_order_independent() {
        let rec = |m: &str, seed, g| RunRecord {
            method: m.into(),
            seed,
            group_coverage: g,
            wsc: 0.5,
            wsc_plus: 0.4,
            average_coverage: 0.9,
            average_size: 2.0,
            seconds: None,
        };
        let a = vec![rec("marginal", 0, 0.8), rec("marginal", 1, 0.1 + 0.2), rec("marginal", 2, 0.7)];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(aggregate(&a, &[Method::Marginal]), aggregate(&b, &[Method::Marginal]));
    }

    #[test]
    fn small_pipeline_runs() {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset.n = 200;
        cfg.dataset.test_n = 100;
        cfg.classifier.epochs = 5;
        cfg.fareg = Some(TrainConfig {
            epochs: 5,
            batch_size: 50,
            ..TrainConfig::synthetic()
        });
        cfg.audit.n_probes = 5;
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.records.len(), 3);
        for r in &out.records {
            assert!((0.0..=1.0).contains(&r.group_coverage));
            assert!(r.wsc_plus <= 1.0 && r.average_size <= 6.0);
        }
        let sweep = run_sweep(&cfg, SweepParam::T, &[1.0, 3.0]).unwrap();
        assert_eq!(sweep.rows.len(), 6);
        cfg.fareg.as_mut().unwrap().t_samples = 3;
        let standalone = run_experiment(&cfg).unwrap();
        let fareg_at_3: Vec<&RunRecord> =
            sweep.records.iter().filter(|(v, r)| *v == 3.0 && r.method == "fareg").map(|(_, r)| r).collect();
        assert_eq!(fareg_at_3[0], &standalone.records[2]);
        assert!(run_sweep(&cfg, SweepParam::Beta, &[]).is_err());
    }
}
