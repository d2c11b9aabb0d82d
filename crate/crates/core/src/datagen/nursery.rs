//! Nursery ingestion (UCI comma-separated layout, no header) and
//! group-targeted label corruption.
//!
//! Value orders below fix the ordinal codes. Every feature except `housing`
//! is marked sensitive.

use std::fmt::Write as _;
use std::path::Path;

use super::{Column, DataError, Dataset};
use crate::diffcore::{Matrix, RngStream};

pub const NURSERY_COLUMNS: [(&str, &[&str]); 8] = [
    ("parents", &["usual", "pretentious", "great_pret"]),
    ("has_nurs", &["proper", "less_proper", "improper", "critical", "very_crit"]),
    ("form", &["complete", "completed", "incomplete", "foster"]),
    ("children", &["1", "2", "3", "more"]),
    ("housing", &["convenient", "less_conv", "critical"]),
    ("finance", &["convenient", "inconv"]),
    ("social", &["nonprob", "slightly_prob", "problematic"]),
    ("health", &["recommended", "priority", "not_recom"]),
];

pub const NURSERY_CLASSES: [&str; 5] = ["not_recom", "recommend", "very_recom", "priority", "spec_prior"];

fn nursery_columns() -> Vec<Column> {
    NURSERY_COLUMNS
        .iter()
        .map(|(name, values)| Column::categorical(name, values, *name != "housing"))
        .collect()
}

/// Parses Nursery text. Blank lines are skipped.
pub fn parse_nursery(text: &str) -> Result<Dataset, DataError> {
    let mut rows: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != NURSERY_COLUMNS.len() + 1 {
            return Err(DataError::Parse {
                line,
                message: format!("expected {} fields, found {}", NURSERY_COLUMNS.len() + 1, fields.len()),
            });
        }
        for ((name, values), field) in NURSERY_COLUMNS.iter().zip(&fields) {
            let code = values.iter().position(|v| v == field).ok_or_else(|| DataError::Parse {
                line,
                message: format!("unknown {name} value {field:?}"),
            })?;
            rows.push(code as f64);
        }
        let class = fields[NURSERY_COLUMNS.len()];
        let y = NURSERY_CLASSES
            .iter()
            .position(|c| *c == class)
            .ok_or_else(|| DataError::Parse {
                line,
                message: format!("unknown class {class:?}"),
            })?;
        labels.push(y);
    }
    if labels.is_empty() {
        return Err(DataError::Parse {
            line: 0,
            message: "no records".into(),
        });
    }
    let n = labels.len();
    let features = Matrix::from_vec(n, NURSERY_COLUMNS.len(), rows).map_err(|e| DataError::Schema(e.to_string()))?;
    Dataset::new(
        features,
        labels,
        NURSERY_CLASSES.len(),
        nursery_columns(),
        NURSERY_CLASSES.iter().map(|s| s.to_string()).collect(),
        None,
    )
}

pub fn load_nursery(path: &Path) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_nursery(&text)
}

fn nursery_text(data: &Dataset) -> Result<String, DataError> {
    let mut out = String::new();
    for i in 0..data.len() {
        for (j, c) in data.columns.iter().enumerate() {
            let levels = c
                .levels()
                .ok_or_else(|| DataError::Schema(format!("column {} is not categorical", c.name)))?;
            let _ = write!(out, "{},", levels[data.features[(i, j)] as usize]);
        }
        let _ = writeln!(out, "{}", data.class_names[data.labels[i]]);
    }
    Ok(out)
}

/// Writes `data` back in the UCI layout.
pub fn write_nursery(data: &Dataset, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, nursery_text(data)?).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Full factorial over the Nursery value grid (12960 rows) with labels from
/// a fixed ordinal scoring rule. Used as a stand-in when the real file is not
/// available; its labels are not the original ones.
pub fn nursery_surrogate() -> Dataset {
    let sizes: Vec<usize> = NURSERY_COLUMNS.iter().map(|(_, v)| v.len()).collect();
    let n: usize = sizes.iter().product();
    let d = sizes.len();
    let mut features = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    let mut code = vec![0usize; d];
    for i in 0..n {
        let mut rest = i;
        for j in (0..d).rev() {
            code[j] = rest % sizes[j];
            rest /= sizes[j];
        }
        for j in 0..d {
            features[(i, j)] = code[j] as f64;
        }
        labels.push(surrogate_label(&code));
    }
    Dataset {
        features,
        labels,
        num_classes: NURSERY_CLASSES.len(),
        columns: nursery_columns(),
        class_names: NURSERY_CLASSES.iter().map(|s| s.to_string()).collect(),
        unfair_flag: None,
    }
}

fn surrogate_label(c: &[usize]) -> usize {
    if c[7] == 2 {
        return 0;
    }
    let score = 2 * c[0] + c[1] + c[2] + c[3] + c[4] + c[5] + c[6] + 2 * c[7];
    match score {
        0 => 1,
        1..=3 => 2,
        4..=9 => 3,
        _ => 4,
    }
}

/// Flags `parents in {usual, pretentious}` with `finance = inconv` and
/// perturbs their labels by centered uniform noise of width `L - 1`, rounded
/// and clamped to the class range.
pub fn corrupt_group(data: &Dataset, rng: &mut RngStream) -> Result<Dataset, DataError> {
    let parents = data
        .column_index("parents")
        .ok_or_else(|| DataError::Schema("missing feature parents".into()))?;
    let finance = data
        .column_index("finance")
        .ok_or_else(|| DataError::Schema("missing feature finance".into()))?;
    let level = |col: usize, name: &str| -> Result<f64, DataError> {
        data.columns[col]
            .levels()
            .and_then(|v| v.iter().position(|x| x == name))
            .map(|p| p as f64)
            .ok_or_else(|| DataError::Schema(format!("column {} lacks value {name}", data.columns[col].name)))
    };
    let usual = level(parents, "usual")?;
    let pretentious = level(parents, "pretentious")?;
    let inconv = level(finance, "inconv")?;
    let top = (data.num_classes - 1) as f64;
    let half = top / 2.0;
    let mut out = data.clone();
    let mut flags = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let p = data.features[(i, parents)];
        let flagged = (p == usual || p == pretentious) && data.features[(i, finance)] == inconv;
        if flagged {
            let noisy = data.labels[i] as f64 + rng.uniform_range(-half, half);
            out.labels[i] = noisy.round().clamp(0.0, top) as usize;
        }
        flags.push(flagged);
    }
    out.unfair_flag = Some(flags);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "usual,proper,complete,1,convenient,convenient,nonprob,recommended,recommend\n\
pretentious,critical,foster,more,critical,inconv,problematic,not_recom,not_recom\n\
great_pret,very_crit,incomplete,3,less_conv,inconv,slightly_prob,priority,spec_prior\n\n";

    #[test]
    fn parses_sample() {
        let d = parse_nursery(SAMPLE).unwrap();
        assert_eq!((d.len(), d.dim(), d.num_classes), (3, 8, 5));
        assert_eq!(d.labels, vec![1, 0, 4]);
        assert_eq!(d.features.row(1), &[1.0, 3.0, 3.0, 3.0, 2.0, 1.0, 2.0, 2.0]);
        assert_eq!(d.sensitive_columns(), vec![0, 1, 2, 3, 5, 6, 7]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        assert!(matches!(parse_nursery(""), Err(DataError::Parse { .. })));
        let bad = "usual,proper,complete,1,convenient,convenient,nonprob,recommended,recommend\nusual,proper\n";
        match parse_nursery(bad) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let unknown = "usual,proper,complete,7,convenient,convenient,nonprob,recommended,recommend\n";
        match parse_nursery(unknown) {
            Err(DataError::Parse { line, message }) => {
                assert_eq!(line, 1);
                assert!(message.contains("children"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn text_roundtrip() {
        let d = parse_nursery(SAMPLE).unwrap();
        let again = parse_nursery(&nursery_text(&d).unwrap()).unwrap();
        assert_eq!(d, again);
    }

    #[test]
    fn surrogate_is_full_factorial() {
        let d = nursery_surrogate();
        assert_eq!(d.len(), 12960);
        d.validate().unwrap();
        let mut counts = [0usize; 5];
        for &y in &d.labels {
            counts[y] += 1;
        }
        assert_eq!(counts[0], 4320);
        assert!(counts.iter().all(|&c| c > 0));
        let again = parse_nursery(&nursery_text(&d).unwrap()).unwrap();
        assert_eq!(d, again);
    }

    #[test]
    fn corruption_touches_only_flagged() {
        let d = nursery_surrogate();
        let c = corrupt_group(&d, &mut RngStream::new(11)).unwrap();
        let flags = c.unfair_flag.as_ref().unwrap();
        let frac = flags.iter().filter(|&&f| f).count() as f64 / d.len() as f64;
        assert!((frac - 1.0 / 3.0).abs() < 1e-12);
        let mut changed = 0;
        for i in 0..d.len() {
            assert!(c.labels[i] < 5);
            if !flags[i] {
                assert_eq!(c.labels[i], d.labels[i]);
            } else if c.labels[i] != d.labels[i] {
                changed += 1;
            }
        }
        assert!(changed > 1000);
        assert_eq!(c, corrupt_group(&d, &mut RngStream::new(11)).unwrap());
    }

    #[test]
    fn corruption_needs_features() {
        let mut d = nursery_surrogate();
        d.columns[0].name = "other".into();
        assert!(matches!(corrupt_group(&d, &mut RngStream::new(1)), Err(DataError::Schema(_))));
    }
}
