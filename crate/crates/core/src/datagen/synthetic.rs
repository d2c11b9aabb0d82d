//! Synthetic generators.
//!
//! Column layout for the categorical scenarios: `Color`, `Gender`,
//! `AgeGroup`, `Region` (sensitive, ordinal codes), then `U0..U5` uniform on
//! `[0, 1]`. `U0` is the coordinate that drives the label.

use super::{Column, Dataset};
use crate::diffcore::{Matrix, RngStream};

pub const COLORS: [&str; 2] = ["Red", "Blue"];
pub const GENDERS: [&str; 2] = ["Female", "Male"];
pub const AGE_GROUPS: [&str; 4] = ["Child", "Youth", "Middle", "Elder"];
pub const REGIONS: [&str; 5] = ["Asia", "Europe", "Africa", "America", "Oceania"];

/// Column index of the label-driving continuous feature in the categorical
/// scenarios.
pub const LABEL_DRIVER_COLUMN: usize = 4;

const NUM_CLASSES: usize = 6;
const NUM_UNIFORM: usize = 6;

fn class_names() -> Vec<String> {
    ["Depression", "Anxiety", "Bipolar", "Schizophrenia", "Anorexia", "PTSD"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// The shared label law. Flagged rows draw uniformly from the lower or upper
/// class triple depending on `x2`; others get the sextile of `x2`.
pub fn decision_tree_label(flagged: bool, x2: f64, rng: &mut RngStream) -> usize {
    if flagged {
        let base = if x2 < 0.5 { 0 } else { 3 };
        base + rng.below(3)
    } else {
        ((6.0 * x2).floor() as usize).min(NUM_CLASSES - 1)
    }
}

fn categorical_scenario(n: usize, rng: &mut RngStream, flag_of: impl Fn(usize, usize, usize) -> bool) -> Dataset {
    let mut columns = vec![
        Column::categorical("Color", &COLORS, true),
        Column::categorical("Gender", &GENDERS, true),
        Column::categorical("AgeGroup", &AGE_GROUPS, true),
        Column::categorical("Region", &REGIONS, true),
    ];
    for k in 0..NUM_UNIFORM {
        columns.push(Column::continuous(&format!("U{k}")));
    }
    let d = columns.len();
    let mut features = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n);
    for i in 0..n {
        let gender = rng.below(2);
        let color = rng.below(2);
        let age = rng.below(4);
        let region = i % REGIONS.len();
        features[(i, 0)] = color as f64;
        features[(i, 1)] = gender as f64;
        features[(i, 2)] = age as f64;
        features[(i, 3)] = region as f64;
        for k in 0..NUM_UNIFORM {
            features[(i, 4 + k)] = rng.uniform();
        }
        let flagged = flag_of(color, gender, age);
        labels.push(decision_tree_label(flagged, features[(i, LABEL_DRIVER_COLUMN)], rng));
        flags.push(flagged);
    }
    Dataset {
        features,
        labels,
        num_classes: NUM_CLASSES,
        columns,
        class_names: class_names(),
        unfair_flag: Some(flags),
    }
}

/// Protected group: `Color=Red` XNOR `Gender=Female`.
pub fn gen_synthetic_xnor(n: usize, rng: &mut RngStream) -> Dataset {
    categorical_scenario(n, rng, |color, gender, _| (color == 0) == (gender == 0))
}

/// Protected cells: Male Child, Male Youth, Female Middle, Female Elder.
pub fn gen_eight_subgroup(n: usize, rng: &mut RngStream) -> Dataset {
    categorical_scenario(n, rng, |_, gender, age| if gender == 1 { age <= 1 } else { age >= 2 })
}

/// Ten uniform coordinates; the protected group is
/// `(X0 >= 0.1) XOR (X1 >= 0.1)` and `X2` drives the label.
pub fn gen_metric_eval(n: usize, rng: &mut RngStream) -> Dataset {
    let d = 10;
    let columns: Vec<Column> = (0..d).map(|k| Column::continuous(&format!("X{k}"))).collect();
    let mut features = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n);
    for i in 0..n {
        for k in 0..d {
            features[(i, k)] = rng.uniform();
        }
        let flagged = (features[(i, 0)] >= 0.1) != (features[(i, 1)] >= 0.1);
        labels.push(decision_tree_label(flagged, features[(i, 2)], rng));
        flags.push(flagged);
    }
    Dataset {
        features,
        labels,
        num_classes: NUM_CLASSES,
        columns,
        class_names: class_names(),
        unfair_flag: Some(flags),
    }
}
