//! Datasets: synthetic generators, Nursery ingestion with group-targeted
//! label corruption, splitting, and CSV export with a JSON sidecar.

mod export;
mod nursery;
mod split;
mod synthetic;

pub use export::{read_dataset, sidecar_path, write_dataset, DatasetMeta, META_SCHEMA_VERSION};
pub use nursery::{
    corrupt_group, load_nursery, nursery_surrogate, parse_nursery, write_nursery, NURSERY_CLASSES, NURSERY_COLUMNS,
};
pub use split::{split, SplitSpec};
pub use synthetic::{
    decision_tree_label, gen_eight_subgroup, gen_metric_eval, gen_synthetic_xnor, AGE_GROUPS, COLORS, GENDERS,
    LABEL_DRIVER_COLUMN, REGIONS,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::Matrix;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("metadata error: {0}")]
    Meta(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    /// Stored as the ordinal code `0..values.len()`.
    Categorical { values: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    pub sensitive: bool,
}

impl Column {
    pub fn continuous(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Continuous,
            sensitive: false,
        }
    }

    pub fn categorical(name: &str, values: &[&str], sensitive: bool) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Categorical {
                values: values.iter().map(|v| v.to_string()).collect(),
            },
            sensitive,
        }
    }

    pub fn levels(&self) -> Option<&[String]> {
        match &self.kind {
            ColumnKind::Categorical { values } => Some(values),
            ColumnKind::Continuous => None,
        }
    }

    /// Number of encoded columns under `encoding`.
    pub fn width(&self, encoding: Encoding) -> usize {
        match (encoding, self.levels()) {
            (Encoding::OneHot, Some(v)) => v.len(),
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    #[default]
    Ordinal,
    OneHot,
}

/// Labeled data. Categorical features hold ordinal codes; [`Dataset::encode`]
/// produces the network input matrix under a chosen encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub columns: Vec<Column>,
    pub class_names: Vec<String>,
    pub unfair_flag: Option<Vec<bool>>,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        columns: Vec<Column>,
        class_names: Vec<String>,
        unfair_flag: Option<Vec<bool>>,
    ) -> Result<Self, DataError> {
        let d = Self {
            features,
            labels,
            num_classes,
            columns,
            class_names,
            unfair_flag,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.features.rows();
        if self.labels.len() != n {
            return Err(DataError::Schema(format!("{} labels for {n} rows", self.labels.len())));
        }
        if self.columns.len() != self.features.cols() {
            return Err(DataError::Schema(format!(
                "{} column descriptors for {} feature columns",
                self.columns.len(),
                self.features.cols()
            )));
        }
        if self.class_names.len() != self.num_classes {
            return Err(DataError::Schema("class name count differs from class count".into()));
        }
        if let Some(&y) = self.labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(DataError::Schema(format!("label {y} >= {} classes", self.num_classes)));
        }
        if let Some(flag) = &self.unfair_flag {
            if flag.len() != n {
                return Err(DataError::Schema("unfair_flag length differs from row count".into()));
            }
        }
        for (j, c) in self.columns.iter().enumerate() {
            if let Some(levels) = c.levels() {
                for i in 0..n {
                    let v = self.features[(i, j)];
                    if v < 0.0 || v.fract() != 0.0 || v as usize >= levels.len() {
                        return Err(DataError::Schema(format!("row {i}: invalid code {v} for column {}", c.name)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn sensitive_columns(&self) -> Vec<usize> {
        (0..self.columns.len()).filter(|&j| self.columns[j].sensitive).collect()
    }

    /// Ordinal codes of a categorical column.
    pub fn codes(&self, col: usize) -> Vec<usize> {
        (0..self.len()).map(|i| self.features[(i, col)] as usize).collect()
    }

    /// Codes of every sensitive column, outer index = sensitive feature.
    pub fn sensitive_values(&self) -> Vec<Vec<usize>> {
        self.sensitive_columns().into_iter().map(|j| self.codes(j)).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            columns: self.columns.clone(),
            class_names: self.class_names.clone(),
            unfair_flag: self.unfair_flag.as_ref().map(|f| idx.iter().map(|&i| f[i]).collect()),
        }
    }

    /// Feature matrix for network consumption.
    pub fn encode(&self, encoding: Encoding) -> Matrix {
        match encoding {
            Encoding::Ordinal => self.features.clone(),
            Encoding::OneHot => {
                let width: usize = self.columns.iter().map(|c| c.width(encoding)).sum();
                let mut out = Matrix::zeros(self.len(), width);
                for i in 0..self.len() {
                    let mut at = 0;
                    for (j, c) in self.columns.iter().enumerate() {
                        let v = self.features[(i, j)];
                        match c.levels() {
                            Some(levels) => {
                                out[(i, at + v as usize)] = 1.0;
                                at += levels.len();
                            }
                            None => {
                                out[(i, at)] = v;
                                at += 1;
                            }
                        }
                    }
                }
                out
            }
        }
    }

    /// Feature rows restricted to the given columns.
    pub fn column_subset(&self, cols: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.len(), cols.len());
        for i in 0..self.len() {
            for (k, &j) in cols.iter().enumerate() {
                out[(i, k)] = self.features[(i, j)];
            }
        }
        out
    }

    pub fn flag_rate(&self) -> Option<f64> {
        self.unfair_flag
            .as_ref()
            .map(|f| f.iter().filter(|&&b| b).count() as f64 / f.len().max(1) as f64)
    }
}
