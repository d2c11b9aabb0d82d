//! CSV export. Feature columns hold ordinal codes or reals, followed by
//! `label` and, when present, `unfair_flag` (0/1). A sidecar
//! `<file>.meta.json` records column roles, value orders and the encoding.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Column, DataError, Dataset, Encoding};
use crate::diffcore::Matrix;

pub const META_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub rows: usize,
    pub columns: Vec<Column>,
    pub label_column: String,
    pub class_names: Vec<String>,
    pub unfair_flag_column: Option<String>,
    /// Encoding the network consumes; the CSV always stores ordinal codes.
    pub encoding: Encoding,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_dataset(data: &Dataset, path: &Path, encoding: Encoding) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = data.columns.iter().map(|c| c.name.clone()).collect();
    header.push("label".into());
    if data.unfair_flag.is_some() {
        header.push("unfair_flag".into());
    }
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.features.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.labels[i].to_string());
        if let Some(f) = &data.unfair_flag {
            rec.push(u8::from(f[i]).to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(path))?;
    let meta = DatasetMeta {
        schema_version: META_SCHEMA_VERSION,
        rows: data.len(),
        columns: data.columns.clone(),
        label_column: "label".into(),
        class_names: data.class_names.clone(),
        unfair_flag_column: data.unfair_flag.as_ref().map(|_| "unfair_flag".into()),
        encoding,
    };
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_string_pretty(&meta)?).map_err(io_err(&side))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<(Dataset, DatasetMeta), DataError> {
    let side = sidecar_path(path);
    let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(&side).map_err(io_err(&side))?)?;
    if meta.schema_version != META_SCHEMA_VERSION {
        return Err(DataError::Schema(format!("unsupported schema version {}", meta.schema_version)));
    }
    let mut r = csv::Reader::from_path(path)?;
    let d = meta.columns.len();
    let expected = d + 1 + usize::from(meta.unfair_flag_column.is_some());
    let mut values = Vec::with_capacity(meta.rows * d);
    let mut labels = Vec::with_capacity(meta.rows);
    let mut flags = meta.unfair_flag_column.as_ref().map(|_| Vec::with_capacity(meta.rows));
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let parse_err = |message: String| DataError::Parse { line, message };
        if rec.len() != expected {
            return Err(parse_err(format!("expected {expected} fields, found {}", rec.len())));
        }
        for j in 0..d {
            values.push(rec[j].parse::<f64>().map_err(|e| parse_err(format!("column {j}: {e}")))?);
        }
        labels.push(rec[d].parse::<usize>().map_err(|e| parse_err(format!("label: {e}")))?);
        if let Some(f) = flags.as_mut() {
            match &rec[d + 1] {
                "0" => f.push(false),
                "1" => f.push(true),
                other => return Err(parse_err(format!("bad unfair_flag {other:?}"))),
            }
        }
    }
    let n = labels.len();
    if n != meta.rows {
        return Err(DataError::Schema(format!("metadata lists {} rows, file has {n}", meta.rows)));
    }
    let features = Matrix::from_vec(n, d, values).map_err(|e| DataError::Schema(e.to_string()))?;
    let data = Dataset::new(
        features,
        labels,
        meta.class_names.len(),
        meta.columns.clone(),
        meta.class_names.clone(),
        flags,
    )?;
    Ok((data, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_synthetic_xnor, nursery_surrogate};
    use crate::diffcore::RngStream;

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("xnor.csv");
        let d = gen_synthetic_xnor(300, &mut RngStream::new(4));
        write_dataset(&d, &p, Encoding::OneHot).unwrap();
        let (back, meta) = read_dataset(&p).unwrap();
        assert_eq!(back, d);
        assert_eq!(meta.encoding, Encoding::OneHot);

        let q = dir.path().join("nursery.csv");
        let n = nursery_surrogate().subset(&[0, 5, 900]);
        write_dataset(&n, &q, Encoding::Ordinal).unwrap();
        assert_eq!(read_dataset(&q).unwrap().0, n);
    }

    #[test]
    fn missing_sidecar_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("none.csv");
        std::fs::write(&p, "a,label\n1,0\n").unwrap();
        assert!(matches!(read_dataset(&p), Err(DataError::Io { .. })));
    }
}
