//! Cohort CSV persistence.
//!
//! Header: the 14 feature names, then `diabetes,province`. Missing values are
//! empty fields, binaries are `0`/`1`, and reals use Rust's shortest
//! round-trip decimal formatting, so write followed by read is lossless.

use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};
use crate::schema::{encode_features, Dataset, PartialRow, PatientRecord, FEATURE_NAMES, N_FEATURES};

pub fn header() -> Vec<String> {
    FEATURE_NAMES
        .iter()
        .copied()
        .chain(["diabetes", "province"])
        .map(String::from)
        .collect()
}

pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(ds, file)
}

pub fn write_records<W: std::io::Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header())?;
    let mut fields: Vec<String> = Vec::with_capacity(N_FEATURES + 2);
    for r in &ds.records {
        fields.clear();
        for (col, slot) in encode_features(r)?.iter().enumerate() {
            fields.push(match slot {
                None => String::new(),
                Some(v) if crate::schema::is_binary(col) => format!("{}", *v as u8),
                Some(v) => format!("{v}"),
            });
        }
        fields.push(if r.diabetes { "1" } else { "0" }.to_string());
        fields.push(r.province.code().to_string());
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(file, path, &format!("csv:{}", path.display()))
}

pub fn read_records<R: std::io::Read>(input: R, path: &Path, provenance: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let found: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let expected = header();
    if found != expected {
        return Err(Error::HeaderMismatch { expected, found });
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let malformed = |message: String| Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            message,
        };
        if row.len() != expected.len() {
            return Err(malformed(format!("expected {} fields, found {}", expected.len(), row.len())));
        }
        let mut slots: PartialRow = [None; N_FEATURES];
        for (col, slot) in slots.iter_mut().enumerate() {
            let cell = row[col].trim();
            if !cell.is_empty() {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| malformed(format!("{}: cannot parse `{cell}`", FEATURE_NAMES[col])))?;
                *slot = Some(v);
            }
        }
        let diabetes = match row[N_FEATURES].trim() {
            "1" => true,
            "0" => false,
            other => return Err(malformed(format!("diabetes: expected 0 or 1, found `{other}`"))),
        };
        let province = row[N_FEATURES + 1]
            .parse()
            .map_err(|e: Error| malformed(e.to_string()))?;
        let record =
            PatientRecord::from_slots(&slots, diabetes, province).map_err(|e| malformed(e.to_string()))?;
        records.push(record);
    }
    Ok(Dataset::new(records, provenance))
}
