use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{predict_proba, Layout, ModelFamily, ParamVector};
use crate::error::{Error, Result};
use crate::schema::{LabeledMatrix, Province, Standardizer, N_FEATURES};

const MAGIC: &[u8; 8] = b"FEDPROV\0";
const VERSION: u32 = 1;
const SHARED_CODE: &[u8; 2] = b"**";

/// How raw feature rows are scaled before reaching the model.
///
/// Federated models are trained on client-local z-scores, so a test row is
/// scaled with the statistics of the province it came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Preprocessing {
    Shared(Standardizer),
    PerProvince(BTreeMap<Province, Standardizer>),
}

impl Preprocessing {
    pub fn standardizer_for(&self, province: Province) -> Result<&Standardizer> {
        match self {
            Preprocessing::Shared(s) => Ok(s),
            Preprocessing::PerProvince(map) => map
                .get(&province)
                .ok_or_else(|| Error::validation("province", format!("no standardizer for {province}"))),
        }
    }
}

/// Trained parameters plus the scaling they expect.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub params: ParamVector,
    pub preprocessing: Preprocessing,
}

impl FittedModel {
    pub fn family(&self) -> ModelFamily {
        self.params.layout.family()
    }

    /// Probabilities for raw (unscaled) rows; `provinces[i]` picks the
    /// standardizer for row `i`.
    pub fn predict(&self, rows: &LabeledMatrix, provinces: &[Province]) -> Result<Vec<f64>> {
        if rows.len() != provinces.len() {
            return Err(Error::LengthMismatch {
                left: rows.len(),
                right: provinces.len(),
            });
        }
        let scaled = rows
            .rows
            .iter()
            .zip(provinces)
            .map(|(r, &p)| Ok(self.preprocessing.standardizer_for(p)?.apply_row(r)))
            .collect::<Result<Vec<_>>>()?;
        predict_proba(&self.params, &scaled)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_standardizer(out: &mut Vec<u8>, code: &[u8; 2], s: &Standardizer) {
    out.extend_from_slice(code);
    for v in s.mean.iter().chain(&s.std) {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Little-endian binary checkpoint: magic, version, family, layout,
/// standardizers, then the flat parameter vector.
pub fn write_checkpoint(model: &FittedModel, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(16 + model.params.len() * 8);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let layout = &model.params.layout;
    out.push(match layout.family() {
        ModelFamily::Logistic => 0,
        ModelFamily::Mlp => 1,
    });
    put_u32(&mut out, layout.inputs() as u32);
    let hidden: &[usize] = match layout {
        Layout::Logistic { .. } => &[],
        Layout::Mlp { hidden, .. } => hidden,
    };
    put_u32(&mut out, hidden.len() as u32);
    for &h in hidden {
        put_u32(&mut out, h as u32);
    }
    match &model.preprocessing {
        Preprocessing::Shared(s) => {
            put_u32(&mut out, 1);
            put_standardizer(&mut out, SHARED_CODE, s);
        }
        Preprocessing::PerProvince(map) => {
            put_u32(&mut out, map.len() as u32);
            for (p, s) in map {
                let code: [u8; 2] = p.code().as_bytes().try_into().expect("two-letter code");
                put_standardizer(&mut out, &code, s);
            }
        }
    }
    out.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for v in &model.params.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(path: &Path) -> Result<FittedModel> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let family = match c.u8()? {
        0 => ModelFamily::Logistic,
        1 => ModelFamily::Mlp,
        b => return Err(Error::Checkpoint(format!("unknown family byte {b}"))),
    };
    let inputs = c.u32()? as usize;
    if inputs != N_FEATURES {
        return Err(Error::Checkpoint(format!("expected {N_FEATURES} inputs, found {inputs}")));
    }
    let n_hidden = c.u32()? as usize;
    let hidden = (0..n_hidden).map(|_| c.u32().map(|h| h as usize)).collect::<Result<Vec<_>>>()?;
    let layout = match family {
        ModelFamily::Logistic if hidden.is_empty() => Layout::logistic(),
        ModelFamily::Logistic => return Err(Error::Checkpoint("logistic model with hidden layers".into())),
        ModelFamily::Mlp => Layout::mlp(&hidden),
    };

    let n_std = c.u32()? as usize;
    let mut shared = None;
    let mut per = BTreeMap::new();
    for _ in 0..n_std {
        let code = c.take(2)?;
        let mut s = Standardizer::identity();
        for v in s.mean.iter_mut() {
            *v = c.f64()?;
        }
        for v in s.std.iter_mut() {
            *v = c.f64()?;
        }
        if code == SHARED_CODE {
            shared = Some(s);
        } else {
            let code = std::str::from_utf8(code).map_err(|_| Error::Checkpoint("bad province code".into()))?;
            per.insert(code.parse::<Province>()?, s);
        }
    }
    let preprocessing = match (shared, per.is_empty()) {
        (Some(s), true) if n_std == 1 => Preprocessing::Shared(s),
        (None, false) => Preprocessing::PerProvince(per),
        _ => return Err(Error::Checkpoint("inconsistent standardizer block".into())),
    };

    let n_params = c.u64()? as usize;
    if n_params != layout.len() {
        return Err(Error::Checkpoint(format!("{layout} needs {} values, header says {n_params}", layout.len())));
    }
    let values = (0..n_params).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
    if c.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    Ok(FittedModel {
        params: ParamVector::new(values, layout)?,
        preprocessing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(layout: Layout) -> ParamVector {
        let n = layout.len();
        ParamVector::new((0..n).map(|i| (i as f64).sin()).collect(), layout).unwrap()
    }

    #[test]
    fn round_trip_shared_and_per_province() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Standardizer::identity();
        s.mean[0] = 52.5;
        s.std[0] = 15.5;
        let shared = FittedModel {
            params: sample(Layout::logistic()),
            preprocessing: Preprocessing::Shared(s.clone()),
        };
        let path = dir.path().join("a.ckpt");
        write_checkpoint(&shared, &path).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap(), shared);

        let per = FittedModel {
            params: sample(Layout::mlp(&[5, 3])),
            preprocessing: Preprocessing::PerProvince(
                [(Province::AB, s.clone()), (Province::QC, Standardizer::identity())].into(),
            ),
        };
        write_checkpoint(&per, &path).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap(), per);
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let m = FittedModel {
            params: sample(Layout::logistic()),
            preprocessing: Preprocessing::Shared(Standardizer::identity()),
        };
        write_checkpoint(&m, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint(_))));
        fs::write(&path, b"NOTACKPT").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn predict_uses_row_province() {
        let mut params = ParamVector::zeros(Layout::logistic());
        params.values[0] = 1.0;
        let mut a = Standardizer::identity();
        a.mean[0] = 10.0;
        let b = Standardizer::identity();
        let m = FittedModel {
            params,
            preprocessing: Preprocessing::PerProvince([(Province::AB, a), (Province::BC, b)].into()),
        };
        let mut row = [0.0; N_FEATURES];
        row[0] = 10.0;
        let data = LabeledMatrix::new(vec![row, row], vec![true, false]).unwrap();
        let p = m.predict(&data, &[Province::AB, Province::BC]).unwrap();
        assert_eq!(p[0], 0.5);
        assert!(p[1] > 0.99);
        assert!(m.predict(&data, &[Province::AB, Province::ON]).is_err());
    }
}
