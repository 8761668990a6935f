//! Binary container and CSV export for [`BatchDataset`].
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "RBME" | version u8 | N u64 | n u64 | d u64
//! data   f64 x N*n*d
//! clean  f64 x N*n*d
//! good_user      packed bits, ceil(N/8) bytes, LSB first
//! sample_clean   packed bits, ceil(N*n/8) bytes, LSB first
//! target_mean    f64 x d
//! seed           u64
//! has_user_means u8, then f64 x N*d when 1
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::BatchDataset;

pub const MAGIC: &[u8; 4] = b"RBME";
pub const VERSION: u8 = 1;

fn pack_bits(bits: &[bool], out: &mut Vec<u8>) {
    for chunk in bits.chunks(8) {
        let mut byte = 0u8;
        for (k, &b) in chunk.iter().enumerate() {
            if b {
                byte |= 1 << k;
            }
        }
        out.push(byte);
    }
}

pub fn to_bytes(ds: &BatchDataset) -> Vec<u8> {
    let cells = ds.users * ds.batch_size;
    let mut out = Vec::with_capacity(29 + 16 * cells * ds.dim + cells / 4 + 8 * ds.dim + 16);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for v in [ds.users, ds.batch_size, ds.dim] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for x in ds.data.iter().chain(&ds.clean) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    pack_bits(&ds.good_user, &mut out);
    pack_bits(&ds.sample_clean, &mut out);
    for x in &ds.target_mean {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&ds.seed.to_le_bytes());
    match &ds.user_means {
        Some(m) => {
            out.push(1);
            for x in m {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        None => out.push(0),
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn bits(&mut self, count: usize) -> Result<Vec<bool>> {
        let raw = self.take(count.div_ceil(8))?;
        Ok((0..count).map(|k| raw[k / 8] >> (k % 8) & 1 == 1).collect())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<BatchDataset> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim_of = |v: u64| usize::try_from(v).map_err(|_| Error::Format("dimension overflow".into()));
    let users = dim_of(r.u64()?)?;
    let batch_size = dim_of(r.u64()?)?;
    let dim = dim_of(r.u64()?)?;
    if users == 0 || batch_size == 0 || dim == 0 {
        return Err(Error::Format("zero extent in header".into()));
    }
    let cells = users
        .checked_mul(batch_size)
        .ok_or_else(|| Error::Format("size overflow".into()))?;
    let values = cells
        .checked_mul(dim)
        .ok_or_else(|| Error::Format("size overflow".into()))?;
    let data = r.f64s(values)?;
    let clean = r.f64s(values)?;
    let good_user = r.bits(users)?;
    let sample_clean = r.bits(cells)?;
    let target_mean = r.f64s(dim)?;
    let seed = r.u64()?;
    let user_means = match r.u8()? {
        0 => None,
        1 => Some(r.f64s(users * dim)?),
        other => return Err(Error::Format(format!("bad user-means marker {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(BatchDataset {
        users,
        batch_size,
        dim,
        data,
        clean,
        good_user,
        sample_clean,
        user_means,
        target_mean,
        seed,
    })
}

pub fn write_dataset(ds: &BatchDataset, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(ds)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<BatchDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Observed values only, one row per sample: `user,sample,x0,...`.
pub fn write_csv(ds: &BatchDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["user".to_string(), "sample".to_string()];
    header.extend((0..ds.dim).map(|c| format!("x{c}")));
    w.write_record(&header)?;
    for i in 0..ds.users {
        for j in 0..ds.batch_size {
            let mut row = vec![i.to_string(), j.to_string()];
            row.extend(ds.sample(i, j).iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
