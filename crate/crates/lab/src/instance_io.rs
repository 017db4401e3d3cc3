//! Binary dump of a problem instance.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic     8 bytes  b"SPDYNINS"
//! version   u32      1
//! M         u64
//! N         u64
//! seed      u64
//! sigma0_2  f64
//! A         M*N f64, row-major
//! x0        N f64
//! omega     M f64
//! y         M f64
//! ```
//!
//! The prior is not part of the file; the loader takes it as an argument.
//! `y` is stored for external readers and checked on load against
//! `A x0 + omega`.

use std::io::{Read, Write};
use std::path::Path;

use sparsedyn_core::{DenseMatrix, Prior, ProblemInstance};

use crate::error::{LabError, Result};

pub const MAGIC: &[u8; 8] = b"SPDYNINS";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 + 8 + 8 + 8;

pub fn encode(inst: &ProblemInstance) -> Vec<u8> {
    let (m, n) = (inst.m(), inst.n());
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (m * n + n + 2 * m));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m as u64).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&inst.seed().to_le_bytes());
    out.extend_from_slice(&inst.sigma0_2().to_le_bytes());
    for block in [inst.a().as_slice(), inst.x0(), inst.omega(), inst.y()] {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Header fields of an instance file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Header {
    pub version: u32,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub sigma0_2: f64,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| {
                LabError::Format(format!(
                    "truncated at byte {} (wanted {len} more)",
                    self.pos
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let len = count
            .checked_mul(8)
            .ok_or_else(|| LabError::Format("size overflow".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn read_header(cur: &mut Cursor<'_>) -> Result<Header> {
    if cur.take(8)? != MAGIC {
        return Err(LabError::Format("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(LabError::Format(format!("unsupported version {version}")));
    }
    let m = cur.u64()? as usize;
    let n = cur.u64()? as usize;
    let seed = cur.u64()?;
    let sigma0_2 = f64::from_bits(cur.u64()?);
    Ok(Header {
        version,
        m,
        n,
        seed,
        sigma0_2,
    })
}

pub fn decode_header(bytes: &[u8]) -> Result<Header> {
    read_header(&mut Cursor { bytes, pos: 0 })
}

pub fn decode(bytes: &[u8], prior: Prior) -> Result<ProblemInstance> {
    let mut cur = Cursor { bytes, pos: 0 };
    let h = read_header(&mut cur)?;
    let a = cur.f64s(
        h.m.checked_mul(h.n)
            .ok_or_else(|| LabError::Format("size overflow".into()))?,
    )?;
    let x0 = cur.f64s(h.n)?;
    let omega = cur.f64s(h.m)?;
    let y = cur.f64s(h.m)?;
    if cur.pos != bytes.len() {
        return Err(LabError::Format(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    let a = DenseMatrix::from_row_major(h.m, h.n, a)?;
    let inst = ProblemInstance::from_parts(a, x0, omega, h.sigma0_2, h.seed, prior)?;
    if inst.y() != y.as_slice() {
        return Err(LabError::Format(
            "stored y differs from A x0 + omega".into(),
        ));
    }
    Ok(inst)
}

pub fn dump(inst: &ProblemInstance, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| LabError::io(path, e))?;
    f.write_all(&encode(inst))
        .map_err(|e| LabError::io(path, e))
}

pub fn load(path: &Path, prior: Prior) -> Result<ProblemInstance> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| LabError::io(path, e))?;
    decode(&bytes, prior)
}

pub fn read_header_from(path: &Path) -> Result<Header> {
    let mut buf = [0u8; HEADER_LEN];
    std::fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut buf))
        .map_err(|e| LabError::io(path, e))?;
    decode_header(&buf)
}
