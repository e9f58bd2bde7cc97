//! `EMBF` index files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic     4 bytes  "EMBF"
//! version   u32      1
//! count     u32
//! dim       u32      lifted dimension (l + 1)
//! max_norm  f64      the collection scale M
//! rows      count * dim f32, row-major
//! ids       count * (u32 byte length, UTF-8 bytes)
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::flat_index::DocumentStore;
use crate::geometry::CollectionScale;

pub const MAGIC: [u8; 4] = *b"EMBF";
pub const VERSION: u32 = 1;

/// Decoded contents of an `EMBF` file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbfData {
    pub ids: Vec<String>,
    pub vectors: Vec<f32>,
    pub dim: usize,
    pub max_norm: f64,
}

pub fn write_embf<W: Write>(
    mut w: W,
    ids: &[String],
    vectors: &[f32],
    dim: usize,
    max_norm: f64,
) -> Result<()> {
    if vectors.len() != ids.len() * dim {
        return Err(Error::DimensionMismatch {
            expected: ids.len() * dim,
            found: vectors.len(),
        });
    }
    let count = u32::try_from(ids.len())
        .map_err(|_| Error::InvalidParameter("too many rows for EMBF".into()))?;
    let dim32 =
        u32::try_from(dim).map_err(|_| Error::InvalidParameter("dimension too large".into()))?;
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    w.write_all(&dim32.to_le_bytes())?;
    w.write_all(&max_norm.to_le_bytes())?;
    for v in vectors {
        w.write_all(&v.to_le_bytes())?;
    }
    for id in ids {
        let len =
            u32::try_from(id.len()).map_err(|_| Error::InvalidParameter("id too long".into()))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(id.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(eof_as_truncated)?;
    Ok(buf)
}

fn eof_as_truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::TruncatedFile
    } else {
        Error::Io(e)
    }
}

pub fn read_embf<R: Read>(mut r: R) -> Result<EmbfData> {
    let magic: [u8; 4] = read_array(&mut r)?;
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let dim = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let max_norm = f64::from_le_bytes(read_array(&mut r)?);

    let total = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or(Error::TruncatedFile)?;
    let mut bytes = Vec::new();
    (&mut r).take(total as u64).read_to_end(&mut bytes)?;
    if bytes.len() != total {
        return Err(Error::TruncatedFile);
    }
    let vectors = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let mut buf = Vec::new();
        (&mut r).take(len as u64).read_to_end(&mut buf)?;
        if buf.len() != len {
            return Err(Error::TruncatedFile);
        }
        let id = String::from_utf8(buf).map_err(|e| Error::Parse {
            path: "<embf>".into(),
            line: ids.len(),
            message: format!("id is not UTF-8: {e}"),
        })?;
        ids.push(id);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Parse {
            path: "<embf>".into(),
            line: 0,
            message: "trailing bytes after id table".into(),
        });
    }
    Ok(EmbfData {
        ids,
        vectors,
        dim,
        max_norm,
    })
}

/// Returns `true` if the file starts with the `EMBF` magic.
pub fn sniff(path: &Path) -> Result<bool> {
    let mut f = File::open(path)?;
    let mut magic = [0u8; 4];
    match f.read_exact(&mut magic) {
        Ok(()) => Ok(magic == MAGIC),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Ok(false),
        Err(e) => Err(e.into()),
    }
}

impl DocumentStore {
    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        write_embf(
            w,
            self.ids(),
            self.vectors(),
            self.dim(),
            self.scale().max_norm(),
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let data = read_embf(r)?;
        let scale = CollectionScale::new(data.max_norm)?;
        DocumentStore::from_lifted(data.ids, data.vectors, data.dim, scale)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
