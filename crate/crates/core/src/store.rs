//! Binary persistence: matrix records, snapshot-store directories, and
//! single-file model containers.
//!
//! Matrix record layout (little-endian, column-major):
//! `magic "EMSLSNAP" | version u32 | rows u64 | cols u64 | rows*cols f64 | crc32`
//! with the CRC taken over every preceding byte of the record. A container
//! file holds a type tag and named matrix records followed by a trailing
//! CRC32 over the whole file. Snapshot stores are directories with a
//! `manifest.txt` (key=value) plus one record file per matrix.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"EMSLSNAP";
const VERSION: u32 = 1;

fn checksum_error(path: &Path) -> Error {
    Error::ChecksumMismatch {
        path: path.display().to_string(),
    }
}

struct CrcWriter<W: Write> {
    inner: W,
    hasher: crc32fast::Hasher,
}

impl<W: Write> CrcWriter<W> {
    fn new(inner: W) -> Self {
        Self {
            inner,
            hasher: crc32fast::Hasher::new(),
        }
    }

    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.hasher.update(bytes);
        self.inner.write_all(bytes)?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        let crc = self.hasher.finalize();
        self.inner.write_all(&crc.to_le_bytes())?;
        Ok(())
    }
}

struct CrcReader<R: Read> {
    inner: R,
    hasher: crc32fast::Hasher,
    path: std::path::PathBuf,
}

impl<R: Read> CrcReader<R> {
    fn new(inner: R, path: &Path) -> Self {
        Self {
            inner,
            hasher: crc32fast::Hasher::new(),
            path: path.to_path_buf(),
        }
    }

    fn take(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|_| checksum_error(&self.path))?;
        self.hasher.update(buf);
        Ok(())
    }

    fn take_u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn take_u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.take(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn verify(mut self) -> Result<()> {
        let expect = self.hasher.clone().finalize();
        let mut b = [0u8; 4];
        self.inner
            .read_exact(&mut b)
            .map_err(|_| checksum_error(&self.path))?;
        if u32::from_le_bytes(b) != expect {
            return Err(checksum_error(&self.path));
        }
        Ok(())
    }
}

fn put_matrix<W: Write>(w: &mut CrcWriter<W>, m: &DMatrix<f64>) -> Result<()> {
    w.put(MAGIC)?;
    w.put(&VERSION.to_le_bytes())?;
    w.put(&(m.nrows() as u64).to_le_bytes())?;
    w.put(&(m.ncols() as u64).to_le_bytes())?;
    for v in m.as_slice() {
        w.put(&v.to_le_bytes())?;
    }
    Ok(())
}

fn take_matrix<R: Read>(r: &mut CrcReader<R>) -> Result<DMatrix<f64>> {
    let mut magic = [0u8; 8];
    r.take(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::FormatVersionMismatch { found: 0 });
    }
    let version = r.take_u32()?;
    if version != VERSION {
        return Err(Error::FormatVersionMismatch { found: version });
    }
    let rows = r.take_u64()? as usize;
    let cols = r.take_u64()? as usize;
    let mut data = vec![0.0f64; rows * cols];
    let mut b = [0u8; 8];
    for v in &mut data {
        r.take(&mut b)?;
        *v = f64::from_le_bytes(b);
    }
    Ok(DMatrix::from_vec(rows, cols, data))
}

/// Write one matrix record to its own file (snapshot-store layout).
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut w = CrcWriter::new(file);
    put_matrix(&mut w, m)?;
    w.finish()
}

/// Read one matrix record file, verifying version and checksum.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut r = CrcReader::new(file, path);
    let m = take_matrix(&mut r)?;
    r.verify()?;
    Ok(m)
}

pub fn write_vector(path: &Path, v: &DVector<f64>) -> Result<()> {
    write_matrix(path, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}

pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix(path)?;
    Ok(DVector::from_column_slice(m.as_slice()))
}

/// Single-file container with a type tag and named matrix records.
#[derive(Debug, Clone)]
pub struct Container {
    pub tag: String,
    pub entries: Vec<(String, DMatrix<f64>)>,
}

impl Container {
    pub fn new(tag: &str) -> Self {
        Self {
            tag: tag.to_string(),
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, m: DMatrix<f64>) {
        self.entries.push((name.to_string(), m));
    }

    pub fn push_vector(&mut self, name: &str, v: &DVector<f64>) {
        self.push(name, DMatrix::from_column_slice(v.len(), 1, v.as_slice()));
    }

    pub fn push_scalar(&mut self, name: &str, s: f64) {
        self.push(name, DMatrix::from_element(1, 1, s));
    }

    pub fn get(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Config(format!("container entry '{name}' missing")))
    }

    pub fn get_vector(&self, name: &str) -> Result<DVector<f64>> {
        Ok(DVector::from_column_slice(self.get(name)?.as_slice()))
    }

    pub fn get_scalar(&self, name: &str) -> Result<f64> {
        let m = self.get(name)?;
        if m.len() != 1 {
            return Err(Error::Config(format!(
                "container entry '{name}' is not scalar"
            )));
        }
        Ok(m[(0, 0)])
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut w = CrcWriter::new(file);
        w.put(MAGIC)?;
        w.put(&VERSION.to_le_bytes())?;
        w.put(&(self.tag.len() as u32).to_le_bytes())?;
        w.put(self.tag.as_bytes())?;
        w.put(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, m) in &self.entries {
            w.put(&(name.len() as u32).to_le_bytes())?;
            w.put(name.as_bytes())?;
            put_matrix(&mut w, m)?;
        }
        w.finish()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut r = CrcReader::new(file, path);
        let mut magic = [0u8; 8];
        r.take(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::FormatVersionMismatch { found: 0 });
        }
        let version = r.take_u32()?;
        if version != VERSION {
            return Err(Error::FormatVersionMismatch { found: version });
        }
        let tag_len = r.take_u32()? as usize;
        let mut tag = vec![0u8; tag_len];
        r.take(&mut tag)?;
        let tag = String::from_utf8(tag).map_err(|_| checksum_error(path))?;
        let n = r.take_u32()? as usize;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let name_len = r.take_u32()? as usize;
            let mut name = vec![0u8; name_len];
            r.take(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| checksum_error(path))?;
            let m = take_matrix(&mut r)?;
            entries.push((name, m));
        }
        r.verify()?;
        Ok(Self { tag, entries })
    }
}

/// Text manifest with key=value lines; floats are stored as raw bit patterns
/// for lossless round trips.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn set_f64(&mut self, key: &str, value: f64) {
        self.set(key, value.to_bits());
        self.set(&format!("{key}.display"), format!("{value:.17e}"));
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Config(format!("manifest key '{key}' missing")))
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::Config(format!("manifest key '{key}' unparseable")))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        Ok(f64::from_bits(self.get_parsed::<u64>(key)?))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("{k} = {v}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad manifest line: {line}")))?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }
}
