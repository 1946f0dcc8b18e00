//! Little-endian binary tensor serialization.
//!
//! Layout: magic bytes `PTX1`, rank as u32, one u64 per extent, then the
//! raw f64 data. Readers track their byte offset so a truncated or corrupt
//! stream reports exactly where it failed.

use super::{Tensor, TensorError, MAX_RANK};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"PTX1";

#[derive(Debug, Error)]
pub enum TensorIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic at offset 0: expected PTX1, found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("truncated stream at offset {offset}: {context}")]
    Truncated { offset: u64, context: &'static str },
    #[error("invalid tensor header at offset {offset}: {reason}")]
    InvalidHeader { offset: u64, reason: String },
    #[error("tensor payload invalid: {0}")]
    Tensor(#[from] TensorError),
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn read_exact_at(&mut self, buf: &mut [u8], context: &'static str) -> Result<(), TensorIoError> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(TensorIoError::Truncated {
                offset: self.offset,
                context,
            }),
            Err(e) => Err(e.into()),
        }
    }
}

impl Tensor {
    /// Writes `magic | rank | extents | data` to the stream.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), TensorIoError> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.rank() as u32).to_le_bytes())?;
        for &e in self.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for &v in self.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads one tensor from the stream, returning it and the bytes consumed.
    pub fn read_from<R: Read>(r: &mut R) -> Result<(Tensor, u64), TensorIoError> {
        let mut cr = CountingReader { inner: r, offset: 0 };
        let mut magic = [0u8; 4];
        cr.read_exact_at(&mut magic, "magic bytes")?;
        if &magic != MAGIC {
            return Err(TensorIoError::BadMagic { found: magic });
        }
        let mut rank_buf = [0u8; 4];
        cr.read_exact_at(&mut rank_buf, "rank")?;
        let rank = u32::from_le_bytes(rank_buf) as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(TensorIoError::InvalidHeader {
                offset: cr.offset,
                reason: format!("rank {rank} outside 1..={MAX_RANK}"),
            });
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut ext = [0u8; 8];
            cr.read_exact_at(&mut ext, "extent")?;
            let e = u64::from_le_bytes(ext);
            if e == 0 || e > 1 << 32 {
                return Err(TensorIoError::InvalidHeader {
                    offset: cr.offset,
                    reason: format!("extent {e} out of range"),
                });
            }
            shape.push(e as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0f64; numel];
        for v in data.iter_mut() {
            let mut buf = [0u8; 8];
            cr.read_exact_at(&mut buf, "f64 payload")?;
            *v = f64::from_le_bytes(buf);
        }
        let offset = cr.offset;
        Ok((Tensor::from_vec(shape, data)?, offset))
    }

    pub fn save(&self, path: &Path) -> Result<(), TensorIoError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Tensor, TensorIoError> {
        let mut r = BufReader::new(File::open(path)?);
        Ok(Tensor::read_from(&mut r)?.0)
    }
}
