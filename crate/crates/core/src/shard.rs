//! Binary shard files holding pre-rendered / pre-tokenized records.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! header : b"PXSHARD1" | u16 version = 1 | u32 record_count | u16 patch_px | u8 channels
//! record : u8 modality (0 = text, 1 = pixel, 2 = pair)
//!          u32 n_patches | u32 n_tokens
//!          n_patches * patch_px^2 * channels raw pixel bytes (rows, columns, channels)
//!          n_tokens * u32 token ids
//!          attention bitset over n_patches + n_tokens positions, LSB first, byte padded
//!          loss bitset, same shape
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::{Error, Result};

pub const SHARD_MAGIC: &[u8; 8] = b"PXSHARD1";
pub const SHARD_VERSION: u16 = 1;
const MAX_ELEMENTS: u32 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Modality {
    Text = 0,
    Pixel = 1,
    Pair = 2,
}

impl Modality {
    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Self::Text),
            1 => Some(Self::Pixel),
            2 => Some(Self::Pair),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Text => "text",
            Self::Pixel => "pixel",
            Self::Pair => "pair",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShardHeader {
    pub version: u16,
    pub record_count: u32,
    pub patch_px: u16,
    pub channels: u8,
}

impl ShardHeader {
    pub fn patch_dim(&self) -> usize {
        self.patch_px as usize * self.patch_px as usize * self.channels as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardRecord {
    pub modality: Modality,
    pub n_patches: usize,
    /// `n_patches * patch_dim` raw bytes.
    pub patches: Vec<u8>,
    pub tokens: Vec<u32>,
    /// Over `n_patches + tokens.len()` positions, patches first.
    pub attention_mask: Vec<bool>,
    pub loss_mask: Vec<bool>,
}

impl ShardRecord {
    pub fn len(&self) -> usize {
        self.n_patches + self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, patch_dim: usize) -> Result<()> {
        if self.patches.len() != self.n_patches * patch_dim {
            return Err(Error::Shape(format!(
                "record declares {} patches of dimension {patch_dim} but carries {} bytes",
                self.n_patches,
                self.patches.len()
            )));
        }
        if self.attention_mask.len() != self.len() || self.loss_mask.len() != self.len() {
            return Err(Error::Shape("mask length does not match record length".into()));
        }
        Ok(())
    }
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect()
}

/// Streaming writer; the record count is patched into the header on
/// [`ShardWriter::finish`].
pub struct ShardWriter<W: Write + Seek> {
    inner: W,
    patch_dim: usize,
    count: u32,
}

impl ShardWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, patch_px: u16, channels: u8) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?), patch_px, channels)
    }
}

impl<W: Write + Seek> ShardWriter<W> {
    pub fn new(mut inner: W, patch_px: u16, channels: u8) -> Result<Self> {
        inner.write_all(SHARD_MAGIC)?;
        inner.write_all(&SHARD_VERSION.to_le_bytes())?;
        inner.write_all(&0u32.to_le_bytes())?;
        inner.write_all(&patch_px.to_le_bytes())?;
        inner.write_all(&[channels])?;
        let patch_dim = patch_px as usize * patch_px as usize * channels as usize;
        Ok(Self { inner, patch_dim, count: 0 })
    }

    pub fn push(&mut self, rec: &ShardRecord) -> Result<()> {
        rec.check(self.patch_dim)?;
        let w = &mut self.inner;
        w.write_all(&[rec.modality as u8])?;
        w.write_all(&(rec.n_patches as u32).to_le_bytes())?;
        w.write_all(&(rec.tokens.len() as u32).to_le_bytes())?;
        w.write_all(&rec.patches)?;
        for t in &rec.tokens {
            w.write_all(&t.to_le_bytes())?;
        }
        w.write_all(&pack_bits(&rec.attention_mask))?;
        w.write_all(&pack_bits(&rec.loss_mask))?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.seek(SeekFrom::Start(10))?;
        self.inner.write_all(&self.count.to_le_bytes())?;
        self.inner.seek(SeekFrom::End(0))?;
        self.inner.flush()?;
        Ok(self.inner)
    }
}

fn corrupt(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::CorruptShard("unexpected end of file".into())
    } else {
        Error::Io(e)
    }
}

/// Streaming reader yielding one record at a time.
pub struct ShardReader<R: Read> {
    inner: R,
    header: ShardHeader,
    remaining: u32,
}

impl ShardReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> ShardReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut buf = [0u8; 17];
        inner.read_exact(&mut buf).map_err(corrupt)?;
        if &buf[..8] != SHARD_MAGIC {
            return Err(Error::CorruptShard("bad magic".into()));
        }
        let version = u16::from_le_bytes([buf[8], buf[9]]);
        if version != SHARD_VERSION {
            return Err(Error::CorruptShard(format!("unsupported version {version}")));
        }
        let header = ShardHeader {
            version,
            record_count: u32::from_le_bytes(buf[10..14].try_into().unwrap()),
            patch_px: u16::from_le_bytes([buf[14], buf[15]]),
            channels: buf[16],
        };
        Ok(Self { inner, header, remaining: header.record_count })
    }

    pub fn header(&self) -> ShardHeader {
        self.header
    }

    fn read_record(&mut self) -> Result<ShardRecord> {
        let r = &mut self.inner;
        let mut head = [0u8; 9];
        r.read_exact(&mut head).map_err(corrupt)?;
        let modality =
            Modality::from_tag(head[0]).ok_or_else(|| Error::CorruptShard(format!("bad modality tag {}", head[0])))?;
        let n_patches = u32::from_le_bytes(head[1..5].try_into().unwrap());
        let n_tokens = u32::from_le_bytes(head[5..9].try_into().unwrap());
        if n_patches > MAX_ELEMENTS || n_tokens > MAX_ELEMENTS {
            return Err(Error::CorruptShard("implausible record length".into()));
        }
        let (n_patches, n_tokens) = (n_patches as usize, n_tokens as usize);
        let mut patches = vec![0u8; n_patches * self.header.patch_dim()];
        r.read_exact(&mut patches).map_err(corrupt)?;
        let mut tok_bytes = vec![0u8; n_tokens * 4];
        r.read_exact(&mut tok_bytes).map_err(corrupt)?;
        let tokens = tok_bytes.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect();
        let n = n_patches + n_tokens;
        let mut bits = vec![0u8; n.div_ceil(8)];
        r.read_exact(&mut bits).map_err(corrupt)?;
        let attention_mask = unpack_bits(&bits, n);
        r.read_exact(&mut bits).map_err(corrupt)?;
        let loss_mask = unpack_bits(&bits, n);
        Ok(ShardRecord { modality, n_patches, patches, tokens, attention_mask, loss_mask })
    }
}

impl<R: Read> Iterator for ShardReader<R> {
    type Item = Result<ShardRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let rec = self.read_record();
        if rec.is_err() {
            self.remaining = 0;
        }
        Some(rec)
    }
}

pub fn write_shard(path: impl AsRef<Path>, patch_px: u16, channels: u8, records: &[ShardRecord]) -> Result<()> {
    let mut w = ShardWriter::create(path, patch_px, channels)?;
    for r in records {
        w.push(r)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_shard(path: impl AsRef<Path>) -> Result<(ShardHeader, Vec<ShardRecord>)> {
    let reader = ShardReader::open(path)?;
    let header = reader.header();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}
