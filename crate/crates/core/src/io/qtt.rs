//! QTT1 time-tag files.
//!
//! Little-endian throughout. A 16-byte header (`QTT1`, u16 version, u32
//! resolution in fs, u16 channel count, u32 reserved) is followed by 12-byte
//! records (u64 timestamp in resolution units, u16 channel, u16 flags).
//! Records are non-decreasing in time. The stream duration is not stored.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{EventStream, Picos, TimeTag};

pub const MAGIC: [u8; 4] = *b"QTT1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 12;
/// 1 ps.
pub const DEFAULT_RESOLUTION_FS: u32 = 1000;

fn header(n_channels: u16) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(&MAGIC);
    h[4..6].copy_from_slice(&VERSION.to_le_bytes());
    h[6..10].copy_from_slice(&DEFAULT_RESOLUTION_FS.to_le_bytes());
    h[10..12].copy_from_slice(&n_channels.to_le_bytes());
    h
}

/// Incremental writer; tags must arrive in time order.
pub struct QttWriter<W: Write> {
    out: W,
    last: Picos,
    n_channels: u16,
    written: u64,
}

impl QttWriter<BufWriter<File>> {
    pub fn create(path: &Path, n_channels: u16) -> Result<Self> {
        QttWriter::new(BufWriter::with_capacity(1 << 20, File::create(path)?), n_channels)
    }
}

impl<W: Write> QttWriter<W> {
    pub fn new(mut out: W, n_channels: u16) -> Result<Self> {
        out.write_all(&header(n_channels))?;
        Ok(QttWriter {
            out,
            last: 0,
            n_channels,
            written: 0,
        })
    }

    pub fn write_tag(&mut self, tag: TimeTag) -> Result<()> {
        if tag.time < self.last {
            return Err(Error::input(format!(
                "tag {} at {} ps precedes the previous tag at {} ps",
                self.written, tag.time, self.last
            )));
        }
        if tag.channel >= self.n_channels {
            return Err(Error::input(format!("channel {} not declared", tag.channel)));
        }
        self.last = tag.time;
        let mut rec = [0u8; RECORD_LEN];
        rec[..8].copy_from_slice(&(tag.time as u64).to_le_bytes());
        rec[8..10].copy_from_slice(&tag.channel.to_le_bytes());
        self.out.write_all(&rec)?;
        self.written += 1;
        Ok(())
    }

    pub fn write_all(&mut self, tags: &[TimeTag]) -> Result<()> {
        tags.iter().try_for_each(|t| self.write_tag(*t))
    }

    pub fn records_written(&self) -> u64 {
        self.written
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_tags_to<W: Write>(stream: &EventStream, out: W) -> Result<W> {
    let mut w = QttWriter::new(out, stream.n_channels())?;
    w.write_all(stream.tags())?;
    w.finish()
}

pub fn write_tags(stream: &EventStream, path: &Path) -> Result<()> {
    let f = BufWriter::with_capacity(1 << 20, File::create(path)?);
    write_tags_to(stream, f)?;
    Ok(())
}

/// Header fields of a QTT1 file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QttHeader {
    pub version: u16,
    pub resolution_fs: u32,
    pub n_channels: u16,
}

pub fn parse_header(bytes: &[u8]) -> Result<QttHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("file shorter than the {HEADER_LEN}-byte header")));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic; not a QTT1 file".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported QTT1 version {version}")));
    }
    let resolution_fs = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    if resolution_fs == 0 {
        return Err(Error::Format("zero time resolution".into()));
    }
    Ok(QttHeader {
        version,
        resolution_fs,
        n_channels: u16::from_le_bytes([bytes[10], bytes[11]]),
    })
}

/// Decodes a complete QTT1 image. The stream duration is set just past
/// the last tag.
pub fn decode(bytes: &[u8]) -> Result<EventStream> {
    let h = parse_header(bytes)?;
    let body = &bytes[HEADER_LEN..];
    if body.len() % RECORD_LEN != 0 {
        return Err(Error::Format(format!(
            "truncated record: {} trailing bytes",
            body.len() % RECORD_LEN
        )));
    }
    let res = h.resolution_fs as u128;
    let mut tags = Vec::with_capacity(body.len() / RECORD_LEN);
    let mut last = 0u64;
    for (i, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let ts = u64::from_le_bytes(rec[..8].try_into().unwrap());
        let channel = u16::from_le_bytes([rec[8], rec[9]]);
        if ts < last {
            return Err(Error::Corruption {
                index: i as u64,
                reason: format!("timestamp {ts} decreases from {last}"),
            });
        }
        if channel >= h.n_channels {
            return Err(Error::Corruption {
                index: i as u64,
                reason: format!("channel {channel} outside the declared {}", h.n_channels),
            });
        }
        last = ts;
        let ps = if res == 1000 { ts as u128 } else { ts as u128 * res / 1000 };
        if ps > i64::MAX as u128 - 1 {
            return Err(Error::Corruption {
                index: i as u64,
                reason: "timestamp out of range".into(),
            });
        }
        tags.push(TimeTag::new(ps as Picos, channel));
    }
    let duration = tags.last().map_or(0, |t| t.time + 1);
    EventStream::new(tags, h.n_channels, duration)
}

pub fn read_tags(path: &Path) -> Result<EventStream> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode(&bytes)
}
