//! QTAG binary tag streams: a 16-byte header followed by 9-byte records
//! (`u64` LE picosecond timestamp, `u8` channel).

use std::io::{self, BufRead, BufReader, ErrorKind, Read, Write};

use super::{ChannelMap, TimeTag};

pub const QTAG_MAGIC: [u8; 4] = *b"QTAG";
pub const QTAG_VERSION: u16 = 1;
const HEADER_LEN: u64 = 16;
const RECORD_LEN: u64 = 9;

#[derive(Debug, thiserror::Error)]
pub enum TagFileError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad header at byte {offset}: {reason}")]
    Header { offset: u64, reason: String },
    #[error("truncated record at byte {offset}")]
    Truncated { offset: u64 },
    #[error("timestamp regression at byte {offset}")]
    NonMonotonic { offset: u64 },
    #[error("channel {channel} out of range at byte {offset}")]
    Channel { offset: u64, channel: u8 },
}

impl TagFileError {
    /// Byte offset of the offending header field or record, if any.
    pub fn offset(&self) -> Option<u64> {
        match self {
            TagFileError::Io(_) => None,
            TagFileError::Header { offset, .. }
            | TagFileError::Truncated { offset }
            | TagFileError::NonMonotonic { offset }
            | TagFileError::Channel { offset, .. } => Some(*offset),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagFileHeader {
    pub version: u16,
    pub channel_count: u16,
}

fn record_offset(k: u64) -> u64 {
    HEADER_LEN + RECORD_LEN * k
}

fn check_record(prev: Option<u64>, tag: TimeTag, channel_count: u16, k: u64) -> Result<(), TagFileError> {
    let offset = record_offset(k);
    if u16::from(tag.channel) >= channel_count {
        return Err(TagFileError::Channel {
            offset,
            channel: tag.channel,
        });
    }
    if prev.is_some_and(|p| tag.timestamp < p) {
        return Err(TagFileError::NonMonotonic { offset });
    }
    Ok(())
}

/// Serialize `tags`, which must be sorted by timestamp.
pub fn write_tags<W: Write>(tags: &[TimeTag], channel_count: u16, w: W) -> Result<(), TagFileError> {
    let mut writer = TagWriter::new(w, channel_count)?;
    writer.extend(tags)?;
    writer.finish()?;
    Ok(())
}

/// Incremental writer; records must arrive in timestamp order across calls.
pub struct TagWriter<W: Write> {
    inner: io::BufWriter<W>,
    channel_count: u16,
    written: u64,
    prev: Option<u64>,
}

impl<W: Write> TagWriter<W> {
    pub fn new(w: W, channel_count: u16) -> Result<Self, TagFileError> {
        let mut inner = io::BufWriter::new(w);
        let mut header = [0u8; HEADER_LEN as usize];
        header[..4].copy_from_slice(&QTAG_MAGIC);
        header[4..6].copy_from_slice(&QTAG_VERSION.to_le_bytes());
        header[6..8].copy_from_slice(&channel_count.to_le_bytes());
        inner.write_all(&header)?;
        Ok(Self {
            inner,
            channel_count,
            written: 0,
            prev: None,
        })
    }

    pub fn extend(&mut self, tags: &[TimeTag]) -> Result<(), TagFileError> {
        for &tag in tags {
            check_record(self.prev, tag, self.channel_count, self.written)?;
            self.prev = Some(tag.timestamp);
            let mut rec = [0u8; RECORD_LEN as usize];
            rec[..8].copy_from_slice(&tag.timestamp.to_le_bytes());
            rec[8] = tag.channel;
            self.inner.write_all(&rec)?;
            self.written += 1;
        }
        Ok(())
    }

    pub fn records(&self) -> u64 {
        self.written
    }

    pub fn finish(mut self) -> Result<W, TagFileError> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| TagFileError::Io(e.into_error()))
    }
}

/// Streaming, validating reader.
pub struct TagReader<R> {
    inner: BufReader<R>,
    header: TagFileHeader,
    index: u64,
    prev: Option<u64>,
    failed: bool,
}

impl<R: Read> TagReader<R> {
    pub fn new(r: R) -> Result<Self, TagFileError> {
        let mut inner = BufReader::new(r);
        let mut header = [0u8; HEADER_LEN as usize];
        let got = read_full(&mut inner, &mut header)?;
        if got < header.len() {
            return Err(TagFileError::Header {
                offset: got as u64,
                reason: "header shorter than 16 bytes".into(),
            });
        }
        if header[..4] != QTAG_MAGIC {
            return Err(TagFileError::Header {
                offset: 0,
                reason: "missing QTAG magic".into(),
            });
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != QTAG_VERSION {
            return Err(TagFileError::Header {
                offset: 4,
                reason: format!("unsupported version {version}"),
            });
        }
        let channel_count = u16::from_le_bytes([header[6], header[7]]);
        Ok(Self {
            inner,
            header: TagFileHeader { version, channel_count },
            index: 0,
            prev: None,
            failed: false,
        })
    }

    pub fn header(&self) -> TagFileHeader {
        self.header
    }
}

fn read_full<R: BufRead>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

impl<R: Read> Iterator for TagReader<R> {
    type Item = Result<TimeTag, TagFileError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let mut rec = [0u8; RECORD_LEN as usize];
        let result = match read_full(&mut self.inner, &mut rec) {
            Ok(0) => return None,
            Ok(n) if n < rec.len() => Err(TagFileError::Truncated {
                offset: record_offset(self.index),
            }),
            Ok(_) => {
                let tag = TimeTag {
                    timestamp: u64::from_le_bytes(rec[..8].try_into().unwrap()),
                    channel: rec[8],
                };
                check_record(self.prev, tag, self.header.channel_count, self.index).map(|()| tag)
            }
            Err(e) => Err(e.into()),
        };
        match &result {
            Ok(tag) => {
                self.prev = Some(tag.timestamp);
                self.index += 1;
            }
            Err(_) => self.failed = true,
        }
        Some(result)
    }
}

pub fn read_tags<R: Read>(r: R) -> Result<(TagFileHeader, Vec<TimeTag>), TagFileError> {
    let reader = TagReader::new(r)?;
    let header = reader.header();
    let tags = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((header, tags))
}

/// Human-readable dump: `timestamp,channel,party,basis,outcome`.
pub fn write_tag_csv<W: Write>(tags: &[TimeTag], map: &ChannelMap, mut w: W) -> io::Result<()> {
    writeln!(w, "timestamp,channel,party,basis,outcome")?;
    for t in tags {
        match map.lookup(t.channel) {
            Some(info) => writeln!(w, "{},{},{},{},{}", t.timestamp, t.channel, info.party, info.basis, info.outcome.sign())?,
            None => writeln!(w, "{},{},,,", t.timestamp, t.channel)?,
        }
    }
    w.flush()
}
