//! The "PHTS" binary timestamp format.
//!
//! A 16-byte header (magic `PHTS`, format version as `u32`, record count as
//! `u64`) is followed by 12-byte records: channel (`u8`), three reserved
//! zero bytes and the time in picoseconds (`u64`). All integers are little
//! endian. Records are written in time order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::stochastic::TimestampStream;

pub const PHTS_MAGIC: [u8; 4] = *b"PHTS";
pub const PHTS_VERSION: u32 = 1;
const RECORD_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimestampRecord {
    pub time_ps: u64,
    pub channel: u8,
}

/// Merge the streams into one time-ordered record list and write it.
pub fn write_timestamps(mut w: impl Write, streams: &[&TimestampStream]) -> Result<()> {
    let mut records: Vec<TimestampRecord> = streams
        .iter()
        .flat_map(|s| {
            s.times.iter().map(|&time_ps| TimestampRecord {
                time_ps,
                channel: s.channel,
            })
        })
        .collect();
    records.sort_unstable();
    w.write_all(&PHTS_MAGIC)?;
    w.write_all(&PHTS_VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for r in &records {
        let mut buf = [0u8; RECORD_LEN];
        buf[0] = r.channel;
        buf[4..].copy_from_slice(&r.time_ps.to_le_bytes());
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn write_timestamps_file(path: &Path, streams: &[&TimestampStream]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_timestamps(&mut w, streams)?;
    w.flush()?;
    Ok(())
}

fn malformed(message: impl Into<String>) -> Error {
    Error::Format {
        what: "timestamp file",
        message: message.into(),
    }
}

pub fn read_timestamps(mut r: impl Read) -> Result<Vec<TimestampRecord>> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| malformed("shorter than the 16-byte header"))?;
    if header[..4] != PHTS_MAGIC {
        return Err(malformed("missing PHTS magic"));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
    if version != PHTS_VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes"));
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() as u64 != count.saturating_mul(RECORD_LEN as u64) {
        return Err(malformed(format!(
            "header announces {count} records but the body holds {} bytes",
            body.len()
        )));
    }
    body.chunks_exact(RECORD_LEN)
        .map(|c| {
            if c[1..4] != [0, 0, 0] {
                return Err(malformed("reserved bytes must be zero"));
            }
            Ok(TimestampRecord {
                channel: c[0],
                time_ps: u64::from_le_bytes(c[4..].try_into().expect("8 bytes")),
            })
        })
        .collect()
}

pub fn read_timestamps_file(path: &Path) -> Result<Vec<TimestampRecord>> {
    read_timestamps(BufReader::new(File::open(path)?))
}

/// Group records by channel. The duration of each stream is taken as one
/// picosecond past the last record of any channel.
pub fn split_channels(records: &[TimestampRecord]) -> Vec<TimestampStream> {
    let end = records.iter().map(|r| r.time_ps + 1).max().unwrap_or(0);
    let mut channels: Vec<u8> = records.iter().map(|r| r.channel).collect();
    channels.sort_unstable();
    channels.dedup();
    channels
        .into_iter()
        .map(|ch| {
            let times = records.iter().filter(|r| r.channel == ch).map(|r| r.time_ps).collect();
            TimestampStream::new(ch, times, end, 0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let a = TimestampStream::new(3, vec![5, 1_000_000_000_000], 2_000_000_000_000, 1);
        let b = TimestampStream::new(4, vec![7], 2_000_000_000_000, 1);
        let mut buf = Vec::new();
        write_timestamps(&mut buf, &[&a, &b]).unwrap();
        assert_eq!(buf.len(), 16 + 3 * 12);
        assert_eq!(&buf[..4], b"PHTS");
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 3);
        assert_eq!(buf[16 + 12], 4);
        let records = read_timestamps(buf.as_slice()).unwrap();
        assert_eq!(records.iter().map(|r| r.time_ps).collect::<Vec<_>>(), vec![5, 7, 1_000_000_000_000]);
        let streams = split_channels(&records);
        assert_eq!(streams[0].times, a.times);
        assert_eq!(streams[1].times, b.times);
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(read_timestamps(&b"PHT"[..]).is_err());
        let mut buf = Vec::new();
        write_timestamps(&mut buf, &[&TimestampStream::new(1, vec![1, 2], 10, 0)]).unwrap();
        assert!(read_timestamps(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_timestamps(bad.as_slice()).is_err());
        let mut bad = buf;
        bad[17] = 1;
        assert!(read_timestamps(bad.as_slice()).is_err());
    }
}
