//! Binary persistence of multi-channel shot records.
//!
//! Layout (little-endian): `b"CTRC"`, version `u32`, channel count `u32`,
//! sample rate `f64`, shot length `u64`, shot count `u64`, then `f32` I/Q
//! pairs ordered shot, channel, sample.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::quantum::C64;
use crate::readout::ShotRecord;

pub const MAGIC: [u8; 4] = *b"CTRC";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 36;

#[derive(Clone, Debug, PartialEq)]
pub struct RecordSet {
    pub sample_rate: f64,
    /// `shots[s][c]` is channel `c` of shot `s`.
    pub shots: Vec<Vec<ShotRecord>>,
}

impl RecordSet {
    pub fn new(sample_rate: f64, shots: Vec<Vec<ShotRecord>>) -> Result<Self> {
        let set = Self { sample_rate, shots };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(invalid("sample_rate", "must be positive and finite"));
        }
        let (ch, len) = self.shape();
        for (s, shot) in self.shots.iter().enumerate() {
            if shot.len() != ch {
                return Err(Error::ShotMisalignment {
                    channel: s,
                    expected: ch,
                    got: shot.len(),
                });
            }
            for (c, r) in shot.iter().enumerate() {
                if r.len() != len {
                    return Err(Error::ShotMisalignment {
                        channel: c,
                        expected: len,
                        got: r.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// `(channels, shot length)`.
    pub fn shape(&self) -> (usize, usize) {
        match self.shots.first() {
            Some(s) => (s.len(), s.first().map_or(0, |r| r.len())),
            None => (0, 0),
        }
    }

    pub fn encoded_len(&self) -> usize {
        let (c, l) = self.shape();
        encoded_size(c, l, self.shots.len()) as usize
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        self.validate()?;
        let (ch, len) = self.shape();
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(ch as u32).to_le_bytes())?;
        w.write_all(&self.sample_rate.to_le_bytes())?;
        w.write_all(&(len as u64).to_le_bytes())?;
        w.write_all(&(self.shots.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(len * 8);
        for shot in &self.shots {
            for r in shot {
                buf.clear();
                for z in &r.samples {
                    buf.extend_from_slice(&(z.re as f32).to_le_bytes());
                    buf.extend_from_slice(&(z.im as f32).to_le_bytes());
                }
                w.write_all(&buf)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut h = [0u8; HEADER_LEN];
        read_exact(r, &mut h, "header")?;
        if h[..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:02x?}", &h[..4])));
        }
        let u32_at = |i: usize| u32::from_le_bytes(h[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_le_bytes(h[i..i + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let ch = u32_at(8) as usize;
        let sample_rate = f64::from_bits(u64_at(12));
        let len = usize::try_from(u64_at(20))
            .map_err(|_| Error::Format("shot length overflows".into()))?;
        let count = usize::try_from(u64_at(28))
            .map_err(|_| Error::Format("shot count overflows".into()))?;
        ch.checked_mul(len)
            .and_then(|v| v.checked_mul(count))
            .and_then(|v| v.checked_mul(8))
            .ok_or_else(|| Error::Format("payload size overflows".into()))?;
        let period = 1.0 / sample_rate;
        let mut buf = vec![0u8; len * 8];
        let mut shots = Vec::with_capacity(count.min(1 << 20));
        for s in 0..count {
            let mut shot = Vec::with_capacity(ch);
            for c in 0..ch {
                read_exact(r, &mut buf, &format!("shot {s} channel {c}"))?;
                let samples = buf
                    .chunks_exact(8)
                    .map(|b| {
                        C64::new(
                            f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
                            f32::from_le_bytes(b[4..].try_into().unwrap()) as f64,
                        )
                    })
                    .collect();
                shot.push(ShotRecord {
                    samples,
                    sample_period: period,
                    channel_id: c,
                });
            }
            shots.push(shot);
        }
        Self::new(sample_rate, shots)
    }

    /// One row per sample: `shot,channel,sample,i,q`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("shot,channel,sample,i,q\n");
        for (k, shot) in self.shots.iter().enumerate() {
            for (c, r) in shot.iter().enumerate() {
                for (j, z) in r.samples.iter().enumerate() {
                    s.push_str(&format!("{k},{c},{j},{},{}\n", z.re as f32, z.im as f32));
                }
            }
        }
        s
    }
}

/// Bytes on disk for `shots` shots of `channels` records of `len` samples.
pub fn encoded_size(channels: usize, len: usize, shots: usize) -> u64 {
    HEADER_LEN as u64 + shots as u64 * channels as u64 * len as u64 * 8
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            Error::Format(format!("truncated file while reading {what}"))
        }
        _ => Error::Io(e),
    })
}

pub fn persist_records(records: &RecordSet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    records.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_records(path: &Path) -> Result<RecordSet> {
    RecordSet::read_from(&mut BufReader::new(File::open(path)?))
}
