//! Minimal RIFF/WAVE codec: mono PCM 16-bit or IEEE float 32-bit.

use std::fs;
use std::path::Path;

use super::Rir;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Bookkeeping returned by [`save_wav`].
#[derive(Debug, Clone, Copy, Default)]
pub struct SaveInfo {
    /// Samples outside [-1, 1] that were clipped during PCM encoding.
    pub clipped: usize,
}

struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

fn read_u16(bytes: &[u8], at: usize) -> Result<u16> {
    bytes
        .get(at..at + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or_else(|| Error::Format("unexpected end of file".into()))
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format("unexpected end of file".into()))
}

fn parse_fmt(chunk: &[u8]) -> Result<FmtChunk> {
    if chunk.len() < 16 {
        return Err(Error::Format("fmt chunk shorter than 16 bytes".into()));
    }
    let mut format = read_u16(chunk, 0)?;
    let channels = read_u16(chunk, 2)?;
    let sample_rate = read_u32(chunk, 4)?;
    let bits_per_sample = read_u16(chunk, 14)?;
    if format == FORMAT_EXTENSIBLE {
        // The real format tag is the first two bytes of the sub-format GUID.
        if chunk.len() < 26 {
            return Err(Error::Format("extensible fmt chunk truncated".into()));
        }
        format = read_u16(chunk, 24)?;
    }
    Ok(FmtChunk {
        format,
        channels,
        sample_rate,
        bits_per_sample,
    })
}

/// Loads a mono RIFF/WAVE file. Integer PCM is scaled by 1/32768 so the
/// negative rail maps exactly to -1.0; float data is passed through.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Rir> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("not a RIFF/WAVE file".into()));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = read_u32(&bytes, at + 4)? as usize;
        let body_start = at + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format("chunk size exceeds file length".into()))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => fmt = Some(parse_fmt(body)?),
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned; odd sizes carry a pad byte.
        at = body_end + (size & 1);
    }

    let fmt = fmt.ok_or_else(|| Error::Format("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Format("missing data chunk".into()))?;
    if fmt.sample_rate == 0 {
        return Err(Error::Format("sample rate must be positive".into()));
    }
    if fmt.channels != 1 {
        return Err(Error::Unsupported(format!(
            "only mono files are supported, got {} channels",
            fmt.channels
        )));
    }

    let samples = match (fmt.format, fmt.bits_per_sample) {
        (FORMAT_PCM, 16) => {
            if data.len() % 2 != 0 {
                return Err(Error::Format("data chunk is not a whole number of samples".into()));
            }
            data.chunks_exact(2)
                .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
                .collect()
        }
        (FORMAT_IEEE_FLOAT, 32) => {
            if data.len() % 4 != 0 {
                return Err(Error::Format("data chunk is not a whole number of samples".into()));
            }
            data.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect()
        }
        (format, bits) => {
            return Err(Error::Unsupported(format!(
                "unsupported encoding: format tag {format}, {bits} bits per sample"
            )))
        }
    };

    Rir::new(samples, fmt.sample_rate)
}

/// Writes a mono RIFF/WAVE file. PCM samples outside [-1, 1] are clipped and
/// counted in the returned [`SaveInfo`].
pub fn save_wav(rir: &Rir, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<SaveInfo> {
    let mut info = SaveInfo::default();
    let n = rir.len();

    let (format, bits, data): (u16, u16, Vec<u8>) = match encoding {
        WavEncoding::Pcm16 => {
            let mut data = Vec::with_capacity(n * 2);
            for &s in rir.samples() {
                if s.abs() > 1.0 {
                    info.clipped += 1;
                }
                let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                data.extend_from_slice(&q.to_le_bytes());
            }
            (FORMAT_PCM, 16, data)
        }
        WavEncoding::Float32 => {
            let mut data = Vec::with_capacity(n * 4);
            for &s in rir.samples() {
                data.extend_from_slice(&(s as f32).to_le_bytes());
            }
            (FORMAT_IEEE_FLOAT, 32, data)
        }
    };

    let block_align = bits / 8;
    let byte_rate = rir.sample_rate() * block_align as u32;
    // fmt (18 bytes, zero extension) + fact + data
    let riff_size = 4 + (8 + 18) + (8 + 4) + (8 + data.len() as u32);

    let mut out = Vec::with_capacity(riff_size as usize + 8);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&riff_size.to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&18u32.to_le_bytes());
    out.extend_from_slice(&format.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rir.sample_rate().to_le_bytes());
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&(block_align).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(b"fact");
    out.extend_from_slice(&4u32.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
    out.extend_from_slice(&data);

    fs::write(path, out)?;
    Ok(info)
}
