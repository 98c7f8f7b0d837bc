//! RIFF/WAVE reading and writing, restricted to 16-bit PCM mono.

use std::fs;
use std::path::Path;

use super::Recording;
use crate::error::{Error, Result};

const PCM_FORMAT_TAG: u16 = 1;
const FULL_SCALE: f64 = 32768.0;

pub fn read_wav(path: impl AsRef<Path>) -> Result<Recording> {
    let bytes = fs::read(path.as_ref())?;
    read_wav_bytes(&bytes)
}

struct Format {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes a complete WAV image. Samples are scaled by 1/32768.
pub fn read_wav_bytes(bytes: &[u8]) -> Result<Recording> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::NotWav);
    }

    let mut format: Option<Format> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).ok_or(Error::TruncatedFile)?;
        if body_end > bytes.len() {
            return Err(Error::TruncatedFile);
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::TruncatedFile);
                }
                format = Some(Format {
                    tag: u16_at(body, 0),
                    channels: u16_at(body, 2),
                    sample_rate: u32_at(body, 4),
                    bits_per_sample: u16_at(body, 14),
                });
            }
            b"data" => {
                data = Some(body);
                break;
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }

    let format = format.ok_or(Error::TruncatedFile)?;
    if format.tag != PCM_FORMAT_TAG {
        return Err(Error::UnsupportedEncoding(format!(
            "format tag {}",
            format.tag
        )));
    }
    if format.channels != 1 {
        return Err(Error::UnsupportedEncoding(format!(
            "{} channels",
            format.channels
        )));
    }
    if format.bits_per_sample != 16 {
        return Err(Error::UnsupportedEncoding(format!(
            "{} bits per sample",
            format.bits_per_sample
        )));
    }
    if format.sample_rate == 0 {
        return Err(Error::UnsupportedEncoding("zero sample rate".into()));
    }
    let data = data.ok_or(Error::TruncatedFile)?;
    if data.len() < 2 || data.len() % 2 != 0 {
        return Err(Error::TruncatedFile);
    }

    let samples = data
        .chunks_exact(2)
        .map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])) / FULL_SCALE)
        .collect();
    Ok(Recording::new(format.sample_rate, samples))
}

/// Encodes samples as PCM16 mono, clamping to the representable range.
pub fn write_wav_bytes(sample_rate_hz: u32, samples: &[f64]) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT_TAG.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let q = (s * FULL_SCALE).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, rec: &Recording) -> Result<()> {
    fs::write(path, write_wav_bytes(rec.sample_rate_hz, &rec.samples))?;
    Ok(())
}
