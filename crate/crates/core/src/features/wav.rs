use std::fs;
use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

/// Reads a RIFF/WAVE file holding 16-bit PCM or 32-bit float samples.
/// Multi-channel audio is averaged down to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    parse_wav(&fs::read(path)?)
}

pub fn parse_wav(b: &[u8]) -> Result<Waveform> {
    if b.len() < 12 || &b[..4] != b"RIFF" || &b[8..12] != b"WAVE" {
        return Err(Error::format("wav", "not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= b.len() {
        let id = &b[pos..pos + 4];
        let len = u32_at(b, pos + 4) as usize;
        let body = pos + 8;
        let end = body
            .checked_add(len)
            .filter(|&e| e <= b.len())
            .ok_or_else(|| Error::format("wav", "truncated chunk"))?;
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err(Error::format("wav", "short fmt chunk"));
                }
                fmt = Some((u16_at(b, body), u16_at(b, body + 2), u32_at(b, body + 4), u16_at(b, body + 14)));
            }
            b"data" => {
                let (format, channels, rate, bits) =
                    fmt.ok_or_else(|| Error::format("wav", "data chunk before fmt chunk"))?;
                let channels = channels.max(1) as usize;
                let data = &b[body..end];
                let samples: Vec<f64> = match (format, bits) {
                    (1, 16) => data
                        .chunks_exact(2)
                        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                        .collect(),
                    (3, 32) => data
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                        .collect(),
                    _ => {
                        return Err(Error::format(
                            "wav",
                            format!("unsupported encoding: format {format}, {bits} bits"),
                        ))
                    }
                };
                let mono = samples
                    .chunks_exact(channels)
                    .map(|frame| frame.iter().sum::<f64>() / channels as f64)
                    .collect();
                return Waveform::new(mono, rate as f64);
            }
            _ => {}
        }
        pos = end + (len & 1);
    }
    Err(Error::format("wav", "no data chunk"))
}

/// Encodes mono 16-bit PCM.
pub fn encode_wav_pcm16(w: &Waveform) -> Vec<u8> {
    let rate = w.sample_rate.round() as u32;
    let data_len = (w.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}
