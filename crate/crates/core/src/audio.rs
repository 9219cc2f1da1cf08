//! Mono PCM clips and the RIFF/WAVE PCM16 codec.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample rate every pipeline resamples to on entry.
pub const CANONICAL_RATE: u32 = 16_000;
/// Clip duration fed to the sequence models.
pub const CANONICAL_CLIP_SECONDS: f64 = 5.0;
/// `CANONICAL_RATE * CANONICAL_CLIP_SECONDS`.
pub const CANONICAL_CLIP_SAMPLES: usize = 80_000;

const PCM16_SCALE: f64 = 32768.0;

/// The two classes. Integer codes are stable: `Clean = 0`, `Infested = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipLabel {
    Clean = 0,
    Infested = 1,
}

impl ClipLabel {
    pub const ALL: [ClipLabel; 2] = [ClipLabel::Clean, ClipLabel::Infested];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        match code {
            0 => Some(ClipLabel::Clean),
            1 => Some(ClipLabel::Infested),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClipLabel::Clean => "clean",
            ClipLabel::Infested => "infested",
        }
    }
}

impl fmt::Display for ClipLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClipLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clean" | "0" => Ok(ClipLabel::Clean),
            "infested" | "1" => Ok(ClipLabel::Infested),
            other => Err(Error::invalid(format!("unknown label {other:?}"))),
        }
    }
}

/// Mono audio with amplitudes in `[-1, 1]`. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
    source_id: Option<String>,
}

impl AudioClip {
    /// Builds a clip, clamping samples into `[-1, 1]` (NaN becomes 0).
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        let samples = samples
            .into_iter()
            .map(|s| if s.is_nan() { 0.0 } else { s.clamp(-1.0, 1.0) })
            .collect();
        Ok(Self { samples, sample_rate, source_id: None })
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = Some(id.into());
        self
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn source_id(&self) -> Option<&str> {
        self.source_id.as_deref()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Quantizes an amplitude to PCM16: `round(x * 32768)` saturated to the i16 range.
pub fn to_pcm16(x: f64) -> i16 {
    (x * PCM16_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn from_pcm16(v: i16) -> f64 {
    v as f64 / PCM16_SCALE
}

/// Raw interleaved PCM16 content of a WAV file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pcm16Wav {
    pub sample_rate: u32,
    pub channels: u16,
    pub samples: Vec<i16>,
}

impl Pcm16Wav {
    /// Averages channels into a mono clip.
    pub fn to_clip(&self) -> Result<AudioClip> {
        let ch = self.channels as usize;
        let mono = self
            .samples
            .chunks_exact(ch)
            .map(|frame| frame.iter().map(|&s| from_pcm16(s)).sum::<f64>() / ch as f64)
            .collect();
        AudioClip::new(mono, self.sample_rate)
    }
}

const WAVE_FORMAT_PCM: u16 = 1;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 3;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parses a RIFF/WAVE byte stream holding 16-bit integer PCM (mono or stereo).
pub fn decode_pcm16(bytes: &[u8]) -> Result<Pcm16Wav> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("missing RIFF/WAVE header".into()));
    }
    let mut fmt: Option<(u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Format(format!("chunk {:?} overruns file", String::from_utf8_lossy(id))))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::Format("fmt chunk too short".into()));
                }
                let mut tag = u16_at(body, 0);
                let channels = u16_at(body, 2);
                let rate = u32_at(body, 4);
                let bits = u16_at(body, 14);
                if tag == WAVE_FORMAT_EXTENSIBLE {
                    if body.len() < 26 {
                        return Err(Error::Format("extensible fmt chunk too short".into()));
                    }
                    tag = u16_at(body, 24);
                }
                match tag {
                    WAVE_FORMAT_PCM => {}
                    WAVE_FORMAT_IEEE_FLOAT => {
                        return Err(Error::UnsupportedFormat("floating-point samples".into()))
                    }
                    other => {
                        return Err(Error::UnsupportedFormat(format!("format tag {other:#06x}")))
                    }
                }
                if bits != 16 {
                    return Err(Error::UnsupportedFormat(format!("{bits}-bit samples")));
                }
                if channels == 0 || channels > 2 {
                    return Err(Error::UnsupportedFormat(format!("{channels} channels")));
                }
                if rate == 0 {
                    return Err(Error::Format("zero sample rate".into()));
                }
                fmt = Some((tag, rate, channels));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
    let (_, sample_rate, channels) = fmt.ok_or_else(|| Error::Format("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Format("missing data chunk".into()))?;
    let frame_bytes = 2 * channels as usize;
    if data.len() % frame_bytes != 0 {
        return Err(Error::Format("data chunk is not a whole number of frames".into()));
    }
    let samples = data.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
    Ok(Pcm16Wav { sample_rate, channels, samples })
}

/// Serializes mono PCM16 samples as a canonical 44-byte-header WAV stream.
pub fn encode_pcm16(samples: &[i16], sample_rate: u32) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn read_pcm16(path: impl AsRef<Path>) -> Result<Pcm16Wav> {
    decode_pcm16(&fs::read(path)?)
}

pub fn write_pcm16(path: impl AsRef<Path>, samples: &[i16], sample_rate: u32) -> Result<()> {
    fs::write(path, encode_pcm16(samples, sample_rate))?;
    Ok(())
}

/// Loads a PCM16 WAV file as a mono clip; the file stem becomes the source id.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let clip = read_pcm16(path)?.to_clip()?;
    Ok(match path.file_stem().and_then(|s| s.to_str()) {
        Some(stem) => clip.with_source_id(stem),
        None => clip,
    })
}

/// Writes a clip as mono PCM16.
pub fn save_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let pcm: Vec<i16> = clip.samples().iter().map(|&s| to_pcm16(s)).collect();
    write_pcm16(path, &pcm, clip.sample_rate())
}

/// Linear-interpolation resampler with edge hold at the end of the clip.
pub fn resample_linear(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::invalid("target rate must be positive"));
    }
    if target_rate == clip.sample_rate() {
        return Ok(clip.clone());
    }
    let src = clip.samples();
    let ratio = clip.sample_rate() as f64 / target_rate as f64;
    let out_len = (src.len() as f64 * target_rate as f64 / clip.sample_rate() as f64).round() as usize;
    let last = src.len().saturating_sub(1);
    let out = (0..out_len)
        .map(|j| {
            let pos = j as f64 * ratio;
            let i = (pos.floor() as usize).min(last);
            let frac = pos - i as f64;
            let next = (i + 1).min(last);
            src[i] * (1.0 - frac) + src[next] * frac
        })
        .collect();
    let mut resampled = AudioClip::new(out, target_rate)?;
    resampled.source_id = clip.source_id.clone();
    Ok(resampled)
}

/// Splits into consecutive non-overlapping windows of `length_s`, zero-padding the tail.
///
/// An empty clip yields one all-zero segment.
pub fn segment_clip(clip: &AudioClip, length_s: f64) -> Result<Vec<AudioClip>> {
    if !(length_s > 0.0) || !length_s.is_finite() {
        return Err(Error::invalid("segment length must be positive"));
    }
    let seg_len = (length_s * clip.sample_rate() as f64).round() as usize;
    if seg_len == 0 {
        return Err(Error::invalid("segment length is shorter than one sample"));
    }
    let src = clip.samples();
    let count = src.len().div_ceil(seg_len).max(1);
    (0..count)
        .map(|i| {
            let start = (i * seg_len).min(src.len());
            let end = (start + seg_len).min(src.len());
            let mut seg = src[start..end].to_vec();
            seg.resize(seg_len, 0.0);
            AudioClip::new(seg, clip.sample_rate())
        })
        .collect()
}
