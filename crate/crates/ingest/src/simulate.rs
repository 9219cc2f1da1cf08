//! Stand-in for a field sensor: streams a clip as sequenced frames.

use std::io::{self, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use woodpest::audio::{load_wav, to_pcm16, write_pcm16, AudioClip, ClipLabel};
use woodpest::synth::{gen_clip, SynthConfig};

use crate::frame::{encode_frame, DeviceFrame, FrameError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimSource {
    Wav { path: PathBuf },
    Synth { config: SynthConfig, label: ClipLabel, seed: u64 },
}

impl SimSource {
    /// PCM samples and their rate.
    pub fn pcm(&self) -> woodpest::Result<(Vec<i16>, u32)> {
        let clip: AudioClip = match self {
            SimSource::Wav { path } => load_wav(path)?,
            SimSource::Synth { config, label, seed } => gen_clip(*label, config, *seed)?,
        };
        Ok((clip.samples().iter().map(|&v| to_pcm16(v)).collect(), clip.sample_rate()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub addr: String,
    pub device_id: u64,
    pub frame_samples: usize,
    /// Pace frames at the sample rate instead of sending at full speed.
    pub realtime: bool,
    /// Local copy of the streamed audio, as the device would keep on its card.
    pub local_dump: Option<PathBuf>,
    pub first_seq: u32,
}

impl SimConfig {
    pub fn new(addr: impl Into<String>, device_id: u64) -> Self {
        Self { addr: addr.into(), device_id, frame_samples: 2500, realtime: false, local_dump: None, first_seq: 0 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("source: {0}")]
    Source(#[from] woodpest::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("frame: {0}")]
    Frame(#[from] FrameError),
    #[error("transport error after {sent} frames: {source}")]
    Transport { sent: usize, source: io::Error },
}

/// Splits PCM into sequenced frames of at most `frame_samples` samples.
pub fn frames_for(device_id: u64, first_seq: u32, rate: u32, pcm: &[i16], frame_samples: usize) -> Vec<DeviceFrame> {
    pcm.chunks(frame_samples.max(1))
        .enumerate()
        .map(|(i, chunk)| DeviceFrame::from_samples(device_id, first_seq.wrapping_add(i as u32), rate, chunk))
        .collect()
}

/// Streams `pcm` to a server; returns the number of frames sent.
pub fn stream_pcm(cfg: &SimConfig, pcm: &[i16], rate: u32) -> Result<usize, SimError> {
    if cfg.frame_samples == 0 {
        return Err(SimError::Config("frame size must be at least one sample".into()));
    }
    if rate == 0 {
        return Err(SimError::Config("sample rate must be positive".into()));
    }
    if let Some(path) = &cfg.local_dump {
        write_pcm16(path, pcm, rate)?;
    }
    let mut stream = TcpStream::connect(&cfg.addr).map_err(|source| SimError::Transport { sent: 0, source })?;
    stream.set_nodelay(true).map_err(|source| SimError::Transport { sent: 0, source })?;
    let start = Instant::now();
    let mut sent = 0;
    let mut samples_sent = 0usize;
    for frame in frames_for(cfg.device_id, cfg.first_seq, rate, pcm, cfg.frame_samples) {
        samples_sent += frame.n_samples();
        if cfg.realtime {
            // a frame leaves the device once its last sample has been captured
            let due = Duration::from_secs_f64(samples_sent as f64 / rate as f64);
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                thread::sleep(wait);
            }
        }
        stream.write_all(&encode_frame(&frame)?).map_err(|source| SimError::Transport { sent, source })?;
        sent += 1;
    }
    stream.flush().map_err(|source| SimError::Transport { sent, source })?;
    log::info!("device {}: sent {sent} frames in {:.2?}", cfg.device_id, start.elapsed());
    Ok(sent)
}

pub fn simulate_device(cfg: &SimConfig, source: &SimSource) -> Result<usize, SimError> {
    let (pcm, rate) = source.pcm()?;
    stream_pcm(cfg, &pcm, rate)
}
