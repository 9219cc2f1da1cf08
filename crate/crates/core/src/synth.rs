//! Synthetic clean and infested clips.
//!
//! Clean clips are pink noise. Infested clips add a Poisson number of decaying
//! band-limited noise bursts ("clicks") to the same kind of background, scaled
//! so the click-to-noise energy ratio equals the configured SNR. Both classes
//! are peak-normalized to [`PEAK_AMPLITUDE`] after mixing, which leaves the
//! ratio untouched.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{save_wav, AudioClip, ClipLabel, CANONICAL_CLIP_SECONDS, CANONICAL_RATE};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, stream_rng};

pub const PEAK_AMPLITUDE: f64 = 0.5;

// Streams of one clip seed: the background, then everything click-related.
const STREAM_NOISE: u64 = 0;
const STREAM_CLICKS: u64 = 1;

/// Envelope length in decay time constants; exp(-8) is below PCM16 resolution.
const BURST_TAUS: f64 = 8.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub sample_rate: u32,
    pub duration_s: f64,
    /// Mean clicks per second.
    pub click_rate: f64,
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    /// Exponential decay time constant of a click, seconds.
    pub decay_s: f64,
    pub snr_db: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sample_rate: CANONICAL_RATE,
            duration_s: CANONICAL_CLIP_SECONDS,
            click_rate: 8.0,
            band_low_hz: 3000.0,
            band_high_hz: 6000.0,
            decay_s: 0.005,
            snr_db: 10.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::invalid("sample rate and duration must be positive"));
        }
        if !(self.click_rate > 0.0 && self.click_rate.is_finite()) {
            return Err(Error::invalid(format!("click rate must be positive, got {}", self.click_rate)));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.band_low_hz >= 0.0 && self.band_low_hz < self.band_high_hz && self.band_high_hz <= nyquist) {
            return Err(Error::invalid(format!(
                "click band {}..{} Hz must lie within 0..{nyquist} Hz",
                self.band_low_hz, self.band_high_hz
            )));
        }
        if !(self.decay_s > 0.0 && self.decay_s.is_finite()) {
            return Err(Error::invalid("click decay must be positive"));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::invalid("SNR must be finite"));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    pub fn expected_clicks(&self) -> f64 {
        self.click_rate * self.duration_s
    }
}

/// Gaussian noise shaped to a 1/f power spectrum (no DC), not normalized.
pub fn pink_noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(rng.sample(StandardNormal), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for (k, c) in buf.iter_mut().enumerate().skip(1) {
        // amplitude 1/sqrt(f) gives power 1/f; symmetric in k so the result stays real
        *c /= (k.min(n - k) as f64).sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// One click: white noise band-limited to the configured band, times `exp(-t / decay)`.
pub fn click_burst<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Vec<f64> {
    let rate = cfg.sample_rate as f64;
    let len = (BURST_TAUS * cfg.decay_s * rate).ceil().max(1.0) as usize;
    let mut buf: Vec<Complex<f64>> = (0..len).map(|_| Complex::new(rng.sample(StandardNormal), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(len - k) as f64 * rate / len as f64;
        if f < cfg.band_low_hz || f > cfg.band_high_hz {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    buf.iter()
        .enumerate()
        .map(|(i, c)| c.re / len as f64 * (-(i as f64) / (cfg.decay_s * rate)).exp())
        .collect()
}

fn peak(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Background for a clip seed, shared by both classes.
fn background(cfg: &SynthConfig, seed: u64) -> Vec<f64> {
    pink_noise(cfg.n_samples(), &mut stream_rng(seed, STREAM_NOISE))
}

pub fn gen_clean_clip(cfg: &SynthConfig, seed: u64) -> Result<AudioClip> {
    cfg.validate()?;
    let mut x = background(cfg, seed);
    let p = peak(&x);
    if p > 0.0 {
        x.iter_mut().for_each(|v| *v *= PEAK_AMPLITUDE / p);
    }
    AudioClip::new(x, cfg.sample_rate)
}

/// An infested clip with its separated components, all at output scale.
#[derive(Clone, Debug, PartialEq)]
pub struct InfestedClip {
    pub clip: AudioClip,
    pub onsets: Vec<usize>,
    /// Click track; `clip = noise + clicks` up to rounding.
    pub clicks: Vec<f64>,
    pub noise: Vec<f64>,
}

impl InfestedClip {
    pub fn n_clicks(&self) -> usize {
        self.onsets.len()
    }

    /// `10 log10(click energy / noise energy)`; `-inf` without clicks.
    pub fn snr_db(&self) -> f64 {
        10.0 * (energy(&self.clicks) / energy(&self.noise)).log10()
    }
}

pub fn gen_infested_clip(cfg: &SynthConfig, seed: u64) -> Result<AudioClip> {
    Ok(gen_infested_detailed(cfg, seed)?.clip)
}

pub fn gen_infested_detailed(cfg: &SynthConfig, seed: u64) -> Result<InfestedClip> {
    cfg.validate()?;
    let n = cfg.n_samples();
    let mut noise = background(cfg, seed);
    let mut rng = stream_rng(seed, STREAM_CLICKS);
    let count = Poisson::new(cfg.expected_clicks())
        .map_err(|e| Error::invalid(format!("click count distribution: {e}")))?
        .sample(&mut rng) as usize;
    let mut onsets: Vec<usize> = Vec::with_capacity(count);
    let mut clicks = vec![0.0; n];
    for _ in 0..count {
        let onset = rng.gen_range(0..n.max(1));
        for (dst, v) in clicks[onset..].iter_mut().zip(click_burst(cfg, &mut rng)) {
            *dst += v;
        }
        onsets.push(onset);
    }
    let click_energy = energy(&clicks);
    if click_energy > 0.0 {
        let gain = (energy(&noise) * 10f64.powf(cfg.snr_db / 10.0) / click_energy).sqrt();
        clicks.iter_mut().for_each(|v| *v *= gain);
    }
    let mut mix: Vec<f64> = noise.iter().zip(&clicks).map(|(a, b)| a + b).collect();
    let p = peak(&mix);
    if p > 0.0 {
        let g = PEAK_AMPLITUDE / p;
        for v in mix.iter_mut().chain(clicks.iter_mut()).chain(noise.iter_mut()) {
            *v *= g;
        }
    }
    Ok(InfestedClip { clip: AudioClip::new(mix, cfg.sample_rate)?, onsets, clicks, noise })
}

pub fn gen_clip(label: ClipLabel, cfg: &SynthConfig, seed: u64) -> Result<AudioClip> {
    match label {
        ClipLabel::Clean => gen_clean_clip(cfg, seed),
        ClipLabel::Infested => gen_infested_clip(cfg, seed),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: ClipLabel,
    pub seed: u64,
    /// Path relative to the dataset root.
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub master_seed: u64,
    pub n_per_class: usize,
    pub config: SynthConfig,
    pub clips: Vec<ManifestEntry>,
}

impl Manifest {
    /// Entry list for a dataset; clip `i` of class `c` uses `derive_seed(master, 2i + c)`.
    pub fn plan(n_per_class: usize, cfg: &SynthConfig, master_seed: u64) -> Result<Self> {
        if n_per_class == 0 {
            return Err(Error::invalid("need at least one clip per class"));
        }
        cfg.validate()?;
        let mut clips = Vec::with_capacity(2 * n_per_class);
        for label in ClipLabel::ALL {
            for i in 0..n_per_class {
                let name = format!("clip_{i:04}");
                clips.push(ManifestEntry {
                    id: format!("{}/{name}", label.as_str()),
                    label,
                    seed: derive_seed(master_seed, 2 * i as u64 + label.code() as u64),
                    path: format!("{}/{name}.wav", label.as_str()),
                });
            }
        }
        Ok(Self { master_seed, n_per_class, config: cfg.clone(), clips })
    }

    /// Synthesizes the clip an entry describes.
    pub fn render(&self, entry: &ManifestEntry) -> Result<AudioClip> {
        Ok(gen_clip(entry.label, &self.config, entry.seed)?.with_source_id(entry.id.clone()))
    }
}

/// Writes `dir/{clean,infested}/clip_NNNN.wav` and `dir/manifest.json`.
pub fn gen_dataset(dir: impl AsRef<Path>, n_per_class: usize, cfg: &SynthConfig, master_seed: u64) -> Result<Manifest> {
    let dir = dir.as_ref();
    let manifest = Manifest::plan(n_per_class, cfg, master_seed)?;
    for label in ClipLabel::ALL {
        fs::create_dir_all(dir.join(label.as_str()))?;
    }
    for entry in &manifest.clips {
        save_wav(&manifest.render(entry)?, dir.join(&entry.path))?;
    }
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    log::info!("wrote {} clips to {}", manifest.clips.len(), dir.display());
    Ok(manifest)
}

/// In-memory clips of a planned dataset, in manifest order.
pub fn render_dataset(manifest: &Manifest) -> Result<Vec<(AudioClip, ClipLabel)>> {
    manifest.clips.iter().map(|e| Ok((manifest.render(e)?, e.label))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_clip_shape_and_determinism() {
        let cfg = SynthConfig::default();
        let a = gen_clean_clip(&cfg, 5).unwrap();
        assert_eq!(a.len(), 80_000);
        assert_eq!(a, gen_clean_clip(&cfg, 5).unwrap());
        assert_ne!(a, gen_clean_clip(&cfg, 6).unwrap());
        assert!((peak(a.samples()) - PEAK_AMPLITUDE).abs() < 1e-12);
    }

    #[test]
    fn infested_components_add_up_at_target_snr() {
        let cfg = SynthConfig::default();
        let d = gen_infested_detailed(&cfg, 3).unwrap();
        assert!(d.n_clicks() > 0);
        assert!((d.snr_db() - 10.0).abs() < 1e-9);
        for ((x, c), n) in d.clip.samples().iter().zip(&d.clicks).zip(&d.noise) {
            assert!((x - (c + n)).abs() < 1e-12);
        }
    }

    #[test]
    fn burst_is_band_limited_and_decays() {
        let cfg = SynthConfig::default();
        let b = click_burst(&cfg, &mut stream_rng(1, 0));
        assert_eq!(b.len(), 640);
        let head = energy(&b[..80]);
        let tail = energy(&b[560..]);
        assert!(tail < head * 1e-4);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            SynthConfig { click_rate: 0.0, ..Default::default() },
            SynthConfig { band_high_hz: 9000.0, ..Default::default() },
            SynthConfig { snr_db: f64::INFINITY, ..Default::default() },
            SynthConfig { decay_s: 0.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(gen_clean_clip(&cfg, 0).is_err());
        }
        assert!(Manifest::plan(0, &SynthConfig::default(), 0).is_err());
    }

    #[test]
    fn plan_assigns_distinct_seeds() {
        let m = Manifest::plan(3, &SynthConfig::default(), 9).unwrap();
        assert_eq!(m.clips.len(), 6);
        assert_eq!(m.clips[4].path, "infested/clip_0001.wav");
        let mut seeds: Vec<u64> = m.clips.iter().map(|c| c.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 6);
    }
}
