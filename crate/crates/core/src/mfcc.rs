//! MFCC extraction: centered STFT, Slaney mel filterbank, dB, orthonormal DCT-II.
//!
//! Every stage is a free function so it can be tested in isolation;
//! [`FeatureExtractor`] precomputes the window, filterbank and DCT basis for a
//! fixed configuration and is what the pipeline uses per clip.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Power below which mel energies are floored before taking the log.
pub const DEFAULT_LOG_FLOOR: f64 = 1e-10;
/// Minimum standard deviation kept by [`StandardizeStats`].
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub n_mfcc: usize,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            fft_size: 2048,
            hop: 512,
            n_mels: 128,
            fmin: 0.0,
            fmax: 8000.0,
            n_mfcc: 40,
            log_floor: DEFAULT_LOG_FLOOR,
        }
    }
}

impl FeatureConfig {
    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if !self.fft_size.is_power_of_two() || self.fft_size < 2 {
            return Err(Error::invalid(format!("fft_size {} is not a power of two", self.fft_size)));
        }
        if self.hop == 0 {
            return Err(Error::invalid("hop must be positive"));
        }
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        let nyquist = sample_rate as f64 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax) {
            return Err(Error::invalid(format!("need 0 <= fmin < fmax, got {}..{}", self.fmin, self.fmax)));
        }
        if self.fmax > nyquist {
            return Err(Error::invalid(format!("fmax {} exceeds Nyquist {nyquist}", self.fmax)));
        }
        if self.n_mels == 0 || self.n_mfcc == 0 || self.n_mfcc > self.n_mels {
            return Err(Error::invalid(format!(
                "need 1 <= n_mfcc <= n_mels, got {} and {}",
                self.n_mfcc, self.n_mels
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::invalid("log floor must be positive"));
        }
        Ok(())
    }
}

/// `T x n_mfcc` coefficients, row-major by frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Serialize + DeserializeOwned")]
pub struct MfccMatrix<T> {
    pub n_frames: usize,
    pub n_coeffs: usize,
    pub values: Vec<T>,
    /// Center time of each frame in seconds.
    pub frame_times: Vec<f64>,
}

impl<T: Scalar> MfccMatrix<T> {
    pub fn from_rows(rows: &[Vec<T>], hop_s: f64) -> Result<Self> {
        let n_coeffs = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_coeffs) {
            return Err(Error::shape("ragged MFCC rows"));
        }
        Ok(Self {
            n_frames: rows.len(),
            n_coeffs,
            values: rows.concat(),
            frame_times: (0..rows.len()).map(|t| t as f64 * hop_s).collect(),
        })
    }

    pub fn row(&self, t: usize) -> &[T] {
        &self.values[t * self.n_coeffs..(t + 1) * self.n_coeffs]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.values.chunks_exact(self.n_coeffs.max(1)).take(self.n_frames)
    }

    pub fn get(&self, t: usize, k: usize) -> T {
        self.values[t * self.n_coeffs + k]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Time-averaged coefficients of one clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Serialize + DeserializeOwned")]
pub struct MfccVector<T> {
    pub values: Vec<T>,
}

/// Per-coefficient mean and standard deviation, fit on training frames only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Serialize + DeserializeOwned")]
pub struct StandardizeStats<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

/// Periodic Hann window `0.5 - 0.5 cos(2πk/n)`.
pub fn hann_window<T: Scalar>(n: usize) -> Result<Vec<T>> {
    if n == 0 {
        return Err(Error::invalid("window length must be at least 1"));
    }
    Ok((0..n)
        .map(|k| T::lit(0.5 - 0.5 * (2.0 * PI * k as f64 / n as f64).cos()))
        .collect())
}

/// `1 + floor(len / hop)`.
pub fn frame_count(num_samples: usize, hop: usize) -> usize {
    1 + num_samples / hop
}

// numpy-style "reflect" (edge sample not repeated), periodic for short signals
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

fn fill_frame<T: Scalar>(signal: &[T], start: isize, window: &[T], out: &mut [T]) {
    if signal.is_empty() {
        out.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let n = signal.len();
    for (j, (o, &w)) in out.iter_mut().zip(window).enumerate() {
        let idx = start + j as isize;
        let s = if idx >= 0 && (idx as usize) < n {
            signal[idx as usize]
        } else {
            signal[reflect_index(idx, n)]
        };
        *o = s * w;
    }
}

/// Centered, reflect-padded, Hann-windowed frames.
pub fn frame_signal<T: Scalar>(signal: &[T], cfg: &FeatureConfig) -> Result<Vec<Vec<T>>> {
    if cfg.hop == 0 {
        return Err(Error::invalid("hop must be positive"));
    }
    let window = hann_window::<T>(cfg.fft_size)?;
    let half = (cfg.fft_size / 2) as isize;
    Ok((0..frame_count(signal.len(), cfg.hop))
        .map(|t| {
            let mut frame = vec![T::zero(); cfg.fft_size];
            fill_frame(signal, (t * cfg.hop) as isize - half, &window, &mut frame);
            frame
        })
        .collect())
}

/// One-sided `|X[k]|²`, `k = 0..=n/2`.
pub fn power_spectrum<T: Scalar>(frame: &[T]) -> Result<Vec<T>> {
    if frame.is_empty() {
        return Err(Error::invalid("empty frame"));
    }
    let fft = FftPlanner::<T>::new().plan_fft_forward(frame.len());
    let mut buf: Vec<Complex<T>> = frame.iter().map(|&re| Complex::new(re, T::zero())).collect();
    fft.process(&mut buf);
    Ok(buf[..frame.len() / 2 + 1].iter().map(|c| c.norm_sqr()).collect())
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel<T: Scalar>(hz: T) -> Result<T> {
    if !(hz >= T::zero()) {
        return Err(Error::invalid("frequency must be non-negative"));
    }
    let hz = hz.to_f64().unwrap_or(0.0);
    let mel = if hz < 1000.0 { 3.0 * hz / 200.0 } else { 15.0 + 27.0 * (hz / 1000.0).ln() / 6.4f64.ln() };
    Ok(T::lit(mel))
}

/// Inverse of [`hz_to_mel`].
pub fn mel_to_hz<T: Scalar>(mel: T) -> Result<T> {
    if !(mel >= T::zero()) {
        return Err(Error::invalid("mel value must be non-negative"));
    }
    let mel = mel.to_f64().unwrap_or(0.0);
    let hz = if mel < 15.0 { 200.0 * mel / 3.0 } else { 1000.0 * ((mel - 15.0) * 6.4f64.ln() / 27.0).exp() };
    Ok(T::lit(hz))
}

/// Area-normalized triangular filters, stored densely with per-row support.
#[derive(Clone, Debug)]
pub struct MelFilterbank<T> {
    pub n_mels: usize,
    pub n_bins: usize,
    weights: Vec<T>,
    support: Vec<(usize, usize)>,
}

impl<T: Scalar> MelFilterbank<T> {
    pub fn row(&self, i: usize) -> &[T] {
        &self.weights[i * self.n_bins..(i + 1) * self.n_bins]
    }

    pub fn get(&self, i: usize, k: usize) -> T {
        self.weights[i * self.n_bins + k]
    }

    /// Mel-band energies of a one-sided power spectrum.
    pub fn apply(&self, power: &[T], out: &mut [T]) {
        for (i, o) in out.iter_mut().enumerate().take(self.n_mels) {
            let (lo, hi) = self.support[i];
            let row = self.row(i);
            *o = row[lo..hi].iter().zip(&power[lo..hi]).fold(T::zero(), |acc, (&w, &p)| acc + w * p);
        }
    }
}

pub fn mel_filterbank<T: Scalar>(cfg: &FeatureConfig, sample_rate: u32) -> Result<MelFilterbank<T>> {
    cfg.validate(sample_rate)?;
    let n_bins = cfg.n_bins();
    let mel_lo: f64 = hz_to_mel(cfg.fmin)?;
    let mel_hi: f64 = hz_to_mel(cfg.fmax)?;
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect::<Result<_>>()?;
    let bin_hz = sample_rate as f64 / cfg.fft_size as f64;
    let mut weights = vec![T::zero(); cfg.n_mels * n_bins];
    let mut support = Vec::with_capacity(cfg.n_mels);
    for i in 0..cfg.n_mels {
        let (left, center, right) = (edges[i], edges[i + 1], edges[i + 2]);
        let norm = 2.0 / (right - left);
        let (mut lo, mut hi) = (n_bins, 0);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let rising = (f - left) / (center - left);
            let falling = (right - f) / (right - center);
            let w = rising.min(falling).max(0.0) * norm;
            if w > 0.0 {
                weights[i * n_bins + k] = T::lit(w);
                lo = lo.min(k);
                hi = hi.max(k + 1);
            }
        }
        support.push(if lo < hi { (lo, hi) } else { (0, 0) });
    }
    Ok(MelFilterbank { n_mels: cfg.n_mels, n_bins, weights, support })
}

/// `10 log10(max(power, 1e-10))`.
pub fn power_to_db<T: Scalar>(power: T) -> T {
    power_to_db_floored(power, T::lit(DEFAULT_LOG_FLOOR))
}

pub fn power_to_db_floored<T: Scalar>(power: T, floor: T) -> T {
    T::lit(10.0) * power.max(floor).log10()
}

/// Orthonormal DCT-II, first `keep` coefficients.
pub fn dct2_ortho<T: Scalar>(x: &[T], keep: usize) -> Result<Vec<T>> {
    let n = x.len();
    if keep == 0 || keep > n {
        return Err(Error::invalid(format!("keep {keep} outside 1..={n}")));
    }
    let basis = dct_matrix::<T>(n, keep);
    Ok(basis
        .chunks_exact(n)
        .map(|row| row.iter().zip(x).fold(T::zero(), |acc, (&b, &v)| acc + b * v))
        .collect())
}

/// `keep x n` row-major DCT-II basis.
fn dct_matrix<T: Scalar>(n: usize, keep: usize) -> Vec<T> {
    let mut basis = Vec::with_capacity(n * keep);
    for k in 0..keep {
        let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            basis.push(T::lit(scale * (PI * (i as f64 + 0.5) * k as f64 / n as f64).cos()));
        }
    }
    basis
}

/// Precomputed extraction state for one configuration and sample rate.
///
/// Immutable after construction, so one instance can serve many threads.
#[derive(Clone)]
pub struct FeatureExtractor<T: Scalar> {
    cfg: FeatureConfig,
    sample_rate: u32,
    window: Vec<T>,
    filterbank: MelFilterbank<T>,
    dct: Vec<T>,
    fft: Arc<dyn Fft<T>>,
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new(cfg: FeatureConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate(sample_rate)?;
        Ok(Self {
            window: hann_window(cfg.fft_size)?,
            filterbank: mel_filterbank(&cfg, sample_rate)?,
            dct: dct_matrix(cfg.n_mels, cfg.n_mfcc),
            fft: FftPlanner::new().plan_fft_forward(cfg.fft_size),
            cfg,
            sample_rate,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn filterbank(&self) -> &MelFilterbank<T> {
        &self.filterbank
    }

    /// MFCC frames of a signal sampled at this extractor's rate.
    pub fn extract(&self, signal: &[T]) -> MfccMatrix<T> {
        let cfg = &self.cfg;
        let n_frames = frame_count(signal.len(), cfg.hop);
        let half = (cfg.fft_size / 2) as isize;
        let floor = T::lit(cfg.log_floor);

        let mut frame = vec![T::zero(); cfg.fft_size];
        let mut spectrum = vec![Complex::new(T::zero(), T::zero()); cfg.fft_size];
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); self.fft.get_inplace_scratch_len()];
        let mut power = vec![T::zero(); cfg.n_bins()];
        let mut mel = vec![T::zero(); cfg.n_mels];
        let mut values = Vec::with_capacity(n_frames * cfg.n_mfcc);

        for t in 0..n_frames {
            fill_frame(signal, (t * cfg.hop) as isize - half, &self.window, &mut frame);
            for (c, &v) in spectrum.iter_mut().zip(&frame) {
                *c = Complex::new(v, T::zero());
            }
            self.fft.process_with_scratch(&mut spectrum, &mut scratch);
            for (p, c) in power.iter_mut().zip(&spectrum) {
                *p = c.norm_sqr();
            }
            self.filterbank.apply(&power, &mut mel);
            mel.iter_mut().for_each(|m| *m = power_to_db_floored(*m, floor));
            values.extend(
                self.dct
                    .chunks_exact(cfg.n_mels)
                    .map(|row| row.iter().zip(&mel).fold(T::zero(), |acc, (&b, &v)| acc + b * v)),
            );
        }

        let hop_s = cfg.hop as f64 / self.sample_rate as f64;
        MfccMatrix {
            n_frames,
            n_coeffs: cfg.n_mfcc,
            values,
            frame_times: (0..n_frames).map(|t| t as f64 * hop_s).collect(),
        }
    }

    /// Extracts from a clip, which must already be at this extractor's rate.
    pub fn extract_clip(&self, clip: &AudioClip) -> Result<MfccMatrix<T>> {
        if clip.sample_rate() != self.sample_rate {
            return Err(Error::invalid(format!(
                "clip is at {} Hz, extractor expects {} Hz",
                clip.sample_rate(),
                self.sample_rate
            )));
        }
        let signal: Vec<T> = clip.samples().iter().map(|&s| T::lit(s)).collect();
        Ok(self.extract(&signal))
    }
}

/// One-shot MFCC extraction at the clip's own rate.
pub fn mfcc_frames<T: Scalar>(clip: &AudioClip, cfg: &FeatureConfig) -> Result<MfccMatrix<T>> {
    FeatureExtractor::new(cfg.clone(), clip.sample_rate())?.extract_clip(clip)
}

/// Mean over frames for each coefficient.
pub fn mfcc_mean<T: Scalar>(matrix: &MfccMatrix<T>) -> Result<MfccVector<T>> {
    if matrix.n_frames == 0 {
        return Err(Error::invalid("cannot average an empty MFCC matrix"));
    }
    let mut sums = vec![T::zero(); matrix.n_coeffs];
    for row in matrix.rows() {
        for (s, &v) in sums.iter_mut().zip(row) {
            *s = *s + v;
        }
    }
    let n = T::lit(matrix.n_frames as f64);
    Ok(MfccVector { values: sums.into_iter().map(|s| s / n).collect() })
}

/// Fits per-coefficient mean and population standard deviation over every frame.
pub fn fit_standardize<T: Scalar>(matrices: &[&MfccMatrix<T>]) -> Result<StandardizeStats<T>> {
    let first = matrices.first().ok_or_else(|| Error::invalid("no training matrices"))?;
    let width = first.n_coeffs;
    if matrices.iter().any(|m| m.n_coeffs != width) {
        return Err(Error::shape("matrices disagree on coefficient count"));
    }
    let count: usize = matrices.iter().map(|m| m.n_frames).sum();
    if count == 0 {
        return Err(Error::invalid("training matrices contain no frames"));
    }
    let n = T::lit(count as f64);
    let mut mean = vec![T::zero(); width];
    for row in matrices.iter().flat_map(|m| m.rows()) {
        for (acc, &v) in mean.iter_mut().zip(row) {
            *acc = *acc + v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / n);
    let mut var = vec![T::zero(); width];
    for row in matrices.iter().flat_map(|m| m.rows()) {
        for ((acc, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
            *acc = *acc + (v - mu) * (v - mu);
        }
    }
    let floor = T::lit(STD_FLOOR);
    let std = var
        .into_iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s < floor {
                T::one()
            } else {
                s
            }
        })
        .collect();
    Ok(StandardizeStats { mean, std })
}

impl<T: Scalar> StandardizeStats<T> {
    pub fn apply_row(&self, row: &mut [T]) {
        for ((v, &mu), &sd) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - mu) / sd;
        }
    }

    pub fn apply(&self, matrix: &MfccMatrix<T>) -> Result<MfccMatrix<T>> {
        if matrix.n_coeffs != self.mean.len() {
            return Err(Error::shape(format!(
                "stats cover {} coefficients, matrix has {}",
                self.mean.len(),
                matrix.n_coeffs
            )));
        }
        let mut out = matrix.clone();
        for row in out.values.chunks_exact_mut(matrix.n_coeffs.max(1)) {
            self.apply_row(row);
        }
        Ok(out)
    }

    pub fn apply_vector(&self, vector: &MfccVector<T>) -> Result<MfccVector<T>> {
        if vector.values.len() != self.mean.len() {
            return Err(Error::shape("stats and vector disagree on length"));
        }
        let mut out = vector.clone();
        self.apply_row(&mut out.values);
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> StandardizeStats<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::lit(x.to_f64().unwrap_or(0.0))).collect();
        StandardizeStats { mean: conv(&self.mean), std: conv(&self.std) }
    }
}

pub fn apply_standardize<T: Scalar>(matrix: &MfccMatrix<T>, stats: &StandardizeStats<T>) -> Result<MfccMatrix<T>> {
    stats.apply(matrix)
}
