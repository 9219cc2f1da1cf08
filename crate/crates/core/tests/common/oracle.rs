//! Brute-force MFCC reference: direct DFT summation, triangles evaluated from
//! the mel formulas, and a direct DCT sum. Shares no code with the library.

#![allow(dead_code)]

use std::f64::consts::PI;

pub const N_FFT: usize = 2048;
pub const HOP: usize = 512;
pub const N_MELS: usize = 128;
pub const N_MFCC: usize = 40;

fn hz_to_mel(hz: f64) -> f64 {
    if hz < 1000.0 {
        3.0 * hz / 200.0
    } else {
        15.0 + 27.0 * (hz / 1000.0).ln() / 6.4f64.ln()
    }
}

fn mel_to_hz(mel: f64) -> f64 {
    if mel < 15.0 {
        200.0 * mel / 3.0
    } else {
        1000.0 * (6.4f64.ln() * (mel - 15.0) / 27.0).exp()
    }
}

/// Triangle `i` of the area-normalized bank at frequency `f`.
pub fn triangle(i: usize, f: f64, fmin: f64, fmax: f64, n_mels: usize) -> f64 {
    let (m0, m1) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edge = |j: usize| mel_to_hz(m0 + (m1 - m0) * j as f64 / (n_mels + 1) as f64);
    let (lo, mid, hi) = (edge(i), edge(i + 1), edge(i + 2));
    let rise = (f - lo) / (mid - lo);
    let fall = (hi - f) / (hi - mid);
    rise.min(fall).max(0.0) * 2.0 / (hi - lo)
}

/// Numpy-style reflect index (edge sample not repeated).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

pub struct Oracle {
    cos: Vec<f64>,
    sin: Vec<f64>,
    window: Vec<f64>,
    bank: Vec<Vec<f64>>,
}

impl Oracle {
    pub fn new(rate: u32) -> Self {
        let rate = rate as f64;
        let cos = (0..N_FFT).map(|j| (2.0 * PI * j as f64 / N_FFT as f64).cos()).collect();
        let sin = (0..N_FFT).map(|j| (2.0 * PI * j as f64 / N_FFT as f64).sin()).collect();
        let window = (0..N_FFT).map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / N_FFT as f64).cos()).collect();
        let bank = (0..N_MELS)
            .map(|i| (0..=N_FFT / 2).map(|k| triangle(i, k as f64 * rate / N_FFT as f64, 0.0, 8000.0, N_MELS)).collect())
            .collect();
        Self { cos, sin, window, bank }
    }

    pub fn power(&self, frame: &[f64]) -> Vec<f64> {
        (0..=N_FFT / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, &x) in frame.iter().enumerate() {
                    let j = (n * k) % N_FFT;
                    re += x * self.cos[j];
                    im -= x * self.sin[j];
                }
                re * re + im * im
            })
            .collect()
    }

    pub fn mfcc(&self, signal: &[f64]) -> Vec<Vec<f64>> {
        let pad = (N_FFT / 2) as isize;
        let n_frames = 1 + signal.len() / HOP;
        (0..n_frames)
            .map(|t| {
                let frame: Vec<f64> = (0..N_FFT)
                    .map(|n| {
                        let src = (t * HOP) as isize + n as isize - pad;
                        let x = if signal.is_empty() { 0.0 } else { signal[reflect(src, signal.len())] };
                        x * self.window[n]
                    })
                    .collect();
                let power = self.power(&frame);
                let db: Vec<f64> = self
                    .bank
                    .iter()
                    .map(|row| 10.0 * row.iter().zip(&power).map(|(w, p)| w * p).sum::<f64>().max(1e-10).log10())
                    .collect();
                (0..N_MFCC)
                    .map(|k| {
                        let s = if k == 0 { (1.0 / N_MELS as f64).sqrt() } else { (2.0 / N_MELS as f64).sqrt() };
                        s * db
                            .iter()
                            .enumerate()
                            .map(|(n, x)| x * (PI * (n as f64 + 0.5) * k as f64 / N_MELS as f64).cos())
                            .sum::<f64>()
                    })
                    .collect()
            })
            .collect()
    }
}
