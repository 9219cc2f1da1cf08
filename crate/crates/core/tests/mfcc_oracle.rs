mod common;

use common::oracle::{self, Oracle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use woodpest::audio::AudioClip;
use woodpest::mfcc::{mel_filterbank, mfcc_frames, power_spectrum, FeatureConfig};

fn random_clip(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f: f64 = rng.gen_range(100.0..6000.0);
    (0..len)
        .map(|n| 0.3 * (2.0 * std::f64::consts::PI * f * n as f64 / 16000.0).sin() + rng.gen_range(-0.2..0.2))
        .collect()
}

#[test]
fn pipeline_matches_brute_force_oracle() {
    let oracle = Oracle::new(16000);
    for (seed, len) in [(1, 80_000), (2, 12_345), (3, 511), (4, 1)] {
        let x = random_clip(seed, len);
        let got = mfcc_frames::<f64>(&AudioClip::new(x.clone(), 16000).unwrap(), &FeatureConfig::default()).unwrap();
        let want = oracle.mfcc(&x);
        assert_eq!(got.n_frames, want.len());
        for (t, row) in want.iter().enumerate() {
            for (k, w) in row.iter().enumerate() {
                assert!((got.get(t, k) - w).abs() < 1e-6, "clip {seed} frame {t} coeff {k}: {} vs {w}", got.get(t, k));
            }
        }
    }
}

#[test]
fn fft_matches_direct_dft() {
    let oracle = Oracle::new(16000);
    let frame = random_clip(9, oracle::N_FFT);
    let fast = power_spectrum(&frame).unwrap();
    let slow = oracle.power(&frame);
    for (a, b) in fast.iter().zip(&slow) {
        assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-6), "{a} vs {b}");
    }
}

#[test]
fn every_filterbank_row_matches_triangles() {
    let cfg = FeatureConfig::default();
    let bank = mel_filterbank::<f64>(&cfg, 16000).unwrap();
    for i in 0..cfg.n_mels {
        for k in 0..cfg.n_bins() {
            let want = oracle::triangle(i, k as f64 * 16000.0 / 2048.0, 0.0, 8000.0, 128);
            assert!((bank.get(i, k) - want).abs() < 1e-10);
        }
    }
}
