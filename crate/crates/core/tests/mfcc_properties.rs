use proptest::prelude::*;
use woodpest::audio::{load_wav, resample_linear, save_wav, segment_clip, AudioClip};
use woodpest::mfcc::{dct2_ortho, mfcc_frames, mfcc_mean, FeatureConfig};

fn tone_mix(len: usize, freqs: &[f64], phase: f64) -> Vec<f64> {
    (0..len)
        .map(|n| {
            let t = n as f64 / 16000.0;
            freqs.iter().map(|f| (2.0 * std::f64::consts::PI * f * t + phase).sin()).sum::<f64>() * 0.1
                + 0.02 * ((n as f64 * 12.9898).sin() * 43758.5453).fract()
        })
        .collect()
}

fn frames(x: Vec<f64>) -> woodpest::MfccMatrix64 {
    mfcc_frames(&AudioClip::new(x, 16000).unwrap(), &FeatureConfig::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gain_moves_only_c0(g in 0.05f64..1.0, f in 200.0f64..5000.0) {
        let x = tone_mix(8000, &[f, 1.7 * f], 0.3);
        let base = frames(x.clone());
        let scaled = frames(x.iter().map(|v| v * g).collect());
        let shift = 10.0 * (g * g).log10() * 128f64.sqrt();
        for t in 0..base.n_frames {
            prop_assert!((scaled.get(t, 0) - base.get(t, 0) - shift).abs() < 1e-7);
            for k in 1..base.n_coeffs {
                prop_assert!((scaled.get(t, k) - base.get(t, k)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn one_hop_shift_barely_moves_the_mean(f in 300.0f64..4000.0) {
        let x = tone_mix(80_000 + 512, &[f, 2.3 * f + 17.0], 0.0);
        let a = mfcc_mean(&frames(x[..80_000].to_vec())).unwrap().values;
        let b = mfcc_mean(&frames(x[512..].to_vec())).unwrap().values;
        let rms = |v: &mut dyn Iterator<Item = f64>| {
            let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
            (sum / n as f64).sqrt()
        };
        let diff = rms(&mut a.iter().zip(&b).map(|(p, q)| p - q));
        let scale = rms(&mut a.iter().copied());
        prop_assert!(diff < 0.01 * scale, "rms change {diff} vs mean rms {scale}");
    }

    #[test]
    fn dct_preserves_energy(x in prop::collection::vec(-50.0f64..50.0, 1..64)) {
        let y = dct2_ortho(&x, x.len()).unwrap();
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let ey: f64 = y.iter().map(|v| v * v).sum();
        prop_assert!((ex - ey).abs() <= 1e-9 * ex.max(1.0));
    }

    #[test]
    fn wav_roundtrip_within_quantization(x in prop::collection::vec(-1.0f64..1.0, 1..400)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.wav");
        let clip = AudioClip::new(x.clone(), 16000).unwrap();
        save_wav(&clip, &path).unwrap();
        let back = load_wav(&path).unwrap();
        prop_assert_eq!(back.len(), x.len());
        for (a, b) in x.iter().zip(back.samples()) {
            prop_assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn same_rate_resample_is_identity(x in prop::collection::vec(-1.0f64..1.0, 1..300), rate in 1000u32..48000) {
        let clip = AudioClip::new(x, rate).unwrap();
        let out = resample_linear(&clip, rate).unwrap();
        prop_assert_eq!(out.samples(), clip.samples());
    }

    #[test]
    fn segments_have_exact_length(len in 1usize..5000, seg in 0.01f64..0.2) {
        let clip = AudioClip::new(vec![0.1; len], 16000).unwrap();
        let want = (seg * 16000.0).round() as usize;
        for s in segment_clip(&clip, seg).unwrap() {
            prop_assert_eq!(s.len(), want);
        }
    }
}

#[test]
fn extraction_is_bit_deterministic() {
    let x = tone_mix(20_000, &[440.0, 3100.0], 1.0);
    assert_eq!(frames(x.clone()), frames(x));
}

#[test]
fn f32_and_f64_pipelines_agree() {
    let x = tone_mix(16_000, &[700.0, 2900.0], 0.5);
    let clip = AudioClip::new(x, 16000).unwrap();
    let a = mfcc_frames::<f64>(&clip, &FeatureConfig::default()).unwrap();
    let b: woodpest::MfccMatrix32 = mfcc_frames(&clip, &FeatureConfig::default()).unwrap();
    for (p, q) in a.values.iter().zip(&b.values) {
        assert!((p - *q as f64).abs() < 1e-2 * p.abs().max(1.0));
    }
}
