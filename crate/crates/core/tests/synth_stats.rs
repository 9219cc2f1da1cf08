mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use common::fixtures::synth_dump;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use woodpest::audio::{load_wav, ClipLabel};
use woodpest::mfcc::mfcc_mean;
use woodpest::synth::{gen_clean_clip, gen_dataset, gen_infested_clip, gen_infested_detailed, Manifest, SynthConfig};

/// Welch average of Hann-windowed 4096-sample periodograms.
fn welch(x: &[f64], n: usize) -> Vec<f64> {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut acc = vec![0.0; n / 2 + 1];
    let mut count = 0;
    for seg in x.chunks_exact(n) {
        let mut buf: Vec<Complex<f64>> = seg
            .iter()
            .enumerate()
            .map(|(i, v)| Complex::new(v * (0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()), 0.0))
            .collect();
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
        count += 1;
    }
    acc.iter().map(|a| a / count as f64).collect()
}

#[test]
fn background_slope_is_minus_three_db_per_octave() {
    let cfg = SynthConfig::default();
    let n = 4096;
    let mut psd = vec![0.0; n / 2 + 1];
    for seed in 0..20 {
        for (a, b) in psd.iter_mut().zip(welch(gen_clean_clip(&cfg, seed).unwrap().samples(), n)) {
            *a += b;
        }
    }
    // least-squares line of dB against log2(frequency) over 100..4000 Hz
    let pts: Vec<(f64, f64)> = (0..psd.len())
        .map(|k| (k as f64 * 16000.0 / n as f64, psd[k]))
        .filter(|(f, _)| (100.0..=4000.0).contains(f))
        .map(|(f, p)| (f.log2(), 10.0 * p.log10()))
        .collect();
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / m, sy / m);
    let slope = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / pts.iter().map(|(x, _)| (x - mx).powi(2)).sum::<f64>();
    assert!((slope + 3.0).abs() <= 1.0, "slope {slope} dB/octave");
}

#[test]
fn click_counts_follow_poisson_mean() {
    let cfg = SynthConfig::default();
    let counts: Vec<usize> = (0..200).map(|s| gen_infested_detailed(&cfg, s).unwrap().n_clicks()).collect();
    let mean = counts.iter().sum::<usize>() as f64 / 200.0;
    let expected = cfg.click_rate * cfg.duration_s;
    assert_eq!(expected, 40.0);
    assert!((mean - expected).abs() <= 3.0 * (expected / 200.0).sqrt(), "mean {mean}");
}

#[test]
fn measured_snr_matches_configuration() {
    let cfg = SynthConfig::default();
    for seed in 0..10 {
        let d = gen_infested_detailed(&cfg, seed).unwrap();
        let clean = gen_clean_clip(&cfg, seed).unwrap();
        let x = d.clip.samples();
        let c = clean.samples();
        // outside every burst the mix is a scaled copy of the clean clip
        let burst = (8.0 * cfg.decay_s * cfg.sample_rate as f64).ceil() as usize;
        let mut mask = vec![false; x.len()];
        for &on in &d.onsets {
            mask[on..(on + burst).min(x.len())].iter_mut().for_each(|m| *m = true);
        }
        let (num, den) = x
            .iter()
            .zip(c)
            .zip(&mask)
            .filter(|(_, &m)| !m)
            .fold((0.0, 0.0), |(n, d), ((a, b), _)| (n + a * b, d + b * b));
        let alpha = num / den;
        let noise_e: f64 = c.iter().map(|v| (alpha * v).powi(2)).sum();
        let click_e: f64 = x.iter().zip(c).map(|(a, b)| (a - alpha * b).powi(2)).sum();
        let snr = 10.0 * (click_e / noise_e).log10();
        assert!((snr - cfg.snr_db).abs() <= 1.0, "seed {seed}: {snr} dB");
    }
}

#[test]
fn vanishing_click_rate_matches_clean_clip() {
    let cfg = SynthConfig { click_rate: 1e-9, ..Default::default() };
    for seed in 0..5 {
        let a = gen_infested_clip(&cfg, seed).unwrap();
        let b = gen_clean_clip(&cfg, seed).unwrap();
        let energy = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        assert!((energy(a.samples()) - energy(b.samples())).abs() < 1e-6);
    }
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["", "clean", "infested"] {
        for e in fs::read_dir(dir.join(sub)).unwrap() {
            let p = e.unwrap().path();
            if p.is_file() {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn dataset_layout_and_byte_determinism() {
    let cfg = SynthConfig { duration_s: 1.0, ..Default::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m = gen_dataset(a.path(), 5, &cfg, 7).unwrap();
    gen_dataset(b.path(), 5, &cfg, 7).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), 11);
    assert_eq!(ta, tb);
    assert!(ta.contains_key("infested/clip_0004.wav"));
    assert_eq!(m.clips.iter().filter(|c| c.label == ClipLabel::Clean).count(), 5);

    // the manifest alone reconstructs each clip
    let manifest: Manifest = serde_json::from_slice(&ta["manifest.json"]).unwrap();
    assert_eq!(manifest, m);
    let entry = &manifest.clips[7];
    let on_disk = load_wav(a.path().join(&entry.path)).unwrap();
    let rendered = manifest.render(entry).unwrap();
    for (p, q) in on_disk.samples().iter().zip(rendered.samples()) {
        assert!((p - q).abs() <= 1.0 / 32768.0);
    }
}

#[test]
fn classes_separate_in_mfcc_mean_space() {
    let dump = synth_dump(20, &SynthConfig::default(), 5);
    let means: Vec<(ClipLabel, Vec<f64>)> =
        dump.items.iter().map(|it| (it.label, mfcc_mean(&it.matrix).unwrap().values)).collect();
    let centroid = |label| {
        let rows: Vec<&Vec<f64>> = means.iter().filter(|(l, _)| *l == label).map(|(_, v)| v).collect();
        (0..40).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64).collect::<Vec<f64>>()
    };
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let (cc, ci) = (centroid(ClipLabel::Clean), centroid(ClipLabel::Infested));
    let spread = |label, c: &[f64]| {
        let d: Vec<f64> = means.iter().filter(|(l, _)| *l == label).map(|(_, v)| dist(v, c).powi(2)).collect();
        (d.iter().sum::<f64>() / d.len() as f64).sqrt()
    };
    let within = 0.5 * (spread(ClipLabel::Clean, &cc) + spread(ClipLabel::Infested, &ci));
    let ratio = dist(&cc, &ci) / within;
    assert!(ratio > 1.0, "separation ratio {ratio}");
}
