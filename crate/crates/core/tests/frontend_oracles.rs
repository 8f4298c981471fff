//! Frontend verification against independent oracles: a textbook DFT, the
//! Parseval identity, and the tone-decoding construction of the synthetic
//! corpus.

mod common;

use common::{dominant_frequency, naive_dft, nearest_tone};
use ospg_core::frontend::{fft_pow2, power_spectrum, FrontendConfig};
use ospg_core::rng::Rng;
use ospg_core::synth::{gen_sample, TONE_NAMES, TONE_SAMPLES};
use ospg_core::grammar::TaskTag;

#[test]
fn fft_matches_naive_dft() {
    let mut rng = Rng::new(300);
    for n in [8usize, 32, 64, 256] {
        let x: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (re_o, im_o) = naive_dft(&x);
        let mut re = x.clone();
        let mut im = vec![0.0; n];
        fft_pow2(&mut re, &mut im);
        let mut max_err = 0.0f64;
        for k in 0..n {
            max_err = max_err.max((re[k] - re_o[k]).abs()).max((im[k] - im_o[k]).abs());
        }
        assert!(max_err < 1e-4, "n={n}: max abs err {max_err}");
    }
}

#[test]
fn parseval_identity() {
    let mut rng = Rng::new(301);
    let n = 512usize;
    for _ in 0..5 {
        let x: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let power = power_spectrum(&[x.clone()], n);
        // reassemble the full-spectrum sum from the half spectrum
        let bins = &power[0];
        let mut spectral = bins[0] + bins[n / 2];
        for p in &bins[1..n / 2] {
            spectral += 2.0 * p;
        }
        spectral /= n as f64;
        let temporal: f64 = x.iter().map(|v| v * v).sum();
        let rel = (spectral - temporal).abs() / temporal;
        assert!(rel < 1e-4, "relative error {rel}");
    }
}

#[test]
fn bin_centered_sine_concentrates() {
    let n = 512usize;
    let k0 = 32usize;
    // rectangular frame of exactly fft_size samples, integer cycle count
    let frame: Vec<f64> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * k0 as f64 * i as f64 / n as f64).sin())
        .collect();
    let power = power_spectrum(&[frame], n);
    let total: f64 = power[0].iter().sum();
    let at_bin = power[0][k0];
    assert!(
        at_bin / total >= 0.90,
        "bin {k0} holds only {:.1}% of the energy",
        100.0 * at_bin / total
    );
}

#[test]
fn asr_transcripts_recoverable_from_audio() {
    // every tone segment's dominant frequency decodes back to its symbol
    let cfg = FrontendConfig::default();
    for seed in 0..50u64 {
        let sample = gen_sample(TaskTag::Asr, seed).unwrap();
        let audio = sample.audio.unwrap();
        let expected: Vec<&str> = sample
            .target
            .content
            .split(' ')
            .collect();
        let segments = audio.samples.len() / TONE_SAMPLES;
        assert_eq!(segments, expected.len());
        for (i, want) in expected.iter().enumerate() {
            let seg: Vec<f64> = audio.samples[i * TONE_SAMPLES..(i + 1) * TONE_SAMPLES]
                .iter()
                .map(|&s| s as f64)
                .collect();
            let freq = dominant_frequency(&seg, cfg.sample_rate as f64);
            let decoded = TONE_NAMES[nearest_tone(freq)];
            assert_eq!(
                decoded, *want,
                "seed {seed}, segment {i}: {freq:.1} Hz decoded as {decoded}"
            );
        }
    }
}
