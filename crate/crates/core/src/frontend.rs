//! Acoustic frontend: raw waveforms to 80-channel log-Mel spectrograms.
//!
//! The chain is frame -> Hann window -> zero-padded FFT -> power spectrum ->
//! triangular mel filterbank -> natural log with a floor. No per-utterance
//! normalization; downstream learnable layers absorb scale.

use std::io::Read;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("signal has {len} samples, shorter than one frame of {frame_len}")]
    SignalTooShort { len: usize, frame_len: usize },
    #[error("sample rate mismatch: signal {signal} Hz vs config {config} Hz")]
    SampleRateMismatch { signal: u32, config: u32 },
    #[error("invalid frontend config: {0}")]
    BadConfig(String),
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: malformed wav: {reason}")]
    BadWav { path: String, reason: String },
    #[error("{path}: unsupported audio extension (expected .wav or .f32)")]
    UnknownExtension { path: String },
}

pub type Result<T> = std::result::Result<T, FrontendError>;

/// Mono waveform. Samples are nominally in [-1, 1].
#[derive(Debug, Clone)]
pub struct AudioSignal {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<AudioSignal> {
        assert!(sample_rate > 0);
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(FrontendError::NonFiniteSample(i));
        }
        Ok(AudioSignal {
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub frame_hop: usize,
    pub fft_size: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            sample_rate: 16_000,
            frame_len: 400, // 25 ms
            frame_hop: 160, // 10 ms
            fft_size: 512,
            n_mels: 80,
            f_min: 0.0,
            f_max: 8_000.0,
            log_floor: 1e-10_f64.ln(),
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || self.frame_hop == 0 {
            return Err(FrontendError::BadConfig(
                "frame_len and frame_hop must be positive".into(),
            ));
        }
        if self.frame_len > self.fft_size {
            return Err(FrontendError::BadConfig(format!(
                "frame_len {} exceeds fft_size {}",
                self.frame_len, self.fft_size
            )));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(FrontendError::BadConfig(format!(
                "fft_size {} is not a power of two",
                self.fft_size
            )));
        }
        if !(0.0 <= self.f_min && self.f_min < self.f_max) {
            return Err(FrontendError::BadConfig(format!(
                "need 0 <= f_min < f_max, got {} and {}",
                self.f_min, self.f_max
            )));
        }
        if self.f_max > self.sample_rate as f64 / 2.0 {
            return Err(FrontendError::BadConfig(format!(
                "f_max {} exceeds Nyquist {}",
                self.f_max,
                self.sample_rate as f64 / 2.0
            )));
        }
        if self.n_mels == 0 {
            return Err(FrontendError::BadConfig("n_mels must be positive".into()));
        }
        Ok(())
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.frame_hop + 1
        }
    }
}

/// T' x n_mels matrix of log mel energies.
#[derive(Debug, Clone)]
pub struct MelSpectrogram {
    pub data: Vec<f64>,
    pub n_frames: usize,
    pub n_mels: usize,
    pub frame_hop: usize,
    pub frame_len: usize,
}

impl MelSpectrogram {
    pub fn as_tensor(&self) -> Tensor {
        Tensor::new(&[self.n_frames, self.n_mels], self.data.clone()).unwrap()
    }

    pub fn cell(&self, frame: usize, mel: usize) -> f64 {
        self.data[frame * self.n_mels + mel]
    }
}

/// Hann-windowed frames, one row per frame.
pub fn frame_and_window(signal: &AudioSignal, cfg: &FrontendConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let n = signal.samples.len();
    if n < cfg.frame_len {
        return Err(FrontendError::SignalTooShort {
            len: n,
            frame_len: cfg.frame_len,
        });
    }
    let window: Vec<f64> = (0..cfg.frame_len)
        .map(|i| {
            0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / cfg.frame_len as f64).cos()
        })
        .collect();
    let count = cfg.frame_count(n);
    let mut frames = Vec::with_capacity(count);
    for t in 0..count {
        let start = t * cfg.frame_hop;
        let frame: Vec<f64> = signal.samples[start..start + cfg.frame_len]
            .iter()
            .zip(&window)
            .map(|(&s, &w)| s as f64 * w)
            .collect();
        frames.push(frame);
    }
    Ok(frames)
}

/// In-place iterative radix-2 FFT. Length must be a power of two.
pub fn fft_pow2(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two() && im.len() == n);
    // bit reversal permutation
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * std::f64::consts::PI / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        let mut i = 0;
        while i < n {
            let (mut cr, mut ci) = (1.0, 0.0);
            for k in 0..len / 2 {
                let (ur, ui) = (re[i + k], im[i + k]);
                let (vr, vi) = (
                    re[i + k + len / 2] * cr - im[i + k + len / 2] * ci,
                    re[i + k + len / 2] * ci + im[i + k + len / 2] * cr,
                );
                re[i + k] = ur + vr;
                im[i + k] = ui + vi;
                re[i + k + len / 2] = ur - vr;
                im[i + k + len / 2] = ui - vi;
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
            i += len;
        }
        len <<= 1;
    }
}

/// Squared-magnitude spectrum of each zero-padded frame:
/// one row of fft_size/2 + 1 bins per frame.
pub fn power_spectrum(frames: &[Vec<f64>], fft_size: usize) -> Vec<Vec<f64>> {
    assert!(fft_size.is_power_of_two());
    let bins = fft_size / 2 + 1;
    let mut out = Vec::with_capacity(frames.len());
    for frame in frames {
        debug_assert!(frame.len() <= fft_size);
        let mut re = vec![0.0; fft_size];
        let mut im = vec![0.0; fft_size];
        re[..frame.len()].copy_from_slice(frame);
        fft_pow2(&mut re, &mut im);
        out.push((0..bins).map(|k| re[k] * re[k] + im[k] * im[k]).collect());
    }
    out
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters with peaks at mel-spaced center frequencies.
/// Edges are linear in Hz between consecutive mel points, so the rising
/// and falling slopes of adjacent filters sum to exactly one.
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    /// Dense weight rows, n_mels x n_bins.
    pub weights: Vec<f64>,
    /// Peak (center) frequency of each filter in Hz.
    pub center_freqs: Vec<f64>,
}

impl MelFilterbank {
    pub fn build(cfg: &FrontendConfig) -> Result<MelFilterbank> {
        cfg.validate()?;
        let n_bins = cfg.fft_size / 2 + 1;
        let mel_lo = hz_to_mel(cfg.f_min);
        let mel_hi = hz_to_mel(cfg.f_max);
        let points: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
        let mut weights = vec![0.0; cfg.n_mels * n_bins];
        for m in 0..cfg.n_mels {
            let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                weights[m * n_bins + k] = w;
            }
        }
        Ok(MelFilterbank {
            n_mels: cfg.n_mels,
            n_bins,
            weights,
            center_freqs: points[1..=cfg.n_mels].to_vec(),
        })
    }

    pub fn weight(&self, mel: usize, bin: usize) -> f64 {
        self.weights[mel * self.n_bins + bin]
    }

    pub fn apply(&self, power_row: &[f64]) -> Vec<f64> {
        (0..self.n_mels)
            .map(|m| {
                self.weights[m * self.n_bins..(m + 1) * self.n_bins]
                    .iter()
                    .zip(power_row)
                    .map(|(w, p)| w * p)
                    .sum()
            })
            .collect()
    }
}

/// Full frontend: waveform in, log-Mel spectrogram out.
pub fn log_mel(signal: &AudioSignal, cfg: &FrontendConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if signal.sample_rate != cfg.sample_rate {
        return Err(FrontendError::SampleRateMismatch {
            signal: signal.sample_rate,
            config: cfg.sample_rate,
        });
    }
    let frames = frame_and_window(signal, cfg)?;
    let power = power_spectrum(&frames, cfg.fft_size);
    let bank = MelFilterbank::build(cfg)?;
    let floor_energy = cfg.log_floor.exp();
    let n_frames = power.len();
    let mut data = Vec::with_capacity(n_frames * cfg.n_mels);
    for row in &power {
        for e in bank.apply(row) {
            data.push(if e <= floor_energy {
                cfg.log_floor
            } else {
                e.ln()
            });
        }
    }
    Ok(MelSpectrogram {
        data,
        n_frames,
        n_mels: cfg.n_mels,
        frame_hop: cfg.frame_hop,
        frame_len: cfg.frame_len,
    })
}

// ---- waveform file I/O ----

fn io_err(path: &Path, source: std::io::Error) -> FrontendError {
    FrontendError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// 16-bit mono PCM with the canonical 44-byte RIFF/WAVE header.
pub fn read_wav(path: &Path) -> Result<AudioSignal> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    let bad = |reason: &str| FrontendError::BadWav {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    if bytes.len() < 44 {
        return Err(bad("shorter than 44-byte header"));
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" || &bytes[12..16] != b"fmt " {
        return Err(bad("missing RIFF/WAVE/fmt markers"));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    if u32_at(16) != 16 || u16_at(20) != 1 {
        return Err(bad("not plain PCM"));
    }
    if u16_at(22) != 1 {
        return Err(bad("expected mono"));
    }
    if u16_at(34) != 16 {
        return Err(bad("expected 16-bit samples"));
    }
    let sample_rate = u32_at(24);
    if &bytes[36..40] != b"data" {
        return Err(bad("missing data chunk at offset 36"));
    }
    let data_len = u32_at(40) as usize;
    if 44 + data_len > bytes.len() || data_len % 2 != 0 {
        return Err(bad("data chunk size inconsistent with file length"));
    }
    let samples = bytes[44..44 + data_len]
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
        .collect();
    AudioSignal::new(samples, sample_rate)
}

/// Write the canonical 44-byte-header mono 16-bit PCM file.
pub fn write_wav(path: &Path, signal: &AudioSignal) -> Result<()> {
    let data_len = signal.samples.len() * 2;
    let mut bytes = Vec::with_capacity(44 + data_len);
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    bytes.extend_from_slice(b"WAVE");
    bytes.extend_from_slice(b"fmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes()); // PCM
    bytes.extend_from_slice(&1u16.to_le_bytes()); // mono
    bytes.extend_from_slice(&signal.sample_rate.to_le_bytes());
    bytes.extend_from_slice(&(signal.sample_rate * 2).to_le_bytes());
    bytes.extend_from_slice(&2u16.to_le_bytes());
    bytes.extend_from_slice(&16u16.to_le_bytes());
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &signal.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Raw little-endian float32 samples, no header. The sample rate is
/// whatever the caller's config says.
pub fn read_raw_f32(path: &Path, sample_rate: u32) -> Result<AudioSignal> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let samples = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    AudioSignal::new(samples, sample_rate)
}

pub fn write_raw_f32(path: &Path, signal: &AudioSignal) -> Result<()> {
    let mut bytes = Vec::with_capacity(signal.samples.len() * 4);
    for &s in &signal.samples {
        bytes.extend_from_slice(&s.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Dispatch on extension: `.wav` or `.f32`.
pub fn read_audio(path: &Path, sample_rate: u32) -> Result<AudioSignal> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("wav") => read_wav(path),
        Some("f32") => read_raw_f32(path, sample_rate),
        _ => Err(FrontendError::UnknownExtension {
            path: path.display().to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn silence(n: usize) -> AudioSignal {
        AudioSignal::new(vec![0.0; n], 16_000).unwrap()
    }

    #[test]
    fn framing_formula() {
        let cfg = FrontendConfig::default();
        let frames = frame_and_window(&silence(1600), &cfg).unwrap();
        assert_eq!(frames.len(), 8); // (1600 - 400)/160 + 1
    }

    #[test]
    fn single_frame_boundary() {
        let cfg = FrontendConfig::default();
        let frames = frame_and_window(&silence(400), &cfg).unwrap();
        assert_eq!(frames.len(), 1);
    }

    #[test]
    fn too_short_signal_errors() {
        let cfg = FrontendConfig::default();
        assert!(matches!(
            frame_and_window(&silence(399), &cfg),
            Err(FrontendError::SignalTooShort { .. })
        ));
    }

    #[test]
    fn zero_signal_zero_frames() {
        let cfg = FrontendConfig::default();
        let frames = frame_and_window(&silence(800), &cfg).unwrap();
        assert!(frames.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn all_zero_frame_gives_zero_power() {
        let power = power_spectrum(&[vec![0.0; 400]], 512);
        assert!(power[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn silence_hits_log_floor_everywhere() {
        let cfg = FrontendConfig::default();
        let mel = log_mel(&silence(1600), &cfg).unwrap();
        assert!(mel.data.iter().all(|&v| v == cfg.log_floor));
    }

    #[test]
    fn default_width_is_80() {
        let cfg = FrontendConfig::default();
        let mel = log_mel(&silence(1600), &cfg).unwrap();
        assert_eq!(mel.n_mels, 80);
        assert_eq!(mel.data.len(), mel.n_frames * 80);
    }

    #[test]
    fn sample_rate_mismatch_rejected() {
        let cfg = FrontendConfig::default();
        let sig = AudioSignal::new(vec![0.0; 1600], 8_000).unwrap();
        assert!(matches!(
            log_mel(&sig, &cfg),
            Err(FrontendError::SampleRateMismatch { .. })
        ));
    }

    #[test]
    fn one_khz_sine_lands_in_nearest_band() {
        let cfg = FrontendConfig::default();
        let sr = cfg.sample_rate as f64;
        let samples: Vec<f32> = (0..16_000)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / sr).sin() as f32)
            .collect();
        let sig = AudioSignal::new(samples, cfg.sample_rate).unwrap();
        let mel = log_mel(&sig, &cfg).unwrap();
        let bank = MelFilterbank::build(&cfg).unwrap();
        let expected_band = bank
            .center_freqs
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                (**a - 1000.0).abs().partial_cmp(&(**b - 1000.0).abs()).unwrap()
            })
            .map(|(i, _)| i)
            .unwrap();
        // use a mid-signal frame, away from windowing edge effects
        let t = mel.n_frames / 2;
        let argmax = (0..mel.n_mels)
            .max_by(|&a, &b| mel.cell(t, a).partial_cmp(&mel.cell(t, b)).unwrap())
            .unwrap();
        assert_eq!(argmax, expected_band);
    }

    #[test]
    fn filterbank_partition_between_fmin_fmax() {
        let cfg = FrontendConfig::default();
        let bank = MelFilterbank::build(&cfg).unwrap();
        let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
        for k in 0..bank.n_bins {
            let f = k as f64 * bin_hz;
            if f <= cfg.f_min || f >= cfg.f_max {
                continue;
            }
            let total: f64 = (0..bank.n_mels).map(|m| bank.weight(m, k)).sum();
            assert!(total > 0.0 && total <= 1.0001, "bin {k} ({f} Hz): {total}");
            for m in 0..bank.n_mels {
                assert!(bank.weight(m, k) >= 0.0);
            }
        }
    }

    #[test]
    fn louder_never_decreases_log_mel() {
        let cfg = FrontendConfig::default();
        let base: Vec<f32> = (0..1600)
            .map(|i| 0.1 * (2.0 * std::f64::consts::PI * 523.0 * i as f64 / 16_000.0).sin() as f32)
            .collect();
        let quiet = AudioSignal::new(base.clone(), 16_000).unwrap();
        let loud =
            AudioSignal::new(base.iter().map(|s| s * 3.0).collect(), 16_000).unwrap();
        let a = log_mel(&quiet, &cfg).unwrap();
        let b = log_mel(&loud, &cfg).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!(y >= x);
        }
    }

    #[test]
    fn wav_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f32> = (0..2048).map(|i| ((i as f32) * 0.01).sin() * 0.5).collect();
        let sig = AudioSignal::new(samples, 16_000).unwrap();
        write_wav(&path, &sig).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        assert_eq!(back.samples.len(), sig.samples.len());
        for (a, b) in sig.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }

    #[test]
    fn raw_f32_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.f32");
        let samples: Vec<f32> = (0..777).map(|i| ((i as f32) * 0.37).cos()).collect();
        let sig = AudioSignal::new(samples.clone(), 16_000).unwrap();
        write_raw_f32(&path, &sig).unwrap();
        let back = read_raw_f32(&path, 16_000).unwrap();
        assert_eq!(
            samples.iter().map(|s| s.to_bits()).collect::<Vec<_>>(),
            back.samples.iter().map(|s| s.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn truncated_wav_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"RIFF").unwrap();
        assert!(matches!(
            read_wav(&path),
            Err(FrontendError::BadWav { .. })
        ));
    }
}
