//! Acoustic front end: log-mel filterbanks, regression deltas and
//! per-segment mean/variance normalization.
//!
//! Conventions: frames of 25 ms every 10 ms, per-frame pre-emphasis with
//! coefficient 0.97, periodic Hann window, power spectrum of the frame
//! zero-padded to the next power of two, triangular filters equally spaced
//! on the HTK mel scale `2595 * log10(1 + f / 700)` between 0 Hz and
//! Nyquist, natural log with a `1e-10` floor.

pub mod fft;
mod io;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_features, read_wav, write_features, write_wav};

pub const LOG_FLOOR: f64 = 1e-10;
const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("waveform".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite { op: "waveform" });
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    LogMel,
    WithDeltas,
    Normalized,
}

/// `frames x dim` row-major feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub data: Vec<f64>,
    pub frames: usize,
    pub dim: usize,
    pub frame_shift: f64,
    pub kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, frames: usize, dim: usize, frame_shift: f64, kind: FeatureKind) -> Result<Self> {
        if data.len() != frames * dim {
            return Err(Error::shape("features", format!("{frames}x{dim} needs {} values, got {}", frames * dim, data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "features" });
        }
        Ok(FeatureMatrix { data, frames, dim, frame_shift, kind })
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn column(&self, d: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.frames).map(move |t| self.data[t * self.dim + d])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub n_mels: usize,
    pub frame_length: f64,
    pub frame_shift: f64,
    pub preemphasis: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig { n_mels: 80, frame_length: 0.025, frame_shift: 0.010, preemphasis: 0.97 }
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filterbank sampled on the rfft bins.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    weights: Vec<Vec<f64>>,
    centers: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, fft_size: usize, sample_rate: u32) -> Self {
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let points: Vec<f64> = (0..n_mels + 2).map(|i| top * i as f64 / (n_mels + 1) as f64).collect();
        let bins = fft_size / 2 + 1;
        let bin_mel: Vec<f64> = (0..bins).map(|k| hz_to_mel(k as f64 * sample_rate as f64 / fft_size as f64)).collect();
        let weights = (0..n_mels)
            .map(|m| {
                let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
                bin_mel
                    .iter()
                    .map(|&b| {
                        if b > lo && b <= mid {
                            (b - lo) / (mid - lo)
                        } else if b > mid && b < hi {
                            (hi - b) / (hi - mid)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let centers = points[1..=n_mels].iter().map(|&m| mel_to_hz(m)).collect();
        MelFilterbank { weights, centers }
    }

    /// Center frequency of each filter in Hz.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights.iter().map(|w| w.iter().zip(power).map(|(a, b)| a * b).sum()).collect()
    }
}

/// Log-mel filterbank energies, one row per 10 ms frame.
pub fn mel_spectrogram(wave: &Waveform, config: &MelConfig) -> Result<FeatureMatrix> {
    let sr = wave.sample_rate as f64;
    let frame_len = (config.frame_length * sr).round() as usize;
    let shift = (config.frame_shift * sr).round() as usize;
    if frame_len == 0 || shift == 0 {
        return Err(Error::InvalidArgument("frame length and shift must be positive".into()));
    }
    if wave.samples.len() < frame_len {
        return Err(Error::InvalidArgument(format!(
            "waveform of {} samples is shorter than one {frame_len}-sample frame",
            wave.samples.len()
        )));
    }
    let frames = 1 + (wave.samples.len() - frame_len) / shift;
    let fft_size = frame_len.next_power_of_two();
    let bank = MelFilterbank::new(config.n_mels, fft_size, wave.sample_rate);
    let window: Vec<f64> = (0..frame_len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / frame_len as f64).cos()).collect();

    let mut data = Vec::with_capacity(frames * config.n_mels);
    let mut frame = vec![0.0; frame_len];
    for t in 0..frames {
        let raw = &wave.samples[t * shift..t * shift + frame_len];
        for n in (0..frame_len).rev() {
            let prev = if n == 0 { raw[0] } else { raw[n - 1] };
            frame[n] = (raw[n] - config.preemphasis * prev) * window[n];
        }
        let power = fft::power_spectrum(&frame, fft_size);
        data.extend(bank.apply(&power).into_iter().map(|e| e.max(LOG_FLOOR).ln()));
    }
    FeatureMatrix::new(data, frames, config.n_mels, config.frame_shift, FeatureKind::LogMel)
}

fn regression(input: &[f64], frames: usize, dim: usize, window: usize) -> Vec<f64> {
    let denom = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let mut out = vec![0.0; frames * dim];
    for t in 0..frames {
        for n in 1..=window {
            let ahead = (t + n).min(frames - 1);
            let behind = t.saturating_sub(n);
            for d in 0..dim {
                out[t * dim + d] += n as f64 * (input[ahead * dim + d] - input[behind * dim + d]);
            }
        }
        for d in 0..dim {
            out[t * dim + d] /= denom;
        }
    }
    out
}

/// Appends regression deltas and delta-deltas: `[static | delta | delta-delta]`.
/// Frames beyond either edge replicate the edge frame.
pub fn add_deltas(features: &FeatureMatrix, window: usize) -> Result<FeatureMatrix> {
    if features.kind != FeatureKind::LogMel {
        return Err(Error::InvalidArgument(format!("deltas expect log-mel input, got {:?}", features.kind)));
    }
    if features.frames == 0 {
        return Err(Error::Empty("feature frames".into()));
    }
    if window == 0 {
        return Err(Error::InvalidArgument("delta window must be positive".into()));
    }
    let (t, d) = (features.frames, features.dim);
    let delta = regression(&features.data, t, d, window);
    let delta2 = regression(&delta, t, d, window);
    let mut data = Vec::with_capacity(t * d * 3);
    for f in 0..t {
        data.extend_from_slice(&features.data[f * d..(f + 1) * d]);
        data.extend_from_slice(&delta[f * d..(f + 1) * d]);
        data.extend_from_slice(&delta2[f * d..(f + 1) * d]);
    }
    FeatureMatrix::new(data, t, 3 * d, features.frame_shift, FeatureKind::WithDeltas)
}

/// Per-dimension mean/variance normalization over one segment. Columns
/// with variance below `1e-8` map to zero.
pub fn cmvn(features: &FeatureMatrix) -> FeatureMatrix {
    let (t, d) = (features.frames, features.dim);
    let mut data = features.data.clone();
    for c in 0..d {
        let mean = features.column(c).sum::<f64>() / t as f64;
        let var = features.column(c).map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64;
        let scale = if var < VARIANCE_FLOOR { 0.0 } else { 1.0 / var.sqrt() };
        for f in 0..t {
            data[f * d + c] = (data[f * d + c] - mean) * scale;
        }
    }
    FeatureMatrix { data, frames: t, dim: d, frame_shift: features.frame_shift, kind: FeatureKind::Normalized }
}

/// The full stack: log-mel, deltas (window 2), then CMVN.
pub fn extract(wave: &Waveform, config: &MelConfig) -> Result<FeatureMatrix> {
    Ok(cmvn(&add_deltas(&mel_spectrogram(wave, config)?, 2)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, seconds: f64, sr: u32) -> Waveform {
        let n = (seconds * sr as f64) as usize;
        let samples = (0..n).map(|i| (2.0 * PI * freq * i as f64 / sr as f64).sin()).collect();
        Waveform::new(samples, sr).unwrap()
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter().enumerate().fold(0, |b, (i, x)| if *x > v[b] { i } else { b })
    }

    #[test]
    fn tone_at_filter_center_peaks_in_that_filter() {
        let cfg = MelConfig::default();
        let bank = MelFilterbank::new(80, 512, 16000);
        for k in [20, 35, 50, 65, 78] {
            let f = bank.centers()[k];
            let feats = mel_spectrogram(&tone(f, 0.2, 16000), &cfg).unwrap();
            for t in 0..feats.frames {
                assert_eq!(argmax(feats.frame(t)), k, "filter {k} at {f:.1} Hz, frame {t}");
            }
        }
    }

    #[test]
    fn silence_hits_the_floor() {
        let w = Waveform::new(vec![0.0; 1600], 16000).unwrap();
        let f = mel_spectrogram(&w, &MelConfig::default()).unwrap();
        assert_eq!(f.dim, 80);
        assert!(f.data.iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn short_waveform_is_rejected() {
        let w = Waveform::new(vec![0.1; 100], 16000).unwrap();
        assert!(mel_spectrogram(&w, &MelConfig::default()).is_err());
        assert!(Waveform::new(vec![], 16000).is_err());
    }

    #[test]
    fn deltas_of_constant_are_zero() {
        let f = FeatureMatrix::new(vec![3.0; 10 * 4], 10, 4, 0.01, FeatureKind::LogMel).unwrap();
        let d = add_deltas(&f, 2).unwrap();
        assert_eq!(d.dim, 12);
        for t in 0..10 {
            assert!(d.frame(t)[4..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn deltas_of_linear_ramp_equal_slope() {
        let c = 0.7;
        let t = 12;
        let data: Vec<f64> = (0..t).map(|i| c * i as f64).collect();
        let f = FeatureMatrix::new(data, t, 1, 0.01, FeatureKind::LogMel).unwrap();
        let d = add_deltas(&f, 2).unwrap();
        for i in 2..t - 2 {
            assert!((d.frame(i)[1] - c).abs() < 1e-12);
        }
        for i in 4..t - 4 {
            assert!(d.frame(i)[2].abs() < 1e-12);
        }
    }

    #[test]
    fn single_frame_deltas_vanish() {
        let f = FeatureMatrix::new(vec![1.0, 2.0], 1, 2, 0.01, FeatureKind::LogMel).unwrap();
        let d = add_deltas(&f, 2).unwrap();
        assert_eq!(d.data, vec![1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn cmvn_statistics_and_idempotence() {
        let w = tone(440.0, 0.3, 16000);
        let mut samples = w.samples.clone();
        for (i, s) in samples.iter_mut().enumerate() {
            *s += 0.3 * (i as f64 * 0.0123).sin();
        }
        let feats = extract(&Waveform::new(samples, 16000).unwrap(), &MelConfig::default()).unwrap();
        assert_eq!(feats.dim, 240);
        for c in 0..feats.dim {
            let mean = feats.column(c).sum::<f64>() / feats.frames as f64;
            let var = feats.column(c).map(|v| (v - mean).powi(2)).sum::<f64>() / feats.frames as f64;
            assert!(mean.abs() < 1e-6);
            assert!(var == 0.0 || (var - 1.0).abs() < 1e-5, "column {c} variance {var}");
        }
        let twice = cmvn(&feats);
        assert!(feats.data.iter().zip(&twice.data).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let f = FeatureMatrix::new(vec![5.0, 1.0, 5.0, 2.0], 2, 2, 0.01, FeatureKind::WithDeltas).unwrap();
        let n = cmvn(&f);
        assert_eq!(n.column(0).collect::<Vec<_>>(), vec![0.0, 0.0]);
    }

    #[test]
    fn one_frame_shift_shifts_features() {
        let sr = 16000;
        let base = tone(1000.0, 0.3, sr).samples;
        let shift = 160;
        let mut padded = vec![0.0; shift];
        padded.extend(base.iter().map(|s| s * 0.5 + 0.1 * (s * 3.0).sin()));
        let cfg = MelConfig::default();
        let a = mel_spectrogram(&Waveform::new(padded[shift..].to_vec(), sr).unwrap(), &cfg).unwrap();
        let b = mel_spectrogram(&Waveform::new(padded, sr).unwrap(), &cfg).unwrap();
        for t in 1..a.frames - 1 {
            let diff = a.frame(t).iter().zip(b.frame(t + 1)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-5);
        }
    }
}
