use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{FeatureKind, FeatureMatrix, Waveform};
use crate::error::{Error, Result};

/// Reads a mono 16-bit PCM RIFF/WAVE file, scaling samples to `[-1, 1)`.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::format(
            "wav",
            format!("expected mono 16-bit PCM, got {} channels / {} bits", spec.channels, spec.bits_per_sample),
        ));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Waveform::new(samples, spec.sample_rate)
}

/// Writes mono 16-bit PCM; samples are clipped to `[-1, 1]`.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in &wave.samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

/// Feature dump: little-endian `u32` frame count, `u32` dimension, then
/// row-major `f32` values. Values are stored at single precision.
pub fn write_features(path: &Path, features: &FeatureMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(features.frames as u32).to_le_bytes())?;
    w.write_all(&(features.dim as u32).to_le_bytes())?;
    for &v in &features.data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path, frame_shift: f64, kind: FeatureKind) -> Result<FeatureMatrix> {
    let mut r = BufReader::new(File::open(path)?);
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let frames = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let dim = u32::from_le_bytes(word) as usize;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != frames * dim * 4 {
        return Err(Error::format("feature dump", format!("{frames}x{dim} header, {} payload bytes", bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    FeatureMatrix::new(data, frames, dim, frame_shift, kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let wave = Waveform::new((0..800).map(|i| (i as f64 * 0.05).sin() * 0.8).collect(), 16000).unwrap();
        write_wav(&p, &wave).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.sample_rate, 16000);
        assert!(wave.samples.iter().zip(&back.samples).all(|(a, b)| (a - b).abs() < 1e-4));
    }

    #[test]
    fn feature_dump_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        let f = FeatureMatrix::new(vec![0.5, -1.0, 2.0, 4.25, 0.0, 1.0], 3, 2, 0.01, FeatureKind::Normalized).unwrap();
        write_features(&p, &f).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], &[3, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &0.5f32.to_le_bytes());
        assert_eq!(read_features(&p, 0.01, FeatureKind::Normalized).unwrap(), f);
        std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(read_features(&p, 0.01, FeatureKind::Normalized).is_err());
    }
}
