use std::io::Cursor;
use std::path::Path;

use cafnet_autograd::write_atomic;

use super::AudioClip;
use crate::error::{CoreError, Result};
use crate::SAMPLE_RATE;

/// Read a PCM16 WAV file, downmix to mono and resample to 16 kHz.
pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    decode_wav(&bytes).map_err(|detail| CoreError::format(path, detail))
}

/// Decode WAV bytes; the error is a human-readable reason.
pub fn decode_wav(bytes: &[u8]) -> std::result::Result<AudioClip, String> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| format!("malformed WAV: {e}"))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(format!(
            "unsupported encoding: {:?} {}-bit (only PCM16 is accepted)",
            spec.sample_format, spec.bits_per_sample
        ));
    }
    let channels = spec.channels as usize;
    if !(1..=2).contains(&channels) {
        return Err(format!("unsupported channel count {channels}"));
    }
    if spec.sample_rate == 0 {
        return Err("sample rate is zero".into());
    }
    let raw: Vec<i16> = reader.into_samples::<i16>().collect::<std::result::Result<_, _>>().map_err(|e| format!("malformed WAV data: {e}"))?;
    if raw.len() < channels {
        return Err("zero-length audio".into());
    }
    let mono: Vec<f32> = raw
        .chunks_exact(channels)
        .map(|frame| {
            let s: f32 = frame.iter().map(|&v| v as f32 / 32768.0).sum();
            s / channels as f32
        })
        .collect();
    let samples = if spec.sample_rate == SAMPLE_RATE { mono } else { resample_linear(&mono, spec.sample_rate, SAMPLE_RATE) };
    Ok(AudioClip::new(samples))
}

/// Linear-interpolation resampling. `N` input frames map to
/// `floor((N - 1) * to / from) + 1` output frames spanning the same interval.
pub fn resample_linear(x: &[f32], from: u32, to: u32) -> Vec<f32> {
    if x.is_empty() || from == to {
        return x.to_vec();
    }
    let n_out = ((x.len() as u64 - 1) * to as u64 / from as u64) as usize + 1;
    let step = from as f64 / to as f64;
    (0..n_out)
        .map(|j| {
            let pos = j as f64 * step;
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            if i + 1 < x.len() {
                (x[i] as f64 * (1.0 - frac) + x[i + 1] as f64 * frac) as f32
            } else {
                x[x.len() - 1]
            }
        })
        .collect()
}

fn to_pcm16(x: f32) -> i16 {
    (x as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Mono PCM16 WAV bytes at the clip's sample rate.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::with_capacity(44 + 2 * clip.len()));
    {
        // Writing into memory cannot fail.
        let mut w = hound::WavWriter::new(&mut buf, spec).expect("in-memory WAV header");
        for &s in &clip.samples {
            w.write_sample(to_pcm16(s)).expect("in-memory WAV sample");
        }
        w.finalize().expect("in-memory WAV finalize");
    }
    buf.into_inner()
}

pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    write_atomic(path, &encode_wav(clip)).map_err(|e| CoreError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wav_bytes(channels: u16, rate: u32, bits: u16, samples: &[i32]) -> Vec<u8> {
        let spec = hound::WavSpec { channels, sample_rate: rate, bits_per_sample: bits, sample_format: hound::SampleFormat::Int };
        let mut buf = Cursor::new(Vec::new());
        let mut w = hound::WavWriter::new(&mut buf, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        buf.into_inner()
    }

    #[test]
    fn native_mono_is_scaled_by_32768() {
        let ints: Vec<i32> = (0..64_000).map(|i| (i % 65_536) as i32 - 32_768).collect();
        let clip = decode_wav(&wav_bytes(1, 16_000, 16, &ints)).unwrap();
        assert_eq!(clip.len(), 64_000);
        for (a, &b) in clip.samples.iter().zip(&ints) {
            assert_eq!(*a, b as f32 / 32768.0);
        }
    }

    #[test]
    fn anti_phase_stereo_cancels() {
        let ints: Vec<i32> = (0..200).flat_map(|i| [i * 50, -i * 50]).collect();
        let clip = decode_wav(&wav_bytes(2, 16_000, 16, &ints)).unwrap();
        assert_eq!(clip.len(), 200);
        assert!(clip.samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn upsampling_a_ramp_matches_interpolation() {
        let n = 1000;
        let ints: Vec<i32> = (0..n).map(|i| i * 8).collect();
        let clip = decode_wav(&wav_bytes(1, 8_000, 16, &ints)).unwrap();
        assert_eq!(clip.len(), 2 * n as usize - 1);
        // Oracle: a ramp stays a ramp with half the slope per output sample.
        for (j, &v) in clip.samples.iter().enumerate() {
            let want = (j as f64 * 4.0) / 32768.0;
            assert!((v as f64 - want).abs() < 1e-6, "{j}: {v} vs {want}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(decode_wav(b"RIFF____WAVEjunk").is_err());
        assert!(decode_wav(&wav_bytes(1, 16_000, 24, &[1, 2, 3])).unwrap_err().contains("unsupported"));
        assert!(decode_wav(&wav_bytes(1, 16_000, 16, &[])).unwrap_err().contains("zero-length"));
        assert!(decode_wav(&wav_bytes(3, 16_000, 16, &[1, 2, 3])).is_err());
    }

    #[test]
    fn encode_decode_round_trip_on_pcm_grid() {
        let samples: Vec<f32> = (-50..50).map(|i| i as f32 * 300.0 / 32768.0).collect();
        let clip = AudioClip::new(samples);
        assert_eq!(decode_wav(&encode_wav(&clip)).unwrap(), clip);
    }

    #[test]
    fn full_scale_clamps() {
        assert_eq!(to_pcm16(1.0), 32767);
        assert_eq!(to_pcm16(-1.0), -32768);
    }
}
