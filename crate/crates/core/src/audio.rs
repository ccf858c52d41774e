//! 16-bit PCM decoding. WAV and FLAC are accepted; anything that is not
//! mono 16-bit integer PCM is rejected rather than converted.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::UtteranceRecord;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed audio stream: {0}")]
    Malformed(String),
    #[error("audio stream contains no samples")]
    EmptyAudio,
    #[error("sample rate {found} Hz does not match the declared {expected} Hz")]
    SampleRateMismatch { expected: u32, found: u32 },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Raw signed 16-bit samples of one mono stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleBuffer {
    samples: Vec<i16>,
    sample_rate: u32,
}

impl SampleBuffer {
    pub fn new(samples: Vec<i16>, sample_rate: u32) -> Result<Self, AudioError> {
        if samples.is_empty() {
            return Err(AudioError::EmptyAudio);
        }
        Ok(SampleBuffer {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[i16] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    // A buffer is never empty; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<i16> {
        self.samples
    }
}

/// Decodes the record's audio and checks it against the manifest's rate.
pub fn decode_audio(record: &UtteranceRecord, sample_rate: u32) -> Result<SampleBuffer, AudioError> {
    let buf = decode_file(&record.audio_path)?;
    if buf.sample_rate != sample_rate {
        return Err(AudioError::SampleRateMismatch {
            expected: sample_rate,
            found: buf.sample_rate,
        });
    }
    Ok(buf)
}

pub fn decode_file(path: &Path) -> Result<SampleBuffer, AudioError> {
    let bytes = std::fs::read(path).map_err(|source| AudioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_bytes(&bytes)
}

/// Decodes an in-memory WAV or FLAC stream, sniffed by its magic bytes.
pub fn decode_bytes(bytes: &[u8]) -> Result<SampleBuffer, AudioError> {
    if bytes.starts_with(b"RIFF") || bytes.starts_with(b"RIFX") {
        decode_wav(bytes)
    } else if bytes.starts_with(b"fLaC") {
        decode_flac(bytes)
    } else {
        Err(AudioError::UnsupportedFormat(
            "neither a RIFF/WAVE nor a FLAC stream".into(),
        ))
    }
}

fn decode_wav(bytes: &[u8]) -> Result<SampleBuffer, AudioError> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(wav_error)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{} channels, expected mono",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{}-bit {:?} samples, expected 16-bit integer PCM",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    if spec.sample_rate == 0 {
        return Err(AudioError::Malformed("zero sample rate".into()));
    }
    let samples = reader
        .into_samples::<i16>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(wav_error)?;
    SampleBuffer::new(samples, spec.sample_rate)
}

fn wav_error(err: hound::Error) -> AudioError {
    match err {
        hound::Error::Unsupported => AudioError::UnsupportedFormat("unsupported WAV variant".into()),
        hound::Error::IoError(e) => AudioError::Malformed(e.to_string()),
        other => AudioError::Malformed(other.to_string()),
    }
}

fn decode_flac(bytes: &[u8]) -> Result<SampleBuffer, AudioError> {
    let mut reader = claxon::FlacReader::new(Cursor::new(bytes)).map_err(flac_error)?;
    let info = reader.streaminfo();
    if info.channels != 1 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{} channels, expected mono",
            info.channels
        )));
    }
    if info.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{}-bit samples, expected 16-bit",
            info.bits_per_sample
        )));
    }
    if info.sample_rate == 0 {
        return Err(AudioError::Malformed("zero sample rate".into()));
    }
    let sample_rate = info.sample_rate;
    let mut samples = Vec::new();
    for s in reader.samples() {
        let s = s.map_err(flac_error)?;
        let s = i16::try_from(s)
            .map_err(|_| AudioError::Malformed(format!("sample {s} exceeds 16 bits")))?;
        samples.push(s);
    }
    SampleBuffer::new(samples, sample_rate)
}

fn flac_error(err: claxon::Error) -> AudioError {
    match err {
        claxon::Error::Unsupported(what) => AudioError::UnsupportedFormat(what.to_string()),
        other => AudioError::Malformed(other.to_string()),
    }
}

/// Writes a mono 16-bit WAV file.
pub fn write_wav(path: &Path, buffer: &SampleBuffer) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let io_err = |e: hound::Error| match e {
        hound::Error::IoError(source) => AudioError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => AudioError::Malformed(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(io_err)?;
    for &s in &buffer.samples {
        writer.write_sample(s).map_err(io_err)?;
    }
    writer.finalize().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wav_bytes(channels: u16, bits: u16, samples: &[i32]) -> Vec<u8> {
        let spec = hound::WavSpec {
            channels,
            sample_rate: 16_000,
            bits_per_sample: bits,
            sample_format: hound::SampleFormat::Int,
        };
        let mut cursor = Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut cursor, spec).unwrap();
            for &s in samples {
                if bits == 16 {
                    w.write_sample(s as i16).unwrap();
                } else {
                    w.write_sample(s).unwrap();
                }
            }
            w.finalize().unwrap();
        }
        cursor.into_inner()
    }

    #[test]
    fn four_sample_wav_is_returned_verbatim() {
        let buf = decode_bytes(&wav_bytes(1, 16, &[0, 0, 1, -1])).unwrap();
        assert_eq!(buf.samples(), &[0, 0, 1, -1]);
        assert_eq!(buf.sample_rate(), 16_000);
    }

    #[test]
    fn full_scale_extremes_survive() {
        let buf = decode_bytes(&wav_bytes(1, 16, &[-32768, 32767])).unwrap();
        assert_eq!(buf.samples(), &[i16::MIN, i16::MAX]);
    }

    #[test]
    fn twenty_four_bit_is_unsupported() {
        let err = decode_bytes(&wav_bytes(1, 24, &[0, 1, 2])).unwrap_err();
        assert!(matches!(err, AudioError::UnsupportedFormat(_)), "{err}");
    }

    #[test]
    fn stereo_is_unsupported() {
        let err = decode_bytes(&wav_bytes(2, 16, &[0, 1, 2, 3])).unwrap_err();
        assert!(matches!(err, AudioError::UnsupportedFormat(_)), "{err}");
    }

    #[test]
    fn empty_wav_is_rejected() {
        let err = decode_bytes(&wav_bytes(1, 16, &[])).unwrap_err();
        assert!(matches!(err, AudioError::EmptyAudio), "{err}");
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(matches!(
            decode_bytes(b"OggS...."),
            Err(AudioError::UnsupportedFormat(_))
        ));
        assert!(decode_bytes(b"RIFF\x10\x00").is_err());
        assert!(decode_bytes(b"fLaC\x00").is_err());
    }
}
