//! Amplitude histograms and probability mass functions at 2^16-bin
//! resolution.
//!
//! Bin `i` holds amplitude `i - 32768`. Histograms count in `u64` so that
//! corpus-scale pools (well beyond 10^10 samples) never overflow, and merging
//! is exact integer addition: any reduction order yields the same counts.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::audio::{decode_audio, AudioError, SampleBuffer};
use crate::container::{ContainerError, Reader, Writer};
use crate::corpus::{CorpusManifest, Filter, UtteranceRecord};

/// Number of amplitude bins for signed 16-bit audio.
pub const NUM_BINS: usize = 1 << 16;

/// Tolerance on `sum(probs) == 1`.
pub const SUM_TOLERANCE: f64 = 1e-12;

/// Default smoothing for measures that need strictly positive support.
pub const DEFAULT_EPSILON: f64 = 1e-10;

const PMF_MAGIC: &[u8; 4] = b"PMF1";

#[derive(Debug, Error)]
pub enum PmfError {
    #[error("sample buffer is empty")]
    EmptyBuffer,
    #[error("histogram has no counts")]
    EmptyHistogram,
    #[error("selection matched no utterances")]
    EmptySelection,
    #[error("utterance `{utt_id}`: {source}")]
    Decode {
        utt_id: String,
        #[source]
        source: AudioError,
    },
    #[error("invalid probability vector: {0}")]
    InvalidProbs(String),
    #[error("smoothing epsilon must be finite and non-negative, got {0}")]
    InvalidEpsilon(f64),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

#[inline]
pub fn bin_of(sample: i16) -> usize {
    (sample as i32 + 32768) as usize
}

#[inline]
pub fn amplitude_of(bin: usize) -> i32 {
    bin as i32 - 32768
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Counts of each 16-bit amplitude.
#[derive(Clone, PartialEq, Eq)]
pub struct Histogram {
    counts: Box<[u64]>,
    total: u64,
}

impl std::fmt::Debug for Histogram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let occupied = self.counts.iter().filter(|&&c| c > 0).count();
        f.debug_struct("Histogram")
            .field("total", &self.total)
            .field("occupied_bins", &occupied)
            .finish()
    }
}

impl Default for Histogram {
    fn default() -> Self {
        Self::zero()
    }
}

impl Histogram {
    /// The merge identity. It may be merged but never normalized.
    pub fn zero() -> Self {
        Histogram {
            counts: vec![0u64; NUM_BINS].into_boxed_slice(),
            total: 0,
        }
    }

    pub fn from_samples(samples: &[i16]) -> Result<Self, PmfError> {
        if samples.is_empty() {
            return Err(PmfError::EmptyBuffer);
        }
        let mut h = Self::zero();
        h.add_samples(samples);
        Ok(h)
    }

    pub fn add_samples(&mut self, samples: &[i16]) {
        for &s in samples {
            self.counts[bin_of(s)] += 1;
        }
        self.total += samples.len() as u64;
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count_at(&self, amplitude: i16) -> u64 {
        self.counts[bin_of(amplitude)]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn merge(&self, other: &Histogram) -> Histogram {
        let mut out = self.clone();
        out.merge_from(other);
        out
    }

    pub fn merge_from(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += b;
        }
        self.total += other.total;
    }

    /// `probs[i] = (counts[i] + eps) / (total + NUM_BINS * eps)`, with `eps`
    /// in count units.
    pub fn normalize(&self, epsilon: f64) -> Result<Pmf, PmfError> {
        check_epsilon(epsilon)?;
        if self.total == 0 {
            return Err(PmfError::EmptyHistogram);
        }
        let denom = self.total as f64 + NUM_BINS as f64 * epsilon;
        let probs = self
            .counts
            .iter()
            .map(|&c| (c as f64 + epsilon) / denom)
            .collect();
        Ok(Pmf {
            probs,
            smoothing_epsilon: epsilon,
        })
    }
}

pub fn histogram_of(buffer: &SampleBuffer) -> Result<Histogram, PmfError> {
    Histogram::from_samples(buffer.samples())
}

pub fn merge(a: &Histogram, b: &Histogram) -> Histogram {
    a.merge(b)
}

pub fn normalize(h: &Histogram, epsilon: f64) -> Result<Pmf, PmfError> {
    h.normalize(epsilon)
}

fn check_epsilon(epsilon: f64) -> Result<(), PmfError> {
    if epsilon.is_finite() && epsilon >= 0.0 {
        Ok(())
    } else {
        Err(PmfError::InvalidEpsilon(epsilon))
    }
}

/// A normalized distribution over ordered bins.
///
/// Amplitude PMFs have [`NUM_BINS`] entries; the similarity measures accept
/// any bin count so long as both operands agree.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    probs: Vec<f64>,
    smoothing_epsilon: f64,
}

impl Pmf {
    /// Validates and wraps a probability vector.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self, PmfError> {
        Self::with_epsilon(probs, 0.0)
    }

    fn with_epsilon(probs: Vec<f64>, smoothing_epsilon: f64) -> Result<Self, PmfError> {
        check_epsilon(smoothing_epsilon)?;
        if probs.is_empty() {
            return Err(PmfError::InvalidProbs("no bins".into()));
        }
        if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(PmfError::InvalidProbs(format!(
                "bin {i} holds {}",
                probs[i]
            )));
        }
        if smoothing_epsilon > 0.0 && probs.contains(&0.0) {
            return Err(PmfError::InvalidProbs(
                "smoothed distribution has an empty bin".into(),
            ));
        }
        let sum = compensated_sum(probs.iter().copied());
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(PmfError::InvalidProbs(format!("probabilities sum to {sum}")));
        }
        Ok(Pmf {
            probs,
            smoothing_epsilon,
        })
    }

    /// Normalizes arbitrary non-negative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self, PmfError> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(PmfError::InvalidProbs("weights must be finite and non-negative".into()));
        }
        let total = compensated_sum(weights.iter().copied());
        if total <= 0.0 {
            return Err(PmfError::InvalidProbs("weights sum to zero".into()));
        }
        Self::from_probs(weights.iter().map(|w| w / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn smoothing_epsilon(&self) -> f64 {
        self.smoothing_epsilon
    }

    /// Additive smoothing in probability units:
    /// `(p_i + eps) / (1 + n * eps)`. Returns a copy when `eps == 0`.
    pub fn smoothed(&self, epsilon: f64) -> Result<Pmf, PmfError> {
        check_epsilon(epsilon)?;
        if epsilon == 0.0 {
            return Ok(self.clone());
        }
        let denom = 1.0 + self.probs.len() as f64 * epsilon;
        Ok(Pmf {
            probs: self.probs.iter().map(|p| (p + epsilon) / denom).collect(),
            smoothing_epsilon: self.smoothing_epsilon + epsilon,
        })
    }

    /// Cumulative distribution in bin order; monotone, ends at 1.
    pub fn cdf(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.probs.len());
        let mut sum = 0.0f64;
        let mut c = 0.0f64;
        for &v in &self.probs {
            let t = sum + v;
            if sum.abs() >= v.abs() {
                c += (sum - t) + v;
            } else {
                c += (v - t) + sum;
            }
            sum = t;
            out.push(sum + c);
        }
        // Compensation can round a hair past the previous entry; keep it monotone.
        for i in 1..out.len() {
            if out[i] < out[i - 1] {
                out[i] = out[i - 1];
            }
        }
        out
    }

    /// Equal-weight mixture of several distributions of the same length.
    pub fn mean_of(pmfs: &[Pmf]) -> Result<Pmf, PmfError> {
        let first = pmfs.first().ok_or(PmfError::EmptySelection)?;
        let n = first.len();
        if pmfs.iter().any(|p| p.len() != n) {
            return Err(PmfError::InvalidProbs("bin counts differ".into()));
        }
        let k = pmfs.len() as f64;
        let probs = (0..n)
            .map(|i| compensated_sum(pmfs.iter().map(|p| p.probs[i])) / k)
            .collect();
        Ok(Pmf {
            probs,
            smoothing_epsilon: 0.0,
        })
    }

    /// `PMF1` container: magic, `u32` bin count, `f64` epsilon, then the
    /// probabilities, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_magic(PMF_MAGIC);
        w.u32(self.probs.len() as u32)
            .f64(self.smoothing_epsilon)
            .f64s(&self.probs);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Pmf, PmfError> {
        let mut r = Reader::open(bytes, "PMF1")?;
        let bins = r.u32()? as usize;
        let epsilon = r.f64()?;
        if bins == 0 {
            return Err(ContainerError::Invalid("zero bins".into()).into());
        }
        if bins.saturating_mul(8) != r.remaining() {
            return Err(ContainerError::Invalid(format!(
                "declared {bins} bins but payload holds {} bytes",
                r.remaining()
            ))
            .into());
        }
        let probs = r.f64s(bins)?;
        r.finish()?;
        Pmf::with_epsilon(probs, epsilon)
    }

    /// Sparse plot export: one `bin_index  amplitude  prob` row per non-zero
    /// bin. `header` lines are emitted first as `#` comments.
    pub fn to_sparse_tsv(&self, header: &[String]) -> String {
        let offset = (self.probs.len() / 2) as i64;
        let mut out = String::new();
        for line in header {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str("bin_index\tamplitude\tprob\n");
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                let _ = writeln!(out, "{i}\t{}\t{p:e}", i as i64 - offset);
            }
        }
        out
    }
}

pub fn cdf_of(p: &Pmf) -> Vec<f64> {
    p.cdf()
}

/// How utterances are combined into one class distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    /// Pool raw samples: longer files weigh more.
    #[default]
    Samples,
    /// Average per-utterance PMFs with equal weight.
    UtteranceMean,
}

/// Pooled histogram of every record, decoded in parallel.
pub fn pooled_histogram(
    records: &[UtteranceRecord],
    sample_rate: u32,
) -> Result<Histogram, PmfError> {
    if records.is_empty() {
        return Err(PmfError::EmptySelection);
    }
    records
        .par_iter()
        .try_fold(Histogram::zero, |mut acc, rec| {
            let buf = decode_audio(rec, sample_rate).map_err(|source| PmfError::Decode {
                utt_id: rec.utt_id.clone(),
                source,
            })?;
            acc.add_samples(buf.samples());
            Ok::<_, PmfError>(acc)
        })
        .try_reduce(Histogram::zero, |a, b| Ok(a.merge(&b)))
}

/// Class distribution of the records selected by `filter`.
pub fn class_pmf(
    manifest: &CorpusManifest,
    filter: &Filter,
    epsilon: f64,
    pooling: Pooling,
) -> Result<Pmf, PmfError> {
    let records = manifest.select(filter);
    records_pmf(&records, manifest.sample_rate, epsilon, pooling)
}

pub fn records_pmf(
    records: &[UtteranceRecord],
    sample_rate: u32,
    epsilon: f64,
    pooling: Pooling,
) -> Result<Pmf, PmfError> {
    check_epsilon(epsilon)?;
    if records.is_empty() {
        return Err(PmfError::EmptySelection);
    }
    match pooling {
        Pooling::Samples => pooled_histogram(records, sample_rate)?.normalize(epsilon),
        Pooling::UtteranceMean => {
            let pmfs = records
                .par_iter()
                .map(|rec| {
                    let buf = decode_audio(rec, sample_rate).map_err(|source| PmfError::Decode {
                        utt_id: rec.utt_id.clone(),
                        source,
                    })?;
                    histogram_of(&buf)?.normalize(0.0)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Pmf::mean_of(&pmfs)?.smoothed(epsilon)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four() -> Histogram {
        Histogram::from_samples(&[0, 0, 1, -1]).unwrap()
    }

    #[test]
    fn four_sample_counts() {
        let h = four();
        assert_eq!(h.count_at(0), 2);
        assert_eq!(h.count_at(1), 1);
        assert_eq!(h.count_at(-1), 1);
        assert_eq!(h.total(), 4);
        assert_eq!(h.counts().iter().sum::<u64>(), 4);
    }

    #[test]
    fn constant_full_scale_is_a_delta() {
        let h = Histogram::from_samples(&[32767; 10]).unwrap();
        assert_eq!(h.counts()[NUM_BINS - 1], 10);
        assert_eq!(h.counts().iter().filter(|&&c| c > 0).count(), 1);
    }

    #[test]
    fn empty_buffer_is_an_error() {
        assert!(matches!(Histogram::from_samples(&[]), Err(PmfError::EmptyBuffer)));
        assert!(matches!(Histogram::zero().normalize(0.0), Err(PmfError::EmptyHistogram)));
    }

    #[test]
    fn merge_with_zero_is_identity_and_doubling_doubles() {
        let h = four();
        assert_eq!(h.merge(&Histogram::zero()), h);
        let d = h.merge(&h);
        assert_eq!(d.total(), 8);
        assert_eq!(d.count_at(0), 4);
        assert_eq!(d.count_at(1), 2);
        assert_eq!(d.count_at(-1), 2);
    }

    #[test]
    fn normalize_four_samples() {
        let p = four().normalize(0.0).unwrap();
        assert_eq!(p.probs()[bin_of(0)], 0.5);
        assert_eq!(p.probs()[bin_of(1)], 0.25);
        assert_eq!(p.probs()[bin_of(-1)], 0.25);
        assert_eq!(p.probs().iter().filter(|&&x| x > 0.0).count(), 3);
    }

    #[test]
    fn smoothing_fills_every_bin() {
        let p = four().normalize(DEFAULT_EPSILON).unwrap();
        assert!(p.probs().iter().all(|&x| x > 0.0));
        assert!((compensated_sum(p.probs().iter().copied()) - 1.0).abs() <= SUM_TOLERANCE);
        assert!(matches!(four().normalize(-1.0), Err(PmfError::InvalidEpsilon(_))));
    }

    #[test]
    fn uniform_counts_give_uniform_pmf() {
        let samples: Vec<i16> = (i16::MIN..=i16::MAX).collect();
        let p = Histogram::from_samples(&samples).unwrap().normalize(0.0).unwrap();
        assert!(p.probs().iter().all(|&x| x == 1.0 / 65536.0));
        let cdf = p.cdf();
        for (i, c) in cdf.iter().enumerate() {
            assert!((c - (i + 1) as f64 / 65536.0).abs() < 1e-15, "bin {i}: {c}");
        }
    }

    #[test]
    fn cdf_of_delta_is_a_step() {
        let p = Histogram::from_samples(&[0]).unwrap().normalize(0.0).unwrap();
        let cdf = p.cdf();
        assert_eq!(cdf[bin_of(-1)], 0.0);
        assert_eq!(cdf[bin_of(0)], 1.0);
        assert_eq!(cdf[NUM_BINS - 1], 1.0);
    }

    #[test]
    fn cdf_of_three_point_pmf() {
        let cdf = four().normalize(0.0).unwrap().cdf();
        assert_eq!(cdf[bin_of(-1)], 0.25);
        assert_eq!(cdf[bin_of(0)], 0.75);
        assert_eq!(cdf[bin_of(1)], 1.0);
    }

    #[test]
    fn from_probs_validates() {
        assert!(Pmf::from_probs(vec![0.5, 0.5]).is_ok());
        assert!(Pmf::from_probs(vec![0.5, 0.6]).is_err());
        assert!(Pmf::from_probs(vec![1.5, -0.5]).is_err());
        assert!(Pmf::from_probs(vec![f64::NAN, 1.0]).is_err());
        assert!(Pmf::from_probs(vec![]).is_err());
    }

    #[test]
    fn container_round_trip_and_rejections() {
        let p = four().normalize(1e-10).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..4], b"PMF1");
        assert_eq!(bytes.len(), 4 + 4 + 8 + NUM_BINS * 8);
        assert_eq!(Pmf::from_bytes(&bytes).unwrap(), p);

        assert!(Pmf::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Pmf::from_bytes(&extra).is_err());
        assert!(Pmf::from_bytes(b"PMF2").is_err());
    }

    #[test]
    fn sparse_tsv_lists_occupied_bins() {
        let tsv = four().normalize(0.0).unwrap().to_sparse_tsv(&["test".into()]);
        let lines: Vec<_> = tsv.lines().collect();
        assert_eq!(lines[0], "# test");
        assert_eq!(lines[1], "bin_index\tamplitude\tprob");
        assert_eq!(lines[2], "32767\t-1\t2.5e-1");
        assert_eq!(lines[3], "32768\t0\t5e-1");
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn mean_of_pmfs() {
        let a = Pmf::from_probs(vec![1.0, 0.0]).unwrap();
        let b = Pmf::from_probs(vec![0.0, 1.0]).unwrap();
        assert_eq!(Pmf::mean_of(&[a, b]).unwrap().probs(), &[0.5, 0.5]);
    }
}
