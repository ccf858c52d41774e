//! PMF-based trial embeddings.
//!
//! A [`ReferenceBank`] holds, for each filterbank channel, the pooled class
//! PMF of the training utterances after filtering. A trial is embedded by
//! filtering it through every channel and comparing each channel PMF with
//! the channel reference under the measure roster. With the default twenty
//! channels and eight measures the vector has 160 coordinates, coordinate
//! `c * 8 + r` coming from channel `c` and `roster[r]`.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::audio::{decode_audio, AudioError, SampleBuffer};
use crate::container::{ContainerError, Reader, Writer};
use crate::corpus::{CorpusManifest, Filter, Label, UtteranceRecord};
use crate::filterbank::{design_bank, FilterBank, FilterBankSpec, FilterError};
use crate::pmf::{Histogram, Pmf, PmfError};
use crate::similarity::{measure_roster, KlConvention, MeasureError, MeasureId};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("selection matched no utterances")]
    EmptySelection,
    #[error("training selection has no {0} utterances")]
    EmptyClass(Label),
    #[error("utterance `{utt_id}`: {source}")]
    Utterance {
        utt_id: String,
        #[source]
        source: Box<EmbeddingError>,
    },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Pmf(#[from] PmfError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("invalid embedding: {0}")]
    Invalid(String),
}

impl EmbeddingError {
    fn for_utterance(self, utt_id: &str) -> Self {
        EmbeddingError::Utterance {
            utt_id: utt_id.to_string(),
            source: Box::new(self),
        }
    }
}

/// Which class references a trial is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferenceClass {
    #[default]
    BonaFide,
    Spoof,
    /// Bona fide then spoof, doubling the dimension.
    Both,
}

impl FromStr for ReferenceClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bonafide" => Ok(ReferenceClass::BonaFide),
            "spoof" => Ok(ReferenceClass::Spoof),
            "both" => Ok(ReferenceClass::Both),
            other => Err(format!("unknown reference class `{other}`")),
        }
    }
}

impl ReferenceClass {
    fn labels(self) -> &'static [Label] {
        match self {
            ReferenceClass::BonaFide => &[Label::BonaFide],
            ReferenceClass::Spoof => &[Label::Spoof],
            ReferenceClass::Both => &[Label::BonaFide, Label::Spoof],
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingOptions {
    pub epsilon: f64,
    pub roster: Vec<MeasureId>,
    pub reference: ReferenceClass,
    pub kl: KlConvention,
}

impl Default for EmbeddingOptions {
    fn default() -> Self {
        EmbeddingOptions {
            epsilon: crate::pmf::DEFAULT_EPSILON,
            roster: MeasureId::ALL.to_vec(),
            reference: ReferenceClass::BonaFide,
            kl: KlConvention::Mean,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceBank {
    pub bank: FilterBank,
    /// Per-channel bona fide references, when built.
    pub bona_fide: Option<Vec<Pmf>>,
    /// Per-channel spoof references, when built.
    pub spoof: Option<Vec<Pmf>>,
    pub options: EmbeddingOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub utt_id: String,
    pub values: Vec<f64>,
}

impl ReferenceBank {
    pub fn spec(&self) -> &FilterBankSpec {
        &self.bank.spec
    }

    pub fn dimension(&self) -> usize {
        self.bank.channels.len() * self.options.roster.len() * self.options.reference.labels().len()
    }

    fn references(&self, label: Label) -> &[Pmf] {
        let refs = match label {
            Label::BonaFide => &self.bona_fide,
            Label::Spoof => &self.spoof,
        };
        refs.as_deref().expect("reference class built with the bank")
    }
}

/// Per-channel histograms of one buffer.
pub fn channel_histograms(bank: &FilterBank, buffer: &SampleBuffer) -> Result<Vec<Histogram>, EmbeddingError> {
    bank.apply_all(buffer)?
        .iter()
        .map(|y| Histogram::from_samples(y).map_err(EmbeddingError::from))
        .collect()
}

fn pooled_channel_histograms(
    bank: &FilterBank,
    records: &[UtteranceRecord],
    sample_rate: u32,
) -> Result<Vec<Histogram>, EmbeddingError> {
    let n = bank.channels.len();
    let zero = || vec![Histogram::zero(); n];
    records
        .par_iter()
        .try_fold(zero, |mut acc, rec| {
            let run = || -> Result<Vec<Histogram>, EmbeddingError> {
                let buf = decode_audio(rec, sample_rate)?;
                channel_histograms(bank, &buf)
            };
            let hs = run().map_err(|e| e.for_utterance(&rec.utt_id))?;
            for (a, h) in acc.iter_mut().zip(&hs) {
                a.merge_from(h);
            }
            Ok::<_, EmbeddingError>(acc)
        })
        .try_reduce(zero, |mut a, b| {
            for (x, y) in a.iter_mut().zip(&b) {
                x.merge_from(y);
            }
            Ok(a)
        })
}

/// Builds per-channel class references from the training selection.
///
/// References are stored unsmoothed; smoothing happens inside the measure
/// battery, identically for trial and reference.
pub fn build_references(
    manifest: &CorpusManifest,
    train_filter: &Filter,
    spec: &FilterBankSpec,
    options: EmbeddingOptions,
) -> Result<ReferenceBank, EmbeddingError> {
    let bank = design_bank(spec)?;
    build_references_with_bank(manifest, train_filter, bank, options)
}

pub fn build_references_with_bank(
    manifest: &CorpusManifest,
    train_filter: &Filter,
    bank: FilterBank,
    options: EmbeddingOptions,
) -> Result<ReferenceBank, EmbeddingError> {
    if options.roster.is_empty() {
        return Err(EmbeddingError::Invalid("measure roster is empty".into()));
    }
    let mut out = ReferenceBank {
        bank,
        bona_fide: None,
        spoof: None,
        options,
    };
    for &label in out.options.reference.labels() {
        let filter = Filter {
            label: Some(label),
            ..train_filter.clone()
        };
        if train_filter.label.is_some_and(|l| l != label) {
            return Err(EmbeddingError::EmptyClass(label));
        }
        let records = manifest.select(&filter);
        if records.is_empty() {
            return Err(EmbeddingError::EmptyClass(label));
        }
        let pmfs = pooled_channel_histograms(&out.bank, &records, manifest.sample_rate)?
            .iter()
            .map(|h| h.normalize(0.0))
            .collect::<Result<Vec<_>, _>>()?;
        match label {
            Label::BonaFide => out.bona_fide = Some(pmfs),
            Label::Spoof => out.spoof = Some(pmfs),
        }
    }
    Ok(out)
}

/// Embeds one trial.
pub fn embed(
    utt_id: &str,
    buffer: &SampleBuffer,
    refs: &ReferenceBank,
) -> Result<EmbeddingVector, EmbeddingError> {
    let hists = channel_histograms(&refs.bank, buffer)?;
    let opts = &refs.options;
    let mut values = Vec::with_capacity(refs.dimension());
    for (c, h) in hists.iter().enumerate() {
        let trial = h.normalize(0.0)?;
        for &label in opts.reference.labels() {
            let reference = &refs.references(label)[c];
            let vals = measure_roster(&trial, reference, opts.epsilon, &opts.roster, opts.kl)?;
            values.extend(vals.iter().map(|v| v.value));
        }
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(EmbeddingError::Invalid(format!("coordinate {i} is not finite")));
    }
    Ok(EmbeddingVector {
        utt_id: utt_id.to_string(),
        values,
    })
}

/// Embeds every record in order; work is spread over the rayon pool.
pub fn embed_records(
    records: &[UtteranceRecord],
    sample_rate: u32,
    refs: &ReferenceBank,
) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
    if records.is_empty() {
        return Err(EmbeddingError::EmptySelection);
    }
    records
        .par_iter()
        .map(|rec| {
            let run = || -> Result<EmbeddingVector, EmbeddingError> {
                let buf = decode_audio(rec, sample_rate)?;
                embed(&rec.utt_id, &buf, refs)
            };
            run().map_err(|e| e.for_utterance(&rec.utt_id))
        })
        .collect()
}

pub fn embed_corpus(
    manifest: &CorpusManifest,
    filter: &Filter,
    refs: &ReferenceBank,
) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
    embed_records(&manifest.select(filter), manifest.sample_rate, refs)
}

/// TSV export: `utt_id label subset gender codec e000 ...`.
pub fn embeddings_to_tsv(
    vectors: &[EmbeddingVector],
    manifest: &CorpusManifest,
    header: &[String],
) -> String {
    let dim = vectors.first().map_or(0, |v| v.values.len());
    let mut out = String::new();
    for line in header {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str("utt_id\tlabel\tsubset\tgender\tcodec");
    for i in 0..dim {
        let _ = write!(out, "\te{i:03}");
    }
    out.push('\n');
    for v in vectors {
        let rec = manifest.get(&v.utt_id);
        let meta = rec.map_or_else(
            || "-\t-\t-\t-".to_string(),
            |r| format!("{}\t{}\t{}\t{}", r.label, r.subset, r.gender, r.codec),
        );
        let _ = write!(out, "{}\t{meta}", v.utt_id);
        for x in &v.values {
            let _ = write!(out, "\t{x:e}");
        }
        out.push('\n');
    }
    out
}

/// `EMB1` container: count, dimension, then per vector a length-prefixed
/// UTF-8 id and `dimension` doubles. Little-endian.
pub fn embeddings_to_bytes(vectors: &[EmbeddingVector]) -> Vec<u8> {
    let dim = vectors.first().map_or(0, |v| v.values.len());
    let mut w = Writer::with_magic(b"EMB1");
    w.u32(vectors.len() as u32).u32(dim as u32);
    for v in vectors {
        w.str(&v.utt_id).f64s(&v.values);
    }
    w.finish()
}

pub fn embeddings_from_bytes(bytes: &[u8]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
    let mut r = Reader::open(bytes, "EMB1")?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    // Each vector needs at least its id length prefix and payload.
    let min_each = 4usize.saturating_add(dim.saturating_mul(8));
    if count.saturating_mul(min_each) > r.remaining() {
        return Err(ContainerError::Invalid(format!("{count} vectors of dimension {dim} cannot fit")).into());
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let utt_id = r.str()?;
        let values = r.f64s(dim)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::Invalid(format!("non-finite coordinate for `{utt_id}`")));
        }
        out.push(EmbeddingVector { utt_id, values });
    }
    r.finish()?;
    Ok(out)
}
