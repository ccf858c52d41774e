//! Synthetic corpora with Laplacian-distributed amplitudes, for tests, demos
//! and the acceptance suite.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::{write_wav, AudioError, SampleBuffer};
use crate::corpus::Subset;

/// Draws `n` samples of a zero-mean Laplacian with the given scale, rounded
/// and saturated to 16 bits.
pub fn laplacian_samples(rng: &mut impl Rng, scale: f64, n: usize) -> Vec<i16> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(-0.5..0.5);
            let x = -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln();
            x.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub name: String,
    /// Laplacian scale of bona fide utterances.
    pub scale: f64,
    /// Spoof scale as a multiple of `scale`.
    pub spoof_ratio: f64,
    pub n_utterances: usize,
    pub seconds: f64,
    pub sample_rate: u32,
    pub subsets: Vec<Subset>,
    /// Mark every other eval utterance as coded with this codec name.
    pub eval_codec: Option<String>,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(name: &str, scale: f64, seed: u64) -> Self {
        SynthSpec {
            name: name.to_string(),
            scale,
            spoof_ratio: 1.0,
            n_utterances: 100,
            seconds: 2.0,
            sample_rate: 16_000,
            subsets: vec![Subset::Train, Subset::Dev, Subset::Eval],
            eval_codec: None,
            seed,
        }
    }
}

/// Layout of utterance `i`: `(subset, is_spoof, gender token, coded)`.
fn layout(spec: &SynthSpec, i: usize) -> (Subset, bool, &'static str, bool) {
    let k = spec.subsets.len();
    let subset = spec.subsets[i % k];
    let round = i / k;
    let spoof = round % 2 == 1;
    let gender = if (round / 2).is_multiple_of(2) { "f" } else { "m" };
    let coded = subset == Subset::Eval && spec.eval_codec.is_some() && (round / 4) % 2 == 1;
    (subset, spoof, gender, coded)
}

/// Samples of utterance `i`, independent of generation order.
pub fn utterance_samples(spec: &SynthSpec, i: usize) -> Vec<i16> {
    let (_, spoof, _, _) = layout(spec, i);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(i as u64);
    let scale = if spoof { spec.scale * spec.spoof_ratio } else { spec.scale };
    let n = (spec.seconds * spec.sample_rate as f64).round().max(1.0) as usize;
    laplacian_samples(&mut rng, scale, n)
}

/// Writes WAV files plus `manifest.tsv` under `dir` and returns the manifest
/// path. Utterances cycle through the subsets, then alternate class and
/// gender.
pub fn write_corpus(dir: &Path, spec: &SynthSpec) -> Result<PathBuf, AudioError> {
    let audio_dir = dir.join("wav");
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| AudioError::Io { path, source }
    };
    std::fs::create_dir_all(&audio_dir).map_err(io(&audio_dir))?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "#@ corpus_name = {}", spec.name);
    let _ = writeln!(manifest, "#@ sample_rate = {}", spec.sample_rate);
    let _ = writeln!(
        manifest,
        "# synthetic laplacian corpus: scale {} spoof_ratio {} seed {}",
        spec.scale, spec.spoof_ratio, spec.seed
    );
    for i in 0..spec.n_utterances {
        let (subset, spoof, gender, coded) = layout(spec, i);
        let utt_id = format!("{}_{:05}", spec.name, i);
        let rel = format!("wav/{utt_id}.wav");
        let buf = SampleBuffer::new(utterance_samples(spec, i), spec.sample_rate)?;
        write_wav(&dir.join(&rel), &buf)?;
        let codec = if coded { spec.eval_codec.as_deref().unwrap_or("none") } else { "none" };
        let (label, attack) = if spoof { ("spoof", format!("A{:02}", i % 7 + 1)) } else { ("bonafide", "-".into()) };
        let _ = writeln!(
            manifest,
            "{utt_id}\t{rel}\t{subset}\t{label}\tspk{:03}\t{gender}\t{codec}\t{attack}",
            i % 10
        );
    }
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, manifest).map_err(io(&path))?;
    Ok(path)
}

/// Writes a score file for the corpus: bona fide scores ~ N(`separation`, 1),
/// spoof scores ~ N(-`separation`, 1).
pub fn write_scores(path: &Path, spec: &SynthSpec, separation: f64, seed: u64) -> std::io::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = String::from("# utt_id\tscore\n");
    for i in 0..spec.n_utterances {
        let (_, spoof, _, _) = layout(spec, i);
        let mean = if spoof { -separation } else { separation };
        let _ = writeln!(out, "{}_{:05}\t{:.6}", spec.name, i, mean + noise.sample(&mut rng));
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, out)
}
