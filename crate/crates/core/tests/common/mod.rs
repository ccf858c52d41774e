//! Two synthetic corpora and a config that exercises every report step.

#![allow(dead_code)]

pub mod data;
pub mod oracle;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pmfscope::corpus::Subset;
use pmfscope::synth::{write_corpus, write_scores, SynthSpec};

pub const BIN: &str = env!("CARGO_BIN_EXE_pmfscope");

pub struct Scenario {
    pub root: PathBuf,
    pub config: PathBuf,
}

pub struct ScenarioSize {
    pub utterances: usize,
    pub seconds: f64,
    /// Overrides the filterbank FIR length when set.
    pub fir_length: Option<usize>,
}

impl ScenarioSize {
    pub const SMALL: ScenarioSize = ScenarioSize { utterances: 90, seconds: 0.25, fir_length: Some(512) };
}

/// Corpora `A` (scale 1500) and `B` (scale 4500, part of eval coded), each
/// with a score file, plus `report.cfg` covering every step.
pub fn scenario(root: &Path, size: &ScenarioSize) -> Scenario {
    for (name, scale, codec, seed) in [("A", 1500.0, None, 11), ("B", 4500.0, Some("mp3"), 12)] {
        let spec = SynthSpec {
            n_utterances: size.utterances,
            seconds: size.seconds,
            eval_codec: codec.map(str::to_string),
            ..SynthSpec::new(name, scale, seed)
        };
        write_corpus(&root.join(name), &spec).unwrap();
        write_scores(&root.join(name).join("scores.tsv"), &spec, 2.0, seed + 100).unwrap();
    }
    let mut cfg = String::from("workspace = ws\ncorpus.A = A/manifest.tsv\ncorpus.B = B/manifest.tsv\n");
    for c in ["A", "B"] {
        for s in Subset::ALL {
            for l in ["bonafide", "spoof"] {
                let _ = writeln!(cfg, "pmf = {c}:{s}:{l}");
            }
            let _ = writeln!(cfg, "compare = {c}:{s}:bonafide ~ {c}:{s}:spoof");
        }
    }
    cfg.push_str("compare = A:train:bonafide ~ A:train:bonafide\n");
    if let Some(n) = size.fir_length {
        let _ = writeln!(cfg, "filterbank.fir_length = {n}");
    }
    cfg.push_str(
        "embed.fit = A:train\n\
         embed.project = A:dev\n\
         embed.project = A:eval\n\
         embed.project = B:eval\n\
         umap.seed = 7\n\
         umap.n_epochs_fit = 200\n\
         eval.dev = A:dev @ A/scores.tsv\n\
         eval.target = A:eval @ A/scores.tsv\n\
         eval.target = B:eval @ B/scores.tsv\n\
         eval.seed = 3\n\
         eval.n_bootstrap = 200\n",
    );
    let config = root.join("report.cfg");
    std::fs::write(&config, cfg).unwrap();
    Scenario { root: root.to_path_buf(), config }
}

pub fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Value of `key=` in an `ok` status line.
pub fn status_field(line: &str, key: &str) -> Option<u64> {
    line.split('\t').find_map(|f| f.strip_prefix(&format!("{key}="))?.trim().parse().ok())
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.insert(p.strip_prefix(base).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Data rows of a TSV report (comments and the column header dropped).
pub fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect()
}
