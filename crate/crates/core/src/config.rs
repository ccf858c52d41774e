//! Run configuration: a line-oriented `key = value` text format.
//!
//! ```text
//! # comments start with '#'
//! workspace = work
//! epsilon = 1e-10
//! pooling = samples                 # samples | utterance_mean
//! corpus.G1 = g1/manifest.tsv       # relative paths resolve against the config file
//! pmf = G1:train:bonafide           # repeatable
//! compare = G1:train:bonafide ~ G1:train:spoof
//! compare.all_measures = false
//! symmetric_kl = mean               # mean | sum
//! filterbank.channels = 10
//! filterbank.order = 4
//! filterbank.fir_length = 2048
//! filterbank.f_min = 70
//! filterbank.f_max = 7200
//! embed.fit = G1:train
//! embed.reference = bonafide        # bonafide | spoof | both
//! embed.roster = SymmetricKL,ModifiedKS,...
//! embed.project = G1:dev:bonafide   # repeatable
//! umap.method = umap                # umap | pca
//! umap.seed = 7
//! umap.n_neighbors = 15
//! umap.min_dist = 0.1
//! umap.n_epochs_fit = 500
//! umap.n_epochs_transform = 100
//! umap.negative_sample_rate = 5
//! eval.dev = G1:dev @ scores/g1.tsv
//! eval.target = G2:eval @ scores/g2.tsv   # repeatable
//! eval.seed = 11
//! eval.n_bootstrap = 1000
//! eval.alpha = 5
//! eval.polarity = higher            # higher | lower
//! ```
//!
//! A selection is `corpus:subset[:label[:gender[:codec]]]`; `*` matches
//! anything. The codec field takes `none`, `coded` or a codec name.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{CodecFilter, Filter, Gender, Label, Subset};
use crate::detection::{EvalConfig, Polarity};
use crate::embedding::ReferenceClass;
use crate::pmf::{Pooling, DEFAULT_EPSILON};
use crate::projection::UmapConfig;
use crate::similarity::{KlConvention, MeasureId};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("config: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A declared manifest selection.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Selection {
    pub corpus: String,
    pub subset: Option<Subset>,
    pub label: Option<Label>,
    pub gender: Option<Gender>,
    pub codec: Option<CodecFilter>,
}

impl Selection {
    pub fn filter(&self) -> Filter {
        Filter {
            subset: self.subset,
            label: self.label,
            gender: self.gender,
            codec: self.codec.clone(),
        }
    }

    /// File-name-safe identifier.
    pub fn slug(&self) -> String {
        self.to_string()
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
            .collect()
    }
}

fn opt_token<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "*".to_string(), ToString::to_string)
}

fn codec_token(c: &Option<CodecFilter>) -> String {
    match c {
        None => "*".into(),
        Some(CodecFilter::Uncoded) => "none".into(),
        Some(CodecFilter::Coded) => "coded".into(),
        Some(CodecFilter::Named(n)) => n.clone(),
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.corpus, opt_token(&self.subset), opt_token(&self.label))?;
        if self.gender.is_some() || self.codec.is_some() {
            write!(f, ":{}", opt_token(&self.gender))?;
        }
        if self.codec.is_some() {
            write!(f, ":{}", codec_token(&self.codec))?;
        }
        Ok(())
    }
}

fn wild<T: FromStr<Err = String>>(s: &str) -> Result<Option<T>, String> {
    if s == "*" { Ok(None) } else { s.parse().map(Some) }
}

impl FromStr for Selection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
        if parts.len() < 2 || parts.len() > 5 {
            return Err(format!("selection {s:?} must be corpus:subset[:label[:gender[:codec]]]"));
        }
        if parts[0].is_empty() || parts[0] == "*" {
            return Err(format!("selection {s:?} needs a corpus name"));
        }
        let field = |i: usize| parts.get(i).copied().unwrap_or("*");
        let codec = match field(4) {
            "*" => None,
            "none" => Some(CodecFilter::Uncoded),
            "coded" => Some(CodecFilter::Coded),
            name => Some(CodecFilter::Named(name.to_string())),
        };
        Ok(Selection {
            corpus: parts[0].to_string(),
            subset: wild(field(1))?,
            label: wild(field(2))?,
            gender: wild(field(3))?,
            codec,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub side_a: Selection,
    pub side_b: Selection,
}

/// A score file attached to a selection.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSelection {
    pub selection: Selection,
    pub scores: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMethod {
    Umap,
    Pca,
}

#[derive(Debug, Clone)]
pub struct EmbedPlan {
    pub fit: Selection,
    pub project: Vec<Selection>,
    pub reference: ReferenceClass,
    pub roster: Vec<MeasureId>,
    pub method: ProjectionMethod,
    pub umap: UmapConfig,
}

#[derive(Debug, Clone)]
pub struct EvalPlan {
    pub dev: ScoredSelection,
    pub targets: Vec<ScoredSelection>,
    pub config: EvalConfig,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// SHA-256 of the config text.
    pub hash: String,
    pub workspace: PathBuf,
    pub epsilon: f64,
    pub pooling: Pooling,
    pub kl: KlConvention,
    /// `(name, manifest path)` in declaration order.
    pub corpora: Vec<(String, PathBuf)>,
    pub pmfs: Vec<Selection>,
    pub comparisons: Vec<Comparison>,
    pub all_measures: bool,
    pub filterbank: FilterBankOverrides,
    pub embed: Option<EmbedPlan>,
    pub eval: Option<EvalPlan>,
}

/// Filterbank keys; unset fields take the defaults for the corpus sample rate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterBankOverrides {
    pub channels: Option<usize>,
    pub order: Option<u32>,
    pub fir_length: Option<usize>,
    pub f_min: Option<f64>,
    pub f_max: Option<f64>,
}

impl FilterBankOverrides {
    pub fn spec(&self, sample_rate: u32) -> crate::filterbank::FilterBankSpec {
        let mut s = crate::filterbank::FilterBankSpec::new(sample_rate);
        if let Some(v) = self.channels {
            s.n_channels_per_family = v;
        }
        if let Some(v) = self.order {
            s.order = v;
        }
        if let Some(v) = self.fir_length {
            s.fir_length = v;
        }
        if let Some(v) = self.f_min {
            s.f_min = v;
        }
        if let Some(v) = self.f_max {
            s.f_max = v;
        }
        s
    }
}

impl RunConfig {
    pub fn corpus_path(&self, name: &str) -> Option<&Path> {
        self.corpora.iter().find(|(n, _)| n == name).map(|(_, p)| p.as_path())
    }

    /// Every selection the config mentions.
    pub fn selections(&self) -> Vec<&Selection> {
        let mut out: Vec<&Selection> = self.pmfs.iter().collect();
        for c in &self.comparisons {
            out.push(&c.side_a);
            out.push(&c.side_b);
        }
        if let Some(e) = &self.embed {
            out.push(&e.fit);
            out.extend(&e.project);
        }
        if let Some(e) = &self.eval {
            out.push(&e.dev.selection);
            out.extend(e.targets.iter().map(|t| &t.selection));
        }
        out
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| ConfigError::Syntax {
        line,
        reason: format!("{key}: {e}"),
    })
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::Syntax {
            line,
            reason: format!("{key}: expected true or false, got {value:?}"),
        }),
    }
}

fn parse_scored(value: &str, base: &Path, line: usize) -> Result<ScoredSelection, ConfigError> {
    let (sel, path) = value.split_once('@').ok_or_else(|| ConfigError::Syntax {
        line,
        reason: "expected `selection @ score_file`".into(),
    })?;
    let path = path.trim();
    if path.is_empty() {
        return Err(ConfigError::Syntax {
            line,
            reason: "missing score file path".into(),
        });
    }
    Ok(ScoredSelection {
        selection: parse_value("selection", sel, line)?,
        scores: base.join(path),
    })
}

#[derive(Default)]
struct Raw {
    workspace: Option<PathBuf>,
    epsilon: Option<f64>,
    pooling: Option<Pooling>,
    kl: Option<KlConvention>,
    corpora: Vec<(String, PathBuf)>,
    pmfs: Vec<Selection>,
    comparisons: Vec<Comparison>,
    all_measures: bool,
    filterbank: FilterBankOverrides,
    embed_fit: Option<Selection>,
    embed_project: Vec<Selection>,
    embed_reference: Option<ReferenceClass>,
    embed_roster: Option<Vec<MeasureId>>,
    umap_method: Option<ProjectionMethod>,
    umap_seed: Option<u64>,
    umap_n_neighbors: Option<usize>,
    umap_min_dist: Option<f64>,
    umap_n_epochs_fit: Option<usize>,
    umap_n_epochs_transform: Option<usize>,
    umap_negative_sample_rate: Option<usize>,
    eval_dev: Option<ScoredSelection>,
    eval_targets: Vec<ScoredSelection>,
    eval_seed: Option<u64>,
    eval_n_bootstrap: Option<usize>,
    eval_alpha: Option<f64>,
    eval_polarity: Option<Polarity>,
}

fn set_once<T>(slot: &mut Option<T>, value: T, key: &str, line: usize) -> Result<(), ConfigError> {
    if slot.is_some() {
        return Err(ConfigError::Syntax {
            line,
            reason: format!("{key} given twice"),
        });
    }
    *slot = Some(value);
    Ok(())
}

/// Parses config text; relative paths resolve against `base_dir`.
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<RunConfig, ConfigError> {
    let mut raw = Raw::default();
    for (i, full) in text.lines().enumerate() {
        let line = i + 1;
        let content = full.split_once('#').map_or(full, |(c, _)| c).trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            reason: format!("expected `key = value`, got {content:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if value.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                reason: format!("{key} has an empty value"),
            });
        }
        let p = |v: &str| base_dir.join(v);
        match key {
            "workspace" => set_once(&mut raw.workspace, p(value), key, line)?,
            "epsilon" => set_once(&mut raw.epsilon, parse_value(key, value, line)?, key, line)?,
            "pooling" => {
                let pooling = match value {
                    "samples" => Pooling::Samples,
                    "utterance_mean" => Pooling::UtteranceMean,
                    _ => {
                        return Err(ConfigError::Syntax {
                            line,
                            reason: format!("pooling: unknown mode {value:?}"),
                        })
                    }
                };
                set_once(&mut raw.pooling, pooling, key, line)?
            }
            "symmetric_kl" => set_once(&mut raw.kl, parse_value(key, value, line)?, key, line)?,
            "pmf" => raw.pmfs.push(parse_value(key, value, line)?),
            "compare" => {
                let (a, b) = value.split_once('~').ok_or_else(|| ConfigError::Syntax {
                    line,
                    reason: "compare expects `selection ~ selection`".into(),
                })?;
                raw.comparisons.push(Comparison {
                    side_a: parse_value(key, a, line)?,
                    side_b: parse_value(key, b, line)?,
                });
            }
            "compare.all_measures" => raw.all_measures = parse_bool(key, value, line)?,
            "filterbank.channels" => {
                set_once(&mut raw.filterbank.channels, parse_value(key, value, line)?, key, line)?
            }
            "filterbank.order" => set_once(&mut raw.filterbank.order, parse_value(key, value, line)?, key, line)?,
            "filterbank.fir_length" => {
                set_once(&mut raw.filterbank.fir_length, parse_value(key, value, line)?, key, line)?
            }
            "filterbank.f_min" => set_once(&mut raw.filterbank.f_min, parse_value(key, value, line)?, key, line)?,
            "filterbank.f_max" => set_once(&mut raw.filterbank.f_max, parse_value(key, value, line)?, key, line)?,
            "embed.fit" => set_once(&mut raw.embed_fit, parse_value(key, value, line)?, key, line)?,
            "embed.project" => raw.embed_project.push(parse_value(key, value, line)?),
            "embed.reference" => {
                set_once(&mut raw.embed_reference, parse_value(key, value, line)?, key, line)?
            }
            "embed.roster" => {
                let roster = value
                    .split(',')
                    .map(|m| parse_value::<MeasureId>(key, m.trim(), line))
                    .collect::<Result<Vec<_>, _>>()?;
                set_once(&mut raw.embed_roster, roster, key, line)?
            }
            "umap.method" => {
                let m = match value {
                    "umap" => ProjectionMethod::Umap,
                    "pca" => ProjectionMethod::Pca,
                    _ => {
                        return Err(ConfigError::Syntax {
                            line,
                            reason: format!("umap.method: unknown method {value:?}"),
                        })
                    }
                };
                set_once(&mut raw.umap_method, m, key, line)?
            }
            "umap.seed" => set_once(&mut raw.umap_seed, parse_value(key, value, line)?, key, line)?,
            "umap.n_neighbors" => set_once(&mut raw.umap_n_neighbors, parse_value(key, value, line)?, key, line)?,
            "umap.min_dist" => set_once(&mut raw.umap_min_dist, parse_value(key, value, line)?, key, line)?,
            "umap.n_epochs_fit" => {
                set_once(&mut raw.umap_n_epochs_fit, parse_value(key, value, line)?, key, line)?
            }
            "umap.n_epochs_transform" => {
                set_once(&mut raw.umap_n_epochs_transform, parse_value(key, value, line)?, key, line)?
            }
            "umap.negative_sample_rate" => {
                set_once(&mut raw.umap_negative_sample_rate, parse_value(key, value, line)?, key, line)?
            }
            "eval.dev" => set_once(&mut raw.eval_dev, parse_scored(value, base_dir, line)?, key, line)?,
            "eval.target" => raw.eval_targets.push(parse_scored(value, base_dir, line)?),
            "eval.seed" => set_once(&mut raw.eval_seed, parse_value(key, value, line)?, key, line)?,
            "eval.n_bootstrap" => set_once(&mut raw.eval_n_bootstrap, parse_value(key, value, line)?, key, line)?,
            "eval.alpha" => set_once(&mut raw.eval_alpha, parse_value(key, value, line)?, key, line)?,
            "eval.polarity" => set_once(&mut raw.eval_polarity, parse_value(key, value, line)?, key, line)?,
            _ => {
                if let Some(name) = key.strip_prefix("corpus.") {
                    if name.is_empty() || name.contains(':') || name == "*" {
                        return Err(ConfigError::Syntax {
                            line,
                            reason: format!("bad corpus name {name:?}"),
                        });
                    }
                    if raw.corpora.iter().any(|(n, _)| n == name) {
                        return Err(ConfigError::Syntax {
                            line,
                            reason: format!("corpus {name} declared twice"),
                        });
                    }
                    raw.corpora.push((name.to_string(), p(value)));
                } else {
                    return Err(ConfigError::Syntax {
                        line,
                        reason: format!("unknown key {key:?}"),
                    });
                }
            }
        }
    }
    finish(raw, text)
}

fn finish(raw: Raw, text: &str) -> Result<RunConfig, ConfigError> {
    let invalid = |m: String| Err(ConfigError::Invalid(m));
    let workspace = match raw.workspace {
        Some(w) => w,
        None => return invalid("workspace is required".into()),
    };
    if raw.corpora.is_empty() {
        return invalid("at least one corpus.<name> is required".into());
    }
    let epsilon = raw.epsilon.unwrap_or(DEFAULT_EPSILON);
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return invalid(format!("epsilon must be finite and non-negative, got {epsilon}"));
    }

    let embed = match raw.embed_fit {
        Some(fit) => {
            let seed = match (raw.umap_seed, raw.umap_method) {
                (Some(s), _) => s,
                (None, Some(ProjectionMethod::Pca)) => 0,
                (None, _) => return invalid("umap.seed is required when embed.fit is set".into()),
            };
            let mut umap = UmapConfig::new(seed);
            if let Some(v) = raw.umap_n_neighbors {
                umap.n_neighbors = v;
            }
            if let Some(v) = raw.umap_min_dist {
                umap.min_dist = v;
            }
            if let Some(v) = raw.umap_n_epochs_fit {
                umap.n_epochs_fit = v;
            }
            if let Some(v) = raw.umap_n_epochs_transform {
                umap.n_epochs_transform = v;
            }
            if let Some(v) = raw.umap_negative_sample_rate {
                umap.negative_sample_rate = v;
            }
            umap.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            Some(EmbedPlan {
                fit,
                project: raw.embed_project,
                reference: raw.embed_reference.unwrap_or(ReferenceClass::BonaFide),
                roster: raw.embed_roster.unwrap_or_else(|| MeasureId::ALL.to_vec()),
                method: raw.umap_method.unwrap_or(ProjectionMethod::Umap),
                umap,
            })
        }
        None if !raw.embed_project.is_empty() => {
            return invalid("embed.project requires embed.fit".into());
        }
        None => None,
    };

    let eval = match raw.eval_dev {
        Some(dev) => {
            let Some(seed) = raw.eval_seed else {
                return invalid("eval.seed is required when eval.dev is set".into());
            };
            let mut config = EvalConfig::new(seed);
            if let Some(v) = raw.eval_n_bootstrap {
                config.n_bootstrap = v;
            }
            if let Some(v) = raw.eval_alpha {
                config.alpha_percent = v;
            }
            if let Some(v) = raw.eval_polarity {
                config.polarity = v;
            }
            if config.n_bootstrap == 0 || !(config.alpha_percent > 0.0 && config.alpha_percent < 100.0) {
                return invalid("eval.n_bootstrap must be >= 1 and eval.alpha in (0, 100)".into());
            }
            Some(EvalPlan {
                dev,
                targets: raw.eval_targets,
                config,
            })
        }
        None if !raw.eval_targets.is_empty() => return invalid("eval.target requires eval.dev".into()),
        None => None,
    };

    let config = RunConfig {
        hash: hex::encode(Sha256::digest(text.as_bytes())),
        workspace,
        epsilon,
        pooling: raw.pooling.unwrap_or_default(),
        kl: raw.kl.unwrap_or(KlConvention::Mean),
        corpora: raw.corpora,
        pmfs: raw.pmfs,
        comparisons: raw.comparisons,
        all_measures: raw.all_measures,
        filterbank: raw.filterbank,
        embed,
        eval,
    };
    for sel in config.selections() {
        if config.corpus_path(&sel.corpus).is_none() {
            return invalid(format!("selection {sel} names undeclared corpus {}", sel.corpus));
        }
    }
    Ok(config)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, base)
}
