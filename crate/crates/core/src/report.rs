//! Pipeline orchestration: turns a [`RunConfig`] into report files under
//! `<workspace>/reports`, reusing cached intermediates under
//! `<workspace>/cache`.
//!
//! Every emitted file starts with provenance comments (toolkit version, config
//! hash, seeds) and carries no timestamps, so reruns are byte-identical.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::cache::{write_atomic, Cache, KeyBuilder};
use crate::config::{ConfigError, ProjectionMethod, RunConfig, Selection};
use crate::corpus::{parse_manifest_str, CorpusError, CorpusManifest, Label, Subset};
use crate::detection::{evaluate, parse_scores, EvalError, EvalTarget, ScoreRecord};
use crate::embedding::{
    build_references, embed_records, embeddings_from_bytes, embeddings_to_bytes, embeddings_to_tsv,
    EmbeddingError, EmbeddingOptions, EmbeddingVector, ReferenceBank,
};
use crate::pmf::{records_pmf, Pmf, PmfError, Pooling};
use crate::projection::{dispersion, PcaModel, Point2, ProjectionError, UmapModel};
use crate::similarity::{measure_roster, MeasureError, MeasureId};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("corpus {name}: {source}")]
    Corpus {
        name: String,
        #[source]
        source: CorpusError,
    },
    #[error("selection {0} matched no utterances")]
    EmptySelection(String),
    #[error("pmf {selection}: {source}")]
    Pmf {
        selection: String,
        #[source]
        source: PmfError,
    },
    #[error("compare {comparison}: {source}")]
    Measure {
        comparison: String,
        #[source]
        source: MeasureError,
    },
    #[error("embedding {selection}: {source}")]
    Embedding {
        selection: String,
        #[source]
        source: EmbeddingError,
    },
    #[error("projection: {0}")]
    Projection(#[from] ProjectionError),
    #[error("eval: {0}")]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

impl From<std::io::Error> for ReportError {
    fn from(source: std::io::Error) -> Self {
        ReportError::Io {
            path: "cache".into(),
            source,
        }
    }
}

impl ReportError {
    /// Stable identifier for the machine-parsable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            ReportError::Config(_) => "config",
            ReportError::Corpus { .. } => "corpus",
            ReportError::EmptySelection(_) => "empty_selection",
            ReportError::Pmf { .. } => "pmf",
            ReportError::Measure { .. } => "measure",
            ReportError::Embedding { .. } => "embedding",
            ReportError::Projection(_) => "projection",
            ReportError::Eval(EvalError::JoinFailure { .. }) => "join_failure",
            ReportError::Eval(_) => "eval",
            ReportError::Io { .. } => "io",
            ReportError::Invalid(_) => "invalid",
        }
    }
}

/// Files written and cache traffic of one run.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct RunSummary {
    pub written: Vec<PathBuf>,
    pub cache_hits: usize,
    pub cache_misses: usize,
}

struct Corpus {
    manifest: CorpusManifest,
    bytes: Vec<u8>,
}

pub struct Runner {
    config: RunConfig,
    corpora: BTreeMap<String, Corpus>,
    cache: Cache,
    reports: PathBuf,
    written: RefCell<Vec<PathBuf>>,
}

fn float_key(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

impl Runner {
    /// Loads every declared manifest and checks that each declared selection
    /// matches at least one record.
    pub fn new(config: RunConfig) -> Result<Runner, ReportError> {
        let mut corpora = BTreeMap::new();
        for (name, path) in &config.corpora {
            let bytes = std::fs::read(path).map_err(|source| ReportError::Corpus {
                name: name.clone(),
                source: CorpusError::Io {
                    path: path.clone(),
                    source,
                },
            })?;
            let text = String::from_utf8_lossy(&bytes);
            let manifest = parse_manifest_str(&text, path.parent(), name).map_err(|source| ReportError::Corpus {
                name: name.clone(),
                source,
            })?;
            corpora.insert(name.clone(), Corpus { manifest, bytes });
        }
        let runner = Runner {
            cache: Cache::new(&config.workspace),
            reports: config.workspace.join("reports"),
            config,
            corpora,
            written: RefCell::new(Vec::new()),
        };
        for sel in runner.config.selections() {
            let (manifest, _) = runner.corpus(sel)?;
            if manifest.select(&sel.filter()).is_empty() {
                return Err(ReportError::EmptySelection(sel.to_string()));
            }
        }
        Ok(runner)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            written: self.written.borrow().clone(),
            cache_hits: self.cache.hits(),
            cache_misses: self.cache.misses(),
        }
    }

    fn corpus(&self, sel: &Selection) -> Result<(&CorpusManifest, &[u8]), ReportError> {
        self.corpora
            .get(&sel.corpus)
            .map(|c| (&c.manifest, c.bytes.as_slice()))
            .ok_or_else(|| ReportError::Invalid(format!("undeclared corpus {}", sel.corpus)))
    }

    fn header(&self, step: &str) -> Vec<String> {
        let seed = |s: Option<u64>| s.map_or_else(|| "-".to_string(), |v| v.to_string());
        vec![
            format!("pmfscope {VERSION}"),
            format!("step {step}"),
            format!("config_sha256 {}", self.config.hash),
            format!(
                "seeds umap={} eval={}",
                seed(self.config.embed.as_ref().map(|e| e.umap.seed)),
                seed(self.config.eval.as_ref().map(|e| e.config.seed))
            ),
        ]
    }

    fn emit(&self, rel: &str, bytes: &[u8]) -> Result<(), ReportError> {
        let path = self.reports.join(rel);
        write_atomic(&path, bytes).map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.written.borrow_mut().push(path);
        Ok(())
    }

    /// Unsmoothed class distribution of a selection, via the cache.
    fn raw_pmf(&self, sel: &Selection) -> Result<Pmf, ReportError> {
        let (manifest, bytes) = self.corpus(sel)?;
        let pooling = match self.config.pooling {
            Pooling::Samples => "samples",
            Pooling::UtteranceMean => "utterance_mean",
        };
        let key = KeyBuilder::new("pmf").part(bytes).text(&sel.to_string()).text(pooling).finish();
        let wrap = |source| ReportError::Pmf {
            selection: sel.to_string(),
            source,
        };
        let data = self.cache.get_or_compute(
            "pmf",
            &key,
            |b| Pmf::from_bytes(b).is_ok(),
            || {
                let records = manifest.select(&sel.filter());
                if records.is_empty() {
                    return Err(ReportError::EmptySelection(sel.to_string()));
                }
                records_pmf(&records, manifest.sample_rate, 0.0, self.config.pooling)
                    .map(|p| p.to_bytes())
                    .map_err(wrap)
            },
        )?;
        Pmf::from_bytes(&data).map_err(wrap)
    }

    pub fn cmd_pmf(&mut self) -> Result<(), ReportError> {
        let eps = self.config.epsilon;
        for sel in self.config.pmfs.clone() {
            let pmf = self.raw_pmf(&sel)?.smoothed(eps).map_err(|source| ReportError::Pmf {
                selection: sel.to_string(),
                source,
            })?;
            let (manifest, _) = self.corpus(&sel)?;
            let n = manifest.select(&sel.filter()).len();
            let mut header = self.header("pmf");
            header.push(format!("selection {sel}"));
            header.push(format!("utterances {n}"));
            header.push(format!("smoothing_epsilon {eps:e}"));
            let slug = sel.slug();
            self.emit(&format!("pmf/{slug}.pmf"), &pmf.to_bytes())?;
            self.emit(&format!("pmf/{slug}.tsv"), pmf.to_sparse_tsv(&header).as_bytes())?;
        }
        Ok(())
    }

    pub fn cmd_compare(&mut self) -> Result<(), ReportError> {
        let roster: &[MeasureId] = if self.config.all_measures { &MeasureId::ALL } else { &MeasureId::HEADLINE };
        let mut out = String::new();
        for h in self.header("compare") {
            let _ = writeln!(out, "# {h}");
        }
        let _ = writeln!(out, "# epsilon {:e}\tsymmetric_kl {:?}", self.config.epsilon, self.config.kl);
        out.push_str("side_a\tside_b\tmeasure\tvalue\n");
        for c in &self.config.comparisons {
            let label = format!("{} ~ {}", c.side_a, c.side_b);
            let p = self.raw_pmf(&c.side_a)?;
            let q = self.raw_pmf(&c.side_b)?;
            let values = measure_roster(&p, &q, self.config.epsilon, roster, self.config.kl).map_err(|source| {
                ReportError::Measure {
                    comparison: label.clone(),
                    source,
                }
            })?;
            for v in values {
                let _ = writeln!(out, "{}\t{}\t{}\t{:.6e}", c.side_a, c.side_b, v.measure, v.value);
            }
        }
        self.emit("compare.tsv", out.as_bytes())
    }

    fn embeddings(
        &self,
        sel: &Selection,
        refs: &mut Option<ReferenceBank>,
        refs_key: &KeyBuilder,
    ) -> Result<Vec<EmbeddingVector>, ReportError> {
        let plan = self.config.embed.as_ref().expect("embed plan present");
        let (manifest, bytes) = self.corpus(sel)?;
        let wrap = |selection: &Selection| {
            let selection = selection.to_string();
            move |source| ReportError::Embedding { selection, source }
        };
        let key = refs_key.clone().part(bytes).text(&sel.to_string()).finish();
        let data = self.cache.get_or_compute(
            "embedding",
            &key,
            |b| embeddings_from_bytes(b).is_ok(),
            || {
                if refs.is_none() {
                    let (fit_manifest, _) = self.corpus(&plan.fit)?;
                    let spec = self.config.filterbank.spec(fit_manifest.sample_rate);
                    let options = EmbeddingOptions {
                        epsilon: self.config.epsilon,
                        roster: plan.roster.clone(),
                        reference: plan.reference,
                        kl: self.config.kl,
                    };
                    *refs = Some(
                        build_references(fit_manifest, &plan.fit.filter(), &spec, options)
                            .map_err(wrap(&plan.fit))?,
                    );
                }
                let bank = refs.as_ref().expect("references built");
                if manifest.sample_rate != bank.spec().sample_rate {
                    return Err(ReportError::Invalid(format!(
                        "selection {sel}: sample rate {} differs from the fit corpus ({})",
                        manifest.sample_rate,
                        bank.spec().sample_rate
                    )));
                }
                let records = manifest.select(&sel.filter());
                let vectors = embed_records(&records, manifest.sample_rate, bank).map_err(wrap(sel))?;
                Ok(embeddings_to_bytes(&vectors))
            },
        )?;
        embeddings_from_bytes(&data).map_err(wrap(sel))
    }

    pub fn cmd_embed_project(&mut self) -> Result<(), ReportError> {
        let Some(plan) = self.config.embed.clone() else {
            return Err(ReportError::Invalid("embed-project needs embed.fit in the config".into()));
        };
        let (fit_manifest, fit_bytes) = self.corpus(&plan.fit)?;
        let spec = self.config.filterbank.spec(fit_manifest.sample_rate);
        spec.validate()
            .map_err(|e| ReportError::Invalid(format!("filterbank: {e}")))?;
        let roster: Vec<&str> = plan.roster.iter().map(|m| m.name()).collect();
        let mut refs_key = KeyBuilder::new("embedding");
        refs_key
            .part(fit_bytes)
            .text(&plan.fit.to_string())
            .text(&serde_json::to_string(&spec).expect("spec serializes"))
            .text(&float_key(self.config.epsilon))
            .text(&roster.join(","))
            .text(&format!("{:?}", plan.reference))
            .text(&format!("{:?}", self.config.kl));
        let refs_key = refs_key;

        let mut refs = None;
        let fit_vectors = self.embeddings(&plan.fit, &mut refs, &refs_key)?;
        let mut projected = Vec::new();
        for sel in &plan.project {
            projected.push((sel.clone(), self.embeddings(sel, &mut refs, &refs_key)?));
        }
        let values = |vs: &[EmbeddingVector]| vs.iter().map(|v| v.values.clone()).collect::<Vec<_>>();

        let method = match plan.method {
            ProjectionMethod::Umap => "umap",
            ProjectionMethod::Pca => "pca",
        };
        let mut meta = self.header("embed-project");
        meta.push(format!("fit {}", plan.fit));
        meta.push(format!("reference {:?}\troster {}", plan.reference, roster.join(",")));
        meta.push(format!("filterbank {}", serde_json::to_string(&spec).expect("spec serializes")));
        meta.push(format!("projection {method}"));
        if plan.method == ProjectionMethod::Umap {
            meta.push(format!("umap {}", serde_json::to_string(&plan.umap).expect("config serializes")));
        }

        let fit_data = values(&fit_vectors);
        type Project<'a> = Box<dyn Fn(&[Vec<f64>]) -> Result<Vec<Point2>, ProjectionError> + 'a>;
        let (model_bytes, project): (Option<Vec<u8>>, Project<'_>) = match plan.method {
            ProjectionMethod::Umap => {
                let key = KeyBuilder::new("umap")
                    .text(&refs_key.clone().text(&plan.fit.to_string()).finish())
                    .text(&serde_json::to_string(&plan.umap).expect("config serializes"))
                    .finish();
                let bytes = self.cache.get_or_compute(
                    "umap",
                    &key,
                    |b| UmapModel::from_bytes(b).is_ok(),
                    || Ok::<_, ReportError>(UmapModel::fit(&fit_data, &plan.umap)?.to_bytes()),
                )?;
                let model = UmapModel::from_bytes(&bytes)?;
                (Some(bytes), Box::new(move |v| model.transform(v)))
            }
            ProjectionMethod::Pca => {
                let model = PcaModel::fit(&fit_data)?;
                (None, Box::new(move |v| model.transform(v)))
            }
        };

        let mut with_sel = meta.clone();
        with_sel.push(format!("selection {}", plan.fit));
        let (fit_manifest, _) = self.corpus(&plan.fit)?;
        let fit_tsv = embeddings_to_tsv(&fit_vectors, fit_manifest, &with_sel);
        self.emit(&format!("embeddings/{}.tsv", plan.fit.slug()), fit_tsv.as_bytes())?;
        if let Some(bytes) = &model_bytes {
            self.emit("umap_model.ump", bytes)?;
        }

        let mut summary = String::new();
        for h in &meta {
            let _ = writeln!(summary, "# {h}");
        }
        summary.push_str("selection\tn_points\tdispersion\n");
        for (sel, vectors) in &projected {
            let (manifest, _) = self.corpus(sel)?;
            let mut with_sel = meta.clone();
            with_sel.push(format!("selection {sel}"));
            let tsv = embeddings_to_tsv(vectors, manifest, &with_sel);
            self.emit(&format!("embeddings/{}.tsv", sel.slug()), tsv.as_bytes())?;

            let points = project(&values(vectors))?;
            let mut cloud = String::new();
            for h in &with_sel {
                let _ = writeln!(cloud, "# {h}");
            }
            cloud.push_str("utt_id\tx\ty\tlabel\tsubset\tgender\tcodec\n");
            for (v, p) in vectors.iter().zip(&points) {
                let r = manifest.get(&v.utt_id).expect("embedded records come from the manifest");
                let _ = writeln!(
                    cloud,
                    "{}\t{:.9e}\t{:.9e}\t{}\t{}\t{}\t{}",
                    v.utt_id, p[0], p[1], r.label, r.subset, r.gender, r.codec
                );
            }
            self.emit(&format!("points/{}.tsv", sel.slug()), cloud.as_bytes())?;
            let d = if points.len() >= 2 { format!("{:.9e}", dispersion(&points)?) } else { "nan".into() };
            let _ = writeln!(summary, "{sel}\t{}\t{d}", points.len());
        }
        self.emit("dispersion.tsv", summary.as_bytes())
    }

    /// Scores of `sel`'s corpus that pass the selection's non-label criteria.
    fn scored(&self, sel: &Selection, path: &Path) -> Result<Vec<ScoreRecord>, ReportError> {
        let (manifest, _) = self.corpus(sel)?;
        let scores = parse_scores(path)?;
        let filter = sel.filter();
        let mut kept = Vec::with_capacity(scores.len());
        for s in scores {
            let rec = manifest.get(&s.utt_id).ok_or_else(|| EvalError::JoinFailure {
                database: sel.corpus.clone(),
                utt_id: s.utt_id.clone(),
            })?;
            if filter.subset.is_none_or(|v| v == rec.subset)
                && filter.gender.is_none_or(|v| v == rec.gender)
                && filter.codec.as_ref().is_none_or(|c| c.matches(&rec.codec))
            {
                kept.push(s);
            }
        }
        Ok(kept)
    }

    pub fn cmd_eval(&mut self) -> Result<(), ReportError> {
        let Some(plan) = self.config.eval.clone() else {
            return Err(ReportError::Invalid("eval needs eval.dev in the config".into()));
        };
        let dev_scores = self.scored(&plan.dev.selection, &plan.dev.scores)?;
        let mut target_scores = Vec::new();
        for t in &plan.targets {
            target_scores.push(self.scored(&t.selection, &t.scores)?);
        }
        let targets: Vec<EvalTarget<'_>> = plan
            .targets
            .iter()
            .zip(&target_scores)
            .map(|(t, scores)| {
                let (manifest, _) = self.corpus(&t.selection)?;
                Ok(EvalTarget {
                    database: &t.selection.corpus,
                    manifest,
                    subset: t.selection.subset,
                    scores,
                })
            })
            .collect::<Result<_, ReportError>>()?;
        let (dev_manifest, _) = self.corpus(&plan.dev.selection)?;
        let report = evaluate(dev_manifest, &dev_scores, &targets, &plan.config)?;

        let mut header = self.header("eval");
        header.push(format!("dev {}", plan.dev.selection));
        for t in &plan.targets {
            header.push(format!("target {}", t.selection));
        }
        let provenance = serde_json::json!({
            "toolkit": format!("pmfscope {VERSION}"),
            "config_sha256": self.config.hash,
            "dev": plan.dev.selection.to_string(),
            "targets": plan.targets.iter().map(|t| t.selection.to_string()).collect::<Vec<_>>(),
        });
        let tsv = report.to_tsv(&header);
        let json = report.to_json(&provenance);
        self.emit("eval.tsv", tsv.as_bytes())?;
        self.emit("eval.json", json.as_bytes())
    }

    /// Per-corpus record counts by subset and class.
    pub fn cmd_corpora(&mut self) -> Result<(), ReportError> {
        let mut out = String::new();
        for h in self.header("corpora") {
            let _ = writeln!(out, "# {h}");
        }
        out.push_str("corpus\tsubset\tbonafide\tspoof\n");
        for (name, c) in &self.corpora {
            for subset in Subset::ALL {
                let b = c.manifest.count(subset, Label::BonaFide);
                let s = c.manifest.count(subset, Label::Spoof);
                if b + s > 0 {
                    let _ = writeln!(out, "{name}\t{subset}\t{b}\t{s}");
                }
            }
        }
        self.emit("corpora.tsv", out.as_bytes())
    }

    /// Every step the config declares.
    pub fn cmd_report_all(&mut self) -> Result<(), ReportError> {
        self.cmd_corpora()?;
        if !self.config.pmfs.is_empty() {
            self.cmd_pmf()?;
        }
        if !self.config.comparisons.is_empty() {
            self.cmd_compare()?;
        }
        if self.config.embed.is_some() {
            self.cmd_embed_project()?;
        }
        if self.config.eval.is_some() {
            self.cmd_eval()?;
        }
        Ok(())
    }
}
