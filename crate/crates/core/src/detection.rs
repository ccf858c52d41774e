//! Score-file evaluation: EER threshold on a development set, stratified
//! bona fide miss rates and percentile-bootstrap confidence intervals.
//!
//! Conventions: higher score means more bona fide (flip with
//! [`Polarity::LowerIsBonaFide`]); a bona fide trial is missed when its score
//! is strictly below the threshold; a spoof trial is a false alarm when its
//! score is at or above it.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusManifest, Gender, Label, Subset};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("score list is empty")]
    EmptyScores,
    #[error("outcome list is empty")]
    EmptyOutcomes,
    #[error("score line {line}: {reason}")]
    MalformedScore { line: usize, reason: String },
    #[error("score line {line}: duplicate utt_id {utt_id}")]
    DuplicateScore { line: usize, utt_id: String },
    #[error("utt_id {utt_id} not found in manifest of {database}")]
    JoinFailure { database: String, utt_id: String },
    #[error("empty group: {0}")]
    EmptyGroup(String),
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub utt_id: String,
    pub score: f64,
}

/// Parses `utt_id<ws>score` lines; `#` starts a comment line.
pub fn parse_scores_str(text: &str) -> Result<Vec<ScoreRecord>, EvalError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(EvalError::MalformedScore {
                line,
                reason: format!("expected 2 fields, found {}", fields.len()),
            });
        }
        let score: f64 = fields[1].parse().map_err(|_| EvalError::MalformedScore {
            line,
            reason: format!("bad score {:?}", fields[1]),
        })?;
        if !score.is_finite() {
            return Err(EvalError::MalformedScore {
                line,
                reason: "score is not finite".into(),
            });
        }
        if !seen.insert(fields[0].to_string()) {
            return Err(EvalError::DuplicateScore {
                line,
                utt_id: fields[0].to_string(),
            });
        }
        out.push(ScoreRecord {
            utt_id: fields[0].to_string(),
            score,
        });
    }
    Ok(out)
}

pub fn parse_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scores_str(&text)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
}

fn count_below(sorted: &[f64], t: f64) -> usize {
    sorted.partition_point(|&s| s < t)
}

/// Equal error rate by sweeping every midpoint between adjacent distinct
/// pooled scores plus both infinities, interpolating linearly between the two
/// operating points that bracket the miss/false-alarm crossing.
pub fn compute_eer(bona_scores: &[f64], spoof_scores: &[f64]) -> Result<Eer, EvalError> {
    if bona_scores.is_empty() || spoof_scores.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    let mut bona = bona_scores.to_vec();
    let mut spoof = spoof_scores.to_vec();
    bona.sort_by(f64::total_cmp);
    spoof.sort_by(f64::total_cmp);
    let mut pooled: Vec<f64> = bona.iter().chain(&spoof).copied().collect();
    pooled.sort_by(f64::total_cmp);
    pooled.dedup();

    let mut thresholds = Vec::with_capacity(pooled.len() + 1);
    thresholds.push(f64::NEG_INFINITY);
    thresholds.extend(pooled.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    thresholds.push(f64::INFINITY);

    let (nb, ns) = (bona.len(), spoof.len());
    // Integer counts keep the sign test exact.
    let point = |t: f64| -> (usize, usize) { (count_below(&bona, t), ns - count_below(&spoof, t)) };
    let rate = |(miss, fa): (usize, usize)| (miss as f64 / nb as f64, fa as f64 / ns as f64);

    let mut prev = point(thresholds[0]);
    for k in 1..thresholds.len() {
        let cur = point(thresholds[k]);
        let sign = (cur.0 * ns) as i128 - (cur.1 * nb) as i128;
        if sign == 0 {
            return Ok(Eer {
                eer: rate(cur).0,
                threshold: thresholds[k],
            });
        }
        if sign > 0 {
            let (m0, f0) = rate(prev);
            let (m1, f1) = rate(cur);
            let (dm, df) = (m1 - m0, f1 - f0);
            let lambda = (f0 - m0) / (dm - df);
            let (lo, hi) = (thresholds[k - 1], thresholds[k]);
            let threshold = if lo.is_finite() && hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                pooled[k - 1]
            };
            return Ok(Eer {
                eer: m0 + lambda * dm,
                threshold,
            });
        }
        prev = cur;
    }
    unreachable!("miss minus false alarm reaches +1 at the last threshold")
}

/// Fraction of scores strictly below `threshold`.
pub fn miss_rate(bona_scores: &[f64], threshold: f64) -> Result<f64, EvalError> {
    if bona_scores.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    let missed = bona_scores.iter().filter(|&&s| s < threshold).count();
    Ok(missed as f64 / bona_scores.len() as f64)
}

/// Linear-interpolation percentile of sorted data (`q` in percent).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval of the mean of binary outcomes. Replica `r`
/// draws from ChaCha8 seeded with `seed` on stream `r`, so the result does not
/// depend on scheduling. The interval is widened, if needed, to contain the
/// point estimate.
pub fn bootstrap_ci(
    outcomes: &[bool],
    n_bootstrap: usize,
    alpha_percent: f64,
    seed: u64,
) -> Result<(f64, f64), EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::EmptyOutcomes);
    }
    if n_bootstrap == 0 {
        return Err(EvalError::InvalidConfig("n_bootstrap must be at least 1".into()));
    }
    if !(alpha_percent > 0.0 && alpha_percent < 100.0) {
        return Err(EvalError::InvalidConfig("alpha must lie in (0, 100)".into()));
    }
    let n = outcomes.len();
    let mut means: Vec<f64> = (0..n_bootstrap as u64)
        .into_par_iter()
        .map(|replica| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(replica);
            let hits = (0..n).filter(|_| outcomes[rng.gen_range(0..n)]).count();
            hits as f64 / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let point = outcomes.iter().filter(|&&o| o).count() as f64 / n as f64;
    let low = percentile(&means, alpha_percent / 2.0).min(point);
    let high = percentile(&means, 100.0 - alpha_percent / 2.0).max(point);
    Ok((low, high))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    HigherIsBonaFide,
    LowerIsBonaFide,
}

impl Polarity {
    pub fn token(self) -> &'static str {
        match self {
            Polarity::HigherIsBonaFide => "higher",
            Polarity::LowerIsBonaFide => "lower",
        }
    }

    fn apply(self, s: f64) -> f64 {
        match self {
            Polarity::HigherIsBonaFide => s,
            Polarity::LowerIsBonaFide => -s,
        }
    }
}

impl FromStr for Polarity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "higher" => Ok(Polarity::HigherIsBonaFide),
            "lower" => Ok(Polarity::LowerIsBonaFide),
            _ => Err(format!("unknown polarity {s:?} (expected higher|lower)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_bootstrap: usize,
    pub alpha_percent: f64,
    pub seed: u64,
    pub polarity: Polarity,
}

impl EvalConfig {
    pub fn new(seed: u64) -> Self {
        EvalConfig {
            n_bootstrap: 1000,
            alpha_percent: 5.0,
            seed,
            polarity: Polarity::HigherIsBonaFide,
        }
    }
}

/// Scores of one database to evaluate at the development threshold.
#[derive(Debug, Clone, Copy)]
pub struct EvalTarget<'a> {
    pub database: &'a str,
    pub manifest: &'a CorpusManifest,
    /// Restricts rows to one subset; `None` keeps every joined record.
    pub subset: Option<Subset>,
    pub scores: &'a [ScoreRecord],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub database: String,
    pub subset: String,
    pub gender: String,
    pub n_trials: usize,
    pub n_missed: usize,
    pub miss_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub eer_dev: f64,
    pub rows: Vec<EvalRow>,
    pub n_bootstrap: usize,
    pub alpha_percent: f64,
    pub seed: u64,
    pub polarity: Polarity,
    pub resampling: String,
}

fn gender_name(g: Gender) -> &'static str {
    match g {
        Gender::Male => "Male",
        Gender::Female => "Female",
        Gender::Unknown => "Unknown",
    }
}

/// Joins scores to a manifest; returns `(record label, gender, subset, score)`
/// in score-file order.
fn join<'m>(
    database: &str,
    manifest: &'m CorpusManifest,
    scores: &[ScoreRecord],
    polarity: Polarity,
) -> Result<Vec<(&'m crate::corpus::UtteranceRecord, f64)>, EvalError> {
    scores
        .iter()
        .map(|s| {
            manifest
                .get(&s.utt_id)
                .map(|r| (r, polarity.apply(s.score)))
                .ok_or_else(|| EvalError::JoinFailure {
                    database: database.to_string(),
                    utt_id: s.utt_id.clone(),
                })
        })
        .collect()
}

/// Threshold from the development EER, then one row per gender present in
/// each target plus an `All` row.
pub fn evaluate(
    dev_manifest: &CorpusManifest,
    dev_scores: &[ScoreRecord],
    targets: &[EvalTarget<'_>],
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let dev = join(&dev_manifest.corpus_name, dev_manifest, dev_scores, config.polarity)?;
    let class_scores = |label: Label| -> Vec<f64> {
        dev.iter().filter(|(r, _)| r.label == label).map(|&(_, s)| s).collect()
    };
    let (bona, spoof) = (class_scores(Label::BonaFide), class_scores(Label::Spoof));
    for (scores, label) in [(&bona, Label::BonaFide), (&spoof, Label::Spoof)] {
        if scores.is_empty() {
            return Err(EvalError::EmptyGroup(format!("development {label} scores")));
        }
    }
    let Eer { eer, threshold } = compute_eer(&bona, &spoof)?;

    let mut rows = Vec::new();
    for target in targets {
        let joined = join(target.database, target.manifest, target.scores, config.polarity)?;
        // BTreeMap keeps gender rows in a fixed order regardless of file order.
        let mut by_gender: BTreeMap<Gender, Vec<bool>> = BTreeMap::new();
        let mut all = Vec::new();
        let mut sorted: Vec<_> = joined
            .into_iter()
            .filter(|(r, _)| r.label == Label::BonaFide && target.subset.is_none_or(|s| r.subset == s))
            .collect();
        sorted.sort_by(|a, b| a.0.utt_id.cmp(&b.0.utt_id));
        for (r, s) in sorted {
            let missed = s < threshold;
            by_gender.entry(r.gender).or_default().push(missed);
            all.push(missed);
        }
        let subset = target.subset.map_or("all", Subset::token).to_string();
        if all.is_empty() {
            return Err(EvalError::EmptyGroup(format!(
                "{} {subset}: no bona fide scores",
                target.database
            )));
        }
        let groups = by_gender
            .iter()
            .map(|(g, o)| (gender_name(*g), o.as_slice()))
            .chain(std::iter::once(("All", all.as_slice())));
        for (gender, outcomes) in groups {
            let n_missed = outcomes.iter().filter(|&&o| o).count();
            let (ci_low, ci_high) =
                bootstrap_ci(outcomes, config.n_bootstrap, config.alpha_percent, config.seed)?;
            rows.push(EvalRow {
                database: target.database.to_string(),
                subset: subset.clone(),
                gender: gender.to_string(),
                n_trials: outcomes.len(),
                n_missed,
                miss_rate: n_missed as f64 / outcomes.len() as f64,
                ci_low,
                ci_high,
            });
        }
    }

    Ok(EvalReport {
        threshold,
        eer_dev: eer,
        rows,
        n_bootstrap: config.n_bootstrap,
        alpha_percent: config.alpha_percent,
        seed: config.seed,
        polarity: config.polarity,
        resampling: "utterance".into(),
    })
}

impl EvalReport {
    pub fn to_tsv(&self, header: &[String]) -> String {
        let mut out = String::new();
        for h in header {
            let _ = writeln!(out, "# {h}");
        }
        let _ = writeln!(out, "# threshold\t{:e}", self.threshold);
        let _ = writeln!(out, "# eer_dev\t{:e}", self.eer_dev);
        let _ = writeln!(
            out,
            "# n_bootstrap\t{}\talpha_percent\t{}\tseed\t{}\tpolarity\t{}\tresampling\t{}",
            self.n_bootstrap,
            self.alpha_percent,
            self.seed,
            self.polarity.token(),
            self.resampling
        );
        out.push_str("database\tsubset\tgender\tmiss_rate_percent\tci_low_percent\tci_high_percent\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.2}\t{:.2}\t{:.2}",
                r.database,
                r.subset,
                r.gender,
                100.0 * r.miss_rate,
                100.0 * r.ci_low,
                100.0 * r.ci_high
            );
        }
        out
    }

    pub fn to_json(&self, provenance: &serde_json::Value) -> String {
        let value = serde_json::json!({
            "provenance": provenance,
            "report": self,
        });
        let mut s = serde_json::to_string_pretty(&value).expect("report serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eer_examples() {
        let e = compute_eer(&[2.0, 3.0, 4.0], &[1.0, 2.5, 0.5]).unwrap();
        assert_eq!(e.eer, 1.0 / 3.0);
        assert_eq!(e.threshold, 2.25);
        assert_eq!(compute_eer(&[3.0, 4.0], &[1.0, 2.0]).unwrap().eer, 0.0);
        assert_eq!(compute_eer(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap().eer, 0.5);
        assert!(matches!(compute_eer(&[], &[1.0]), Err(EvalError::EmptyScores)));
    }

    #[test]
    fn miss_rate_examples() {
        assert_eq!(miss_rate(&[0.1, 0.9], 0.5).unwrap(), 0.5);
        assert_eq!(miss_rate(&[1.0, 2.0], 0.5).unwrap(), 0.0);
        assert_eq!(miss_rate(&[0.5], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn bootstrap_degenerate_and_deterministic() {
        assert_eq!(bootstrap_ci(&[false; 20], 100, 5.0, 1).unwrap(), (0.0, 0.0));
        let o: Vec<bool> = (0..50).map(|i| i % 7 == 0).collect();
        assert_eq!(bootstrap_ci(&o, 200, 5.0, 9).unwrap(), bootstrap_ci(&o, 200, 5.0, 9).unwrap());
        assert!(bootstrap_ci(&[], 10, 5.0, 1).is_err());
        assert!(bootstrap_ci(&o, 10, 100.0, 1).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&xs, 0.0), 1.0);
        assert_eq!(percentile(&xs, 100.0), 4.0);
        assert_eq!(percentile(&xs, 50.0), 2.5);
    }

    #[test]
    fn score_parsing() {
        let s = parse_scores_str("# c\nu1\t0.5\nu2 -1e3\n\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].score, -1000.0);
        assert!(matches!(parse_scores_str("u1\t1\nu1\t2\n"), Err(EvalError::DuplicateScore { line: 2, .. })));
        assert!(parse_scores_str("u1\tx\n").is_err());
        assert!(parse_scores_str("u1\tNaN\n").is_err());
        assert!(parse_scores_str("u1 1 2\n").is_err());
    }
}
