//! Corpus manifests: the per-utterance data model and its TSV encoding.
//!
//! A manifest carries one record per line with eight tab-separated columns:
//!
//! ```text
//! utt_id  audio_path  subset  label  speaker_id  gender  codec  attack_id
//! ```
//!
//! `subset` is one of `train|dev|eval`, `label` one of `bonafide|spoof`,
//! `gender` one of `m|f|u`, `codec` is `none` or a codec name and `attack_id`
//! is `-` or `A<nn>`. Lines starting with `#` are comments. Two comment
//! directives carry corpus metadata:
//!
//! ```text
//! #@ corpus_name = ASVspoof2019
//! #@ sample_rate = 16000
//! ```
//!
//! Relative audio paths are resolved against the manifest's directory.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sample rate assumed when a manifest has no `sample_rate` directive.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

const NUM_COLUMNS: usize = 8;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: duplicate utterance id `{utt_id}`")]
    DuplicateUttId { line: usize, utt_id: String },
    #[error("line {line}: unknown {field} token `{token}`")]
    UnknownToken {
        line: usize,
        field: &'static str,
        token: String,
    },
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    BonaFide,
    Spoof,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subset {
    Train,
    Dev,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
    Unknown,
}

/// Transmission codec applied to an utterance, as declared by the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Codec {
    None,
    Coded(String),
}

impl Label {
    pub const ALL: [Label; 2] = [Label::BonaFide, Label::Spoof];

    pub fn token(self) -> &'static str {
        match self {
            Label::BonaFide => "bonafide",
            Label::Spoof => "spoof",
        }
    }
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Dev, Subset::Eval];

    pub fn token(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Dev => "dev",
            Subset::Eval => "eval",
        }
    }
}

impl Gender {
    pub const ALL: [Gender; 3] = [Gender::Male, Gender::Female, Gender::Unknown];

    pub fn token(self) -> &'static str {
        match self {
            Gender::Male => "m",
            Gender::Female => "f",
            Gender::Unknown => "u",
        }
    }
}

impl Codec {
    pub fn token(&self) -> &str {
        match self {
            Codec::None => "none",
            Codec::Coded(name) => name,
        }
    }

    pub fn is_coded(&self) -> bool {
        matches!(self, Codec::Coded(_))
    }
}

macro_rules! token_enum_impls {
    ($ty:ty, $field:literal, [$($tok:literal => $val:expr),+ $(,)?]) => {
        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($tok => Ok($val),)+
                    other => Err(format!("unknown {} `{}`", $field, other)),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.token())
            }
        }
    };
}

token_enum_impls!(Label, "label", ["bonafide" => Label::BonaFide, "spoof" => Label::Spoof]);
token_enum_impls!(Subset, "subset", ["train" => Subset::Train, "dev" => Subset::Dev, "eval" => Subset::Eval]);
token_enum_impls!(Gender, "gender", ["m" => Gender::Male, "f" => Gender::Female, "u" => Gender::Unknown]);

impl fmt::Display for Codec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// One corpus trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub audio_path: PathBuf,
    pub label: Label,
    pub subset: Subset,
    pub speaker_id: String,
    pub gender: Gender,
    pub codec: Codec,
    pub attack_id: Option<String>,
}

impl UtteranceRecord {
    /// Renders the record as one manifest line (no trailing newline).
    pub fn to_tsv_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.utt_id,
            self.audio_path.display(),
            self.subset,
            self.label,
            self.speaker_id,
            self.gender,
            self.codec,
            self.attack_id.as_deref().unwrap_or("-"),
        )
    }
}

#[derive(Debug, Clone)]
pub struct CorpusManifest {
    pub corpus_name: String,
    pub sample_rate: u32,
    records: Vec<UtteranceRecord>,
    index: HashMap<String, usize>,
}

impl CorpusManifest {
    /// Builds a manifest from already-validated records.
    pub fn new(
        corpus_name: impl Into<String>,
        sample_rate: u32,
        records: Vec<UtteranceRecord>,
    ) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            check_record_invariants(rec, i + 1)?;
            if index.insert(rec.utt_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateUttId {
                    line: i + 1,
                    utt_id: rec.utt_id.clone(),
                });
            }
        }
        Ok(CorpusManifest {
            corpus_name: corpus_name.into(),
            sample_rate,
            records,
            index,
        })
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, utt_id: &str) -> Option<&UtteranceRecord> {
        self.index.get(utt_id).map(|&i| &self.records[i])
    }

    /// Number of records in the given (subset, label) cell.
    pub fn count(&self, subset: Subset, label: Label) -> usize {
        self.records
            .iter()
            .filter(|r| r.subset == subset && r.label == label)
            .count()
    }

    pub fn select(&self, filter: &Filter) -> Vec<UtteranceRecord> {
        select(&self.records, filter)
    }

    /// Serializes the manifest, directives included. Audio paths are written
    /// as stored.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("#@ corpus_name = {}\n", self.corpus_name));
        out.push_str(&format!("#@ sample_rate = {}\n", self.sample_rate));
        out.push_str("# utt_id\taudio_path\tsubset\tlabel\tspeaker_id\tgender\tcodec\tattack_id\n");
        for rec in &self.records {
            out.push_str(&rec.to_tsv_line());
            out.push('\n');
        }
        out
    }
}

fn check_record_invariants(rec: &UtteranceRecord, line: usize) -> Result<(), CorpusError> {
    if rec.label == Label::BonaFide && rec.attack_id.is_some() {
        return Err(CorpusError::MalformedLine {
            line,
            reason: format!("bona fide record `{}` carries an attack id", rec.utt_id),
        });
    }
    Ok(())
}

/// Reads and parses a manifest file. The corpus name defaults to the file
/// stem when no directive names it.
pub fn parse_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf);
    let default_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string());
    parse_manifest_str(&text, base.as_deref(), &default_name)
}

/// Parses manifest text. `base_dir`, when given, anchors relative audio paths.
pub fn parse_manifest_str(
    text: &str,
    base_dir: Option<&Path>,
    default_name: &str,
) -> Result<CorpusManifest, CorpusError> {
    let mut corpus_name = default_name.to_string();
    let mut sample_rate = DEFAULT_SAMPLE_RATE;
    let mut records = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if let Some(directive) = line.strip_prefix("#@") {
            apply_directive(directive, line_no, &mut corpus_name, &mut sample_rate)?;
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let rec = parse_record(line, line_no, base_dir)?;
        if index.contains_key(&rec.utt_id) {
            return Err(CorpusError::DuplicateUttId {
                line: line_no,
                utt_id: rec.utt_id,
            });
        }
        index.insert(rec.utt_id.clone(), records.len());
        records.push(rec);
    }

    Ok(CorpusManifest {
        corpus_name,
        sample_rate,
        records,
        index,
    })
}

fn apply_directive(
    directive: &str,
    line: usize,
    corpus_name: &mut String,
    sample_rate: &mut u32,
) -> Result<(), CorpusError> {
    let malformed = |reason: String| CorpusError::MalformedLine { line, reason };
    let (key, value) = directive
        .split_once('=')
        .ok_or_else(|| malformed("directive without `=`".into()))?;
    let value = value.trim();
    match key.trim() {
        "corpus_name" => {
            if value.is_empty() || value.contains(char::is_whitespace) {
                return Err(malformed(format!("invalid corpus name `{value}`")));
            }
            *corpus_name = value.to_string();
        }
        "sample_rate" => {
            *sample_rate = value
                .parse::<u32>()
                .ok()
                .filter(|&r| r > 0)
                .ok_or_else(|| malformed(format!("invalid sample rate `{value}`")))?;
        }
        other => return Err(malformed(format!("unknown directive `{other}`"))),
    }
    Ok(())
}

fn parse_record(
    line: &str,
    line_no: usize,
    base_dir: Option<&Path>,
) -> Result<UtteranceRecord, CorpusError> {
    let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
    if fields.len() != NUM_COLUMNS {
        return Err(CorpusError::MalformedLine {
            line: line_no,
            reason: format!("expected {NUM_COLUMNS} tab-separated fields, found {}", fields.len()),
        });
    }
    if let Some(pos) = fields.iter().position(|f| f.is_empty()) {
        return Err(CorpusError::MalformedLine {
            line: line_no,
            reason: format!("field {} is empty", pos + 1),
        });
    }
    let unknown = |field: &'static str, token: &str| CorpusError::UnknownToken {
        line: line_no,
        field,
        token: token.to_string(),
    };

    let subset: Subset = fields[2].parse().map_err(|_| unknown("subset", fields[2]))?;
    let label: Label = fields[3].parse().map_err(|_| unknown("label", fields[3]))?;
    let gender: Gender = fields[5].parse().map_err(|_| unknown("gender", fields[5]))?;
    let codec = match fields[6] {
        "none" => Codec::None,
        name => Codec::Coded(name.to_string()),
    };
    let attack_id = match fields[7] {
        "-" => None,
        tok if is_attack_token(tok) => Some(tok.to_string()),
        tok => return Err(unknown("attack_id", tok)),
    };

    let mut audio_path = PathBuf::from(fields[1]);
    if let Some(base) = base_dir {
        if audio_path.is_relative() {
            audio_path = base.join(audio_path);
        }
    }

    let rec = UtteranceRecord {
        utt_id: fields[0].to_string(),
        audio_path,
        label,
        subset,
        speaker_id: fields[4].to_string(),
        gender,
        codec,
        attack_id,
    };
    check_record_invariants(&rec, line_no)?;
    Ok(rec)
}

fn is_attack_token(tok: &str) -> bool {
    let digits = tok.strip_prefix('A').unwrap_or("");
    digits.len() >= 2 && digits.bytes().all(|b| b.is_ascii_digit())
}

/// Codec criterion of a [`Filter`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CodecFilter {
    /// Only records with no codec applied.
    Uncoded,
    /// Only records that went through some codec.
    Coded,
    /// Only records that went through the named codec.
    Named(String),
}

impl CodecFilter {
    pub fn matches(&self, codec: &Codec) -> bool {
        match (self, codec) {
            (CodecFilter::Uncoded, Codec::None) => true,
            (CodecFilter::Coded, Codec::Coded(_)) => true,
            (CodecFilter::Named(want), Codec::Coded(name)) => want == name,
            _ => false,
        }
    }
}

/// Conjunction of optional record criteria; the empty filter matches all.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Filter {
    pub subset: Option<Subset>,
    pub label: Option<Label>,
    pub gender: Option<Gender>,
    pub codec: Option<CodecFilter>,
}

impl Filter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subset(mut self, subset: Subset) -> Self {
        self.subset = Some(subset);
        self
    }

    pub fn label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    pub fn gender(mut self, gender: Gender) -> Self {
        self.gender = Some(gender);
        self
    }

    pub fn codec(mut self, codec: CodecFilter) -> Self {
        self.codec = Some(codec);
        self
    }

    pub fn matches(&self, rec: &UtteranceRecord) -> bool {
        self.subset.is_none_or(|s| s == rec.subset)
            && self.label.is_none_or(|l| l == rec.label)
            && self.gender.is_none_or(|g| g == rec.gender)
            && self.codec.as_ref().is_none_or(|c| c.matches(&rec.codec))
    }
}

/// Returns the records matching every criterion of `filter`, in input order.
pub fn select(records: &[UtteranceRecord], filter: &Filter) -> Vec<UtteranceRecord> {
    records.iter().filter(|r| filter.matches(r)).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = "\
# header comment
u1\ta.wav\ttrain\tbonafide\tspk1\tm\tnone\t-
u2\tb.wav\ttrain\tspoof\tspk1\tm\tnone\tA01

u3\tc.wav\teval\tspoof\tspk2\tf\tmp3\tA07
";

    #[test]
    fn three_line_manifest_preserves_order() {
        let m = parse_manifest_str(THREE, None, "toy").unwrap();
        let ids: Vec<_> = m.records().iter().map(|r| r.utt_id.as_str()).collect();
        assert_eq!(ids, ["u1", "u2", "u3"]);
        assert_eq!(m.corpus_name, "toy");
        assert_eq!(m.sample_rate, DEFAULT_SAMPLE_RATE);
        assert_eq!(m.records()[2].codec, Codec::Coded("mp3".into()));
        assert_eq!(m.records()[1].attack_id.as_deref(), Some("A01"));
        assert_eq!(m.count(Subset::Train, Label::Spoof), 1);
    }

    #[test]
    fn short_line_names_its_line_number() {
        let text = "u1\ta.wav\ttrain\tbonafide\tspk1\tm\tnone\t-\nu2\tb.wav\ttrain\tspoof\tspk1\n";
        match parse_manifest_str(text, None, "x") {
            Err(CorpusError::MalformedLine { line, reason }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("found 5"), "{reason}");
            }
            other => panic!("expected MalformedLine, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let text = "u1\ta.wav\ttrain\tbonafide\tspk1\tm\tnone\t-\nu1\tb.wav\tdev\tbonafide\tspk1\tm\tnone\t-\n";
        assert!(matches!(
            parse_manifest_str(text, None, "x"),
            Err(CorpusError::DuplicateUttId { line: 2, .. })
        ));
    }

    #[test]
    fn unknown_tokens_are_rejected() {
        let bad_subset = "u1\ta.wav\ttest\tbonafide\tspk1\tm\tnone\t-\n";
        assert!(matches!(
            parse_manifest_str(bad_subset, None, "x"),
            Err(CorpusError::UnknownToken { field: "subset", .. })
        ));
        let bad_label = "u1\ta.wav\ttrain\tgenuine\tspk1\tm\tnone\t-\n";
        assert!(matches!(
            parse_manifest_str(bad_label, None, "x"),
            Err(CorpusError::UnknownToken { field: "label", .. })
        ));
        let bad_attack = "u1\ta.wav\ttrain\tspoof\tspk1\tm\tnone\tB7\n";
        assert!(matches!(
            parse_manifest_str(bad_attack, None, "x"),
            Err(CorpusError::UnknownToken { field: "attack_id", .. })
        ));
    }

    #[test]
    fn bona_fide_with_attack_is_malformed() {
        let text = "u1\ta.wav\ttrain\tbonafide\tspk1\tm\tnone\tA01\n";
        assert!(matches!(
            parse_manifest_str(text, None, "x"),
            Err(CorpusError::MalformedLine { line: 1, .. })
        ));
    }

    #[test]
    fn directives_set_metadata_and_paths_resolve() {
        let text = "#@ corpus_name = ASVspoof5\n#@ sample_rate = 8000\nu1\twav/a.wav\tdev\tbonafide\ts\tu\tnone\t-\n";
        let m = parse_manifest_str(text, Some(Path::new("/data")), "x").unwrap();
        assert_eq!(m.corpus_name, "ASVspoof5");
        assert_eq!(m.sample_rate, 8000);
        assert_eq!(m.records()[0].audio_path, PathBuf::from("/data/wav/a.wav"));

        let zero_rate = "#@ sample_rate = 0\n";
        assert!(parse_manifest_str(zero_rate, None, "x").is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let m = parse_manifest_str(THREE, None, "toy").unwrap();
        let again = parse_manifest_str(&m.to_tsv(), None, "other").unwrap();
        assert_eq!(again.corpus_name, "toy");
        assert_eq!(again.records(), m.records());
    }

    fn six_records() -> CorpusManifest {
        let text = "\
a\ta.wav\ttrain\tbonafide\ts1\tm\tnone\t-
b\tb.wav\ttrain\tbonafide\ts2\tf\tnone\t-
c\tc.wav\tdev\tbonafide\ts1\tm\tnone\t-
d\td.wav\tdev\tspoof\ts1\tm\tnone\tA02
e\te.wav\teval\tbonafide\ts3\tf\topus\t-
f\tf.wav\teval\tspoof\ts3\tm\tnone\tA20
";
        parse_manifest_str(text, None, "six").unwrap()
    }

    #[test]
    fn select_by_label_and_gender() {
        let m = six_records();
        let sel = m.select(&Filter::new().label(Label::BonaFide).gender(Gender::Male));
        let ids: Vec<_> = sel.iter().map(|r| r.utt_id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
    }

    #[test]
    fn empty_filter_returns_everything() {
        let m = six_records();
        assert_eq!(m.select(&Filter::new()), m.records());
    }

    #[test]
    fn codec_filters() {
        let m = six_records();
        let no_codec = m.select(&Filter::new().subset(Subset::Eval).codec(CodecFilter::Uncoded));
        assert_eq!(no_codec.len(), 1);
        assert_eq!(no_codec[0].utt_id, "f");
        let coded = m.select(&Filter::new().codec(CodecFilter::Coded));
        assert_eq!(coded.len(), 1);
        let named = m.select(&Filter::new().codec(CodecFilter::Named("opus".into())));
        assert_eq!(named[0].utt_id, "e");
        assert!(m.select(&Filter::new().codec(CodecFilter::Named("mp3".into()))).is_empty());
    }
}
