use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pmfscope::config::parse_config;
use pmfscope::corpus::Subset;
use pmfscope::report::{ReportError, Runner};
use pmfscope::synth::{write_corpus, write_scores, SynthSpec};

#[derive(Parser)]
#[command(name = "pmfscope", version, about = "Amplitude-PMF assessment of anti-spoofing corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-selection PMF files and sparse TSV curves.
    Pmf(ConfigArg),
    /// Similarity measures for every declared comparison.
    Compare(ConfigArg),
    /// Embeddings, 2-D model, point clouds and dispersion summary.
    EmbedProject(ConfigArg),
    /// EER threshold on dev scores and stratified miss rates.
    Eval(ConfigArg),
    /// Every step declared in the config.
    ReportAll(ConfigArg),
    /// Write a synthetic Laplacian-amplitude corpus.
    Synth(SynthArgs),
}

#[derive(clap::Args)]
struct ConfigArg {
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    name: String,
    #[arg(long)]
    scale: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    spoof_ratio: f64,
    #[arg(long, default_value_t = 100)]
    utterances: usize,
    #[arg(long, default_value_t = 2.0)]
    seconds: f64,
    #[arg(long, default_value_t = 16_000)]
    sample_rate: u32,
    /// Comma-separated subsets to cycle through.
    #[arg(long, default_value = "train,dev,eval")]
    subsets: String,
    /// Mark part of the eval subset as coded with this codec name.
    #[arg(long)]
    eval_codec: Option<String>,
    /// Also write `scores.tsv` with this bona fide / spoof mean separation.
    #[arg(long)]
    score_separation: Option<f64>,
}

fn run_steps(config: &PathBuf, step: &str) -> Result<String, ReportError> {
    let cfg = parse_config(config)?;
    let mut runner = Runner::new(cfg)?;
    match step {
        "pmf" => runner.cmd_pmf()?,
        "compare" => runner.cmd_compare()?,
        "embed-project" => runner.cmd_embed_project()?,
        "eval" => runner.cmd_eval()?,
        _ => runner.cmd_report_all()?,
    }
    let s = runner.summary();
    Ok(format!(
        "ok\t{step}\tfiles={}\tcache_hits={}\tcache_misses={}",
        s.written.len(),
        s.cache_hits,
        s.cache_misses
    ))
}

fn synth(a: &SynthArgs) -> Result<String, String> {
    let subsets = a
        .subsets
        .split(',')
        .map(|s| s.trim().parse::<Subset>())
        .collect::<Result<Vec<_>, _>>()?;
    if subsets.is_empty() || a.utterances == 0 || !(a.scale > 0.0 && a.spoof_ratio > 0.0 && a.seconds > 0.0) {
        return Err("synth needs positive scale, spoof ratio, duration and utterance count".into());
    }
    let spec = SynthSpec {
        spoof_ratio: a.spoof_ratio,
        n_utterances: a.utterances,
        seconds: a.seconds,
        sample_rate: a.sample_rate,
        subsets,
        eval_codec: a.eval_codec.clone(),
        ..SynthSpec::new(&a.name, a.scale, a.seed)
    };
    let manifest = write_corpus(&a.out, &spec).map_err(|e| e.to_string())?;
    if let Some(sep) = a.score_separation {
        write_scores(&a.out.join("scores.tsv"), &spec, sep, a.seed ^ 0x5c0e).map_err(|e| e.to_string())?;
    }
    Ok(format!("ok\tsynth\tmanifest={}", manifest.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (step, config) = match &cli.command {
        Command::Pmf(c) => ("pmf", &c.config),
        Command::Compare(c) => ("compare", &c.config),
        Command::EmbedProject(c) => ("embed-project", &c.config),
        Command::Eval(c) => ("eval", &c.config),
        Command::ReportAll(c) => ("report-all", &c.config),
        Command::Synth(a) => {
            return match synth(a) {
                Ok(line) => {
                    println!("{line}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error\tsynth\t{e}");
                    ExitCode::FAILURE
                }
            };
        }
    };
    match run_steps(config, step) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\t'], " ");
            eprintln!("error\t{}\t{msg}", e.kind());
            ExitCode::from(if matches!(e, ReportError::Config(_)) { 2 } else { 1 })
        }
    }
}
