use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use sise_core::codec::io::{read_tokens, write_tokens};
use sise_core::corpus::{build_corpus, CorpusConfig, CorpusManifest, LoadedEntry, MANIFEST_FILE};
use sise_core::diffusion::SamplingConfig;
use sise_core::pipeline::{enhance, enhance_batch, evaluate, train_all, EvalPair, EvalReport, ModelBundle, TrainConfig};
use sise_core::AudioBuffer;

const DEFAULT_SEED: u64 = 20240;

#[derive(Debug, Parser)]
#[command(name = "sise", version, about = "Token-based speech enhancement with a factorized RVQ codec and masked diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic noisy/clean corpus with frame labels.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Corpus config as JSON; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the codec and both token models on a corpus.
    Train {
        /// Corpus manifest, or the corpus directory.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Training config as JSON; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        range: Range,
    },
    /// Encode a WAV file to a token file.
    Encode {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a token file to a WAV file.
    Decode {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enhance one WAV file, or every noisy file of a corpus.
    Enhance(EnhanceArgs),
    /// Compare estimates against references.
    Eval(EvalArgs),
}

/// Selects `entries[skip..skip + take]` of a corpus.
#[derive(Debug, Args, Clone, Copy)]
struct Range {
    #[arg(long, default_value_t = 0)]
    skip: usize,
    #[arg(long)]
    take: Option<usize>,
}

#[derive(Debug, Args)]
struct EnhanceArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long = "in", conflicts_with = "corpus", required_unless_present = "corpus")]
    input: Option<PathBuf>,
    /// Output WAV for single-file mode.
    #[arg(long, requires = "input")]
    out: Option<PathBuf>,
    /// Also write the sampled tokens (single-file mode).
    #[arg(long, requires = "input")]
    tokens_out: Option<PathBuf>,
    #[arg(long, requires = "out_dir")]
    corpus: Option<PathBuf>,
    /// Output directory for corpus mode: `<id>.wav` and `<id>.tok`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    range: Range,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Worker threads for corpus mode (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    verbose: bool,
}

#[derive(Debug, Args)]
struct SamplingArgs {
    /// Semantic reverse steps [default: bundle value, 15].
    #[arg(long)]
    steps_semantic: Option<usize>,
    /// Acoustic reverse steps per layer [default: bundle value, 10,1,1,1,1].
    #[arg(long, value_delimiter = ',')]
    steps_acoustic: Option<Vec<usize>>,
    /// Top-k truncation [default: bundle value, 20].
    #[arg(long)]
    top_k: Option<usize>,
    /// Starting temperature, annealed linearly to 0 [default: bundle value, 1.5].
    #[arg(long)]
    temp: Option<f64>,
    /// Disable Gumbel noise on confidences.
    #[arg(long)]
    no_gumbel: bool,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

impl SamplingArgs {
    fn resolve(&self, defaults: &SamplingConfig) -> SamplingConfig {
        SamplingConfig {
            semantic_steps: self.steps_semantic.unwrap_or(defaults.semantic_steps),
            acoustic_steps: self.steps_acoustic.clone().unwrap_or_else(|| defaults.acoustic_steps.clone()),
            top_k: self.top_k.unwrap_or(defaults.top_k),
            temperature_start: self.temp.unwrap_or(defaults.temperature_start),
            gumbel: defaults.gumbel && !self.no_gumbel,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, requires = "estimate", conflicts_with = "corpus", required_unless_present = "corpus")]
    reference: Option<PathBuf>,
    #[arg(long)]
    estimate: Option<PathBuf>,
    /// Corpus mode: compare each clean file with `<enhanced>/<id>.wav`, and
    /// report the noisy baseline.
    #[arg(long, requires = "enhanced")]
    corpus: Option<PathBuf>,
    #[arg(long)]
    enhanced: Option<PathBuf>,
    #[command(flatten)]
    range: Range,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

/// A failure in a named stage, printed as one line.
struct Failure {
    stage: &'static str,
    message: String,
}

type CliResult<T> = Result<T, Failure>;

trait Stage<T> {
    fn stage(self, stage: &'static str) -> CliResult<T>;
}

impl<T, E: Display> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|e| Failure {
            stage,
            message: e.to_string(),
        })
    }
}

fn read_json<T: DeserializeOwned + Default>(path: Option<&Path>, stage: &'static str) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display())).stage(stage)?;
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display())).stage(stage)
        }
    }
}

fn load_manifest(path: &Path) -> CliResult<CorpusManifest> {
    let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    CorpusManifest::load(file).stage("loading corpus")
}

fn load_entries(manifest: &CorpusManifest, range: Range) -> CliResult<Vec<LoadedEntry>> {
    let end = range
        .take
        .map_or(manifest.entries.len(), |t| (range.skip + t).min(manifest.entries.len()));
    let selected = manifest.entries.get(range.skip..end).unwrap_or(&[]);
    if selected.is_empty() {
        return Err(Failure {
            stage: "loading corpus",
            message: "selected range holds no utterances".into(),
        });
    }
    selected
        .iter()
        .map(|e| manifest.load_entry(e))
        .collect::<Result<_, _>>()
        .stage("loading corpus")
}

fn load_bundle(path: &Path) -> CliResult<ModelBundle> {
    ModelBundle::load(path).stage("loading bundle")
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::SynthCorpus { out, n, seed, config } => {
            let config: CorpusConfig = read_json(config.as_deref(), "reading corpus config")?;
            build_corpus(n, &config, seed, &out).stage("building corpus")?;
            println!("{}", out.join(MANIFEST_FILE).display());
        }
        Command::Train {
            corpus,
            out,
            seed,
            config,
            range,
        } => {
            let config: TrainConfig = read_json(config.as_deref(), "reading train config")?;
            let manifest = load_manifest(&corpus)?;
            let entries = load_entries(&manifest, range)?;
            let (bundle, report) = train_all(&entries, &config, seed).stage("training")?;
            bundle.save(&out).stage("saving bundle")?;
            let report_path = out.join("train_report.json");
            let text = serde_json::to_string_pretty(&report).stage("saving bundle")?;
            fs::write(&report_path, text + "\n").stage("saving bundle")?;
            println!(
                "trained on {} utterances; codec loss {:.4}; bundle written to {}",
                entries.len(),
                report.codec_loss.total,
                out.display()
            );
        }
        Command::Encode { bundle, input, out } => {
            let bundle = load_bundle(&bundle)?;
            let audio = AudioBuffer::read_wav(&input).stage("reading audio")?;
            let tokens = bundle.codec.encode(&audio).stage("encoding")?;
            write_tokens(&out, &tokens).stage("writing tokens")?;
        }
        Command::Decode { bundle, input, out } => {
            let bundle = load_bundle(&bundle)?;
            let tokens = read_tokens(&input).stage("reading tokens")?;
            let audio = bundle.codec.decode(&tokens, None).stage("decoding")?;
            audio.write_wav(&out).stage("writing audio")?;
        }
        Command::Enhance(args) => run_enhance(args)?,
        Command::Eval(args) => run_eval(args)?,
    }
    Ok(())
}

fn run_enhance(args: EnhanceArgs) -> CliResult<()> {
    let bundle = load_bundle(&args.bundle)?;
    let sampling = args.sampling.resolve(&bundle.sampling);
    sampling.validate().stage("parsing sampling options")?;
    if args.verbose {
        let steps: Vec<String> = sampling.acoustic_steps.iter().map(usize::to_string).collect();
        eprintln!(
            "sampling: steps_semantic={} steps_acoustic={} top_k={} temp={} gumbel={} seed={} jobs={}",
            sampling.semantic_steps,
            steps.join(","),
            sampling.top_k,
            sampling.temperature_start,
            if sampling.gumbel { "on" } else { "off" },
            sampling.seed,
            args.jobs
        );
    }
    if let Some(input) = &args.input {
        let out = args.out.as_ref().ok_or(Failure {
            stage: "parsing options",
            message: "--out is required with --in".into(),
        })?;
        let noisy = AudioBuffer::read_wav(input).stage("reading audio")?;
        let result = enhance(&bundle, &noisy, Some(&sampling)).stage("enhancing")?;
        result.audio.write_wav(out).stage("writing audio")?;
        if let Some(path) = &args.tokens_out {
            write_tokens(path, &result.tokens).stage("writing tokens")?;
        }
        return Ok(());
    }
    let (Some(corpus), Some(out_dir)) = (&args.corpus, &args.out_dir) else {
        return Err(Failure {
            stage: "parsing options",
            message: "either --in or --corpus with --out-dir is required".into(),
        });
    };
    let manifest = load_manifest(corpus)?;
    let entries = load_entries(&manifest, args.range)?;
    let inputs: Vec<(String, AudioBuffer)> = entries.into_iter().map(|e| (e.id, e.noisy)).collect();
    let results = enhance_batch(&bundle, &inputs, Some(&sampling), args.jobs).stage("enhancing")?;
    fs::create_dir_all(out_dir).stage("writing audio")?;
    for ((id, _), r) in inputs.iter().zip(&results) {
        r.audio.write_wav(out_dir.join(format!("{id}.wav"))).stage("writing audio")?;
        write_tokens(out_dir.join(format!("{id}.tok")), &r.tokens).stage("writing tokens")?;
    }
    println!("enhanced {} utterances into {}", results.len(), out_dir.display());
    Ok(())
}

fn run_eval(args: EvalArgs) -> CliResult<()> {
    let bundle = load_bundle(&args.bundle)?;
    let report = if let (Some(r), Some(e)) = (&args.reference, &args.estimate) {
        let reference = AudioBuffer::read_wav(r).stage("reading audio")?;
        let estimate = AudioBuffer::read_wav(e).stage("reading audio")?;
        let id = e.file_stem().and_then(|s| s.to_str()).unwrap_or("estimate");
        let pair = EvalPair {
            id,
            reference: &reference,
            estimate: &estimate,
            labels: None,
        };
        evaluate(&bundle.codec, &[pair]).stage("evaluating")?
    } else {
        let (Some(corpus), Some(enhanced)) = (&args.corpus, &args.enhanced) else {
            return Err(Failure {
                stage: "parsing options",
                message: "either --reference/--estimate or --corpus/--enhanced is required".into(),
            });
        };
        let manifest = load_manifest(corpus)?;
        let entries = load_entries(&manifest, args.range)?;
        let estimates: Vec<AudioBuffer> = entries
            .iter()
            .map(|e| AudioBuffer::read_wav(enhanced.join(format!("{}.wav", e.id))))
            .collect::<Result<_, _>>()
            .stage("reading audio")?;
        let pairs = |use_noisy: bool| -> Vec<EvalPair> {
            entries
                .iter()
                .zip(&estimates)
                .map(|(e, est)| EvalPair {
                    id: &e.id,
                    reference: &e.clean,
                    estimate: if use_noisy { &e.noisy } else { est },
                    labels: Some(&e.labels),
                })
                .collect()
        };
        let baseline = evaluate(&bundle.codec, &pairs(true)).stage("evaluating")?;
        let report = evaluate(&bundle.codec, &pairs(false)).stage("evaluating")?;
        print_comparison(&baseline, &report);
        report
    };
    print!("{}", report.to_table());
    if let Some(path) = &args.json {
        fs::write(path, report.to_json() + "\n").stage("writing report")?;
    }
    Ok(())
}

fn print_comparison(baseline: &EvalReport, report: &EvalReport) {
    let improved = baseline
        .utterances
        .iter()
        .zip(&report.utterances)
        .filter(|(b, r)| r.mel_distance < b.mel_distance)
        .count();
    println!(
        "noisy baseline: seg_snr_db {:.2}, mel_distance {:.4}; mel distance improved on {improved}/{} utterances",
        baseline.seg_snr_db,
        baseline.mel_distance,
        report.utterances.len()
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("sise: {} failed: {}", f.stage, f.message.replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
