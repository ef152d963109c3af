use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use logstruct::corpus::{DEFAULT_CHUNK_BYTES, DEFAULT_SAMPLE_BYTES};
use logstruct::evalharness::load_script;
use logstruct::{
    discover, extract_all, generate, read_output, verify_success, write_output, Corpus, Error,
    ExtractionPlan, GroundTruth, OutputFormat, PipelineConfig, SearchMode, Status, SynthSpec,
};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NO_STRUCTURE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "logstruct",
    version,
    about = "Unsupervised structure extraction for noisy, multi-line logs"
)]
struct Cli {
    /// Worker threads (default: all cores); results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find the record templates of a file and print the plan as JSON.
    Discover {
        file: PathBuf,
        #[command(flatten)]
        opts: DiscoverOpts,
        /// Write the plan to this directory as plan.json instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn a file into tables using a saved plan, or discover one first.
    Extract {
        file: PathBuf,
        #[arg(long, conflicts_with = "auto", required_unless_present = "auto")]
        plan: Option<PathBuf>,
        #[arg(long)]
        auto: bool,
        #[command(flatten)]
        opts: DiscoverOpts,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Generate a synthetic corpus and its ground truth.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "synth")]
        out: PathBuf,
    },
    /// Check an extraction against ground truth through a table script.
    Verify {
        #[arg(long)]
        extracted: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        script: PathBuf,
    },
}

#[derive(Args)]
struct DiscoverOpts {
    /// Coverage threshold, percent of the sampled bytes.
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    /// Longest record, in lines.
    #[arg(long, default_value_t = 10)]
    max_span: usize,
    /// Candidates kept for scoring.
    #[arg(long, default_value_t = 50)]
    top_m: usize,
    #[arg(long, value_enum, default_value_t = Search::Greedy)]
    search: Search,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_BYTES)]
    sample_bytes: usize,
    #[arg(long, default_value_t = DEFAULT_CHUNK_BYTES)]
    chunk_bytes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Search {
    Greedy,
    Exhaustive,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Both,
}

impl DiscoverOpts {
    fn config(&self) -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.generation.alpha = self.alpha;
        cfg.generation.max_span = self.max_span;
        cfg.generation.search_mode = match self.search {
            Search::Greedy => SearchMode::Greedy,
            Search::Exhaustive => SearchMode::Exhaustive,
        };
        cfg.pruning.top_m = self.top_m;
        cfg.sampling.budget = self.sample_bytes;
        cfg.sampling.chunk_size = self.chunk_bytes;
        cfg.sampling.seed = self.seed;
        cfg
    }
}

enum Failure {
    Usage(String),
    NoStructure(ExtractionPlan),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            e => Failure::Other(e.to_string()),
        }
    }
}

fn load_input(path: &Path) -> Result<Corpus, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(format!("{}: no such file", path.display())));
    }
    Ok(Corpus::load(path, None)?)
}

fn require_file(path: &Path) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!(
            "{}: no such file or directory",
            path.display()
        )))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))
}

/// Prints a line to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}").and_then(|_| out.flush());
}

fn checked(plan: ExtractionPlan) -> Result<ExtractionPlan, Failure> {
    match plan.status {
        Status::Ok => Ok(plan),
        Status::NoStructure => Err(Failure::NoStructure(plan)),
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Discover { file, opts, out } => {
            let corpus = load_input(&file)?;
            let plan = checked(discover(&corpus, &opts.config())?)?;
            match out {
                Some(dir) => {
                    create_dir(&dir)?;
                    plan.save(dir.join("plan.json"))?;
                }
                None => emit(&plan.to_json()),
            }
        }
        Command::Extract {
            file,
            plan,
            auto,
            opts,
            out,
            format,
        } => {
            let corpus = load_input(&file)?;
            let plan = match plan {
                Some(path) => {
                    require_file(&path)?;
                    ExtractionPlan::load(&path)?
                }
                None => checked(discover(&corpus, &opts.config())?)?,
            };
            let output = extract_all(&corpus, &plan)?;
            let format = match format {
                Format::Csv => OutputFormat::Csv,
                Format::Json => OutputFormat::Json,
                Format::Both => OutputFormat::Both,
            };
            write_output(&output, &out, format)?;
            if auto {
                plan.save(out.join("plan.json"))?;
            }
        }
        Command::Synth { spec, seed, out } => {
            require_file(&spec)?;
            let mut spec = SynthSpec::load(&spec)?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let synth = generate(&spec)?;
            create_dir(&out)?;
            write_file(&out.join("corpus.log"), &synth.text)?;
            let truth = serde_json::to_string(&synth.truth).expect("truth serializes");
            write_file(&out.join("truth.json"), truth.as_bytes())?;
        }
        Command::Verify {
            extracted,
            truth,
            script,
        } => {
            for p in [&extracted, &truth, &script] {
                require_file(p)?;
            }
            let output = read_output(&extracted)?;
            let truth = GroundTruth::load(&truth)?;
            let script = load_script(&script)?;
            let verdict = verify_success(&output, &truth, &script);
            emit(&serde_json::to_string_pretty(&verdict).expect("verdict serializes"));
            if !verdict.success {
                return Err(Failure::Other("verification failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{}", Cli::command().render_usage());
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::NoStructure(plan)) => {
            emit(&plan.to_json());
            ExitCode::from(EXIT_NO_STRUCTURE)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
