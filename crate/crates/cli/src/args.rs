use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Training-free personalization of vision-language models.
///
/// Exit codes: 0 success, 1 usage error, 2 manifest error, 3 backend error,
/// 4 duplicate concept, 5 enrollment error, 6 context overflow,
/// 7 I/O or library file error.
#[derive(Debug, Parser)]
#[command(name = "ego", version)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Seeded toy transformer
    Toy,
    /// Scripted replies from --script
    Scripted,
    /// External adapter serving --adapter-session
    Adapter,
}

/// Settings shared by every command. Precedence: flag, then environment,
/// then --config file, then built-in default.
#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// TOML file with any of the settings below (keys use snake_case)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Model backend [default: toy]
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,

    /// Script file for the scripted backend
    #[arg(long, global = true, value_name = "FILE")]
    pub script: Option<PathBuf>,

    /// Session directory of a running adapter
    #[arg(long, global = true, value_name = "DIR")]
    pub adapter_session: Option<PathBuf>,

    /// Seconds to wait for an adapter response [default: 60]
    #[arg(long, global = true, value_name = "SECS")]
    pub adapter_timeout: Option<u64>,

    /// Seed for every random draw (backend weights, sampling)
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Maximum tokens kept per reference view [default: 50]
    #[arg(long, global = true, value_name = "K")]
    pub k_max: Option<usize>,

    /// Token budget as a percentage of the visual tokens per view (overrides --k-max)
    #[arg(long, global = true, value_name = "PERCENT")]
    pub fraction: Option<f64>,

    /// Comma-separated layer indices to read attention from
    #[arg(long, global = true, value_delimiter = ',', value_name = "L,..")]
    pub layers: Option<Vec<usize>>,

    /// Calibration output whose selected layers are used
    #[arg(long, global = true, value_name = "FILE")]
    pub calibration: Option<PathBuf>,

    /// Prompt template set (TOML)
    #[arg(long, global = true, env = "EGO_TEMPLATES", value_name = "FILE")]
    pub templates: Option<PathBuf>,

    /// Concept library file [default: library.egoc]
    #[arg(long, global = true, env = "EGO_LIBRARY", value_name = "FILE")]
    pub library: Option<PathBuf>,

    /// Number of calibrated layers to keep [default: 5]
    #[arg(long, global = true, value_name = "L")]
    pub top_l: Option<usize>,

    /// Offer only the M concepts most similar to the query
    #[arg(long, global = true, value_name = "M")]
    pub filter_m: Option<usize>,

    /// Parallel workers for evaluation [default: 1]
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    /// Chat-completion endpoint for grading open-ended VQA (key from EGO_JUDGE_KEY)
    #[arg(long, global = true, value_name = "URL")]
    pub judge_endpoint: Option<String>,

    /// Model name sent to the judge endpoint [default: gpt-3.5-turbo]
    #[arg(long, global = true, value_name = "NAME")]
    pub judge_model: Option<String>,

    /// Print the effective configuration and per-step details
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rank layers by mask overlap and write the selected layer set
    Calibrate {
        /// Calibration manifest (JSON)
        manifest: PathBuf,
        /// Output file
        #[arg(long, default_value = "layers.json")]
        out: PathBuf,
    },
    /// Add a concept to the library from reference views
    Enroll {
        /// Concept name
        name: String,
        /// Reference view files
        #[arg(required = true)]
        views: Vec<PathBuf>,
        /// Write the kept patch indices of every view to this JSON file
        #[arg(long, value_name = "FILE")]
        dump_selection: Option<PathBuf>,
    },
    /// Run one task on query media (several files form a video)
    Run {
        #[arg(value_enum)]
        task: TaskArg,
        /// Query image, or frames in temporal order
        #[arg(required = true)]
        media: Vec<PathBuf>,
        /// Question (vqa only)
        #[arg(long)]
        question: Option<String>,
        /// Do not place any concept in context
        #[arg(long)]
        no_concepts: bool,
    },
    /// Evaluate a dataset manifest and write report.json / report.txt
    Eval {
        /// Dataset manifest (JSON)
        manifest: PathBuf,
        /// Tasks to evaluate [default: all]
        #[arg(long = "task", value_enum)]
        tasks: Vec<EvalTaskArg>,
        /// Output directory
        #[arg(long, default_value = "eval-report")]
        out: PathBuf,
        /// Enroll from the first N reference views of each concept
        #[arg(long, value_name = "N")]
        views: Option<usize>,
        /// Use the memories in --library instead of enrolling from the manifest
        #[arg(long)]
        use_library: bool,
    },
    /// Show the concepts stored in a library
    Inspect {
        /// Print JSON instead of text
        #[arg(long)]
        json: bool,
    },
    /// Write the planted-signal demo dataset, calibration set and script
    Synth {
        /// Output directory
        dir: PathBuf,
        /// Number of concepts (1-8)
        #[arg(long, default_value_t = 4)]
        concepts: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Recognition,
    Vqa,
    Captioning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalTaskArg {
    Recognition,
    MultiConcept,
    Vqa,
    Captioning,
}
