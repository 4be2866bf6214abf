use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use ego_core::memory::MemoryBudget;

use crate::args::{BackendKind, CommonArgs};
use crate::exit::UsageError;

/// Settings read from the --config file. Relative paths are resolved
/// against the file's directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    backend: Option<BackendKind>,
    script: Option<PathBuf>,
    adapter_session: Option<PathBuf>,
    adapter_timeout: Option<u64>,
    seed: Option<u64>,
    k_max: Option<usize>,
    fraction: Option<f64>,
    layers: Option<Vec<usize>>,
    calibration: Option<PathBuf>,
    templates: Option<PathBuf>,
    library: Option<PathBuf>,
    top_l: Option<usize>,
    filter_m: Option<usize>,
    jobs: Option<usize>,
    judge_endpoint: Option<String>,
    judge_model: Option<String>,
    verbose: Option<bool>,
}

/// Effective configuration after applying precedence.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub script: Option<PathBuf>,
    pub adapter_session: Option<PathBuf>,
    pub adapter_timeout: u64,
    pub seed: Option<u64>,
    pub k_max: Option<usize>,
    pub fraction: Option<f64>,
    pub layers: Option<Vec<usize>>,
    pub calibration: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub library: PathBuf,
    pub top_l: usize,
    pub filter_m: Option<usize>,
    pub jobs: usize,
    pub judge_endpoint: Option<String>,
    pub judge_model: String,
    pub verbose: bool,
}

fn rebase(base: &Path, p: Option<PathBuf>) -> Option<PathBuf> {
    p.map(|p| if p.is_absolute() { p } else { base.join(p) })
}

impl RunConfig {
    /// Flags and environment arrive merged in `args`; the file fills gaps.
    pub fn resolve(args: &CommonArgs) -> anyhow::Result<Self> {
        let file = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))
                    .map_err(|e| UsageError(format!("{e:#}")))?;
                let cfg: FileConfig =
                    toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
                let base = path.parent().unwrap_or(Path::new(""));
                FileConfig {
                    script: rebase(base, cfg.script),
                    adapter_session: rebase(base, cfg.adapter_session),
                    calibration: rebase(base, cfg.calibration),
                    templates: rebase(base, cfg.templates),
                    library: rebase(base, cfg.library),
                    ..cfg
                }
            }
            None => FileConfig::default(),
        };
        let cfg = Self {
            backend: args.backend.or(file.backend).unwrap_or(BackendKind::Toy),
            script: args.script.clone().or(file.script),
            adapter_session: args.adapter_session.clone().or(file.adapter_session),
            adapter_timeout: args.adapter_timeout.or(file.adapter_timeout).unwrap_or(60),
            seed: args.seed.or(file.seed),
            k_max: args.k_max.or(file.k_max),
            fraction: args.fraction.or(file.fraction),
            layers: args.layers.clone().or(file.layers),
            calibration: args.calibration.clone().or(file.calibration),
            templates: args.templates.clone().or(file.templates),
            library: args
                .library
                .clone()
                .or(file.library)
                .unwrap_or_else(|| PathBuf::from("library.egoc")),
            top_l: args.top_l.or(file.top_l).unwrap_or(ego_core::calibration::DEFAULT_TOP_L),
            filter_m: args.filter_m.or(file.filter_m),
            jobs: args.jobs.or(file.jobs).unwrap_or(1),
            judge_endpoint: args.judge_endpoint.clone().or(file.judge_endpoint),
            judge_model: args
                .judge_model
                .clone()
                .or(file.judge_model)
                .unwrap_or_else(|| ego_core::eval::DEFAULT_JUDGE_MODEL.to_string()),
            verbose: args.verbose || file.verbose.unwrap_or(false),
        };
        cfg.check()?;
        Ok(cfg)
    }

    /// Budget from --fraction or --k-max, else `default`.
    pub fn budget(&self, default: MemoryBudget) -> anyhow::Result<MemoryBudget> {
        Ok(match (self.fraction, self.k_max) {
            (Some(f), _) => MemoryBudget::fraction(f)?,
            (None, Some(k)) => MemoryBudget::fixed(k)?,
            (None, None) => default,
        })
    }

    fn check(&self) -> Result<(), UsageError> {
        if self.k_max == Some(0) {
            return Err(UsageError("--k-max must be at least 1".into()));
        }
        if let Some(f) = self.fraction {
            if !(f > 0.0 && f <= 100.0) {
                return Err(UsageError("--fraction must be in (0, 100]".into()));
            }
        }
        if self.top_l == 0 {
            return Err(UsageError("--top-l must be at least 1".into()));
        }
        if self.filter_m == Some(0) {
            return Err(UsageError("--filter-m must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(UsageError("--jobs must be at least 1".into()));
        }
        match self.backend {
            BackendKind::Scripted if self.script.is_none() => {
                Err(UsageError("--backend scripted needs --script".into()))
            }
            BackendKind::Adapter if self.adapter_session.is_none() => {
                Err(UsageError("--backend adapter needs --adapter-session".into()))
            }
            _ => Ok(()),
        }
    }
}
