use std::path::Path;
use std::time::Duration;

use anyhow::Context;
use serde::Serialize;

use ego_core::backend::{AdapterBackend, Backend, BackendConfig, ScriptFile, ToyBackend};
use ego_core::calibration::{
    load_calibration_samples, rank_layers, select_top_l, CalibrationFile, CalibrationOptions, CALIBRATION_FILE_VERSION,
};
use ego_core::eval::{
    enroll_manifest, evaluate, ChatCompletionJudge, DatasetManifest, EnrollSettings, EvalTask, Evaluator, Judge,
};
use ego_core::memory::{load_library, save_library, ConceptLibrary, ConceptMemory, MemoryBudget};
use ego_core::pipeline::{
    enroll, offered_concepts, run_task, EnrollmentRequest, EnrollmentView, PromptTemplateSet, QueryMedia, Task,
    TaskOutcome, TaskQuery, VisualInput,
};
use ego_core::synthetic::{PlantedSpec, PlantedSuite};
use ego_core::Error;

use crate::args::{BackendKind, EvalTaskArg, TaskArg};
use crate::config::RunConfig;
use crate::exit::{BackendFailure, UsageError};

pub fn backend(cfg: &RunConfig) -> anyhow::Result<Box<dyn Backend>> {
    let fail = |e: Error| BackendFailure(format!("backend setup: {e}"));
    Ok(match cfg.backend {
        BackendKind::Toy => {
            let config = BackendConfig {
                seed: cfg.seed.unwrap_or(0),
                ..BackendConfig::default()
            };
            Box::new(ToyBackend::new(config).map_err(fail)?)
        }
        BackendKind::Scripted => {
            let path = cfg.script.as_deref().expect("checked in config");
            let script = ScriptFile::read(path).map_err(fail)?;
            Box::new(script.into_backend(cfg.seed).map_err(fail)?)
        }
        BackendKind::Adapter => {
            let root = cfg.adapter_session.clone().expect("checked in config");
            Box::new(AdapterBackend::connect(root, Duration::from_secs(cfg.adapter_timeout)).map_err(fail)?)
        }
    })
}

pub fn templates(cfg: &RunConfig) -> anyhow::Result<PromptTemplateSet> {
    Ok(match &cfg.templates {
        Some(p) => PromptTemplateSet::read(p)?,
        None => PromptTemplateSet::default(),
    })
}

/// Layer set from --layers, else from --calibration.
fn layers(cfg: &RunConfig, backend: &dyn Backend) -> anyhow::Result<Vec<usize>> {
    if let Some(l) = &cfg.layers {
        return Ok(l.clone());
    }
    let Some(path) = &cfg.calibration else {
        return Err(UsageError("a layer set is required: pass --layers or --calibration".into()).into());
    };
    let file = CalibrationFile::read(path)?;
    if file.backend_fingerprint != backend.fingerprint() {
        return Err(Error::BackendMismatch {
            expected: file.backend_fingerprint,
            found: backend.fingerprint(),
        }
        .into());
    }
    Ok(file.selected_layers)
}

fn open_library(path: &Path) -> anyhow::Result<ConceptLibrary> {
    if path.exists() {
        Ok(load_library(path)?)
    } else {
        Ok(ConceptLibrary::new())
    }
}

pub fn calibrate(cfg: &RunConfig, manifest: &Path, out: &Path) -> anyhow::Result<()> {
    let samples = load_calibration_samples(manifest)?;
    let backend = backend(cfg)?;
    let default_budget = CalibrationOptions::default().budget;
    let options = CalibrationOptions {
        budget: cfg.budget(default_budget)?,
        candidate_layers: cfg.layers.clone(),
        templates: templates(cfg)?,
    };
    let ranking = rank_layers(backend.as_ref(), &samples, &options)?;
    let top_l = if cfg.top_l > ranking.order.len() {
        eprintln!(
            "note: --top-l {} exceeds the {} candidate layers; keeping all",
            cfg.top_l,
            ranking.order.len()
        );
        ranking.order.len()
    } else {
        cfg.top_l
    };
    let selected = select_top_l(&ranking, top_l)?;
    println!(
        "{} samples used, {} skipped, {} tokens selected per sample",
        ranking.samples_used, ranking.samples_skipped, ranking.k
    );
    println!("{:>6}  {:>8}", "layer", "overlap");
    for &layer in &ranking.order {
        let mark = if selected.contains(&layer) { "  *" } else { "" };
        println!("{layer:>6}  {:>8.4}{mark}", ranking.score(layer).unwrap_or(0.0));
    }
    println!("selected layers: {selected:?}");
    CalibrationFile {
        version: CALIBRATION_FILE_VERSION,
        backend_fingerprint: backend.fingerprint(),
        top_l,
        selected_layers: selected,
        ranking,
    }
    .write(out)?;
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct ViewDump {
    view: String,
    alpha: f64,
    k_c: usize,
    indices: Vec<usize>,
    patches: Vec<(usize, usize)>,
    overlay: Vec<String>,
}

#[derive(Serialize)]
struct SelectionDump {
    concept: String,
    grid: (usize, usize),
    views: Vec<ViewDump>,
}

fn dump_selection(memory: &ConceptMemory, grid: (usize, usize), path: &Path) -> anyhow::Result<()> {
    let (rows, cols) = grid;
    let views = memory
        .views
        .iter()
        .map(|v| ViewDump {
            view: v.view_id.clone(),
            alpha: v.alpha,
            k_c: v.k_c,
            indices: v.indices.clone(),
            patches: v.indices.iter().map(|&i| (i / cols, i % cols)).collect(),
            overlay: (0..rows)
                .map(|r| {
                    (0..cols)
                        .map(|c| if v.indices.contains(&(r * cols + c)) { '#' } else { '.' })
                        .collect()
                })
                .collect(),
        })
        .collect();
    let dump = SelectionDump {
        concept: memory.name.clone(),
        grid,
        views,
    };
    let text = serde_json::to_string_pretty(&dump)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn short_indices(indices: &[usize]) -> String {
    const SHOWN: usize = 16;
    let head: Vec<String> = indices.iter().take(SHOWN).map(usize::to_string).collect();
    if indices.len() > SHOWN {
        format!("[{}, ... {} more]", head.join(", "), indices.len() - SHOWN)
    } else {
        format!("[{}]", head.join(", "))
    }
}

pub fn enroll_cmd(cfg: &RunConfig, name: &str, views: &[std::path::PathBuf], dump: Option<&Path>) -> anyhow::Result<()> {
    let mut library = open_library(&cfg.library)?;
    if library.contains(name) {
        return Err(Error::DuplicateConcept(name.to_string()).into());
    }
    let backend = backend(cfg)?;
    let layers = layers(cfg, backend.as_ref())?;
    let templates = templates(cfg)?;
    let request = EnrollmentRequest::new(
        name,
        views
            .iter()
            .map(|p| EnrollmentView {
                id: p.display().to_string(),
                input: VisualInput::File(p.clone()),
            })
            .collect(),
        cfg.budget(MemoryBudget::default())?,
        layers.clone(),
    );
    let memory = enroll(&request, backend.as_ref(), &templates, &mut library)?;
    save_library(&library, &cfg.library)?;
    println!(
        "enrolled `{}`: {} tokens from {} view(s), layers {:?}",
        memory.name,
        memory.tokens.rows(),
        memory.views.len(),
        layers
    );
    for v in &memory.views {
        println!(
            "  {}: alpha={} K_c={} indices={}",
            v.view_id,
            v.alpha,
            v.k_c,
            short_indices(&v.indices)
        );
        if cfg.verbose {
            println!("    keywords: {}", v.keywords.join(" "));
        }
    }
    if let Some(path) = dump {
        dump_selection(&memory, backend.config().patch_grid, path)?;
        println!("wrote {}", path.display());
    }
    println!("library {} now holds {} concept(s)", cfg.library.display(), library.len());
    Ok(())
}

pub fn run_cmd(
    cfg: &RunConfig,
    task: TaskArg,
    media: &[std::path::PathBuf],
    question: Option<&str>,
    no_concepts: bool,
) -> anyhow::Result<()> {
    let task = match task {
        TaskArg::Recognition => Task::Recognition,
        TaskArg::Vqa => Task::Vqa,
        TaskArg::Captioning => Task::Captioning,
    };
    match (task, question) {
        (Task::Vqa, None) => return Err(UsageError("vqa needs --question".into()).into()),
        (Task::Recognition | Task::Captioning, Some(_)) => {
            return Err(UsageError(format!("{task} does not take --question")).into())
        }
        _ => {}
    }
    let library = if no_concepts {
        ConceptLibrary::new()
    } else {
        let lib = load_library(&cfg.library)?;
        if lib.is_empty() {
            return Err(UsageError(format!(
                "library {} is empty; enroll a concept or pass --no-concepts",
                cfg.library.display()
            ))
            .into());
        }
        lib
    };
    let backend = backend(cfg)?;
    let templates = templates(cfg)?;
    let inputs: Vec<VisualInput> = media.iter().map(|p| VisualInput::File(p.clone())).collect();
    let media = QueryMedia::load(&inputs, backend.as_ref())?;
    let concepts = offered_concepts(&library, &media, cfg.filter_m)?;
    if cfg.verbose {
        let names: Vec<&str> = concepts.iter().map(|c| c.name.as_str()).collect();
        eprintln!("offered concepts: {names:?}");
    }
    let query = TaskQuery {
        task,
        media,
        question: question.map(str::to_string),
        concepts,
    };
    let result = run_task(&query, backend.as_ref(), &templates)?;
    println!("reply:");
    for line in result.raw_text.lines() {
        println!("  {line}");
    }
    match &result.outcome {
        TaskOutcome::Recognition { verdicts } => {
            println!("result:");
            for v in verdicts {
                let flag = if v.flagged { "  (unparsed reply, counted as no)" } else { "" };
                println!("{}: {}{flag}", v.name, if v.present { "yes" } else { "no" });
            }
        }
        TaskOutcome::Vqa { answer } => println!("answer: {answer}"),
        TaskOutcome::Captioning { caption } => println!("caption: {caption}"),
    }
    Ok(())
}

pub fn eval_cmd(
    cfg: &RunConfig,
    manifest_path: &Path,
    tasks: &[EvalTaskArg],
    out: &Path,
    views: Option<usize>,
    use_library: bool,
) -> anyhow::Result<()> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let backend = backend(cfg)?;
    let templates = templates(cfg)?;
    let tasks: Vec<EvalTask> = if tasks.is_empty() {
        EvalTask::ALL.to_vec()
    } else {
        tasks
            .iter()
            .map(|t| match t {
                EvalTaskArg::Recognition => EvalTask::Recognition,
                EvalTaskArg::MultiConcept => EvalTask::MultiConcept,
                EvalTaskArg::Vqa => EvalTask::Vqa,
                EvalTaskArg::Captioning => EvalTask::Captioning,
            })
            .collect()
    };
    let library = if use_library {
        load_library(&cfg.library)?
    } else {
        let settings = EnrollSettings {
            budget: cfg.budget(MemoryBudget::default())?,
            views,
            ..EnrollSettings::new(layers(cfg, backend.as_ref())?)
        };
        enroll_manifest(&manifest, backend.as_ref(), &templates, &settings, cfg.jobs)?
    };
    let judge: Option<Box<dyn Judge>> = cfg.judge_endpoint.as_ref().map(|endpoint| {
        Box::new(ChatCompletionJudge::new(
            endpoint.clone(),
            cfg.judge_model.clone(),
            std::env::var("EGO_JUDGE_KEY").ok(),
            Duration::from_secs(120),
        )) as Box<dyn Judge>
    });
    let evaluator = Evaluator {
        judge: judge.as_deref(),
        filter_m: cfg.filter_m,
        jobs: cfg.jobs,
        ..Evaluator::new(backend.as_ref(), &templates, &library)
    };
    let report = evaluate(&manifest, &evaluator, &tasks)?;
    report.write(out)?;
    print!("{}", report.to_table());
    println!("wrote {}", out.join("report.json").display());
    Ok(())
}

#[derive(Serialize)]
struct ConceptSummary<'a> {
    name: &'a str,
    rows: usize,
    dim: usize,
    backend_fingerprint: &'a str,
    views: &'a [ego_core::memory::ViewProvenance],
}

pub fn inspect(cfg: &RunConfig, json: bool) -> anyhow::Result<()> {
    let library = load_library(&cfg.library)?;
    if json {
        let summary: Vec<ConceptSummary> = library
            .iter()
            .map(|c| ConceptSummary {
                name: &c.name,
                rows: c.tokens.rows(),
                dim: c.dim(),
                backend_fingerprint: &c.backend_fingerprint,
                views: &c.views,
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&summary)?);
        return Ok(());
    }
    println!("{}: {} concept(s)", cfg.library.display(), library.len());
    for c in library.iter() {
        println!(
            "{}  rows={} dim={} views={} backend={}",
            c.name,
            c.tokens.rows(),
            c.dim(),
            c.views.len(),
            c.backend_fingerprint
        );
        for v in &c.views {
            println!(
                "  {}: alpha={} K_c={} keywords=[{}] indices={}",
                v.view_id,
                v.alpha,
                v.k_c,
                v.keywords.join(", "),
                short_indices(&v.indices)
            );
        }
    }
    Ok(())
}

pub fn synth(cfg: &RunConfig, dir: &Path, concepts: usize) -> anyhow::Result<()> {
    let spec = PlantedSpec {
        seed: cfg.seed.unwrap_or(PlantedSpec::default().seed),
        concepts,
        ..PlantedSpec::default()
    };
    let suite = PlantedSuite::new(spec).map_err(|e| UsageError(e.to_string()))?;
    let files = suite.write(dir).with_context(|| format!("writing suite to {}", dir.display()))?;
    println!("dataset manifest:     {}", files.manifest.display());
    println!("calibration manifest: {}", files.calibration.display());
    println!("scripted backend:     {}", files.script.display());
    for c in &suite.concepts {
        println!("  {}: signature patches {:?}", c.name, c.signature);
    }
    Ok(())
}
