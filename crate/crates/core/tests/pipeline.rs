use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use ego_core::backend::{
    Backend, BackendConfig, ContextSegment, GenerationRequest, SaliencyAttention, ScriptRule, ScriptedBackend,
    SplitMix64, ToyImage,
};
use ego_core::memory::{ConceptLibrary, MemoryBudget};
use ego_core::pipeline::{
    build_incontext_context, build_memory, enroll, run_task, EnrollmentRequest, EnrollmentView, PromptTemplateSet,
    QueryMedia, Task, TaskOutcome, TaskQuery, VisualInput,
};
use ego_core::{Error, TokenMatrix};

const SIZE: &str = "estimate the percentage";
const KEYWORDS: &str = "list of important words";
const RECOGNITION: &str = "check the presence";
const VQA: &str = "Answer the following question";

fn config() -> BackendConfig {
    BackendConfig {
        seed: 5,
        ..BackendConfig::default()
    }
}

fn backend_with(size_reply: &str, extra: Vec<ScriptRule>) -> ScriptedBackend {
    backend_cfg(config(), size_reply, extra)
}

fn backend_cfg(config: BackendConfig, size_reply: &str, extra: Vec<ScriptRule>) -> ScriptedBackend {
    let mut rules = vec![
        ScriptRule::fixed(SIZE, size_reply),
        ScriptRule::fixed(KEYWORDS, "red handle, white body"),
    ];
    rules.extend(extra);
    ScriptedBackend::new(config, rules, Arc::new(SaliencyAttention::new(vec![1]))).unwrap()
}

fn image(seed: u64) -> ToyImage {
    let mut rng = SplitMix64::new(seed);
    ToyImage::new(32, 32, 3, rng.fill(32 * 32 * 3, 1.0)).unwrap()
}

fn views(n: usize, same: bool) -> Vec<EnrollmentView> {
    (0..n)
        .map(|i| EnrollmentView {
            id: format!("view-{i}"),
            input: VisualInput::Image(image(if same { 1 } else { 10 + i as u64 })),
        })
        .collect()
}

fn request(name: &str, views: Vec<EnrollmentView>) -> EnrollmentRequest {
    EnrollmentRequest::new(name, views, MemoryBudget::default(), vec![1])
}

#[test]
fn size_reply_sets_the_per_view_budget() {
    let templates = PromptTemplateSet::default();
    let b = backend_with("About 25% of the image.", vec![]);
    let m = build_memory(&request("mug", views(1, false)), &b, &templates).unwrap();
    assert_eq!(m.views[0].alpha, 25.0);
    assert_eq!(m.views[0].k_c, 16);
    assert_eq!(m.tokens.rows(), 16);
    assert_eq!(m.views[0].keywords, ["red", "handle", "white", "body"]);
}

#[test]
fn zero_size_falls_back_to_the_cap() {
    let templates = PromptTemplateSet::default();
    for reply in ["0", "I can not tell."] {
        let b = backend_with(reply, vec![]);
        let m = build_memory(&request("mug", views(1, false)), &b, &templates).unwrap();
        assert_eq!(m.views[0].k_c, 50, "reply {reply:?}");
    }
    let b = backend_with("0", vec![]);
    let small = EnrollmentRequest::new("mug", views(1, false), MemoryBudget::fixed(7).unwrap(), vec![1]);
    assert_eq!(build_memory(&small, &b, &templates).unwrap().tokens.rows(), 7);
}

#[test]
fn identical_views_stack_identical_blocks() {
    let templates = PromptTemplateSet::default();
    let b = backend_with("20", vec![]);
    let m = build_memory(&request("mug", views(5, true)), &b, &templates).unwrap();
    let k = m.views[0].k_c;
    assert_eq!(k, 12);
    assert_eq!(m.tokens.rows(), 5 * k);
    for v in &m.views {
        assert_eq!(v.indices, m.views[0].indices);
    }
    let first = &m.tokens.data()[..k * m.dim()];
    for block in m.tokens.data().chunks(k * m.dim()) {
        assert_eq!(block, first);
    }
    // selection follows token norms in the focus layer
    let source = b.encode_image(&image(1)).unwrap();
    let norm = |i: usize| source.row(i).iter().map(|v| v * v).sum::<f32>();
    let kept_min = m.views[0].indices.iter().map(|&i| norm(i)).fold(f32::INFINITY, f32::min);
    let dropped_max = (0..source.rows())
        .filter(|i| !m.views[0].indices.contains(i))
        .map(norm)
        .fold(0.0, f32::max);
    assert!(kept_min >= dropped_max);
}

#[test]
fn keyword_retry_then_enrollment_error() {
    let templates = PromptTemplateSet::default();
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&calls);
    let flaky = ScriptedBackend::new(
        config(),
        vec![
            ScriptRule::fixed(SIZE, "30"),
            ScriptRule::dynamic(KEYWORDS, move |_| {
                Ok(if counter.fetch_add(1, Ordering::SeqCst) == 0 { ", ." } else { "striped mug" }.to_string())
            }),
        ],
        Arc::new(SaliencyAttention::new(vec![1])),
    )
    .unwrap();
    let m = build_memory(&request("mug", views(1, false)), &flaky, &templates).unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), 2);
    assert_eq!(m.views[0].keywords, ["striped", "mug"]);

    let empty = ScriptedBackend::new(
        config(),
        vec![ScriptRule::fixed(SIZE, "30"), ScriptRule::fixed(KEYWORDS, " , ... ,")],
        Arc::new(SaliencyAttention::new(vec![1])),
    )
    .unwrap();
    match build_memory(&request("mug", views(2, false)), &empty, &templates) {
        Err(Error::Enrollment { view, .. }) => assert_eq!(view, "view-0"),
        other => panic!("expected an enrollment error, got {other:?}"),
    }
}

#[test]
fn duplicate_and_foreign_backend_are_rejected() {
    let templates = PromptTemplateSet::default();
    let b = backend_with("20", vec![]);
    let mut lib = ConceptLibrary::new();
    enroll(&request("mug", views(1, false)), &b, &templates, &mut lib).unwrap();
    let before = lib.clone();
    assert!(matches!(
        enroll(&request("mug", views(1, false)), &b, &templates, &mut lib),
        Err(Error::DuplicateConcept(_))
    ));
    let other = backend_cfg(BackendConfig { seed: 6, ..config() }, "20", vec![]);
    assert!(matches!(
        enroll(&request("bike", views(1, false)), &other, &templates, &mut lib),
        Err(Error::BackendMismatch { .. })
    ));
    assert_eq!(lib, before);

    let media = QueryMedia::Image(other.encode_image(&image(99)).unwrap());
    let query = TaskQuery {
        task: Task::Captioning,
        media,
        question: None,
        concepts: lib.iter().collect(),
    };
    assert!(matches!(run_task(&query, &other, &templates), Err(Error::BackendMismatch { .. })));
}

fn text(seg: &ContextSegment) -> &str {
    match seg {
        ContextSegment::Text(t) => t,
        ContextSegment::VisualTokens(_) => panic!("expected text, got visual tokens"),
    }
}

fn rows(seg: &ContextSegment) -> usize {
    match seg {
        ContextSegment::VisualTokens(m) => m.rows(),
        ContextSegment::Text(t) => panic!("expected visual tokens, got {t:?}"),
    }
}

#[test]
fn context_interleaves_names_memories_and_query() {
    let templates = PromptTemplateSet::default();
    let b = backend_with("20", vec![]);
    let mut lib = ConceptLibrary::new();
    enroll(&request("mug", views(2, false)), &b, &templates, &mut lib).unwrap();
    enroll(&request("bike", views(1, false)), &b, &templates, &mut lib).unwrap();
    let frames: Vec<TokenMatrix> = (0..3).map(|i| b.encode_image(&image(70 + i)).unwrap()).collect();
    let media = QueryMedia::Video(frames);
    let concepts: Vec<_> = lib.iter().collect();
    let ctx = build_incontext_context(&concepts, &templates, &media);
    assert_eq!(ctx.len(), 2 + 2 + 3);
    assert_eq!(text(&ctx[0]), "Image 1 shows the entity mug. Image 1: ");
    assert_eq!(rows(&ctx[1]), 24);
    assert_eq!(text(&ctx[2]), "Image 2 shows the entity bike. Image 2: ");
    assert_eq!(rows(&ctx[3]), 12);
    for seg in &ctx[4..] {
        assert_eq!(rows(seg), 64);
    }

    let seen: Arc<Mutex<Vec<GenerationRequest>>> = Arc::default();
    let log = Arc::clone(&seen);
    let b2 = backend_with(
        "20",
        vec![
            ScriptRule::dynamic(RECOGNITION, move |r| {
                log.lock().unwrap().push(r.clone());
                Ok("mug: yes\nbike: no".into())
            }),
            ScriptRule::fixed(VQA, "It is red."),
        ],
    );
    let query = TaskQuery {
        task: Task::Recognition,
        media,
        question: None,
        concepts: concepts.clone(),
    };
    let result = run_task(&query, &b2, &templates).unwrap();
    let verdicts = result.verdicts();
    assert_eq!(verdicts.len(), 2);
    assert!(verdicts[0].present && !verdicts[1].present);
    let req = seen.lock().unwrap()[0].clone();
    assert_eq!(req.context, ctx);
    assert!(req.instruction.contains("in the **new** Video."), "{}", req.instruction);

    let vqa = TaskQuery {
        task: Task::Vqa,
        media: QueryMedia::Image(b.encode_image(&image(80)).unwrap()),
        question: Some("What color is it?".into()),
        concepts,
    };
    let result = run_task(&vqa, &b2, &templates).unwrap();
    assert_eq!(result.outcome, TaskOutcome::Vqa { answer: "It is red.".into() });
}

#[test]
fn overflow_reports_the_excess() {
    let templates = PromptTemplateSet::default();
    let tight = BackendConfig {
        max_context: 460,
        ..config()
    };
    // each enrollment prompt fits; two 190-row memories plus the query do not
    let b = backend_cfg(tight, "60", vec![ScriptRule::fixed(RECOGNITION, "mug: yes")]);
    let mut lib = ConceptLibrary::new();
    enroll(&request("mug", views(5, false)), &b, &templates, &mut lib).unwrap();
    enroll(&request("cat", views(5, false)), &b, &templates, &mut lib).unwrap();
    assert_eq!(lib.get("mug").unwrap().tokens.rows(), 190);
    let query = TaskQuery {
        task: Task::Recognition,
        media: QueryMedia::Image(b.encode_image(&image(3)).unwrap()),
        question: None,
        concepts: lib.iter().collect(),
    };
    match run_task(&query, &b, &templates) {
        Err(Error::ContextLimit { used, limit, overflow }) => {
            assert_eq!(limit, 460);
            assert!(used > 2 * 190 + 64);
            assert_eq!(overflow, used - limit);
        }
        other => panic!("expected a context limit error, got {other:?}"),
    }
}

#[test]
fn per_concept_recognition_template() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("templates/qwen2.5-vl.toml");
    let templates = PromptTemplateSet::read(&path).unwrap();
    let asked: Arc<Mutex<Vec<String>>> = Arc::default();
    let log = Arc::clone(&asked);
    let b = backend_with(
        "20",
        vec![ScriptRule::dynamic("Do you see any entity", move |r| {
            log.lock().unwrap().push(r.instruction.clone());
            Ok(if r.instruction.contains("resemble cat") {
                "Similarity Score: 80 Final Answer: Yes"
            } else {
                "Similarity Score: 10 Final Answer: [No]"
            }
            .into())
        })],
    );
    let mut lib = ConceptLibrary::new();
    for name in ["mug", "cat"] {
        enroll(&request(name, views(1, false)), &b, &templates, &mut lib).unwrap();
    }
    let query = TaskQuery {
        task: Task::Recognition,
        media: QueryMedia::Image(b.encode_image(&image(4)).unwrap()),
        question: None,
        concepts: lib.iter().collect(),
    };
    let result = run_task(&query, &b, &templates).unwrap();
    let v = result.verdicts();
    assert_eq!((v[0].name.as_str(), v[0].present), ("mug", false));
    assert_eq!((v[1].name.as_str(), v[1].present), ("cat", true));
    assert!(v.iter().all(|x| !x.flagged));
    let asked = asked.lock().unwrap();
    assert_eq!(asked.len(), 2);
    assert!(asked[0].contains("IMAGE 3"), "{}", asked[0]);
}
