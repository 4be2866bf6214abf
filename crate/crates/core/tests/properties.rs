use proptest::prelude::*;

use ego_core::attention::{
    attention_from_logits, importance_scores, select_top_tokens, uniform_indices, AttentionStack, ImportanceVector,
};
use ego_core::calibration::{patch_mask_overlap, PatchMask};
use ego_core::eval::{f1, normalize, ConfusionCounts};
use ego_core::memory::{
    decode_library, dynamic_k, encode_library, filter_concepts_by_similarity, parse_size_reply, ConceptLibrary,
    ConceptMemory, MemoryBudget, SizeEstimate, ViewProvenance,
};
use ego_core::pipeline::render;
use ego_core::TokenMatrix;

fn scores_and_k() -> impl Strategy<Value = (Vec<f32>, usize)> {
    prop::collection::vec(prop_oneof![Just(0.5f32), 0.0f32..1.0], 1..200)
        .prop_flat_map(|s| {
            let n = s.len();
            (Just(s), 1..=n)
        })
}

/// (n_w, n_r, rows) where each row sums to at most 1.
fn attention_rows() -> impl Strategy<Value = (usize, usize, Vec<f32>)> {
    (1usize..6, 1usize..40).prop_flat_map(|(n_w, n_r)| {
        prop::collection::vec(0.0f32..1.0, n_w * n_r).prop_map(move |raw| {
            let mut out = raw;
            for row in out.chunks_mut(n_r) {
                let s: f32 = row.iter().sum::<f32>().max(1e-6);
                row.iter_mut().for_each(|v| *v = *v / s * 0.99);
            }
            (n_w, n_r, out)
        })
    })
}

proptest! {
    #[test]
    fn selection_keeps_the_best_in_order((scores, k) in scores_and_k()) {
        let n = scores.len();
        let src = TokenMatrix::new(n, 1, (0..n).map(|i| i as f32).collect()).unwrap();
        let sel = select_top_tokens(&src, &ImportanceVector::new(scores.clone()).unwrap(), k).unwrap();
        prop_assert_eq!(sel.indices.len(), k);
        prop_assert!(sel.indices.windows(2).all(|w| w[0] < w[1]));
        let kept_min = sel.indices.iter().map(|&i| scores[i]).fold(f32::INFINITY, f32::min);
        for i in (0..n).filter(|i| !sel.indices.contains(i)) {
            prop_assert!(scores[i] <= kept_min);
            // ties never skip a lower index
            if scores[i] == kept_min {
                prop_assert!(sel.indices.iter().filter(|&&j| scores[j] == kept_min).all(|&j| j < i));
            }
        }
    }

    #[test]
    fn importance_is_a_mean_of_rows((n_w, n_r, rows) in attention_rows(), c in 0.01f32..1.0) {
        let stack = AttentionStack::new(vec![0, 1], n_w, n_r, vec![vec![rows.clone()], vec![rows.clone()]]).unwrap();
        let imp = importance_scores(&stack).unwrap();
        let total: f64 = imp.scores().iter().map(|&v| v as f64).sum();
        prop_assert!(total <= 1.0 + 1e-4);
        prop_assert!(imp.scores().iter().all(|&v| v >= 0.0));
        // duplicate layers average to the single layer
        let single = AttentionStack::new(vec![3], n_w, n_r, vec![vec![rows]]).unwrap();
        let one = importance_scores(&single).unwrap();
        for (a, b) in imp.scores().iter().zip(one.scores()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
        let scaled = importance_scores(&stack.scaled(c).unwrap()).unwrap();
        for (a, b) in imp.scores().iter().zip(scaled.scores()) {
            prop_assert!((a * c - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(n in 1usize..12, m in 1usize..12, seed in any::<u64>()) {
        let mut rng = ego_core::backend::SplitMix64::new(seed);
        let logits = TokenMatrix::new(n, m, rng.fill(n * m, 30.0)).unwrap();
        let p = attention_from_logits(&logits, false).unwrap();
        for row in p.iter_rows() {
            let s: f64 = row.iter().map(|&v| v as f64).sum();
            prop_assert!((s - 1.0).abs() <= 1e-6);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn memory_size_stays_in_range(alpha in 0.0f64..=100.0, n_r in 1usize..2000, k in 1usize..300, frac in prop::option::of(0.5f64..=100.0)) {
        let budget = match frac {
            Some(p) => MemoryBudget::fraction(p).unwrap(),
            None => MemoryBudget::fixed(k).unwrap(),
        };
        let got = dynamic_k(SizeEstimate::new(alpha).unwrap(), n_r, &budget);
        prop_assert!(got >= 1);
        prop_assert!(got <= n_r);
        prop_assert!(got <= budget.cap(n_r));
    }

    #[test]
    fn size_replies_are_clamped(reply in ".{0,40}") {
        let a = parse_size_reply(&reply).alpha();
        prop_assert!((0.0..=100.0).contains(&a));
    }

    #[test]
    fn uniform_indices_are_spread(n in 1usize..500, k in 1usize..500) {
        let idx = uniform_indices(n, k);
        prop_assert_eq!(idx.len(), k.min(n));
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(idx.iter().all(|&i| i < n));
    }

    #[test]
    fn overlap_is_a_fraction(cells in prop::collection::vec(any::<bool>(), 16), picks in prop::collection::btree_set(0usize..16, 1..16)) {
        let mask = PatchMask::new(4, 4, cells).unwrap();
        prop_assert_eq!(PatchMask::from_bytes(&mask.to_bytes()).unwrap(), mask.clone());
        let src = TokenMatrix::new(16, 1, vec![0.0; 16]).unwrap();
        let sel = ego_core::attention::select_indices(&src, picks.iter().copied().collect()).unwrap();
        let o = patch_mask_overlap(&sel, &mask).unwrap();
        prop_assert!((0.0..=1.0).contains(&o));
        let hits = picks.iter().filter(|&&i| mask.contains(i)).count();
        prop_assert_eq!(o, hits as f64 / picks.len() as f64);
    }

    #[test]
    fn rendering_is_single_pass(name in "[a-z<>{}]{0,12}") {
        let out = render("Image <i> shows the entity <c>.", &[("<i>", "1"), ("<c>", &name)]);
        prop_assert_eq!(out, format!("Image 1 shows the entity {name}."));
    }

    #[test]
    fn normalization_is_idempotent(text in "\\PC{0,60}") {
        let once = normalize(&text);
        prop_assert_eq!(normalize(&once), once);
    }

    #[test]
    fn f1_lies_between_min_and_mean(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50) {
        let c = ConfusionCounts { tp, fp, fn_, tn: 0 };
        let (p, r) = (c.precision(), c.recall());
        let f = f1(p, r);
        prop_assert!(f <= (p + r) / 2.0 + 1e-12);
        prop_assert!(f >= p.min(r) - 1e-12 || tp == 0);
        prop_assert_eq!(c.f1(), f);
    }

    #[test]
    fn library_bytes_round_trip(dim in 1usize..8, rows in prop::collection::vec(1usize..6, 1..4), seed in any::<u64>()) {
        let mut rng = ego_core::backend::SplitMix64::new(seed);
        let concepts: Vec<ConceptMemory> = rows.iter().enumerate().map(|(c, &r)| ConceptMemory {
            name: format!("c{c}"),
            tokens: TokenMatrix::new(r, dim, rng.fill(r * dim, 3.0)).unwrap(),
            views: vec![ViewProvenance {
                view_id: "v".into(),
                k_c: r,
                alpha: rng.next_f64() * 100.0,
                indices: (0..r).collect(),
                keywords: vec!["k".into()],
            }],
            backend_fingerprint: "fp".into(),
        }).collect();
        let lib = ConceptLibrary::from_concepts(concepts).unwrap();
        let bytes = encode_library(&lib);
        let back = decode_library(&bytes).unwrap();
        prop_assert_eq!(&back, &lib);
        prop_assert_eq!(encode_library(&back), bytes);
        // similarity filtering returns at most m names, best first
        let query = lib.concepts()[0].tokens.clone();
        let ranked = filter_concepts_by_similarity(&lib, &query, 2).unwrap();
        prop_assert!(ranked.len() <= 2);
        prop_assert!(ranked.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    }
}
