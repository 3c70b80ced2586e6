use std::collections::BTreeMap;

use proptest::prelude::*;
use serde_json::{json, Value};
use vbenchcomp::backend::{BackendConfig, ResponseStatus};
use vbenchcomp::classifier::{classify, AssignmentEntry, CategoryAssignment, ClassifierPolicy, Rule, ShuffleBreakRule};
use vbenchcomp::frameplan::{build_frame_plan, gen_permutation, FramePolicy};
use vbenchcomp::grader::{extract_choice, first_standalone_letter, grade, ParseMethod};
use vbenchcomp::ingest::{
    apply_adapter, emit_canonical, load_canonical, AdapterSpec, GoldStyle, IngestError, LoadOptions, OptionStyle,
};
use vbenchcomp::metrics::{category_scores, spearman, CategoryScores};
use vbenchcomp::model::{
    make_composition, validate_question, Category, ConditionKind, QuestionRecord, Verdict, VerdictMatrix,
};
use vbenchcomp::orchestrator::{plan_probes, SessionConfig};

const ALL: ClassifierPolicy = ClassifierPolicy { shuffle_break_rule: ShuffleBreakRule::All };
const ANY: ClassifierPolicy = ClassifierPolicy { shuffle_break_rule: ShuffleBreakRule::Any };

fn matrix(bits: u8) -> VerdictMatrix {
    let row = |j: u8| std::array::from_fn(|k| bits >> (4 * j + k as u8) & 1 == 1);
    VerdictMatrix::from_bools("q", ["j1", "j2"], [row(0), row(1)])
}

fn record() -> impl Strategy<Value = QuestionRecord> {
    (
        "[a-z0-9_-]{1,12}",
        "[A-Za-z]{1,10}",
        "[a-z/]{1,20}\\.mp4",
        proptest::option::of(0.5f64..10_000.0),
        "[!-~][ -~]{0,59}",
        prop::collection::vec("[ -~]*[!-~][ -~]*", 2..6),
        prop::collection::btree_map("[a-z]{1,6}", "[a-z0-9]{0,6}", 0..3),
        any::<prop::sample::Index>(),
    )
        .prop_map(|(id, benchmark, video_ref, duration_s, question, options, tags, gold)| QuestionRecord {
            gold: gold.index(options.len()),
            id,
            benchmark,
            video_ref,
            duration_s,
            question,
            options,
            tags,
        })
}

fn unique_records() -> impl Strategy<Value = Vec<QuestionRecord>> {
    prop::collection::vec(record(), 0..12).prop_map(|mut v| {
        let mut seen = std::collections::HashSet::new();
        v.retain(|r| seen.insert(r.id.clone()));
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn composition_counts_and_ratios_sum(counts in prop::array::uniform4(0u64..100_000)) {
        let m: BTreeMap<Category, u64> = Category::ALL.iter().copied().zip(counts).collect();
        match make_composition(&m) {
            Ok(s) => {
                prop_assert_eq!(s.counts.values().sum::<u64>(), s.total);
                prop_assert!((s.ratios.values().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
            Err(_) => prop_assert_eq!(counts.iter().sum::<u64>(), 0),
        }
    }

    #[test]
    fn canonical_round_trip(records in unique_records()) {
        let set = vbenchcomp::ingest::BenchmarkSet { name: "B".into(), records, source_digest: String::new() };
        let mut bytes = Vec::new();
        emit_canonical(&set, &mut bytes).unwrap();
        let back = load_canonical(bytes.as_slice(), Some("B"), LoadOptions::default()).unwrap();
        prop_assert_eq!(back.set.records, set.records);
        prop_assert!(back.warnings.is_empty());
    }

    #[test]
    fn adapter_output_is_valid_or_an_error(
        id in prop_oneof![Just(Value::Null), "[a-z0-9]{0,4}".prop_map(Value::from), (0i64..99).prop_map(Value::from)],
        opts in prop_oneof![
            Just(Value::Null),
            prop::collection::vec(prop_oneof!["[ a-z]{0,6}".prop_map(Value::from), Just(Value::Null), (0i64..9).prop_map(Value::from)], 0..5).prop_map(Value::from),
            "[a-z]{0,5}".prop_map(Value::from),
        ],
        gold in prop_oneof![Just(Value::Null), (-2i64..8).prop_map(Value::from), "[A-Fa-f0-9]{0,2}".prop_map(Value::from), Just(json!(1.5))],
        style in prop_oneof![Just(GoldStyle::Index), Just(GoldStyle::Letter), Just(GoldStyle::Text)],
    ) {
        let spec = AdapterSpec {
            field_map: [("id", "qid"), ("video_ref", "video"), ("question", "q"), ("options", "opts"), ("gold", "ans")]
                .into_iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
            option_style: OptionStyle::List,
            gold_style: style,
            defaults: BTreeMap::new(),
            inline_pattern: None,
            strip_letter_prefix: false,
        };
        let src = json!({"qid": id, "video": "v.mp4", "q": "Which?", "opts": opts, "ans": gold});
        match apply_adapter(&[src], &spec) {
            Ok(records) => {
                for r in &records {
                    prop_assert!(validate_question(r).is_empty(), "{:?}", r);
                }
            }
            Err(e) => prop_assert!(matches!(e, IngestError::MappingError { .. }), "{e}"),
        }
    }

    #[test]
    fn permutations_are_bijective_non_identity_and_reproducible(seed in any::<u64>(), round in 1u8..=2, k in 2usize..300) {
        let p = gen_permutation(seed, round, k).unwrap();
        let mut sorted = p.order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..k).collect::<Vec<_>>());
        prop_assert!(p.order.iter().enumerate().any(|(i, &v)| i != v));
        prop_assert_eq!(gen_permutation(seed, round, k).unwrap(), p);
    }

    #[test]
    fn presentations_are_pure_in_duration_policy_and_seed(seed in any::<u64>(), dur in 1.0f64..7200.0, frames in 2usize..130) {
        let q = QuestionRecord {
            id: "q7".into(), benchmark: "B".into(), video_ref: "v.mp4".into(), duration_s: Some(dur),
            question: "?".into(), options: vec!["x".into(), "y".into()], gold: 0, tags: BTreeMap::new(),
        };
        let mut cfg = SessionConfig::new(
            [BackendConfig::scripted("a"), BackendConfig::scripted("b")], seed, "/tmp/unused".into());
        cfg.frame_policy = FramePolicy::with_long_split(frames, frames);
        cfg.eval_models = vec![BackendConfig::scripted("m")];
        let t1 = plan_probes(&q, &cfg).unwrap();
        let t2 = plan_probes(&q, &cfg).unwrap();
        prop_assert_eq!(&t1, &t2);
        prop_assert_eq!(t1.len(), 9);
        // Both judges see the same shuffles.
        for kind in [ConditionKind::Shuffle1, ConditionKind::Shuffle2] {
            let shown: Vec<_> = t1.iter().filter(|t| t.condition.kind == kind).map(|t| &t.frame_ids).collect();
            prop_assert_eq!(shown.len(), 2);
            prop_assert_eq!(shown[0], shown[1]);
        }
        let plan = build_frame_plan("v.mp4", dur, &cfg.frame_policy, &BTreeMap::new()).unwrap();
        prop_assert!(plan.timestamps_s.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(plan.timestamps_s.iter().all(|&t| t > 0.0 && t < dur));
    }

    #[test]
    fn letter_rule_ignores_letters_inside_words(words in prop::collection::vec("[A-Za-z]{2,9}", 1..12), seps in prop::collection::vec("[ ,.:;!?()-]{1,2}", 12)) {
        let sentence: String = words.iter().zip(&seps).map(|(w, s)| format!("{w}{s}")).collect();
        prop_assert_eq!(first_standalone_letter(&sentence, 26), None);
        let options: Vec<String> = ["alpha one", "beta two", "gamma three", "delta four"].map(String::from).to_vec();
        prop_assert_ne!(extract_choice(&sentence, &options).method, ParseMethod::Letter);
    }

    #[test]
    fn answer_prefix_always_parses(i in 0usize..5, lower in any::<bool>(), tail in "[ .)]{0,3}") {
        let options: Vec<String> = (0..5).map(|k| format!("choice {k}")).collect();
        let letter = (b'A' + i as u8) as char;
        let letter = if lower { letter.to_ascii_lowercase() } else { letter };
        let p = extract_choice(&format!("Answer: {letter}{tail}"), &options);
        prop_assert_eq!((p.index, p.method), (Some(i), ParseMethod::Letter));
    }

    #[test]
    fn extraction_is_idempotent_on_evidence(raw in "[a-z ,.()]{0,40}", opts in prop::collection::vec("[a-z]{2,6}( [a-z]{2,6})?", 2..5)) {
        let p = extract_choice(&raw, &opts);
        prop_assert_eq!(&extract_choice(&raw, &opts), &p);
        if p.method != ParseMethod::None {
            prop_assert_eq!(extract_choice(&p.evidence, &opts).index, p.index);
        }
    }

    #[test]
    fn changing_gold_flips_only_records_parsed_as_old_or_new(parsed in prop::collection::vec(proptest::option::of(0usize..4), 1..30), old in 0usize..4, new in 0usize..4) {
        for idx in parsed {
            let raw = idx.map_or("no idea".to_string(), |i| ((b'A' + i as u8) as char).to_string());
            let opts: Vec<String> = (0..4).map(|k| format!("opt {k}")).collect();
            let p = extract_choice(&raw, &opts);
            let a = grade(&p, old, ResponseStatus::Ok, &raw).correct;
            let b = grade(&p, new, ResponseStatus::Ok, &raw).correct;
            let touched = p.index == Some(old) || p.index == Some(new);
            prop_assert_eq!(a != b, touched && old != new);
            prop_assert!(!grade(&p, old, ResponseStatus::Refused, &raw).correct);
        }
    }

    #[test]
    fn weighted_mean_identity(sizes in prop::array::uniform4(0usize..60), seed in any::<u64>()) {
        prop_assume!(sizes.iter().sum::<usize>() > 0);
        let mut entries = Vec::new();
        let mut verdicts = BTreeMap::new();
        let mut x = seed;
        for (c, n) in Category::ALL.iter().zip(sizes) {
            for i in 0..n {
                let id = format!("{c}-{i}");
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                verdicts.insert(id.clone(), Verdict::bare(x >> 63 == 1));
                entries.push(AssignmentEntry { id, category: *c, rule: Rule::Residual, judges: vec![] });
            }
        }
        let a = CategoryAssignment { entries, unresolved: vec![] };
        let s = category_scores("m", &verdicts, &a).unwrap();
        let num: f64 = Category::ALL.iter().filter_map(|c| s.accuracy(*c).map(|acc| s.n(*c) as f64 * acc)).sum();
        let den: u64 = Category::ALL.iter().map(|c| s.n(*c)).sum();
        prop_assert!((s.overall - num / den as f64).abs() <= 1e-9);
        for c in Category::ALL {
            prop_assert_eq!(s.accuracy(c).is_none(), s.n(c) == 0);
            prop_assert!(s.accuracy(c).is_none_or(|v| (0.0..=100.0).contains(&v)));
        }
        let json = serde_json::to_string(&s).unwrap();
        prop_assert_eq!(serde_json::from_str::<CategoryScores>(&json).unwrap(), s);
    }

    #[test]
    fn spearman_is_invariant_under_increasing_transforms(pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..20)) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let fx: Vec<f64> = x.iter().map(|v| (v / 50.0).exp() * 3.0 + 7.0).collect();
        let gy: Vec<f64> = y.iter().map(|v| v.powi(3) + v).collect();
        match (spearman(&x, &y), spearman(&fx, &gy)) {
            (Some(a), Some(b)) => {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&a));
            }
            (a, b) => prop_assert_eq!(a, b),
        }
    }
}

#[test]
fn classifier_partition_monotonicity_and_containment() {
    for bits in 0..=255u8 {
        let m = matrix(bits);
        let (all, _) = classify(&m, ALL).unwrap();
        let (any, _) = classify(&m, ANY).unwrap();
        assert_eq!(classify(&m, ALL).unwrap().0, all, "deterministic");
        if all == Category::Temporal {
            assert_eq!(any, Category::Temporal, "{bits:08b}");
        }
        // Flipping a TEXT_ONLY verdict to correct keeps LLM_ANSWERABLE questions there.
        for flip in [0b0000_0001u8, 0b0001_0000] {
            for policy in [ALL, ANY] {
                if classify(&m, policy).unwrap().0 == Category::LlmAnswerable {
                    assert_eq!(classify(&matrix(bits | flip), policy).unwrap().0, Category::LlmAnswerable);
                }
            }
        }
    }
}
