mod common;

use common::*;
use logstruct::generation::{exhaustive_search, greedy_search};
use logstruct::template::MatchOutcome;
use logstruct::{
    discover, extract_all, CharSet, CompiledTemplate, Corpus, ExtractionPlan, GenerationConfig,
    PipelineConfig, SearchMode, Synthetic,
};

fn two_types(noise: f64, seed: u64) -> Synthetic {
    synth(&spec(
        vec![
            planted(
                "[F] F: (F )*F\\n",
                vec![wide_int(), short_string(), wide_int()],
                vec![(1, 6)],
            ),
            planted(
                "{F;F}\\nF@F\\n",
                vec![wide_int(), short_string(), wide_int(), short_string()],
                vec![],
            ),
        ],
        noise,
        1200,
        seed,
    ))
}

#[test]
fn two_types_with_a_quarter_noise() {
    let s = two_types(0.25, 11);
    let (plan, verdict) = discover_and_verify(&s, &PipelineConfig::default());
    assert!(verdict.success, "{plan:?}\n{:?}", verdict.diff);
    let mut found: Vec<_> = plan.rounds.iter().map(|r| r.template.as_str()).collect();
    found.sort();
    assert_eq!(found, ["[F] F: (F )*F\\n", "{F;F}\\nF@F\\n"]);
    assert!(plan.residual_noise_fraction > 0.0);
}

#[test]
fn plan_survives_json_and_disk() {
    let s = two_types(0.1, 12);
    let plan = discover(&corpus_of(&s), &PipelineConfig::default()).unwrap();
    assert_eq!(ExtractionPlan::from_json(&plan.to_json()).unwrap(), plan);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plan.json");
    plan.save(&path).unwrap();
    assert_eq!(ExtractionPlan::load(&path).unwrap(), plan);
}

#[test]
fn fixed_arity_siblings_merge_and_are_flagged() {
    let short = "F F\\nF=F\\nF=F\\nF;\\n";
    let long = "F F\\nF=F\\nF=F\\nF=F\\nF=F\\nF=F\\nF;\\n";
    let alternating = |n: usize| {
        (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    short_string()
                } else {
                    wide_int()
                }
            })
            .collect()
    };
    let s = synth(&spec(
        vec![
            planted(short, alternating(6), vec![]),
            planted(long, alternating(12), vec![]),
        ],
        0.1,
        1200,
        13,
    ));
    let plan = discover(&corpus_of(&s), &PipelineConfig::default()).unwrap();
    let found: Vec<_> = plan.rounds.iter().map(|r| r.template.as_str()).collect();
    let diag = plan
        .diagnostics
        .first()
        .unwrap_or_else(|| panic!("no diagnostic for {found:?}"));
    assert!(diag.template.contains(")*"), "{}", diag.template);
    let arities: Vec<usize> = diag.arities.iter().map(|a| a.0).collect();
    assert!(arities.len() >= 2, "{arities:?}");
}

#[test]
fn every_extracted_row_matches_its_template_at_its_lines() {
    let s = two_types(0.2, 14);
    let corpus = corpus_of(&s);
    let plan = discover(&corpus, &PipelineConfig::default()).unwrap();
    let out = extract_all(&corpus, &plan).unwrap();
    let starts = corpus.line_starts();
    let offset = |line: usize| starts.get(line).copied().unwrap_or(corpus.total_len());
    for (r, st) in plan.templates().unwrap().into_iter().enumerate() {
        let ct = CompiledTemplate::new(st);
        let table = out.table(&format!("record_{r}")).unwrap();
        assert!(!table.rows.is_empty());
        for row in table.rows.iter().step_by(7) {
            let (a, b): (usize, usize) = (row[1].parse().unwrap(), row[2].parse().unwrap());
            let mut caps = Vec::new();
            match ct.match_at(corpus.bytes(), offset(a), plan.max_span, &mut caps) {
                MatchOutcome::Matched { end, .. } => assert_eq!(end, offset(b), "row {row:?}"),
                other => panic!("row {row:?}: {other:?}"),
            }
        }
    }
}

#[test]
fn greedy_visits_a_subset_of_exhaustive() {
    let s = two_types(0.0, 15);
    let view = corpus_of(&s).full_view();
    let mut cfg = GenerationConfig {
        candidates: CharSet::from_bytes(b"[]: {};@"),
        ..GenerationConfig::default()
    };
    cfg.search_mode = SearchMode::Exhaustive;
    let exhaustive = exhaustive_search(&view, &cfg).unwrap();
    let greedy = greedy_search(&view, &cfg);
    assert!(greedy.subsets_visited() < exhaustive.subsets_visited());
    for (key, _) in greedy.iter() {
        assert!(exhaustive.get(key).is_some(), "{key}");
    }
}

#[test]
fn crlf_input_extracts_like_lf() {
    let lf = b"a=1;\nb=2;\nc=3;\nd=4;\n".repeat(20);
    let crlf: Vec<u8> = lf
        .iter()
        .flat_map(|&b| {
            if b == b'\n' {
                vec![b'\r', b'\n']
            } else {
                vec![b]
            }
        })
        .collect();
    let cfg = PipelineConfig::default();
    let (a, b) = (
        Corpus::from_bytes(lf).unwrap(),
        Corpus::from_bytes(crlf).unwrap(),
    );
    let (pa, pb) = (discover(&a, &cfg).unwrap(), discover(&b, &cfg).unwrap());
    assert_eq!(pa, pb);
    assert_eq!(extract_all(&a, &pa).unwrap(), extract_all(&b, &pb).unwrap());
}
