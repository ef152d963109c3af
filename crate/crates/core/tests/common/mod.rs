#![allow(dead_code)]

use logstruct::evalharness::{match_types, truth_script, PlantedTemplate, ValueGen};
use logstruct::{
    discover, extract_all, generate, verify_success, Corpus, ExtractionPlan, PipelineConfig,
    SynthSpec, Synthetic, Verdict,
};
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smallest `k` with `2^k >= n`, by repeated doubling.
pub fn oracle_ceil_log2(n: &BigUint) -> u64 {
    let mut k = 0;
    let mut p = BigUint::from(1u32);
    while &p < n {
        p <<= 1;
        k += 1;
    }
    k
}

pub fn wide_int() -> ValueGen {
    ValueGen::Int {
        min: 0,
        max: 999_999,
    }
}

pub fn short_string() -> ValueGen {
    ValueGen::String {
        min_len: 1,
        max_len: 8,
    }
}

pub fn words(ws: &[&str]) -> ValueGen {
    ValueGen::Enum {
        values: ws.iter().map(|w| w.to_string()).collect(),
    }
}

pub fn planted(
    template: &str,
    fields: Vec<ValueGen>,
    arity: Vec<(usize, usize)>,
) -> PlantedTemplate {
    PlantedTemplate {
        template: template.into(),
        weight: 1.0,
        fields,
        arity,
    }
}

pub fn spec(
    templates: Vec<PlantedTemplate>,
    noise_fraction: f64,
    record_count: usize,
    seed: u64,
) -> SynthSpec {
    SynthSpec {
        templates,
        noise_fraction,
        record_count,
        seed,
        noise_alphabet: None,
        noise_len: (10, 80),
    }
}

/// Random wide ints and short strings, at least half ints.
pub fn random_fields(n: usize, rng: &mut ChaCha8Rng) -> Vec<ValueGen> {
    (0..n)
        .map(|i| {
            if i % 2 == 0 || rng.gen_bool(0.5) {
                wide_int()
            } else {
                short_string()
            }
        })
        .collect()
}

pub fn corpus_of(s: &Synthetic) -> Corpus {
    Corpus::from_bytes(s.text.clone()).expect("nonempty corpus")
}

/// Discover, extract, then check against the truth through an aligned script.
pub fn discover_and_verify(s: &Synthetic, cfg: &PipelineConfig) -> (ExtractionPlan, Verdict) {
    let corpus = corpus_of(s);
    let plan = discover(&corpus, cfg).expect("discover");
    let out = extract_all(&corpus, &plan).expect("extract");
    let verdict = match match_types(&out, &s.truth) {
        Err(diff) => Verdict {
            success: false,
            diff,
        },
        Ok(mapping) => match truth_script(&out, &s.truth, &mapping) {
            Ok(script) => verify_success(&out, &s.truth, &script),
            Err(reason) => Verdict {
                success: false,
                diff: vec![reason],
            },
        },
    };
    (plan, verdict)
}

pub fn synth(spec: &SynthSpec) -> Synthetic {
    generate(spec).expect("valid spec")
}
