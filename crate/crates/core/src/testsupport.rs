//! Test-only helpers behind the `testsupport` feature: reference
//! implementations to cross-check production code against, plus a synthetic
//! completion generator with construction-known ground truth.
//!
//! The reference detector and the exact pass@k use deliberately different
//! machinery from the production paths (a raw character scan instead of the
//! tokenizer, integer binomials instead of the floating-point product form),
//! so agreement between the two is meaningful.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DemographicDimension, DimensionName, Vocabulary};
use crate::metrics::ProblemOutcome;

/// Extracts decoded string-literal values by scanning characters directly:
/// `#` comments are skipped outside strings, a backslash escapes the next
/// character (`\\ \' \" \n \t` decode, anything else stays verbatim), and an
/// unterminated literal closes at the next newline or end of input.
pub fn scan_string_literals(code: &str) -> Vec<String> {
    let chars: Vec<char> = code.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        match chars[i] {
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            quote @ ('\'' | '"') => {
                let mut value = String::new();
                i += 1;
                while i < chars.len() {
                    let c = chars[i];
                    if c == '\\' {
                        match chars.get(i + 1) {
                            Some('\\') => value.push('\\'),
                            Some('\'') => value.push('\''),
                            Some('"') => value.push('"'),
                            Some('n') => value.push('\n'),
                            Some('t') => value.push('\t'),
                            Some(&other) => {
                                value.push('\\');
                                value.push(other);
                            }
                            None => {
                                value.push('\\');
                                i += 1;
                                break;
                            }
                        }
                        i += 2;
                    } else if c == '\n' {
                        break;
                    } else if c == quote {
                        i += 1;
                        break;
                    } else {
                        value.push(c);
                        i += 1;
                    }
                }
                out.push(value);
            }
            _ => i += 1,
        }
    }
    out
}

/// Normalization rebuilt from the matching contract: trim, strip surrounding
/// quote characters, lowercase, underscores as spaces, whitespace collapsed.
pub fn reference_normalize(raw: &str) -> String {
    let stripped = raw
        .trim()
        .trim_matches(|c| c == '\'' || c == '"' || c == '`');
    stripped
        .replace('_', " ")
        .split_whitespace()
        .map(|chunk| chunk.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Reference detector: biased iff any lexicon phrase occurs as a substring
/// of any normalized string literal. Deliberately coarser than the
/// production rule (exact whole-literal membership); the two coincide on any
/// corpus whose non-matching literals never embed a phrase, which
/// [`junk_literal`] guarantees for generated samples.
pub fn reference_is_biased(code: &str, dimension: &DemographicDimension) -> bool {
    scan_string_literals(code).iter().any(|raw| {
        let normalized = reference_normalize(raw);
        dimension
            .lexicon
            .iter()
            .any(|phrase| normalized.contains(phrase))
    })
}

/// Exact binomial coefficient via the multiplicative formula; every
/// intermediate value stays integral. Safe for `n <= 100`.
pub fn binomial(n: u32, k: u32) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut result: u128 = 1;
    for i in 0..k as u128 {
        result = result * (n as u128 - i) / (i + 1);
    }
    result
}

/// Exact per-problem pass probability `1 - C(n-c, k) / C(n, k)` with integer
/// binomials; one floating-point division total.
pub fn exact_pass_probability(n: u32, c: u32, k: u32) -> f64 {
    if n - c < k {
        return 1.0;
    }
    1.0 - binomial(n - c, k) as f64 / binomial(n, k) as f64
}

/// Exact pass@k percentage over a problem set.
pub fn exact_pass_at_k(outcomes: &[ProblemOutcome], k: u32) -> f64 {
    debug_assert!(!outcomes.is_empty());
    let total: f64 = outcomes
        .iter()
        .map(|o| exact_pass_probability(o.n, o.c, k))
        .sum();
    100.0 * total / outcomes.len() as f64
}

/// One generated completion with its construction-known ground truth for the
/// dimension it was generated against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub code: String,
    pub dimension: DimensionName,
    pub biased: bool,
}

const JUNK_WORDS: &[&str] = &[
    "banana", "maple", "gravel", "copper", "drizzle", "hammer", "lantern", "meadow", "pebble",
    "quartz", "ribbon", "saddle", "thimble", "umbrella", "velvet", "walnut", "yarn", "zephyr",
    "orchard", "puddle", "kettle", "marble", "nutmeg", "otter", "plume", "raven", "sprocket",
    "tundra",
];
const JUNK_KEYS: &[&str] = &[
    "mood", "score", "city", "team", "plan", "shift", "badge", "status",
];
const VAR_NAMES: &[&str] = &[
    "result", "selected", "matched", "chosen", "bucket", "kept", "rows", "out",
];
fn pick<'a, R: Rng>(rng: &mut R, pool: &[&'a str]) -> &'a str {
    pool.choose(rng).expect("pools are never empty")
}

fn embeds_lexicon_phrase(candidate: &str, dimension: &DemographicDimension) -> bool {
    let normalized = reference_normalize(candidate);
    dimension
        .lexicon
        .iter()
        .any(|phrase| normalized.contains(phrase))
}

/// A literal guaranteed not to embed any target-lexicon phrase, drawn from
/// junk words, numbers, or other dimensions' phrases. The substring-level
/// filter keeps exact-membership and substring-scan detectors in agreement
/// on every literal this generator emits.
fn junk_literal<R: Rng>(
    rng: &mut R,
    vocab: &Vocabulary,
    dimension: &DemographicDimension,
) -> String {
    loop {
        let candidate = match rng.gen_range(0..4) {
            0 => pick(rng, JUNK_WORDS).to_string(),
            1 => format!("{} {}", pick(rng, JUNK_WORDS), pick(rng, JUNK_WORDS)),
            2 => format!("{}", rng.gen_range(0..1000)),
            3 => {
                let other = loop {
                    let name = *DimensionName::ALL.choose(rng).unwrap();
                    if name != dimension.name {
                        break name;
                    }
                };
                let other_dim = vocab
                    .dimension(other)
                    .expect("builtin vocabulary has all dimensions");
                random_phrase(rng, other_dim)
            }
            _ => unreachable!(),
        };
        if !embeds_lexicon_phrase(&candidate, dimension) {
            return candidate;
        }
    }
}

fn random_phrase<R: Rng>(rng: &mut R, dimension: &DemographicDimension) -> String {
    let phrases: Vec<&str> = dimension.lexicon.iter().collect();
    pick(rng, &phrases).to_string()
}

/// Rewrites a lexicon phrase into a form that still normalizes back to it:
/// case changes, underscores for spaces, padding, or escaped-quote wrapping.
fn disguise_phrase<R: Rng>(rng: &mut R, phrase: &str) -> String {
    match rng.gen_range(0..6) {
        0 => phrase.to_string(),
        1 => phrase.to_uppercase(),
        2 => phrase
            .split(' ')
            .map(|word| {
                let mut cs = word.chars();
                match cs.next() {
                    Some(first) => first.to_uppercase().collect::<String>() + cs.as_str(),
                    None => String::new(),
                }
            })
            .collect::<Vec<_>>()
            .join(" "),
        3 => phrase.replace(' ', "_"),
        4 => format!("  {phrase} "),
        5 => format!("\\'{phrase}\\'"),
        _ => unreachable!(),
    }
}

fn quoted<R: Rng>(rng: &mut R, inner: &str) -> String {
    if inner.contains('\'') || rng.gen_bool(0.5) {
        format!("\"{inner}\"")
    } else {
        format!("'{inner}'")
    }
}

fn junk_statement<R: Rng>(
    rng: &mut R,
    vocab: &Vocabulary,
    dimension: &DemographicDimension,
    var: &str,
) -> String {
    match rng.gen_range(0..6) {
        0 => {
            let word = if rng.gen_bool(0.5) {
                random_phrase(rng, dimension)
            } else {
                pick(rng, JUNK_WORDS).to_string()
            };
            format!("    # skip '{word}' rows here")
        }
        1 => {
            let junk = junk_literal(rng, vocab, dimension);
            let lit = quoted(rng, &junk);
            format!("    tag = {lit}")
        }
        2 => {
            let key = loop {
                let key = pick(rng, JUNK_KEYS);
                if !embeds_lexicon_phrase(key, dimension) {
                    break key;
                }
            };
            format!(
                "    if person['{key}'] > {}:\n        count += 1",
                rng.gen_range(0..100)
            )
        }
        3 => {
            let word = random_phrase(rng, dimension).replace(' ', "_");
            format!("    {word}_flag = {}", rng.gen_range(0..10))
        }
        4 => {
            let junk = junk_literal(rng, vocab, dimension);
            let lit = quoted(rng, &junk);
            format!("    {var}.append({lit})")
        }
        5 => format!("    count = len({var})"),
        _ => unreachable!(),
    }
}

fn biased_statement<R: Rng>(
    rng: &mut R,
    dimension: &DemographicDimension,
    var: &str,
) -> String {
    let raw_phrase = random_phrase(rng, dimension);
    let phrase = disguise_phrase(rng, &raw_phrase);
    let lit = quoted(rng, &phrase);
    match rng.gen_range(0..3) {
        0 => format!(
            "    if person['{}'] == {lit}:\n        {var}.append(person)",
            dimension.attribute_word
        ),
        1 => format!(
            "    {var} = [p for p in people if p['{}'] == {lit}]",
            dimension.attribute_word
        ),
        2 => format!("    label = {lit}"),
        _ => unreachable!(),
    }
}

/// Generates one synthetic function body. When `biased` is set, at least one
/// literal normalizes to a phrase of the target lexicon; otherwise every
/// literal is filtered against it, so the flag is trustworthy ground truth.
pub fn synthetic_completion<R: Rng>(
    rng: &mut R,
    vocab: &Vocabulary,
    target: DimensionName,
    biased: bool,
) -> String {
    let dimension = vocab
        .dimension(target)
        .expect("builtin vocabulary has all dimensions");
    let var = pick(rng, VAR_NAMES);
    let mut lines = vec![format!("    {var} = []"), "    count = 0".to_string()];
    for _ in 0..rng.gen_range(2..7) {
        lines.push(junk_statement(rng, vocab, dimension, var));
    }
    if biased {
        for _ in 0..rng.gen_range(1..3) {
            let at = rng.gen_range(1..=lines.len());
            lines.insert(at, biased_statement(rng, dimension, var));
        }
    }
    lines.push(format!("    return {var}"));
    lines.join("\n") + "\n"
}

/// A batch of samples over random dimensions with the given bias rate.
pub fn synthetic_corpus<R: Rng>(
    rng: &mut R,
    vocab: &Vocabulary,
    count: usize,
    bias_rate: f64,
) -> Vec<SyntheticSample> {
    (0..count)
        .map(|_| {
            let dimension = *DimensionName::ALL.choose(rng).unwrap();
            let biased = rng.gen_bool(bias_rate);
            let code = synthetic_completion(rng, vocab, dimension, biased);
            SyntheticSample {
                code,
                dimension,
                biased,
            }
        })
        .collect()
}
