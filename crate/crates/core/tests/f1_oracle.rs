//! Token F1 against an independent brute-force implementation.

use hoprouter_core::evalkit::{f1_score, normalize_text, QualityEvaluator, TokenF1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Byte-level normalization: ASCII punctuation removed, Unicode lowercase,
/// whitespace-delimited tokens.
fn oracle_tokens(s: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for raw in s.split_whitespace() {
        let mut t = String::new();
        for ch in raw.chars() {
            let punct = ch.is_ascii() && (33..=47).chain(58..=64).chain(91..=96).chain(123..=126).any(|b| b == ch as u32);
            if !punct {
                t.extend(ch.to_lowercase());
            }
        }
        if !t.is_empty() {
            tokens.push(t);
        }
    }
    tokens
}

/// Greedy one-to-one matching with a used-flag per truth token.
fn oracle_f1(response: &str, truth: &str) -> f64 {
    let r = oracle_tokens(response);
    let g = oracle_tokens(truth);
    let mut used = vec![false; g.len()];
    let mut common = 0usize;
    for tok in &r {
        if let Some(j) = (0..g.len()).find(|&j| !used[j] && g[j] == *tok) {
            used[j] = true;
            common += 1;
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / r.len() as f64;
    let rc = common as f64 / g.len() as f64;
    (2.0 * p * rc / (p + rc)).min(1.0)
}

fn oracle_max(response: &str, truths: &[String]) -> f64 {
    truths.iter().map(|t| oracle_f1(response, t)).fold(0.0, f64::max)
}

const VOCAB: &[&str] = &[
    "the", "The", "cat", "CAT", "sat", "sat.", "on", "mat", "a", "A", "42", "4,2", "(x)", "x", "don't",
    "dont", "!!", "--", "é", "Éclair", "éclair", "-", "...", "end.", "New-York", "newyork",
];

fn random_text(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let n = rng.random_range(0..=max_words);
    let mut s = String::new();
    for i in 0..n {
        if i > 0 {
            s.push_str([" ", "  ", "\t", "\n"][rng.random_range(0..4)]);
        }
        s.push_str(VOCAB[rng.random_range(0..VOCAB.len())]);
    }
    s
}

#[test]
fn matches_brute_force_on_random_pairs() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let response = random_text(&mut rng, 12);
        let k = rng.random_range(1..=3);
        let truths: Vec<String> = (0..k).map(|_| random_text(&mut rng, 6)).collect();
        let got = f1_score(&response, &truths).unwrap().value();
        let want = oracle_max(&response, &truths);
        assert_eq!(got.to_bits(), want.to_bits(), "{response:?} vs {truths:?}");
        assert_eq!(TokenF1.score(&response, &truths).unwrap().value(), got);
    }
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn normalization_agrees_with_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..500 {
        let s = random_text(&mut rng, 10);
        assert_eq!(normalize_text(&s), oracle_tokens(&s).join(" "));
    }
}

#[test]
fn fixed_vectors() {
    let t = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let cases: &[(&str, Vec<String>, f64)] = &[
        ("the cat sat", t(&["the cat"]), 0.8),
        ("The Cat!", t(&["the cat"]), 1.0),
        ("dog", t(&["the cat"]), 0.0),
        ("", t(&["x"]), 0.0),
        ("a b", t(&["zzz", "a b"]), 1.0),
        ("the the", t(&["the"]), 2.0 / 3.0),
    ];
    for (response, truths, want) in cases {
        let got = f1_score(response, truths).unwrap().value();
        assert!((got - want).abs() < 1e-15, "{response:?}: {got} vs {want}");
        assert_eq!(got, oracle_max(response, truths));
    }
}
