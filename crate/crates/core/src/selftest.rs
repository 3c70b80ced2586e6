//! Built-in consistency checks: the classifier against a bitmask reference
//! over every verdict matrix, and permutation determinism.

use std::time::Instant;

use serde::Serialize;

use crate::classifier::{classify, ClassifierPolicy, ShuffleBreakRule};
use crate::frameplan::gen_permutation;
use crate::model::{Category, VerdictMatrix};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Bit `4*j + k` of `m` is judge `j`'s verdict under condition `k`
/// (0 TEXT_ONLY, 1 ORDERED, 2 SHUFFLE_1, 3 SHUFFLE_2).
pub fn reference_category(m: u8, rule: ShuffleBreakRule) -> Category {
    let bit = |j: u8, k: u8| m >> (4 * j + k) & 1 == 1;
    if m & 0b0001_0001 == 0b0001_0001 {
        return Category::LlmAnswerable;
    }
    if m & 0b1110_1110 == 0b1110_1110 {
        return Category::Semantic;
    }
    for j in 0..2 {
        let failed = match rule {
            ShuffleBreakRule::All => !bit(j, 2) & !bit(j, 3),
            ShuffleBreakRule::Any => !bit(j, 2) | !bit(j, 3),
        };
        if bit(j, 1) && failed {
            return Category::Temporal;
        }
    }
    Category::Others
}

pub fn matrix_from_bits(m: u8) -> VerdictMatrix {
    let row = |j: u8| std::array::from_fn(|k| m >> (4 * j + k as u8) & 1 == 1);
    VerdictMatrix::from_bools(&format!("m{m:03}"), ["judge_a", "judge_b"], [row(0), row(1)])
}

/// All 256 matrices under both shuffle rules.
pub fn truth_table_check() -> Check {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    for rule in [ShuffleBreakRule::All, ShuffleBreakRule::Any] {
        for m in 0..=255u8 {
            let got = classify(&matrix_from_bits(m), ClassifierPolicy::new(rule)).map(|r| r.0);
            let want = reference_category(m, rule);
            if got.as_ref() != Ok(&want) {
                mismatches.push(format!("{rule:?}/{m:08b}: {got:?} != {want:?}"));
            }
        }
    }
    Check {
        name: "truth table (256 matrices x 2 rules)".into(),
        passed: mismatches.is_empty(),
        detail: if mismatches.is_empty() {
            format!("512 agree in {:.1} ms", start.elapsed().as_secs_f64() * 1e3)
        } else {
            format!("{} mismatches, first {}", mismatches.len(), mismatches[0])
        },
    }
}

/// Seeded permutations are bijections, never the identity, and reproducible.
pub fn permutation_check(seeds: u64) -> Check {
    let mut failures = Vec::new();
    for k in [2usize, 16, 64, 128] {
        for seed in 0..seeds {
            for round in [1u8, 2] {
                let p = match gen_permutation(seed, round, k) {
                    Ok(p) => p,
                    Err(e) => {
                        failures.push(format!("k={k} seed={seed}: {e}"));
                        continue;
                    }
                };
                let again = gen_permutation(seed, round, k).ok();
                if !p.is_bijection() || p.is_identity() || again.as_ref() != Some(&p) {
                    failures.push(format!("k={k} seed={seed} round={round}: {:?}", p.order));
                }
                if k == 2 && p.order != [1, 0] {
                    failures.push(format!("k=2 seed={seed}: {:?}", p.order));
                }
            }
        }
    }
    Check {
        name: format!("permutations (K in 2/16/64/128, {seeds} seeds x 2 rounds)"),
        passed: failures.is_empty(),
        detail: failures.first().cloned().unwrap_or_else(|| "all bijective, non-identity, reproducible".into()),
    }
}

pub fn run_selftest() -> Vec<Check> {
    vec![truth_table_check(), permutation_check(500)]
}
