#![allow(dead_code)]

use std::sync::Arc;

use revprompt::gateway::{Gateway, ResponseCache, ScriptedMock};

/// ROUGE-1 F1 by brute-force matching: every candidate token claims one
/// unused equal token of the reference. Tokens are whitespace-separated
/// lowercase words, so this is only valid for plain-word fixtures.
pub fn oracle_f1(candidate: &str, reference: &str) -> f64 {
    let cand: Vec<String> = candidate
        .split_whitespace()
        .map(str::to_lowercase)
        .collect();
    let refs: Vec<String> = reference
        .split_whitespace()
        .map(str::to_lowercase)
        .collect();
    let overlap = oracle_overlap(&cand, &refs);
    oracle_f1_from_counts(overlap, cand.len(), refs.len())
}

pub fn oracle_overlap(cand: &[String], refs: &[String]) -> usize {
    let mut used = vec![false; refs.len()];
    let mut overlap = 0;
    for c in cand {
        for (j, r) in refs.iter().enumerate() {
            if !used[j] && r == c {
                used[j] = true;
                overlap += 1;
                break;
            }
        }
    }
    overlap
}

pub fn oracle_f1_from_counts(overlap: usize, cand_len: usize, ref_len: usize) -> f64 {
    let p = if cand_len == 0 {
        0.0
    } else {
        overlap as f64 / cand_len as f64
    };
    let r = if ref_len == 0 {
        0.0
    } else {
        overlap as f64 / ref_len as f64
    };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn gateway(mock: Arc<ScriptedMock>, parallelism: usize) -> Gateway {
    Gateway::builder(mock)
        .parallelism(parallelism)
        .build()
        .unwrap()
}

pub fn cached_gateway(mock: Arc<ScriptedMock>, dir: &std::path::Path) -> Gateway {
    Gateway::builder(mock)
        .cache(ResponseCache::open(dir).unwrap())
        .parallelism(2)
        .build()
        .unwrap()
}
