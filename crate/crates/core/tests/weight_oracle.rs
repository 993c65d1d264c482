//! Brute-force share computation checked against the library.

use proptest::prelude::*;
use weighted_eps::{compute_weight_table, Alpha, RequestSet, StreamId, Urgency};

const ALPHAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

fn oracle(urgencies: &[u8], alpha: f64) -> Vec<f64> {
    let n = urgencies.len() as f64;
    let mut raw = Vec::with_capacity(urgencies.len());
    for &u in urgencies {
        let mut same = 0usize;
        for &v in urgencies {
            if v == u {
                same += 1;
            }
        }
        let ratio = same as f64 / n;
        raw.push(alpha / (u as f64 + ratio) + (1.0 - alpha) / n);
    }
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

fn check(urgencies: &[u8], alpha: f64) -> Result<(), String> {
    let set = RequestSet::new(
        urgencies
            .iter()
            .enumerate()
            .map(|(i, &u)| (StreamId(i as u64), Urgency::new(u).unwrap()))
            .collect(),
    )
    .unwrap();
    let table = compute_weight_table(&set, Alpha::new(alpha).unwrap()).unwrap();
    for (i, want) in oracle(urgencies, alpha).into_iter().enumerate() {
        let got = table.share(StreamId(i as u64)).unwrap();
        if (got - want).abs() > 1e-12 {
            return Err(format!("{urgencies:?} alpha={alpha} stream {i}: {got} vs {want}"));
        }
    }
    Ok(())
}

/// Every multiset of up to three urgencies, in every order that matters.
#[test]
fn exhaustive_small_sets() {
    let mut sets: Vec<Vec<u8>> = Vec::new();
    for a in 0..8u8 {
        sets.push(vec![a]);
        for b in 0..8u8 {
            sets.push(vec![a, b]);
            for c in 0..8u8 {
                sets.push(vec![a, b, c]);
            }
        }
    }
    for set in &sets {
        for alpha in ALPHAS {
            check(set, alpha).unwrap();
        }
    }
}

proptest! {
    #[test]
    fn random_sets_up_to_five(
        urgencies in prop::collection::vec(0u8..8, 1..=5),
        alpha_idx in 0usize..5,
    ) {
        check(&urgencies, ALPHAS[alpha_idx]).map_err(TestCaseError::fail)?;
    }
}
