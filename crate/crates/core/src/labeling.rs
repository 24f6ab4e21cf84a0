//! Bit labeling by the Binary Switching Algorithm with a Q-weighted Hamming
//! cost.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{squared_distance, BitLabeling, JointConstellation};
use crate::qfunc::{pairwise_error, q_inverse};

/// Number of BSA starts: natural order first, then random permutations.
pub const BSA_RESTARTS: usize = 5;

/// Error rate that anchors the default reference noise level.
pub const REFERENCE_PAIR_ERROR: f64 = 1e-3;

pub fn hamming(a: usize, b: usize) -> u32 {
    (a ^ b).count_ones()
}

/// `Q(√(d_pq²/(2 N0)))` for every ordered pair, row-major `M × M`, zero
/// diagonal.
pub fn pair_weights(c: &JointConstellation, n0: f64) -> Vec<f64> {
    let m = c.size();
    let mut w = vec![0.0; m * m];
    for p in 0..m {
        for q in p + 1..m {
            let v = pairwise_error(squared_distance(c.column(p), c.column(q)), n0);
            w[p * m + q] = v;
            w[q * m + p] = v;
        }
    }
    w
}

/// `N0` at which the closest pair has error probability
/// [`REFERENCE_PAIR_ERROR`].
pub fn reference_n0(c: &JointConstellation) -> f64 {
    let d = c.min_distance();
    let x = q_inverse(REFERENCE_PAIR_ERROR);
    d * d / (2.0 * x * x)
}

fn cost_from_weights(words: &[usize], w: &[f64]) -> f64 {
    let m = words.len();
    let mut total = 0.0;
    for p in 0..m {
        for q in p + 1..m {
            total += f64::from(hamming(words[p], words[q])) * w[p * m + q];
        }
    }
    2.0 * total
}

/// `Σ_{p≠q} H(b_p, b_q) Q(√(d_pq²/(2 N0)))` over ordered pairs.
pub fn labeling_cost(labeling: &BitLabeling, c: &JointConstellation, n0_ref: f64) -> f64 {
    cost_from_weights(labeling.words(), &pair_weights(c, n0_ref))
}

/// Expected number of wrong bits given a symbol error.
pub fn lambda_estimate(labeling: &BitLabeling, c: &JointConstellation, n0: f64) -> f64 {
    let w = pair_weights(c, n0);
    let total: f64 = w.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    cost_from_weights(labeling.words(), &w) / total
}

#[derive(Debug, Clone)]
pub struct BsaResult {
    pub labeling: BitLabeling,
    pub cost: f64,
    /// Cost after each accepted swap of the winning start, initial cost first.
    pub trace: Vec<f64>,
    pub n0_ref: f64,
}

/// Cost change when points `a` and `b` exchange words.
fn swap_delta(words: &[usize], w: &[f64], a: usize, b: usize) -> f64 {
    let m = words.len();
    let (wa, wb) = (words[a], words[b]);
    let mut d = 0.0;
    for r in 0..m {
        if r == a || r == b {
            continue;
        }
        let h = f64::from(hamming(wb, words[r])) - f64::from(hamming(wa, words[r]));
        d += h * (w[a * m + r] - w[b * m + r]);
    }
    2.0 * d
}

fn accept_threshold(cost: f64) -> f64 {
    -1e-12 * cost.max(f64::MIN_POSITIVE)
}

/// Best strictly improving swap partner of `a`, if any.
fn best_swap(words: &[usize], w: &[f64], a: usize, cost: f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for b in 0..words.len() {
        if b == a {
            continue;
        }
        let d = swap_delta(words, w, a, b);
        if d < accept_threshold(cost) && best.is_none_or(|(_, bd)| d < bd) {
            best = Some((b, d));
        }
    }
    best
}

fn point_costs(words: &[usize], w: &[f64]) -> Vec<f64> {
    let m = words.len();
    (0..m)
        .map(|p| {
            (0..m)
                .map(|q| f64::from(hamming(words[p], words[q])) * w[p * m + q])
                .sum()
        })
        .collect()
}

/// One BSA descent from `words`: visit points in order of decreasing
/// individual cost and apply the best improving swap of the first point
/// that has one, until no transposition lowers the cost.
fn descend(mut words: Vec<usize>, w: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let mut cost = cost_from_weights(&words, w);
    let mut trace = vec![cost];
    loop {
        let pc = point_costs(&words, w);
        let mut order: Vec<usize> = (0..words.len()).collect();
        order.sort_by(|&a, &b| pc[b].total_cmp(&pc[a]).then(a.cmp(&b)));
        let swap = order
            .iter()
            .find_map(|&a| best_swap(&words, w, a, cost).map(|(b, _)| (a, b)));
        let Some((a, b)) = swap else { break };
        words.swap(a, b);
        cost = cost_from_weights(&words, w);
        trace.push(cost);
    }
    (words, trace)
}

/// Runs [`BSA_RESTARTS`] descents and keeps the cheapest labeling.
pub fn bsa_optimize(c: &JointConstellation, n0_ref: f64, seed: u64) -> BsaResult {
    let m = c.size();
    let w = pair_weights(c, n0_ref);
    let mut best: Option<(Vec<usize>, Vec<f64>)> = None;
    for start in 0..BSA_RESTARTS {
        let mut init: Vec<usize> = (0..m).collect();
        if start > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(start as u64);
            init.shuffle(&mut rng);
        }
        let (words, trace) = descend(init, &w);
        let better = best
            .as_ref()
            .is_none_or(|(_, t)| trace.last().unwrap() < t.last().unwrap());
        if better {
            best = Some((words, trace));
        }
    }
    let (words, trace) = best.expect("at least one start");
    BsaResult {
        labeling: BitLabeling::from_word_of_point(words).expect("swaps keep a permutation"),
        cost: *trace.last().unwrap(),
        trace,
        n0_ref,
    }
}

/// True when no transposition lowers the cost by more than the acceptance
/// threshold.
pub fn is_swap_optimal(labeling: &BitLabeling, c: &JointConstellation, n0_ref: f64) -> bool {
    let w = pair_weights(c, n0_ref);
    let words = labeling.words();
    let cost = cost_from_weights(words, &w);
    (0..words.len()).all(|a| {
        (a + 1..words.len()).all(|b| swap_delta(words, &w, a, b) >= accept_threshold(cost))
    })
}
