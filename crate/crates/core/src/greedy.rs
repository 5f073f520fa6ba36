//! Deterministic bottom-up tree construction by locally optimal merges.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::genealogy::{Event, Genealogy};
use crate::kernels::{self, KernelParams, SubtreeMessage};
use crate::util::choose2;

/// Duration substituted for optimal durations of zero so that merge times
/// stay strictly decreasing.
pub const MIN_DELTA: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GreedyVariant {
    MaxProb,
    MinDuration,
    Rate1,
}

impl std::str::FromStr for GreedyVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max-prob" | "maxprob" => Ok(GreedyVariant::MaxProb),
            "min-duration" | "minduration" => Ok(GreedyVariant::MinDuration),
            "rate1" | "rate-1" => Ok(GreedyVariant::Rate1),
            _ => Err(Error::Argument(format!("unknown greedy variant '{s}'"))),
        }
    }
}

impl std::fmt::Display for GreedyVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GreedyVariant::MaxProb => "max-prob",
            GreedyVariant::MinDuration => "min-duration",
            GreedyVariant::Rate1 => "rate1",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairScore {
    pub left: usize,
    pub right: usize,
    pub delta_opt: f64,
    /// `-rate * delta + log Z` at the duration actually used for the merge.
    pub local_log_term: f64,
}

#[derive(Clone, Debug)]
pub struct GreedyResult {
    pub genealogy: Genealogy,
    pub joint_log_prob: f64,
    /// Number of optimal-duration computations performed.
    pub pair_evaluations: usize,
}

pub fn greedy(data: &DataMatrix, params: &KernelParams, variant: GreedyVariant) -> Result<GreedyResult> {
    match variant {
        GreedyVariant::MaxProb | GreedyVariant::MinDuration => recompute_all(data, params, variant),
        GreedyVariant::Rate1 => rate1(data, params),
    }
}

pub fn greedy_max_prob(data: &DataMatrix, params: &KernelParams) -> Result<GreedyResult> {
    greedy(data, params, GreedyVariant::MaxProb)
}

pub fn greedy_min_duration(data: &DataMatrix, params: &KernelParams) -> Result<GreedyResult> {
    greedy(data, params, GreedyVariant::MinDuration)
}

pub fn greedy_rate1(data: &DataMatrix, params: &KernelParams) -> Result<GreedyResult> {
    greedy(data, params, GreedyVariant::Rate1)
}

fn leaf_messages(data: &DataMatrix, params: &KernelParams) -> Result<Vec<SubtreeMessage>> {
    if data.n_rows() < 2 {
        return Err(Error::Argument(format!("need at least 2 rows, got {}", data.n_rows())));
    }
    params.check_data(data)?;
    (0..data.n_rows())
        .map(|r| kernels::leaf_message(&data.row(r), params))
        .collect()
}

fn score_pair(
    msgs: &[SubtreeMessage],
    (left, right): (usize, usize),
    prev_time: f64,
    rate: f64,
    params: &KernelParams,
) -> Result<PairScore> {
    let delta_opt = kernels::optimal_delta(&msgs[left], &msgs[right], prev_time, rate, params)?;
    let delta = if delta_opt > 0.0 { delta_opt } else { MIN_DELTA };
    let log_z = kernels::merge_log_z(&msgs[left], &msgs[right], prev_time - delta, params)?;
    Ok(PairScore {
        left,
        right,
        delta_opt,
        local_log_term: -rate * delta + log_z,
    })
}

fn recompute_all(data: &DataMatrix, params: &KernelParams, variant: GreedyVariant) -> Result<GreedyResult> {
    let n = data.n_rows();
    let mut msgs = leaf_messages(data, params)?;
    let mut active: Vec<usize> = (0..n).collect();
    let mut events = Vec::with_capacity(n - 1);
    let mut joint = kernels::data_leaf_log_term(data, params);
    let mut t = 0.0;
    let mut evaluations = 0;
    for i in 0..n - 1 {
        let rate = choose2(n - i);
        let pairs: Vec<(usize, usize)> = active
            .iter()
            .enumerate()
            .flat_map(|(k, &a)| active[k + 1..].iter().map(move |&b| (a, b)))
            .collect();
        evaluations += pairs.len();
        let scores = pairs
            .par_iter()
            .map(|&p| score_pair(&msgs, p, t, rate, params))
            .collect::<Result<Vec<_>>>()?;
        // pairs are in lexicographic order, so keeping the first best breaks ties
        let mut best = scores[0];
        for s in &scores[1..] {
            let better = match variant {
                GreedyVariant::MaxProb => s.local_log_term > best.local_log_term,
                _ => s.delta_opt < best.delta_opt,
            };
            if better {
                best = *s;
            }
        }
        let delta = if best.delta_opt > 0.0 { best.delta_opt } else { MIN_DELTA };
        t -= delta;
        let merged = kernels::merge(&msgs[best.left], &msgs[best.right], t, params)?;
        joint += -rate * delta + merged.log_z;
        msgs.push(merged.message);
        active.retain(|&x| x != best.left && x != best.right);
        active.push(n + i);
        events.push(Event {
            left: best.left,
            right: best.right,
            delta,
        });
    }
    joint += kernels::root_log_term(msgs.last().expect("root"), params);
    Ok(GreedyResult {
        genealogy: Genealogy::new(n, events)?,
        joint_log_prob: joint,
        pair_evaluations: evaluations,
    })
}

/// Cached candidate: merge time at the rate-1 optimum.
#[derive(Clone, Copy, Debug)]
struct Candidate {
    time: f64,
    pair: (usize, usize),
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // max-heap: latest time first, then the smallest pair
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then_with(|| other.pair.cmp(&self.pair))
    }
}

fn rate1_candidate(msgs: &[SubtreeMessage], pair: (usize, usize), params: &KernelParams) -> Result<Candidate> {
    let (a, b) = (&msgs[pair.0], &msgs[pair.1]);
    let start = a.time.min(b.time);
    let delta = kernels::optimal_delta(a, b, start, 1.0, params)?;
    Ok(Candidate {
        time: start - delta,
        pair,
    })
}

fn rate1(data: &DataMatrix, params: &KernelParams) -> Result<GreedyResult> {
    let n = data.n_rows();
    let mut msgs = leaf_messages(data, params)?;
    let mut alive = vec![true; 2 * n - 1];
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let mut evaluations = pairs.len();
    let mut heap: BinaryHeap<Candidate> = pairs
        .par_iter()
        .map(|&p| rate1_candidate(&msgs, p, params))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .collect();
    let mut events = Vec::with_capacity(n - 1);
    let mut joint = kernels::data_leaf_log_term(data, params);
    let mut t = 0.0;
    for i in 0..n - 1 {
        let best = loop {
            let c = heap.pop().expect("a live pair remains");
            if alive[c.pair.0] && alive[c.pair.1] {
                break c;
            }
        };
        let (l, r) = best.pair;
        let mut delta = t - best.time.min(t);
        if !(delta > 0.0) {
            delta = MIN_DELTA;
        }
        t -= delta;
        let merged = kernels::merge(&msgs[l], &msgs[r], t, params)?;
        joint += -choose2(n - i) * delta + merged.log_z;
        msgs.push(merged.message);
        alive[l] = false;
        alive[r] = false;
        let node = n + i;
        events.push(Event { left: l, right: r, delta });
        if i + 1 < n - 1 {
            let others: Vec<usize> = (0..node).filter(|&x| alive[x]).collect();
            evaluations += others.len();
            let fresh = others
                .par_iter()
                .map(|&o| rate1_candidate(&msgs, (o, node), params))
                .collect::<Result<Vec<_>>>()?;
            heap.extend(fresh);
        }
    }
    joint += kernels::root_log_term(msgs.last().expect("root"), params);
    Ok(GreedyResult {
        genealogy: Genealogy::new(n, events)?,
        joint_log_prob: joint,
        pair_evaluations: evaluations,
    })
}
