//! Coalescent genealogies: storage, the n-coalescent prior, sampling and
//! tree serialization.
//!
//! A genealogy over `n` leaves is an ordered list of `n - 1` merge events,
//! most recent first. Leaves are nodes `0..n`; event `i` (0-based) creates
//! node `n + i`. Each event stores the duration since the previous event, so
//! the `i`-th merge happens at time `-(delta_0 + ... + delta_i)`.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{choose2, fmt_num};

/// One coalescent event: `left` and `right` merge `delta` time units before
/// the previous event.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub left: usize,
    pub right: usize,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Genealogy {
    n: usize,
    events: Vec<Event>,
}

/// Canonical key for the ordered merge sequence of a genealogy, ignoring durations.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RankedTopologyId(pub String);

impl fmt::Display for RankedTopologyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Genealogy {
    /// Validates and builds a genealogy. Zero durations are accepted with a warning.
    pub fn new(n: usize, events: Vec<Event>) -> Result<Self> {
        if n < 2 {
            return Err(Error::Structural(format!("need at least 2 leaves, got {n}")));
        }
        if events.len() != n - 1 {
            return Err(Error::Structural(format!(
                "{} events for {n} leaves (expected {})",
                events.len(),
                n - 1
            )));
        }
        let mut used = vec![false; 2 * n - 1];
        for (i, e) in events.iter().enumerate() {
            let limit = n + i;
            for child in [e.left, e.right] {
                if child >= limit {
                    return Err(Error::Structural(format!(
                        "event {i} refers to node {child}, which does not exist yet"
                    )));
                }
                if used[child] {
                    return Err(Error::Structural(format!("node {child} merged twice")));
                }
                used[child] = true;
            }
            if e.left == e.right {
                return Err(Error::Structural(format!("event {i} merges node {} with itself", e.left)));
            }
            if !(e.delta >= 0.0) || !e.delta.is_finite() {
                return Err(Error::Structural(format!(
                    "event {i} has invalid duration {}",
                    e.delta
                )));
            }
            if e.delta == 0.0 {
                log::warn!("event {i} has zero duration");
            }
        }
        Ok(Genealogy { n, events })
    }

    pub fn n_leaves(&self) -> usize {
        self.n
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn node_count(&self) -> usize {
        2 * self.n - 1
    }

    pub fn root(&self) -> usize {
        2 * self.n - 2
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        node < self.n
    }

    /// Children of an internal node.
    pub fn children(&self, node: usize) -> Option<(usize, usize)> {
        node.checked_sub(self.n)
            .and_then(|i| self.events.get(i))
            .map(|e| (e.left, e.right))
    }

    /// Merge times `t_1 > t_2 > ... > t_{n-1}`, all negative.
    pub fn merge_times(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.events
            .iter()
            .map(|e| {
                t -= e.delta;
                t
            })
            .collect()
    }

    /// Formation time of every node (leaves at 0).
    pub fn node_times(&self) -> Vec<f64> {
        let mut times = vec![0.0; self.n];
        times.extend(self.merge_times());
        times
    }

    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut p = vec![None; self.node_count()];
        for (i, e) in self.events.iter().enumerate() {
            p[e.left] = Some(self.n + i);
            p[e.right] = Some(self.n + i);
        }
        p
    }

    /// Leaves below each node, indexed by node.
    pub fn leaf_sets(&self) -> Vec<Vec<usize>> {
        let mut sets: Vec<Vec<usize>> = (0..self.n).map(|i| vec![i]).collect();
        for e in &self.events {
            let mut s = sets[e.left].clone();
            s.extend_from_slice(&sets[e.right]);
            s.sort_unstable();
            sets.push(s);
        }
        sets
    }

    /// `log p(pi) = -sum_i C(n-i+1, 2) delta_i`, accumulated in log space.
    pub fn log_prior(&self) -> f64 {
        self.events
            .iter()
            .enumerate()
            .map(|(i, e)| -choose2(self.n - i) * e.delta)
            .sum()
    }

    pub fn ranked_topology(&self) -> RankedTopologyId {
        let mut clade: Vec<(usize, String)> = (0..self.n).map(|i| (i, i.to_string())).collect();
        let mut keys = Vec::with_capacity(self.events.len());
        for e in &self.events {
            let (a, b) = (&clade[e.left], &clade[e.right]);
            let (first, second) = if a.0 <= b.0 { (a, b) } else { (b, a) };
            let s = format!("({},{})", first.1, second.1);
            keys.push(s.clone());
            clade.push((first.0, s));
        }
        RankedTopologyId(keys.join(";"))
    }

    /// Same tree with leaf `i` renamed to `perm[i]`.
    pub fn relabel_leaves(&self, perm: &[usize]) -> Result<Genealogy> {
        if perm.len() != self.n {
            return Err(Error::Argument("permutation length differs from leaf count".into()));
        }
        let map = |x: usize| if x < self.n { perm[x] } else { x };
        let events = self
            .events
            .iter()
            .map(|e| Event {
                left: map(e.left),
                right: map(e.right),
                delta: e.delta,
            })
            .collect();
        Genealogy::new(self.n, events)
    }

    /// Newick text with branch lengths in model time units.
    pub fn to_newick(&self, labels: &[String]) -> Result<String> {
        if labels.len() != self.n {
            return Err(Error::Argument(format!(
                "{} labels for {} leaves",
                labels.len(),
                self.n
            )));
        }
        let times = self.node_times();
        let mut out = String::new();
        self.write_node(self.root(), labels, &times, &mut out);
        out.push(';');
        Ok(out)
    }

    fn write_node(&self, node: usize, labels: &[String], times: &[f64], out: &mut String) {
        match self.children(node) {
            None => out.push_str(&labels[node]),
            Some((l, r)) => {
                out.push('(');
                for (k, child) in [l, r].into_iter().enumerate() {
                    if k == 1 {
                        out.push(',');
                    }
                    self.write_node(child, labels, times, out);
                    out.push(':');
                    out.push_str(&fmt_num(times[child] - times[node]));
                }
                out.push(')');
            }
        }
    }

    /// Parses an ultrametric binary Newick tree. Leaves are numbered in order of
    /// appearance; their labels are returned alongside the genealogy.
    pub fn from_newick(text: &str) -> Result<(Genealogy, Vec<String>)> {
        let mut p = NewickParser {
            s: text.trim().as_bytes(),
            pos: 0,
            labels: Vec::new(),
            internals: Vec::new(),
        };
        p.subtree()?;
        p.skip_ws();
        if p.peek() == Some(b':') {
            p.pos += 1;
            p.number()?;
        }
        p.expect(b';')?;
        let n = p.labels.len();
        if n < 2 {
            return Err(Error::Structural("newick tree needs at least two leaves".into()));
        }

        // internal nodes are recorded in post-order; order them by height
        let mut order: Vec<usize> = (0..p.internals.len()).collect();
        order.sort_by(|&a, &b| p.internals[a].height.total_cmp(&p.internals[b].height).then(a.cmp(&b)));
        let mut node_of = vec![0usize; p.internals.len()];
        for (rank, &idx) in order.iter().enumerate() {
            node_of[idx] = n + rank;
        }
        let resolve = |r: NodeRef| match r {
            NodeRef::Leaf(i) => i,
            NodeRef::Internal(j) => node_of[j],
        };
        let mut prev = 0.0;
        let mut events = Vec::with_capacity(n - 1);
        for &idx in &order {
            let node = &p.internals[idx];
            events.push(Event {
                left: resolve(node.left),
                right: resolve(node.right),
                delta: (node.height - prev).max(0.0),
            });
            prev = node.height;
        }
        Ok((Genealogy::new(n, events)?, p.labels))
    }

    /// One JSON object per line with fields `left`, `right`, `delta`.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&serde_json::to_string(e).expect("event serializes"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Genealogy> {
        let events: Vec<Event> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::Structural(e.to_string())))
            .collect::<Result<_>>()?;
        Genealogy::new(events.len() + 1, events)
    }
}

#[derive(Clone, Copy)]
enum NodeRef {
    Leaf(usize),
    Internal(usize),
}

struct ParsedInternal {
    left: NodeRef,
    right: NodeRef,
    height: f64,
}

struct NewickParser<'a> {
    s: &'a [u8],
    pos: usize,
    labels: Vec<String>,
    internals: Vec<ParsedInternal>,
}

impl NewickParser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Structural(format!(
                "newick: expected '{}' at byte {}",
                c as char, self.pos
            )))
        }
    }

    fn token(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len() && !b"(),:;".contains(&self.s[self.pos]) {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.s[start..self.pos]).trim().to_string()
    }

    fn number(&mut self) -> Result<f64> {
        let t = self.token();
        t.parse()
            .map_err(|_| Error::Structural(format!("newick: bad branch length '{t}'")))
    }

    /// Returns the node and its height above the leaves.
    fn subtree(&mut self) -> Result<(NodeRef, f64)> {
        if self.peek() == Some(b'(') {
            self.pos += 1;
            let left = self.child()?;
            self.expect(b',')?;
            let right = self.child()?;
            if self.peek() == Some(b',') {
                return Err(Error::Structural("newick: only binary trees are supported".into()));
            }
            self.expect(b')')?;
            let _internal_label = self.token();
            let height = 0.5 * ((left.1 + left.2) + (right.1 + right.2));
            self.internals.push(ParsedInternal {
                left: left.0,
                right: right.0,
                height,
            });
            Ok((NodeRef::Internal(self.internals.len() - 1), height))
        } else {
            let label = self.token();
            if label.is_empty() {
                return Err(Error::Structural(format!("newick: empty leaf label at byte {}", self.pos)));
            }
            self.labels.push(label);
            Ok((NodeRef::Leaf(self.labels.len() - 1), 0.0))
        }
    }

    /// A subtree followed by its mandatory branch length.
    fn child(&mut self) -> Result<(NodeRef, f64, f64)> {
        let (node, height) = self.subtree()?;
        self.expect(b':')?;
        let len = self.number()?;
        Ok((node, height, len))
    }
}

/// Draws a genealogy from the n-coalescent: `delta_i ~ Exp(C(m, 2))` with `m`
/// lineages remaining, and the merging pair uniform among all `C(m, 2)` pairs.
pub fn sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Genealogy> {
    if n < 2 {
        return Err(Error::Argument(format!("cannot sample a genealogy of {n} leaves")));
    }
    let mut active: Vec<usize> = (0..n).collect();
    let mut events = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let m = active.len();
        let exp = Exp::new(choose2(m)).expect("positive rate");
        let mut delta: f64 = exp.sample(rng);
        if delta <= 0.0 {
            delta = f64::MIN_POSITIVE;
        }
        let a = rng.random_range(0..m);
        let mut b = rng.random_range(0..m - 1);
        if b >= a {
            b += 1;
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (left, right) = (active[lo], active[hi]);
        active.swap_remove(hi);
        active.swap_remove(lo);
        active.push(n + i);
        events.push(Event {
            left: left.min(right),
            right: left.max(right),
            delta,
        });
    }
    Ok(Genealogy { n, events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::derive_rng;
    use std::collections::HashMap;

    fn ev(left: usize, right: usize, delta: f64) -> Event {
        Event { left, right, delta }
    }

    fn labels(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn log_prior_examples() {
        let g = Genealogy::new(2, vec![ev(0, 1, 0.5)]).unwrap();
        assert_eq!(g.log_prior(), -0.5);
        let g = Genealogy::new(4, vec![ev(0, 1, 0.1), ev(2, 3, 0.2), ev(4, 5, 0.3)]).unwrap();
        assert!((g.log_prior() - (-1.5)).abs() < 1e-15);
        let g = Genealogy::new(3, vec![ev(0, 1, 0.0), ev(2, 3, 0.0)]).unwrap();
        assert_eq!(g.log_prior(), 0.0);
    }

    #[test]
    fn rejects_malformed_trees() {
        assert!(Genealogy::new(1, vec![]).is_err());
        assert!(Genealogy::new(3, vec![ev(0, 1, 1.0)]).is_err());
        assert!(Genealogy::new(3, vec![ev(0, 1, 1.0), ev(0, 2, 1.0)]).is_err());
        assert!(Genealogy::new(3, vec![ev(0, 4, 1.0), ev(2, 3, 1.0)]).is_err());
        assert!(Genealogy::new(2, vec![ev(0, 1, -1.0)]).is_err());
        assert!(Genealogy::new(2, vec![ev(0, 1, f64::NAN)]).is_err());
    }

    #[test]
    fn times_are_cumulative_negative_durations() {
        let g = Genealogy::new(3, vec![ev(0, 1, 1.0), ev(2, 3, 0.5)]).unwrap();
        assert_eq!(g.merge_times(), vec![-1.0, -1.5]);
        assert_eq!(g.node_times(), vec![0.0, 0.0, 0.0, -1.0, -1.5]);
        assert_eq!(g.parents(), vec![Some(3), Some(3), Some(4), Some(4), None]);
    }

    #[test]
    fn newick_examples() {
        let g = Genealogy::new(2, vec![ev(0, 1, 1.0)]).unwrap();
        assert_eq!(g.to_newick(&labels(&["a", "b"])).unwrap(), "(a:1,b:1);");
        let g = Genealogy::new(3, vec![ev(0, 1, 1.0), ev(3, 2, 1.0)]).unwrap();
        assert_eq!(g.to_newick(&labels(&["a", "b", "c"])).unwrap(), "((a:1,b:1):1,c:2);");
        assert!(g.to_newick(&labels(&["a", "b"])).is_err());
    }

    #[test]
    fn newick_round_trip_preserves_tree() {
        let mut rng = derive_rng(3, &[]);
        for n in [2, 3, 5, 9, 17] {
            let g = sample(n, &mut rng).unwrap();
            let names: Vec<String> = (0..n).map(|i| format!("leaf{i}")).collect();
            let text = g.to_newick(&names).unwrap();
            let (back, back_labels) = Genealogy::from_newick(&text).unwrap();
            assert_eq!(back_labels.len(), n);
            let perm: Vec<usize> = back_labels.iter().map(|l| l[4..].parse().unwrap()).collect();
            let back = back.relabel_leaves(&perm).unwrap();
            assert_eq!(back.ranked_topology(), g.ranked_topology());
            for (a, b) in back.merge_times().iter().zip(g.merge_times()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn newick_rejects_polytomies() {
        assert!(Genealogy::from_newick("(a:1,b:1,c:1);").is_err());
        assert!(Genealogy::from_newick("(a,b);").is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let g = Genealogy::new(3, vec![ev(0, 1, 0.25), ev(2, 3, 1.5)]).unwrap();
        let text = g.to_jsonl();
        assert_eq!(text.lines().next().unwrap(), r#"{"left":0,"right":1,"delta":0.25}"#);
        assert_eq!(Genealogy::from_jsonl(&text).unwrap(), g);
    }

    #[test]
    fn ranked_topology_ignores_durations() {
        let g = Genealogy::new(2, vec![ev(0, 1, 1.0)]).unwrap();
        assert_eq!(g.ranked_topology().0, "(0,1)");
        let a = Genealogy::new(3, vec![ev(0, 1, 1.0), ev(3, 2, 1.0)]).unwrap();
        let b = Genealogy::new(3, vec![ev(1, 0, 0.1), ev(2, 3, 7.0)]).unwrap();
        assert_eq!(a.ranked_topology(), b.ranked_topology());
    }

    /// Enumerates all ranked merge sequences by brute force.
    fn all_sequences(active: Vec<usize>, next: usize, acc: &mut Vec<Event>, n: usize, out: &mut Vec<Genealogy>) {
        if active.len() == 1 {
            out.push(Genealogy::new(n, acc.clone()).unwrap());
            return;
        }
        for i in 0..active.len() {
            for j in i + 1..active.len() {
                let mut rest: Vec<usize> = active
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != i && k != j)
                    .map(|(_, &v)| v)
                    .collect();
                rest.push(next);
                acc.push(ev(active[i], active[j], 1.0));
                all_sequences(rest, next + 1, acc, n, out);
                acc.pop();
            }
        }
    }

    #[test]
    fn four_leaves_have_eighteen_ranked_topologies() {
        let mut out = Vec::new();
        all_sequences((0..4).collect(), 4, &mut Vec::new(), 4, &mut out);
        let keys: std::collections::HashSet<_> = out.iter().map(|g| g.ranked_topology()).collect();
        assert_eq!(out.len(), 18);
        assert_eq!(keys.len(), 18);
    }

    #[test]
    fn sampled_three_leaf_topologies_are_uniform() {
        let mut rng = derive_rng(11, &[]);
        let draws = 100_000;
        let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
        for _ in 0..draws {
            let g = sample(3, &mut rng).unwrap();
            let e = g.events()[0];
            *counts.entry((e.left, e.right)).or_default() += 1;
        }
        assert_eq!(counts.len(), 3);
        let p = 1.0 / 3.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (_, c) in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn sampled_first_duration_has_rate_six_for_four_leaves() {
        let mut rng = derive_rng(12, &[]);
        let draws = 100_000;
        let mut sum = 0.0;
        for _ in 0..draws {
            sum += sample(4, &mut rng).unwrap().events()[0].delta;
        }
        let mean = sum / draws as f64;
        let se = (1.0 / 6.0) / (draws as f64).sqrt();
        assert!((mean - 1.0 / 6.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn sample_requires_two_leaves() {
        let mut rng = derive_rng(0, &[]);
        assert!(matches!(sample(1, &mut rng), Err(Error::Argument(_))));
    }

    #[test]
    fn sampling_is_deterministic_given_seed() {
        let a = sample(10, &mut derive_rng(5, &[])).unwrap();
        let b = sample(10, &mut derive_rng(5, &[])).unwrap();
        assert_eq!(a, b);
    }
}
