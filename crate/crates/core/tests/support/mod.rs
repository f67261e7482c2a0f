//! Brute-force reference implementations shared by the oracle tests and the
//! acceptance runner.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use treewalk_core::graph::{parse_graph, DialogGraph};

/// Adjacency lists in authored order; node 0 is the start.
pub fn random_adjacency(rng: &mut ChaCha8Rng, cyclic: bool) -> Vec<Vec<usize>> {
    let n = rng.gen_range(2..=12);
    (0..n)
        .map(|i| {
            let mut succ: Vec<usize> = (0..n)
                .filter(|&j| j != i && rng.gen_bool(if j > i { 0.35 } else if cyclic { 0.1 } else { 0.0 }))
                .collect();
            if i == 0 && succ.is_empty() {
                succ.push(1);
            }
            succ.shuffle(rng);
            succ
        })
        .collect()
}

pub fn to_graph(adj: &[Vec<usize>]) -> DialogGraph {
    let nodes: Vec<_> = adj
        .iter()
        .enumerate()
        .map(|(i, succ)| {
            let ty = if i == 0 { "start" } else if succ.is_empty() { "information" } else { "question" };
            let answers: Vec<_> = succ
                .iter()
                .map(|j| json!({"id": format!("a{i}_{j}"), "intent_text": format!("to {j}"), "target": format!("v{j}")}))
                .collect();
            if ty == "information" {
                json!({"id": format!("v{i}"), "type": ty, "text": format!("node {i}")})
            } else {
                json!({"id": format!("v{i}"), "type": ty, "text": format!("node {i}"), "answers": answers})
            }
        })
        .collect();
    let doc = json!({"version": 1, "start": "v0", "nodes": nodes});
    parse_graph(doc.to_string().as_bytes()).unwrap()
}

pub fn reachable_avoiding(adj: &[Vec<usize>], from: usize, to: usize, blocked: &[bool]) -> bool {
    let mut seen = blocked.to_vec();
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(u) = stack.pop() {
        if u == to {
            return true;
        }
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    false
}

/// `seq` can be extended to a simple path ending at `goal`.
pub fn valid_for(adj: &[Vec<usize>], seq: &[usize], goal: usize) -> bool {
    let last = *seq.last().unwrap();
    if last == goal {
        return true;
    }
    if seq.contains(&goal) {
        return false;
    }
    let mut blocked = vec![false; adj.len()];
    for &u in &seq[..seq.len() - 1] {
        blocked[u] = true;
    }
    reachable_avoiding(adj, last, goal, &blocked)
}

/// Every simple walk from `origin` in preorder; keeps the first longest one
/// valid for all goals.
pub fn oracle_prefix(adj: &[Vec<usize>], origin: usize, goals: &[usize]) -> Option<Vec<usize>> {
    fn walk(adj: &[Vec<usize>], seq: &mut Vec<usize>, goals: &[usize], best: &mut Option<Vec<usize>>) {
        if !goals.iter().all(|&g| valid_for(adj, seq, g)) {
            return;
        }
        if best.as_ref().is_none_or(|b| seq.len() > b.len()) {
            *best = Some(seq.clone());
        }
        for &v in &adj[*seq.last().unwrap()] {
            if !seq.contains(&v) {
                seq.push(v);
                walk(adj, seq, goals, best);
                seq.pop();
            }
        }
    }
    let mut best = None;
    walk(adj, &mut vec![origin], goals, &mut best);
    best
}

pub fn oracle_depth(adj: &[Vec<usize>]) -> usize {
    fn longest(adj: &[Vec<usize>], u: usize, on: &mut Vec<bool>) -> usize {
        on[u] = true;
        let mut best = 0;
        for &v in &adj[u] {
            if !on[v] {
                best = best.max(1 + longest(adj, v, on));
            }
        }
        on[u] = false;
        best
    }
    longest(adj, 0, &mut vec![false; adj.len()])
}

// Barnard, straight from the definition

pub fn pascal(n: usize) -> Vec<Vec<f64>> {
    let mut rows = vec![vec![1.0]];
    for i in 1..=n {
        let prev = &rows[i - 1];
        let mut row = vec![1.0; i + 1];
        for k in 1..i {
            row[k] = prev[k - 1] + prev[k];
        }
        rows.push(row);
    }
    rows
}

pub fn wald(xa: usize, na: usize, xb: usize, nb: usize) -> f64 {
    let (pa, pb) = (xa as f64 / na as f64, xb as f64 / nb as f64);
    let se = (pa * (1.0 - pa) / na as f64 + pb * (1.0 - pb) / nb as f64).sqrt();
    if se == 0.0 {
        if pb > pa {
            f64::INFINITY
        } else if pb < pa {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    } else {
        (pb - pa) / se
    }
}

pub fn barnard_oracle(xa: usize, na: usize, xb: usize, nb: usize, binom: &[Vec<f64>]) -> f64 {
    let t_obs = wald(xa, na, xb, nb);
    let mut region = Vec::new();
    for i in 0..=na {
        for j in 0..=nb {
            let t = wald(i, na, j, nb);
            let tie = t == t_obs || t.is_finite() && t_obs.is_finite() && (t - t_obs).abs() <= 1e-9 * (1.0 + t.abs().max(t_obs.abs()));
            if t > t_obs || tie {
                region.push((i, j));
            }
        }
    }
    let mut best: f64 = 0.0;
    for g in 0..=1000 {
        let p = g as f64 / 1000.0;
        let q = 1.0 - p;
        let prob: f64 = region
            .iter()
            .map(|&(i, j)| {
                binom[na][i] * p.powi(i as i32) * q.powi((na - i) as i32)
                    * binom[nb][j] * p.powi(j as i32) * q.powi((nb - j) as i32)
            })
            .sum();
        best = best.max(prob);
    }
    best.min(1.0)
}
