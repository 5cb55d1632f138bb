//! Literal prediction-tree transcription and exhaustive critical-filter
//! search, shared by the oracle tests and the acceptance suite.

use cnnlens_core::filter_tree::{masked_cosine, FilterSet, StopReason, TIE_TOLERANCE};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Node of the transcription: filters as 1-based flags, like the pseudocode.
#[derive(Clone)]
struct Node {
    vector: Vec<f64>,
    filters: Vec<bool>,
}

fn cos(u: &[f64], v: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for i in 0..u.len() {
        dot += u[i] * v[i];
        uu += u[i] * u[i];
        vv += v[i] * v[i];
    }
    if uu == 0.0 || vv == 0.0 {
        0.0
    } else {
        (dot / (uu * vv).sqrt()).clamp(-1.0, 1.0)
    }
}

/// `v ⊙ 1^{mask}` with filter `f` occupying entries `(f-1)·l²..f·l²`.
fn apply_mask(v: &[f64], mask: &[bool], l2: usize) -> Vec<f64> {
    (0..v.len())
        .map(|i| if mask[i / l2 + 1] { v[i] } else { 0.0 })
        .collect()
}

pub fn tied_or_less(x: f64, y: f64) -> bool {
    !(x < y - TIE_TOLERANCE * y.abs().max(1.0))
}

/// Returns per merge `(a, b, s, cos, F)` with 0-based filter index, plus the
/// children of R and the stop reason.
#[allow(clippy::type_complexity)]
pub fn oracle(
    maps: &[Vec<f64>],
    d: usize,
    l2: usize,
) -> (
    Vec<(usize, usize, usize, f64, Option<usize>)>,
    Vec<usize>,
    StopReason,
) {
    let mut nodes: Vec<Node> = maps
        .iter()
        .map(|m| Node {
            vector: m.clone(),
            filters: (0..=d).map(|f| f >= 1).collect(),
        })
        .collect();
    let mut r: Vec<usize> = (0..maps.len()).collect();
    let mut log = Vec::new();
    let size = |n: &Node| n.filters.iter().filter(|&&b| b).count();
    loop {
        if r.len() < 2 {
            return (log, r, StopReason::SingleChild);
        }
        if !r.iter().any(|&p| size(&nodes[p]) > 1) {
            return (log, r, StopReason::NoMultiFilterChild);
        }
        let mut shared = false;
        for i in 0..r.len() {
            for j in i + 1..r.len() {
                for f in 1..=d {
                    shared |= nodes[r[i]].filters[f] && nodes[r[j]].filters[f];
                }
            }
        }
        if !shared {
            return (log, r, StopReason::EmptyIntersections);
        }
        // (u, v) ← argmin ½(1 − cos(u, v)) over children of R
        let mut u = r[0];
        let mut v = r[1];
        let mut best = 0.5 * (1.0 - cos(&nodes[u].vector, &nodes[v].vector));
        for i in 0..r.len() {
            for j in i + 1..r.len() {
                let w = 0.5 * (1.0 - cos(&nodes[r[i]].vector, &nodes[r[j]].vector));
                if !tied_or_less(w, best) {
                    u = r[i];
                    v = r[j];
                    best = w;
                }
            }
        }
        // s = mean of u, v
        let vector: Vec<f64> = (0..nodes[u].vector.len())
            .map(|i| (nodes[u].vector[i] + nodes[v].vector[i]) / 2.0)
            .collect();
        // F ← argmin over the intersection of cos(without F) / cos(full)
        let full = cos(
            &apply_mask(&nodes[u].vector, &nodes[u].filters, l2),
            &apply_mask(&nodes[v].vector, &nodes[v].filters, l2),
        );
        let mut critical: Option<(usize, f64)> = None;
        for f in 1..=d {
            if !(nodes[u].filters[f] && nodes[v].filters[f]) {
                continue;
            }
            let mut mu = nodes[u].filters.clone();
            let mut mv = nodes[v].filters.clone();
            mu[f] = false;
            mv[f] = false;
            let without = cos(
                &apply_mask(&nodes[u].vector, &mu, l2),
                &apply_mask(&nodes[v].vector, &mv, l2),
            );
            let ratio = if full == 0.0 { without } else { without / full };
            match critical {
                Some((_, b)) if tied_or_less(ratio, b) => {}
                _ => critical = Some((f, ratio)),
            }
        }
        // s.filters = (u.filters ∩ v.filters) \ {F}
        let mut filters: Vec<bool> = (0..=d)
            .map(|f| f >= 1 && nodes[u].filters[f] && nodes[v].filters[f])
            .collect();
        if let Some((f, _)) = critical {
            filters[f] = false;
        }
        let s = nodes.len();
        let c = cos(&nodes[u].vector, &nodes[v].vector);
        nodes.push(Node { vector, filters });
        r.retain(|&p| p != u && p != v);
        r.push(s);
        log.push((u, v, s, c, critical.map(|(f, _)| f - 1)));
    }
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, usize, usize) {
    let c = rng.random_range(2..=6);
    let d = rng.random_range(2..=4);
    let l: usize = rng.random_range(1..=2);
    let l2 = l * l;
    let mut maps: Vec<Vec<f64>> = Vec::new();
    for _ in 0..c {
        // Small integers (with zeros and repeats) make cosine ties common.
        if !maps.is_empty() && rng.random_bool(0.2) {
            let i = rng.random_range(0..maps.len());
            maps.push(maps[i].clone());
        } else {
            maps.push((0..d * l2).map(|_| rng.random_range(0..4) as f64).collect());
        }
    }
    (maps, d, l2)
}

pub fn exhaustive_critical(
    u: &[f64],
    v: &[f64],
    fu: &FilterSet,
    fv: &FilterSet,
    l2: usize,
) -> Option<usize> {
    let full = masked_cosine(u, v, fu, fv, l2).unwrap();
    let candidates: Vec<(usize, f64)> = fu
        .intersection(fv)
        .map(|&f| {
            let (mut a, mut b) = (fu.clone(), fv.clone());
            a.remove(&f);
            b.remove(&f);
            let w = masked_cosine(u, v, &a, &b, l2).unwrap();
            (f, if full == 0.0 { w } else { w / full })
        })
        .collect();
    let min = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    candidates
        .iter()
        .find(|c| tied_or_less(min, c.1))
        .map(|c| c.0)
}
