//! Step-by-step hierarchy transcription and spanning-tree enumeration,
//! shared by the oracle tests and the acceptance suite.

use cnnlens_core::hier::HierarchyTree;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const NAMES: [&str; 8] = [
    "plane", "car", "bird", "cat", "deer", "dog", "frog", "horse",
];

/// Step-by-step transcription over an index-addressed adjacency matrix.
/// Returns the merges as `(child, child, supernode, weight)` by name.
pub fn oracle(names: &[String], w: &[Vec<f64>]) -> Vec<(String, String, String, f64)> {
    let n = names.len();
    let total = 2 * n - 1;
    let mut label: Vec<String> = names.to_vec();
    label.resize(total, String::new());
    let mut weight = vec![vec![None::<f64>; total]; total];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                weight[i][j] = Some(w[i][j]);
            }
        }
    }
    let mut has_parent = vec![false; total];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); total];
    let mut alive = n;
    let mut log = Vec::new();
    loop {
        let parentless = (0..alive).filter(|&i| !has_parent[i]).count();
        if parentless <= 1 {
            break;
        }
        // argmin over remaining weighted edges; ties on the sorted name pair
        let mut best: Option<(f64, String, String, usize, usize)> = None;
        for i in 0..alive {
            for j in 0..alive {
                if i == j {
                    continue;
                }
                let Some(x) = weight[i][j] else { continue };
                let (a, b) = if label[i] < label[j] { (i, j) } else { (j, i) };
                let cand = (x, label[a].clone(), label[b].clone(), a, b);
                let better = match &best {
                    None => true,
                    Some(cur) => {
                        cand.0 < cur.0 || (cand.0 == cur.0 && (&cand.1, &cand.2) < (&cur.1, &cur.2))
                    }
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        let (x, _, _, u, v) = best.expect("an edge remains");
        let s = alive;
        alive += 1;
        label[s] = format!("S{}", s - n + 1);
        has_parent[u] = true;
        has_parent[v] = true;
        children[s] = vec![u, v];
        weight[u][v] = None;
        weight[v][u] = None;
        let mut excluded = vec![u, v, s];
        excluded.extend(children[u].iter().copied());
        excluded.extend(children[v].iter().copied());
        for c in 0..alive {
            if excluded.contains(&c) {
                continue;
            }
            let mut sum = 0.0;
            let mut count = 0;
            for m in [u, v] {
                if let Some(y) = weight[c][m] {
                    sum += y;
                    count += 1;
                }
            }
            if count > 0 {
                weight[c][s] = Some(sum / count as f64);
                weight[s][c] = Some(sum / count as f64);
                for m in [u, v] {
                    weight[c][m] = None;
                    weight[m][c] = None;
                }
            }
        }
        log.push((label[u].clone(), label[v].clone(), label[s].clone(), x));
    }
    log
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<Vec<f64>>) {
    let n = rng.random_range(3..=8);
    let mut names: Vec<String> = NAMES.iter().map(|s| s.to_string()).collect();
    names.shuffle(rng);
    names.truncate(n);
    let mut w = vec![vec![0.0; n]; n];
    let mut used = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let x = loop {
                let x: f64 = rng.random();
                if !used.contains(&x) {
                    break x;
                }
            };
            used.push(x);
            w[i][j] = x;
            w[j][i] = x;
        }
    }
    (names, w)
}

pub fn as_log(tree: &HierarchyTree) -> Vec<(String, String, String, f64)> {
    tree.merges
        .iter()
        .map(|m| (m.a.clone(), m.b.clone(), m.supernode.clone(), m.weight))
        .collect()
}

/// Every labelled tree on `n` vertices, decoded from its Prüfer sequence.
pub fn all_spanning_trees(n: usize) -> Vec<Vec<(usize, usize)>> {
    if n == 2 {
        return vec![vec![(0, 1)]];
    }
    let count = n.pow((n - 2) as u32);
    (0..count)
        .map(|mut code| {
            let seq: Vec<usize> = (0..n - 2)
                .map(|_| {
                    let d = code % n;
                    code /= n;
                    d
                })
                .collect();
            let mut degree = vec![1; n];
            seq.iter().for_each(|&s| degree[s] += 1);
            let mut edges = Vec::with_capacity(n - 1);
            for &s in &seq {
                let leaf = (0..n).find(|&i| degree[i] == 1).unwrap();
                edges.push((leaf, s));
                degree[leaf] -= 1;
                degree[s] -= 1;
            }
            let rest: Vec<usize> = (0..n).filter(|&i| degree[i] == 1).collect();
            edges.push((rest[0], rest[1]));
            edges
        })
        .collect()
}
