//! Category hierarchy from feature-space distances between class means.

mod emit;

use std::collections::{BTreeMap, BTreeSet};

pub use emit::{distance_matrix_csv, hierarchy_dot, merge_log_csv, mst_dot};

use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::model::{batch_of, Model, EVAL_BATCH};

/// Mean vectorized feature map of one category.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentativeVector {
    pub category: String,
    pub vector: Vec<f64>,
    pub image_count: usize,
}

/// Element-wise mean of equally long vectors.
pub fn mean_vector<'a>(vectors: impl IntoIterator<Item = &'a [f64]>) -> Option<Vec<f64>> {
    let mut it = vectors.into_iter();
    let mut acc = it.next()?.to_vec();
    let mut n = 1usize;
    for v in it {
        assert_eq!(v.len(), acc.len(), "mean_vector over unequal lengths");
        acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        n += 1;
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Some(acc)
}

/// One representative vector per entry of `categories` (label `i` is
/// `categories[i]`), from `layer`'s flattened activations.
pub fn representative_vectors(
    model: &Model,
    images: &[LabeledImage],
    layer: &str,
    categories: &[String],
) -> Result<Vec<RepresentativeVector>> {
    model.layer_channels(layer)?;
    let mut sums: Vec<Option<Vec<f64>>> = vec![None; categories.len()];
    let mut counts = vec![0usize; categories.len()];
    if let Some(bad) = images.iter().find(|i| i.label >= categories.len()) {
        return Err(Error::Usage(format!(
            "image {} has label {} but only {} categories are named",
            bad.source_id,
            bad.label,
            categories.len()
        )));
    }
    for chunk in images.chunks(EVAL_BATCH) {
        let refs: Vec<&LabeledImage> = chunk.iter().collect();
        let (_, acts) = model.forward_with_activations(&batch_of(&refs)?)?;
        let a = &acts[layer];
        let per = a.numel() / chunk.len();
        for (img, v) in chunk.iter().zip(a.data().chunks_exact(per)) {
            let slot = sums[img.label].get_or_insert_with(|| vec![0.0; per]);
            slot.iter_mut().zip(v).for_each(|(s, x)| *s += x);
            counts[img.label] += 1;
        }
    }
    categories
        .iter()
        .enumerate()
        .map(|(label, name)| match sums[label].take() {
            Some(sum) => Ok(RepresentativeVector {
                category: name.clone(),
                vector: sum.into_iter().map(|s| s / counts[label] as f64).collect(),
                image_count: counts[label],
            }),
            None => Err(Error::Usage(format!("category `{name}` has no images"))),
        })
        .collect()
}

/// `½(1 − cos(u, v))`, taking `cos = 0` when either vector is zero.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::dim("cosine_distance", "length", u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu2: f64 = u.iter().map(|a| a * a).sum();
    let nv2: f64 = v.iter().map(|b| b * b).sum();
    // sqrt of the product keeps cos(u, ±u) exactly ±1.
    let cos = if nu2 == 0.0 || nv2 == 0.0 {
        0.0
    } else {
        (dot / (nu2 * nv2).sqrt()).clamp(-1.0, 1.0)
    };
    Ok(0.5 * (1.0 - cos))
}

fn key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Weighted undirected graph; edge keys are ordered name pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryGraph {
    nodes: Vec<String>,
    edges: BTreeMap<(String, String), f64>,
}

impl CategoryGraph {
    /// The complete graph over `vectors` with cosine-distance weights.
    pub fn from_vectors(vectors: &[RepresentativeVector]) -> Result<Self> {
        let mut edges = BTreeMap::new();
        for (i, a) in vectors.iter().enumerate() {
            for b in &vectors[i + 1..] {
                edges.insert(
                    key(&a.category, &b.category),
                    cosine_distance(&a.vector, &b.vector)?,
                );
            }
        }
        Self::new(vectors.iter().map(|v| v.category.clone()).collect(), edges)
    }

    pub fn new(nodes: Vec<String>, edges: BTreeMap<(String, String), f64>) -> Result<Self> {
        let set: BTreeSet<&String> = nodes.iter().collect();
        if set.len() != nodes.len() {
            return Err(Error::Usage("category names must be distinct".into()));
        }
        let mut normalized = BTreeMap::new();
        for ((a, b), w) in edges {
            if a == b {
                return Err(Error::Usage(format!("self-edge on `{a}`")));
            }
            if !set.contains(&a) || !set.contains(&b) {
                return Err(Error::Usage(format!(
                    "edge ({a}, {b}) names an unknown category"
                )));
            }
            if !w.is_finite() {
                return Err(Error::Usage(format!(
                    "edge ({a}, {b}) has non-finite weight {w}"
                )));
            }
            normalized.insert(key(&a, &b), w);
        }
        Ok(Self {
            nodes,
            edges: normalized,
        })
    }

    /// Builds the complete graph from a symmetric distance matrix.
    pub fn from_matrix(names: &[String], matrix: &[Vec<f64>]) -> Result<Self> {
        let n = names.len();
        if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
            return Err(Error::dim(
                "distance matrix",
                "columns",
                n,
                matrix.first().map_or(0, Vec::len),
            ));
        }
        let mut edges = BTreeMap::new();
        for i in 0..n {
            for j in i + 1..n {
                if (matrix[i][j] - matrix[j][i]).abs() > 1e-12 {
                    return Err(Error::Usage(format!(
                        "distance matrix is not symmetric at ({}, {})",
                        names[i], names[j]
                    )));
                }
                edges.insert(key(&names[i], &names[j]), matrix[i][j]);
            }
        }
        Self::new(names.to_vec(), edges)
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeMap<(String, String), f64> {
        &self.edges
    }

    pub fn weight(&self, a: &str, b: &str) -> Option<f64> {
        self.edges.get(&key(a, b)).copied()
    }
}

/// One greedy merge: `a < b` by name.
#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub a: String,
    pub b: String,
    pub supernode: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyTree {
    pub leaves: Vec<String>,
    /// Supernode → its two children.
    pub children: BTreeMap<String, (String, String)>,
    pub merges: Vec<Merge>,
    pub root: String,
}

impl HierarchyTree {
    /// Index of the merge that first joins `x` and `y` under one supernode.
    pub fn join_step(&self, x: &str, y: &str) -> Option<usize> {
        fn root<'a>(parent: &BTreeMap<&'a str, &'a str>, mut n: &'a str) -> &'a str {
            while let Some(p) = parent.get(n) {
                n = p;
            }
            n
        }
        let mut parent: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, m) in self.merges.iter().enumerate() {
            parent.insert(&m.a, &m.supernode);
            parent.insert(&m.b, &m.supernode);
            if root(&parent, x) == root(&parent, y) {
                return Some(i);
            }
        }
        None
    }
}

/// Name of the `n`-th supernode (1-based).
pub fn supernode_name(n: usize) -> String {
    format!("S{n}")
}

/// Greedy agglomeration: repeatedly cut the lightest edge between parentless
/// nodes (ties by name pair), hang both ends under a new supernode, and
/// re-link every other neighbour to it with the mean of its edges to the two
/// ends.
pub fn build_hierarchy(graph: &CategoryGraph) -> Result<HierarchyTree> {
    let n = graph.nodes.len();
    if n < 2 {
        return Err(Error::Usage(format!(
            "a hierarchy needs at least 2 categories, got {n}"
        )));
    }
    let reserved: BTreeSet<String> = (1..n).map(supernode_name).collect();
    if let Some(clash) = graph.nodes.iter().find(|c| reserved.contains(*c)) {
        return Err(Error::Usage(format!(
            "category name `{clash}` collides with a supernode name"
        )));
    }
    let mut edges = graph.edges.clone();
    let mut parentless: BTreeSet<String> = graph.nodes.iter().cloned().collect();
    let mut children = BTreeMap::new();
    let mut merges = Vec::with_capacity(n - 1);

    while parentless.len() > 1 {
        let ((u, v), w) = edges
            .iter()
            .min_by(|(ka, wa), (kb, wb)| wa.total_cmp(wb).then_with(|| ka.cmp(kb)))
            .map(|(k, w)| (k.clone(), *w))
            .ok_or_else(|| {
                Error::Usage("graph is disconnected; no edge joins the remaining nodes".into())
            })?;
        let s = supernode_name(merges.len() + 1);
        edges.remove(&(u.clone(), v.clone()));
        parentless.remove(&u);
        parentless.remove(&v);
        for other in &parentless {
            let links: Vec<f64> = [&u, &v]
                .iter()
                .filter_map(|m| edges.remove(&key(other, m)))
                .collect();
            if !links.is_empty() {
                edges.insert(
                    key(other, &s),
                    links.iter().sum::<f64>() / links.len() as f64,
                );
            }
        }
        parentless.insert(s.clone());
        children.insert(s.clone(), (u.clone(), v.clone()));
        merges.push(Merge {
            a: u,
            b: v,
            supernode: s,
            weight: w,
        });
    }
    let root = parentless.into_iter().next().expect("one node remains");
    Ok(HierarchyTree {
        leaves: graph.nodes.clone(),
        children,
        merges,
        root,
    })
}

/// Kruskal's algorithm with edges ordered by `(weight, name pair)`.
pub fn minimum_spanning_tree(graph: &CategoryGraph) -> Result<Vec<(String, String, f64)>> {
    let index: BTreeMap<&str, usize> = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut parent: Vec<usize> = (0..graph.nodes.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut sorted: Vec<(&(String, String), &f64)> = graph.edges.iter().collect();
    sorted.sort_by(|(ka, wa), (kb, wb)| wa.total_cmp(wb).then_with(|| ka.cmp(kb)));
    let mut tree = Vec::with_capacity(graph.nodes.len().saturating_sub(1));
    for ((a, b), w) in sorted {
        let (ra, rb) = (
            find(&mut parent, index[a.as_str()]),
            find(&mut parent, index[b.as_str()]),
        );
        if ra != rb {
            parent[ra] = rb;
            tree.push((a.clone(), b.clone(), *w));
        }
    }
    if tree.len() + 1 != graph.nodes.len() {
        return Err(Error::Usage(
            "graph is disconnected; no spanning tree exists".into(),
        ));
    }
    Ok(tree)
}
