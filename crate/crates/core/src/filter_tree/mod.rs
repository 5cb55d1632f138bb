//! Filter-wise prediction tree of one category over one layer.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attribution::top_k_activating;
use crate::data::csv::{fmt_f64, to_string};
use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::hier::cosine_distance;
use crate::model::{batch_of, LayerAddress, Model, EVAL_BATCH};

/// Filters are 0-based channel indices.
pub type FilterSet = BTreeSet<usize>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNode {
    pub id: usize,
    /// Flattened `[d, h, w]` feature map.
    pub vector: Vec<f64>,
    pub filters: FilterSet,
    pub children: Option<(usize, usize)>,
    pub critical_filter: Option<usize>,
    pub source_id: Option<String>,
    /// Cosine between the two children at merge time.
    pub merge_cosine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeMerge {
    pub a: usize,
    pub b: usize,
    pub supernode: usize,
    pub cosine: f64,
    pub critical_filter: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// No child of the root has more than one filter left.
    NoMultiFilterChild,
    /// Fewer than two children remain under the root.
    SingleChild,
    /// Every pair of root children has disjoint filter sets.
    EmptyIntersections,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::NoMultiFilterChild => "no-multi-filter-child",
            StopReason::SingleChild => "single-child",
            StopReason::EmptyIntersections => "empty-intersections",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTree {
    pub layer: String,
    pub filter_count: usize,
    /// Spatial size `h·w` of one filter's block.
    pub block: usize,
    /// Leaves first (ids `0..c`), then supernodes in merge order.
    pub nodes: Vec<FeatureNode>,
    /// Children of the virtual root, ascending by id.
    pub root_children: Vec<usize>,
    pub merges: Vec<TreeMerge>,
    pub stop_reason: StopReason,
}

/// Scores closer than this (relative) count as tied, so rounding noise in
/// mathematically equal cosines cannot override the index tie-break.
pub const TIE_TOLERANCE: f64 = 1e-12;

fn beats(candidate: f64, incumbent: f64) -> bool {
    candidate < incumbent - TIE_TOLERANCE * incumbent.abs().max(1.0)
}

fn masked(v: &[f64], mask: &FilterSet, block: usize) -> Vec<f64> {
    v.chunks(block)
        .enumerate()
        .flat_map(|(f, chunk)| {
            chunk
                .iter()
                .map(move |&x| if mask.contains(&f) { x } else { 0.0 })
        })
        .collect()
}

fn cosine(u: &[f64], v: &[f64]) -> f64 {
    1.0 - 2.0 * cosine_distance(u, v).expect("equal lengths")
}

/// Cosine after zeroing every `block`-sized filter slice outside each mask;
/// 0 when either masked vector is zero.
pub fn masked_cosine(
    u: &[f64],
    v: &[f64],
    mask_u: &FilterSet,
    mask_v: &FilterSet,
    block: usize,
) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::dim("masked_cosine", "length", u.len(), v.len()));
    }
    if block == 0 || !u.len().is_multiple_of(block) {
        return Err(Error::dim("masked_cosine", "block", block, u.len()));
    }
    let (mu, mv) = (masked(u, mask_u, block), masked(v, mask_v, block));
    let dot: f64 = mu.iter().zip(&mv).map(|(a, b)| a * b).sum();
    let nu2: f64 = mu.iter().map(|a| a * a).sum();
    let nv2: f64 = mv.iter().map(|b| b * b).sum();
    Ok(if nu2 == 0.0 || nv2 == 0.0 {
        0.0
    } else {
        dot / (nu2 * nv2).sqrt()
    })
}

/// The shared filter whose removal shrinks the masked cosine the most,
/// relative to the cosine with both full masks. Falls back to the bare
/// masked cosine when the full one is 0. `None` for disjoint filter sets.
pub fn critical_filter(
    u: &[f64],
    v: &[f64],
    filters_u: &FilterSet,
    filters_v: &FilterSet,
    block: usize,
) -> Result<Option<usize>> {
    let full = masked_cosine(u, v, filters_u, filters_v, block)?;
    let mut best: Option<(f64, usize)> = None;
    for &f in filters_u.intersection(filters_v) {
        let mut mu = filters_u.clone();
        let mut mv = filters_v.clone();
        mu.remove(&f);
        mv.remove(&f);
        let without = masked_cosine(u, v, &mu, &mv, block)?;
        let score = if full == 0.0 { without } else { without / full };
        if best.is_none_or(|(b, _)| beats(score, b)) {
            best = Some((score, f));
        }
    }
    Ok(best.map(|(_, f)| f))
}

impl PredictionTree {
    /// Builds the tree from per-image `[d, h, w]` maps flattened in that order.
    pub fn from_maps(
        layer: &str,
        maps: Vec<(String, Vec<f64>)>,
        filter_count: usize,
    ) -> Result<Self> {
        if maps.len() < 2 {
            return Err(Error::Usage(format!(
                "a prediction tree needs at least 2 images, got {}",
                maps.len()
            )));
        }
        if filter_count < 2 {
            return Err(Error::Usage(format!(
                "layer `{layer}` needs at least 2 filters, has {filter_count}"
            )));
        }
        let len = maps[0].1.len();
        if len == 0 || !len.is_multiple_of(filter_count) {
            return Err(Error::dim(
                "prediction tree",
                "map length",
                filter_count,
                len,
            ));
        }
        if let Some((id, m)) = maps.iter().find(|(_, m)| m.len() != len) {
            return Err(Error::Usage(format!(
                "feature map of `{id}` has length {} instead of {len}",
                m.len()
            )));
        }
        let block = len / filter_count;
        let all: FilterSet = (0..filter_count).collect();
        let mut nodes: Vec<FeatureNode> = maps
            .into_iter()
            .enumerate()
            .map(|(id, (source, vector))| FeatureNode {
                id,
                vector,
                filters: all.clone(),
                children: None,
                critical_filter: None,
                source_id: Some(source),
                merge_cosine: None,
            })
            .collect();
        let mut roots: Vec<usize> = (0..nodes.len()).collect();
        let mut merges = Vec::new();

        let stop_reason = loop {
            if roots.len() < 2 {
                break StopReason::SingleChild;
            }
            if !roots.iter().any(|&r| nodes[r].filters.len() > 1) {
                break StopReason::NoMultiFilterChild;
            }
            let mut any_shared = false;
            let mut best: Option<(f64, usize, usize)> = None;
            for (i, &a) in roots.iter().enumerate() {
                for &b in &roots[i + 1..] {
                    any_shared |= !nodes[a].filters.is_disjoint(&nodes[b].filters);
                    let d = cosine_distance(&nodes[a].vector, &nodes[b].vector)?;
                    if best.is_none_or(|(bd, _, _)| beats(d, bd)) {
                        best = Some((d, a, b));
                    }
                }
            }
            if !any_shared {
                break StopReason::EmptyIntersections;
            }
            let (_, a, b) = best.expect("at least one pair");
            let (u, v) = (&nodes[a], &nodes[b]);
            let cos = cosine(&u.vector, &v.vector);
            let critical = critical_filter(&u.vector, &v.vector, &u.filters, &v.filters, block)?;
            let mut filters: FilterSet = u.filters.intersection(&v.filters).copied().collect();
            if let Some(f) = critical {
                filters.remove(&f);
            }
            let id = nodes.len();
            let vector = u
                .vector
                .iter()
                .zip(&v.vector)
                .map(|(x, y)| 0.5 * (x + y))
                .collect();
            nodes.push(FeatureNode {
                id,
                vector,
                filters,
                children: Some((a, b)),
                critical_filter: critical,
                source_id: None,
                merge_cosine: Some(cos),
            });
            roots.retain(|&r| r != a && r != b);
            roots.push(id);
            merges.push(TreeMerge {
                a,
                b,
                supernode: id,
                cosine: cos,
                critical_filter: critical,
            });
        };
        Ok(Self {
            layer: layer.to_string(),
            filter_count,
            block,
            nodes,
            root_children: roots,
            merges,
            stop_reason,
        })
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.len() - self.merges.len()
    }

    /// Greedy descent from the root towards the child most similar to `map`
    /// under that child's filter mask; ties go to the first child.
    pub fn query_map(&self, map: &[f64]) -> Result<Vec<PathStep>> {
        let pick = |candidates: &[usize]| -> Result<usize> {
            let mut best: Option<(f64, usize)> = None;
            for &c in candidates {
                let node = &self.nodes[c];
                let cos =
                    masked_cosine(&node.vector, map, &node.filters, &node.filters, self.block)?;
                if best.is_none_or(|(b, _)| beats(-cos, -b)) {
                    best = Some((cos, c));
                }
            }
            Ok(best.expect("non-empty candidates").1)
        };
        let mut path = Vec::new();
        let mut current = pick(&self.root_children)?;
        loop {
            let node = &self.nodes[current];
            let activation = node.critical_filter.map(|f| {
                let block = &map[f * self.block..(f + 1) * self.block];
                block.iter().sum::<f64>() / self.block as f64
            });
            path.push(PathStep {
                node: current,
                critical_filter: node.critical_filter,
                activation,
            });
            match node.children {
                Some((a, b)) => current = pick(&[a, b])?,
                None => return Ok(path),
            }
        }
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph prediction_tree {\n  \"R\" [shape=point];\n");
        for n in &self.nodes {
            let mut label = match &n.source_id {
                Some(s) => format!("n{} {}", n.id, s),
                None => format!("n{}", n.id),
            };
            label += &format!("\\nfilters={}", n.filters.len());
            if let Some(f) = n.critical_filter {
                label += &format!("\\ncritical={f}");
            }
            if let Some(c) = n.merge_cosine {
                label += &format!("\\ncos={}", fmt_f64(c, 4));
            }
            let shape = if n.children.is_some() {
                "ellipse"
            } else {
                "box"
            };
            out += &format!(
                "  \"n{}\" [shape={shape}, label=\"{}\"];\n",
                n.id,
                label.replace('"', "\\\"")
            );
        }
        for &r in &self.root_children {
            out += &format!("  \"R\" -> \"n{r}\";\n");
        }
        for n in &self.nodes {
            if let Some((a, b)) = n.children {
                out += &format!(
                    "  \"n{}\" -> \"n{a}\";\n  \"n{}\" -> \"n{b}\";\n",
                    n.id, n.id
                );
            }
        }
        out + "}\n"
    }

    /// One row per merge, then an `end` row carrying the stop reason.
    pub fn merge_log_csv(&self) -> String {
        let opt = |f: Option<usize>| f.map_or_else(String::new, |f| f.to_string());
        let mut rows: Vec<Vec<String>> = self
            .merges
            .iter()
            .enumerate()
            .map(|(i, m)| {
                vec![
                    (i + 1).to_string(),
                    format!("n{}", m.a),
                    format!("n{}", m.b),
                    format!("n{}", m.supernode),
                    fmt_f64(m.cosine, 6),
                    opt(m.critical_filter),
                    String::new(),
                ]
            })
            .collect();
        let mut end = vec![String::new(); 7];
        end[0] = "end".into();
        end[6] = self.stop_reason.to_string();
        rows.push(end);
        to_string(
            &[
                "step",
                "a",
                "b",
                "supernode",
                "cosine",
                "critical_filter",
                "note",
            ],
            &rows,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub node: usize,
    pub critical_filter: Option<usize>,
    /// Spatial mean of the query's map on the critical filter.
    pub activation: Option<f64>,
}

/// Renders a query path as `node critical activation` lines.
pub fn path_report(path: &[PathStep]) -> String {
    path.iter()
        .map(|s| {
            format!(
                "n{} {} {}\n",
                s.node,
                s.critical_filter.map_or("-".to_string(), |f| f.to_string()),
                s.activation.map_or("-".to_string(), |a| fmt_f64(a, 6))
            )
        })
        .collect()
}

/// Flattened `layer` feature maps of every image, keyed by source id.
pub fn feature_maps(
    model: &Model,
    images: &[LabeledImage],
    layer: &str,
) -> Result<Vec<(String, Vec<f64>)>> {
    model.layer_channels(layer)?;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_BATCH) {
        let refs: Vec<&LabeledImage> = chunk.iter().collect();
        let (_, acts) = model.forward_with_activations(&batch_of(&refs)?)?;
        let a = &acts[layer];
        let per = a.numel() / chunk.len();
        out.extend(
            chunk
                .iter()
                .zip(a.data().chunks_exact(per))
                .map(|(img, m)| (img.source_id.clone(), m.to_vec())),
        );
    }
    Ok(out)
}

pub fn build_prediction_tree(
    model: &Model,
    images: &[LabeledImage],
    layer: &str,
) -> Result<PredictionTree> {
    let d = model.layer_channels(layer)?;
    if images.len() < 2 {
        return Err(Error::Usage(format!(
            "a prediction tree needs at least 2 images, got {}",
            images.len()
        )));
    }
    PredictionTree::from_maps(layer, feature_maps(model, images, layer)?, d)
}

pub fn query_path(
    tree: &PredictionTree,
    model: &Model,
    image: &LabeledImage,
) -> Result<Vec<PathStep>> {
    let map = feature_maps(model, std::slice::from_ref(image), &tree.layer)?
        .remove(0)
        .1;
    if map.len() != tree.filter_count * tree.block {
        return Err(Error::dim(
            "query_path",
            "map length",
            tree.filter_count * tree.block,
            map.len(),
        ));
    }
    tree.query_map(&map)
}

/// Top-`k` activating source ids of each internal node's critical filter.
pub fn annotate_tree(
    tree: &PredictionTree,
    model: &Model,
    dataset: &[LabeledImage],
    k: usize,
) -> Result<BTreeMap<usize, Vec<(String, f64)>>> {
    let mut by_filter: BTreeMap<usize, Vec<(String, f64)>> = BTreeMap::new();
    let mut out = BTreeMap::new();
    for n in &tree.nodes {
        if let Some(f) = n.critical_filter {
            if let std::collections::btree_map::Entry::Vacant(e) = by_filter.entry(f) {
                let address = LayerAddress::Filter {
                    layer: tree.layer.clone(),
                    channel: f,
                };
                e.insert(top_k_activating(model, dataset, &address, k)?);
            }
            out.insert(n.id, by_filter[&f].clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
