use super::{CategoryGraph, HierarchyTree};
use crate::data::csv::{fmt_f64, to_string};

pub(crate) fn quote(id: &str) -> String {
    format!("\"{}\"", id.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Directed DOT: leaves, then supernodes in merge order, then parent → child
/// edges labelled with the merge weight.
pub fn hierarchy_dot(tree: &HierarchyTree) -> String {
    let mut out = String::from("digraph hierarchy {\n");
    for leaf in &tree.leaves {
        out += &format!("  {} [shape=box];\n", quote(leaf));
    }
    for m in &tree.merges {
        out += &format!("  {} [shape=ellipse];\n", quote(&m.supernode));
    }
    for m in &tree.merges {
        let w = fmt_f64(m.weight, 4);
        for child in [&m.a, &m.b] {
            out += &format!(
                "  {} -> {} [label=\"{w}\"];\n",
                quote(&m.supernode),
                quote(child)
            );
        }
    }
    out + "}\n"
}

/// Undirected DOT of a spanning-tree edge list.
pub fn mst_dot(nodes: &[String], edges: &[(String, String, f64)]) -> String {
    let mut out = String::from("graph mst {\n");
    for n in nodes {
        out += &format!("  {};\n", quote(n));
    }
    for (a, b, w) in edges {
        out += &format!(
            "  {} -- {} [label=\"{}\"];\n",
            quote(a),
            quote(b),
            fmt_f64(*w, 4)
        );
    }
    out + "}\n"
}

/// Full symmetric matrix with a leading `category` column; the diagonal is 0.
pub fn distance_matrix_csv(graph: &CategoryGraph) -> String {
    let nodes = graph.nodes();
    let mut header = vec!["category"];
    header.extend(nodes.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = nodes
        .iter()
        .map(|a| {
            let mut row = vec![a.clone()];
            row.extend(nodes.iter().map(|b| {
                if a == b {
                    fmt_f64(0.0, 6)
                } else {
                    graph
                        .weight(a, b)
                        .map_or_else(String::new, |w| fmt_f64(w, 6))
                }
            }));
            row
        })
        .collect();
    to_string(&header, &rows)
}

pub fn merge_log_csv(tree: &HierarchyTree) -> String {
    let rows: Vec<Vec<String>> = tree
        .merges
        .iter()
        .enumerate()
        .map(|(i, m)| {
            vec![
                (i + 1).to_string(),
                m.a.clone(),
                m.b.clone(),
                m.supernode.clone(),
                fmt_f64(m.weight, 6),
            ]
        })
        .collect();
    to_string(&["step", "a", "b", "supernode", "weight"], &rows)
}
