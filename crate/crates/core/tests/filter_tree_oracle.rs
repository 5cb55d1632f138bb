use cnnlens_core::filter_tree::{critical_filter, masked_cosine, PredictionTree};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[path = "support/filter_tree.rs"]
mod support;

use support::{exhaustive_critical, oracle, random_instance};

#[test]
fn prediction_tree_matches_step_by_step_transcription() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..25 {
        let (maps, d, l2) = random_instance(&mut rng);
        let named: Vec<(String, Vec<f64>)> = maps
            .iter()
            .enumerate()
            .map(|(i, m)| (format!("i{i}"), m.clone()))
            .collect();
        let tree = PredictionTree::from_maps("layer4", named, d).unwrap();
        let (log, roots, stop) = oracle(&maps, d, l2);
        assert_eq!(tree.merges.len(), log.len(), "case {case}: {maps:?}");
        for (m, o) in tree.merges.iter().zip(&log) {
            assert_eq!(
                (m.a, m.b, m.supernode, m.critical_filter),
                (o.0, o.1, o.2, o.4),
                "case {case}: {maps:?}"
            );
            assert!((m.cosine - o.3).abs() < 1e-12);
            let (a, b) = (&tree.nodes[m.a], &tree.nodes[m.b]);
            assert_eq!(
                m.critical_filter,
                exhaustive_critical(&a.vector, &b.vector, &a.filters, &b.filters, l2)
            );
            assert_eq!(
                m.critical_filter,
                critical_filter(&a.vector, &b.vector, &a.filters, &b.filters, l2).unwrap()
            );
        }
        assert_eq!(tree.root_children, roots);
        assert_eq!(tree.stop_reason, stop);
    }
}

fn six_image_fixture() -> Vec<(String, Vec<f64>)> {
    // Two loose groups over d = 4, l = 1, each image dominated by one or two filters.
    [
        [9.0, 1.0, 0.0, 0.5],
        [8.0, 2.0, 0.5, 0.0],
        [1.0, 9.0, 0.0, 1.0],
        [0.5, 8.0, 1.5, 0.0],
        [0.0, 0.5, 9.0, 3.0],
        [0.5, 0.0, 2.0, 9.0],
    ]
    .iter()
    .enumerate()
    .map(|(i, v)| (format!("fx{i}"), v.to_vec()))
    .collect()
}

#[test]
fn crafted_six_image_tree_matches_transcription() {
    let named = six_image_fixture();
    let maps: Vec<Vec<f64>> = named.iter().map(|(_, m)| m.clone()).collect();
    let tree = PredictionTree::from_maps("layer4", named, 4).unwrap();
    let (log, roots, stop) = oracle(&maps, 4, 1);
    let got: Vec<(usize, usize, usize, Option<usize>)> = tree
        .merges
        .iter()
        .map(|m| (m.a, m.b, m.supernode, m.critical_filter))
        .collect();
    let want: Vec<(usize, usize, usize, Option<usize>)> =
        log.iter().map(|o| (o.0, o.1, o.2, o.4)).collect();
    assert_eq!(got, want);
    assert_eq!(tree.root_children, roots);
    assert_eq!(tree.stop_reason, stop);
    assert_eq!((tree.merges[0].a, tree.merges[0].b), (0, 1));
}

/// Root-to-leaf chain of node ids ending at `leaf`.
fn chain_to(tree: &PredictionTree, leaf: usize) -> Vec<usize> {
    let parent = |n: usize| {
        tree.nodes
            .iter()
            .find(|p| p.children.is_some_and(|(a, b)| a == n || b == n))
            .map(|p| p.id)
    };
    let mut chain = vec![leaf];
    while let Some(p) = parent(*chain.last().unwrap()) {
        chain.push(p);
    }
    chain.reverse();
    chain
}

#[test]
fn leaf_query_reaches_its_own_leaf_when_nearest_everywhere() {
    let named = six_image_fixture();
    let tree = PredictionTree::from_maps("layer4", named.clone(), 4).unwrap();
    let score = |node: usize, map: &[f64]| {
        let n = &tree.nodes[node];
        masked_cosine(&n.vector, map, &n.filters, &n.filters, 1).unwrap()
    };
    let mut nearest_everywhere = 0;
    for (leaf, (_, map)) in named.iter().enumerate() {
        let chain = chain_to(&tree, leaf);
        let mut options = vec![tree.root_children.clone()];
        for &n in &chain[..chain.len() - 1] {
            let (a, b) = tree.nodes[n].children.unwrap();
            options.push(vec![a, b]);
        }
        let wins = chain.iter().zip(&options).all(|(&pick, opts)| {
            opts.iter()
                .all(|&o| o == pick || score(o, map) < score(pick, map))
        });
        let path: Vec<usize> = tree
            .query_map(map)
            .unwrap()
            .iter()
            .map(|s| s.node)
            .collect();
        if wins {
            nearest_everywhere += 1;
            assert_eq!(path, chain);
        }
    }
    assert!(nearest_everywhere >= 1);
}
