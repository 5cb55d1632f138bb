use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::actmax::{evaluate_objective, Objective};
use crate::data::DatasetStats;
use crate::model::{InputShape, ModelSpec, StageSpec, StemSpec};
use crate::rng::substream;
use crate::tensor::Tensor;

fn set(items: &[usize]) -> FilterSet {
    items.iter().copied().collect()
}

fn maps(vectors: &[&[f64]]) -> Vec<(String, Vec<f64>)> {
    vectors
        .iter()
        .enumerate()
        .map(|(i, v)| (format!("img{i}"), v.to_vec()))
        .collect()
}

fn small_model() -> Model {
    let spec = ModelSpec {
        input_shape: InputShape {
            channels: 3,
            height: 8,
            width: 8,
        },
        stem: StemSpec {
            channels: 4,
            stride: 1,
        },
        stages: vec![
            StageSpec {
                channels: 4,
                blocks: 1,
                stride: 1,
            },
            StageSpec {
                channels: 4,
                blocks: 1,
                stride: 2,
            },
            StageSpec {
                channels: 6,
                blocks: 1,
                stride: 2,
            },
            StageSpec {
                channels: 6,
                blocks: 1,
                stride: 2,
            },
        ],
        num_classes: 2,
    };
    Model::new(spec, DatasetStats::neutral(), 9).unwrap()
}

fn images(n: usize, seed: u64) -> Vec<LabeledImage> {
    let mut rng = substream(seed, "filter-tree-images");
    (0..n)
        .map(|i| LabeledImage {
            pixels: Tensor::from_fn(&[3, 8, 8], |_| rng.random::<f64>()),
            label: 0,
            source_id: format!("img:{i}"),
        })
        .collect()
}

#[test]
fn masked_cosine_examples() {
    let full = set(&[0, 1]);
    assert_eq!(
        masked_cosine(&[2.0, 1.0], &[2.0, 1.0], &full, &full, 1).unwrap(),
        1.0
    );
    assert_eq!(
        masked_cosine(&[2.0, 1.0], &[1.0, 2.0], &set(&[]), &set(&[]), 1).unwrap(),
        0.0
    );
    assert!(
        (masked_cosine(&[2.0, 1.0], &[1.0, 2.0], &full, &full, 1).unwrap() - 0.8).abs() < 1e-15
    );
    assert!(masked_cosine(&[1.0], &[1.0, 2.0], &full, &full, 1).is_err());
}

#[test]
fn masks_zero_whole_blocks() {
    // d = 2, l = 2: block 0 is the first four entries.
    let u = [1.0, 1.0, 1.0, 1.0, 5.0, 0.0, 0.0, 0.0];
    let v = [1.0, 1.0, 1.0, 1.0, 0.0, 5.0, 0.0, 0.0];
    assert_eq!(
        masked_cosine(&u, &v, &set(&[0]), &set(&[0]), 4).unwrap(),
        1.0
    );
    assert!(masked_cosine(&u, &v, &set(&[0, 1]), &set(&[0, 1]), 4).unwrap() < 1.0);
}

#[test]
fn critical_filter_examples() {
    let full = set(&[0, 1]);
    assert_eq!(
        critical_filter(&[2.0, 1.0], &[1.0, 2.0], &full, &full, 1).unwrap(),
        Some(0)
    );
    assert_eq!(
        critical_filter(&[1.0, 0.0], &[1.0, 0.0], &full, &full, 1).unwrap(),
        Some(0)
    );
    assert_eq!(
        critical_filter(&[1.0, 0.0], &[1.0, 0.0], &set(&[0]), &set(&[1]), 1).unwrap(),
        None
    );
}

#[test]
fn zero_full_cosine_falls_back_to_the_numerator() {
    // Orthogonal under full masks; dropping filter 1 leaves (1,0,1)·(0,0,-1) = -1.
    let u = [1.0, 1.0, 1.0];
    let v = [0.0, 1.0, -1.0];
    let full = set(&[0, 1, 2]);
    assert_eq!(masked_cosine(&u, &v, &full, &full, 1).unwrap(), 0.0);
    assert_eq!(critical_filter(&u, &v, &full, &full, 1).unwrap(), Some(1));
}

#[test]
fn critical_filter_matches_exhaustive_ratios_for_three_filters() {
    let mut rng = substream(3, "critical-d3");
    let full = set(&[0, 1, 2]);
    for _ in 0..200 {
        let u: Vec<f64> = (0..3).map(|_| rng.random::<f64>() - 0.2).collect();
        let v: Vec<f64> = (0..3).map(|_| rng.random::<f64>() - 0.2).collect();
        let c = masked_cosine(&u, &v, &full, &full, 1).unwrap();
        let ratios: Vec<f64> = (0..3)
            .map(|f| {
                let keep: FilterSet = (0..3).filter(|&g| g != f).collect();
                masked_cosine(&u, &v, &keep, &keep, 1).unwrap() / c
            })
            .collect();
        let expect = (0..3).fold(0, |b, f| {
            if ratios[f] < ratios[b] - 1e-12 * ratios[b].abs().max(1.0) {
                f
            } else {
                b
            }
        });
        assert_eq!(
            critical_filter(&u, &v, &full, &full, 1).unwrap(),
            Some(expect)
        );
    }
}

#[test]
fn two_image_hand_trace() {
    let tree = PredictionTree::from_maps("layer4", maps(&[&[2.0, 1.0], &[1.0, 2.0]]), 2).unwrap();
    assert_eq!(tree.merges.len(), 1);
    let s = &tree.nodes[2];
    assert_eq!(s.vector, vec![1.5, 1.5]);
    assert_eq!(s.critical_filter, Some(0));
    assert_eq!(s.filters, set(&[1]));
    assert_eq!(tree.root_children, vec![2]);
    assert_eq!(tree.stop_reason, StopReason::SingleChild);
    assert!((tree.merges[0].cosine - 0.8).abs() < 1e-15);
}

#[test]
fn identical_maps_merge_the_first_pair() {
    let m: &[f64] = &[1.0, 2.0, 3.0, 4.0];
    let tree = PredictionTree::from_maps("layer4", maps(&[m, m, m, m]), 4).unwrap();
    assert_eq!((tree.merges[0].a, tree.merges[0].b), (0, 1));
}

#[test]
fn disjoint_filters_stop_the_loop() {
    // After merging 0 and 1 the supernode keeps {1}; image 2 keeps {0, 1}.
    // Whatever happens next, the loop must end without panicking.
    let tree =
        PredictionTree::from_maps("layer4", maps(&[&[1.0, 1.0], &[1.0, 1.0], &[0.0, 1.0]]), 2)
            .unwrap();
    assert!(tree.merges.len() <= 2);
    let log = tree.merge_log_csv();
    assert!(log.ends_with(&format!("end,,,,,,{}\n", tree.stop_reason)));
}

#[test]
fn empty_intersection_merge_has_no_critical_filter() {
    // d = 2: pairs (0,1) then (2,3) leave {1} and {1}; merging those gives {} after
    // removing the shared 1, and the last merge of {} with anything else is empty.
    let tree = PredictionTree::from_maps(
        "layer4",
        maps(&[
            &[2.0, 1.0],
            &[1.0, 2.0],
            &[2.0, 1.1],
            &[1.1, 2.0],
            &[5.0, 5.0],
        ]),
        2,
    )
    .unwrap();
    for m in &tree.merges {
        let n = &tree.nodes[m.supernode];
        let (a, b) = (&tree.nodes[m.a], &tree.nodes[m.b]);
        if a.filters.is_disjoint(&b.filters) {
            assert_eq!(n.critical_filter, None);
            assert!(n.filters.is_empty());
        }
    }
}

#[test]
fn bad_inputs_are_rejected() {
    assert!(PredictionTree::from_maps("l", maps(&[&[1.0, 2.0]]), 2).is_err());
    assert!(PredictionTree::from_maps("l", maps(&[&[1.0], &[2.0]]), 1).is_err());
    assert!(PredictionTree::from_maps("l", maps(&[&[1.0, 2.0], &[2.0]]), 2).is_err());
    assert!(
        PredictionTree::from_maps("l", maps(&[&[1.0, 2.0, 3.0], &[2.0, 1.0, 0.0]]), 2).is_err()
    );
}

#[test]
fn orthogonal_query_follows_first_children() {
    let tree = PredictionTree::from_maps(
        "layer4",
        maps(&[&[1.0, 0.0, 0.0], &[1.0, 0.1, 0.0], &[0.9, 0.0, 0.2]]),
        3,
    )
    .unwrap();
    let path = tree.query_map(&[0.0; 3]).unwrap();
    assert_eq!(path[0].node, tree.root_children[0]);
    for pair in path.windows(2) {
        let (a, _) = tree.nodes[pair[0].node].children.unwrap();
        assert_eq!(pair[1].node, a);
    }
    assert!(tree.nodes[path.last().unwrap().node].children.is_none());
}

#[test]
fn model_backed_tree_activation_matches_objective() {
    let model = small_model();
    let imgs = images(6, 0);
    let tree = build_prediction_tree(&model, &imgs, "layer3").unwrap();
    assert_eq!(tree.filter_count, 6);
    assert_eq!(tree.leaf_count(), 6);
    for img in &imgs {
        for step in query_path(&tree, &model, img).unwrap() {
            if let (Some(f), Some(a)) = (step.critical_filter, step.activation) {
                let obj = Objective::single(LayerAddress::Filter {
                    layer: "layer3".into(),
                    channel: f,
                });
                let direct = evaluate_objective(&model, &obj, &img.pixels).unwrap();
                assert!((a - direct).abs() < 1e-12);
            }
        }
    }
    let notes = annotate_tree(&tree, &model, &imgs, 1).unwrap();
    let internal: Vec<&FeatureNode> = tree
        .nodes
        .iter()
        .filter(|n| n.critical_filter.is_some())
        .collect();
    assert_eq!(notes.len(), internal.len());
    for n in internal {
        assert_eq!(notes[&n.id].len(), 1);
        let address = LayerAddress::Filter {
            layer: "layer3".into(),
            channel: n.critical_filter.unwrap(),
        };
        assert_eq!(
            notes[&n.id],
            top_k_activating(&model, &imgs, &address, 1).unwrap()
        );
    }
    assert!(build_prediction_tree(&model, &imgs[..1], "layer3").is_err());
    assert!(build_prediction_tree(&model, &imgs, "layer9").is_err());
}

#[test]
fn dot_and_report_render() {
    let tree = PredictionTree::from_maps("layer4", maps(&[&[2.0, 1.0], &[1.0, 2.0]]), 2).unwrap();
    let dot = tree.to_dot();
    assert!(dot.starts_with("digraph prediction_tree {"));
    assert!(dot.contains("critical=0"));
    assert!(dot.contains("cos=0.8000"));
    assert_eq!(dot.matches("->").count(), 3);
    let path = tree.query_map(&[2.0, 1.0]).unwrap();
    assert_eq!(path_report(&path), "n2 0 2.000000\nn0 - -\n");
}

fn random_maps(c: usize, d: usize, block: usize, seed: u64) -> Vec<(String, Vec<f64>)> {
    let mut rng = substream(seed, "filter-tree-maps");
    (0..c)
        .map(|i| {
            (
                format!("m{i}"),
                (0..d * block).map(|_| rng.random::<f64>()).collect(),
            )
        })
        .collect()
}

fn path_critical_filters_unique(tree: &PredictionTree, node: usize, seen: &mut Vec<usize>) -> bool {
    let n = &tree.nodes[node];
    if let Some(f) = n.critical_filter {
        if seen.contains(&f) {
            return false;
        }
        seen.push(f);
    }
    let ok = match n.children {
        Some((a, b)) => {
            path_critical_filters_unique(tree, a, seen)
                && path_critical_filters_unique(tree, b, seen)
        }
        None => true,
    };
    if n.critical_filter.is_some() {
        seen.pop();
    }
    ok
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tree_invariants(c in 2usize..8, d in 2usize..6, block in 1usize..5, seed in 0u64..1000) {
        let tree = PredictionTree::from_maps("l", random_maps(c, d, block, seed), d).unwrap();
        prop_assert!(tree.merges.len() < c);
        prop_assert_eq!(tree.root_children.len(), c - tree.merges.len());
        let mut covered: Vec<usize> = Vec::new();
        fn leaves(t: &PredictionTree, n: usize, out: &mut Vec<usize>) {
            match t.nodes[n].children {
                Some((a, b)) => { leaves(t, a, out); leaves(t, b, out); }
                None => out.push(n),
            }
        }
        for &r in &tree.root_children {
            leaves(&tree, r, &mut covered);
            prop_assert!(path_critical_filters_unique(&tree, r, &mut Vec::new()));
        }
        covered.sort();
        prop_assert_eq!(covered, (0..c).collect::<Vec<_>>());
        for m in &tree.merges {
            let (a, b, s) = (&tree.nodes[m.a], &tree.nodes[m.b], &tree.nodes[m.supernode]);
            if !a.filters.is_disjoint(&b.filters) {
                prop_assert!(s.filters.len() < a.filters.len().min(b.filters.len()));
            }
            for (i, x) in s.vector.iter().enumerate() {
                prop_assert!((x - 0.5 * (a.vector[i] + b.vector[i])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn merge_cosine_is_the_best_available(c in 3usize..7, d in 2usize..5, seed in 0u64..1000) {
        let tree = PredictionTree::from_maps("l", random_maps(c, d, 2, seed), d).unwrap();
        let mut roots: Vec<usize> = (0..c).collect();
        for m in &tree.merges {
            for (i, &a) in roots.iter().enumerate() {
                for &b in &roots[i + 1..] {
                    let cos = masked_cosine(&tree.nodes[a].vector, &tree.nodes[b].vector, &(0..d).collect(), &(0..d).collect(), 2).unwrap();
                    prop_assert!(cos <= m.cosine + 1e-12);
                }
            }
            roots.retain(|&r| r != m.a && r != m.b);
            roots.push(m.supernode);
        }
    }

    #[test]
    fn positive_scaling_keeps_the_tree(c in 2usize..7, d in 2usize..5, seed in 0u64..1000, k in 0.1f64..10.0) {
        let base = random_maps(c, d, 1, seed);
        let scaled: Vec<(String, Vec<f64>)> = base.iter().map(|(s, v)| (s.clone(), v.iter().map(|x| x * k).collect())).collect();
        let a = PredictionTree::from_maps("l", base, d).unwrap();
        let b = PredictionTree::from_maps("l", scaled, d).unwrap();
        let shape = |t: &PredictionTree| t.merges.iter().map(|m| (m.a, m.b, m.critical_filter)).collect::<Vec<_>>();
        prop_assert_eq!(shape(&a), shape(&b));
    }
}
