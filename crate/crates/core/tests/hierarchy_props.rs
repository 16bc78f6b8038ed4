use std::collections::VecDeque;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safeseg::hierarchy::NodeId;
use safeseg::oracle::{generate_hierarchy, GenParams};
use safeseg::LabelHierarchy;

fn random_tree(seed: u64) -> LabelHierarchy {
    let params = GenParams {
        min_depth: 1,
        max_depth: 5,
        min_leaves: 2,
        max_leaves: 20,
        ..GenParams::default()
    };
    let config = generate_hierarchy(&mut ChaCha8Rng::seed_from_u64(seed), &params).unwrap();
    LabelHierarchy::from_config(&config).unwrap()
}

/// Edge count between two nodes by breadth-first search over the undirected tree.
fn bfs_edges(h: &LabelHierarchy, from: NodeId, to: NodeId) -> u32 {
    let mut dist = vec![u32::MAX; h.node_count()];
    let mut queue = VecDeque::from([from]);
    dist[from.0] = 0;
    while let Some(node) = queue.pop_front() {
        if node == to {
            return dist[node.0];
        }
        let neighbours = h.parent(node).into_iter().chain(h.children(node));
        for next in neighbours {
            if dist[next.0] == u32::MAX {
                dist[next.0] = dist[node.0] + 1;
                queue.push_back(next);
            }
        }
    }
    unreachable!("tree is connected")
}

#[test]
fn distance_matrix_matches_bfs_on_random_trees() {
    for seed in 0..100 {
        let h = random_tree(seed);
        let matrix = h.distance_matrix();
        for c in h.class_ids() {
            for s in h.class_ids() {
                let bfs = bfs_edges(&h, h.leaf_node(c), h.leaf_node(s));
                assert_eq!(
                    matrix[c.index()][s.index()].edges(),
                    bfs,
                    "seed {seed}, {c:?} {s:?}"
                );
                assert_eq!(matrix[c.index()][s.index()].value(), f64::from(bfs) / 2.0);
            }
        }
    }
}

#[test]
fn bundled_matrix_matches_bfs() {
    let h = LabelHierarchy::iddaw();
    for c in h.class_ids() {
        for s in h.class_ids() {
            assert_eq!(
                h.tree_distance(c, s).unwrap().edges(),
                bfs_edges(&h, h.leaf_node(c), h.leaf_node(s))
            );
        }
    }
}

proptest! {
    #[test]
    fn tree_metric(seed in any::<u64>()) {
        let h = random_tree(seed);
        let n = f64::from(h.depth());
        let td = |a, b| h.tree_distance(a, b).unwrap().value();
        for c in h.class_ids() {
            prop_assert_eq!(td(c, c), 0.0);
            for s in h.class_ids() {
                prop_assert_eq!(td(c, s), td(s, c));
                if c != s {
                    prop_assert!((1.0..=n).contains(&td(c, s)));
                    if h.parent(h.leaf_node(c)) == h.parent(h.leaf_node(s)) {
                        prop_assert_eq!(td(c, s), 1.0);
                    }
                }
                for t in h.class_ids() {
                    prop_assert!(td(c, s) <= td(c, t) + td(t, s));
                }
            }
        }
    }

    #[test]
    fn config_round_trip(seed in any::<u64>()) {
        let h = random_tree(seed);
        let again = LabelHierarchy::from_json(&h.to_json()).unwrap();
        prop_assert_eq!(&again, &h);
        prop_assert_eq!(again.to_json(), h.to_json());
    }
}
