use locgclstm::graph::{
    gcn_forward, location_support, normalized_support, AdjacencyOrientation, GcnLayerParams, LocationMask,
    NormalizationMode, RoadGraph,
};
use locgclstm::numerics::{seeded_rng, Tensor};
use locgclstm::Error;
use proptest::prelude::*;

fn graph_strategy(max_n: usize) -> impl Strategy<Value = RoadGraph> {
    (1..=max_n).prop_flat_map(|n| {
        prop::collection::vec(prop::bool::weighted(0.3), n * n).prop_map(move |bits| {
            let rows: Vec<Vec<u8>> = (0..n)
                .map(|i| (0..n).map(|j| u8::from(i != j && bits[i * n + j])).collect())
                .collect();
            RoadGraph::from_matrix(&rows).unwrap()
        })
    })
}

fn mask_for(n: usize, seed: u64) -> LocationMask {
    LocationMask {
        weights: Tensor::uniform(&[n, n], -2.0, 2.0, &mut seeded_rng(seed)),
    }
}

proptest! {
    #[test]
    fn dynamic_support_is_row_stochastic(g in graph_strategy(20), seed in any::<u64>()) {
        let n = g.node_count();
        let s = location_support(&g, &mask_for(n, seed), NormalizationMode::Dynamic).unwrap();
        for i in 0..n {
            let sum: f64 = s.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12, "row {} sums to {}", i, sum);
            for j in 0..n {
                prop_assert!(s.get(i, j) >= 0.0);
                if i != j && !g.feeds(j, i) {
                    prop_assert_eq!(s.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn support_ignores_mask_signs(g in graph_strategy(12), seed in any::<u64>(), flips in any::<u64>()) {
        let n = g.node_count();
        let mask = mask_for(n, seed);
        let mut flipped = mask.clone();
        for (k, w) in flipped.weights.data_mut().iter_mut().enumerate() {
            if (flips >> (k % 64)) & 1 == 1 {
                *w = -*w;
            }
        }
        for mode in [NormalizationMode::Dynamic, NormalizationMode::Static] {
            let a = location_support(&g, &mask, mode).unwrap();
            let b = location_support(&g, &flipped, mode).unwrap();
            prop_assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn ones_mask_reduces_to_classical_support(g in graph_strategy(15)) {
        let n = g.node_count();
        let loc = location_support(&g, &LocationMask::ones(n), NormalizationMode::Dynamic).unwrap();
        let classic = normalized_support(&g);
        for (a, b) in loc.data().iter().zip(classic.data()) {
            prop_assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn static_support_divides_by_structural_degree(g in graph_strategy(10), seed in any::<u64>()) {
        let n = g.node_count();
        let mask = mask_for(n, seed);
        let s = location_support(&g, &mask, NormalizationMode::Static).unwrap();
        let ae = g.with_self_loops();
        for i in 0..n {
            let deg: f64 = ae.row(i).iter().sum();
            for j in 0..n {
                let expect = mask.weights.get(i, j).abs() * ae.get(i, j) / deg;
                prop_assert!((s.get(i, j) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gcn_output_only_depends_on_upstream_nodes(
        g in graph_strategy(8),
        steps in 1usize..3,
        seed in any::<u64>(),
        target_pick in any::<usize>(),
        other_pick in any::<usize>(),
    ) {
        let n = g.node_count();
        let target = target_pick % n;
        let other = other_pick % n;
        let reach = g.upstream_within(target, steps);
        prop_assume!(!reach[other]);
        let mut rng = seeded_rng(seed);
        let s = location_support(&g, &LocationMask::random(n, &mut rng), NormalizationMode::Dynamic).unwrap();
        let params = GcnLayerParams { weight: Tensor::uniform(&[3, 3], -1.0, 1.0, &mut rng), steps };
        let x = Tensor::uniform(&[n, 3], -1.0, 1.0, &mut rng);
        let mut x2 = x.clone();
        for f in 0..3 {
            x2.set(other, f, x.get(other, f) + 10.0);
        }
        let a = gcn_forward(&x, &s, &params).unwrap();
        let b = gcn_forward(&x2, &s, &params).unwrap();
        prop_assert_eq!(a.row(target), b.row(target));
    }
}

#[test]
fn zero_mask_row_is_degenerate_in_dynamic_mode() {
    let g = RoadGraph::from_influences(3, &[(1, 0)]).unwrap();
    let mut mask = LocationMask::ones(3);
    mask.weights.set(0, 0, 0.0);
    mask.weights.set(0, 1, 0.0);
    match location_support(&g, &mask, NormalizationMode::Dynamic) {
        Err(Error::DegenerateRow { node, .. }) => assert_eq!(node, 0),
        other => panic!("expected a degenerate row, got {other:?}"),
    }
    assert!(location_support(&g, &mask, NormalizationMode::Static).is_ok());
}

#[test]
fn figure_style_mask_weights_upstream_pair() {
    // Node 0 fed by 2 and 3 with mask weights 2 and 1; self weight 1.
    let g = RoadGraph::from_influences(4, &[(2, 0), (3, 0)]).unwrap();
    let mut mask = LocationMask::ones(4);
    mask.weights.set(0, 2, -2.0);
    let s = location_support(&g, &mask, NormalizationMode::Dynamic).unwrap();
    assert_eq!(s.row(0), &[0.25, 0.0, 0.5, 0.25]);
    assert_eq!(s.row(1), &[0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn orientation_transposes_on_ingest() {
    let out = RoadGraph::parse_csv("src,dst\n2,0\n", "t", 3, AdjacencyOrientation::Out).unwrap();
    assert!(out.feeds(2, 0) && !out.feeds(0, 2));
    let inn = RoadGraph::parse_csv("src,dst\n2,0\n", "t", 3, AdjacencyOrientation::In).unwrap();
    assert!(inn.feeds(0, 2) && !inn.feeds(2, 0));
}

#[test]
fn malformed_adjacency_is_rejected() {
    assert!(RoadGraph::from_matrix(&[vec![0, 2], vec![0, 0]]).is_err());
    assert!(RoadGraph::from_matrix(&[vec![1, 0], vec![0, 0]]).is_err());
    assert!(RoadGraph::from_matrix(&[vec![0, 1]]).is_err());
    assert!(RoadGraph::from_influences(2, &[(0, 5)]).is_err());
}
