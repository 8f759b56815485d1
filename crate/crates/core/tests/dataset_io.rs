use lgrpool::diff::Matrix;
use lgrpool::graph::synthetic::{random_graph, toy_dataset};
use lgrpool::graph::{parse_tu_dataset, split_indices, write_tu_dataset, FeatureLayout, GraphDataset, SplitSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn assert_same(a: &GraphDataset, b: &GraphDataset) {
    assert_eq!(a.len(), b.len());
    assert_eq!(a.num_classes, b.num_classes);
    assert_eq!(a.feature_dim, b.feature_dim);
    for (g, h) in a.graphs.iter().zip(&b.graphs) {
        assert_eq!(g.num_nodes(), h.num_nodes());
        assert_eq!(g.edges(), h.edges());
        assert_eq!(g.features(), h.features());
        assert_eq!(g.label(), h.label());
    }
}

fn attribute_dataset(seed: u64, graphs: usize, d: usize) -> GraphDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gs = (0..graphs)
        .map(|i| random_graph(&mut rng, 1 + i % 7, 0.4, d, i % 3))
        .collect();
    GraphDataset::new(
        "ATTR",
        gs,
        3,
        FeatureLayout {
            node_label_values: vec![],
            num_attributes: d,
            class_values: vec![-1, 1, 7],
        },
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn node_label_datasets_round_trip(seed in 0u64..1000, graphs in 2usize..30) {
        let ds = toy_dataset(graphs, seed);
        let dir = tempfile::tempdir().unwrap();
        write_tu_dataset(&ds, dir.path()).unwrap();
        let back = parse_tu_dataset(dir.path(), "TOY").unwrap();
        assert_same(&ds, &back);
    }

    #[test]
    fn attribute_datasets_round_trip(seed in 0u64..1000, graphs in 3usize..20, d in 1usize..5) {
        let ds = attribute_dataset(seed, graphs, d);
        let dir = tempfile::tempdir().unwrap();
        write_tu_dataset(&ds, dir.path()).unwrap();
        let back = parse_tu_dataset(dir.path(), "ATTR").unwrap();
        assert_same(&ds, &back);
        prop_assert_eq!(back.layout.class_values, vec![-1, 1, 7]);
    }

    #[test]
    fn splits_partition_and_cover_classes(seed in 0u64..500, graphs in 20usize..120) {
        let ds = toy_dataset(graphs, seed);
        let idx = split_indices(&ds, &SplitSpec::new(seed)).unwrap();
        let mut all: Vec<usize> = idx.train.iter().chain(&idx.val).chain(&idx.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..graphs).collect::<Vec<_>>());
        let classes: std::collections::BTreeSet<usize> = idx.train.iter().map(|&i| ds.graphs[i].label()).collect();
        prop_assert_eq!(classes.len(), 2);
        prop_assert_eq!(split_indices(&ds, &SplitSpec::new(seed)).unwrap(), idx);
    }
}

#[test]
fn missing_directory_is_named() {
    let err = parse_tu_dataset(std::path::Path::new("/no/such/MUTAG"), "MUTAG").unwrap_err();
    assert!(err.to_string().contains("/no/such/MUTAG"), "{err}");
}

#[test]
fn isolated_nodes_survive_round_trip() {
    let g = lgrpool::graph::Graph::new(3, [], Matrix::filled(3, 1, 1.0), 0).unwrap();
    let ds = GraphDataset::new(
        "ISO",
        vec![g.clone(), g],
        1,
        FeatureLayout {
            node_label_values: vec![],
            num_attributes: 1,
            class_values: vec![0],
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_tu_dataset(&ds, dir.path()).unwrap();
    assert_same(&ds, &parse_tu_dataset(dir.path(), "ISO").unwrap());
}
