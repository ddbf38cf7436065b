mod common;

#[test]
fn connected_graph_counts() {
    // Labelled connected graphs on 1..=5 nodes: 1, 1, 4, 38, 728.
    let counts: Vec<usize> = (1..=5).map(|n| common::connected_graphs(n).len()).collect();
    assert_eq!(counts, [1, 1, 4, 38, 728]);
}

#[test]
fn encoder_matches_per_node_oracle() {
    let (checked, gap) = common::encoder_oracle_gap(5);
    assert_eq!(checked, 4 * (1 + 1 + 4 + 38 + 728));
    assert!(gap < 1e-9, "max gap {gap}");
}

#[test]
fn contrastive_losses_match_loop_oracles() {
    let gap = common::contrastive_oracle_gap(200);
    assert!(gap < 1e-10, "max gap {gap}");
}
