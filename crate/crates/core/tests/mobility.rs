mod common;

use common::{fleet_case, run_fleet_case, Invariant};
use gridhaul::fleet::{spawn_arrivals, ArrivalProcess, HdevParams};
use gridhaul::road::{NodeId, RoadEdge, RoadGraph, RoadNode};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn graph(n: usize, edges: &[(usize, usize, u8)]) -> RoadGraph {
    let nodes = (0..n)
        .map(|i| RoadNode {
            id: i as NodeId,
            bus_id: i as NodeId,
            lat: None,
            lon: None,
        })
        .collect();
    let mut seen = std::collections::BTreeSet::new();
    let edges = edges
        .iter()
        .filter(|(a, b, _)| a != b && seen.insert((*a.min(b), *a.max(b))))
        .map(|&(a, b, w)| RoadEdge {
            a: a as NodeId,
            b: b as NodeId,
            miles: w as f64,
        })
        .collect();
    RoadGraph::new(nodes, edges).unwrap()
}

/// Every simple path, cheapest first, ties broken by node sequence.
fn brute_force(g: &RoadGraph, from: NodeId, to: NodeId) -> Option<(f64, Vec<NodeId>)> {
    fn walk(g: &RoadGraph, path: &mut Vec<NodeId>, miles: f64, to: NodeId, best: &mut Option<(f64, Vec<NodeId>)>) {
        let here = *path.last().unwrap();
        if here == to {
            let better = match best {
                None => true,
                Some((m, p)) => miles < *m || (miles == *m && path < p),
            };
            if better {
                *best = Some((miles, path.clone()));
            }
            return;
        }
        let next: Vec<_> = g.neighbours(here).collect();
        for (n, w) in next {
            if !path.contains(&n) {
                path.push(n);
                walk(g, path, miles + w, to, best);
                path.pop();
            }
        }
    }
    let mut best = None;
    walk(g, &mut vec![from], 0.0, to, &mut best);
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn dijkstra_matches_enumeration(
        n in 2usize..8,
        edges in proptest::collection::vec((0usize..8, 0usize..8, 1u8..6), 0..16),
        from in 0usize..8,
        to in 0usize..8,
    ) {
        let edges: Vec<_> = edges.into_iter().filter(|(a, b, _)| *a < n && *b < n).collect();
        let g = graph(n, &edges);
        let (from, to) = ((from % n) as NodeId, (to % n) as NodeId);
        let got = g.shortest_path(from, to).unwrap();
        let want = brute_force(&g, from, to);
        match (got, want) {
            (None, None) => {}
            (Some(r), Some((miles, nodes))) => {
                prop_assert_eq!(r.miles, miles);
                prop_assert_eq!(r.nodes, nodes);
            }
            (got, want) => prop_assert!(false, "dijkstra {:?}, enumeration {:?}", got, want),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn soc_stays_within_capacity(case in fleet_case()) {
        prop_assert_eq!(run_fleet_case(&case, Invariant::SocBounds), Ok(()));
    }

    #[test]
    fn soc_moves_only_with_the_state(case in fleet_case()) {
        prop_assert_eq!(run_fleet_case(&case, Invariant::SocDirection), Ok(()));
    }

    #[test]
    fn vehicles_are_conserved(case in fleet_case()) {
        prop_assert_eq!(run_fleet_case(&case, Invariant::Conservation), Ok(()));
    }

    #[test]
    fn ports_are_never_oversubscribed(case in fleet_case()) {
        prop_assert_eq!(run_fleet_case(&case, Invariant::PortCapacity), Ok(()));
    }
}

#[test]
fn poisson_arrivals_have_the_configured_mean() {
    let g = graph(4, &[(0, 1, 5), (1, 2, 5), (2, 3, 5)]);
    let process = ArrivalProcess::uniform(40.0, &g);
    let params = HdevParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 10_000;
    let mut total = 0usize;
    for _ in 0..draws {
        let batch = spawn_arrivals(&process, &params, 0.25, 0, &mut rng).unwrap();
        for v in &batch {
            assert_ne!(v.origin, v.destination);
            assert!(v.soc_kwh >= 0.5 * params.capacity_kwh && v.soc_kwh <= params.capacity_kwh);
        }
        total += batch.len();
    }
    let mean = total as f64 / draws as f64;
    assert!((mean - 10.0).abs() < 0.3, "{mean}");
}
