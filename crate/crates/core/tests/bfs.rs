mod common;

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use amtgraph::bfs::{
    bfs_levels, run_bfs, run_roots, validate_tree, AuditRecord, BfsOptions, BfsResult, DistributedBfs,
};
use amtgraph::graph::{build_symmetric_csr, generate_urand, CsrGraph, EdgeList, UrandRng, VertexId};
use amtgraph::runtime::{LocalityId, RuntimeBuilder, RuntimeConfig};
use amtgraph::transport::{LinkDelay, TransportConfig};
use proptest::prelude::*;

fn urand(scale: u32, seed: u64) -> Arc<CsrGraph> {
    Arc::new(build_symmetric_csr(&generate_urand(scale, 16, seed).unwrap()).unwrap())
}

fn check_against_oracle(g: &CsrGraph, r: &BfsResult) {
    let oracle = bfs_levels(g, r.root).unwrap();
    assert_eq!(r.levels, oracle, "levels from root {}", r.root);
    assert_eq!(validate_tree(g, &r.parents, r.root).unwrap(), oracle);
    assert_eq!(r.verify(g).unwrap(), 0);
}

/// Every vertex is claimed from -1 exactly once; later writes only lower
/// its level.
fn check_audit(log: &[AuditRecord]) {
    let mut last: HashMap<VertexId, u64> = HashMap::new();
    for rec in log {
        match last.get(&rec.vertex) {
            None => {
                assert_eq!(rec.old_parent, -1, "{rec:?}");
                assert_eq!(rec.old_level, None);
            }
            Some(&prev) => {
                assert_ne!(rec.old_parent, -1, "second claim from -1: {rec:?}");
                assert_eq!(rec.old_level, Some(prev));
                assert!(rec.new_level < prev, "level did not decrease: {rec:?}");
            }
        }
        last.insert(rec.vertex, rec.new_level);
    }
}

#[test]
fn urand_scale10_matches_oracle_for_1_2_4_localities() {
    let g = urand(10, 1);
    let roots = common::pick_roots(&g, 3, 1);
    for l in [1, 2, 4] {
        for batch in [false, true] {
            let results = run_bfs(
                RuntimeConfig::new(l).with_workers(2),
                Arc::clone(&g),
                &roots,
                BfsOptions { batch, audit: false },
            )
            .unwrap();
            for r in &results {
                check_against_oracle(&g, r);
                if l == 1 {
                    assert_eq!(r.stats.remote_messages, 0);
                }
            }
        }
    }
}

#[test]
fn batch_and_per_edge_levels_agree() {
    let g = urand(9, 7);
    let roots = common::pick_roots(&g, 4, 7);
    let per_edge = run_bfs(
        RuntimeConfig::new(4).with_workers(2),
        Arc::clone(&g),
        &roots,
        BfsOptions::default(),
    )
    .unwrap();
    let batched = run_bfs(
        RuntimeConfig::new(4).with_workers(2),
        Arc::clone(&g),
        &roots,
        BfsOptions {
            batch: true,
            audit: false,
        },
    )
    .unwrap();
    for (a, b) in per_edge.iter().zip(&batched) {
        assert_eq!(a.levels, b.levels);
        assert!(b.stats.remote_messages <= a.stats.remote_messages);
    }
}

#[test]
fn unreachable_vertices_stay_unclaimed() {
    // Two components: a 4-cycle and a triangle, plus an isolated vertex.
    let el = EdgeList::new(8, vec![(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 4)]).unwrap();
    let g = Arc::new(build_symmetric_csr(&el).unwrap());
    for l in [1, 2, 3, 4, 8] {
        let r = &run_bfs(
            RuntimeConfig::new(l).with_workers(1),
            Arc::clone(&g),
            &[5],
            BfsOptions::default(),
        )
        .unwrap()[0];
        check_against_oracle(&g, r);
        assert_eq!(r.parents[..4], [-1, -1, -1, -1]);
        assert_eq!(r.parents[7], -1);
        assert_eq!(r.reachable(), 3);
        assert_eq!(r.level_histogram(), [1, 2]);
    }
}

/// Locality 0 owns {0,1,2}, 1 owns {3,4,5}, 2 owns {6,7,8}. The direct
/// edge 0-6 crosses the slow link 0->2, so vertex 6 is first claimed at
/// level 4 through 0-3-4-5-6 and must later be lowered to level 1.
fn detour_graph() -> Arc<CsrGraph> {
    let el = EdgeList::new(9, vec![(0, 6), (0, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8)]).unwrap();
    Arc::new(build_symmetric_csr(&el).unwrap())
}

#[test]
fn delayed_short_path_is_relaxed() {
    let g = detour_graph();
    let config = RuntimeConfig::new(3)
        .with_workers(2)
        .with_transport(TransportConfig::InProcess {
            link_delays: vec![LinkDelay {
                src: LocalityId(0),
                dst: LocalityId(2),
                delay: Duration::from_millis(60),
            }],
        });
    let mut b = RuntimeBuilder::new(config).unwrap();
    let bfs = DistributedBfs::register(
        &mut b,
        Arc::clone(&g),
        BfsOptions {
            batch: false,
            audit: true,
        },
    )
    .unwrap();
    let rt = b.start().unwrap();
    let r = &run_roots(&rt, &bfs, &[0]).unwrap()[0];
    check_against_oracle(&g, r);
    assert_eq!(r.levels, [0, -1, -1, 1, 2, 2, 1, 2, 3]);
    assert!(r.stats.relaxations >= 1, "{:?}", r.stats);

    let log = bfs.audit_log().unwrap();
    check_audit(&log);
    let six: Vec<_> = log.iter().filter(|a| a.vertex == 6).collect();
    assert_eq!(six.len(), 2, "{six:?}");
    assert_eq!((six[0].new_parent, six[0].new_level), (5, 4));
    assert_eq!((six[1].old_level, six[1].new_parent, six[1].new_level), (Some(4), 0, 1));
    // The relaxation propagated down the tail.
    assert!(log
        .iter()
        .any(|a| a.vertex == 8 && a.old_level == Some(6) && a.new_level == 3));
}

#[test]
fn delayed_short_path_is_relaxed_in_batch_mode() {
    let g = detour_graph();
    let config = RuntimeConfig::new(3)
        .with_workers(2)
        .with_transport(TransportConfig::InProcess {
            link_delays: vec![LinkDelay {
                src: LocalityId(0),
                dst: LocalityId(2),
                delay: Duration::from_millis(60),
            }],
        });
    let r = &run_bfs(
        config,
        Arc::clone(&g),
        &[0],
        BfsOptions {
            batch: true,
            audit: false,
        },
    )
    .unwrap()[0];
    check_against_oracle(&g, r);
    assert!(r.stats.relaxations >= 1);
}

#[test]
fn audited_urand_runs_claim_each_vertex_once() {
    let g = urand(9, 3);
    for l in [2, 4] {
        let mut b = RuntimeBuilder::new(RuntimeConfig::new(l).with_workers(4)).unwrap();
        let bfs = DistributedBfs::register(
            &mut b,
            Arc::clone(&g),
            BfsOptions {
                batch: false,
                audit: true,
            },
        )
        .unwrap();
        let rt = b.start().unwrap();
        let r = &run_roots(&rt, &bfs, &[1]).unwrap()[0];
        check_against_oracle(&g, r);
        let log = bfs.audit_log().unwrap();
        check_audit(&log);
        let claimed: std::collections::HashSet<_> = log.iter().map(|a| a.vertex).collect();
        assert_eq!(claimed.len(), r.reachable());
    }
}

#[test]
fn tcp_transport_gives_the_same_levels() {
    let g = urand(9, 2);
    let roots = common::pick_roots(&g, 2, 2);
    for l in [2, 4] {
        let tcp = run_bfs(
            RuntimeConfig::new(l)
                .with_workers(2)
                .with_transport(TransportConfig::tcp_loopback()),
            Arc::clone(&g),
            &roots,
            BfsOptions::default(),
        )
        .unwrap();
        for r in &tcp {
            check_against_oracle(&g, r);
        }
    }
}

#[test]
fn star_and_single_vertex() {
    let star = Arc::new(build_symmetric_csr(&EdgeList::new(6, (1..6).map(|i| (0, i)).collect()).unwrap()).unwrap());
    let r = &run_bfs(
        RuntimeConfig::new(3).with_workers(1),
        Arc::clone(&star),
        &[0],
        BfsOptions::default(),
    )
    .unwrap()[0];
    assert_eq!(r.parents, [0, 0, 0, 0, 0, 0]);
    assert_eq!(r.levels, [0, 1, 1, 1, 1, 1]);

    let one = Arc::new(build_symmetric_csr(&EdgeList::new(1, vec![]).unwrap()).unwrap());
    let r = &run_bfs(RuntimeConfig::new(2).with_workers(1), one, &[0], BfsOptions::default()).unwrap()[0];
    assert_eq!(r.parents, [0]);
}

fn random_graph(seed: u64, n_max: u64) -> Arc<CsrGraph> {
    let mut rng = UrandRng::new(seed);
    let el = common::random_small_graph(&mut rng, n_max);
    Arc::new(build_symmetric_csr(&el).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn random_graphs_match_oracle(seed in any::<u64>(), l in 1usize..=5, batch in any::<bool>(), root_pick in any::<u32>()) {
        let g = random_graph(seed, 48);
        let root = root_pick % g.num_vertices() as u32;
        let r = &run_bfs(RuntimeConfig::new(l).with_workers(2), Arc::clone(&g), &[root], BfsOptions { batch, audit: false }).unwrap()[0];
        prop_assert_eq!(&r.levels, &bfs_levels(&g, root).unwrap());
        prop_assert!(validate_tree(&g, &r.parents, root).is_ok());
    }
}
