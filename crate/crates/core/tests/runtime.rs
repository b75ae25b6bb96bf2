mod common;

use std::net::TcpListener;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use amtgraph::graph::UrandRng;
use amtgraph::runtime::{
    wait_all, ActionTag, Hosting, LocalityId, Runtime, RuntimeBuilder, RuntimeConfig, RuntimeError,
};
use amtgraph::transport::{TcpConfig, TransportConfig, TransportError};
use common::contracts;

const T1: ActionTag = ActionTag(1);
const T2: ActionTag = ActionTag(2);

fn builder(l: usize, workers: usize) -> RuntimeBuilder {
    RuntimeBuilder::new(RuntimeConfig::new(l).with_workers(workers)).unwrap()
}

fn d0(rt: &Runtime) -> amtgraph::runtime::Driver {
    rt.driver(LocalityId(0)).unwrap()
}

#[test]
fn depth_five_chain_completes_transitively() {
    contracts::ack_tree_chain().unwrap();
}

#[test]
fn barrier_waits_for_late_locality_and_inflight_handlers() {
    contracts::barrier_quiescence().unwrap();
}

#[test]
fn single_locality_matches_local_execution() {
    contracts::single_locality_equivalence().unwrap();
}

#[test]
fn handler_spawning_two_children_completes_after_all_three() {
    let runs = Arc::new(AtomicUsize::new(0));
    let mut b = builder(2, 2);
    let r = Arc::clone(&runs);
    b.register(T1, move |ctx, _| {
        ctx.remote_action(LocalityId(0), T2, vec![])?;
        ctx.remote_action(LocalityId(1), T2, vec![])?;
        r.fetch_add(1, Ordering::SeqCst);
        Ok(vec![])
    })
    .unwrap();
    let r = Arc::clone(&runs);
    b.register(T2, move |_, _| {
        thread::sleep(Duration::from_millis(5));
        r.fetch_add(1, Ordering::SeqCst);
        Ok(vec![])
    })
    .unwrap();
    let rt = b.start().unwrap();
    d0(&rt)
        .remote_action(LocalityId(1), T1, vec![])
        .unwrap()
        .wait()
        .unwrap();
    assert_eq!(runs.load(Ordering::SeqCst), 3);
}

#[test]
fn self_dispatch_completes_after_handler() {
    let ran = Arc::new(AtomicBool::new(false));
    let mut b = builder(2, 1);
    let r = Arc::clone(&ran);
    b.register(T1, move |_, _| {
        r.store(true, Ordering::SeqCst);
        Ok(vec![])
    })
    .unwrap();
    let rt = b.start().unwrap();
    d0(&rt)
        .remote_action(LocalityId(0), T1, vec![])
        .unwrap()
        .wait()
        .unwrap();
    assert!(ran.load(Ordering::SeqCst));
    assert_eq!(rt.stats()[0].remote_actions, 0);
    assert_eq!(rt.stats()[0].local_actions, 1);
}

#[test]
fn wait_all_on_nothing_returns_immediately() {
    wait_all(std::iter::empty()).unwrap();
}

#[test]
fn wait_all_reports_failure_only_after_the_rest_settle() {
    let slow_done = Arc::new(AtomicBool::new(false));
    let mut b = builder(2, 2);
    b.register(T1, |_, _| Err(RuntimeError::Action("rejected".into())))
        .unwrap();
    let s = Arc::clone(&slow_done);
    b.register(T2, move |_, _| {
        thread::sleep(Duration::from_millis(80));
        s.store(true, Ordering::SeqCst);
        Ok(vec![])
    })
    .unwrap();
    let rt = b.start().unwrap();
    let d = d0(&rt);
    let failing = d.remote_action(LocalityId(1), T1, vec![]).unwrap();
    let slow = d.remote_action(LocalityId(1), T2, vec![]).unwrap();
    let err = wait_all([&failing, &slow]).unwrap_err();
    assert!(
        slow_done.load(Ordering::SeqCst),
        "error surfaced before the slow handle settled"
    );
    match err {
        RuntimeError::Remote { locality, message } => {
            assert_eq!(locality, LocalityId(1));
            assert!(message.contains("rejected"), "{message}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn sixty_four_concurrent_claims_have_one_winner() {
    for round in 0..20 {
        let mut b = builder(2, 8);
        let cells = b.vector(8, -1i64);
        let c = cells.clone();
        b.register(T1, move |ctx, p| {
            let desired = i64::from_le_bytes(p.try_into().unwrap());
            Ok(vec![c.compare_exchange(ctx, 6, -1, desired)? as u8])
        })
        .unwrap();
        let rt = b.start().unwrap();
        let owner = cells.owner(6);
        let winners: Vec<i64> = rt
            .run_spmd(|d| {
                let handles: Vec<_> = (0..32i64)
                    .map(|k| {
                        let desired = 100 * d.here().0 as i64 + k;
                        (
                            desired,
                            d.remote_action(owner, T1, desired.to_le_bytes().to_vec()).unwrap(),
                        )
                    })
                    .collect();
                handles
                    .into_iter()
                    .filter(|(_, h)| h.wait_reply().unwrap() == [1])
                    .map(|(v, _)| v)
                    .collect::<Vec<_>>()
            })
            .into_iter()
            .flatten()
            .collect();
        assert_eq!(winners.len(), 1, "round {round}: winners {winners:?}");
        let d = d0(&rt);
        assert_eq!(cells.read(&d.ctx(), 6).unwrap(), winners[0]);
    }
}

#[test]
fn thousand_concurrent_float_adds_sum_to_one() {
    let mut b = builder(2, 8);
    let acc = b.vector(4, 0.0f64);
    let a = acc.clone();
    b.register(T1, move |ctx, _| {
        a.atomic_add(ctx, 3, 0.001)?;
        Ok(vec![])
    })
    .unwrap();
    let rt = b.start().unwrap();
    rt.run_spmd(|d| {
        for _ in 0..500 {
            d.remote_action(acc.owner(3), T1, vec![]).unwrap();
        }
        d.barrier().unwrap();
    });
    let total = acc.read(&d0(&rt).ctx(), 3).unwrap();
    assert!((total - 1.0).abs() <= 1e-9, "{total}");
}

#[test]
fn cas_and_add_follow_their_definitions() {
    let mut b = builder(1, 1);
    let ints = b.vector(2, -1i64);
    let floats = b.vector(1, 0.0f64);
    let rt = b.start().unwrap();
    let d = d0(&rt);
    let ctx = d.ctx();
    assert!(ints.compare_exchange(&ctx, 0, -1, 7).unwrap());
    assert_eq!(ints.load(&ctx, 0).unwrap(), 7);
    ints.store(&ctx, 1, 3).unwrap();
    assert!(!ints.compare_exchange(&ctx, 1, -1, 7).unwrap());
    assert_eq!(ints.load(&ctx, 1).unwrap(), 3);
    floats.atomic_add(&ctx, 0, 0.25).unwrap();
    floats.atomic_add(&ctx, 0, 0.0).unwrap();
    assert_eq!(floats.load(&ctx, 0).unwrap(), 0.25);
}

#[test]
fn remote_reads_agree_with_owner_reads() {
    let mut b = builder(2, 2);
    let v = b.vector(11, -1i64);
    let rt = b.start().unwrap();
    let views = rt.run_spmd(|d| {
        let ctx = d.ctx();
        for i in v.local_range(&ctx) {
            v.store(&ctx, i, 3 * i as i64 + d.here().0 as i64).unwrap();
        }
        d.barrier().unwrap();
        let remote: Vec<i64> = (0..v.len()).map(|i| v.read(&ctx, i).unwrap()).collect();
        let local: Vec<(usize, i64)> = v.local_range(&ctx).map(|i| (i, v.load(&ctx, i).unwrap())).collect();
        let gathered = v.gather(&ctx).unwrap();
        d.barrier().unwrap();
        (remote, local, gathered)
    });
    let (r0, _, g0) = &views[0];
    for (remote, local, gathered) in &views {
        assert_eq!(remote, r0);
        assert_eq!(gathered, g0);
        for &(i, x) in local {
            assert_eq!(r0[i], x);
        }
    }
    assert_eq!(r0[10], 31);
    assert_eq!(
        v.read(&d0(&rt).ctx(), 11).unwrap_err(),
        RuntimeError::IndexOutOfRange { index: 11, len: 11 }
    );
}

#[test]
fn fresh_vector_reads_fill_value() {
    let mut b = builder(3, 1);
    let v = b.vector(7, -1i64);
    let rt = b.start().unwrap();
    let d = d0(&rt);
    let ctx = d.ctx();
    assert!((0..7).all(|i| v.read(&ctx, i).unwrap() == -1));
}

#[test]
fn writes_to_non_owned_cells_fail_fast() {
    let mut b = builder(2, 1);
    let v = b.vector(4, -1i64);
    let rt = b.start().unwrap();
    let d = d0(&rt);
    let ctx = d.ctx();
    assert!(matches!(
        v.compare_exchange(&ctx, 3, -1, 1),
        Err(RuntimeError::OwnershipViolation { index: 3, .. })
    ));
    assert!(matches!(
        v.store(&ctx, 2, 1),
        Err(RuntimeError::OwnershipViolation { .. })
    ));
}

#[test]
fn four_localities_form_a_full_mesh() {
    for transport in [TransportConfig::in_process(), TransportConfig::tcp_loopback()] {
        let rt = RuntimeBuilder::new(RuntimeConfig::new(4).with_workers(1).with_transport(transport))
            .unwrap()
            .start()
            .unwrap();
        let links: Vec<usize> = (0..4).map(|i| rt.peer_links(LocalityId(i)).unwrap()).collect();
        assert_eq!(links, [3, 3, 3, 3]);
        assert_eq!(links.iter().sum::<usize>() / 2, 6);
    }
}

#[test]
fn all_reduce_matches_single_locality_sum() {
    let mut rng = UrandRng::new(11);
    let inputs: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..5).map(|_| rng.next_u64() as f64 / u64::MAX as f64).collect())
        .collect();
    let rt = builder(4, 1).start().unwrap();
    let sums = rt.run_spmd(|d| d.all_reduce_sum(&inputs[d.here().index()]).unwrap());
    for j in 0..5 {
        let want: f64 = inputs.iter().map(|v| v[j]).sum();
        for s in &sums {
            assert!((s[j] - want).abs() <= 1e-12);
        }
    }
    assert!(sums.iter().all(|s| s == &sums[0]), "localities saw different bits");
}

#[test]
fn killed_peer_fails_outstanding_handles_and_barriers() {
    for transport in [TransportConfig::in_process(), TransportConfig::tcp_loopback()] {
        let mut b = RuntimeBuilder::new(RuntimeConfig::new(2).with_workers(2).with_transport(transport)).unwrap();
        b.register(T1, |ctx, _| {
            // Never released: completion must come from the disconnect.
            std::mem::forget(ctx.hold()?);
            Ok(vec![])
        })
        .unwrap();
        let rt = b.start().unwrap();
        let d = d0(&rt);
        let h = d.remote_action(LocalityId(1), T1, vec![]).unwrap();
        thread::sleep(Duration::from_millis(20));
        rt.kill_locality(LocalityId(1)).unwrap();
        let outcome = h
            .wait_timeout(Duration::from_secs(5))
            .expect("handle settles after disconnect");
        assert!(outcome.is_err());
        let t = Instant::now();
        assert!(d.barrier().is_err());
        assert!(t.elapsed() < Duration::from_secs(5));
        assert_eq!(rt.peer_links(LocalityId(0)), Some(0));
    }
}

#[test]
fn tcp_startup_error_names_the_missing_locality() {
    let a = TcpListener::bind("127.0.0.1:0").unwrap();
    let b = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoints = vec![a.local_addr().unwrap().to_string(), b.local_addr().unwrap().to_string()];
    drop((a, b));
    let config = RuntimeConfig::new(2)
        .with_workers(1)
        .with_hosting(Hosting::Only(LocalityId(0)))
        .with_transport(TransportConfig::Tcp(TcpConfig {
            endpoints: Some(endpoints),
            connect_timeout: Duration::from_millis(300),
        }));
    let err = RuntimeBuilder::new(config).unwrap().start().err().unwrap();
    match err {
        RuntimeError::Transport(TransportError::Startup { locality, .. }) => assert_eq!(locality, LocalityId(1)),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn split_process_tcp_runtime_runs_actions() {
    // Two runtimes in one process, each hosting one locality of a pair.
    let a = TcpListener::bind("127.0.0.1:0").unwrap();
    let b = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoints = vec![a.local_addr().unwrap().to_string(), b.local_addr().unwrap().to_string()];
    drop((a, b));
    let start = |id: u32| {
        let endpoints = endpoints.clone();
        thread::spawn(move || {
            let config = RuntimeConfig::new(2)
                .with_workers(1)
                .with_hosting(Hosting::Only(LocalityId(id)))
                .with_transport(TransportConfig::tcp(endpoints));
            let mut b = RuntimeBuilder::new(config).unwrap();
            b.register(T1, |ctx, p| Ok([p, &[ctx.here().0 as u8]].concat()))
                .unwrap();
            let rt = b.start().unwrap();
            let d = rt.driver(LocalityId(id)).unwrap();
            let peer = LocalityId(1 - id);
            let reply = d.remote_action(peer, T1, vec![id as u8]).unwrap().wait_reply().unwrap();
            let sum = d.all_reduce_sum(&[id as f64 + 1.0]).unwrap();
            d.barrier().unwrap();
            (reply, sum)
        })
    };
    let (h0, h1) = (start(0), start(1));
    let (r0, s0) = h0.join().unwrap();
    let (r1, s1) = h1.join().unwrap();
    assert_eq!(r0, [0, 1]);
    assert_eq!(r1, [1, 0]);
    assert_eq!(s0, [3.0]);
    assert_eq!(s1, [3.0]);
}
