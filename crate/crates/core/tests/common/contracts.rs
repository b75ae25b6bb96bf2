//! Runtime contract scenarios. Each returns `Err` with a description on
//! the first violated expectation.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use amtgraph::bfs::{bfs_levels, run_bfs, BfsOptions};
use amtgraph::graph::{build_csr, build_symmetric_csr, generate_urand};
use amtgraph::pagerank::{pagerank_sequential, run_pagerank, PageRankOptions, PageRankParams};
use amtgraph::runtime::{wait_all, ActionTag, LocalityId, RuntimeBuilder, RuntimeConfig};
use parking_lot::Mutex;

const CHAIN: ActionTag = ActionTag(1);
const LOGGED: ActionTag = ActionTag(2);
const SQUARE: ActionTag = ActionTag(3);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// A depth-5 chain alternating between two localities. The handle from the
/// first hop must not complete before the fifth handler has run.
pub fn ack_tree_chain() -> Result<(), String> {
    let runs = Arc::new(AtomicUsize::new(0));
    let mut b = RuntimeBuilder::new(RuntimeConfig::new(2).with_workers(2)).map_err(|e| e.to_string())?;
    let r = Arc::clone(&runs);
    b.register(CHAIN, move |ctx, p| {
        let depth = p[0];
        if depth > 1 {
            let next = LocalityId((ctx.here().0 + 1) % ctx.localities() as u32);
            ctx.remote_action(next, CHAIN, vec![depth - 1])?;
        } else {
            // Make a premature completion observable.
            thread::sleep(Duration::from_millis(3));
        }
        r.fetch_add(1, Ordering::SeqCst);
        Ok(Vec::new())
    })
    .map_err(|e| e.to_string())?;
    let rt = b.start().map_err(|e| e.to_string())?;
    let d = rt.driver(LocalityId(0)).unwrap();
    let h = d
        .remote_action(LocalityId(1), CHAIN, vec![5])
        .map_err(|e| e.to_string())?;
    wait_all([&h]).map_err(|e| e.to_string())?;
    let seen = runs.load(Ordering::SeqCst);
    ensure!(seen == 5, "wait_all returned after {seen} of 5 handler executions");
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Event {
    Handler,
    Released(u32),
}

/// Three localities each issue actions to both peers and enter the barrier
/// without waiting; locality 2 enters 50 ms late. Every handler must be
/// logged before any release, and nobody leaves before locality 2 arrives.
pub fn barrier_quiescence() -> Result<(), String> {
    const PER_PEER: usize = 4;
    const LATE: Duration = Duration::from_millis(50);
    let log = Arc::new(Mutex::new(Vec::new()));
    let mut b = RuntimeBuilder::new(RuntimeConfig::new(3).with_workers(2)).map_err(|e| e.to_string())?;
    let l = Arc::clone(&log);
    b.register(LOGGED, move |_, _| {
        thread::sleep(Duration::from_millis(1));
        l.lock().push(Event::Handler);
        Ok(Vec::new())
    })
    .map_err(|e| e.to_string())?;
    let rt = b.start().map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let exits = rt.run_spmd(|d| -> Result<Duration, String> {
        let here = d.here().0;
        for peer in (0..3).filter(|&p| p != here) {
            for _ in 0..PER_PEER {
                d.remote_action(LocalityId(peer), LOGGED, Vec::new())
                    .map_err(|e| e.to_string())?;
            }
        }
        if here == 2 {
            thread::sleep(LATE);
        }
        d.barrier().map_err(|e| e.to_string())?;
        let exit = t0.elapsed();
        log.lock().push(Event::Released(here));
        Ok(exit)
    });
    for (k, exit) in exits.into_iter().enumerate() {
        let exit = exit?;
        ensure!(
            exit >= LATE,
            "locality {k} left the barrier after {exit:?}, before the late arrival"
        );
    }
    let log = log.lock();
    let handlers = log.iter().filter(|e| **e == Event::Handler).count();
    ensure!(handlers == 3 * 2 * PER_PEER, "{handlers} handler runs logged");
    let first_release = log.iter().position(|e| matches!(e, Event::Released(_))).unwrap();
    let last_handler = log.iter().rposition(|e| *e == Event::Handler).unwrap();
    ensure!(
        last_handler < first_release,
        "handler logged after a barrier release: {:?}",
        *log
    );
    Ok(())
}

/// With one locality, programs written against remote actions and barriers
/// give the same answers as plain local code.
pub fn single_locality_equivalence() -> Result<(), String> {
    // Remote actions that atomically accumulate i^2 into one cell.
    let mut b = RuntimeBuilder::new(RuntimeConfig::new(1).with_workers(4)).map_err(|e| e.to_string())?;
    let acc = b.vector(1, 0i64);
    let a = acc.clone();
    b.register(SQUARE, move |ctx, p| {
        let i = i64::from_le_bytes(p.try_into().unwrap());
        let mut cur = a.load(ctx, 0)?;
        while !a.compare_exchange(ctx, 0, cur, cur + i * i)? {
            cur = a.load(ctx, 0)?;
        }
        Ok(Vec::new())
    })
    .map_err(|e| e.to_string())?;
    let rt = b.start().map_err(|e| e.to_string())?;
    let d = rt.driver(LocalityId(0)).unwrap();
    for i in 0..500i64 {
        d.remote_action(LocalityId(0), SQUARE, i.to_le_bytes().to_vec())
            .map_err(|e| e.to_string())?;
    }
    d.barrier().map_err(|e| e.to_string())?;
    let got = acc.read(&d.ctx(), 0).map_err(|e| e.to_string())?;
    let want: i64 = (0..500i64).map(|i| i * i).sum();
    ensure!(got == want, "sum of squares {got} != {want}");
    let st = rt.stats();
    ensure!(
        st[0].remote_actions == 0,
        "{} actions crossed a transport",
        st[0].remote_actions
    );
    drop(rt);

    let el = generate_urand(9, 8, 3).map_err(|e| e.to_string())?;
    let sym = Arc::new(build_symmetric_csr(&el).map_err(|e| e.to_string())?);
    let results = run_bfs(
        RuntimeConfig::new(1).with_workers(4),
        Arc::clone(&sym),
        &[0, 17],
        BfsOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    for r in results {
        let want = bfs_levels(&sym, r.root).map_err(|e| e.to_string())?;
        ensure!(r.levels == want, "bfs levels from {} differ at L=1", r.root);
    }

    // One worker runs the accumulation chunks in ascending order, which is
    // exactly the sequential summation order.
    let g = Arc::new(build_csr(&el).map_err(|e| e.to_string())?);
    let params = PageRankParams {
        tolerance: 1e-12,
        ..Default::default()
    };
    let dist = run_pagerank(
        RuntimeConfig::new(1).with_workers(1),
        Arc::clone(&g),
        &params,
        PageRankOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let seq = pagerank_sequential(&g, &params).map_err(|e| e.to_string())?;
    ensure!(
        dist.ranks == seq.ranks,
        "pagerank ranks differ bitwise at L=1 with one worker"
    );
    ensure!(dist.iterations == seq.iterations, "iteration counts differ");
    Ok(())
}
