//! Barrier and all-reduce, both gathered at locality 0.
//!
//! Each participant sends one action to locality 0. The handler parks the
//! activation with a [`Hold`] until all `L` participants of the same epoch
//! have arrived, then releases every hold at once. For a reduction the
//! release carries the index-ordered sum as the reply, so every locality
//! observes bit-identical results.

use std::collections::HashMap;

use parking_lot::Mutex;

use super::{Ctx, Hold, RuntimeError};

struct ReduceSlot {
    parts: Vec<Option<Vec<f64>>>,
    holds: Vec<Hold>,
}

#[derive(Default)]
struct State {
    failed: Option<RuntimeError>,
    barriers: HashMap<u64, Vec<Hold>>,
    reduces: HashMap<u64, ReduceSlot>,
}

#[derive(Default)]
pub(crate) struct Collectives {
    state: Mutex<State>,
}

impl Collectives {
    pub(crate) fn barrier_arrive(&self, ctx: &Ctx<'_>, payload: &[u8]) -> Result<Vec<u8>, RuntimeError> {
        let epoch = read_u64(payload, 0)?;
        let hold = ctx.hold()?;
        let ready = {
            let mut st = self.state.lock();
            if let Some(e) = &st.failed {
                return Err(e.clone());
            }
            let waiting = st.barriers.entry(epoch).or_default();
            waiting.push(hold);
            if waiting.len() == ctx.localities() {
                st.barriers.remove(&epoch)
            } else {
                None
            }
        };
        for h in ready.into_iter().flatten() {
            h.release();
        }
        Ok(Vec::new())
    }

    pub(crate) fn reduce_arrive(&self, ctx: &Ctx<'_>, payload: &[u8]) -> Result<Vec<u8>, RuntimeError> {
        let epoch = read_u64(payload, 0)?;
        let from = read_u32(payload, 8)? as usize;
        let count = read_u32(payload, 12)? as usize;
        if from >= ctx.localities() || payload.len() != 16 + count * 8 {
            return Err(RuntimeError::Protocol("malformed reduce contribution".into()));
        }
        let values: Vec<f64> = payload[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let hold = ctx.hold()?;
        let done = {
            let mut st = self.state.lock();
            if let Some(e) = &st.failed {
                return Err(e.clone());
            }
            let slot = st.reduces.entry(epoch).or_insert_with(|| ReduceSlot {
                parts: vec![None; ctx.localities()],
                holds: Vec::new(),
            });
            if slot.parts[from].is_some() {
                return Err(RuntimeError::Protocol(format!(
                    "locality {from} contributed twice to reduction {epoch}"
                )));
            }
            slot.parts[from] = Some(values);
            slot.holds.push(hold);
            if slot.holds.len() == ctx.localities() {
                st.reduces.remove(&epoch)
            } else {
                None
            }
        };
        if let Some(slot) = done {
            let parts: Vec<Vec<f64>> = slot.parts.into_iter().map(|p| p.unwrap()).collect();
            if parts.iter().any(|p| p.len() != parts[0].len()) {
                let e = RuntimeError::CollectiveFailed("reduction contributions differ in length".into());
                for h in slot.holds {
                    h.fail(e.clone());
                }
                return Ok(Vec::new());
            }
            let mut sum = vec![0.0f64; parts[0].len()];
            for p in &parts {
                for (s, v) in sum.iter_mut().zip(p) {
                    *s += v;
                }
            }
            let reply: Vec<u8> = sum.iter().flat_map(|v| v.to_le_bytes()).collect();
            for h in slot.holds {
                h.release_with_reply(reply.clone());
            }
        }
        Ok(Vec::new())
    }

    /// Fails every parked participant and every future arrival.
    pub(crate) fn poison(&self, err: RuntimeError) {
        let (barriers, reduces) = {
            let mut st = self.state.lock();
            st.failed.get_or_insert(err.clone());
            (std::mem::take(&mut st.barriers), std::mem::take(&mut st.reduces))
        };
        for h in barriers.into_values().flatten() {
            h.fail(err.clone());
        }
        for h in reduces.into_values().flat_map(|s| s.holds) {
            h.fail(err.clone());
        }
    }
}

pub(crate) fn encode_reduce(epoch: u64, from: u32, values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + values.len() * 8);
    out.extend_from_slice(&epoch.to_le_bytes());
    out.extend_from_slice(&from.to_le_bytes());
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn decode_f64s(bytes: &[u8]) -> Result<Vec<f64>, RuntimeError> {
    if bytes.len() % 8 != 0 {
        return Err(RuntimeError::Protocol(
            "reduction reply is not a whole number of f64".into(),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn read_u64(b: &[u8], at: usize) -> Result<u64, RuntimeError> {
    b.get(at..at + 8)
        .map(|s| u64::from_le_bytes(s.try_into().unwrap()))
        .ok_or_else(|| RuntimeError::Protocol("short collective payload".into()))
}

fn read_u32(b: &[u8], at: usize) -> Result<u32, RuntimeError> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes(s.try_into().unwrap()))
        .ok_or_else(|| RuntimeError::Protocol("short collective payload".into()))
}
