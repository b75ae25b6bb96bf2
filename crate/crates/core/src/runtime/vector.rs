//! Distributed arrays with owner-only writes.
//!
//! Every cell lives on the locality that owns its index. Loads, stores,
//! compare-exchange and atomic add are only legal at the owner; anything
//! else is an [`RuntimeError::OwnershipViolation`]. Non-owners read through
//! [`PartitionedVector::read`], which fetches the value with a remote action.

use std::fmt;
use std::marker::PhantomData;
use std::ops::Range;
use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::sync::Arc;

use super::{Ctx, PartitionMap, RuntimeError, FETCH_TAG};
use crate::transport::LocalityId;

mod sealed {
    pub trait Sealed {}
    impl Sealed for i64 {}
    impl Sealed for f64 {}
}

/// Element types a [`PartitionedVector`] can hold.
pub trait CellValue: sealed::Sealed + Copy + PartialEq + fmt::Debug + Send + Sync + 'static {
    #[doc(hidden)]
    type Cell: Send + Sync;
    #[doc(hidden)]
    fn new_cell(v: Self) -> Self::Cell;
    #[doc(hidden)]
    fn load(c: &Self::Cell) -> Self;
    #[doc(hidden)]
    fn store(c: &Self::Cell, v: Self);
    #[doc(hidden)]
    fn to_le(self) -> [u8; 8];
    #[doc(hidden)]
    fn from_le(b: [u8; 8]) -> Self;
}

impl CellValue for i64 {
    type Cell = AtomicI64;
    fn new_cell(v: Self) -> AtomicI64 {
        AtomicI64::new(v)
    }
    fn load(c: &AtomicI64) -> Self {
        c.load(Ordering::Acquire)
    }
    fn store(c: &AtomicI64, v: Self) {
        c.store(v, Ordering::Release)
    }
    fn to_le(self) -> [u8; 8] {
        self.to_le_bytes()
    }
    fn from_le(b: [u8; 8]) -> Self {
        i64::from_le_bytes(b)
    }
}

impl CellValue for f64 {
    type Cell = AtomicU64;
    fn new_cell(v: Self) -> AtomicU64 {
        AtomicU64::new(v.to_bits())
    }
    fn load(c: &AtomicU64) -> Self {
        f64::from_bits(c.load(Ordering::Acquire))
    }
    fn store(c: &AtomicU64, v: Self) {
        c.store(v.to_bits(), Ordering::Release)
    }
    fn to_le(self) -> [u8; 8] {
        self.to_le_bytes()
    }
    fn from_le(b: [u8; 8]) -> Self {
        f64::from_le_bytes(b)
    }
}

/// Type-erased view used by the built-in fetch action.
pub(crate) trait VectorSource: Send + Sync {
    fn fetch(&self, here: LocalityId, range: Range<usize>) -> Result<Vec<u8>, RuntimeError>;
}

struct Inner<T: CellValue> {
    id: u32,
    map: PartitionMap,
    // One segment per locality; `None` for localities hosted elsewhere.
    segments: Vec<Option<Box<[T::Cell]>>>,
}

impl<T: CellValue> Inner<T> {
    #[inline]
    fn cell(&self, here: LocalityId, i: usize) -> Result<&T::Cell, RuntimeError> {
        if let Some(Some(seg)) = self.segments.get(here.index()) {
            let start = here.index() * self.map.block();
            if let Some(c) = i.checked_sub(start).and_then(|off| seg.get(off)) {
                return Ok(c);
            }
        }
        Err(self.access_error(here, i))
    }

    #[cold]
    fn access_error(&self, here: LocalityId, i: usize) -> RuntimeError {
        if i >= self.map.len() {
            return RuntimeError::IndexOutOfRange {
                index: i,
                len: self.map.len(),
            };
        }
        let owner = self.map.owner(i);
        if owner != here {
            return RuntimeError::OwnershipViolation {
                vector: self.id,
                index: i,
                owner,
                here,
            };
        }
        RuntimeError::NotHosted(here)
    }
}

impl<T: CellValue> VectorSource for Inner<T> {
    fn fetch(&self, here: LocalityId, range: Range<usize>) -> Result<Vec<u8>, RuntimeError> {
        let mut out = Vec::with_capacity(range.len() * 8);
        for i in range {
            out.extend_from_slice(&T::load(self.cell(here, i)?).to_le());
        }
        Ok(out)
    }
}

/// A length-`n` array block-distributed by a [`PartitionMap`].
pub struct PartitionedVector<T: CellValue> {
    inner: Arc<Inner<T>>,
    _marker: PhantomData<T>,
}

impl<T: CellValue> Clone for PartitionedVector<T> {
    fn clone(&self) -> Self {
        PartitionedVector {
            inner: Arc::clone(&self.inner),
            _marker: PhantomData,
        }
    }
}

impl<T: CellValue> fmt::Debug for PartitionedVector<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PartitionedVector")
            .field("id", &self.inner.id)
            .field("len", &self.inner.map.len())
            .finish()
    }
}

impl<T: CellValue> PartitionedVector<T> {
    pub(crate) fn new(id: u32, map: PartitionMap, hosted: &[LocalityId], fill: T) -> (Self, Arc<dyn VectorSource>) {
        let mut segments: Vec<Option<Box<[T::Cell]>>> = (0..map.localities()).map(|_| None).collect();
        for &h in hosted {
            segments[h.index()] = Some(map.range(h).map(|_| T::new_cell(fill)).collect());
        }
        let inner = Arc::new(Inner { id, map, segments });
        let source: Arc<dyn VectorSource> = inner.clone();
        (
            PartitionedVector {
                inner,
                _marker: PhantomData,
            },
            source,
        )
    }

    pub fn len(&self) -> usize {
        self.inner.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.map.is_empty()
    }

    pub fn map(&self) -> &PartitionMap {
        &self.inner.map
    }

    #[inline]
    pub fn owner(&self, i: usize) -> LocalityId {
        self.inner.map.owner(i)
    }

    /// Indices owned by the calling locality.
    pub fn local_range(&self, ctx: &Ctx<'_>) -> Range<usize> {
        self.inner.map.range(ctx.here())
    }

    #[inline]
    pub fn load(&self, ctx: &Ctx<'_>, i: usize) -> Result<T, RuntimeError> {
        Ok(T::load(self.inner.cell(ctx.here(), i)?))
    }

    #[inline]
    pub fn store(&self, ctx: &Ctx<'_>, i: usize, v: T) -> Result<(), RuntimeError> {
        T::store(self.inner.cell(ctx.here(), i)?, v);
        Ok(())
    }

    /// Sets every locally owned cell.
    pub fn fill_local(&self, ctx: &Ctx<'_>, v: T) -> Result<(), RuntimeError> {
        for i in self.local_range(ctx) {
            self.store(ctx, i, v)?;
        }
        Ok(())
    }

    /// Reads any index, fetching from the owner if needed. Blocks, so it may
    /// only be called from a driver.
    pub fn read(&self, ctx: &Ctx<'_>, i: usize) -> Result<T, RuntimeError> {
        if i < self.len() && self.owner(i) == ctx.here() {
            return self.load(ctx, i);
        }
        Ok(self.fetch(ctx, i..i + 1)?[0])
    }

    /// Copies the whole vector to the caller. Driver only.
    pub fn gather(&self, ctx: &Ctx<'_>) -> Result<Vec<T>, RuntimeError> {
        let mut out = Vec::with_capacity(self.len());
        for k in 0..self.inner.map.localities() {
            let r = self.inner.map.range(LocalityId(k as u32));
            if r.is_empty() {
                continue;
            }
            if k == ctx.here().index() {
                for i in r {
                    out.push(self.load(ctx, i)?);
                }
            } else {
                out.extend(self.fetch(ctx, r)?);
            }
        }
        Ok(out)
    }

    fn fetch(&self, ctx: &Ctx<'_>, range: Range<usize>) -> Result<Vec<T>, RuntimeError> {
        if ctx.in_handler() {
            return Err(RuntimeError::BlockingInHandler("remote vector read"));
        }
        if range.end > self.len() {
            return Err(RuntimeError::IndexOutOfRange {
                index: range.end - 1,
                len: self.len(),
            });
        }
        let owner = self.owner(range.start);
        let mut payload = Vec::with_capacity(20);
        payload.extend_from_slice(&self.inner.id.to_le_bytes());
        payload.extend_from_slice(&(range.start as u64).to_le_bytes());
        payload.extend_from_slice(&(range.len() as u64).to_le_bytes());
        let reply = ctx.remote_action(owner, FETCH_TAG, payload)?.wait_reply()?;
        if reply.len() != range.len() * 8 {
            return Err(RuntimeError::Protocol(format!(
                "fetch returned {} bytes for {} cells",
                reply.len(),
                range.len()
            )));
        }
        Ok(reply
            .chunks_exact(8)
            .map(|c| T::from_le(c.try_into().unwrap()))
            .collect())
    }
}

impl PartitionedVector<i64> {
    /// Owner-only compare-and-swap; `Ok(true)` when this call installed
    /// `desired`.
    #[inline]
    pub fn compare_exchange(&self, ctx: &Ctx<'_>, i: usize, expected: i64, desired: i64) -> Result<bool, RuntimeError> {
        Ok(self
            .inner
            .cell(ctx.here(), i)?
            .compare_exchange(expected, desired, Ordering::AcqRel, Ordering::Acquire)
            .is_ok())
    }

    /// Owner-only CAS returning the previous value on failure.
    #[inline]
    pub fn compare_exchange_value(
        &self,
        ctx: &Ctx<'_>,
        i: usize,
        expected: i64,
        desired: i64,
    ) -> Result<Result<i64, i64>, RuntimeError> {
        Ok(self
            .inner
            .cell(ctx.here(), i)?
            .compare_exchange(expected, desired, Ordering::AcqRel, Ordering::Acquire))
    }
}

impl PartitionedVector<f64> {
    /// Owner-only atomic `+=`.
    #[inline]
    pub fn atomic_add(&self, ctx: &Ctx<'_>, i: usize, delta: f64) -> Result<(), RuntimeError> {
        let cell = self.inner.cell(ctx.here(), i)?;
        let mut cur = cell.load(Ordering::Relaxed);
        loop {
            let next = (f64::from_bits(cur) + delta).to_bits();
            match cell.compare_exchange_weak(cur, next, Ordering::AcqRel, Ordering::Relaxed) {
                Ok(_) => return Ok(()),
                Err(seen) => cur = seen,
            }
        }
    }
}

pub(crate) fn decode_fetch(payload: &[u8]) -> Result<(u32, Range<usize>), RuntimeError> {
    if payload.len() != 20 {
        return Err(RuntimeError::Protocol(format!(
            "fetch payload of {} bytes",
            payload.len()
        )));
    }
    let id = u32::from_le_bytes(payload[0..4].try_into().unwrap());
    let start = u64::from_le_bytes(payload[4..12].try_into().unwrap()) as usize;
    let len = u64::from_le_bytes(payload[12..20].try_into().unwrap()) as usize;
    Ok((id, start..start + len))
}
