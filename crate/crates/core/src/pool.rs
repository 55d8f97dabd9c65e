//! Execution abstraction for parallelizable operations.
//!
//! All heavy operations split their work into a task count that depends only
//! on the problem (never on the worker count) and combine task results in
//! task order. A pool may run tasks on any number of threads in any order;
//! because each task is a pure function of its index writing only its own
//! result slot, the combined result is bit-identical regardless of
//! scheduling. The std companion crate provides a threaded implementation;
//! [`SerialPool`] runs everything inline.

use alloc::vec::Vec;

pub trait TaskPool: Sync {
    /// Runs `task(i)` exactly once for every `i in 0..count`, in any order,
    /// on any number of threads. Must not return until every task has
    /// completed and its effects are visible to the caller.
    fn run_boxed(&self, count: usize, task: &(dyn Fn(usize) + Sync));
}

/// Runs every task inline on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct SerialPool;

impl TaskPool for SerialPool {
    fn run_boxed(&self, count: usize, task: &(dyn Fn(usize) + Sync)) {
        for i in 0..count {
            task(i);
        }
    }
}

struct SlotWriter<T>(*mut Option<T>);

// Task i writes only slot i, exactly once, through a raw element pointer,
// so concurrent writes never alias and no `&mut` to the backing buffer is
// formed while tasks run.
unsafe impl<T: Send> Sync for SlotWriter<T> {}
unsafe impl<T: Send> Send for SlotWriter<T> {}

impl<T> Clone for SlotWriter<T> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<T> Copy for SlotWriter<T> {}

impl<T> SlotWriter<T> {
    /// Caller must guarantee no concurrent access to slot `i`.
    unsafe fn put(self, i: usize, value: T) {
        self.0.add(i).write(Some(value));
    }
}

/// Evaluates `task(i)` for `i in 0..count` on `pool` and returns results in
/// index order.
pub fn map_tasks<T, F>(pool: &dyn TaskPool, count: usize, task: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let mut slots: Vec<Option<T>> = Vec::with_capacity(count);
    slots.resize_with(count, || None);
    let writer = SlotWriter(slots.as_mut_ptr());
    pool.run_boxed(count, &move |i| {
        let value = task(i);
        unsafe {
            writer.put(i, value);
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.expect("pool must run every task"))
        .collect()
}

/// Fixed chunk length used by operations that sum per-element quantities.
/// Chunk boundaries are part of each operation's definition, so results do
/// not depend on how many workers execute the chunks.
pub const SUM_CHUNK: usize = 4096;

/// Number of fixed-size chunks needed to cover `n` elements.
pub fn chunk_count(n: usize, chunk: usize) -> usize {
    n.div_ceil(chunk)
}

/// Sums `value(i)` over `i in 0..n` by fixed-size chunks, adding chunk
/// totals in chunk order.
pub fn chunked_sum<F>(pool: &dyn TaskPool, n: usize, value: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks = chunk_count(n, SUM_CHUNK);
    let partials = map_tasks(pool, chunks, |c| {
        let lo = c * SUM_CHUNK;
        let hi = (lo + SUM_CHUNK).min(n);
        let mut acc = 0.0;
        for i in lo..hi {
            acc += value(i);
        }
        acc
    });
    partials.into_iter().sum()
}
