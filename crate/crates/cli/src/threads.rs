//! Threaded work pool: scoped threads pulling task indices from a shared
//! counter. Joins before returning, which is what makes the disjoint-slot
//! writes inside `map_tasks` safe to read afterwards.

use std::sync::atomic::{AtomicUsize, Ordering};

use pointfit_core::pool::TaskPool;
use pointfit_core::SerialPool;

pub struct ThreadPool {
    workers: usize,
}

impl ThreadPool {
    pub fn new(workers: usize) -> Self {
        ThreadPool {
            workers: workers.max(1),
        }
    }
}

impl TaskPool for ThreadPool {
    fn run_boxed(&self, count: usize, task: &(dyn Fn(usize) + Sync)) {
        let threads = self.workers.min(count);
        if threads <= 1 {
            for i in 0..count {
                task(i);
            }
            return;
        }
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= count {
                        break;
                    }
                    task(i);
                });
            }
        });
    }
}

/// One worker means no thread overhead at all.
pub fn make_pool(workers: usize) -> Box<dyn TaskPool> {
    if workers <= 1 {
        Box::new(SerialPool)
    } else {
        Box::new(ThreadPool::new(workers))
    }
}
