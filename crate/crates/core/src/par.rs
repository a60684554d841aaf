//! Scoped-thread work distribution with deterministic output.
//!
//! Tasks write disjoint buffers, so scheduling order never affects results;
//! any cross-task reduction is done by the caller in task-index order.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

static WORKER_OVERRIDE: AtomicUsize = AtomicUsize::new(0);

/// Cap the worker count used for parallel sections (0 restores the
/// automatic choice). Results are identical either way; this is a resource
/// knob for dataset generation.
pub fn set_worker_override(workers: usize) {
    WORKER_OVERRIDE.store(workers, Ordering::Relaxed);
}

pub(crate) fn worker_count() -> usize {
    match WORKER_OVERRIDE.load(Ordering::Relaxed) {
        0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        n => n,
    }
}

static SCRATCH_POOL: Mutex<Vec<Vec<f64>>> = Mutex::new(Vec::new());

/// Borrow a reusable f64 scratch buffer of at least `len` elements.
///
/// Contents are unspecified on entry; callers must fully overwrite the range
/// they read back. Pooling avoids re-faulting tens of megabytes of column
/// buffers on every convolution call.
pub(crate) fn with_scratch<R>(len: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    let mut buf = SCRATCH_POOL.lock().expect("scratch pool poisoned").pop().unwrap_or_default();
    if buf.len() < len {
        buf.resize(len, 0.0);
    }
    let out = f(&mut buf[..len]);
    let mut pool = SCRATCH_POOL.lock().expect("scratch pool poisoned");
    // Keep the pool bounded; one buffer per worker is all steady state needs.
    if pool.len() < 2 * worker_count() {
        pool.push(buf);
    }
    out
}

/// Run `f(task_index, task)` for every task, spread over the available cores.
pub(crate) fn run_tasks<T, F>(tasks: Vec<T>, f: F)
where
    T: Send,
    F: Fn(usize, T) + Sync,
{
    let workers = worker_count().min(tasks.len());
    if workers <= 1 {
        for (i, t) in tasks.into_iter().enumerate() {
            f(i, t);
        }
        return;
    }
    let queue = Mutex::new(tasks.into_iter().enumerate());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let next = queue.lock().expect("task queue poisoned").next();
                match next {
                    Some((i, task)) => f(i, task),
                    None => break,
                }
            });
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn all_tasks_run_exactly_once() {
        let hits = AtomicUsize::new(0);
        let mut out = vec![0usize; 37];
        let tasks: Vec<(usize, &mut usize)> = out.iter_mut().enumerate().collect();
        run_tasks(tasks, |_, (i, slot)| {
            *slot = i + 1;
            hits.fetch_add(1, Ordering::SeqCst);
        });
        assert_eq!(hits.load(Ordering::SeqCst), 37);
        assert!(out.iter().enumerate().all(|(i, &v)| v == i + 1));
    }
}
