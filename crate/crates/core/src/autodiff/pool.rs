//! Thread-local recycling of large `f64` buffers.
//!
//! Training allocates and frees the same set of multi-megabyte
//! activations on every batch. Fresh pages from the OS fault on first
//! touch, so dropped tapes hand their buffers back here and later
//! allocations of similar size reuse them.

use std::cell::RefCell;

/// Buffers smaller than this go straight to the allocator.
const MIN_POOLED: usize = 1 << 14;
/// Upper bound on retained memory per thread, in `f64`s (1 GiB).
const MAX_RETAINED: usize = 1 << 27;

#[derive(Default)]
struct Pool {
    free: Vec<Vec<f64>>,
    retained: usize,
}

thread_local! {
    static POOL: RefCell<Pool> = RefCell::new(Pool::default());
}

fn take(n: usize) -> Option<Vec<f64>> {
    if n < MIN_POOLED {
        return None;
    }
    POOL.with(|p| {
        let mut p = p.borrow_mut();
        let best = p
            .free
            .iter()
            .enumerate()
            .filter(|(_, v)| v.capacity() >= n && v.capacity() <= 2 * n)
            .min_by_key(|(_, v)| v.capacity())
            .map(|(i, _)| i)?;
        let v = p.free.swap_remove(best);
        p.retained -= v.capacity();
        Some(v)
    })
}

/// A zero-filled buffer of length `n`.
pub(crate) fn zeroed(n: usize) -> Vec<f64> {
    match take(n) {
        Some(mut v) => {
            v.clear();
            v.resize(n, 0.0);
            v
        }
        None => vec![0.0; n],
    }
}

/// Collects an exact-size iterator, reusing a pooled buffer when one fits.
pub(crate) fn collect<I: ExactSizeIterator<Item = f64>>(it: I) -> Vec<f64> {
    match take(it.len()) {
        Some(mut v) => {
            v.clear();
            v.extend(it);
            v
        }
        None => it.collect(),
    }
}

/// Returns a buffer for reuse.
pub(crate) fn recycle(v: Vec<f64>) {
    let cap = v.capacity();
    if cap < MIN_POOLED {
        return;
    }
    POOL.with(|p| {
        let mut p = p.borrow_mut();
        if p.retained + cap <= MAX_RETAINED {
            p.retained += cap;
            p.free.push(v);
        }
    });
}
