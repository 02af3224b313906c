//! Deterministic fan-out over sample chunks. Work is split into fixed-size
//! chunks and partial results are combined in chunk order, so reductions
//! are bitwise identical for any worker count. `PINNLAB_THREADS` caps the
//! number of workers.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Fixed chunk length; reduction order is per chunk index, so results do
/// not depend on how chunks are assigned to workers.
pub const CHUNK: usize = 64;

pub fn num_threads() -> usize {
    if let Ok(v) = std::env::var("PINNLAB_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(8)
}

/// Apply `f` to fixed-size chunks of `items` on up to `threads` workers and
/// return the per-chunk results in chunk order.
pub fn map_chunks<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync,
{
    let n_chunks = items.len().div_ceil(CHUNK);
    if n_chunks == 0 {
        return Vec::new();
    }
    let threads = threads.max(1).min(n_chunks);
    if threads == 1 {
        return items.chunks(CHUNK).map(|c| f(c)).collect();
    }

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..n_chunks).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= n_chunks {
                    break;
                }
                let lo = idx * CHUNK;
                let hi = (lo + CHUNK).min(items.len());
                let r = f(&items[lo..hi]);
                slots.lock().unwrap()[idx] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("all chunks computed"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_is_identical_for_any_thread_count() {
        let items: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
        let reduce = |threads: usize| -> f64 {
            map_chunks(&items, threads, |chunk| chunk.iter().sum::<f64>())
                .iter()
                .sum()
        };
        let s1 = reduce(1);
        for threads in [2, 3, 7] {
            assert_eq!(s1.to_bits(), reduce(threads).to_bits());
        }
    }

    #[test]
    fn empty_input_yields_no_chunks() {
        let out: Vec<f64> = map_chunks(&[] as &[f64], 4, |c| c.iter().sum());
        assert!(out.is_empty());
    }
}
