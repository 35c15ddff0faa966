//! A minimal fork-join helper. `POINTDET_THREADS` caps the fan-out; work
//! is split into contiguous chunks and results are stitched back in input
//! order, so the outcome is identical for any worker count.

pub fn worker_count(items: usize) -> usize {
    let cap = std::env::var("POINTDET_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0);
    let hw = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    cap.unwrap_or(hw).min(items.max(1))
}

pub fn parallel_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync,
{
    let workers = worker_count(items.len());
    if workers <= 1 {
        return items.into_iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let mut out = Vec::with_capacity(items.len());
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        let mut rest = items;
        while !rest.is_empty() {
            let tail = rest.split_off(chunk.min(rest.len()));
            let mine = std::mem::replace(&mut rest, tail);
            let f = &f;
            handles.push(scope.spawn(move || mine.into_iter().map(f).collect::<Vec<U>>()));
        }
        for handle in handles {
            out.extend(handle.join().expect("worker panicked"));
        }
    });
    out
}

/// Like [`parallel_map`], but each worker builds one context up front and
/// threads it through its chunk. Lets batched inference construct a model
/// per worker instead of per item; the context type itself need not be
/// `Send` because it never crosses threads.
pub fn parallel_map_with<T, U, C, I, F>(items: Vec<T>, init: I, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    I: Fn() -> C + Sync,
    F: Fn(&mut C, T) -> U + Sync,
{
    let workers = worker_count(items.len());
    if workers <= 1 {
        let mut ctx = init();
        return items.into_iter().map(|x| f(&mut ctx, x)).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let mut out = Vec::with_capacity(items.len());
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        let mut rest = items;
        while !rest.is_empty() {
            let tail = rest.split_off(chunk.min(rest.len()));
            let mine = std::mem::replace(&mut rest, tail);
            let (init, f) = (&init, &f);
            handles.push(scope.spawn(move || {
                let mut ctx = init();
                mine.into_iter().map(|x| f(&mut ctx, x)).collect::<Vec<U>>()
            }));
        }
        for handle in handles {
            out.extend(handle.join().expect("worker panicked"));
        }
    });
    out
}
