//! The bundled LAPACK routines use deep stack frames; route every dense
//! factorization through a worker thread with a generous stack so library
//! calls behave the same from 2 MB test threads and the main thread.

const STACK_BYTES: usize = 512 * 1024 * 1024;

pub fn with_big_stack<T, F>(f: F) -> T
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    std::thread::scope(|scope| {
        std::thread::Builder::new()
            .stack_size(STACK_BYTES)
            .spawn_scoped(scope, f)
            .expect("spawn lapack worker")
            .join()
            .expect("lapack worker panicked")
    })
}
