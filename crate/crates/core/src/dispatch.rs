//! Execution strategy for independent per-site work within a round.
//!
//! Tasks must not share mutable state and results are returned in task order,
//! so any implementation yields identical outcomes.

use alloc::vec::Vec;

pub trait Dispatch: Sync {
    fn map<T, R, F>(&self, tasks: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send;
}

/// Runs tasks one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Dispatch for Sequential {
    fn map<T, R, F>(&self, tasks: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        tasks.into_iter().map(f).collect()
    }
}
