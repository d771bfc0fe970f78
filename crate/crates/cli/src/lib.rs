//! Library half of the `hires` command: config loading, run manifests,
//! subcommand bodies and the scaling benchmark.

pub mod bench;
pub mod commands;
pub mod config;
pub mod manifest;

pub use config::ConfigError;

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> anyhow::Result<R> {
    match threads {
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f)),
        None => Ok(f()),
    }
}
