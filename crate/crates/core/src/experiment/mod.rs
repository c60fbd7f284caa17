//! Experiment configuration, sweeps and output files.

/// Version tag shared by every CSV/manifest header.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `# funcreg-lab v<version> schema=<name>` comment line, newline included.
pub fn schema_line(name: &str) -> String {
    format!("# funcreg-lab v{VERSION} schema={name}\n")
}

pub mod config;
pub mod embedding;
pub mod output;
pub mod sweep;

pub use config::{parse_config, EmbedSettings, ExperimentConfig, Profile, SweepAxis};
pub use embedding::{run_embedding, EmbedOutcome, Tuned};
pub use output::write_sweep_outputs;
pub use sweep::{run_sweep, RunData, RunRecord, RunStatus, SweepOutcome, SweepRow};

/// Run `f` on a dedicated pool of `jobs` threads, or on the global pool.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> crate::Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| crate::Error::invalid(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
