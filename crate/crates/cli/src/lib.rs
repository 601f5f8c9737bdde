//! Pipeline commands behind the `itlm` binary: scene synthesis, two-stage
//! training, inference, evaluation and climatology, all driven by one JSON
//! run configuration.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_climo, cmd_eval, cmd_infer, cmd_synth, cmd_train, Ctx, Reference, Stage};
pub use config::RunConfig;
pub use error::{CliError, CliResult};

/// Keep freed memory in the process instead of returning it to the kernel.
/// Training allocates and frees large activation buffers every step, and
/// page faults on fresh mappings otherwise dominate the step time.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator thresholds and is called before
    // any worker threads exist.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}
