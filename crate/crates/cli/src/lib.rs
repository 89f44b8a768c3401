//! Shared plumbing of the `stampd`, `stampctl` and `stampsim` binaries.

pub mod config;
pub mod ctl;
pub mod daemon;
pub mod exit;
pub mod sim;

/// Logs to stderr; `RUST_LOG` overrides the default `warn` level.
pub fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
}
