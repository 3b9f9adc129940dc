//! Library surface of the experiment runner: config parsing, dispatch, and
//! output helpers, reusable from embedding code and integration tests. The
//! `mvsfde` binary is a thin argument-parsing wrapper around [`dispatch`].

// Validation deliberately writes `!(x > 0.0)` so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dispatch;
pub mod output;
pub mod svg;

pub use config::{parse_config, ConfigError, ExperimentKind, ModelConfig, RunConfig};
pub use dispatch::{dispatch, DispatchError, ModelRegistry, Outcome};
