//! Stage drivers behind the `canopy3d` command.
//!
//! Every stage reads the previous stage's directory under the output root and replaces
//! its own directory atomically, so reruns are cheap to reason about and a failed
//! stage leaves the previous results untouched.

pub mod config;
pub mod layout;
pub mod stages;

pub use config::PipelineConfig;
pub use layout::Layout;
