//! Scenario files, the runner behind the `cmdf` binary and the example
//! topology search.

pub mod error;
pub mod infer;
pub mod run;
pub mod scenario;
pub mod span;

pub use error::{CliError, Issue};
pub use run::{run_scenario, Manifest, RunOptions};
pub use scenario::{Analysis, Scenario};
