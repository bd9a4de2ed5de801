//! Batch front end for the Cartan-space engine: manifest parsing, the
//! verification suite, and tensor dumps.

pub mod checks;
pub mod manifest;
pub mod registry;
pub mod report;
pub mod sampling;
pub mod tensor;

pub use manifest::{parse_manifest, validate, Manifest, ManifestError, Resolved};
pub use report::{run_verify, RunOptions, VerificationReport};
pub use tensor::{run_tensor, TensorReport};
