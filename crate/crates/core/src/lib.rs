//! Sparse multi-type Erdős–Rényi graphs: simulation, exact compound-Poisson
//! component laws at small scale, and moderate-deviation rate functions.

pub mod connectivity;
pub mod cpp;
pub mod error;
pub mod experiments;
pub mod model;
pub mod numeric;
pub mod rates;
pub mod sim;
pub mod tree;
pub mod typevec;

pub use error::{Error, Result, ValidationIssue, Warning};
pub use model::{validate_model, ModelSpec, ValidatedModel};
pub use typevec::TypeVector;
