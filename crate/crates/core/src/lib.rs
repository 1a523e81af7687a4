pub mod analysis;
pub mod assembly;
pub mod element;
pub mod error;
pub mod experiments;
pub mod mesh;
pub mod poly;
pub mod projectors;
pub mod quadrature;
pub mod reconstruction;
pub mod report;
pub mod solver;
pub mod sparse;
pub mod spaces;
pub mod verify;

pub use element::MixedElement;
pub use error::{Error, Result};
