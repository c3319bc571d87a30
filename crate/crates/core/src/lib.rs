pub mod error;
pub mod instances;
pub mod linalg;
pub mod relaxations;
pub mod rounding;
pub mod verification;
