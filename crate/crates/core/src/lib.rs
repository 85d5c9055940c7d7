pub mod constraints;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod linearization;
pub mod lqr;
pub mod math;
pub mod mechanism;
pub mod minimal;
pub mod systems;
pub mod trajectory;

pub use error::{Error, Result};
