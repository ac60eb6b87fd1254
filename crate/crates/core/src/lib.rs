//! Two-sample testing of convex order between discrete measures.

pub mod cli;
pub mod error;
pub mod hypothesis;
pub mod lp;
pub mod matrix;
pub mod measure;
pub mod order_oracle;
pub mod projection;
pub mod transport;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use measure::DiscreteMeasure;
