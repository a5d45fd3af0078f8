pub mod dual;
pub mod error;
pub mod extrude;
pub mod field;
pub mod fit;
pub mod model;
pub mod sdf2d;
pub mod shapeio;
pub mod sketch;
pub mod stump;

pub use error::{Error, Result};
