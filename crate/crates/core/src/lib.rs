pub mod classes;
pub mod error;
pub mod evaluation;
pub mod gp;
pub mod kernels;
pub mod octree;
pub mod pipeline;
pub mod pointcloud;
pub mod semantic_map;
pub mod synthetic;

pub use classes::{ClassInfo, ClassSet};
pub use error::{GpsmError, Result};
