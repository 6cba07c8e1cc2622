//! Neural inverse linear blend skinning for articulated 2D shapes.
//!
//! A rest-pose occupancy grid is reused for any deformed pose by mapping
//! query points back to rest space through a pose-conditioned, learned
//! blend of bone transforms.

pub mod dataset;
pub mod error;
pub mod geometry;
pub mod io;
pub mod lbs;
pub mod nilbs;
pub mod occupancy;
pub mod render;
pub mod trainer;
pub mod weightnet;

pub use error::{Error, Result};
