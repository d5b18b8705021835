//! Multi-agent flocking laboratory.
//!
//! Point-mass swarm dynamics, time-varying communication graphs, a
//! centralized expert, delayed-aggregation and recurrent graph neural
//! controllers, and an imitation-learning pipeline with dataset aggregation.

pub mod autodiff;
pub mod comm_graph;
pub mod controllers;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod expert;
pub mod io;
pub mod parallel;
pub mod params;
pub mod perception;
pub mod training;
pub mod vec2;

pub use error::{Error, Result};
pub use vec2::Vec2;
