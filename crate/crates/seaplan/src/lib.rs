//! Receding-horizon path planning for one surface vehicle and a pack of
//! underwater vehicles over a known seafloor.
//!
//! Each horizon is solved in three convex stages: an energy and depth
//! program with an iterated floor profile, per-step selection of the
//! acoustic link graphs, and a refinement that keeps the selected links
//! inside sonar range, followed by line-of-sight repair.

pub mod vehicle;
pub mod terrain;
pub mod qp;
pub mod graphs;
pub mod mpc;
pub mod planner;
pub mod baseline;
pub mod plot;
pub mod scenario;
