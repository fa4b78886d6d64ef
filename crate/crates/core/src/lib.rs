//! Lifelong task and motion planning with learned, per-controller samplers.

pub mod cli;
pub mod config;
pub mod diffusion;
pub mod domains;
pub mod geom;
pub mod harness;
pub mod lifelong;
pub mod nn;
pub mod planner;
pub mod samplers;
pub mod world;
