//! Synthetic forest plots, simulated lidar scans and point-set regression of
//! plot wood volume, with conversion to aboveground biomass and carbon.

pub mod biomass;
pub mod cloud;
pub mod config;
pub mod dataset;
pub mod encoders;
pub mod forest;
pub mod lidar;
pub mod mesh;
pub mod seed;
pub mod training;
