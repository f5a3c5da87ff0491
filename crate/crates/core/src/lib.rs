//! Placement planning, batch scheduling and discrete-event simulation for
//! retrieval-augmented generation served from offloaded memory.

pub mod cli;
pub mod cost_model;
pub mod domain;
pub mod memory_planner;
pub mod prefetch;
pub mod scenario;
pub mod scheduler;
pub mod simulator;
pub mod units;
pub mod workload;
