pub mod action;
pub mod agent;
pub mod environment;
pub mod error;
pub mod harness;
pub mod learning;
pub mod math;
pub mod model;
pub mod oracles;
pub mod perception;
pub mod planning;
