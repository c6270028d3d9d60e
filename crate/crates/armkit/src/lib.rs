//! Host side of the two-IMU motion-analytics system: storage, simulator,
//! replay, session driver, HTTP service and the `armkit` command line.

pub mod analysis;
pub mod cli;
pub mod driver;
pub mod ingest;
pub mod registry;
pub mod replay;
pub mod service;
pub mod session_csv;
pub mod sim;
pub mod store;
pub mod transport;
