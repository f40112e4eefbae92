pub mod camera;
pub mod circle;
pub mod config;
pub mod conic;
pub mod error;
pub mod filter;
pub mod needle;
pub mod observation;
pub mod pose;
pub mod records;
pub mod simulator;
