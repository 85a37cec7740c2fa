pub mod campaign;
pub mod config;
pub mod exec;
pub mod trial;
