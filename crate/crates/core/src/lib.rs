pub mod audit;
pub mod auth;
pub mod autoscaler;
pub(crate) mod b64;
pub mod broker;
pub mod catalog;
pub mod cli;
pub mod clock;
pub mod deployment;
pub mod gateway;
pub mod worker;
