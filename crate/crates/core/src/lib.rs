//! Optimistic synchronization of a split AHB bus between a simulator and a
//! hardware accelerator.

pub mod ahb;
pub mod fabric;
pub mod channel;
pub mod engine;
pub mod perfmodel;
pub mod sync;
