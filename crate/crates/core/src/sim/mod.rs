//! Physical simulation feeding the protocol with time-tag packets.

mod world;

pub use world::{hbt_tags, StationConfig, World, WorldConfig, WorldError, WorldStats};
