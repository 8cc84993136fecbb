//! Flapping-wing vehicle simulation on the Lie group R^3 x SO(3), an offline
//! trajectory-optimization expert and imitation-learned feedback policies.

pub mod cli;
pub mod config;
pub mod error;
pub mod liegroup;
pub mod dynamics;
pub mod integrate;
pub mod io;
pub mod wingkin;
pub mod optim;
pub mod expert;
pub mod datagen;
pub mod evalharness;
pub mod policy;
pub mod imitation;

pub use error::{Error, Result};
