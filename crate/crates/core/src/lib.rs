//! Electroadhesive clutch modelling: electrostatic force laws, dielectric
//! relaxation, rough-surface contact, engagement and release dynamics, and
//! processing of measured force traces.

pub mod contact;
pub mod dynamics;
pub mod electrostatics;
pub mod error;
pub mod numerics;
pub mod polarization;
pub mod traces;

pub use error::{Error, Result};
