//! Passivity analysis for stochastic linear time-invariant systems.

pub mod cli;
pub mod demo;
pub mod error;
pub mod generator;
pub mod interconnect;
pub mod linalg;
pub mod model;
pub mod observability;
pub mod passivity;
pub mod simulate;
pub mod storage;

pub use error::{Error, Result};
pub use linalg::{SymMatrix, TolerancePolicy};
pub use model::{ControlSpec, Model, PhsForm, PhsParts, QuadraticStorage, Sltis, SystemDocument};
