//! Alexandrov-sense Monge–Ampère machinery: radial extremal profiles, a
//! subgradient-cell discrete operator, Dirichlet and hyperplane-obstacle
//! solvers, and an expanding-domain scheme for entire solutions.

pub mod error;
pub mod dirichlet;
pub mod entire;
pub mod discrete;
pub mod geometry;
pub mod lattice;
pub mod measure;
pub mod obstacle;
pub mod quadrature;
pub mod radial;
pub mod sparse;
pub mod specialfn;
pub mod verify;

pub use error::{Error, Result};
pub use specialfn::{dn0, log_gamma, omega, sharp_constant, unit_ball_volume, Dimension};
