//! p-adaptive discontinuous Galerkin solver on polygonal meshes for the
//! monodomain equation coupled with cubic or Barreto–Cressman ionic models.
//!
//! The crate is organised bottom-up: [`mesh`] and [`quadrature`] provide
//! geometry, [`basis`] the hierarchical modal basis, [`assembly`] the
//! block-sparse operators, [`timestepping`] the Crank–Nicolson integrator,
//! [`indicator`] and [`adaptivity`] the error-driven degree control, and
//! [`simulation`] glues them into a time loop driven by [`config`].

pub mod adaptivity;
pub mod analysis;
pub mod assembly;
pub mod basis;
pub mod config;
pub mod error;
pub mod indicator;
pub mod ionic;
pub mod linalg;
pub mod mesh;
pub mod meshgen;
pub mod output;
pub mod quadrature;
pub mod scenarios;
pub mod simulation;
pub mod timestepping;

pub use error::{ConfigError, Error, MeshError, Result, SolverError};

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Mat2 = nalgebra::Matrix2<f64>;
