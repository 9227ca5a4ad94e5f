//! Fast-slow chemical reaction networks: conservation structure, slow-manifold
//! reconstruction, large-deviation Hamiltonians and Lagrangians, least-action
//! paths, and grid solvers for the associated Hamilton–Jacobi equations.

// `!(x > 0.0)` is used deliberately so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod domain;
pub mod equilibria;
pub mod exact;
pub mod hje;
pub mod kinetics;
pub mod model;
pub mod networks;
pub mod ode;
pub mod optim;
pub mod rate_functions;
pub mod stoich;

pub use equilibria::FastSlowSystem;
pub use model::{parse_network, Network, Reaction, Timescale};
pub use stoich::{build_structure, StoichStructure};
