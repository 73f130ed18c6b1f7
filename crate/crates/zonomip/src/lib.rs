//! Mixed-integer MPC motion planning over hybrid zonotope free-space
//! representations.
//!
//! The library is organized around a pipeline: maps describing the
//! obstacle-free space are loaded ([`map_ingest`]) and converted to hybrid
//! zonotopes ([`set_core`]), the MPC problem is assembled as a multi-stage
//! MIQP ([`mpc`]), and solved by a branch-and-bound solver ([`bnb`]) whose QP
//! relaxations are handled by a structure-exploiting interior-point method
//! ([`qp`]). Region reachability tables ([`reach`]) prune the search.
//! [`sim`] runs closed-loop receding-horizon simulations and benchmarks.

pub mod bnb;
pub mod map_ingest;
pub mod mpc;
pub mod qp;
pub mod reach;
pub mod set_core;
pub mod sim;
