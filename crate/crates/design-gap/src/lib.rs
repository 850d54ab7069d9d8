//! Spectral-gap certification of scrambling depth for layered architectures
//! of Haar-random two-site gates.
//!
//! The library has three layers of machinery:
//!
//! - [`perm`] and [`spectral`] build averaged-gate projectors over
//!   permutation labels and compute subleading singular values of layer and
//!   block transfer operators, both densely and matrix-free.
//! - [`architecture`] and [`cluster`] provide the combinatorial side: layered
//!   gate layouts, connected-block decompositions, and the weighted
//!   cluster-merging multigraph together with its rewriting and reduction
//!   algorithms (Euler loops, tree and log-log layer decompositions).
//! - [`bounds`] and [`search`] evaluate the closed-form depth bounds and run
//!   the stochastic tooling (worst-case annealing, nondeterministic-ensemble
//!   statistics) that cross-validates them.

pub mod architecture;
pub mod bounds;
pub mod cluster;
mod dsu;
pub mod perm;
pub mod search;
pub mod spectral;
