//! Discrete multi-marginal optimal transport for two-molecule Coulomb systems.
//!
//! * [`measures`]: discrete measures, couplings and seeded grid builders.
//! * [`costs`]: cost families, dense cost tensors and small-`eta` expansion terms.
//! * [`exact`]: simplex solver with dual potentials, splitting-set certificates,
//!   Monge diagnostics and uniqueness probes.
//! * [`entropic`]: log-domain multi-marginal Sinkhorn.
//! * [`dissociation`]: SCE energies, dissociation curves and expansion checks.
//! * [`cli`]: the `sce-transport` front end.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod costs;
pub mod dissociation;
pub mod entropic;
pub mod exact;
mod lp;
pub mod measures;
