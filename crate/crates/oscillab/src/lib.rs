//! oscillab: a numerics laboratory for the constructive machinery behind
//! oscillatory integral estimates.
//!
//! The crate builds and tests, at desk scale, the objects that drive modern
//! work on Bochner-Riesz and restriction-type problems:
//!
//! * the phase `phi(x,t;w) = (lambda/t) sqrt(lambda^2 + |x - t w|^2)` with
//!   all of its closed-form derivatives, the pseudo-conformal change of
//!   variables, and the induction scale ladder ([`phase`]);
//! * grid operators: the Bochner-Riesz multiplier, the extension-like
//!   operator `H^lambda` and the convolution forms it descends from
//!   ([`operators`]);
//! * scale-`r` wave packet decompositions with caps, partitions of unity,
//!   core lines and tubes, two-scale packet comparison ([`wavepacket`]);
//! * Gauss maps, subspace angles, polynomial varieties and tangency,
//!   the frequency pushforward with its Jacobian, grains and multigrains
//!   ([`geom`]);
//! * discrete polynomial partitioning and the cellular/algebraic dichotomy
//!   ([`partition`]);
//! * broad norms with Grassmannian minimization and the exponent
//!   arithmetic ([`broadnorm`]);
//! * a reproducible experiment harness with CSV/JSON reports ([`explab`]).
//!
//! Every experiment is driven by deterministic, counter-based random
//! streams ([`rng`]), so reports are byte-identical across reruns.
//!
//! See the `examples/` directory for one runnable program per capability,
//! and the `oscillab` binary for the experiment CLI.

pub mod broadnorm;
pub mod error;
pub mod explab;
pub mod geom;
pub mod grid;
pub mod operators;
pub mod partition;
pub mod phase;
pub mod rng;
pub mod wavepacket;

pub use error::{Error, Result};
