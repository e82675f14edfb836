//! Numerics for the exponential family `E_κ(z) = exp(z) + κ`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod address;
pub mod dynamics;
pub mod export;
pub mod numeric;
pub mod parameter;
pub mod rays;
pub mod verify;

pub use address::{enumerate_periodic, ExternalAddress};
pub use dynamics::{Parameter, PeriodicOrbit, Rect, Stability};
pub use numeric::C64;
