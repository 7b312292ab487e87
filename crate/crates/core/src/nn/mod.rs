//! Hand-differentiated building blocks for the small models.
//!
//! Every layer is a pair of free functions over flat slices: a forward pass
//! and a backward pass that accumulates parameter gradients and optionally
//! returns the input gradient.

mod layers;
mod params;

pub use layers::*;
pub use params::{ParamLayout, ParamSpec};
