//! shockforge: constructive shock formation for 1-D n x n strictly
//! hyperbolic conservation laws with small smooth data.
//!
//! Pipeline: normal-form coordinates -> smooth characteristic evolution ->
//! blowup-system solve past the gradient catastrophe -> cusp geometry and
//! pre-shock curve -> Picard shock fitting with Rankine-Hugoniot closure ->
//! independent finite-volume / weak-form / scaling-law validation.

pub mod error;
pub mod fit;
pub mod interp;
pub mod linalg;
pub mod normalize;
pub mod poly;
pub mod system;

pub use error::{Error, Result};
