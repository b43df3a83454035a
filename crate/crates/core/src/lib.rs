//! Numerical laboratory for the multiscale energetics of structured
//! deformations.
//!
//! A structured deformation is a pair `(g, G)`: a macroscopic deformation
//! `g` (possibly with jumps) and a field `G` recording the part of the
//! gradient attained without disarrangements; the disarrangement tensor is
//! `M = nabla g - G`. The crate builds SBV approximating staircases for such
//! pairs, convolves their jump measures with smooth compactly supported
//! kernels, and evaluates three levels of non-local energy:
//!
//! * the averaged interfacial energy of an approximation `u_n` at horizon `r`,
//! * its upscaled limit `n -> inf`, evaluated directly on the limit measure,
//! * the localized limit `r -> 0`, a purely local bulk + interfacial form.
//!
//! On top sit the relaxed cell densities (exact convex closed form and
//! laminate upper bounds) and the crystal-plasticity layer: slip systems,
//! composition of invertible structured deformations, slip-neutrality, and
//! lattice-periodic disarrangement energies.

pub mod cell;
pub mod crystal;
pub mod density;
pub mod energy;
pub mod error;
pub mod geom;
pub mod io;
pub mod kinematics;
pub mod measure;
pub mod quad;

pub use error::{Result, SdError};
pub use geom::{BoxRegion, Domain, Facet, Point, Region};
pub use measure::{Kernel, Profile, VectorMeasure};
