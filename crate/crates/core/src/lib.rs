//! Constructive analysis on manifolds with conical ends.
//!
//! * [`graph`]: weighted graphs and their Cheeger, spectral-gap and
//!   isoperimetric constants.
//! * [`covering`]: good coverings, their associated graphs and the patching
//!   constants that glue local inequalities into global ones.
//! * [`cone`]: discretized metric cones `dr² + r² g_S`, balls, nets, annular
//!   coverings and volume-doubling scans.
//! * [`spectral`]: heat kernels, Gaussian-bound fits, Green's functions,
//!   Poincaré constants of domain pairs and indicial roots.
//! * [`toric`]: Gorenstein toric cones, crepant triangulations, support
//!   functions and the invariant `A` of a compactly supported Kähler class.
//! * [`hypersurface`]: weighted homogeneous and Brieskorn–Pham links.

pub mod cone;
pub mod covering;
pub mod error;
pub mod graph;
pub mod hypersurface;
pub mod linalg;
pub mod spectral;
pub mod toric;

pub use error::{Error, Result};
