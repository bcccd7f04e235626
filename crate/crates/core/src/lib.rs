//! Tracked freehand 3D ultrasound volumetry toolkit.
//!
//! The crate covers the full desk-scale pipeline: tracked-sweep data model and
//! I/O ([`trackio`]), voxel compounding of synchronized sweeps ([`compound`]),
//! a small encoder-decoder segmentation network trained from scratch
//! ([`neuralseg`]), volume computation ([`volumetry`]), observer agreement
//! statistics ([`obstats`]), and an analytic phantom simulator that stands in
//! for clinical ground truth ([`phantom`]).
//!
//! All types are immutable after construction and all operations are pure
//! functions; anything parallel reduces in a fixed order so results are
//! bit-identical regardless of thread count.

pub mod compound;
pub mod error;
pub mod geom;
pub mod neuralseg;
pub mod obstats;
pub mod phantom;
pub mod rng;
pub mod trackio;
pub mod volumetry;

pub use error::{Error, Result};
