//! Stability, wall-and-chamber analysis and a Hermitian-Einstein solver for
//! quiver bundles built from line summands.
//!
//! The crate is organised bottom-up:
//!
//! - [`quiver`]: quivers and the split quiver-bundle model
//! - [`stability`]: exact slope calculus and classification
//! - [`chambers`]: walls and chambers in the tau-plane
//! - [`geometry`]: the round sphere fixture, spectral Laplacian, Hopf degree table
//! - [`endo`]: pointwise Hermitian endomorphism algebra and inequality oracles
//! - [`solver`]: the epsilon-continuity solver for the scalar equations on P1
//! - [`problem`]: the JSON problem-file format

pub mod chambers;
pub mod endo;
pub mod geometry;
pub mod instances;
pub mod problem;
pub mod quiver;
pub mod solver;
pub mod stability;

pub use quiver::{
    build_quiver, validate_model, ArrowData, BaseFixture, QBundleModel, Quiver, Section, Summand,
    ValidatedModel, VertexBundleData,
};
pub use stability::{
    classify, deg_slope, enumerate_subobjects, max_slope_subobject, Classification, Rational,
    SlopeReport, StabilityParams, SubPart, Subject, SubobjectSpec,
};
