//! Finite-difference laboratory for caloric measure of parabolic operators
//! in divergence and nondivergence form on Lipschitz cylinders.

pub mod discretize;
pub mod geometry;
pub mod measure;
pub mod verify;

pub use discretize::{builtin_field, CoefficientField, Extent, FieldKind, Form, Grid, GridSpec, NodeKind, StepSystem, TimeSlice};
pub use geometry::{BoundaryPatch, DomainSpec, GraphProfile, SpaceTimePoint};
