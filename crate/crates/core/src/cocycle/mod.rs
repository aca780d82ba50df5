//! Derivative cocycle of the perturbed map: line fields, regions near the
//! tangency orbit, leaves, and cone checks.

pub mod direction;

pub use direction::{
    angle_tan, expansion_factor, push_direction, stable_direction, unstable_direction, DirectionEstimate,
    DirectionSettings, ProjectiveDirection,
};
pub mod regions;
pub use regions::{Region, RegionAtlas, Segment};
pub mod leaf;
pub use leaf::{integrate_leaf, integrate_leaf_along, invariance_defect, LeafSegment, Orientation};
pub mod cones;
pub use cones::{
    anosov_witness, cycle_expansion_check, sample_u, tangency_order, verify_cone_conditions, AnosovWitness, ConeReport,
    ConeSample, CycleRecord, CycleReport, CycleSettings, TangencyReport, TangencySample, TAN_CAP,
};
