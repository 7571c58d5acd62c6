//! Microscopic simulation of mixed human/robot-vehicle (RV) traffic at unsignalized
//! intersections, and the measurement pipeline that turns simulated runs into quadratic
//! fundamental diagrams.
//!
//! The numeric kernels (car-following, area-based flow measurement, least-squares fitting)
//! are generic over [`Scalar`], so they run in `f32` or `f64`. The simulator and the sweep
//! pipeline are concrete over `f64`; the aliases below name the `f64` instantiations used
//! throughout.

pub mod cli;
pub mod coordination;
pub mod dynamics;
pub mod experiment;
pub mod fdfit;
pub mod geometry;
pub mod measurement;
pub mod report;

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar used by the numeric kernels.
pub trait Scalar: Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static {
    /// Converts an `f64` literal. Panics only for values the type cannot represent at all.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub type IdmParams = dynamics::IdmParams<f64>;
pub type FlowSample = measurement::FlowSample<f64>;
pub type QuadraticFit = fdfit::QuadraticFit<f64>;
pub type Trace = measurement::Trace<f64>;

pub use coordination::{Decision, Grant};
pub use dynamics::{Phase, VehicleClass, VehicleState, WorldState};
pub use experiment::{ExperimentPlan, RunConfig, RunResult};
pub use geometry::{ClosedNetwork, IntersectionKind, IntersectionSpec, MovementId, Turn};
pub use measurement::DetectorConfig;
