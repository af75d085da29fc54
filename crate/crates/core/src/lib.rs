//! Score-based diffusion laboratory: closed-form score families, the
//! probability-flow ODE with likelihood and sensitivity augmentation, the gauge
//! freedom condition, and intrinsic-dimension estimation from singular values.

pub mod density;
pub mod error;
pub mod fields;
pub mod flow;
pub mod gauge;
pub mod idest;
pub mod io;
pub mod quadrature;
pub mod rng;
pub mod scenarios;
pub mod schedule;

pub use density::{Diffusion, ManifoldKind, ManifoldSpec, MixtureDensity, Scratch};
pub use error::{Error, Result};
pub use fields::{FieldSpec, MatrixOfTime, RemainderSpec, TimeScale, VectorField};
pub use flow::{Augment, Direction, IntegratorConfig, Method, TrajectoryRecord};
pub use schedule::{BetaSchedule, ScheduleConfig, ScheduleKind, Spacing, TimeGrid};
