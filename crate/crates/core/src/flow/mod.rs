//! Continuous-flow view of the unrolled cascade.
//!
//! A K-cascade network is read as K forward Euler steps of
//! `dx/dt = lambda(t) * (score(x) - A^T (A x - y) / sigma^2)` over a time
//! grid `0 = t_0 < ... < t_K = 1`. This module owns that grid, the step
//! sizes it implies, the straight-line target trajectory and the losses
//! that align cascade outputs with it.

mod energy;
mod schedule;
mod velocity;

pub use energy::{analytic_velocity, energy, euler_step, GaussianPrior};
pub use schedule::{ground_parameters, time_schedule, CascadeSchedule, TimeSchedule};
pub use velocity::{
    flat_loss, ideal_state, ideal_velocity, predicted_velocity, velocity_loss, VelocityNorm,
    VelocityPair,
};
