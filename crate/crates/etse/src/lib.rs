//! Simulator and co-design toolkit for distributed event-triggered state
//! estimation over packet-based networks.
//!
//! A plant is observed by `N` sensor nodes. Each node holds a local copy of a
//! remote observer, extrapolates the expected measurement between
//! transmissions, and decides from local information alone when to send a
//! fresh measurement over the network. The toolkit simulates the resulting
//! hybrid dynamics (continuous flow interleaved with transmission jumps),
//! provides the trigger-design arithmetic (guaranteed minimum inter-event
//! times, dynamic trigger rates, noise-aware resets), and designs/certifies
//! linear observers through a small feasibility SDP.
//!
//! Module map:
//!
//! * [`hybrid`] — hybrid state/arc types, adaptive flow integration with
//!   guard localization, the closed-loop jump driver.
//! * [`estimation`] — plant and observer models, measurement-error
//!   coordinates, holding (extrapolation) dynamics.
//! * [`triggering`] — minimum inter-event-time closed form and its ODE
//!   oracle, dynamic trigger rates, reset policies.
//! * [`lti`] — the linear case study (three coupled oscillators, two sensor
//!   nodes), LMI assembly/verification, projected-subgradient feasibility
//!   solver.
//! * [`harness`] — scenario configuration, deterministic measurement noise,
//!   simulation runs with CSV/JSON reporting, inter-event statistics, ISS
//!   sweeps, Lyapunov monitoring.

pub mod estimation;
pub mod harness;
pub mod hybrid;
pub mod lti;
pub mod triggering;
