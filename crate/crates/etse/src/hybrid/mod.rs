//! Hybrid state, hybrid time, solution arcs, and the closed-loop simulation
//! driver.
//!
//! A hybrid solution evolves on a hybrid time domain: continuous time `t`
//! advances during flows, and the jump counter `j` increments at
//! transmission events while `t` stands still. [`HybridArc`] records a
//! simulated solution as ordered samples indexed by [`HybridTimePoint`]
//! together with one [`EventRecord`] per jump.

mod closed_loop;
pub mod integrator;
mod simulate;

pub use closed_loop::{ClosedLoop, DisturbanceSignal, NoiseModel};
pub use integrator::{
    integrate_flow, FlowError, FlowOutcome, FlowResult, GuardFn, Tolerances,
};
pub use simulate::{simulate, simulate_with, SimOptions, SimulationError};

use nalgebra::DVector;

/// A point in hybrid time: `t` seconds of flow and `j` accumulated jumps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridTimePoint {
    pub t: f64,
    pub j: u64,
}

/// Dimensions of the flattened simulation state.
///
/// The flat layout is `[x | z | yhat | what | tau | eta]`. With observer
/// redundancy enabled (`copies > 1`), the `z` and `yhat` blocks stack
/// `copies` identical observers and held outputs back to back; copy 0 is the
/// canonical one used for derived quantities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateLayout {
    /// Plant state dimension `n`.
    pub n: usize,
    /// Observer state dimension `q` (single copy).
    pub q: usize,
    /// Per-node measurement dimensions `m_i`.
    pub m_per_node: Vec<usize>,
    /// Number of independently integrated observer copies (1 = normal).
    pub copies: usize,
}

impl StateLayout {
    pub fn new(n: usize, q: usize, m_per_node: Vec<usize>, copies: usize) -> Self {
        assert!(copies >= 1, "at least one observer copy is required");
        Self {
            n,
            q,
            m_per_node,
            copies,
        }
    }

    /// Total measurement dimension `m = sum_i m_i`.
    pub fn m_total(&self) -> usize {
        self.m_per_node.iter().sum()
    }

    /// Number of sensor nodes `N`.
    pub fn num_nodes(&self) -> usize {
        self.m_per_node.len()
    }

    /// Offset of node `i`'s slice inside a stacked measurement vector.
    pub fn m_offset(&self, node: usize) -> usize {
        self.m_per_node[..node].iter().sum()
    }

    /// Length of the flattened state vector.
    pub fn flat_len(&self) -> usize {
        self.n
            + self.copies * (self.q + self.m_total())
            + self.m_total()
            + 2 * self.num_nodes()
    }

    /// Index of `tau[node]` in the flat vector.
    pub fn tau_index(&self, node: usize) -> usize {
        self.tau_start() + node
    }

    /// Index of `eta[node]` in the flat vector.
    pub fn eta_index(&self, node: usize) -> usize {
        self.eta_start() + node
    }

    fn z_start(&self) -> usize {
        self.n
    }
    fn yhat_start(&self) -> usize {
        self.n + self.copies * self.q
    }
    fn what_start(&self) -> usize {
        self.yhat_start() + self.copies * self.m_total()
    }
    fn tau_start(&self) -> usize {
        self.what_start() + self.m_total()
    }
    fn eta_start(&self) -> usize {
        self.tau_start() + self.num_nodes()
    }
}

/// Full simulation state at one instant.
///
/// * `x` — plant state
/// * `z` — observer state (all copies concatenated if redundancy is on)
/// * `yhat` — held noisy output estimates, stacked over nodes (then copies)
/// * `what` — measurement-noise samples latched at each node's last
///   transmission
/// * `tau` — per-node local timers (time since last transmission)
/// * `eta` — per-node dynamic trigger states
#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub yhat: DVector<f64>,
    pub what: DVector<f64>,
    pub tau: DVector<f64>,
    pub eta: DVector<f64>,
}

impl HybridState {
    /// Flattens into the `[x | z | yhat | what | tau | eta]` vector used by
    /// the integrator.
    pub fn to_flat(&self, layout: &StateLayout) -> DVector<f64> {
        debug_assert_eq!(self.x.len(), layout.n);
        debug_assert_eq!(self.z.len(), layout.copies * layout.q);
        debug_assert_eq!(self.yhat.len(), layout.copies * layout.m_total());
        debug_assert_eq!(self.what.len(), layout.m_total());
        debug_assert_eq!(self.tau.len(), layout.num_nodes());
        debug_assert_eq!(self.eta.len(), layout.num_nodes());
        let mut flat = DVector::zeros(layout.flat_len());
        let mut at = 0;
        for block in [&self.x, &self.z, &self.yhat, &self.what, &self.tau, &self.eta] {
            flat.rows_mut(at, block.len()).copy_from(block);
            at += block.len();
        }
        flat
    }

    /// Reassembles from a flat vector.
    pub fn from_flat(flat: &DVector<f64>, layout: &StateLayout) -> Self {
        assert_eq!(flat.len(), layout.flat_len());
        let seg = |start: usize, len: usize| DVector::from(flat.rows(start, len));
        Self {
            x: seg(0, layout.n),
            z: seg(layout.z_start(), layout.copies * layout.q),
            yhat: seg(layout.yhat_start(), layout.copies * layout.m_total()),
            what: seg(layout.what_start(), layout.m_total()),
            tau: seg(layout.tau_start(), layout.num_nodes()),
            eta: seg(layout.eta_start(), layout.num_nodes()),
        }
    }

    /// Observer copy `k` (copy 0 is the canonical one).
    pub fn z_copy(&self, layout: &StateLayout, k: usize) -> DVector<f64> {
        DVector::from(self.z.rows(k * layout.q, layout.q))
    }

    /// Held output block of observer copy `k`.
    pub fn yhat_copy(&self, layout: &StateLayout, k: usize) -> DVector<f64> {
        let m = layout.m_total();
        DVector::from(self.yhat.rows(k * m, m))
    }

    /// Node `i`'s slice of the canonical held output block.
    pub fn yhat_node(&self, layout: &StateLayout, node: usize) -> DVector<f64> {
        DVector::from(self.yhat.rows(layout.m_offset(node), layout.m_per_node[node]))
    }
}

/// One transmission event.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    /// Sensor node that transmitted (0-based).
    pub node: usize,
    /// Flow time of the jump.
    pub t: f64,
    /// Jump counter value *after* this jump.
    pub jump_index: u64,
    /// Time since this node's previous transmission. For a node's first
    /// recorded event this is the time since the start of the run (the
    /// initial condition counts as the conventional zeroth transmission).
    pub inter_event_time: f64,
    /// Dynamic trigger state immediately before the jump.
    pub eta_before: f64,
    /// Reset value assigned at the jump.
    pub eta_after: f64,
}

/// A simulated hybrid solution.
///
/// Samples are ordered lexicographically in `(t, j)`: `t` strictly increases
/// between events, and at each event two samples share the same `t` with
/// consecutive `j` (pre- and post-jump states).
#[derive(Debug, Clone)]
pub struct HybridArc {
    pub layout: StateLayout,
    pub samples: Vec<(HybridTimePoint, HybridState)>,
    pub events: Vec<EventRecord>,
}

impl HybridArc {
    /// Final recorded hybrid time.
    pub fn final_time(&self) -> HybridTimePoint {
        self.samples
            .last()
            .map(|(tp, _)| *tp)
            .expect("an arc holds at least its initial sample")
    }

    /// Final recorded state.
    pub fn final_state(&self) -> &HybridState {
        &self.samples.last().expect("nonempty arc").1
    }

    /// Event times of one node, in order.
    pub fn node_event_times(&self, node: usize) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| e.node == node)
            .map(|e| e.t)
            .collect()
    }

    /// Pre- and post-jump states for event `k` (matched by jump index).
    pub fn jump_states(&self, jump_index: u64) -> Option<(&HybridState, &HybridState)> {
        let post_pos = self
            .samples
            .iter()
            .position(|(tp, _)| tp.j == jump_index)?;
        if post_pos == 0 {
            return None;
        }
        let (pre_tp, pre) = &self.samples[post_pos - 1];
        let (post_tp, post) = &self.samples[post_pos];
        if pre_tp.j + 1 == post_tp.j && (pre_tp.t - post_tp.t).abs() == 0.0 {
            Some((pre, post))
        } else {
            None
        }
    }

    /// Largest sample norm of the estimation error `|h_o(z) - x|` over
    /// samples with `t >= t_from`, using the canonical observer copy and the
    /// supplied output map.
    pub fn sup_error_norm_from(
        &self,
        t_from: f64,
        h_o: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    ) -> f64 {
        self.samples
            .iter()
            .filter(|(tp, _)| tp.t >= t_from)
            .map(|(_, s)| (h_o(&s.z_copy(&self.layout, 0)) - &s.x).norm())
            .fold(0.0, f64::max)
    }
}
