//! Assembly of the full networked estimation loop in physical coordinates:
//! plant, observer (optionally one redundant copy per sensor), held output
//! estimates, per-node timers and trigger variables, measurement noise, and
//! process disturbance.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::estimation::{ObserverModel, PlantModel};
use crate::hybrid::{HybridState, StateLayout};
use crate::triggering::{eta_reset, psi_rate_with, NodeTriggerParams, TriggerFunctions};

/// Errors raised while assembling a closed loop.
#[derive(Debug, Error)]
pub enum ClosedLoopError {
    #[error("got {got} trigger parameter records for {expected} sensor nodes")]
    NodeCountMismatch { expected: usize, got: usize },
    #[error("node {node}: output weight is {got}x{got} but the node measures {expected} values")]
    OutputDimMismatch {
        node: usize,
        expected: usize,
        got: usize,
    },
    #[error("observer estimate has dimension {got}, plant state has {expected}")]
    EstimateDimMismatch { expected: usize, got: usize },
    #[error("noise model provides {got} amplitudes for {expected} nodes")]
    NoiseShape { expected: usize, got: usize },
    #[error("noise amplitudes must be finite and >= 0")]
    InvalidAmplitude,
    #[error("noise dwell must be finite and > 0 when any amplitude is nonzero")]
    InvalidDwell,
    #[error("disturbance value {index} has dimension {got}, expected {expected}")]
    DisturbanceShape {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("disturbance times must be finite, >= 0, and strictly increasing")]
    DisturbanceTimes,
    #[error("node {node}: {source}")]
    Trigger {
        node: usize,
        source: crate::triggering::TriggerConfigError,
    },
}

/// Piecewise-constant measurement noise, reproducible from a seed.
///
/// Time is split into dwell intervals `[k·dwell, (k+1)·dwell)`. Within one
/// interval each node's noise vector is constant; its value is drawn from a
/// counter-based generator keyed on `(seed, node, k)`, so any sample can be
/// recomputed independently of history — identical configurations produce
/// bit-identical noise.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    /// Per-node amplitude bound `w̄_i`; samples are uniform on `[-w̄, w̄]`
    /// per component.
    pub amplitudes: Vec<f64>,
    /// Dwell time between fresh draws.
    pub dwell: f64,
    pub seed: u64,
}

fn splitmix(mut h: u64) -> u64 {
    h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^= h >> 31;
    h
}

impl NoiseModel {
    /// Noise-free model (any dwell; it is never consulted).
    pub fn zero(num_nodes: usize) -> Self {
        Self {
            amplitudes: vec![0.0; num_nodes],
            dwell: 1.0,
            seed: 0,
        }
    }

    /// Same amplitude for every node.
    pub fn uniform(num_nodes: usize, amplitude: f64, dwell: f64, seed: u64) -> Self {
        Self {
            amplitudes: vec![amplitude; num_nodes],
            dwell,
            seed,
        }
    }

    /// Whether any node has nonzero noise.
    pub fn is_active(&self) -> bool {
        self.amplitudes.iter().any(|&a| a > 0.0)
    }

    /// Dwell-interval index containing `t`. The tiny forward nudge resolves
    /// boundary points to the interval they open (simulation segments never
    /// straddle a boundary, so this only disambiguates the boundary itself).
    pub fn interval_of(&self, t: f64) -> u64 {
        debug_assert!(t >= 0.0);
        ((t / self.dwell) + 1e-9).floor() as u64
    }

    /// Node `node`'s noise vector during dwell interval `interval`.
    pub fn node_sample(&self, node: usize, interval: u64, dim: usize) -> DVector<f64> {
        let amp = self.amplitudes[node];
        if amp == 0.0 {
            return DVector::zeros(dim);
        }
        let mut key = splitmix(self.seed);
        key = splitmix(key ^ (node as u64 ^ 0x5bf0_3635));
        key = splitmix(key ^ interval);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        DVector::from_fn(dim, |_, _| rng.random_range(-amp..=amp))
    }

    /// All node noise vectors stacked, for dwell interval `interval`.
    pub fn stacked_sample(&self, dims: &[usize], interval: u64) -> DVector<f64> {
        let total = dims.iter().sum();
        let mut w = DVector::zeros(total);
        let mut at = 0;
        for (node, &dim) in dims.iter().enumerate() {
            w.rows_mut(at, dim)
                .copy_from(&self.node_sample(node, interval, dim));
            at += dim;
        }
        w
    }

    /// Stacked noise in effect at time `t`.
    pub fn stacked_at(&self, dims: &[usize], t: f64) -> DVector<f64> {
        self.stacked_sample(dims, self.interval_of(t))
    }
}

/// Process disturbance `v` entering the plant flow.
#[derive(Debug, Clone)]
pub enum DisturbanceSignal {
    Zero,
    /// `v(t) = values[k]` for `t ∈ [times[k], times[k+1])`; zero before
    /// `times[0]`, `values.last()` after the final breakpoint.
    PiecewiseConstant {
        times: Vec<f64>,
        values: Vec<DVector<f64>>,
    },
}

impl DisturbanceSignal {
    fn validate(&self, dim: usize) -> Result<(), ClosedLoopError> {
        match self {
            Self::Zero => Ok(()),
            Self::PiecewiseConstant { times, values } => {
                if times.len() != values.len()
                    || times.is_empty()
                    || !times.iter().all(|t| t.is_finite() && *t >= 0.0)
                    || !times.windows(2).all(|w| w[0] < w[1])
                {
                    return Err(ClosedLoopError::DisturbanceTimes);
                }
                for (index, v) in values.iter().enumerate() {
                    if v.len() != dim {
                        return Err(ClosedLoopError::DisturbanceShape {
                            index,
                            expected: dim,
                            got: v.len(),
                        });
                    }
                }
                Ok(())
            }
        }
    }

    /// Value in effect at time `t`.
    pub fn value_at(&self, t: f64, dim: usize) -> DVector<f64> {
        match self {
            Self::Zero => DVector::zeros(dim),
            Self::PiecewiseConstant { times, values } => {
                match times.iter().rposition(|&tk| tk <= t) {
                    Some(k) => values[k].clone(),
                    None => DVector::zeros(dim),
                }
            }
        }
    }

    /// Time points at which the value changes (sorted).
    pub fn breakpoints(&self) -> &[f64] {
        match self {
            Self::Zero => &[],
            Self::PiecewiseConstant { times, .. } => times,
        }
    }
}

/// The assembled closed loop. Immutable once built; the simulation driver
/// owns all mutable run state.
pub struct ClosedLoop {
    pub plant: PlantModel,
    pub observer: ObserverModel,
    pub nodes: Vec<NodeTriggerParams>,
    /// Optional per-node overrides of the trigger shaping functions;
    /// defaults use the built-in quadratic/linear/Euclidean forms.
    pub funcs: Vec<TriggerFunctions>,
    pub noise: NoiseModel,
    pub disturbance: DisturbanceSignal,
    pub layout: StateLayout,
}

impl std::fmt::Debug for ClosedLoop {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClosedLoop")
            .field("layout", &self.layout)
            .field("nodes", &self.nodes.len())
            .finish_non_exhaustive()
    }
}

impl ClosedLoop {
    pub fn new(
        plant: PlantModel,
        observer: ObserverModel,
        nodes: Vec<NodeTriggerParams>,
        noise: NoiseModel,
        disturbance: DisturbanceSignal,
    ) -> Result<Self, ClosedLoopError> {
        let n_nodes = plant.num_nodes();
        if nodes.len() != n_nodes {
            return Err(ClosedLoopError::NodeCountMismatch {
                expected: n_nodes,
                got: nodes.len(),
            });
        }
        for (i, params) in nodes.iter().enumerate() {
            params
                .validate()
                .map_err(|source| ClosedLoopError::Trigger { node: i, source })?;
            if params.output_dim() != plant.output_dims[i] {
                return Err(ClosedLoopError::OutputDimMismatch {
                    node: i,
                    expected: plant.output_dims[i],
                    got: params.output_dim(),
                });
            }
        }
        let probe = observer.estimate(&DVector::zeros(observer.state_dim));
        if probe.len() != plant.state_dim {
            return Err(ClosedLoopError::EstimateDimMismatch {
                expected: plant.state_dim,
                got: probe.len(),
            });
        }
        if noise.amplitudes.len() != n_nodes {
            return Err(ClosedLoopError::NoiseShape {
                expected: n_nodes,
                got: noise.amplitudes.len(),
            });
        }
        if !noise.amplitudes.iter().all(|a| a.is_finite() && *a >= 0.0) {
            return Err(ClosedLoopError::InvalidAmplitude);
        }
        if noise.is_active() && !(noise.dwell.is_finite() && noise.dwell > 0.0) {
            return Err(ClosedLoopError::InvalidDwell);
        }
        disturbance.validate(plant.disturbance_dim)?;
        let layout = StateLayout::new(
            plant.state_dim,
            observer.state_dim,
            plant.output_dims.clone(),
            1,
        );
        let funcs = (0..n_nodes).map(|_| TriggerFunctions::default()).collect();
        Ok(Self {
            plant,
            observer,
            nodes,
            funcs,
            noise,
            disturbance,
            layout,
        })
    }

    /// Switches to redundant-observer mode: one independently integrated
    /// observer copy per sensor node in addition to the remote one. All
    /// copies receive identical inputs, so they remain synchronized; the
    /// mode exists to test exactly that claim.
    pub fn with_redundant_observers(mut self) -> Self {
        self.layout.copies = self.num_nodes() + 1;
        self
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Observer copy that node `node`'s sensor-local logic reads: its own
    /// copy in redundant mode, the single shared copy otherwise.
    pub fn node_copy(&self, node: usize) -> usize {
        if self.layout.copies > 1 {
            node + 1
        } else {
            0
        }
    }

    /// Initial state with timers and trigger variables at zero, the sampled
    /// noise at zero, and held outputs consistent with the initial estimate:
    /// `ŷ̃(0) = h_p(h_o(z0))`. Observer copies all start from `z0`.
    pub fn initial_state(&self, x0: &DVector<f64>, z0: &DVector<f64>) -> HybridState {
        let chi = self.observer.estimate(z0);
        let yhat0 = self.plant.output_stacked(&chi);
        self.initial_state_with(x0, z0, &yhat0, &DVector::zeros(self.layout.m_total()))
    }

    /// Initial state with explicit held outputs and sampled noise (single
    /// copies; replicated across redundant copies).
    pub fn initial_state_with(
        &self,
        x0: &DVector<f64>,
        z0: &DVector<f64>,
        yhat0: &DVector<f64>,
        what0: &DVector<f64>,
    ) -> HybridState {
        let copies = self.layout.copies;
        let m = self.layout.m_total();
        let mut z = DVector::zeros(copies * self.layout.q);
        let mut yhat = DVector::zeros(copies * m);
        for c in 0..copies {
            z.rows_mut(c * self.layout.q, self.layout.q).copy_from(z0);
            yhat.rows_mut(c * m, m).copy_from(yhat0);
        }
        HybridState {
            x: x0.clone(),
            z,
            yhat,
            what: what0.clone(),
            tau: DVector::zeros(self.num_nodes()),
            eta: DVector::zeros(self.num_nodes()),
        }
    }

    /// Per-node trigger signals `(q_i, ε̃_i)` given the noise `w` currently
    /// in effect, each taken from the node's local observer copy.
    pub fn node_trigger_signals(
        &self,
        state: &HybridState,
        w: &DVector<f64>,
    ) -> Vec<(DVector<f64>, DVector<f64>)> {
        (0..self.num_nodes())
            .map(|i| {
                let ci = self.node_copy(i);
                let chi = self.observer.estimate(&state.z_copy(&self.layout, ci));
                let at = self.layout.m_offset(i);
                let mi = self.layout.m_per_node[i];
                let ytilde = self.plant.output(i, &state.x) + w.rows(at, mi);
                let q = self.plant.output(i, &chi) - &ytilde;
                let yhat_local = state
                    .yhat
                    .rows(ci * self.layout.m_total() + at, mi)
                    .into_owned();
                let eps_tilde = yhat_local - ytilde;
                (q, eps_tilde)
            })
            .collect()
    }

    /// Flow field of the flattened state for one smooth segment, with the
    /// measurement noise `w` and disturbance `v` frozen (segments never
    /// straddle a noise dwell boundary or a disturbance breakpoint).
    ///
    /// Block rates: `ẋ = f_p(x, v)`; per observer copy `ż = f_o(z, ŷ̃)` and
    /// `ŷ̃̇ = f_h(z)` (the holding function); `ŵ̇ = 0`; `τ̇ = 1`;
    /// `η̇_i = Ψ_i` from the node's local copy.
    pub fn flow_rates(
        &self,
        w: DVector<f64>,
        v: DVector<f64>,
    ) -> impl Fn(f64, &DVector<f64>) -> DVector<f64> + '_ {
        let layout = self.layout.clone();
        move |_t, flat| {
            let state = HybridState::from_flat(flat, &layout);
            let copies = layout.copies;
            let m = layout.m_total();
            let dx = self.plant.rates(&state.x, &v);
            let mut dz = DVector::zeros(copies * layout.q);
            let mut dyhat = DVector::zeros(copies * m);
            let mut estimates = Vec::with_capacity(copies);
            for c in 0..copies {
                let zc = state.z_copy(&layout, c);
                let yhat_c = state.yhat_copy(&layout, c);
                dz.rows_mut(c * layout.q, layout.q)
                    .copy_from(&self.observer.rates(&zc, &yhat_c));
                let chi = self.observer.estimate(&zc);
                let flow0 = self
                    .plant
                    .rates(&chi, &DVector::zeros(self.plant.disturbance_dim));
                for i in 0..self.num_nodes() {
                    let block = self.plant.output_jacobian(i, &chi) * &flow0;
                    dyhat
                        .rows_mut(c * m + layout.m_offset(i), layout.m_per_node[i])
                        .copy_from(&block);
                }
                estimates.push(chi);
            }
            let mut deta = DVector::zeros(self.num_nodes());
            for i in 0..self.num_nodes() {
                let ci = self.node_copy(i);
                let at = layout.m_offset(i);
                let mi = layout.m_per_node[i];
                let ytilde = self.plant.output(i, &state.x) + w.rows(at, mi);
                let q = self.plant.output(i, &estimates[ci]) - &ytilde;
                let eps_tilde = state.yhat.rows(ci * m + at, mi).into_owned() - ytilde;
                deta[i] = psi_rate_with(
                    &self.nodes[i],
                    &self.funcs[i],
                    &q,
                    &eps_tilde,
                    state.tau[i],
                    state.eta[i],
                );
            }
            let d = HybridState {
                x: dx,
                z: dz,
                yhat: dyhat,
                what: DVector::zeros(m),
                tau: DVector::from_element(self.num_nodes(), 1.0),
                eta: deta,
            };
            d.to_flat(&layout)
        }
    }

    /// Transmission of `node`: its held output (in every observer copy) is
    /// replaced by the currently measured output `ỹ = h_p(x) + w`, the noise
    /// sample is latched, the timer restarts, and the trigger variable takes
    /// its reset value computed from the pre-jump innovation. Everything
    /// else is untouched.
    pub fn apply_jump(
        &self,
        state: &HybridState,
        node: usize,
        w_node: &DVector<f64>,
    ) -> HybridState {
        let mut next = state.clone();
        let at = self.layout.m_offset(node);
        let mi = self.layout.m_per_node[node];
        let m = self.layout.m_total();
        let ytilde = self.plant.output(node, &state.x) + w_node;
        let ci = self.node_copy(node);
        let eps_tilde = state.yhat.rows(ci * m + at, mi).into_owned() - &ytilde;
        for c in 0..self.layout.copies {
            next.yhat.rows_mut(c * m + at, mi).copy_from(&ytilde);
        }
        next.what.rows_mut(at, mi).copy_from(w_node);
        next.tau[node] = 0.0;
        next.eta[node] = eta_reset(&self.nodes[node], &eps_tilde);
        next
    }
}
