//! Error coordinates and the coordinate maps between physical states and
//! the quantities the stability analysis is phrased in.

use nalgebra::DVector;

use crate::estimation::{EstimationError, ObserverModel, PlantModel};

/// The analysis coordinates derived from a physical configuration.
#[derive(Debug, Clone)]
pub struct ErrorCoordinates {
    /// Estimation error `e = χ − x`.
    pub e: DVector<f64>,
    /// Noise-free network-induced error `ε = ŷ − y`, stacked over nodes.
    pub eps: DVector<f64>,
    /// Measured network-induced error `ε̃ = ŷ̃ − ỹ`, stacked over nodes.
    pub eps_tilde: DVector<f64>,
    /// Per-node output estimation errors `q_i = h_{p,i}(χ) − ỹ_i`.
    pub q_nodes: Vec<DVector<f64>>,
}

/// Maps a physical configuration to [`ErrorCoordinates`].
///
/// `yhat` is the held (noisy) output estimate `ŷ̃`, `what` the noise sample
/// `ŵ` captured at each node's last transmission, and `w` the current
/// measurement noise. The identity `ε̃ = ε + ŵ − w` holds bitwise because
/// `ε̃` is constructed from `ε` through it.
pub fn derived_errors(
    plant: &PlantModel,
    obs: &ObserverModel,
    x: &DVector<f64>,
    z: &DVector<f64>,
    yhat: &DVector<f64>,
    what: &DVector<f64>,
    w: &DVector<f64>,
) -> ErrorCoordinates {
    let m = plant.output_dim_total();
    assert_eq!(x.len(), plant.state_dim, "plant state dimension");
    assert_eq!(z.len(), obs.state_dim, "observer state dimension");
    assert_eq!(yhat.len(), m, "held output estimate dimension");
    assert_eq!(what.len(), m, "sampled noise dimension");
    assert_eq!(w.len(), m, "noise dimension");
    let chi = obs.estimate(z);
    let e = &chi - x;
    let y = plant.output_stacked(x);
    let eps = yhat - what - &y;
    let eps_tilde = &eps + what - w;
    let q_nodes = (0..plant.num_nodes())
        .map(|i| {
            let at = plant.output_offset(i);
            let mi = plant.output_dims[i];
            plant.output(i, &chi) - plant.output(i, x) - w.rows(at, mi)
        })
        .collect();
    ErrorCoordinates {
        e,
        eps,
        eps_tilde,
        q_nodes,
    }
}

/// Holding rate for the output estimates: the model output flow evaluated
/// on the current estimate,
///
/// ```text
///     f_h(z) = ∂h_p/∂x (χ) · f_p(χ, 0),   χ = h_o(z),
/// ```
///
/// stacked over nodes. With this choice a perfect, disturbance-free
/// estimate keeps the network error constant — no transmission is needed.
pub fn holding_rate(
    obs: &ObserverModel,
    plant: &PlantModel,
    z: &DVector<f64>,
) -> Result<DVector<f64>, EstimationError> {
    let chi = obs.estimate(z);
    if chi.len() != plant.state_dim {
        return Err(EstimationError::DimensionMismatch {
            what: "state estimate dimension",
            expected: plant.state_dim,
            got: chi.len(),
        });
    }
    let flow = plant.rates(&chi, &DVector::zeros(plant.disturbance_dim));
    if flow.len() != plant.state_dim {
        return Err(EstimationError::DimensionMismatch {
            what: "plant flow dimension",
            expected: plant.state_dim,
            got: flow.len(),
        });
    }
    let m = plant.output_dim_total();
    let mut rate = DVector::zeros(m);
    for i in 0..plant.num_nodes() {
        let jac = plant.output_jacobian(i, &chi);
        if jac.nrows() != plant.output_dims[i] || jac.ncols() != plant.state_dim {
            return Err(EstimationError::DimensionMismatch {
                what: "output Jacobian shape",
                expected: plant.output_dims[i] * plant.state_dim,
                got: jac.nrows() * jac.ncols(),
            });
        }
        let block = jac * &flow;
        rate
            .rows_mut(plant.output_offset(i), plant.output_dims[i])
            .copy_from(&block);
    }
    Ok(rate)
}

/// Observer flow rate `f_o(z, ŷ̃)`.
pub fn observer_rate(obs: &ObserverModel, z: &DVector<f64>, yhat: &DVector<f64>) -> DVector<f64> {
    obs.rates(z, yhat)
}

/// Flow of the noise-free network error in analysis coordinates:
///
/// ```text
///     g(z, e, ε, ŵ, v) = ∂h_p/∂x (x) · (f_p(χ, 0) − f_p(x, v)),
/// ```
///
/// with `x = h_o(z) − e`. Used for consistency checks of the physical
/// simulation against the analysis coordinates, not in the main loop.
/// `ε` and `ŵ` do not enter the formula; they are part of the signature
/// because the analysis treats `g` as a map on the full error state.
pub fn error_flow_g(
    plant: &PlantModel,
    obs: &ObserverModel,
    z: &DVector<f64>,
    e: &DVector<f64>,
    _eps: &DVector<f64>,
    _what: &DVector<f64>,
    v: &DVector<f64>,
) -> DVector<f64> {
    let chi = obs.estimate(z);
    let x = &chi - e;
    let diff = plant.rates(&chi, &DVector::zeros(plant.disturbance_dim)) - plant.rates(&x, v);
    let mut g = DVector::zeros(plant.output_dim_total());
    for i in 0..plant.num_nodes() {
        let jac = plant.output_jacobian(i, &x);
        let block = jac * &diff;
        g.rows_mut(plant.output_offset(i), plant.output_dims[i])
            .copy_from(&block);
    }
    g
}
