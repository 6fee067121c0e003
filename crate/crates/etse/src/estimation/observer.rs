//! The remote observer driven by held output estimates.

use nalgebra::{DMatrix, DVector};

use crate::estimation::{EstimationError, JacobianMap, VectorField2, VectorMap};

/// Observer `ż = f_o(z, ŷ̃)` with state estimate `χ = h_o(z)`.
pub struct ObserverModel {
    /// Observer state dimension `q`.
    pub state_dim: usize,
    f_o: VectorField2,
    h_o: VectorMap,
    jac_h_o: Option<JacobianMap>,
}

impl std::fmt::Debug for ObserverModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObserverModel")
            .field("state_dim", &self.state_dim)
            .finish_non_exhaustive()
    }
}

impl ObserverModel {
    /// Generic nonlinear observer from closures; `jac_h_o = None` uses a
    /// central finite difference when the Jacobian of the estimate map is
    /// requested.
    pub fn new(
        state_dim: usize,
        f_o: VectorField2,
        h_o: VectorMap,
        jac_h_o: Option<JacobianMap>,
    ) -> Self {
        Self {
            state_dim,
            f_o,
            h_o,
            jac_h_o,
        }
    }

    /// Luenberger observer `χ̇ = Aχ + L(Cχ − ŷ̃)` with `χ = z` (identity
    /// estimate map).
    pub fn luenberger(
        a: DMatrix<f64>,
        c: DMatrix<f64>,
        gain: DMatrix<f64>,
    ) -> Result<Self, EstimationError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(EstimationError::DimensionMismatch {
                what: "observer matrix columns",
                expected: n,
                got: a.ncols(),
            });
        }
        if c.ncols() != n {
            return Err(EstimationError::DimensionMismatch {
                what: "stacked output matrix columns",
                expected: n,
                got: c.ncols(),
            });
        }
        if gain.nrows() != n || gain.ncols() != c.nrows() {
            return Err(EstimationError::DimensionMismatch {
                what: "injection gain rows",
                expected: n,
                got: gain.nrows(),
            });
        }
        let f_o: VectorField2 = Box::new(move |z, yhat| &a * z + &gain * (&c * z - yhat));
        let h_o: VectorMap = Box::new(|z| z.clone());
        let jac: JacobianMap = Box::new(move |z| DMatrix::identity(z.len(), z.len()));
        Ok(Self {
            state_dim: n,
            f_o,
            h_o,
            jac_h_o: Some(jac),
        })
    }

    /// Flow rate `f_o(z, ŷ̃)`.
    pub fn rates(&self, z: &DVector<f64>, yhat: &DVector<f64>) -> DVector<f64> {
        (self.f_o)(z, yhat)
    }

    /// State estimate `χ = h_o(z)`.
    pub fn estimate(&self, z: &DVector<f64>) -> DVector<f64> {
        (self.h_o)(z)
    }

    /// Jacobian `∂h_o/∂z`, exact if supplied, otherwise central finite
    /// differences with step `1e-6·(1 + |z|)`.
    pub fn estimate_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        if let Some(jac) = &self.jac_h_o {
            return jac(z);
        }
        let chi0 = self.estimate(z);
        let step = 1e-6 * (1.0 + z.norm());
        let mut jac = DMatrix::zeros(chi0.len(), z.len());
        let mut zp = z.clone();
        let mut zm = z.clone();
        for k in 0..z.len() {
            zp[k] = z[k] + step;
            zm[k] = z[k] - step;
            let diff = (self.estimate(&zp) - self.estimate(&zm)) / (2.0 * step);
            jac.column_mut(k).copy_from(&diff);
            zp[k] = z[k];
            zm[k] = z[k];
        }
        jac
    }
}
