//! The observed system: flow map, per-node output maps, and their Jacobians.

use nalgebra::{DMatrix, DVector};

use crate::estimation::{EstimationError, JacobianMap, VectorField2, VectorMap};

/// A forward-complete plant `ẋ = f_p(x, v)` with `N` sensor nodes
/// `y_i = h_{p,i}(x)`.
///
/// Output Jacobians may be supplied per node; nodes without one fall back to
/// a central finite difference with step `1e-6·(1 + |x|)`.
pub struct PlantModel {
    /// State dimension `n`.
    pub state_dim: usize,
    /// Disturbance dimension `p`.
    pub disturbance_dim: usize,
    /// Per-node output dimensions `m_i`.
    pub output_dims: Vec<usize>,
    f_p: VectorField2,
    h_p: Vec<VectorMap>,
    jac_h_p: Vec<Option<JacobianMap>>,
}

impl std::fmt::Debug for PlantModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PlantModel")
            .field("state_dim", &self.state_dim)
            .field("disturbance_dim", &self.disturbance_dim)
            .field("output_dims", &self.output_dims)
            .finish_non_exhaustive()
    }
}

impl PlantModel {
    /// Generic nonlinear plant from closures. `jac_h_p` entries may be
    /// `None` to use the finite-difference fallback for that node.
    pub fn new(
        state_dim: usize,
        disturbance_dim: usize,
        output_dims: Vec<usize>,
        f_p: VectorField2,
        h_p: Vec<VectorMap>,
        jac_h_p: Vec<Option<JacobianMap>>,
    ) -> Result<Self, EstimationError> {
        if output_dims.is_empty() {
            return Err(EstimationError::NoNodes);
        }
        if h_p.len() != output_dims.len() {
            return Err(EstimationError::DimensionMismatch {
                what: "output map count",
                expected: output_dims.len(),
                got: h_p.len(),
            });
        }
        if jac_h_p.len() != output_dims.len() {
            return Err(EstimationError::DimensionMismatch {
                what: "output Jacobian count",
                expected: output_dims.len(),
                got: jac_h_p.len(),
            });
        }
        Ok(Self {
            state_dim,
            disturbance_dim,
            output_dims,
            f_p,
            h_p,
            jac_h_p,
        })
    }

    /// Linear plant `ẋ = Ax + v` with one output row block `C_i` per node
    /// and exact Jacobians.
    pub fn lti(a: DMatrix<f64>, c_blocks: Vec<DMatrix<f64>>) -> Result<Self, EstimationError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(EstimationError::DimensionMismatch {
                what: "plant matrix columns",
                expected: n,
                got: a.ncols(),
            });
        }
        if c_blocks.is_empty() {
            return Err(EstimationError::NoNodes);
        }
        for c in &c_blocks {
            if c.ncols() != n {
                return Err(EstimationError::DimensionMismatch {
                    what: "output matrix columns",
                    expected: n,
                    got: c.ncols(),
                });
            }
        }
        let output_dims: Vec<usize> = c_blocks.iter().map(|c| c.nrows()).collect();
        let a_flow = a.clone();
        let f_p: VectorField2 = Box::new(move |x, v| &a_flow * x + v);
        let h_p: Vec<VectorMap> = c_blocks
            .iter()
            .map(|c| {
                let c = c.clone();
                let map: VectorMap = Box::new(move |x| &c * x);
                map
            })
            .collect();
        let jac_h_p: Vec<Option<JacobianMap>> = c_blocks
            .into_iter()
            .map(|c| {
                let jac: JacobianMap = Box::new(move |_| c.clone());
                Some(jac)
            })
            .collect();
        Ok(Self {
            state_dim: n,
            disturbance_dim: n,
            output_dims,
            f_p,
            h_p,
            jac_h_p,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.output_dims.len()
    }

    /// Total output dimension `m = Σ m_i`.
    pub fn output_dim_total(&self) -> usize {
        self.output_dims.iter().sum()
    }

    /// Offset of node `i`'s block in the stacked output vector.
    pub fn output_offset(&self, node: usize) -> usize {
        self.output_dims[..node].iter().sum()
    }

    /// Flow rate `f_p(x, v)`.
    pub fn rates(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        (self.f_p)(x, v)
    }

    /// Node output `h_{p,i}(x)`.
    pub fn output(&self, node: usize, x: &DVector<f64>) -> DVector<f64> {
        (self.h_p[node])(x)
    }

    /// All node outputs stacked in node order.
    pub fn output_stacked(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.output_dim_total());
        let mut at = 0;
        for i in 0..self.num_nodes() {
            let yi = self.output(i, x);
            y.rows_mut(at, yi.len()).copy_from(&yi);
            at += yi.len();
        }
        y
    }

    /// Output Jacobian `∂h_{p,i}/∂x`, exact if supplied, otherwise central
    /// finite differences.
    pub fn output_jacobian(&self, node: usize, x: &DVector<f64>) -> DMatrix<f64> {
        if let Some(jac) = &self.jac_h_p[node] {
            return jac(x);
        }
        let m = self.output_dims[node];
        let n = self.state_dim;
        let step = 1e-6 * (1.0 + x.norm());
        let mut jac = DMatrix::zeros(m, n);
        let mut xp = x.clone();
        let mut xm = x.clone();
        for k in 0..n {
            xp[k] = x[k] + step;
            xm[k] = x[k] - step;
            let diff = (self.output(node, &xp) - self.output(node, &xm)) / (2.0 * step);
            jac.column_mut(k).copy_from(&diff);
            xp[k] = x[k];
            xm[k] = x[k];
        }
        jac
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn lti_rates_and_outputs() {
        let a = dmatrix![0.0, 1.0; -1.0, 0.0];
        let plant = PlantModel::lti(a, vec![dmatrix![1.0, 0.0]]).unwrap();
        let x = dvector![2.0, 3.0];
        let v = dvector![0.1, -0.1];
        assert_eq!(plant.rates(&x, &v), dvector![3.1, -2.1]);
        assert_eq!(plant.output(0, &x), dvector![2.0]);
        assert_eq!(plant.output_stacked(&x), dvector![2.0]);
        assert_eq!(plant.output_jacobian(0, &x), dmatrix![1.0, 0.0]);
    }

    #[test]
    fn finite_difference_jacobian_matches_analytic() {
        // h(x) = (x0², x0·x1) has Jacobian [[2x0, 0], [x1, x0]].
        let plant = PlantModel::new(
            2,
            0,
            vec![2],
            Box::new(|_, _| dvector![0.0, 0.0]),
            vec![Box::new(|x: &DVector<f64>| {
                dvector![x[0] * x[0], x[0] * x[1]]
            })],
            vec![None],
        )
        .unwrap();
        let x = dvector![1.5, -2.0];
        let jac = plant.output_jacobian(0, &x);
        let expect = dmatrix![3.0, 0.0; -2.0, 1.5];
        for (a, b) in jac.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-7);
        }
    }

    #[test]
    fn constructors_reject_inconsistent_shapes() {
        assert!(PlantModel::lti(dmatrix![1.0, 0.0], vec![dmatrix![1.0, 0.0]]).is_err());
        assert!(PlantModel::lti(dmatrix![1.0], vec![dmatrix![1.0, 0.0]]).is_err());
        assert!(PlantModel::lti(dmatrix![1.0], Vec::new()).is_err());
        assert!(PlantModel::new(
            1,
            0,
            vec![1, 1],
            Box::new(|x: &DVector<f64>, _: &DVector<f64>| x.clone()),
            vec![Box::new(|x: &DVector<f64>| x.clone())],
            vec![None, None],
        )
        .is_err());
    }

    #[test]
    fn stacked_output_follows_node_order() {
        let a = DMatrix::identity(3, 3);
        let plant = PlantModel::lti(
            a,
            vec![dmatrix![0.0, 1.0, 0.0], dmatrix![0.0, 0.0, 2.0; 1.0, 0.0, 0.0]],
        )
        .unwrap();
        let x = dvector![5.0, 7.0, 11.0];
        assert_eq!(plant.output_stacked(&x), dvector![7.0, 22.0, 5.0]);
        assert_eq!(plant.output_offset(0), 0);
        assert_eq!(plant.output_offset(1), 1);
        assert_eq!(plant.output_dim_total(), 3);
    }
}
