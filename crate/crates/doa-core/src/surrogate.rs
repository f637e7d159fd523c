//! Per-source complete-data statistics shared by the iterative solvers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::sim::hermitize;
use crate::C64;

/// Complete-data snapshots x_m (N×T) of one source and their sample
/// covariance R̂_m = (1/T) Σ_t x_m(t) x_m(t)^H.
#[derive(Debug, Clone)]
pub struct CompleteDataStats {
    pub snapshots: DMatrix<C64>,
    pub rhat: DMatrix<C64>,
}

/// x_m = weight·(Y − A S) + a_m s_m for the deterministic-model E-steps;
/// the weight is the share of the observation noise assigned to source m.
pub(crate) fn det_complete_data(
    residual: &DMatrix<C64>,
    a_col: &DVector<C64>,
    s_row: &nalgebra::RowDVector<C64>,
    weight: f64,
) -> CompleteDataStats {
    let x = residual * C64::new(weight, 0.0) + a_col * s_row;
    let t = x.ncols() as f64;
    let rhat = hermitize(&(&x * x.adjoint() / C64::new(t, 0.0)));
    CompleteDataStats { snapshots: x, rhat }
}

/// P·a a^H + s·I_N.
pub(crate) fn rank1_plus_diag(a: &DVector<C64>, p: f64, s: f64) -> DMatrix<C64> {
    let n = a.len();
    let mut c = a * a.adjoint() * C64::new(p, 0.0);
    for i in 0..n {
        c[(i, i)] += C64::new(s, 0.0);
    }
    c
}

/// Conditional covariance surrogate
/// R̂_m = C_m C_y⁻¹ R̂_y C_y⁻¹ C_m + (C_m − C_m C_y⁻¹ C_m),
/// evaluated through the Cholesky factor of C_y; Hermitian PSD up to roundoff.
pub(crate) fn conditional_rhat(
    ry: &DMatrix<C64>,
    cy_chol: &Cholesky<C64, Dyn>,
    c_m: &DMatrix<C64>,
) -> DMatrix<C64> {
    // B = C_y⁻¹ C_m, so C_m C_y⁻¹ = B^H for Hermitian C_m, C_y.
    let b = cy_chol.solve(c_m);
    let bh = b.adjoint();
    hermitize(&(&bh * ry * &b + c_m - bh * c_m))
}
