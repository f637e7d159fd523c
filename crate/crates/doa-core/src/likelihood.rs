//! Incomplete-data log-likelihoods for both signal models; drives the
//! convergence traces and the monotonicity checks.

use nalgebra::{Cholesky, DMatrix};

use crate::array::{check_hermitian, steering_matrix, ArrayGeometry, Direction};
use crate::error::{Error, Result};
use crate::sim::SnapshotMatrix;
use crate::C64;

/// Deterministic-model parameters: directions, signal waveforms (M×T), noise variance.
#[derive(Debug, Clone, Copy)]
pub struct DetParams<'a> {
    pub dirs: &'a [Direction],
    pub signals: &'a DMatrix<C64>,
    pub sigma: f64,
}

/// Stochastic-model parameters: directions, source powers, noise variance.
#[derive(Debug, Clone, Copy)]
pub struct StoParams<'a> {
    pub dirs: &'a [Direction],
    pub powers: &'a [f64],
    pub sigma: f64,
}

/// ‖Y − A(θ)S‖²_F, the total residual energy of the deterministic model.
pub fn det_residual(
    y: &SnapshotMatrix,
    geom: &ArrayGeometry,
    dirs: &[Direction],
    signals: &DMatrix<C64>,
) -> Result<f64> {
    if y.sensors() != geom.sensors() {
        return Err(Error::Dimension(format!(
            "snapshots have {} sensors, array has {}",
            y.sensors(),
            geom.sensors()
        )));
    }
    if signals.nrows() != dirs.len() || signals.ncols() != y.snapshots() {
        return Err(Error::Dimension(format!(
            "signal matrix is {}x{}, expected {}x{}",
            signals.nrows(),
            signals.ncols(),
            dirs.len(),
            y.snapshots()
        )));
    }
    let residual = y.data() - steering_matrix(geom, dirs) * signals;
    Ok(residual.iter().map(|z| z.norm_sqr()).sum())
}

/// −TN·ln(πσ) − (1/σ)Σ_t ‖y(t) − A(θ)s(t)‖².
pub fn loglik_det(y: &SnapshotMatrix, params: &DetParams, geom: &ArrayGeometry) -> Result<f64> {
    if !(params.sigma > 0.0 && params.sigma.is_finite()) {
        return Err(Error::Domain(format!(
            "deterministic likelihood needs sigma > 0, got {}",
            params.sigma
        )));
    }
    let residual = det_residual(y, geom, params.dirs, params.signals)?;
    let tn = (y.snapshots() * y.sensors()) as f64;
    Ok(-tn * (std::f64::consts::PI * params.sigma).ln() - residual / params.sigma)
}

/// Σ_m P_m a_m a_m^H + σ I_N; Hermitian positive definite for σ > 0.
pub fn build_cov(
    geom: &ArrayGeometry,
    dirs: &[Direction],
    powers: &[f64],
    sigma: f64,
) -> Result<DMatrix<C64>> {
    if powers.len() != dirs.len() {
        return Err(Error::Dimension(format!(
            "{} directions but {} powers",
            dirs.len(),
            powers.len()
        )));
    }
    if let Some(p) = powers.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
        return Err(Error::Domain(format!("source powers must be >= 0, got {p}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("noise variance must be > 0, got {sigma}")));
    }
    let n = geom.sensors();
    let mut cov = DMatrix::<C64>::identity(n, n) * C64::new(sigma, 0.0);
    for (dir, p) in dirs.iter().zip(powers) {
        let a = crate::array::steering_vector(geom, *dir);
        cov += a.entries() * a.entries().adjoint() * C64::new(*p, 0.0);
    }
    Ok(cov)
}

/// −TN·ln π − T·ln|C_y| − T·Tr{C_y⁻¹ R̂_y}, the trace form of the snapshot sum.
pub fn loglik_sto(
    ry: &DMatrix<C64>,
    params: &StoParams,
    geom: &ArrayGeometry,
    snapshots: usize,
) -> Result<f64> {
    if snapshots == 0 {
        return Err(Error::Dimension("need at least one snapshot".into()));
    }
    if ry.nrows() != geom.sensors() {
        return Err(Error::Dimension(format!(
            "covariance is {}x{} but the array has {} sensors",
            ry.nrows(),
            ry.ncols(),
            geom.sensors()
        )));
    }
    check_hermitian(ry)?;
    let cy = build_cov(geom, params.dirs, params.powers, params.sigma)?;
    let (log_det, tr) = chol_logdet_and_trace_solve(&cy, ry)?;
    let t = snapshots as f64;
    let n = geom.sensors() as f64;
    Ok(-t * n * std::f64::consts::PI.ln() - t * log_det - t * tr)
}

/// Returns (ln|C|, Tr{C⁻¹ R}) via a Cholesky factorization of C.
pub(crate) fn chol_logdet_and_trace_solve(c: &DMatrix<C64>, r: &DMatrix<C64>) -> Result<(f64, f64)> {
    let chol = Cholesky::new(c.clone()).ok_or(Error::Singular)?;
    let l = chol.l();
    let log_det: f64 = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>();
    let solved = chol.solve(r);
    let tr: f64 = (0..solved.nrows()).map(|i| solved[(i, i)].re).sum();
    Ok((log_det, tr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{gen_deterministic, gen_stochastic, sample_covariance, RngStream};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn dirs_deg(azimuths: &[f64]) -> Vec<Direction> {
        azimuths.iter().map(|az| Direction::from_degrees(90.0, *az).unwrap()).collect()
    }

    #[test]
    fn det_zero_residual_cases() {
        let geom = ArrayGeometry::ula(5, 2.0).unwrap();
        let dirs = dirs_deg(&[40.0, 95.0]);
        let signals = DMatrix::from_fn(2, 4, |m, t| C64::new(1.0 + m as f64, t as f64 - 1.0));
        let mut rng = RngStream::new(0, 0);
        let y = gen_deterministic(&geom, &dirs, &signals, 0.0, &mut rng).unwrap();
        let tn = 20.0;

        let l1 = loglik_det(&y, &DetParams { dirs: &dirs, signals: &signals, sigma: 1.0 }, &geom)
            .unwrap();
        assert_relative_eq!(l1, -tn * PI.ln(), max_relative = 1e-10);

        let l2 = loglik_det(&y, &DetParams { dirs: &dirs, signals: &signals, sigma: 2.0 }, &geom)
            .unwrap();
        assert_relative_eq!(l1 - l2, tn * 2.0f64.ln(), max_relative = 1e-10);
    }

    #[test]
    fn det_matches_naive_oracle() {
        let geom = ArrayGeometry::ula(4, 2.0).unwrap();
        let dirs = dirs_deg(&[30.0, 110.0]);
        let mut rng = RngStream::new(5, 1);
        let y = gen_stochastic(&geom, &dirs, &[1.0, 2.0], 0.7, 6, &mut rng).unwrap();
        let signals = DMatrix::from_fn(2, 6, |m, t| C64::new(0.3 * t as f64, -(m as f64)));
        let sigma = 1.7;

        let got =
            loglik_det(&y, &DetParams { dirs: &dirs, signals: &signals, sigma }, &geom).unwrap();

        // Term-by-term oracle over snapshots and sensors.
        let a = steering_matrix(&geom, &dirs);
        let mut acc = 0.0;
        for t in 0..6 {
            for n in 0..4 {
                let mut model = C64::new(0.0, 0.0);
                for m in 0..2 {
                    model += a[(n, m)] * signals[(m, t)];
                }
                acc += (y.data()[(n, t)] - model).norm_sqr();
            }
        }
        let oracle = -(24.0) * (PI * sigma).ln() - acc / sigma;
        assert_relative_eq!(got, oracle, max_relative = 1e-10);
    }

    #[test]
    fn det_rejects_bad_sigma() {
        let geom = ArrayGeometry::ula(3, 2.0).unwrap();
        let dirs = dirs_deg(&[45.0]);
        let signals = DMatrix::<C64>::zeros(1, 2);
        let mut rng = RngStream::new(1, 0);
        let y = gen_deterministic(&geom, &dirs, &signals, 1.0, &mut rng).unwrap();
        for sigma in [0.0, -1.0, f64::NAN] {
            let r = loglik_det(&y, &DetParams { dirs: &dirs, signals: &signals, sigma }, &geom);
            assert!(matches!(r, Err(Error::Domain(_))));
        }
    }

    #[test]
    fn sto_identity_covariance_cases() {
        let geom = ArrayGeometry::ula(4, 2.0).unwrap();
        let dirs = dirs_deg(&[60.0]);
        let t = 5usize;
        let tn = (t * 4) as f64;

        let eye = DMatrix::<C64>::identity(4, 4);
        let l = loglik_sto(&eye, &StoParams { dirs: &dirs, powers: &[0.0], sigma: 1.0 }, &geom, t)
            .unwrap();
        assert_relative_eq!(l, -tn * PI.ln() - tn, max_relative = 1e-12);

        let s = 3.5;
        let scaled = &eye * C64::new(s, 0.0);
        let l =
            loglik_sto(&scaled, &StoParams { dirs: &dirs, powers: &[0.0], sigma: s }, &geom, t)
                .unwrap();
        assert_relative_eq!(l, -tn * PI.ln() - tn * s.ln() - tn, max_relative = 1e-12);
    }

    #[test]
    fn sto_matches_snapshot_sum_oracle() {
        let geom = ArrayGeometry::ula(5, 2.0).unwrap();
        let dirs = dirs_deg(&[35.0, 85.0]);
        let powers = [1.2, 0.4];
        let sigma = 0.9;
        let mut rng = RngStream::new(23, 3);
        let y = gen_stochastic(&geom, &dirs, &powers, 1.0, 7, &mut rng).unwrap();
        let ry = sample_covariance(&y);

        let got =
            loglik_sto(&ry, &StoParams { dirs: &dirs, powers: &powers, sigma }, &geom, 7).unwrap();

        // Oracle: explicit inverse/determinant and a per-snapshot quadratic-form sum.
        let cy = build_cov(&geom, &dirs, &powers, sigma).unwrap();
        let inv = cy.clone().try_inverse().unwrap();
        let det = cy.determinant();
        assert!(det.im.abs() < 1e-8 * det.re.abs());
        let mut quad_sum = 0.0;
        for t in 0..7 {
            let col = y.data().column(t);
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..5 {
                for j in 0..5 {
                    acc += col[i].conj() * inv[(i, j)] * col[j];
                }
            }
            quad_sum += acc.re;
        }
        let oracle = -(35.0) * PI.ln() - 7.0 * det.re.ln() - quad_sum;
        assert_relative_eq!(got, oracle, max_relative = 1e-9);
    }

    #[test]
    fn sto_rejects_singular_covariance() {
        let geom = ArrayGeometry::ula(3, 2.0).unwrap();
        let dirs = dirs_deg(&[45.0]);
        let ry = DMatrix::<C64>::identity(3, 3);
        let r = loglik_sto(&ry, &StoParams { dirs: &dirs, powers: &[1.0], sigma: 0.0 }, &geom, 2);
        assert!(r.is_err());
    }

    #[test]
    fn build_cov_matches_outer_product_oracle() {
        let geom = ArrayGeometry::ula(4, 2.0).unwrap();
        let dirs = dirs_deg(&[25.0, 130.0]);
        let powers = [2.0, 0.5];
        let sigma = 0.3;
        let cov = build_cov(&geom, &dirs, &powers, sigma).unwrap();

        let mut oracle = DMatrix::<C64>::zeros(4, 4);
        for (dir, p) in dirs.iter().zip(powers) {
            let a = crate::array::steering_vector(&geom, *dir);
            for i in 0..4 {
                for j in 0..4 {
                    oracle[(i, j)] += C64::new(p, 0.0) * a.entries()[i] * a.entries()[j].conj();
                }
            }
        }
        for i in 0..4 {
            oracle[(i, i)] += C64::new(sigma, 0.0);
        }
        assert!((&cov - &oracle).norm() <= 1e-12 * oracle.norm());

        // Minimum eigenvalue is at least sigma: check via random quadratic forms.
        let mut s = 7u64;
        for _ in 0..30 {
            let z = nalgebra::DVector::<C64>::from_fn(4, |_, _| {
                s = s.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
                let re = (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                C64::new(re, re * 0.5 - 0.1)
            });
            let quad = z.dotc(&(&cov * &z)).re;
            assert!(quad >= (sigma - 1e-10) * z.norm_squared());
        }
    }

    #[test]
    fn build_cov_rank_one_spectrum() {
        // One unit-power source on a 2-sensor array: eigenvalues {σ + N, σ} = {3, 1}.
        let geom = ArrayGeometry::ula(2, 2.0).unwrap();
        let dirs = dirs_deg(&[70.0]);
        let cov = build_cov(&geom, &dirs, &[1.0], 1.0).unwrap();
        let tr = cov[(0, 0)].re + cov[(1, 1)].re;
        let det = cov.determinant();
        assert_relative_eq!(tr, 4.0, max_relative = 1e-12);
        assert_relative_eq!(det.re, 3.0, max_relative = 1e-10);
        assert!(det.im.abs() < 1e-10);
    }

    #[test]
    fn det_ranking_is_sigma_free() {
        // The concentrated objective ranks candidates by residual alone, so the
        // loglik ordering of two (θ,S) candidates must not depend on σ.
        let geom = ArrayGeometry::ula(4, 2.0).unwrap();
        let dirs_a = dirs_deg(&[40.0, 100.0]);
        let dirs_b = dirs_deg(&[42.0, 98.0]);
        let mut rng = RngStream::new(31, 0);
        let y = gen_stochastic(&geom, &dirs_a, &[1.0, 1.0], 0.5, 8, &mut rng).unwrap();
        let signals_a = DMatrix::from_element(2, 8, C64::new(1.0, 0.0));
        let signals_b = DMatrix::from_element(2, 8, C64::new(0.9, 0.1));

        let res_a = det_residual(&y, &geom, &dirs_a, &signals_a).unwrap();
        let res_b = det_residual(&y, &geom, &dirs_b, &signals_b).unwrap();
        for sigma in [0.5, 1.0, 7.0] {
            let la =
                loglik_det(&y, &DetParams { dirs: &dirs_a, signals: &signals_a, sigma }, &geom)
                    .unwrap();
            let lb =
                loglik_det(&y, &DetParams { dirs: &dirs_b, signals: &signals_b, sigma }, &geom)
                    .unwrap();
            assert_eq!(la > lb, res_a < res_b);
        }
    }
}
