//! SAGE iterations: each sub-step updates a single source, associating all of
//! the observation noise with that source's complete data. Sources are swept
//! in ascending order; one iteration is M sub-steps.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::array::{
    projection_stats, steering_matrix, steering_vector, trace_re, ArrayGeometry, Direction,
};
use crate::error::{Error, Result};
use crate::search::{ascend, LineSearchParams};
use crate::sim::SnapshotMatrix;
use crate::surrogate::{conditional_rhat, det_complete_data, rank1_plus_diag, CompleteDataStats};
use crate::C64;

/// Position of a SAGE sub-step: outer iteration k and the number of completed
/// sub-steps i within it, so (k, 0) aliases (k−1, M). A fresh state is (0, 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SageSubstepIndex {
    pub k: usize,
    pub i: usize,
}

impl SageSubstepIndex {
    fn advance(self, source: usize) -> Self {
        if source == 0 {
            Self { k: self.k + 1, i: 1 }
        } else {
            Self { k: self.k, i: source + 1 }
        }
    }
}

/// Deterministic-model iterate. Unlike the EM states, sigma may reach zero:
/// noiseless fixed points exist and the update d/N does not guard against it.
#[derive(Debug, Clone)]
pub struct SageDetState {
    pub dirs: Vec<Direction>,
    /// M×T waveform estimates.
    pub signals: DMatrix<C64>,
    pub sigma: f64,
    pub substep: SageSubstepIndex,
    pub loglik_trace: Vec<f64>,
}

/// Stochastic-model iterate; sigma > 0 is preserved by the sub-step fallback.
#[derive(Debug, Clone)]
pub struct SageStoState {
    pub dirs: Vec<Direction>,
    pub powers: Vec<f64>,
    pub sigma: f64,
    /// Conditional second moments of the inactive sources' waveforms, one per
    /// source; the entry for the active source carries through a sub-step.
    pub phat: Vec<f64>,
    pub substep: SageSubstepIndex,
    pub loglik_trace: Vec<f64>,
}

/// Complete-data statistics of the active source for the deterministic model:
/// x_i = (Y − A S) + a_i s_i with the full residual assigned to source i.
pub fn sage_det_complete_data(
    y: &SnapshotMatrix,
    state: &SageDetState,
    source: usize,
    geom: &ArrayGeometry,
) -> Result<CompleteDataStats> {
    if y.sensors() != geom.sensors() {
        return Err(Error::Dimension(format!(
            "snapshots have {} sensors, array has {}",
            y.sensors(),
            geom.sensors()
        )));
    }
    if source >= state.dirs.len() || state.signals.nrows() != state.dirs.len() {
        return Err(Error::Dimension(format!(
            "source {source} out of range for {} directions and {} signal rows",
            state.dirs.len(),
            state.signals.nrows()
        )));
    }
    if state.signals.ncols() != y.snapshots() {
        return Err(Error::Dimension(format!(
            "signals hold {} snapshots but data holds {}",
            state.signals.ncols(),
            y.snapshots()
        )));
    }
    let a = steering_matrix(geom, &state.dirs);
    let residual = y.data() - &a * &state.signals;
    Ok(det_complete_data(
        &residual,
        &a.column(source).clone_owned(),
        &state.signals.row(source).clone_owned(),
        1.0,
    ))
}

/// One deterministic sub-step: search θ_i on the complete-data covariance,
/// re-estimate s_i = (1/N)a_i^H x_i and σ = d_i/N; everything else carries.
pub fn sage_det_substep(
    y: &SnapshotMatrix,
    state: &SageDetState,
    source: usize,
    geom: &ArrayGeometry,
    search: &LineSearchParams,
) -> Result<SageDetState> {
    let stats = sage_det_complete_data(y, state, source, geom)?;
    let n = geom.sensors() as f64;
    let prev = state.dirs[source];
    let out = ascend(geom, prev.elevation(), &stats.rhat, prev.azimuth(), search);
    let dir = Direction::new(prev.elevation(), out.azimuth)?;
    let sv = steering_vector(geom, dir);
    let row = sv.entries().adjoint() * &stats.snapshots / C64::new(n, 0.0);
    let pstats = projection_stats(geom, dir, &stats.rhat)?;
    let sigma = pstats.d / n;
    if !sigma.is_finite() {
        return Err(Error::Invariant(format!("noise variance left its domain: {sigma}")));
    }
    let mut dirs = state.dirs.clone();
    dirs[source] = dir;
    let mut signals = state.signals.clone();
    signals.set_row(source, &row);
    Ok(SageDetState {
        dirs,
        signals,
        sigma,
        substep: state.substep.advance(source),
        loglik_trace: state.loglik_trace.clone(),
    })
}

/// E-step quantities of a stochastic sub-step: the conditional covariance
/// surrogate of the active source and the updated second moments P̂_m of the
/// inactive sources (the active entry is carried unchanged).
pub fn sage_sto_surrogate(
    ry: &DMatrix<C64>,
    state: &SageStoState,
    source: usize,
    geom: &ArrayGeometry,
) -> Result<(DMatrix<C64>, Vec<f64>)> {
    let n = geom.sensors();
    if ry.nrows() != n || ry.ncols() != n {
        return Err(Error::Dimension(format!(
            "covariance is {}x{} but the array has {n} sensors",
            ry.nrows(),
            ry.ncols()
        )));
    }
    let m_total = state.dirs.len();
    if source >= m_total
        || state.powers.len() != m_total
        || state.phat.len() != m_total
    {
        return Err(Error::Dimension(format!(
            "source {source} out of range for {} directions, {} powers, {} moments",
            m_total,
            state.powers.len(),
            state.phat.len()
        )));
    }
    let svs: Vec<DVector<C64>> =
        state.dirs.iter().map(|d| steering_vector(geom, *d).into_inner()).collect();
    // C_y = Σ_m P_m a_m a_m^H + σ I, built on top of the active source's term.
    let c_i = rank1_plus_diag(&svs[source], state.powers[source], state.sigma);
    let mut cy = c_i.clone();
    for m in 0..m_total {
        if m != source {
            let scaled = &svs[m] * C64::new(state.powers[m], 0.0);
            cy += &scaled * svs[m].adjoint();
        }
    }
    let chol = Cholesky::new(cy).ok_or(Error::Singular)?;

    let mut phat = state.phat.clone();
    for m in 0..m_total {
        if m == source {
            continue;
        }
        let b = chol.solve(&svs[m]) * C64::new(state.powers[m], 0.0);
        let linear = svs[m].dotc(&b).re;
        let quad = b.dotc(&(ry * &b)).re;
        let moment = state.powers[m] * (1.0 - linear) + quad;
        if !moment.is_finite() {
            return Err(Error::Invariant(format!(
                "conditional moment left its domain: {moment}"
            )));
        }
        phat[m] = moment.max(0.0);
    }
    Ok((conditional_rhat(ry, &chol, &c_i), phat))
}

/// One stochastic sub-step: inactive powers take their conditional moments,
/// the active source takes the concentrated update, and a two-stage fallback
/// re-estimates (θ_i, P_i, σ) whenever that update collapses the noise.
pub fn sage_sto_substep(
    ry: &DMatrix<C64>,
    state: &SageStoState,
    source: usize,
    geom: &ArrayGeometry,
    search: &LineSearchParams,
) -> Result<SageStoState> {
    let (rhat, phat) = sage_sto_surrogate(ry, state, source, geom)?;
    let n = geom.sensors() as f64;
    let mut powers = phat.clone();
    powers[source] = state.powers[source];

    let prev = state.dirs[source];
    let out = ascend(geom, prev.elevation(), &rhat, prev.azimuth(), search);
    let cand = Direction::new(prev.elevation(), out.azimuth)?;
    let stats = projection_stats(geom, cand, &rhat)?;
    let tr = trace_re(&rhat);
    let mean = tr / n;
    let (mut dir, sigma_cand, p_cand) = if stats.e > mean {
        (cand, stats.d / (n - 1.0), (stats.e - mean) / (n - 1.0))
    } else {
        // Zero power leaves the direction indeterminate; keep the previous iterate.
        (prev, mean, 0.0)
    };

    let (sigma, p_active) = if sigma_cand > 1e-14 * tr {
        (sigma_cand, p_cand)
    } else {
        // The concentrated noise estimate collapsed. First stage: hold σ and
        // re-estimate (θ_i, P_i); the search target is unchanged, so only the
        // clamp rule differs. Second stage: σ = (σ_prev + d_i)/N at the chosen
        // direction, then P_i = r_i σ with r_i from the first stage.
        let p_first = (stats.e - state.sigma) / n;
        let (dir_fb, p_first, d_fb) = if p_first > 0.0 {
            (cand, p_first, stats.d)
        } else {
            (prev, 0.0, projection_stats(geom, prev, &rhat)?.d)
        };
        dir = dir_fb;
        let sigma_fb = (state.sigma + d_fb) / n;
        (sigma_fb, p_first / state.sigma * sigma_fb)
    };
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Invariant(format!("noise variance left its domain: {sigma}")));
    }
    if !p_active.is_finite() {
        return Err(Error::Invariant(format!("source power left its domain: {p_active}")));
    }
    powers[source] = p_active.max(0.0);
    let mut dirs = state.dirs.clone();
    dirs[source] = dir;
    Ok(SageStoState {
        dirs,
        powers,
        sigma,
        phat,
        substep: state.substep.advance(source),
        loglik_trace: state.loglik_trace.clone(),
    })
}

/// Full deterministic iteration: sub-steps for every source in ascending order.
pub fn sage_det_iteration(
    y: &SnapshotMatrix,
    state: &SageDetState,
    geom: &ArrayGeometry,
    search: &LineSearchParams,
) -> Result<SageDetState> {
    let mut cur = state.clone();
    for source in 0..cur.dirs.len() {
        cur = sage_det_substep(y, &cur, source, geom, search)?;
    }
    Ok(cur)
}

/// Full stochastic iteration: sub-steps for every source in ascending order.
pub fn sage_sto_iteration(
    ry: &DMatrix<C64>,
    state: &SageStoState,
    geom: &ArrayGeometry,
    search: &LineSearchParams,
) -> Result<SageStoState> {
    let mut cur = state.clone();
    for source in 0..cur.dirs.len() {
        cur = sage_sto_substep(ry, &cur, source, geom, search)?;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{em_det_estep, em_det_mstep, EmDetState, NoiseSplit};
    use crate::likelihood::{loglik_det, loglik_sto, DetParams, StoParams};
    use crate::sim::{gen_deterministic, gen_stochastic, sample_covariance, RngStream};
    use approx::assert_relative_eq;

    fn dirs_deg(azimuths: &[f64]) -> Vec<Direction> {
        azimuths.iter().map(|az| Direction::from_degrees(90.0, *az).unwrap()).collect()
    }

    fn det_state(azimuths: &[f64], t: usize, sigma: f64) -> SageDetState {
        SageDetState {
            dirs: dirs_deg(azimuths),
            signals: DMatrix::from_element(azimuths.len(), t, C64::new(1.0, 0.0)),
            sigma,
            substep: SageSubstepIndex { k: 0, i: 0 },
            loglik_trace: Vec::new(),
        }
    }

    fn sto_state(azimuths: &[f64], powers: &[f64], sigma: f64) -> SageStoState {
        SageStoState {
            dirs: dirs_deg(azimuths),
            powers: powers.to_vec(),
            sigma,
            phat: vec![0.0; azimuths.len()],
            substep: SageSubstepIndex { k: 0, i: 0 },
            loglik_trace: Vec::new(),
        }
    }

    #[test]
    fn det_single_source_substep_equals_em_iteration() {
        let geom = ArrayGeometry::ula(6, 2.0).unwrap();
        let mut rng = RngStream::new(50, 0);
        let y = gen_stochastic(&geom, &dirs_deg(&[55.0]), &[1.5], 0.7, 10, &mut rng).unwrap();
        let search = LineSearchParams::default();
        let sage = det_state(&[50.0], 10, 1.0);
        let next = sage_det_substep(&y, &sage, 0, &geom, &search).unwrap();
        let em = EmDetState {
            dirs: dirs_deg(&[50.0]),
            signals: DMatrix::from_element(1, 10, C64::new(1.0, 0.0)),
            sigma: 1.0,
            iter: 0,
            loglik_trace: Vec::new(),
        };
        let alpha = NoiseSplit::new(vec![1.0]).unwrap();
        let (surr, c) = em_det_estep(&y, &em, &alpha, &geom).unwrap();
        let em_next = em_det_mstep(&surr, c, &em, &alpha, &geom, &search).unwrap();
        assert_eq!(next.dirs[0].azimuth(), em_next.dirs[0].azimuth());
        assert!((&next.signals - &em_next.signals).norm() == 0.0);
        assert_eq!(next.sigma, em_next.sigma);
    }

    #[test]
    fn det_noiseless_truth_is_a_fixed_point_with_zero_sigma() {
        let geom = ArrayGeometry::ula(8, 2.0).unwrap();
        let dirs = dirs_deg(&[40.0, 120.0]);
        let signals = DMatrix::from_fn(2, 5, |m, t| C64::new(1.0 + m as f64, 0.3 * t as f64));
        let mut rng = RngStream::new(0, 0);
        let y = gen_deterministic(&geom, &dirs, &signals, 0.0, &mut rng).unwrap();
        let state = SageDetState {
            dirs: dirs.clone(),
            signals: signals.clone(),
            sigma: 1.0,
            substep: SageSubstepIndex { k: 0, i: 0 },
            loglik_trace: Vec::new(),
        };
        let next = sage_det_iteration(&y, &state, &geom, &Default::default()).unwrap();
        for m in 0..2 {
            assert!(
                (next.dirs[m].azimuth() - dirs[m].azimuth()).abs() <= 1e-9,
                "direction moved at a noiseless fixed point"
            );
        }
        let scale = next.signals.norm();
        assert!(next.sigma <= 1e-12 * scale, "sigma {} not near zero", next.sigma);
    }

    #[test]
    fn det_substep_outputs_do_not_depend_on_sigma() {
        let geom = ArrayGeometry::ula(10, 2.0).unwrap();
        let mut rng = RngStream::new(51, 0);
        let y = gen_stochastic(&geom, &dirs_deg(&[20.0, 80.0]), &[1.0, 2.0], 2.0, 20, &mut rng)
            .unwrap();
        let search = LineSearchParams::default();
        let low = det_state(&[24.0, 84.0], 20, 0.1);
        let high = det_state(&[24.0, 84.0], 20, 10.0);
        let next_low = sage_det_substep(&y, &low, 0, &geom, &search).unwrap();
        let next_high = sage_det_substep(&y, &high, 0, &geom, &search).unwrap();
        assert_eq!(next_low.dirs[0].azimuth(), next_high.dirs[0].azimuth());
        assert!((&next_low.signals - &next_high.signals).norm() == 0.0);
        assert_eq!(next_low.sigma, next_high.sigma);
    }

    #[test]
    fn det_substep_carries_inactive_sources_bit_identically() {
        let geom = ArrayGeometry::ula(10, 2.0).unwrap();
        let mut rng = RngStream::new(52, 0);
        let y = gen_stochastic(&geom, &dirs_deg(&[30.0, 90.0, 140.0]), &[1.0; 3], 1.0, 15, &mut rng)
            .unwrap();
        let state = det_state(&[33.0, 87.0, 143.0], 15, 1.0);
        let next = sage_det_substep(&y, &state, 1, &geom, &Default::default()).unwrap();
        for m in [0usize, 2] {
            assert!(next.dirs[m] == state.dirs[m]);
            for t in 0..15 {
                assert!(next.signals[(m, t)] == state.signals[(m, t)]);
            }
        }
        assert!(next.dirs[1] != state.dirs[1] || next.signals.row(1) != state.signals.row(1));
    }

    #[test]
    fn iteration_advances_substep_bookkeeping() {
        let geom = ArrayGeometry::ula(6, 2.0).unwrap();
        let mut rng = RngStream::new(53, 0);
        let y = gen_stochastic(&geom, &dirs_deg(&[40.0, 100.0]), &[1.0, 1.0], 1.0, 8, &mut rng)
            .unwrap();
        let state = det_state(&[42.0, 98.0], 8, 1.0);
        let one = sage_det_iteration(&y, &state, &geom, &Default::default()).unwrap();
        assert_eq!(one.substep, SageSubstepIndex { k: 1, i: 2 });
        let two = sage_det_iteration(&y, &one, &geom, &Default::default()).unwrap();
        assert_eq!(two.substep, SageSubstepIndex { k: 2, i: 2 });
    }

    #[test]
    fn sto_single_source_surrogate_telescopes_and_update_matches_formulas() {
        let geom = ArrayGeometry::ula(5, 2.0).unwrap();
        let mut rng = RngStream::new(54, 0);
        let y = gen_stochastic(&geom, &dirs_deg(&[70.0]), &[2.0], 1.0, 12, &mut rng).unwrap();
        let ry = sample_covariance(&y);
        let state = sto_state(&[65.0], &[1.2], 0.8);
        let (rhat, _) = sage_sto_surrogate(&ry, &state, 0, &geom).unwrap();
        assert!((&rhat - &ry).norm() <= 1e-10 * ry.norm());
        let next = sage_sto_substep(&ry, &state, 0, &geom, &Default::default()).unwrap();
        let stats = projection_stats(&geom, next.dirs[0], &rhat).unwrap();
        let tr = trace_re(&rhat);
        assert!(stats.e > tr / 5.0, "expected the active branch on real data");
        assert_relative_eq!(next.sigma, stats.d / 4.0, max_relative = 1e-10);
        assert_relative_eq!(next.powers[0], (stats.e - tr / 5.0) / 4.0, max_relative = 1e-10);
    }

    #[test]
    fn sto_zero_power_gives_zero_conditional_moment() {
        let geom = ArrayGeometry::ula(6, 2.0).unwrap();
        let mut rng = RngStream::new(55, 0);
        let y = gen_stochastic(&geom, &dirs_deg(&[60.0, 110.0]), &[1.0, 1.0], 1.0, 10, &mut rng)
            .unwrap();
        let ry = sample_covariance(&y);
        let state = sto_state(&[60.0, 110.0], &[0.0, 1.0], 1.0);
        let next = sage_sto_substep(&ry, &state, 1, &geom, &Default::default()).unwrap();
        assert_eq!(next.phat[0], 0.0);
        assert_eq!(next.powers[0], 0.0);
    }

    #[test]
    fn sto_fallback_second_stage_arithmetic() {
        // σ_prev = 1, d_i = 9, N = 10 → σ' = (1 + 9)/10 = 1.
        let sigma = (1.0 + 9.0) / 10.0;
        assert_relative_eq!(sigma, 1.0);
    }

    #[test]
    fn sto_degenerate_single_snapshot_triggers_fallback() {
        // M=2, T=1, y = u·a(θ̄), inactive source power zero: the surrogate of
        // the active source is exactly y y^H, the search lands on θ̄, the
        // concentrated noise estimate collapses to zero and the fallback must
        // produce σ = (σ_prev + 0)/N and P = (e − σ_prev)/N · σ/σ_prev.
        let geom = ArrayGeometry::ula(10, 2.0).unwrap();
        let theta_bar = Direction::from_degrees(90.0, 60.0).unwrap();
        let u = C64::new(1.0, 0.0);
        let a = steering_vector(&geom, theta_bar);
        let yvec = a.entries() * u;
        let y = SnapshotMatrix::new(DMatrix::from_columns(&[yvec])).unwrap();
        let ry = sample_covariance(&y);
        let state = SageStoState {
            dirs: vec![dirs_deg(&[40.0])[0], theta_bar],
            powers: vec![0.0, 1.0],
            sigma: 1.0,
            phat: vec![0.0, 1.0],
            substep: SageSubstepIndex { k: 1, i: 1 },
            loglik_trace: Vec::new(),
        };
        let (rhat, _) = sage_sto_surrogate(&ry, &state, 1, &geom).unwrap();
        assert!((&rhat - &ry).norm() <= 1e-10 * ry.norm(), "surrogate must telescope");
        let next = sage_sto_substep(&ry, &state, 1, &geom, &Default::default()).unwrap();
        assert_eq!(next.dirs[1].azimuth(), theta_bar.azimuth());
        assert!(next.sigma > 0.0);
        // e = N|u|² = 10, tr = 10: σ = (1+0)/10, r = (10−1)/10/1, P = r·σ.
        assert_relative_eq!(next.sigma, 0.1, max_relative = 1e-10);
        assert_relative_eq!(next.powers[1], 0.09, max_relative = 1e-10);
        assert_eq!(next.substep, SageSubstepIndex { k: 1, i: 2 });
    }

    #[test]
    fn sto_substep_carries_inactive_directions_bit_identically() {
        let geom = ArrayGeometry::ula(10, 2.0).unwrap();
        let mut rng = RngStream::new(56, 0);
        let y = gen_stochastic(&geom, &dirs_deg(&[30.0, 90.0, 140.0]), &[1.0; 3], 1.0, 15, &mut rng)
            .unwrap();
        let ry = sample_covariance(&y);
        let state = sto_state(&[33.0, 87.0, 143.0], &[1.0, 1.0, 1.0], 1.0);
        let next = sage_sto_substep(&ry, &state, 1, &geom, &Default::default()).unwrap();
        for m in [0usize, 2] {
            assert!(next.dirs[m] == state.dirs[m]);
        }
    }

    #[test]
    fn det_iterations_never_decrease_loglik() {
        let geom = ArrayGeometry::ula(10, 2.0).unwrap();
        let mut rng = RngStream::new(57, 0);
        let y = gen_stochastic(&geom, &dirs_deg(&[20.0, 80.0]), &[0.63, 2.51], 2.51, 20, &mut rng)
            .unwrap();
        let search = LineSearchParams::default();
        let mut state = det_state(&[24.0, 84.0], 20, 1.0);
        let mut prev = f64::NEG_INFINITY;
        for _ in 0..50 {
            state = sage_det_iteration(&y, &state, &geom, &search).unwrap();
            let ll = loglik_det(
                &y,
                &DetParams {
                    dirs: &state.dirs,
                    signals: &state.signals,
                    sigma: state.sigma.max(1e-300),
                },
                &geom,
            )
            .unwrap();
            assert!(ll >= prev - 1e-8 * prev.abs(), "loglik fell from {prev} to {ll}");
            prev = ll;
        }
    }

    #[test]
    fn sto_iterations_never_decrease_loglik_and_keep_sigma_positive() {
        let geom = ArrayGeometry::ula(10, 2.0).unwrap();
        let mut rng = RngStream::new(58, 0);
        let y = gen_stochastic(&geom, &dirs_deg(&[20.0, 80.0]), &[0.4, 2.51], 2.51, 20, &mut rng)
            .unwrap();
        let ry = sample_covariance(&y);
        let search = LineSearchParams::default();
        let mut state = sto_state(&[24.0, 84.0], &[1.0, 1.0], 1.0);
        let mut prev = f64::NEG_INFINITY;
        for _ in 0..50 {
            state = sage_sto_iteration(&ry, &state, &geom, &search).unwrap();
            let ll = loglik_sto(
                &ry,
                &StoParams { dirs: &state.dirs, powers: &state.powers, sigma: state.sigma },
                &geom,
                20,
            )
            .unwrap();
            assert!(ll >= prev - 1e-8 * prev.abs(), "loglik fell from {prev} to {ll}");
            assert!(state.sigma > 0.0);
            assert!(state.powers.iter().all(|p| *p >= 0.0));
            prev = ll;
        }
    }
}
