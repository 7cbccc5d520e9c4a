//! Time-evolution engines: the Mehler closed form for the static oscillator
//! window, Strang split-step for the interacting Hamiltonian, the factorized
//! free flow for |t| >= T, and the chained full-line propagators U0(t,s) and
//! U(t,s).

pub mod displaced;

use crate::error::{Error, Result};
use crate::lattice::{Grid, StateVector};
use crate::potentials::PotentialSet;
use crate::schedule::CoefficientSchedule;
use num_complex::Complex64;
use std::f64::consts::PI;

/// Step policy: piece boundaries never cross +-T mid-step, dt is fixed inside
/// the window and grows linearly with |t| outside (the generator decays like
/// 1/t^2 there).
#[derive(Debug, Clone, Copy)]
pub struct PropagatorPlan {
    pub schedule: CoefficientSchedule,
    /// dt inside |t| < T.
    pub dt_window: f64,
    /// dt(t) = dt_tail_scale * max(1, |t|) outside the window.
    pub dt_tail_scale: f64,
}

impl PropagatorPlan {
    pub fn new(schedule: CoefficientSchedule) -> Self {
        Self { schedule, dt_window: 1e-3, dt_tail_scale: 1e-3 }
    }

    pub fn with_dt(schedule: CoefficientSchedule, dt_window: f64, dt_tail_scale: f64) -> Self {
        Self { schedule, dt_window, dt_tail_scale }
    }

    /// Regime-aware step size at time t (always positive).
    pub fn step_size(&self, t: f64) -> f64 {
        if t.abs() < self.schedule.t_switch() {
            self.dt_window
        } else {
            self.dt_tail_scale * t.abs().max(1.0)
        }
    }
}

/// Multiplies by exp(i c |x|^2).
pub fn chirp(state: &StateVector, c: f64) -> StateVector {
    let g = state.grid().sample_field(|x| c * x.iter().map(|v| v * v).sum::<f64>());
    state.multiply_phase(&g)
}

/// Free kinetic flow exp(-i tau |D|^2 / 2).
pub fn kinetic_flow(state: &StateVector, tau: f64) -> StateVector {
    let mut f = state.to_fourier();
    f.multiply_phase_fn(|xi| -tau * xi.iter().map(|v| v * v).sum::<f64>() / 2.0);
    f.to_position()
}

/// One application of the Mehler closed form for exp(-i t H0),
/// H0 = |D|^2/2 + omega^2 |x|^2 / 2:
/// i^(dim/2) M(-cot(wt)/w) D(cos wt) exp(-i tan(wt) |D|^2 / (2 w)).
///
/// Valid inside the switch window with omega t away from odd multiples of
/// pi/2 (cos wt = 0), where the scaling factor degenerates.
pub fn mehler_step(state: &StateVector, t: f64, sched: &CoefficientSchedule) -> Result<StateVector> {
    let guard: f64 = 1e-3;
    if t.abs() >= sched.t_switch() {
        return Err(Error::InsideSwitchWindow { t, t_switch: sched.t_switch() });
    }
    let wt = sched.omega() * t;
    // The singular set of this form is cos(wt) = 0, i.e. odd multiples of
    // pi/2; |cos| < sin(guard) means wt is within the guard band of one.
    if wt.cos().abs() < guard.sin() {
        return Err(Error::MehlerSingularTime { omega_t: wt, guard });
    }
    Ok(mehler_step_unchecked(state, t, sched))
}

fn mehler_step_unchecked(state: &StateVector, t: f64, sched: &CoefficientSchedule) -> StateVector {
    let w = sched.omega();
    let wt = w * t;
    let (s, c) = wt.sin_cos();
    let tanwt = s / c;
    let dim = state.grid().dim();

    // Kinetic factor exp(-i tan(wt) |D|^2 / (2 w)).
    let out = kinetic_flow(state, tanwt / w);
    // Scaling factor D(cos wt): (i cos wt)^(-dim/2) psi(x / cos wt). The
    // product with the leading i^(dim/2) is real: |c|^(-dim/2), times
    // (-1)^(dim/2) when cos < 0. The parity flip rides in the negative
    // resampling scale.
    let sign = if c < 0.0 && (dim / 2) % 2 == 1 { -1.0 } else { 1.0 };
    let prefactor = sign * c.abs().powf(-(dim as f64) / 2.0);
    let out = out.resample_axes(&vec![1.0 / c; dim], prefactor);
    // Multiplicative chirp M(-cot(wt)/w) = exp(-i w tan(wt) |x|^2 / 2).
    chirp(&out, -w * tanwt / 2.0)
}

/// exp(-i delta H0) composed from Mehler hops of at most pi/4 of trap angle,
/// so the intermediate contraction never exceeds sqrt(2) and the chirps stay
/// representable on the grid. Never hits a singular time.
pub fn window_propagate(state: &StateVector, delta: f64, sched: &CoefficientSchedule) -> StateVector {
    let w_delta = (sched.omega() * delta).abs();
    if w_delta < 1e-14 {
        return state.clone();
    }
    let hops = (w_delta / (PI / 4.0)).ceil() as usize;
    let sub = delta / hops as f64;
    let mut out = state.clone();
    for _ in 0..hops {
        out = mehler_step_unchecked(&out, sub, sched);
    }
    out
}

/// The factorized free flow U_{0,lambda}(t) for |t| >= T:
/// exp(i lambda x^2/(2t)) exp(-i lambda log|t| A) exp(-+ i |t|^(1-2l) D^2/(2(1-2l))).
pub fn free_factorized(state: &StateVector, t: f64, sched: &CoefficientSchedule) -> Result<StateVector> {
    if t.abs() < sched.t_switch() {
        return Err(Error::InsideSwitchWindow { t, t_switch: sched.t_switch() });
    }
    let l = sched.lambda();
    let tau = t.abs().powf(1.0 - 2.0 * l) / (1.0 - 2.0 * l);
    let out = kinetic_flow(state, if t > 0.0 { tau } else { -tau });
    let out = out.dilate(l * t.abs().ln())?;
    Ok(chirp(&out, l / (2.0 * t)))
}

/// Adjoint U_{0,lambda}(t)^*: the inverse factors in reverse order.
pub fn free_factorized_adjoint(
    state: &StateVector,
    t: f64,
    sched: &CoefficientSchedule,
) -> Result<StateVector> {
    if t.abs() < sched.t_switch() {
        return Err(Error::InsideSwitchWindow { t, t_switch: sched.t_switch() });
    }
    let l = sched.lambda();
    let out = chirp(state, -l / (2.0 * t));
    let out = out.dilate(-l * t.abs().ln())?;
    let tau = t.abs().powf(1.0 - 2.0 * l) / (1.0 - 2.0 * l);
    Ok(kinetic_flow(&out, if t > 0.0 { -tau } else { tau }))
}

/// Statistics from a split-step run, used for the unitarity checks.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub steps: usize,
    pub norm_drift: f64,
}

/// Strang split-step for H(t) = |D|^2/2 + k(t)|x|^2/2 + V(x) across one
/// regime piece: half potential phase with the time-averaged k over the
/// half-substep, full kinetic Fourier multiplier, half potential phase.
/// Errors if [t0, t1] straddles a regime boundary.
pub fn split_step_evolve(
    state: &StateVector,
    t0: f64,
    t1: f64,
    plan: &PropagatorPlan,
    potential: Option<&[f64]>,
) -> Result<StateVector> {
    let tsw = plan.schedule.t_switch();
    let (lo, hi) = (t0.min(t1), t0.max(t1));
    for b in [-tsw, tsw] {
        if lo < b - 1e-12 && hi > b + 1e-12 {
            return Err(Error::StepCrossesRegimeBoundary { t0, t1, boundary: tsw });
        }
    }
    let mut amp = state.amplitudes().to_vec();
    let mut stats = StepStats::default();
    let engine = SplitStepEngine::new(state.grid(), potential);
    engine.evolve_piece(&mut amp, t0, t1, plan, &mut stats, &mut |_, _| {});
    let out = StateVector::new(state.grid().clone(), amp);
    check_step_drift(state, &out, stats.steps)?;
    Ok(out)
}

/// Free propagator U0(t, s): Mehler hops inside the window chained with the
/// factorization U0(b, a) = U_{0,lambda}(b) U_{0,lambda}(a)^* outside.
pub fn free_propagate(
    state: &StateVector,
    t: f64,
    s: f64,
    sched: &CoefficientSchedule,
) -> Result<StateVector> {
    let tsw = sched.t_switch();
    let mut out = state.clone();
    for (a, b) in sched.segments(s, t) {
        if (b - a).abs() < 1e-15 {
            continue;
        }
        if a.abs() <= tsw + 1e-12 && b.abs() <= tsw + 1e-12 {
            out = window_propagate(&out, b - a, sched);
        } else {
            out = free_factorized_adjoint(&out, a, sched)?;
            out = free_factorized(&out, b, sched)?;
        }
    }
    Ok(out)
}

/// Full propagator U(t, s): split-step with regime-aware partitioning.
/// Reduces to the free propagator when the potential set is empty.
pub fn full_propagate(
    state: &StateVector,
    t: f64,
    s: f64,
    plan: &PropagatorPlan,
    potentials: &PotentialSet,
) -> Result<StateVector> {
    let field = potentials.sample_total(state.grid());
    full_propagate_field(state, t, s, plan, Some(&field.values))
}

/// As [`full_propagate`] with a pre-sampled potential field.
pub fn full_propagate_field(
    state: &StateVector,
    t: f64,
    s: f64,
    plan: &PropagatorPlan,
    potential: Option<&[f64]>,
) -> Result<StateVector> {
    let mut amp = state.amplitudes().to_vec();
    let mut stats = StepStats::default();
    let engine = SplitStepEngine::new(state.grid(), potential);
    for (a, b) in plan.schedule.segments(s, t) {
        if (b - a).abs() < 1e-15 {
            continue;
        }
        engine.evolve_piece(&mut amp, a, b, plan, &mut stats, &mut |_, _| {});
    }
    let out = StateVector::new(state.grid().clone(), amp);
    check_step_drift(state, &out, stats.steps)?;
    Ok(out)
}

fn check_step_drift(before: &StateVector, after: &StateVector, steps: usize) -> Result<()> {
    let drift = (after.norm() - before.norm()).abs();
    let budget = 1e-10 * steps.max(1) as f64 * before.norm().max(1.0);
    if drift > budget {
        return Err(Error::ValidationError {
            invariant: "split-step unitarity".into(),
            detail: format!("norm drift {drift:.3e} over {steps} steps"),
        });
    }
    Ok(())
}

/// Shared split-step machinery over a raw amplitude buffer.
pub(crate) struct SplitStepEngine<'a> {
    grid: &'a Grid,
    x2: Vec<f64>,
    xi2: Vec<f64>,
    potential: Option<&'a [f64]>,
}

impl<'a> SplitStepEngine<'a> {
    pub(crate) fn new(grid: &'a Grid, potential: Option<&'a [f64]>) -> Self {
        let mut x2 = vec![0.0; grid.len()];
        grid.for_each_point(|i, x| x2[i] = x.iter().map(|v| v * v).sum());
        let mut xi2 = vec![0.0; grid.len()];
        grid.for_each_freq(|i, xi| xi2[i] = xi.iter().map(|v| v * v).sum());
        Self { grid, x2, xi2, potential }
    }

    /// Evolves amp from t0 to t1 (either direction) within one regime piece.
    /// `on_step(t_new, amp)` fires after every completed step.
    pub(crate) fn evolve_piece(
        &self,
        amp: &mut [Complex64],
        t0: f64,
        t1: f64,
        plan: &PropagatorPlan,
        stats: &mut StepStats,
        on_step: &mut dyn FnMut(f64, &[Complex64]),
    ) {
        let sign = if t1 >= t0 { 1.0 } else { -1.0 };
        let norm0 = l2(amp, self.grid.volume_element());
        let mut t = t0;
        // Cached phase tables, rebuilt when dt or the k average changes.
        let mut cache_key = f64::NAN;
        let mut half_table: Vec<Complex64> = Vec::new();
        let mut kin_table: Vec<Complex64> = Vec::new();
        while (t1 - t) * sign > 1e-14 {
            let dt_mag = plan.step_size(t).min((t1 - t).abs());
            let dt = sign * dt_mag;
            let t_mid = t + dt / 2.0;
            let t_next = t + dt;
            let k1 = plan.schedule.mean_k(t.min(t_mid), t.max(t_mid));
            let k2 = plan.schedule.mean_k(t_mid.min(t_next), t_mid.max(t_next));
            let symmetric = (k1 - k2).abs() < 1e-15;
            if symmetric {
                let key = dt * (1.0 + k1);
                if key != cache_key {
                    cache_key = key;
                    half_table = self.half_phase_table(dt / 2.0, k1);
                    kin_table = self.kinetic_table(dt);
                }
                for (i, c) in amp.iter_mut().enumerate() {
                    *c *= half_table[i];
                }
                self.fourier_multiply(amp, &kin_table);
                for (i, c) in amp.iter_mut().enumerate() {
                    *c *= half_table[i];
                }
            } else {
                let h1 = self.half_phase_table(dt / 2.0, k1);
                let kin = self.kinetic_table(dt);
                let h2 = self.half_phase_table(dt / 2.0, k2);
                for (i, c) in amp.iter_mut().enumerate() {
                    *c *= h1[i];
                }
                self.fourier_multiply(amp, &kin);
                for (i, c) in amp.iter_mut().enumerate() {
                    *c *= h2[i];
                }
            }
            t = t_next;
            stats.steps += 1;
            on_step(t, amp);
        }
        let norm1 = l2(amp, self.grid.volume_element());
        stats.norm_drift = stats.norm_drift.max((norm1 - norm0).abs());
    }

    fn half_phase_table(&self, half_dt: f64, kbar: f64) -> Vec<Complex64> {
        let v = self.potential;
        self.x2
            .iter()
            .enumerate()
            .map(|(i, &x2)| {
                let pot = kbar * x2 / 2.0 + v.map_or(0.0, |f| f[i]);
                Complex64::from_polar(1.0, -half_dt * pot)
            })
            .collect()
    }

    fn kinetic_table(&self, dt: f64) -> Vec<Complex64> {
        self.xi2
            .iter()
            .map(|&xi2| Complex64::from_polar(1.0, -dt * xi2 / 2.0))
            .collect()
    }

    fn fourier_multiply(&self, amp: &mut [Complex64], table: &[Complex64]) {
        let sqrt_two_pi = (2.0 * PI).sqrt();
        for a in 0..self.grid.dim() {
            let ax = self.grid.axis(a);
            crate::lattice::fft::forward_axis(amp, ax.points, self.grid.strides()[a], ax.spacing() / sqrt_two_pi);
        }
        for (c, f) in amp.iter_mut().zip(table) {
            *c *= f;
        }
        for a in 0..self.grid.dim() {
            let ax = self.grid.axis(a);
            crate::lattice::fft::inverse_axis(amp, ax.points, self.grid.strides()[a], ax.freq_spacing() / sqrt_two_pi);
        }
    }
}

fn l2(amp: &[Complex64], vol: f64) -> f64 {
    (amp.iter().map(|c| c.norm_sqr()).sum::<f64>() * vol).sqrt()
}

/// One row of the escape profile: time, interior mass.
#[derive(Debug, Clone)]
pub struct EscapeProfile {
    pub rows: Vec<(f64, f64)>,
    /// Log-log slope fitted over rows with mass above the numeric floor.
    pub slope: f64,
}

/// Proposition-3 style escape measurement: evolve `phi` by the pure kinetic
/// flow exp(-i t^(1-2l) D^2/(2(1-2l))) and record the mass left inside the
/// slowly growing region sqrt(mu_jk)|r_k - r_j| <= eps^2 t^(1-2l)/(1-2l).
pub fn propagation_escape_profile(
    phi: &StateVector,
    frame: &crate::jacobi::JacobiFrame,
    pair: (usize, usize),
    sched: &CoefficientSchedule,
    eps: f64,
    times: &[f64],
) -> Result<EscapeProfile> {
    let l = sched.lambda();
    let map = frame.pair_map(pair.0, pair.1)?;
    let mu = frame.masses().pair_reduced_mass(pair.0, pair.1);
    let fhat = phi.to_fourier();
    let grid = phi.grid().clone();
    let mut rows = Vec::with_capacity(times.len());
    for &t in times {
        let tau = t.powf(1.0 - 2.0 * l) / (1.0 - 2.0 * l);
        let mut f = fhat.clone();
        f.multiply_phase_fn(|xi| -tau * xi.iter().map(|v| v * v).sum::<f64>() / 2.0);
        let psi = f.to_position();
        let radius = eps * eps * tau;
        let mut mass = 0.0;
        grid.for_each_point(|i, x| {
            let sep = map.apply(x);
            let r = sep.iter().map(|v| v * v).sum::<f64>().sqrt() * mu.sqrt();
            if r <= radius {
                mass += psi.amplitudes()[i].norm_sqr();
            }
        });
        rows.push((t, (mass * grid.volume_element()).sqrt()));
    }
    let slope = fit_loglog_slope(
        &rows
            .iter()
            .filter(|(_, m)| *m > 1e-13)
            .map(|&(t, m)| (t, m))
            .collect::<Vec<_>>(),
    );
    Ok(EscapeProfile { rows, slope })
}

/// Least-squares slope of ln(y) against ln(x).
pub fn fit_loglog_slope(rows: &[(f64, f64)]) -> f64 {
    if rows.len() < 2 {
        return 0.0;
    }
    let n = rows.len() as f64;
    let xs: Vec<f64> = rows.iter().map(|(t, _)| t.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|(_, m)| m.max(1e-300).ln()).collect();
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    if sxx == 0.0 {
        return 0.0;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jacobi::MassSet;
    use std::f64::consts::FRAC_PI_2;
    use crate::potentials::{PairPotential, RadialProfile};
    use approx::assert_abs_diff_eq;

    fn gaussian(grid: &Grid, width: f64, center: &[f64], momentum: &[f64]) -> StateVector {
        StateVector::from_fn(grid.clone(), |x| {
            let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
            let phase: f64 = x.iter().zip(momentum).map(|(a, p)| a * p).sum();
            Complex64::from_polar((-r2 / (2.0 * width * width)).exp(), phase)
        })
        .normalized()
    }

    fn desk() -> CoefficientSchedule {
        CoefficientSchedule::desk_default()
    }

    #[test]
    fn mehler_tiny_time_is_identity() {
        let grid = Grid::uniform(2, 64, 8.0).unwrap();
        let psi = gaussian(&grid, 1.0, &[0.3, -0.2], &[1.0, 0.5]);
        let out = mehler_step(&psi, 1e-8, &desk()).unwrap();
        assert!(psi.l2_distance(&out) <= 1e-7);
        // t = 0 itself is regular for this form.
        let same = mehler_step(&psi, 0.0, &desk()).unwrap();
        assert!(psi.l2_distance(&same) <= 1e-12);
    }

    #[test]
    fn mehler_ground_state_phase() {
        // Ground state of D^2/2 + x^2/2 in dim 2 has energy 1; after t = 1
        // the state is multiplied by e^{-i}.
        let grid = Grid::uniform(2, 128, 14.0).unwrap();
        let psi = StateVector::from_fn(grid.clone(), |x| {
            Complex64::new((-(x[0] * x[0] + x[1] * x[1]) / 2.0).exp(), 0.0)
        })
        .normalized();
        let out = mehler_step(&psi, 1.0, &desk()).unwrap();
        let expected = psi.scaled(Complex64::from_polar(1.0, -1.0));
        assert!(out.l2_distance(&expected) <= 1e-8);
        assert_abs_diff_eq!(out.norm(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn mehler_singular_time_rejected() {
        let grid = Grid::uniform(2, 32, 6.0).unwrap();
        let psi = gaussian(&grid, 1.0, &[0.0, 0.0], &[0.0, 0.0]);
        assert!(matches!(
            mehler_step(&psi, FRAC_PI_2, &desk()),
            Err(Error::MehlerSingularTime { .. })
        ));
        assert!(matches!(
            mehler_step(&psi, 2.5, &desk()),
            Err(Error::InsideSwitchWindow { .. })
        ));
    }

    #[test]
    fn mehler_agrees_with_split_step() {
        // The closed form needs box room for the kinetic-spread
        // intermediate: sigma_eff = w sqrt(1 + (tan wt / w^2)^2).
        let grid = Grid::uniform(2, 256, 20.0).unwrap();
        let psi = gaussian(&grid, 1.0, &[0.3, 0.0], &[0.6, -0.3]);
        let plan = PropagatorPlan::with_dt(desk(), 5e-4, 1e-3);
        for &t in &[0.7, 1.2] {
            let closed = mehler_step(&psi, t, &desk()).unwrap();
            let stepped = split_step_evolve(&psi, 0.0, t, &plan, None).unwrap();
            let d = closed.l2_distance(&stepped);
            assert!(d <= 2e-6, "t = {t}: |closed - split| = {d:.3e}");
        }
    }

    #[test]
    fn mehler_negative_cosine_branch_phase() {
        // Past wt = pi/2 the scaling factor carries an extra parity and
        // sign; the hop-split chain (accurate at any angle) is the oracle.
        // A wrong branch phase would give an O(1) distance.
        let grid = Grid::uniform(2, 256, 20.0).unwrap();
        let psi = gaussian(&grid, 1.0, &[0.2, 0.1], &[0.4, -0.2]);
        for &t in &[1.8, -1.8] {
            let closed = mehler_step(&psi, t, &desk()).unwrap();
            let hopped = window_propagate(&psi, t, &desk());
            let d = closed.l2_distance(&hopped);
            assert!(d <= 2e-2, "t = {t}: branch distance {d:.3e}");
        }
    }

    #[test]
    fn window_propagate_composes_hops() {
        let grid = Grid::uniform(2, 256, 20.0).unwrap();
        let psi = gaussian(&grid, 1.0, &[0.4, -0.3], &[0.5, 0.2]);
        let direct = mehler_step(&psi, 0.9, &desk()).unwrap();
        let hopped = window_propagate(&psi, 0.9, &desk());
        assert!(direct.l2_distance(&hopped) <= 1e-9);
        // Adjointness: forward then backward is the identity.
        let there = window_propagate(&psi, 1.3, &desk());
        let back = window_propagate(&there, -1.3, &desk());
        assert!(psi.l2_distance(&back) <= 1e-9);
    }

    #[test]
    fn split_step_norm_and_reversal() {
        let grid = Grid::uniform(2, 64, 10.0).unwrap();
        let psi = gaussian(&grid, 1.0, &[0.5, 0.5], &[1.0, 0.0]);
        let masses = MassSet::unit(2);
        let frame = crate::jacobi::JacobiFrame::pair_centered(&masses, 2, 1, 2).unwrap();
        let pot = PairPotential::new(
            (1, 2),
            RadialProfile::Gaussian { amplitude: 0.5, width: 1.0 },
            2.0,
            None,
        )
        .unwrap();
        let set = PotentialSet::new(&frame, &[pot]).unwrap();
        let plan = PropagatorPlan::new(desk());
        let fwd = full_propagate(&psi, 1.0, 0.0, &plan, &set).unwrap();
        assert_abs_diff_eq!(fwd.norm(), 1.0, epsilon = 1e-9);
        let back = full_propagate(&fwd, 0.0, 1.0, &plan, &set).unwrap();
        assert!(psi.l2_distance(&back) <= 1e-9);
    }

    #[test]
    fn split_step_second_order_convergence() {
        let grid = Grid::uniform(2, 64, 10.0).unwrap();
        let psi = gaussian(&grid, 1.0, &[0.8, -0.2], &[1.0, 0.5]);
        let masses = MassSet::unit(2);
        let frame = crate::jacobi::JacobiFrame::pair_centered(&masses, 2, 1, 2).unwrap();
        let pot = PairPotential::new(
            (1, 2),
            RadialProfile::Gaussian { amplitude: 0.8, width: 1.0 },
            2.0,
            None,
        )
        .unwrap();
        let set = PotentialSet::new(&frame, &[pot]).unwrap();
        let field = set.sample_total(&grid);
        let run = |dt: f64| {
            let plan = PropagatorPlan::with_dt(desk(), dt, 1e-3);
            full_propagate_field(&psi, 1.0, 0.0, &plan, Some(&field.values)).unwrap()
        };
        let reference = run(1.0 / 1024.0);
        let e1 = run(1.0 / 64.0).l2_distance(&reference);
        let e2 = run(1.0 / 128.0).l2_distance(&reference);
        let ratio = e1 / e2;
        assert!(
            (3.5..=4.5).contains(&ratio),
            "Richardson ratio {ratio} outside [3.5, 4.5] (e1 = {e1:.3e}, e2 = {e2:.3e})"
        );
    }

    #[test]
    fn factorization_identity_positive_branch() {
        // U0(t,s) by split-step (V = 0, k = sigma/tau^2) against
        // U_{0,lambda}(t) U_{0,lambda}(s)^*.
        let grid = Grid::uniform(2, 256, 36.0).unwrap();
        let psi = gaussian(&grid, 1.3, &[0.0, 0.0], &[0.6, -0.3]);
        let sched = desk();
        let plan = PropagatorPlan::new(sched);
        let (t, s) = (4.0, 2.0);
        let stepped = split_step_evolve(&psi, s, t, &plan, None).unwrap();
        let adj = free_factorized_adjoint(&psi, s, &sched).unwrap();
        let fact = free_factorized(&adj, t, &sched).unwrap();
        let d = stepped.l2_distance(&fact);
        assert!(d <= 1e-4, "factorization mismatch {d:.3e}");
    }

    #[test]
    fn factorization_identity_negative_branch() {
        let grid = Grid::uniform(2, 256, 36.0).unwrap();
        let psi = gaussian(&grid, 1.3, &[0.0, 0.0], &[0.6, 0.3]);
        let sched = desk();
        let plan = PropagatorPlan::new(sched);
        let (t, s) = (-4.0, -2.0);
        let stepped = split_step_evolve(&psi, s, t, &plan, None).unwrap();
        let adj = free_factorized_adjoint(&psi, s, &sched).unwrap();
        let fact = free_factorized(&adj, t, &sched).unwrap();
        let d = stepped.l2_distance(&fact);
        assert!(d <= 1e-4, "negative-branch mismatch {d:.3e}");
    }

    #[test]
    fn free_factorized_norm_and_group_velocity() {
        let grid = Grid::uniform(2, 256, 32.0).unwrap();
        let p = [1.0, 0.0];
        let psi = gaussian(&grid, 1.0, &[0.0, 0.0], &p);
        let sched = desk();
        let t = 4.0;
        let out = free_factorized(&psi, t, &sched).unwrap();
        assert_abs_diff_eq!(out.norm(), 1.0, epsilon = 1e-10);
        // Mean position p t^(1-l) / (1 - 2l): the classical t^(1-lambda) law.
        let l = sched.lambda();
        let expected = p[0] * t.powf(1.0 - l) / (1.0 - 2.0 * l);
        let obs = out.observables();
        assert_abs_diff_eq!(obs.mean_position[0], expected, epsilon = 0.05 * expected.abs());
        assert_abs_diff_eq!(obs.mean_position[1], 0.0, epsilon = 0.05);
    }

    #[test]
    fn free_propagate_group_law_and_adjoint() {
        let grid = Grid::uniform(2, 128, 16.0).unwrap();
        let psi = gaussian(&grid, 1.0, &[0.2, -0.1], &[0.7, 0.2]);
        let sched = desk();
        // t = s is the identity.
        let same = free_propagate(&psi, 1.1, 1.1, &sched).unwrap();
        assert!(psi.l2_distance(&same) <= 1e-12);
        // Group law through the boundary: U0(3,2) U0(2,0) vs U0(3,0).
        let via = {
            let a = free_propagate(&psi, 2.0, 0.0, &sched).unwrap();
            free_propagate(&a, 3.0, 2.0, &sched).unwrap()
        };
        let direct = free_propagate(&psi, 3.0, 0.0, &sched).unwrap();
        assert!(via.l2_distance(&direct) <= 5e-5);
        // Adjoint: U0(s,t) U0(t,s) is the identity.
        let there = free_propagate(&psi, 2.7, -0.4, &sched).unwrap();
        let back = free_propagate(&there, -0.4, 2.7, &sched).unwrap();
        assert!(psi.l2_distance(&back) <= 1e-9);
    }

    #[test]
    fn full_propagate_matches_free_for_zero_potential() {
        let grid = Grid::uniform(2, 128, 16.0).unwrap();
        let psi = gaussian(&grid, 1.0, &[0.3, 0.0], &[0.5, -0.5]);
        let sched = desk();
        let plan = PropagatorPlan::new(sched);
        let full = full_propagate_field(&psi, 2.5, -0.5, &plan, None).unwrap();
        let free = free_propagate(&psi, 2.5, -0.5, &sched).unwrap();
        assert!(full.l2_distance(&free) <= 1e-5);
    }

    /// Packet with hard Fourier support: Gaussian bump around xi0 windowed
    /// to {lo <= |xi| <= hi} (the Proposition-3 hypothesis is a support
    /// condition, so tails must be genuinely cut, not small).
    fn fourier_window_packet(
        grid: &Grid,
        xi0: &[f64],
        sigma: f64,
        lo: f64,
        hi: f64,
        edge: f64,
    ) -> StateVector {
        let mut f = StateVector::zeros(grid.clone()).to_fourier();
        let dim = grid.dim();
        let mut amp = vec![Complex64::default(); grid.len()];
        grid.for_each_freq(|i, xi| {
            let r: f64 = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r < lo || r > hi {
                return;
            }
            let win_lo = crate::potentials::smooth_cutoff(1.0 - (r - lo).min(edge) / edge * 0.5);
            let win_hi = crate::potentials::smooth_cutoff(1.0 - (hi - r).min(edge) / edge * 0.5);
            let d2: f64 = xi.iter().zip(xi0).map(|(a, b)| (a - b) * (a - b)).sum();
            amp[i] = Complex64::new((-d2 / (2.0 * sigma * sigma)).exp() * win_lo * win_hi, 0.0);
        });
        f.amplitudes_mut().copy_from_slice(&amp);
        let _ = dim;
        f.to_position().normalized()
    }

    #[test]
    fn escape_profile_cone_packet_decays_and_control_stays() {
        let sched = desk();
        let masses = MassSet::unit(2);
        let frame = crate::jacobi::JacobiFrame::pair_centered(&masses, 2, 1, 2).unwrap();
        // The interior ball must span several cells already at t = 2, so
        // the box is wide and fine at once.
        let grid = Grid::uniform(2, 512, 64.0).unwrap();
        let eps = 0.6;
        // Support floor well above the ball growth rate eps^2 (the
        // hypothesis only asks for support inside {|xi| >= eps}).
        let cone = fourier_window_packet(&grid, &[2.4, 0.0], 1.2, 1.6, 3.5, 0.7);
        let times: Vec<f64> = (0..10).map(|i| 2.0 * (32.0f64).powf(i as f64 / 9.0)).collect();
        let prof = propagation_escape_profile(&cone, &frame, (1, 2), &sched, eps, &times).unwrap();
        assert!(prof.slope <= -1.0, "cone slope {}", prof.slope);
        // Control packet violating the hypothesis: support inside |xi| < eps/2.
        let slow = fourier_window_packet(&grid, &[0.0, 0.0], 0.15, 0.0, eps / 2.0, 0.1);
        let prof2 = propagation_escape_profile(&slow, &frame, (1, 2), &sched, eps, &times).unwrap();
        assert!(prof2.slope >= -0.2, "control slope {}", prof2.slope);
    }
}
