//! Probe construction, numerical wave operators by Cook-style time
//! integration with a certified free-flight jump, scattering matrix
//! elements, and the integrand decay monitors.

use crate::error::{Error, Result};
use crate::jacobi::{momentum_cone_margin, JacobiFrame};
use crate::lattice::{Grid, StateVector};
use crate::potentials::{smooth_cutoff, PotentialSet};
use crate::propagators::displaced::DisplacedState;
use crate::propagators::{fit_loglog_slope, PropagatorPlan};
use crate::schedule::CoefficientSchedule;
use num_complex::Complex64;
use std::collections::BTreeMap;

/// Which wave operator: the t -> +inf or t -> -inf limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeSign {
    Plus,
    Minus,
}

impl TimeSign {
    pub fn factor(self) -> f64 {
        match self {
            TimeSign::Plus => 1.0,
            TimeSign::Minus => -1.0,
        }
    }
}

/// Probe parameters: pair boost v, impact offset y in v-hat-perp (relative
/// coordinate units), envelope widths, and the spectator directions e_j.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSpec {
    pub speed: f64,
    /// Unit vector v-hat in R^d.
    pub direction: Vec<f64>,
    /// Offset y in v-hat-perp, in r_2 - r_1 units.
    pub offset: Vec<f64>,
    pub eta12: f64,
    /// Gaussian width of the pair envelope phi_1 before windowing.
    pub pair_width: f64,
    /// Unit directions e_j, one per spectator (mutually distinct and
    /// distinct from v-hat).
    pub spectator_dirs: Vec<Vec<f64>>,
    pub spectator_width: f64,
}

impl ProbeSpec {
    pub fn two_body(speed: f64, direction: Vec<f64>, offset: Vec<f64>, eta12: f64, width: f64) -> Self {
        Self {
            speed,
            direction,
            offset,
            eta12,
            pair_width: width,
            spectator_dirs: Vec::new(),
            spectator_width: 1.5,
        }
    }

    pub fn velocity(&self) -> Vec<f64> {
        self.direction.iter().map(|c| c * self.speed).collect()
    }

    pub fn with_speed(&self, speed: f64) -> Self {
        Self { speed, ..self.clone() }
    }

    pub fn with_offset(&self, offset: Vec<f64>) -> Self {
        Self { offset, ..self.clone() }
    }

    pub fn with_direction(&self, direction: Vec<f64>) -> Self {
        Self { direction, ..self.clone() }
    }

    pub fn with_pair_width(&self, pair_width: f64) -> Self {
        Self { pair_width, ..self.clone() }
    }
}

/// Derived probe data: velocity labels, per-pair momentum windows, and the
/// window shifts actually induced by the boost.
#[derive(Debug, Clone)]
pub struct ProbeFamily {
    pub spec: ProbeSpec,
    pub velocity: Vec<f64>,
    /// v_jk = v_k - v_j with v_1 = -v/2, v_2 = v/2, v_j = |v|^2 e_j.
    pub pair_velocities: BTreeMap<(usize, usize), Vec<f64>>,
    /// Boost shift of the pair momentum D_jk induced by the translation
    /// T_v: v for (1,2), v_k - v for (1,k) and (2,k), v_k - v_j otherwise.
    /// Coincides with `pair_velocities` up to the O(|v|) bookkeeping of the
    /// pair labels; the window property holds exactly for these shifts.
    pub window_shifts: BTreeMap<(usize, usize), Vec<f64>>,
    /// Window radii: eta_12, eta_1k = eta_2k = 1 + eta_12, eta_jk = 2.
    pub eta: BTreeMap<(usize, usize), f64>,
    /// The pair envelope phi_1 on its own d-dimensional grid slice.
    pub pair_envelope: StateVector,
}

/// Raised-cosine taper: 1 at u = 0, exactly 0 for u >= 1, with uniformly
/// small derivatives. Far cleaner position-space tails than sharper
/// windows at the same support radius.
pub fn cosine_taper(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        let c = (std::f64::consts::FRAC_PI_2 * u).cos();
        c * c
    }
}

/// Envelope with exactly compact Fourier support: Gaussian hard-truncated
/// at radius eta with a raised-cosine window, renormalized.
pub fn windowed_envelope(grid: &Grid, width: f64, eta: f64) -> Result<StateVector> {
    let mut f = StateVector::zeros(grid.clone()).to_fourier();
    let g = grid.clone();
    let mut amp = vec![Complex64::default(); grid.len()];
    g.for_each_freq(|i, xi| {
        let r: f64 = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        let gauss = (-r * r * width * width / 2.0).exp();
        amp[i] = Complex64::new(gauss * cosine_taper(r / eta), 0.0);
    });
    f.amplitudes_mut().copy_from_slice(&amp);
    let out = f.to_position().normalized();
    let residual = out.to_fourier().mass_outside_ball(eta);
    if residual > 1e-12 {
        return Err(Error::SupportViolation { mass: residual, radius: eta });
    }
    Ok(out)
}

/// Product envelope for the pair-centered frame: phi_1 on the first d axes
/// (Fourier support in the eta_12 ball), unit-ball-windowed Gaussians on
/// each spectator block.
fn product_envelope(grid: &Grid, d: usize, spec: &ProbeSpec) -> Result<StateVector> {
    let mut f = StateVector::zeros(grid.clone()).to_fourier();
    let g = grid.clone();
    let mut amp = vec![Complex64::default(); grid.len()];
    let blocks = grid.dim() / d;
    g.for_each_freq(|i, xi| {
        let mut w = 1.0;
        for b in 0..blocks {
            let r: f64 = xi[b * d..(b + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt();
            let (radius, width) =
                if b == 0 { (spec.eta12, spec.pair_width) } else { (1.0, spec.spectator_width) };
            w *= (-r * r * width * width / 2.0).exp() * cosine_taper(r / radius);
        }
        amp[i] = Complex64::new(w, 0.0);
    });
    f.amplitudes_mut().copy_from_slice(&amp);
    Ok(f.to_position().normalized())
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n: f64 = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    v.iter().map(|c| c / n).collect()
}

fn probe_family(spec: &ProbeSpec, frame: &JacobiFrame, pair_envelope: StateVector) -> Result<ProbeFamily> {
    let d = frame.spatial_dim();
    let n = frame.n_particles();
    if spec.direction.len() != d {
        return Err(Error::InvalidProbe(format!(
            "direction has {} components, expected {d}",
            spec.direction.len()
        )));
    }
    if spec.spectator_dirs.len() != n - 2 {
        return Err(Error::InvalidProbe(format!(
            "{} spectator directions for {} particles",
            spec.spectator_dirs.len(),
            n
        )));
    }
    let vhat = unit(&spec.direction);
    let v = spec.velocity();
    // Offset must lie in vhat-perp.
    let along: f64 = spec.offset.iter().zip(&vhat).map(|(a, b)| a * b).sum();
    if along.abs() > 1e-9 * (1.0 + spec.speed) {
        return Err(Error::InvalidProbe(format!(
            "offset has component {along:.3e} along v-hat"
        )));
    }
    // Particle velocity labels.
    let mut labels: Vec<Vec<f64>> = Vec::with_capacity(n);
    labels.push(v.iter().map(|c| -c / 2.0).collect());
    labels.push(v.iter().map(|c| c / 2.0).collect());
    for (j, e) in spec.spectator_dirs.iter().enumerate() {
        if e.len() != d {
            return Err(Error::InvalidProbe(format!("spectator direction {} has wrong dim", j + 3)));
        }
        let e = unit(e);
        labels.push(e.iter().map(|c| c * spec.speed * spec.speed).collect());
    }
    // Mutually distinct directions.
    for a in 0..n {
        for b in a + 1..n {
            let da = if a < 2 { unit(&vhat) } else { unit(&labels[a]) };
            let db = if b < 2 { unit(&vhat) } else { unit(&labels[b]) };
            let dot: f64 = da.iter().zip(&db).map(|(x, y)| x * y).sum();
            if a >= 2 && dot > 1.0 - 1e-12 {
                return Err(Error::InvalidProbe(format!(
                    "directions for particles {} and {} coincide",
                    a + 1,
                    b + 1
                )));
            }
        }
    }

    let mut pair_velocities = BTreeMap::new();
    let mut window_shifts = BTreeMap::new();
    let mut eta = BTreeMap::new();
    for (j, k) in frame.all_pairs() {
        let vjk: Vec<f64> = labels[k - 1].iter().zip(&labels[j - 1]).map(|(a, b)| a - b).collect();
        pair_velocities.insert((j, k), vjk);
        let shift: Vec<f64> = if (j, k) == (1, 2) {
            v.clone()
        } else if j <= 2 {
            // D_1k = D_2k = D_k - D_12 boosts by v_k - v.
            labels[k - 1].iter().zip(&v).map(|(a, b)| a - b).collect()
        } else {
            labels[k - 1].iter().zip(&labels[j - 1]).map(|(a, b)| a - b).collect()
        };
        window_shifts.insert((j, k), shift);
        let radius = if (j, k) == (1, 2) {
            spec.eta12
        } else if j <= 2 {
            1.0 + spec.eta12
        } else {
            2.0
        };
        eta.insert((j, k), radius);
    }
    Ok(ProbeFamily {
        spec: spec.clone(),
        velocity: v,
        pair_velocities,
        window_shifts,
        eta,
        pair_envelope,
    })
}

/// Builds the probe in displaced form: envelope at the origin, boost and
/// offset in the classical data. The grid covers internal coordinates of
/// the pair-centered frame; its first d axes are the pair block.
pub fn build_displaced_probe(
    spec: &ProbeSpec,
    grid: &Grid,
    frame: &JacobiFrame,
) -> Result<(DisplacedState, ProbeFamily)> {
    let d = frame.spatial_dim();
    let n = frame.n_particles();
    if grid.dim() != d * (n - 1) {
        return Err(Error::InvalidProbe(format!(
            "grid dim {} does not match internal dim {}",
            grid.dim(),
            d * (n - 1)
        )));
    }
    let envelope = product_envelope(grid, d, spec)?;
    // phi_1 alone on the pair-block axes, for the reconstruction oracle.
    let pair_axes: Vec<crate::lattice::AxisSpec> = (0..d).map(|a| grid.axis(a)).collect();
    let pair_grid = Grid::per_axis(pair_axes)?;
    let phi1 = windowed_envelope(&pair_grid, spec.pair_width, spec.eta12)?;
    let family = probe_family(spec, frame, phi1)?;

    let mu12 = frame.masses().pair_reduced_mass(1, 2);
    let mut q0 = vec![0.0; grid.dim()];
    for a in 0..d {
        q0[a] = mu12.sqrt() * spec.offset.get(a).copied().unwrap_or(0.0);
    }
    let mut p0 = vec![0.0; grid.dim()];
    for a in 0..d {
        p0[a] = family.velocity[a];
    }
    for (js, e) in spec.spectator_dirs.iter().enumerate() {
        let e = unit(e);
        for a in 0..d {
            p0[(js + 1) * d + a] = spec.speed * spec.speed * e[a];
        }
    }
    Ok((DisplacedState::new(envelope, q0, p0), family))
}

/// Materializes the probe on a lab grid. Valid when the boost fits under
/// the grid Nyquist and the offset inside the box; fast probes belong in
/// displaced form instead.
pub fn build_probe(spec: &ProbeSpec, grid: &Grid, frame: &JacobiFrame) -> Result<StateVector> {
    let (disp, family) = build_displaced_probe(spec, grid, frame)?;
    for a in 0..grid.dim() {
        let need = disp.momentum()[a].abs() + family.eta[&(1, 2)].max(2.0);
        let nyq = grid.axis(a).nyquist();
        if need > 0.9 * nyq {
            return Err(Error::InvalidProbe(format!(
                "boost {need:.2} exceeds 90% of Nyquist {nyq:.2} on axis {a}; use the displaced pipeline"
            )));
        }
    }
    disp.to_state()
}

/// Momentum-space window check of the probe identity
/// f_jk(D_jk - shift_jk) Phi_v = Phi_v: returns the envelope's Fourier mass
/// outside the eta_jk ball of the pair momentum map.
pub fn window_residual(
    disp: &DisplacedState,
    family: &ProbeFamily,
    frame: &JacobiFrame,
    pair: (usize, usize),
) -> f64 {
    let d = frame.spatial_dim();
    let eta = family.eta[&pair];
    let f = disp.envelope().to_fourier();
    let grid = disp.grid().clone();
    let mut outside = 0.0;
    let mut total = 0.0;
    grid.for_each_freq(|i, xi| {
        let w = f.amplitudes()[i].norm_sqr();
        total += w;
        // D_jk on the envelope block momenta.
        let mut dk = vec![0.0; d];
        let (j, k) = pair;
        if pair == (1, 2) {
            dk.copy_from_slice(&xi[..d]);
        } else if j <= 2 {
            for a in 0..d {
                dk[a] = xi[(k - 2) * d + a] - xi[a];
            }
        } else {
            for a in 0..d {
                dk[a] = xi[(k - 2) * d + a] - xi[(j - 2) * d + a];
            }
        }
        let r: f64 = dk.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r > eta {
            outside += w;
        }
    });
    if total > 0.0 {
        outside / total
    } else {
        0.0
    }
}

/// Conical momentum region: axis, aperture, lower radius, and the margin
/// eps_0 = min |L_jk w| over the cap.
#[derive(Debug, Clone)]
pub struct ConeSpec {
    pub center: Vec<f64>,
    pub aperture: f64,
    pub lower_radius: f64,
    pub margin: f64,
}

impl ConeSpec {
    /// Validates the axis against every pair kernel and derives the margin;
    /// the lower radius defaults to margin/2.
    pub fn new(
        frame: &JacobiFrame,
        center: Vec<f64>,
        aperture: f64,
        lower_radius: Option<f64>,
    ) -> Result<Self> {
        let margin = momentum_cone_margin(frame, &center, aperture, 10_000, 20_260_810)?;
        let lower = lower_radius.unwrap_or(margin / 2.0);
        if lower > margin {
            return Err(Error::ValidationError {
                invariant: "eps <= eps0".into(),
                detail: format!("lower radius {lower} above margin {margin}"),
            });
        }
        Ok(Self { center: unit(&center), aperture, lower_radius: lower, margin })
    }
}

/// Packet with Fourier support inside the cone, radially banded to
/// [band_lo, band_hi] with smooth edges of width `edge`.
pub fn build_cone_packet(
    grid: &Grid,
    cone: &ConeSpec,
    band_lo: f64,
    band_hi: f64,
    radial_center: f64,
    radial_sigma: f64,
    edge: f64,
) -> Result<StateVector> {
    assert!(band_lo >= cone.lower_radius - 1e-12);
    let mut f = StateVector::zeros(grid.clone()).to_fourier();
    let g = grid.clone();
    let mut amp = vec![Complex64::default(); grid.len()];
    g.for_each_freq(|i, xi| {
        let r: f64 = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r < band_lo || r > band_hi {
            return;
        }
        let win_lo = smooth_cutoff(1.0 - (r - band_lo).min(edge) / edge * 0.5);
        let win_hi = smooth_cutoff(1.0 - (band_hi - r).min(edge) / edge * 0.5);
        // Directional window: chordal distance to the cone axis.
        let chord: f64 = xi
            .iter()
            .zip(&cone.center)
            .map(|(x, c)| (x / r - c) * (x / r - c))
            .sum::<f64>()
            .sqrt();
        let win_dir = smooth_cutoff(chord / cone.aperture.max(1e-12));
        let radial = (-(r - radial_center) * (r - radial_center) / (2.0 * radial_sigma * radial_sigma)).exp();
        amp[i] = Complex64::new(radial * win_lo * win_hi * win_dir, 0.0);
    });
    f.amplitudes_mut().copy_from_slice(&amp);
    let out = f.to_position().normalized();
    if out.norm() == 0.0 {
        return Err(Error::InvalidProbe("cone packet has no support on the grid".into()));
    }
    Ok(out)
}

/// Convergence record of a Cook integration.
#[derive(Debug, Clone)]
pub struct CookHistory {
    /// (t, ||V U_{0,lambda}(t) Phi||), with far-time entries replaced by the
    /// certified analytic bound once the free envelope outgrows the grid.
    pub rows: Vec<(f64, f64)>,
    /// Log-log slope fitted over |t| >= T.
    pub slope: f64,
    /// Extrapolated integral of the integrand beyond the horizon.
    pub tail_bound: f64,
    /// Integrated bound beyond the cut time actually used.
    pub jump_error: f64,
}

/// Wave-operator output: the state at t = 0 plus its convergence history.
#[derive(Debug, Clone)]
pub struct WaveOperatorResult {
    pub state: DisplacedState,
    pub history: CookHistory,
    pub t_cut: f64,
}

fn integrand_times(sched: &CoefficientSchedule, t_max: f64) -> Vec<f64> {
    let tsw = sched.t_switch();
    let mut ts = Vec::new();
    // The window integrand can be a sharp traversal peak near t = 0;
    // sample it densely.
    let n_window = 64;
    for i in 1..=n_window {
        ts.push(tsw * i as f64 / n_window as f64);
    }
    let n_tail = 24;
    for i in 1..=n_tail {
        ts.push(tsw * (t_max / tsw).powf(i as f64 / n_tail as f64));
    }
    ts
}

/// Exact Cook-integrand evaluator.
///
/// Pulling the unimodular chirp out of the norm and changing variables
/// through the scaling factor, the integrand collapses to
///
///   ||V U_{0,lambda}(t) Phi|| = ||V(scale(t) u + Q(t)) K(tau(t)) chi_0||,
///
/// with (scale, tau) = (cos wt, tan(wt)/w) inside the window and
/// (|t|^lambda, +- |t|^(1-2l)/(1-2l)) outside. K(tau) chi_0 spreads only
/// ballistically (no dilation blow-up), so a coarse, wide monitor grid
/// evaluates the rows exactly out to the horizon.
pub struct CookMonitor {
    sched: CoefficientSchedule,
    grid: Grid,
    chi_hat: crate::lattice::FourierState,
    q0: Vec<f64>,
    p0: Vec<f64>,
    /// Per-axis momentum radii of the envelope blocks.
    xi_axis: Vec<f64>,
    /// Per-axis initial position radii.
    r0_axis: Vec<f64>,
}

impl CookMonitor {
    /// Builds the monitor for a probe: the envelope is reconstructed from
    /// its spec on a grid sized for the ballistic spread at `t_max`.
    pub fn new(
        spec: &ProbeSpec,
        probe: &DisplacedState,
        frame: &JacobiFrame,
        sched: &CoefficientSchedule,
        t_max: f64,
    ) -> Result<Self> {
        let d = frame.spatial_dim();
        let dim = frame.internal_dim();
        let l = sched.lambda();
        let tau_max = t_max.powf(1.0 - 2.0 * l) / (1.0 - 2.0 * l);
        let mut axes = Vec::with_capacity(dim);
        let mut xi_axis = Vec::with_capacity(dim);
        for a in 0..dim {
            let (eta, width) = if a < d {
                (spec.eta12, spec.pair_width)
            } else {
                (1.0, spec.spectator_width)
            };
            let r0 = 7.0 * width.max(1.0 / eta);
            let half = 1.15 * (r0 + tau_max * eta) + 2.0;
            // Nyquist comfortably above the block momentum radius.
            let dx = std::f64::consts::PI / (1.6 * eta);
            let mut n = ((2.0 * half / dx).ceil() as usize).next_multiple_of(2);
            if n < 32 {
                n = 32;
            }
            axes.push(crate::lattice::AxisSpec::new(n, half));
            xi_axis.push(eta);
        }
        let grid = Grid::per_axis(axes)?;
        let r0_axis: Vec<f64> = (0..dim)
            .map(|a| {
                let width = if a < d { spec.pair_width } else { spec.spectator_width };
                7.0 * width.max(1.0 / xi_axis[a])
            })
            .collect();
        let chi = product_envelope(&grid, d, spec)?;
        Ok(Self {
            sched: *sched,
            grid: grid.clone(),
            chi_hat: chi.to_fourier(),
            q0: probe.center().to_vec(),
            p0: probe.momentum().to_vec(),
            xi_axis,
            r0_axis,
        })
    }

    /// Monitor for an arbitrary displaced state: the envelope is embedded
    /// by zero-padding into a wider grid at the same spacing, so the rows
    /// stay exact for transported probes whose envelope is no longer the
    /// constructed product.
    pub fn from_state(
        probe: &DisplacedState,
        sched: &CoefficientSchedule,
        t_max: f64,
        xi_axis: Vec<f64>,
    ) -> Result<Self> {
        let src = probe.grid().clone();
        let dim = src.dim();
        assert_eq!(xi_axis.len(), dim);
        let l = sched.lambda();
        let tau_max = t_max.powf(1.0 - 2.0 * l) / (1.0 - 2.0 * l);
        let mut axes = Vec::with_capacity(dim);
        let mut factor = Vec::with_capacity(dim);
        for a in 0..dim {
            let ax = src.axis(a);
            let need = 1.15 * (ax.half_width + tau_max * xi_axis[a]) + 2.0;
            let k = ((need / ax.half_width).ceil() as usize).max(1);
            axes.push(crate::lattice::AxisSpec::new(ax.points * k, ax.half_width * k as f64));
            factor.push(k);
        }
        let grid = Grid::per_axis(axes)?;
        let mut amp = vec![Complex64::default(); grid.len()];
        let src_amp = probe.envelope().amplitudes();
        // Row-major embed: source index j on axis a maps to
        // j + (n_new - n_old)/2.
        let mut idx = vec![0usize; dim];
        for (flat, value) in src_amp.iter().enumerate() {
            let mut target = 0usize;
            for a in 0..dim {
                let off = (grid.axis(a).points - src.axis(a).points) / 2;
                target += (idx[a] + off) * grid.strides()[a];
            }
            amp[target] = *value;
            for a in (0..dim).rev() {
                idx[a] += 1;
                if idx[a] < src.axis(a).points {
                    break;
                }
                idx[a] = 0;
            }
            let _ = flat;
        }
        let chi = StateVector::new(grid.clone(), amp);
        let r0_axis: Vec<f64> = (0..dim).map(|a| src.axis(a).half_width).collect();
        Ok(Self {
            sched: *sched,
            grid,
            chi_hat: chi.to_fourier(),
            q0: probe.center().to_vec(),
            p0: probe.momentum().to_vec(),
            xi_axis,
            r0_axis,
        })
    }

    /// (scale, tau) of the free reference at time t.
    fn scale_tau(&self, t: f64) -> (f64, f64) {
        let tsw = self.sched.t_switch();
        if t.abs() < tsw {
            let wt = self.sched.omega() * t;
            (wt.cos(), wt.tan() / self.sched.omega())
        } else {
            let l = self.sched.lambda();
            let tau = t.abs().powf(1.0 - 2.0 * l) / (1.0 - 2.0 * l);
            (t.abs().powf(l), if t > 0.0 { tau } else { -tau })
        }
    }

    /// Whether the ballistically spread envelope still fits the grid at
    /// kinetic time tau.
    fn fits(&self, tau: f64) -> bool {
        (0..self.grid.dim()).all(|a| {
            let spread = self.r0_axis[a] + tau.abs() * self.xi_axis[a];
            spread < 0.92 * self.grid.axis(a).half_width
        })
    }

    /// ||V U_{0,lambda}(t) Phi||, exact on the monitor grid.
    pub fn row(&self, t: f64, set: &PotentialSet) -> Option<f64> {
        let (scale, tau) = self.scale_tau(t);
        if !self.fits(tau) {
            return None;
        }
        let mut f = self.chi_hat.clone();
        f.multiply_phase_fn(|xi| -tau * xi.iter().map(|v| v * v).sum::<f64>() / 2.0);
        let psi = f.to_position();
        // The classical displacement follows the same branch as the free
        // reference: the window rotation inside |t| < T, the factorized
        // transport Q = |t|^lambda (Q0 + tau P0) outside (U_{0,lambda}
        // jumps at the switch time by construction).
        let q: Vec<f64> = if t.abs() < self.sched.t_switch() {
            self.sched.flow_vec(&self.q0, &self.p0, 0.0, t).0
        } else {
            self.q0
                .iter()
                .zip(&self.p0)
                .map(|(q0, p0)| scale * (q0 + tau * p0))
                .collect()
        };
        let shifts: Vec<Vec<f64>> = set.items().iter().map(|(_, m)| m.apply(&q)).collect();
        let mut acc = 0.0;
        let d = set.items().first().map_or(0, |(_, m)| m.d);
        let mut sep = vec![0.0; d];
        self.grid.for_each_point(|i, u| {
            let w = psi.amplitudes()[i].norm_sqr();
            if w == 0.0 {
                return;
            }
            let mut v = 0.0;
            for (idx, (pot, map)) in set.items().iter().enumerate() {
                if pot.is_zero() {
                    continue;
                }
                for a in 0..map.d {
                    let mut sv = shifts[idx][a];
                    for (m, &c) in map.coeffs.iter().enumerate() {
                        if c != 0.0 {
                            sv += c * scale * u[m * map.d + a];
                        }
                    }
                    sep[a] = sv;
                }
                let r = sep.iter().map(|x| x * x).sum::<f64>().sqrt();
                v += pot.eval(r);
            }
            acc += v * v * w;
        });
        Some((acc * self.grid.volume_element()).sqrt())
    }
}

/// Samples ||V U_{0,lambda}(t) Phi|| on a window-dense plus geometric-tail
/// time grid, exactly via [`CookMonitor`]. Sample times whose kinetic spread
/// outruns the monitor grid (a narrow band around the Mehler-singular
/// angle) are skipped.
pub fn cook_integrand_rows(
    monitor: &CookMonitor,
    set: &PotentialSet,
    sched: &CoefficientSchedule,
    sign: TimeSign,
    t_max: f64,
) -> Result<Vec<(f64, f64)>> {
    if set.is_empty() {
        return Ok(integrand_times(sched, t_max).iter().map(|&t| (t, 0.0)).collect());
    }
    let mut rows = Vec::new();
    for &t_abs in &integrand_times(sched, t_max) {
        let t = sign.factor() * t_abs;
        if let Some(g) = monitor.row(t, set) {
            rows.push((t_abs, g));
        }
    }
    Ok(rows)
}

/// Trapezoid integral of monitor rows over their |t| range, plus 0..first.
pub fn integrand_integral(rows: &[(f64, f64)]) -> f64 {
    let mut acc = 0.0;
    if let Some(&(t0, g0)) = rows.first() {
        acc += t0 * g0;
    }
    for w in rows.windows(2) {
        acc += 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0);
    }
    acc
}

fn history_from_rows(
    rows: Vec<(f64, f64)>,
    sched: &CoefficientSchedule,
    t_max: f64,
    norm: f64,
) -> CookHistory {
    let _ = norm;
    let tsw = sched.t_switch();
    let g_max = rows.iter().map(|(_, g)| *g).fold(0.0f64, f64::max);
    let tail_rows: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(t, g)| *t >= tsw - 1e-12 && *g > 1e-14 * g_max.max(1e-300))
        .cloned()
        .collect();
    let slope = if tail_rows.len() >= 3 { fit_loglog_slope(&tail_rows) } else { f64::NEG_INFINITY };
    let g_end = rows.last().map(|&(_, g)| g).unwrap_or(0.0);
    let tail_bound = if g_end <= 0.0 {
        0.0
    } else if slope < -1.05 {
        g_end * t_max / (-slope - 1.0)
    } else {
        f64::INFINITY
    };
    CookHistory { rows, slope, tail_bound, jump_error: 0.0 }
}

/// The wave operator W^{+-}_lambda Phi at a finite horizon, computed as
/// U(0, t_c) U_{0,lambda}(t_c) Phi where t_c is the first sample time past
/// which the remaining Cook integral is certified below `jump_tol` times
/// the norm. Full split-step runs only over [0, t_c].
pub fn wave_operator_displaced(
    probe: &DisplacedState,
    monitor: &CookMonitor,
    sign: TimeSign,
    plan: &PropagatorPlan,
    set: &PotentialSet,
    t_max: f64,
    jump_tol: f64,
) -> Result<WaveOperatorResult> {
    let sched = &plan.schedule;
    set.check_short_range(sched)?;
    let rows = cook_integrand_rows(monitor, set, sched, sign, t_max)?;
    let norm = probe.norm();
    let mut history = history_from_rows(rows, sched, t_max, norm);

    if set.is_empty() {
        history.jump_error = 0.0;
        return Ok(WaveOperatorResult { state: probe.clone(), history, t_cut: 0.0 });
    }
    if !history.tail_bound.is_finite() {
        return Err(Error::NotConverged {
            reason: format!(
                "integrand slope {:.3} fails the integrability fit (needs <= -1.1)",
                history.slope
            ),
        });
    }

    // Remaining integral from each sample outward.
    let n = history.rows.len();
    let mut remaining = vec![0.0; n + 1];
    remaining[n] = history.tail_bound;
    for i in (0..n).rev() {
        let seg = if i + 1 < n {
            0.5 * (history.rows[i].1 + history.rows[i + 1].1)
                * (history.rows[i + 1].0 - history.rows[i].0)
        } else {
            0.0
        };
        remaining[i] = remaining[i + 1] + seg;
    }
    let budget = jump_tol * norm.max(1e-300);
    let mut cut_idx = n - 1;
    for i in 0..n {
        if remaining[i] <= budget {
            cut_idx = i;
            break;
        }
    }
    let t_cut = history.rows[cut_idx].0;
    history.jump_error = remaining[cut_idx];

    let t_signed = sign.factor() * t_cut;
    let free = probe.free_reference(t_signed, sched)?;
    let state = free.evolve_full(t_signed, 0.0, plan, set)?;
    Ok(WaveOperatorResult { state, history, t_cut })
}

/// Scattering matrix element data for one probe pair.
#[derive(Debug, Clone)]
pub struct SElement {
    /// (S_lambda(V) Phi_v, Psi_v) = (W-_lambda Phi, W+_lambda Psi).
    pub value: Complex64,
    /// (Phi_v, Psi_v).
    pub free_overlap: Complex64,
    pub minus: WaveOperatorResult,
    pub plus: WaveOperatorResult,
}

impl SElement {
    /// i ((S_lambda - 1) Phi, Psi).
    pub fn born_element(&self) -> Complex64 {
        Complex64::new(0.0, 1.0) * (self.value - self.free_overlap)
    }
}

/// Computes (S_lambda Phi, Psi) through both wave operators.
pub fn scattering_element(
    probe_phi: &DisplacedState,
    monitor_phi: &CookMonitor,
    probe_psi: &DisplacedState,
    monitor_psi: &CookMonitor,
    plan: &PropagatorPlan,
    set: &PotentialSet,
    t_max: f64,
    jump_tol: f64,
) -> Result<SElement> {
    let minus =
        wave_operator_displaced(probe_phi, monitor_phi, TimeSign::Minus, plan, set, t_max, jump_tol)?;
    let plus =
        wave_operator_displaced(probe_psi, monitor_psi, TimeSign::Plus, plan, set, t_max, jump_tol)?;
    let value = minus.state.inner_aligned(&plus.state)?;
    let free_overlap = probe_phi.inner_aligned(probe_psi)?;
    Ok(SElement { value, free_overlap, minus, plus })
}

/// Matrix element of the physical S(V) (non-lambda comparison dynamics):
/// the same Cook pipeline against U_0(t, 0).
pub fn physical_s_element(
    probe_phi: &DisplacedState,
    monitor_phi: &CookMonitor,
    probe_psi: &DisplacedState,
    monitor_psi: &CookMonitor,
    plan: &PropagatorPlan,
    set: &PotentialSet,
    t_max: f64,
    jump_tol: f64,
) -> Result<Complex64> {
    let w_minus =
        physical_wave_operator(probe_phi, monitor_phi, TimeSign::Minus, plan, set, t_max, jump_tol)?;
    let w_plus =
        physical_wave_operator(probe_psi, monitor_psi, TimeSign::Plus, plan, set, t_max, jump_tol)?;
    w_minus.inner_aligned(&w_plus)
}

/// W^+- against the chained free propagator U_0(t, 0).
pub fn physical_wave_operator(
    probe: &DisplacedState,
    monitor: &CookMonitor,
    sign: TimeSign,
    plan: &PropagatorPlan,
    set: &PotentialSet,
    t_max: f64,
    jump_tol: f64,
) -> Result<DisplacedState> {
    let sched = &plan.schedule;
    // U_0(t,0) and U_{0,lambda}(t) coincide inside the window and differ by
    // fixed unitaries past the boundary, so the same integrand rows govern
    // the cut time.
    let rows = cook_integrand_rows(monitor, set, sched, sign, t_max)?;
    let history = history_from_rows(rows, sched, t_max, probe.norm());
    if set.is_empty() {
        return Ok(probe.clone());
    }
    if !history.tail_bound.is_finite() {
        return Err(Error::NotConverged {
            reason: format!("integrand slope {:.3} fails integrability", history.slope),
        });
    }
    let budget = jump_tol * probe.norm().max(1e-300);
    let n = history.rows.len();
    let mut remaining = history.tail_bound;
    let mut cut_idx = n - 1;
    let mut acc = vec![0.0; n];
    for i in (0..n).rev() {
        if i + 1 < n {
            remaining += 0.5
                * (history.rows[i].1 + history.rows[i + 1].1)
                * (history.rows[i + 1].0 - history.rows[i].0);
        }
        acc[i] = remaining;
    }
    for i in 0..n {
        if acc[i] <= budget {
            cut_idx = i;
            break;
        }
    }
    let t_cut = sign.factor() * history.rows[cut_idx].0;
    let free = probe.free_propagate(t_cut, 0.0, sched)?;
    free.evolve_full(t_cut, 0.0, plan, set)
}

/// Both routes to the physical S element: directly with W^+-, and through
/// the unitary equivalence
/// S(V) = U_0(s+,0)^* U_{0,lambda}(s+) S_lambda(V) U_{0,lambda}(s-)^* U_0(s-,0).
pub fn equivalence_transfer(
    probe_phi: &DisplacedState,
    probe_psi: &DisplacedState,
    xi_axis: Vec<f64>,
    s_plus: f64,
    s_minus: f64,
    plan: &PropagatorPlan,
    set: &PotentialSet,
    t_max: f64,
    jump_tol: f64,
) -> Result<(Complex64, Complex64)> {
    let sched = &plan.schedule;
    if s_plus < sched.t_switch() || s_minus > -sched.t_switch() {
        return Err(Error::ValidationError {
            invariant: "s+ >= T and s- <= -T".into(),
            detail: format!("s+ = {s_plus}, s- = {s_minus}"),
        });
    }
    let mon_phi = CookMonitor::from_state(probe_phi, sched, t_max, xi_axis.clone())?;
    let mon_psi = CookMonitor::from_state(probe_psi, sched, t_max, xi_axis.clone())?;
    let direct =
        physical_s_element(probe_phi, &mon_phi, probe_psi, &mon_psi, plan, set, t_max, jump_tol)?;

    // (S Phi, Psi) = (S_lambda Phi', Psi') with
    // Phi' = U_{0,lambda}(s-)^* U_0(s-,0) Phi and likewise at s+ for Psi.
    let phi_prime = probe_phi
        .free_propagate(s_minus, 0.0, sched)?
        .fact_free_adjoint(s_minus, sched)?;
    let psi_prime = probe_psi
        .free_propagate(s_plus, 0.0, sched)?
        .fact_free_adjoint(s_plus, sched)?;
    let mon_phi_p = CookMonitor::from_state(&phi_prime, sched, t_max, xi_axis.clone())?;
    let mon_psi_p = CookMonitor::from_state(&psi_prime, sched, t_max, xi_axis)?;
    let via = scattering_element(
        &phi_prime,
        &mon_phi_p,
        &psi_prime,
        &mon_psi_p,
        plan,
        set,
        t_max,
        jump_tol,
    )?;
    Ok((direct, via.value))
}

/// Lemma 3.3 style deviation: sup over checkpoints of
/// ||(U(t,0) W-_lambda - U_{0,lambda}(t)) Phi_v||.
pub fn intertwining_deviation(
    probe: &DisplacedState,
    monitor: &CookMonitor,
    plan: &PropagatorPlan,
    set: &PotentialSet,
    t_max: f64,
    jump_tol: f64,
    checkpoints: &[f64],
) -> Result<f64> {
    let sched = &plan.schedule;
    let w = wave_operator_displaced(probe, monitor, TimeSign::Minus, plan, set, t_max, jump_tol)?;
    let mut sup = 0.0f64;
    // Sweep forward and backward from 0, reusing the evolved state.
    for dir in [1.0, -1.0] {
        let mut current = w.state.clone();
        let mut t_now = 0.0;
        let mut pts: Vec<f64> = checkpoints
            .iter()
            .cloned()
            .filter(|t| t * dir > 1e-12)
            .collect();
        pts.sort_by(|a, b| (a * dir).partial_cmp(&(b * dir)).unwrap());
        for t in pts {
            current = current.evolve_full(t_now, t, plan, set)?;
            t_now = t;
            let free = probe.free_reference(t, sched)?;
            sup = sup.max(current.l2_distance_aligned(&free)?);
        }
    }
    // t = 0 checkpoint.
    sup = sup.max(w.state.l2_distance_aligned(probe)?);
    Ok(sup)
}

/// Largest |xi| carrying Fourier mass above 1e-12 of the peak.
pub fn fourier_extent(state: &StateVector) -> f64 {
    let f = state.to_fourier();
    let peak = f.amplitudes().iter().map(|c| c.norm_sqr()).fold(0.0, f64::max);
    let floor = peak * 1e-24;
    let mut ext = 0.0f64;
    state.grid().for_each_freq(|i, xi| {
        if f.amplitudes()[i].norm_sqr() > floor {
            let r: f64 = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
            ext = ext.max(r);
        }
    });
    ext
}
