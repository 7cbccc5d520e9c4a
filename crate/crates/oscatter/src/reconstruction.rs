//! The inverse-problem engine: high-velocity extrapolation of
//! |v| (i (S_lambda - 1) Phi_v, Psi_v), assembly of smeared X-ray samples of
//! V_12 over directions and offsets, filtered back-projection, and the
//! uniqueness comparison.

use crate::error::{Error, Result};
use crate::jacobi::JacobiFrame;
use crate::lattice::{Grid, StateVector};
use crate::potentials::{PairPotential, PotentialSet};
use crate::propagators::PropagatorPlan;
use crate::scattering::{
    build_displaced_probe, scattering_element, windowed_envelope, CookMonitor, ProbeSpec, SElement,
};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::io::Write;

/// One high-velocity sample of the smeared X-ray transform.
#[derive(Debug, Clone)]
pub struct XRaySample {
    pub direction: Vec<f64>,
    pub offset: Vec<f64>,
    /// Extrapolated |v| (i (S_lambda - 1) Phi_v, Psi_v); the limit is real
    /// for psi_1 = phi_1.
    pub value: Complex64,
    /// |I(v_max) - extrapolated|.
    pub residual: f64,
    /// The finite-speed values I(v) behind the extrapolation.
    pub by_speed: Vec<(f64, Complex64)>,
}

impl XRaySample {
    /// Imaginary fraction of the extrapolated value; the reconstruction
    /// invariant asks for at most 10% when psi_1 = phi_1.
    pub fn imag_fraction(&self) -> f64 {
        let m = self.value.norm();
        if m > 0.0 {
            self.value.im.abs() / m
        } else {
            0.0
        }
    }
}

/// Sampled X-ray transform over (angle, offset), with the smearing
/// envelopes recorded.
#[derive(Debug, Clone)]
pub struct Sinogram {
    pub angles: Vec<f64>,
    pub offsets: Vec<f64>,
    /// Row-major `[angle][offset]`.
    pub values: Vec<Complex64>,
    pub residuals: Vec<f64>,
}

impl Sinogram {
    pub fn value(&self, ia: usize, io: usize) -> Complex64 {
        self.values[ia * self.offsets.len() + io]
    }

    pub fn offset_spacing(&self) -> f64 {
        if self.offsets.len() > 1 {
            self.offsets[1] - self.offsets[0]
        } else {
            1.0
        }
    }

    /// Integral of one angle's profile over offsets.
    pub fn angle_mass(&self, ia: usize) -> f64 {
        let dy = self.offset_spacing();
        (0..self.offsets.len()).map(|io| self.value(ia, io).re).sum::<f64>() * dy
    }

    pub fn l2_norm(&self) -> f64 {
        let dy = self.offset_spacing();
        let da = if self.angles.len() > 1 { self.angles[1] - self.angles[0] } else { 1.0 };
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * dy * da).sqrt()
    }

    pub fn l2_distance(&self, other: &Sinogram) -> f64 {
        assert_eq!(self.values.len(), other.values.len());
        let dy = self.offset_spacing();
        let da = if self.angles.len() > 1 { self.angles[1] - self.angles[0] } else { 1.0 };
        (self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            * dy
            * da)
            .sqrt()
    }

    pub fn is_complete(&self) -> bool {
        self.values.len() == self.angles.len() * self.offsets.len()
            && self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// CSV rows: angle_rad, offset, value_re, value_im, residual.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "angle_rad, offset, value_re, value_im, residual")?;
        for (ia, &th) in self.angles.iter().enumerate() {
            for (io, &y) in self.offsets.iter().enumerate() {
                let v = self.value(ia, io);
                let r = self.residuals[ia * self.offsets.len() + io];
                writeln!(w, "{th:.12e}, {y:.12e}, {:.12e}, {:.12e}, {r:.12e}", v.re, v.im)?;
            }
        }
        Ok(())
    }
}

/// Real field on a square d = 2 grid over [-R, R]^2 (relative-coordinate
/// units), the output type of the inversion.
#[derive(Debug, Clone)]
pub struct PlanarField {
    pub half_width: f64,
    pub n: usize,
    pub values: Vec<f64>,
}

impl PlanarField {
    pub fn zeros(half_width: f64, n: usize) -> Self {
        Self { half_width, n, values: vec![0.0; n * n] }
    }

    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - self.n as f64 / 2.0) * self.spacing()
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn sample(half_width: f64, n: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(half_width, n);
        for ix in 0..n {
            for iy in 0..n {
                let (x, y) = (out.coord(ix), out.coord(iy));
                out.values[ix * n + iy] = f(x, y);
            }
        }
        out
    }

    pub fn l2_norm(&self) -> f64 {
        let da = self.spacing() * self.spacing();
        (self.values.iter().map(|v| v * v).sum::<f64>() * da).sqrt()
    }

    pub fn l2_distance(&self, other: &Self) -> f64 {
        assert_eq!(self.values.len(), other.values.len());
        let da = self.spacing() * self.spacing();
        (self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            * da)
            .sqrt()
    }

    /// Lattice state dump with zero imaginary parts.
    pub fn write_state_dump(&self, w: &mut impl Write) -> Result<()> {
        let grid = Grid::uniform(2, self.n, self.half_width)?;
        let amp: Vec<Complex64> = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        StateVector::new(grid, amp).write_dump(w)
    }

    /// 8-bit binary PGM, min-max normalized.
    pub fn write_pgm(&self, w: &mut impl Write) -> Result<()> {
        let lo = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-300);
        writeln!(w, "P5")?;
        writeln!(w, "{} {}", self.n, self.n)?;
        writeln!(w, "255")?;
        let bytes: Vec<u8> = self
            .values
            .iter()
            .map(|&v| (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8)
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }
}

/// Direct tensor quadrature of the smeared X-ray transform
/// int (V_12(x / sqrt(mu12) + y + v-hat t) phi_1, psi_1) dt,
/// with the t range chosen from the potential's decay and validated.
pub fn smeared_xray_oracle(
    pot: &PairPotential,
    direction: &[f64],
    offset: &[f64],
    phi1: &StateVector,
    psi1: &StateVector,
    mu12: f64,
    tol: f64,
) -> Result<f64> {
    let grid = phi1.grid().clone();
    let d = grid.dim();
    assert_eq!(direction.len(), d);
    // Range: the potential must decay below tol within a finite reach.
    let sup = pot.sup_abs();
    if sup == 0.0 {
        return Ok(0.0);
    }
    let floor = (tol * sup).max(1e-14 * sup);
    let reach = pot.range_to_floor(floor);
    // Significant envelope weight points only; the discarded tail carries
    // below 1e-8 of the kernel mass.
    let vol = grid.volume_element();
    let root_mu = mu12.sqrt();
    let mut kernel: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut w_max = 0.0f64;
    let mut idx = 0usize;
    grid.for_each_point(|i, _| {
        debug_assert_eq!(i, idx);
        let w = (phi1.amplitudes()[i] * psi1.amplitudes()[i].conj()).re;
        w_max = w_max.max(w.abs());
        idx += 1;
    });
    let mut support_reach = 0.0f64;
    let mut idx2 = 0usize;
    grid.for_each_point(|i, x| {
        debug_assert_eq!(i, idx2);
        let w = (phi1.amplitudes()[i] * psi1.amplitudes()[i].conj()).re;
        if w.abs() > 1e-9 * w_max {
            let scaled: Vec<f64> = x.iter().map(|v| v / root_mu).collect();
            let r: f64 = scaled.iter().map(|v| v * v).sum::<f64>().sqrt();
            support_reach = support_reach.max(r);
            kernel.push((scaled, w * vol));
        }
        idx2 += 1;
    });
    let offset_len: f64 = offset.iter().map(|v| v * v).sum::<f64>().sqrt();
    let t_range = reach + support_reach + offset_len + 2.0;
    if !t_range.is_finite() || t_range > 2e4 {
        return Err(Error::TRangeInsufficient { t_range, tail: sup, tol: floor });
    }
    // Simpson in t over the kernel point cloud.
    let dt = 0.1_f64.min(t_range / 200.0);
    let n_t = ((2.0 * t_range / dt).ceil() as usize).next_multiple_of(2);
    let dt = 2.0 * t_range / n_t as f64;
    let mut acc = 0.0;
    for k in 0..=n_t {
        let t = -t_range + k as f64 * dt;
        let simpson_w = if k == 0 || k == n_t {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let mut inner = 0.0;
        for (x, w) in &kernel {
            let mut r2 = 0.0;
            for a in 0..d {
                let arg = x[a] + offset[a] + direction[a] * t;
                r2 += arg * arg;
            }
            inner += w * pot.eval(r2.sqrt());
        }
        acc += simpson_w * inner;
    }
    Ok(acc * dt / 3.0)
}

/// First- then second-order Richardson extrapolation in 1/|v| of complex
/// values at geometric speeds; returns (value, residual vs the last
/// first-order extrapolant).
pub fn richardson_extrapolate(by_speed: &[(f64, Complex64)]) -> Result<(Complex64, f64)> {
    match by_speed.len() {
        0 => Err(Error::ExtrapolationUnstable { reason: "no speeds".into() }),
        1 => Ok((by_speed[0].1, f64::INFINITY)),
        2 => {
            let (v1, i1) = by_speed[0];
            let (v2, i2) = by_speed[1];
            // I = I_inf + c/v: eliminate c.
            let value = (i2 * v2 - i1 * v1) / (v2 - v1);
            Ok((value, (value - i2).norm()))
        }
        _ => {
            let n = by_speed.len();
            let (v1, i1) = by_speed[n - 3];
            let (v2, i2) = by_speed[n - 2];
            let (v3, i3) = by_speed[n - 1];
            let d1 = (i2 - i1).norm();
            let d2 = (i3 - i2).norm();
            if d2 > 0.9 * d1 && d2 > 1e-8 * i3.norm().max(1e-30) {
                return Err(Error::ExtrapolationUnstable {
                    reason: format!("speed differences not contracting: |D1| = {d1:.3e}, |D2| = {d2:.3e}"),
                });
            }
            let a1 = (i2 * v2 - i1 * v1) / (v2 - v1);
            let a2 = (i3 * v3 - i2 * v2) / (v3 - v2);
            // Geometric speeds make the 1/v^2 residual shrink by 4.
            let value = (a2 * 4.0 - a1) / 3.0;
            Ok((value, (value - i3).norm()))
        }
    }
}

/// Everything needed to produce one scattering-side X-ray sample: the
/// dynamics, the frame, and the probe template (direction, offset, and
/// speed get overridden per sample).
pub struct HighVelocityPipeline {
    pub plan: PropagatorPlan,
    pub frame: JacobiFrame,
    pub potentials: Vec<PairPotential>,
    pub grid: Grid,
    pub base_spec: ProbeSpec,
    /// psi_1 width; Psi_v shares phi_2 and differs in the first envelope.
    pub psi_pair_width: f64,
    pub speeds: Vec<f64>,
    pub t_max: f64,
    pub jump_tol: f64,
}

impl HighVelocityPipeline {
    pub fn potential_set(&self) -> Result<PotentialSet> {
        PotentialSet::new(&self.frame, &self.potentials)
    }

    pub fn pair_potential(&self) -> &PairPotential {
        self.potentials
            .iter()
            .find(|p| p.pair == (1, 2))
            .expect("pipeline potentials include the (1,2) pair")
    }

    fn spec_for(&self, direction: &[f64], offset: &[f64], speed: f64) -> ProbeSpec {
        self.base_spec
            .with_direction(direction.to_vec())
            .with_offset(offset.to_vec())
            .with_speed(speed)
    }

    /// One scattering matrix element at fixed speed:
    /// (phi side Phi_v, psi side Psi_v).
    pub fn s_element(&self, direction: &[f64], offset: &[f64], speed: f64) -> Result<SElement> {
        let set = self.potential_set()?;
        let sched = &self.plan.schedule;
        let spec_phi = self.spec_for(direction, offset, speed);
        let spec_psi = spec_phi.with_pair_width(self.psi_pair_width);
        let (phi, _) = build_displaced_probe(&spec_phi, &self.grid, &self.frame)?;
        let (psi, _) = build_displaced_probe(&spec_psi, &self.grid, &self.frame)?;
        let mon_phi = CookMonitor::new(&spec_phi, &phi, &self.frame, sched, self.t_max)?;
        let mon_psi = CookMonitor::new(&spec_psi, &psi, &self.frame, sched, self.t_max)?;
        scattering_element(&phi, &mon_phi, &psi, &mon_psi, &self.plan, &set, self.t_max, self.jump_tol)
    }

    /// I(v) = |v| i ((S_lambda - 1) Phi_v, Psi_v).
    pub fn born_value(&self, direction: &[f64], offset: &[f64], speed: f64) -> Result<Complex64> {
        Ok(self.s_element(direction, offset, speed)?.born_element() * speed)
    }

    /// Richardson-extrapolated high-velocity sample at one line.
    pub fn high_velocity_value(&self, direction: &[f64], offset: &[f64]) -> Result<XRaySample> {
        if self.speeds.len() < 2 {
            return Err(Error::ExtrapolationUnstable {
                reason: "need at least 2 speeds".into(),
            });
        }
        let mut by_speed = Vec::with_capacity(self.speeds.len());
        for &v in &self.speeds {
            by_speed.push((v, self.born_value(direction, offset, v)?));
        }
        let (value, residual) = richardson_extrapolate(&by_speed)?;
        Ok(XRaySample {
            direction: direction.to_vec(),
            offset: offset.to_vec(),
            value,
            residual,
            by_speed,
        })
    }

    /// The pair envelopes on the pair-block grid slice, as used by the
    /// probes, for the oracle side.
    pub fn pair_envelopes(&self) -> Result<(StateVector, StateVector)> {
        let d = self.frame.spatial_dim();
        let axes: Vec<crate::lattice::AxisSpec> = (0..d).map(|a| self.grid.axis(a)).collect();
        let pair_grid = Grid::per_axis(axes)?;
        let phi1 = windowed_envelope(&pair_grid, self.base_spec.pair_width, self.base_spec.eta12)?;
        let psi1 = windowed_envelope(&pair_grid, self.psi_pair_width, self.base_spec.eta12)?;
        Ok((phi1, psi1))
    }

    /// Direct-quadrature oracle for the same line.
    pub fn oracle_value(&self, direction: &[f64], offset: &[f64]) -> Result<f64> {
        let (phi1, psi1) = self.pair_envelopes()?;
        let mu12 = self.frame.masses().pair_reduced_mass(1, 2);
        smeared_xray_oracle(self.pair_potential(), direction, offset, &phi1, &psi1, mu12, 1e-8)
    }

    fn line_geometry(theta: f64, y: f64) -> (Vec<f64>, Vec<f64>) {
        let dir = vec![theta.cos(), theta.sin()];
        let perp = vec![-theta.sin(), theta.cos()];
        (dir, vec![perp[0] * y, perp[1] * y])
    }

    /// Full scattering sinogram: every cell is an extrapolated
    /// high-velocity sample. d = 2 only.
    pub fn scattering_sinogram(&self, n_angles: usize, offsets: &[f64]) -> Result<Sinogram> {
        self.sinogram_impl(n_angles, offsets, false)
    }

    /// Oracle sinogram from direct quadrature (fast; used for phantom
    /// studies and as the acceptance reference).
    pub fn oracle_sinogram(&self, n_angles: usize, offsets: &[f64]) -> Result<Sinogram> {
        self.sinogram_impl(n_angles, offsets, true)
    }

    fn sinogram_impl(&self, n_angles: usize, offsets: &[f64], oracle: bool) -> Result<Sinogram> {
        if self.frame.spatial_dim() != 2 {
            return Err(Error::ValidationError {
                invariant: "sinogram requires d = 2".into(),
                detail: format!("d = {}", self.frame.spatial_dim()),
            });
        }
        let angles: Vec<f64> = (0..n_angles).map(|i| PI * i as f64 / n_angles as f64).collect();
        let mut values = Vec::with_capacity(n_angles * offsets.len());
        let mut residuals = Vec::with_capacity(n_angles * offsets.len());
        for &th in &angles {
            for &y in offsets {
                let (dir, off) = Self::line_geometry(th, y);
                if oracle {
                    values.push(Complex64::new(self.oracle_value(&dir, &off)?, 0.0));
                    residuals.push(0.0);
                } else {
                    let sample = self.high_velocity_value(&dir, &off)?;
                    values.push(sample.value);
                    residuals.push(sample.residual);
                }
            }
        }
        let sino = Sinogram { angles, offsets: offsets.to_vec(), values, residuals };
        if !sino.is_complete() {
            return Err(Error::IncompleteSinogram {
                missing: sino.angles.len() * sino.offsets.len() - sino.values.len(),
                total: sino.angles.len() * sino.offsets.len(),
            });
        }
        Ok(sino)
    }

    /// The smeared truth the samples transform: V_12 convolved with the
    /// kernel K(z) = mu^{d/2} (phi_1 conj(psi_1))(sqrt(mu) z), on a planar
    /// grid.
    pub fn smeared_truth(&self, half_width: f64, n: usize) -> Result<PlanarField> {
        let (phi1, psi1) = self.pair_envelopes()?;
        let mu12 = self.frame.masses().pair_reduced_mass(1, 2);
        let pot = self.pair_potential().clone();
        smeared_truth_field(&pot, &phi1, &psi1, mu12, half_width, n)
    }
}

/// Direct convolution of the pair potential with the projected envelope
/// kernel, the reference for the inversion step.
pub fn smeared_truth_field(
    pot: &PairPotential,
    phi1: &StateVector,
    psi1: &StateVector,
    mu12: f64,
    half_width: f64,
    n: usize,
) -> Result<PlanarField> {
    let grid = phi1.grid().clone();
    let vol = grid.volume_element();
    // Kernel sample points and weights: K(z) dz = (phi psi*)(x) dx with
    // z = x / sqrt(mu).
    let mut kernel: Vec<(f64, f64, f64)> = Vec::new();
    let root_mu = mu12.sqrt();
    grid.for_each_point(|i, x| {
        let w = (phi1.amplitudes()[i] * psi1.amplitudes()[i].conj()).re * vol;
        if w.abs() > 1e-14 {
            kernel.push((x[0] / root_mu, x[1] / root_mu, w));
        }
    });
    let mut out = PlanarField::zeros(half_width, n);
    for ix in 0..n {
        for iy in 0..n {
            let (zx, zy) = (out.coord(ix), out.coord(iy));
            let mut acc = 0.0;
            for &(kx, ky, w) in &kernel {
                let dx = zx + kx;
                let dy = zy + ky;
                acc += w * pot.eval((dx * dx + dy * dy).sqrt());
            }
            out.values[ix * n + iy] = acc;
        }
    }
    Ok(out)
}

/// Filtered back-projection with a ramp filter apodized by a cosine at
/// 0.8 of the offset Nyquist. Linear in the sinogram.
pub fn fbp_invert(sino: &Sinogram, half_width: f64, n: usize) -> Result<PlanarField> {
    if !sino.is_complete() {
        return Err(Error::IncompleteSinogram { missing: 1, total: sino.values.len() });
    }
    let n_offsets = sino.offsets.len();
    let dy = sino.offset_spacing();
    let pad = (4 * n_offsets).next_power_of_two();
    let mut planner = rustfft::FftPlanner::new();
    let fft = planner.plan_fft_forward(pad);
    let ifft = planner.plan_fft_inverse(pad);
    let nyquist = PI / dy;
    let cutoff = 0.8 * nyquist;

    // Filter every angle row.
    let mut filtered = vec![0.0; sino.angles.len() * n_offsets];
    for ia in 0..sino.angles.len() {
        let mut buf = vec![Complex64::default(); pad];
        for io in 0..n_offsets {
            buf[io] = Complex64::new(sino.value(ia, io).re, 0.0);
        }
        fft.process(&mut buf);
        for (k, c) in buf.iter_mut().enumerate() {
            let freq_idx = if k <= pad / 2 { k as f64 } else { k as f64 - pad as f64 };
            let nu = 2.0 * PI * freq_idx / (pad as f64 * dy);
            let apod = if nu.abs() >= cutoff {
                0.0
            } else {
                (PI / 2.0 * nu.abs() / cutoff).cos()
            };
            *c *= nu.abs() * apod;
        }
        ifft.process(&mut buf);
        for io in 0..n_offsets {
            // 1/pad from the unnormalized transform pair; the ramp carries
            // the 1/(2 pi) of the inversion formula below.
            filtered[ia * n_offsets + io] = buf[io].re / pad as f64;
        }
    }

    // Back-projection: f(x) = (1/(2 pi)) int_0^pi q_theta(x . perp) dtheta.
    let d_theta = PI / sino.angles.len() as f64;
    let y0 = sino.offsets[0];
    let mut out = PlanarField::zeros(half_width, n);
    for ix in 0..n {
        for iy in 0..n {
            let (zx, zy) = (out.coord(ix), out.coord(iy));
            let mut acc = 0.0;
            for (ia, &th) in sino.angles.iter().enumerate() {
                let s = -th.sin() * zx + th.cos() * zy;
                let pos = (s - y0) / dy;
                if pos < 0.0 || pos > (n_offsets - 1) as f64 {
                    continue;
                }
                let j = pos.floor() as usize;
                let frac = pos - j as f64;
                let a = filtered[ia * n_offsets + j];
                let b = filtered[ia * n_offsets + (j + 1).min(n_offsets - 1)];
                acc += a + frac * (b - a);
            }
            out.values[ix * n + iy] = acc * d_theta / (2.0 * PI);
        }
    }
    Ok(out)
}

/// Uniqueness comparison: reconstructions and raw sinograms of two
/// potential assignments, with the numerical floor from identical inputs.
#[derive(Debug, Clone)]
pub struct UniquenessReport {
    pub sinogram_distance: f64,
    pub sinogram_scale: f64,
    pub image_distance: f64,
    pub image_scale: f64,
}

/// Builds both sinograms through the full scattering pipeline and compares
/// them and their inversions.
pub fn uniqueness_report(
    pipeline_a: &HighVelocityPipeline,
    pipeline_b: &HighVelocityPipeline,
    n_angles: usize,
    offsets: &[f64],
    rec_half_width: f64,
    rec_n: usize,
) -> Result<UniquenessReport> {
    let sino_a = pipeline_a.scattering_sinogram(n_angles, offsets)?;
    let sino_b = pipeline_b.scattering_sinogram(n_angles, offsets)?;
    let img_a = fbp_invert(&sino_a, rec_half_width, rec_n)?;
    let img_b = fbp_invert(&sino_b, rec_half_width, rec_n)?;
    Ok(UniquenessReport {
        sinogram_distance: sino_a.l2_distance(&sino_b),
        sinogram_scale: sino_a.l2_norm().max(sino_b.l2_norm()),
        image_distance: img_a.l2_distance(&img_b),
        image_scale: img_a.l2_norm().max(img_b.l2_norm()),
    })
}
