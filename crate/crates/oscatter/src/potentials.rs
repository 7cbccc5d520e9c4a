//! Pairwise potential specifications: a bounded decaying part plus an
//! optional mollified, compactly supported near-singular part, and their
//! evaluation on internal-coordinate grids through the pair maps L_jk.

use crate::error::{Error, Result};
use crate::jacobi::{JacobiFrame, PairMap};
use crate::lattice::Grid;
use crate::schedule::CoefficientSchedule;
use serde::{Deserialize, Serialize};

/// Closed-form radial profiles for the bounded part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum RadialProfile {
    /// a exp(-r^2 / (2 w^2)); decays faster than any power.
    Gaussian { amplitude: f64, width: f64 },
    /// a (1 + r^2)^(-rho/2).
    InversePower { amplitude: f64, rho: f64 },
    /// Smooth compactly supported annulus of inner/outer half-width w around
    /// `radius`: a exp(1 - 1/(1 - u^2)) for u = (r - radius)/w, |u| < 1.
    RingBump { amplitude: f64, radius: f64, width: f64 },
    Zero,
}

impl RadialProfile {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            RadialProfile::Gaussian { amplitude, width } => {
                amplitude * (-r * r / (2.0 * width * width)).exp()
            }
            RadialProfile::InversePower { amplitude, rho } => {
                amplitude * (1.0 + r * r).powf(-rho / 2.0)
            }
            RadialProfile::RingBump { amplitude, radius, width } => {
                let u = (r - radius) / width;
                if u.abs() >= 1.0 {
                    0.0
                } else {
                    amplitude * (1.0 - 1.0 / (1.0 - u * u)).exp()
                }
            }
            RadialProfile::Zero => 0.0,
        }
    }

    /// sup of |profile| over r >= r0.
    pub fn sup_abs_beyond(&self, r0: f64) -> f64 {
        match *self {
            RadialProfile::Gaussian { .. } | RadialProfile::InversePower { .. } => {
                self.eval(r0).abs()
            }
            RadialProfile::RingBump { amplitude, radius, width } => {
                if r0 >= radius + width {
                    0.0
                } else if r0 <= radius {
                    amplitude.abs()
                } else {
                    self.eval(r0).abs()
                }
            }
            RadialProfile::Zero => 0.0,
        }
    }

    pub fn sup_abs(&self) -> f64 {
        self.sup_abs_beyond(0.0)
    }

    /// Radius beyond which |profile| stays at or below `floor`.
    pub fn range_to_floor(&self, floor: f64) -> f64 {
        match *self {
            RadialProfile::Gaussian { amplitude, width } => {
                if amplitude.abs() <= floor {
                    0.0
                } else {
                    width * (2.0 * (amplitude.abs() / floor).ln()).sqrt()
                }
            }
            RadialProfile::InversePower { amplitude, rho } => {
                if amplitude.abs() <= floor {
                    0.0
                } else {
                    ((amplitude.abs() / floor).powf(2.0 / rho) - 1.0).max(0.0).sqrt()
                }
            }
            RadialProfile::RingBump { radius, width, .. } => radius + width,
            RadialProfile::Zero => 0.0,
        }
    }

    /// None for profiles with unbounded support.
    pub fn support_radius(&self) -> Option<f64> {
        match *self {
            RadialProfile::RingBump { radius, width, .. } => Some(radius + width),
            RadialProfile::Zero => Some(0.0),
            _ => None,
        }
    }
}

/// C^inf plateau cutoff: 1 for u <= 1/2, 0 for u >= 1, smooth in between.
pub fn smooth_cutoff(u: f64) -> f64 {
    if u <= 0.5 {
        1.0
    } else if u >= 1.0 {
        0.0
    } else {
        let t = (u - 0.5) / 0.5;
        let f = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
        f(1.0 - t) / (f(1.0 - t) + f(t))
    }
}

/// Mollified near-singular core a cutoff(r/R_s) (r^2 + h^2)^(-gamma/2);
/// vanishes identically beyond the support radius R_s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularPart {
    pub amplitude: f64,
    /// Power of the core singularity; gamma = 1 is the truncated
    /// Coulomb-like profile.
    pub gamma: f64,
    pub support_radius: f64,
    pub mollify_width: f64,
}

impl SingularPart {
    pub fn eval(&self, r: f64) -> f64 {
        if r >= self.support_radius {
            return 0.0;
        }
        let h = self.mollify_width;
        self.amplitude
            * smooth_cutoff(r / self.support_radius)
            * (r * r + h * h).powf(-self.gamma / 2.0)
    }

    pub fn with_width(&self, h: f64) -> Self {
        Self { mollify_width: h, ..self.clone() }
    }

    pub fn sup_abs(&self) -> f64 {
        self.amplitude.abs() * self.mollify_width.powf(-self.gamma)
    }
}

/// One pair interaction: bounded part with declared decay (C, rho) plus an
/// optional mollified singular part.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPotential {
    pub pair: (usize, usize),
    pub bounded: RadialProfile,
    /// Declared decay exponent: |bounded(r)| <= decay_constant <r>^-rho.
    pub rho: f64,
    pub decay_constant: f64,
    pub singular: Option<SingularPart>,
}

impl PairPotential {
    pub fn new(
        pair: (usize, usize),
        bounded: RadialProfile,
        rho: f64,
        singular: Option<SingularPart>,
    ) -> Result<Self> {
        if pair.0 == 0 || pair.0 >= pair.1 {
            return Err(Error::InvalidPotential(format!(
                "pair ({}, {}) must satisfy 1 <= j < k",
                pair.0, pair.1
            )));
        }
        if !(rho > 0.0) {
            return Err(Error::InvalidPotential(format!("rho = {rho} must be positive")));
        }
        if let Some(s) = &singular {
            if !(s.support_radius > 0.0) || !(s.mollify_width > 0.0) || !(s.gamma > 0.0) {
                return Err(Error::InvalidPotential(
                    "singular part needs positive gamma, support radius, and mollify width".into(),
                ));
            }
        }
        // Smallest C with |bounded(r)| <= C <r>^-rho on a radial scan.
        let mut c: f64 = 0.0;
        for i in 0..=4096 {
            let r = i as f64 * 0.02;
            c = c.max(bounded.eval(r).abs() * (1.0 + r * r).powf(rho / 2.0));
        }
        if !c.is_finite() {
            return Err(Error::InvalidPotential(format!(
                "bounded part does not satisfy the declared <r>^-{rho} decay"
            )));
        }
        Ok(Self { pair, bounded, rho, decay_constant: c * 1.0001, singular })
    }

    pub fn zero(pair: (usize, usize)) -> Self {
        Self { pair, bounded: RadialProfile::Zero, rho: 2.0, decay_constant: 0.0, singular: None }
    }

    /// Short-range threshold for the active schedule: rho > 1/(1 - lambda).
    pub fn short_range_threshold(lambda: f64) -> f64 {
        1.0 / (1.0 - lambda)
    }

    /// Errors with [`Error::DecayTooSlow`] when the declared rho does not
    /// clear 1/(1 - lambda); such potentials stay constructible for negative
    /// tests but are barred from wave-operator experiments.
    pub fn check_short_range(&self, lambda: f64) -> Result<()> {
        let threshold = Self::short_range_threshold(lambda);
        if self.rho <= threshold {
            return Err(Error::DecayTooSlow {
                j: self.pair.0,
                k: self.pair.1,
                rho: self.rho,
                threshold,
            });
        }
        Ok(())
    }

    pub fn eval(&self, r: f64) -> f64 {
        let mut v = self.bounded.eval(r);
        if let Some(s) = &self.singular {
            v += s.eval(r);
        }
        v
    }

    pub fn eval_sep(&self, sep: &[f64]) -> f64 {
        self.eval(sep.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    pub fn sup_abs(&self) -> f64 {
        self.bounded.sup_abs() + self.singular.as_ref().map_or(0.0, |s| s.sup_abs())
    }

    /// sup of |V| over r >= r0 (radial scan plus the analytic envelopes).
    pub fn sup_abs_beyond(&self, r0: f64) -> f64 {
        let mut sup = self.bounded.sup_abs_beyond(r0);
        if let Some(s) = &self.singular {
            if r0 < s.support_radius {
                sup += s.eval(r0).abs().max(s.eval((r0 + s.support_radius) / 2.0).abs());
            }
        }
        // Non-monotone profiles: refine by scanning a decade past r0.
        let r_hi = (r0.max(1.0)) * 10.0;
        let n = 512;
        for i in 0..=n {
            let r = r0 + (r_hi - r0) * i as f64 / n as f64;
            sup = sup.max(self.eval(r).abs());
        }
        sup
    }

    /// Radius beyond which |V| <= floor.
    pub fn range_to_floor(&self, floor: f64) -> f64 {
        let mut r = self.bounded.range_to_floor(floor);
        if let Some(s) = &self.singular {
            r = r.max(s.support_radius);
        }
        r
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.bounded, RadialProfile::Zero) && self.singular.is_none()
    }
}

/// Real field V(x) = sum over pairs of V_jk(L_jk x) sampled on an
/// internal-coordinate grid.
#[derive(Debug, Clone)]
pub struct TotalPotentialField {
    pub values: Vec<f64>,
    pub lower_bound: f64,
}

/// Pair potentials bound to the pair maps of one Jacobi frame.
#[derive(Debug, Clone)]
pub struct PotentialSet {
    items: Vec<(PairPotential, PairMap)>,
}

impl PotentialSet {
    pub fn new(frame: &JacobiFrame, potentials: &[PairPotential]) -> Result<Self> {
        let mut items = Vec::with_capacity(potentials.len());
        for pot in potentials {
            let map = frame.pair_map(pot.pair.0, pot.pair.1)?;
            items.push((pot.clone(), map));
        }
        Ok(Self { items })
    }

    pub fn is_empty(&self) -> bool {
        self.items.iter().all(|(p, _)| p.is_zero())
    }

    pub fn items(&self) -> &[(PairPotential, PairMap)] {
        &self.items
    }

    pub fn sup_abs(&self) -> f64 {
        self.items.iter().map(|(p, _)| p.sup_abs()).sum()
    }

    /// Every potential must clear the short-range threshold of `sched`.
    pub fn check_short_range(&self, sched: &CoefficientSchedule) -> Result<()> {
        for (p, _) in &self.items {
            p.check_short_range(sched.lambda())?;
        }
        Ok(())
    }

    /// V(x) = sum_jk V_jk(L_jk x) on the grid.
    pub fn sample_total(&self, grid: &Grid) -> TotalPotentialField {
        self.sample_total_shifted(grid, &vec![vec![]; self.items.len()])
    }

    /// As [`sample_total`](Self::sample_total) with a per-pair offset added
    /// to the separation argument: V_jk(L_jk x + shift_jk). Offsets are in
    /// the relative-coordinate (r_k - r_j) units. An empty shift means zero.
    pub fn sample_total_shifted(&self, grid: &Grid, shifts: &[Vec<f64>]) -> TotalPotentialField {
        assert_eq!(shifts.len(), self.items.len());
        let mut values = vec![0.0; grid.len()];
        self.accumulate_scaled(grid, shifts, 1.0, &mut values);
        let lower_bound = -self.sup_abs();
        TotalPotentialField { values, lower_bound }
    }

    /// out[i] += factor * V_total(x_i + shifts); the split-step hot path.
    pub fn accumulate_scaled(
        &self,
        grid: &Grid,
        shifts: &[Vec<f64>],
        factor: f64,
        out: &mut [f64],
    ) {
        assert_eq!(out.len(), grid.len());
        let d = self.items.first().map_or(0, |(_, m)| m.d);
        let mut sep = vec![0.0; d];
        grid.for_each_point(|i, x| {
            let mut v = 0.0;
            for (idx, (pot, map)) in self.items.iter().enumerate() {
                if pot.is_zero() {
                    continue;
                }
                let shift = &shifts[idx];
                for a in 0..map.d {
                    let mut s = if shift.is_empty() { 0.0 } else { shift[a] };
                    for (m, &c) in map.coeffs.iter().enumerate() {
                        if c != 0.0 {
                            s += c * x[m * map.d + a];
                        }
                    }
                    sep[a] = s;
                }
                let r = sep.iter().map(|u| u * u).sum::<f64>().sqrt();
                v += pot.eval(r);
            }
            out[i] += factor * v;
        });
    }
}

/// Cook-integrand decay surrogate: sup over the exterior region
/// {|x| > eps^2 t^(1-2 lambda)/(1-2 lambda)} of |V(t^lambda x)|, i.e. the sup
/// of |V| beyond t^lambda times the escaping-ball radius.
pub fn scaled_potential_norm(
    pot: &PairPotential,
    t: f64,
    sched: &CoefficientSchedule,
    epsilon: f64,
) -> f64 {
    debug_assert!(t >= sched.t_switch());
    let l = sched.lambda();
    let ball = epsilon * epsilon * t.powf(1.0 - 2.0 * l) / (1.0 - 2.0 * l);
    pot.sup_abs_beyond(t.powf(l) * ball)
}
