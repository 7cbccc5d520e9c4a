//! Time-dependent trap coefficient k(t) and the decay exponent lambda.
//!
//! The trap is harmonic (omega^2) inside the switch window |t| < T and decays
//! like sigma/t^2 outside. For sigma in (0, 1/4) the exponent
//! lambda = (1 - sqrt(1 - 4 sigma))/2 lies in (0, 1/2) and classical
//! trajectories in the tail follow c1 t^(1-lambda) + c2 t^lambda.

use crate::error::{Error, Result};

/// Trap parameters (omega, sigma, T) plus the derived exponent lambda.
///
/// Immutable after construction; `lambda` is recomputable from `sigma` and
/// satisfies lambda^2 - lambda + sigma = 0 to machine precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientSchedule {
    omega: f64,
    sigma: f64,
    t_switch: f64,
    lambda: f64,
}

impl CoefficientSchedule {
    /// Validates parameter ranges and derives lambda.
    ///
    /// Requires omega > 0, sigma in (0, 1/4), and T in [pi/(2 omega), pi/omega).
    pub fn new(omega: f64, sigma: f64, t_switch: f64) -> Result<Self> {
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(Error::ValidationError {
                invariant: "omega > 0".into(),
                detail: format!("omega = {omega}"),
            });
        }
        if !(sigma > 0.0 && sigma < 0.25) {
            return Err(Error::InvalidSigma(sigma));
        }
        let lo = std::f64::consts::PI / (2.0 * omega);
        let hi = std::f64::consts::PI / omega;
        if !(t_switch >= lo && t_switch < hi) {
            return Err(Error::InvalidSwitchTime { t: t_switch, omega, lo, hi });
        }
        let lambda = (1.0 - (1.0 - 4.0 * sigma).sqrt()) / 2.0;
        Ok(Self { omega, sigma, t_switch, lambda })
    }

    /// Default desk-scale schedule: omega = 1, sigma = 3/16 (lambda = 1/4), T = 2.
    pub fn desk_default() -> Self {
        Self::new(1.0, 3.0 / 16.0, 2.0).expect("desk defaults are in range")
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn t_switch(&self) -> f64 {
        self.t_switch
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Trap coefficient: omega^2 for |t| < T, sigma/t^2 for |t| >= T. Even in t.
    pub fn k_at(&self, t: f64) -> f64 {
        if t.abs() < self.t_switch {
            self.omega * self.omega
        } else {
            self.sigma / (t * t)
        }
    }

    /// Size of the discontinuity of k at |t| = T: |omega^2 - sigma/T^2|.
    pub fn jump_magnitude(&self) -> f64 {
        (self.omega * self.omega - self.sigma / (self.t_switch * self.t_switch)).abs()
    }

    /// Tail trajectory c1 t^(1-lambda) + c2 t^lambda for t >= T; solves the
    /// Newton equation x'' = -k(t) x in the sigma/t^2 regime.
    pub fn classical_trajectory(&self, c1: f64, c2: f64, t: f64) -> f64 {
        debug_assert!(t >= self.t_switch);
        c1 * t.powf(1.0 - self.lambda) + c2 * t.powf(self.lambda)
    }

    /// Exact mean of k over [t0, t1]; the interval must not straddle +-T.
    /// In the tail the average of sigma/t^2 is sigma/(t0*t1).
    pub fn mean_k(&self, t0: f64, t1: f64) -> f64 {
        debug_assert!(t0 <= t1);
        if t1.abs() <= self.t_switch + 1e-12 && t0.abs() <= self.t_switch + 1e-12 {
            self.omega * self.omega
        } else {
            debug_assert!(
                t0 >= self.t_switch - 1e-12 || t1 <= -self.t_switch + 1e-12,
                "mean_k interval straddles the switch window: [{t0}, {t1}]"
            );
            if (t1 - t0).abs() < 1e-300 {
                self.sigma / (t0 * t0)
            } else {
                self.sigma / (t0 * t1)
            }
        }
    }

    /// Evolves scalar classical data (q, p) under q'' = -k(t) q from time s to
    /// time t, splitting at the regime boundaries. Exact in both regimes.
    pub fn flow(&self, q: f64, p: f64, s: f64, t: f64) -> (f64, f64) {
        let mut state = (q, p);
        for (a, b) in self.segments(s, t) {
            state = self.flow_segment(state.0, state.1, a, b);
        }
        state
    }

    /// Vector version of [`flow`](Self::flow): each component evolves
    /// independently.
    pub fn flow_vec(&self, q: &[f64], p: &[f64], s: f64, t: f64) -> (Vec<f64>, Vec<f64>) {
        let mut qs = Vec::with_capacity(q.len());
        let mut ps = Vec::with_capacity(p.len());
        for (&qi, &pi) in q.iter().zip(p) {
            let (a, b) = self.flow(qi, pi, s, t);
            qs.push(a);
            ps.push(b);
        }
        (qs, ps)
    }

    /// Action increment of the trap Lagrangian p^2/2 - k q^2/2 along the
    /// classical trajectory from s to t. For any trap law this equals
    /// [q p / 2] at the endpoints, since d(qp)/dt = p^2 - k q^2.
    pub fn action_increment(&self, q: &[f64], p: &[f64], s: f64, t: f64) -> f64 {
        let mut total = 0.0;
        for (&qi, &pi) in q.iter().zip(p) {
            let (qt, pt) = self.flow(qi, pi, s, t);
            total += 0.5 * (qt * pt - qi * pi);
        }
        total
    }

    /// Splits [s, t] (or [t, s] reversed) at the regime boundaries +-T,
    /// returning ordered sub-segments from s towards t.
    pub fn segments(&self, s: f64, t: f64) -> Vec<(f64, f64)> {
        let tsw = self.t_switch;
        let mut cuts = vec![s];
        let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
        let mut interior: Vec<f64> = [-tsw, tsw]
            .into_iter()
            .filter(|&b| b > lo + 1e-15 && b < hi - 1e-15)
            .collect();
        if s > t {
            interior.reverse();
        }
        cuts.extend(interior);
        cuts.push(t);
        cuts.windows(2).map(|w| (w[0], w[1])).collect()
    }

    fn flow_segment(&self, q: f64, p: f64, s: f64, t: f64) -> (f64, f64) {
        let tsw = self.t_switch;
        let eps = 1e-12;
        if s.abs() <= tsw + eps && t.abs() <= tsw + eps {
            // Harmonic window: rotation at frequency omega.
            let w = self.omega;
            let (sn, cs) = (w * (t - s)).sin_cos();
            (q * cs + p / w * sn, -q * w * sn + p * cs)
        } else {
            // Inverse-square tail: q = c1 |t|^(1-l) + c2 |t|^l on one branch.
            debug_assert!(
                (s >= tsw - eps && t >= tsw - eps) || (s <= -tsw + eps && t <= -tsw + eps),
                "flow segment straddles the window: [{s}, {t}]"
            );
            let l = self.lambda;
            let sign = if s >= 0.0 { 1.0 } else { -1.0 };
            let (a_s, a_t) = (s.abs(), t.abs());
            // Solve for (c1, c2) from (q, p) at s. d/dt |t|^a = sign * a * |t|^(a-1).
            let b1 = a_s.powf(1.0 - l);
            let b2 = a_s.powf(l);
            let d1 = sign * (1.0 - l) * a_s.powf(-l);
            let d2 = sign * l * a_s.powf(l - 1.0);
            let det = b1 * d2 - b2 * d1;
            let c1 = (q * d2 - p * b2) / det;
            let c2 = (p * b1 - q * d1) / det;
            let qt = c1 * a_t.powf(1.0 - l) + c2 * a_t.powf(l);
            let pt = sign * (c1 * (1.0 - l) * a_t.powf(-l) + c2 * l * a_t.powf(l - 1.0));
            (qt, pt)
        }
    }
}
