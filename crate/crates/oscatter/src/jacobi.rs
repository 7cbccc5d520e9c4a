//! Mass data, Jacobi coordinate frames, reduced masses, and the linear maps
//! from internal coordinates to each relative separation r_k - r_j.
//!
//! Internal coordinates are always mass-scaled (x = sqrt(mu) y) so kinetic
//! terms carry unit coefficients; the sqrt(mu) factors surface only in the
//! pair separation maps and potential evaluation.
//!
//! Particle labels are 1-based throughout, matching the pair lists in
//! experiment configs.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;

/// Particle masses with the total cached.
#[derive(Debug, Clone, PartialEq)]
pub struct MassSet {
    masses: Vec<f64>,
    total: f64,
}

impl MassSet {
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        if masses.len() < 2 {
            return Err(Error::InvalidMass(format!(
                "need at least two particles, got {}",
                masses.len()
            )));
        }
        for (i, &m) in masses.iter().enumerate() {
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::InvalidMass(format!("mass {} = {m}", i + 1)));
            }
        }
        let total = masses.iter().sum();
        Ok(Self { masses, total })
    }

    pub fn unit(n: usize) -> Self {
        Self::new(vec![1.0; n]).expect("unit masses are valid")
    }

    pub fn n_particles(&self) -> usize {
        self.masses.len()
    }

    pub fn mass(&self, label: usize) -> f64 {
        self.masses[label - 1]
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Reduced mass of a pair: m_j m_k / (m_j + m_k). Symmetric in (j, k).
    pub fn pair_reduced_mass(&self, j: usize, k: usize) -> f64 {
        let (mj, mk) = (self.mass(j), self.mass(k));
        mj * mk / (mj + mk)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    /// Sequential chain y_m = r_{m+1} - com(r_1..r_m).
    Chain,
    /// First coordinate is the (j, k) separation; spectators chain onto the
    /// growing cluster in label order.
    PairCentered { j: usize, k: usize },
}

/// Linear map from mass-scaled internal coordinates to one relative
/// separation: r_k - r_j = sum_m coeffs[m] x_m, acting blockwise over the d
/// spatial components (L_jk = coeffs (x) I_d).
#[derive(Debug, Clone, PartialEq)]
pub struct PairMap {
    pub pair: (usize, usize),
    pub coeffs: Vec<f64>,
    pub d: usize,
}

impl PairMap {
    /// r_k - r_j for internal coordinates x (length d * (N-1)).
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.d * self.coeffs.len());
        let mut out = vec![0.0; self.d];
        for (m, &c) in self.coeffs.iter().enumerate() {
            for a in 0..self.d {
                out[a] += c * x[m * self.d + a];
            }
        }
        out
    }

    /// |L_jk w| for a direction w in R^{d(N-1)}.
    pub fn direction_magnitude(&self, w: &[f64]) -> f64 {
        self.apply(w).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Full rank d; the kernel has dimension d (N - 2).
    pub fn kernel_dim(&self) -> usize {
        self.d * (self.coeffs.len() - 1)
    }
}

/// A Jacobi frame: the transform between lab positions (center of mass
/// removed) and mass-scaled internal coordinates, plus the derived pair maps.
#[derive(Debug, Clone)]
pub struct JacobiFrame {
    kind: FrameKind,
    masses: MassSet,
    d: usize,
    reduced: Vec<f64>,
    /// (N-1) x N scalar matrix: x_m = sum_j to_internal[m][j] r_j.
    to_internal: DMatrix<f64>,
    /// N x (N-1) scalar matrix: r_j = sum_m from_internal[j][m] x_m (com 0).
    from_internal: DMatrix<f64>,
}

impl JacobiFrame {
    /// Chain frame of Jacobi coordinates: y_m = r_{m+1} - com(r_1..r_m),
    /// 1/mu_m = 1/(m_1 + .. + m_m) + 1/m_{m+1}.
    pub fn chain(masses: &MassSet, d: usize) -> Self {
        let order: Vec<usize> = (1..=masses.n_particles()).collect();
        Self::for_order(masses, d, &order, FrameKind::Chain)
    }

    /// Pair-centered frame: first coordinate x_1 = sqrt(mu_jk) (r_k - r_j),
    /// remaining coordinates attach the spectators to the growing cluster.
    pub fn pair_centered(masses: &MassSet, d: usize, j: usize, k: usize) -> Result<Self> {
        let n = masses.n_particles();
        if !(j >= 1 && j < k && k <= n) {
            return Err(Error::InvalidMass(format!(
                "pair ({j}, {k}) out of range for {n} particles"
            )));
        }
        let mut order = vec![j, k];
        order.extend((1..=n).filter(|&l| l != j && l != k));
        Ok(Self::for_order(masses, d, &order, FrameKind::PairCentered { j, k }))
    }

    fn for_order(masses: &MassSet, d: usize, order: &[usize], kind: FrameKind) -> Self {
        let n = masses.n_particles();
        assert!(d >= 1);
        let m: Vec<f64> = order.iter().map(|&l| masses.mass(l)).collect();
        let mut reduced = Vec::with_capacity(n - 1);
        let mut b = DMatrix::<f64>::zeros(n - 1, n);
        let mut cluster_mass = m[0];
        for step in 0..n - 1 {
            let mu = 1.0 / (1.0 / cluster_mass + 1.0 / m[step + 1]);
            reduced.push(mu);
            let scale = mu.sqrt();
            // y = r_new - com(cluster); x = sqrt(mu) y.
            for prev in 0..=step {
                b[(step, order[prev] - 1)] = -scale * m[prev] / cluster_mass;
            }
            b[(step, order[step + 1] - 1)] = scale;
            cluster_mass += m[step + 1];
        }

        // Invert jointly with the center-of-mass row to recover positions.
        let mut full = DMatrix::<f64>::zeros(n, n);
        for jcol in 0..n {
            full[(0, jcol)] = masses.masses()[jcol] / masses.total();
        }
        for row in 0..n - 1 {
            for jcol in 0..n {
                full[(row + 1, jcol)] = b[(row, jcol)];
            }
        }
        let inv = full.try_inverse().expect("jacobi transform is invertible");
        let from_internal = inv.columns(1, n - 1).into_owned();

        Self { kind, masses: masses.clone(), d, reduced, to_internal: b, from_internal }
    }

    pub fn kind(&self) -> FrameKind {
        self.kind
    }

    pub fn masses(&self) -> &MassSet {
        &self.masses
    }

    pub fn n_particles(&self) -> usize {
        self.masses.n_particles()
    }

    pub fn spatial_dim(&self) -> usize {
        self.d
    }

    /// Dimension of the internal coordinate space, d (N - 1).
    pub fn internal_dim(&self) -> usize {
        self.d * (self.masses.n_particles() - 1)
    }

    pub fn reduced_masses(&self) -> &[f64] {
        &self.reduced
    }

    /// Lab positions (flattened, r_1..r_N, d components each) to internal
    /// coordinates. Translation invariant, so the center of mass need not be
    /// removed first.
    pub fn to_internal(&self, lab: &[f64]) -> Vec<f64> {
        let n = self.n_particles();
        assert_eq!(lab.len(), n * self.d);
        let mut x = vec![0.0; (n - 1) * self.d];
        for m in 0..n - 1 {
            for jp in 0..n {
                let c = self.to_internal[(m, jp)];
                if c != 0.0 {
                    for a in 0..self.d {
                        x[m * self.d + a] += c * lab[jp * self.d + a];
                    }
                }
            }
        }
        x
    }

    /// Internal coordinates back to lab positions with the center of mass at
    /// the origin.
    pub fn from_internal(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n_particles();
        assert_eq!(x.len(), (n - 1) * self.d);
        let mut lab = vec![0.0; n * self.d];
        for jp in 0..n {
            for m in 0..n - 1 {
                let c = self.from_internal[(jp, m)];
                if c != 0.0 {
                    for a in 0..self.d {
                        lab[jp * self.d + a] += c * x[m * self.d + a];
                    }
                }
            }
        }
        lab
    }

    /// Conjugate internal momenta from lab momenta (total momentum zero):
    /// xi_m = sum_j from_internal[j][m] p_j.
    pub fn momenta_to_internal(&self, lab_p: &[f64]) -> Vec<f64> {
        let n = self.n_particles();
        assert_eq!(lab_p.len(), n * self.d);
        let mut xi = vec![0.0; (n - 1) * self.d];
        for m in 0..n - 1 {
            for jp in 0..n {
                let c = self.from_internal[(jp, m)];
                if c != 0.0 {
                    for a in 0..self.d {
                        xi[m * self.d + a] += c * lab_p[jp * self.d + a];
                    }
                }
            }
        }
        xi
    }

    /// The matrix L_jk with r_k - r_j = L_jk x, as its scalar coefficient row.
    pub fn pair_map(&self, j: usize, k: usize) -> Result<PairMap> {
        let n = self.n_particles();
        if !(j >= 1 && j < k && k <= n) {
            return Err(Error::InvalidMass(format!(
                "pair ({j}, {k}) out of range for {n} particles"
            )));
        }
        let coeffs: Vec<f64> = (0..n - 1)
            .map(|m| self.from_internal[(k - 1, m)] - self.from_internal[(j - 1, m)])
            .collect();
        Ok(PairMap { pair: (j, k), coeffs, d: self.d })
    }

    /// All pairs (j, k), j < k, in lexicographic order.
    pub fn all_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n_particles();
        let mut out = Vec::new();
        for j in 1..=n {
            for k in j + 1..=n {
                out.push((j, k));
            }
        }
        out
    }
}

/// Minimum of |L_jk w| over all pairs and sampled directions w in the
/// spherical cap of chordal radius `delta` around `omega0`. Positive for
/// admissible cone axes; errors if `omega0` lies in some ker L_jk.
pub fn momentum_cone_margin(
    frame: &JacobiFrame,
    omega0: &[f64],
    delta: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let dim = frame.internal_dim();
    assert_eq!(omega0.len(), dim);
    let norm0: f64 = omega0.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm0 > 0.0);
    let w0: Vec<f64> = omega0.iter().map(|v| v / norm0).collect();

    let maps: Vec<PairMap> = frame
        .all_pairs()
        .into_iter()
        .map(|(j, k)| frame.pair_map(j, k).expect("pairs enumerate in range"))
        .collect();
    for map in &maps {
        let mag = map.direction_magnitude(&w0);
        if mag < 1e-12 {
            return Err(Error::DirectionInKernel { j: map.pair.0, k: map.pair.1, magnitude: mag });
        }
    }

    let mut min_mag = maps.iter().map(|m| m.direction_magnitude(&w0)).fold(f64::INFINITY, f64::min);
    if dim == 1 || delta <= 0.0 {
        return Ok(min_mag);
    }

    let alpha_max = (1.0 - (delta * delta / 2.0).min(2.0)).acos();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut drawn = 0usize;
    while drawn < samples {
        // Tangent direction: Gaussian, projected orthogonal to w0.
        let mut u: Vec<f64> = (0..dim)
            .map(|_| {
                let a: f64 = rng.gen::<f64>().max(1e-12);
                let b: f64 = rng.gen();
                (-2.0f64 * a.ln()).sqrt() * (2.0 * std::f64::consts::PI * b).cos()
            })
            .collect();
        let dot: f64 = u.iter().zip(&w0).map(|(a, b)| a * b).sum();
        for (ui, wi) in u.iter_mut().zip(&w0) {
            *ui -= dot * wi;
        }
        let un: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if un < 1e-12 {
            continue;
        }
        // Polar angle with density prop to sin^(dim-2), by rejection.
        let alpha = loop {
            let a = rng.gen::<f64>() * alpha_max;
            let accept = (a.sin() / alpha_max.sin()).powi(dim as i32 - 2);
            if rng.gen::<f64>() <= accept {
                break a;
            }
        };
        let (sa, ca) = (alpha.sin(), alpha.cos());
        let w: Vec<f64> = w0.iter().zip(&u).map(|(w0i, ui)| ca * w0i + sa * ui / un).collect();
        for map in &maps {
            min_mag = min_mag.min(map.direction_magnitude(&w));
        }
        drawn += 1;
    }
    Ok(min_mag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rand_vec(n: usize, state: &mut u64) -> Vec<f64> {
        (0..n)
            .map(|_| {
                *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((*state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    fn remove_com(masses: &MassSet, lab: &mut [f64], d: usize) {
        let n = masses.n_particles();
        for a in 0..d {
            let com: f64 =
                (0..n).map(|j| masses.masses()[j] * lab[j * d + a]).sum::<f64>() / masses.total();
            for j in 0..n {
                lab[j * d + a] -= com;
            }
        }
    }

    #[test]
    fn chain_reduced_masses() {
        let m2 = MassSet::unit(2);
        let f2 = JacobiFrame::chain(&m2, 2);
        assert_abs_diff_eq!(f2.reduced_masses()[0], 0.5, epsilon = 1e-15);

        let m3 = MassSet::unit(3);
        let f3 = JacobiFrame::chain(&m3, 2);
        assert_abs_diff_eq!(f3.reduced_masses()[1], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn pair_frame_reduced_masses() {
        let m = MassSet::new(vec![1.0, 1.0, 2.0]).unwrap();
        let f = JacobiFrame::pair_centered(&m, 2, 1, 2).unwrap();
        assert_abs_diff_eq!(f.reduced_masses()[0], 0.5, epsilon = 1e-15);
        // mu_3 = m_3 (m_1 + m_2) / (m_3 + m_1 + m_2) = 2 * 2 / 4 = 1.
        assert_abs_diff_eq!(f.reduced_masses()[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.pair_reduced_mass(1, 2), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m.pair_reduced_mass(1, 3), m.pair_reduced_mass(3, 1).min(1.0), epsilon = 1e-15);
    }

    #[test]
    fn mass_weighted_pythagoras() {
        let masses = MassSet::new(vec![1.0, 2.5, 0.7, 1.9]).unwrap();
        let d = 2;
        for frame in [
            JacobiFrame::chain(&masses, d),
            JacobiFrame::pair_centered(&masses, d, 1, 3).unwrap(),
            JacobiFrame::pair_centered(&masses, d, 2, 4).unwrap(),
        ] {
            let mut state = 0x1234_5678u64;
            for _ in 0..100 {
                let mut lab = rand_vec(masses.n_particles() * d, &mut state);
                remove_com(&masses, &mut lab, d);
                let lhs: f64 = (0..masses.n_particles())
                    .map(|j| {
                        let m = masses.masses()[j];
                        (0..d).map(|a| m * lab[j * d + a] * lab[j * d + a]).sum::<f64>()
                    })
                    .sum();
                let x = frame.to_internal(&lab);
                let rhs: f64 = x.iter().map(|v| v * v).sum();
                assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn kinetic_quadratic_form_has_unit_coefficients() {
        let masses = MassSet::new(vec![1.3, 0.8, 2.0]).unwrap();
        let d = 2;
        let frame = JacobiFrame::pair_centered(&masses, d, 1, 2).unwrap();
        let mut state = 99u64;
        for _ in 0..50 {
            let mut p = rand_vec(masses.n_particles() * d, &mut state);
            // Total momentum zero.
            for a in 0..d {
                let tot: f64 = (0..masses.n_particles()).map(|j| p[j * d + a]).sum();
                for j in 0..masses.n_particles() {
                    p[j * d + a] -= tot / masses.n_particles() as f64;
                }
            }
            let lhs: f64 = (0..masses.n_particles())
                .map(|j| {
                    (0..d).map(|a| p[j * d + a] * p[j * d + a]).sum::<f64>() / masses.masses()[j]
                })
                .sum();
            let xi = frame.momenta_to_internal(&p);
            let rhs: f64 = xi.iter().map(|v| v * v).sum();
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn internal_roundtrip() {
        let masses = MassSet::new(vec![1.0, 1.0, 2.0]).unwrap();
        let frame = JacobiFrame::pair_centered(&masses, 2, 1, 3).unwrap();
        let mut state = 7u64;
        let x = rand_vec(frame.internal_dim(), &mut state);
        let lab = frame.from_internal(&x);
        let back = frame.to_internal(&lab);
        for (a, b) in back.iter().zip(&x) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn pair_map_reconstructs_separations() {
        let masses = MassSet::new(vec![1.0, 2.0, 0.5]).unwrap();
        let d = 2;
        let frame = JacobiFrame::chain(&masses, d);
        let mut state = 31u64;
        for (j, k) in frame.all_pairs() {
            let map = frame.pair_map(j, k).unwrap();
            assert_eq!(map.kernel_dim(), d * (masses.n_particles() - 2));
            let x = rand_vec(frame.internal_dim(), &mut state);
            let lab = frame.from_internal(&x);
            let sep = map.apply(&x);
            for a in 0..d {
                let direct = lab[(k - 1) * d + a] - lab[(j - 1) * d + a];
                assert_abs_diff_eq!(sep[a], direct, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn pair_frame_first_coordinate_is_the_pair() {
        let masses = MassSet::unit(2);
        let frame = JacobiFrame::pair_centered(&masses, 2, 1, 2).unwrap();
        let map = frame.pair_map(1, 2).unwrap();
        // L_12 = (1/sqrt(mu_12)) [I | 0].
        assert_abs_diff_eq!(map.coeffs[0], 1.0 / (0.5f64).sqrt(), epsilon = 1e-14);

        let m3 = MassSet::unit(3);
        let f3 = JacobiFrame::pair_centered(&m3, 2, 1, 2).unwrap();
        let map3 = f3.pair_map(1, 2).unwrap();
        assert_abs_diff_eq!(map3.coeffs[0], 1.0 / (0.5f64).sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(map3.coeffs[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn frames_related_by_mass_metric_orthogonal_map() {
        let masses = MassSet::new(vec![1.0, 2.0, 3.0]).unwrap();
        let chain = JacobiFrame::chain(&masses, 1);
        let pair = JacobiFrame::pair_centered(&masses, 1, 1, 3).unwrap();
        let n1 = masses.n_particles() - 1;
        // Composite map O: x_chain -> x_pair; check Gram = O^T O = I.
        let mut o = vec![vec![0.0; n1]; n1];
        for col in 0..n1 {
            let mut x = vec![0.0; n1];
            x[col] = 1.0;
            let lab = chain.from_internal(&x);
            let xp = pair.to_internal(&lab);
            for row in 0..n1 {
                o[row][col] = xp[row];
            }
        }
        for i in 0..n1 {
            for jb in 0..n1 {
                let g: f64 = (0..n1).map(|r| o[r][i] * o[r][jb]).sum();
                let expect = if i == jb { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(g, expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cone_margin_two_body_is_inverse_sqrt_mu() {
        let masses = MassSet::unit(2);
        let frame = JacobiFrame::pair_centered(&masses, 2, 1, 2).unwrap();
        let omega0 = [0.6, 0.8];
        let margin = momentum_cone_margin(&frame, &omega0, 1e-6, 100, 7).unwrap();
        assert_abs_diff_eq!(margin, (2.0f64).sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn cone_margin_detects_kernel_direction() {
        let masses = MassSet::unit(3);
        let frame = JacobiFrame::pair_centered(&masses, 2, 1, 2).unwrap();
        // Direction with no (1,2)-separation component lies in ker L_12.
        let omega0 = [0.0, 0.0, 1.0, 0.0];
        assert!(matches!(
            momentum_cone_margin(&frame, &omega0, 0.1, 100, 7),
            Err(Error::DirectionInKernel { j: 1, k: 2, .. })
        ));
    }

    #[test]
    fn cone_margin_three_body_generic_direction() {
        let masses = MassSet::unit(3);
        let frame = JacobiFrame::pair_centered(&masses, 2, 1, 2).unwrap();
        let mut omega0 = vec![0.5, 0.3, -0.6, 0.55];
        let n: f64 = omega0.iter().map(|v| v * v).sum::<f64>().sqrt();
        omega0.iter_mut().for_each(|v| *v /= n);
        let margin = momentum_cone_margin(&frame, &omega0, 0.1, 10_000, 42).unwrap();
        assert!(margin > 0.0, "margin = {margin}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn identities_hold_for_random_masses(
            raw in proptest::collection::vec(0.2f64..5.0, 2..5),
            jsel in 0usize..4,
            ksel in 0usize..4,
        ) {
            let masses = MassSet::new(raw).unwrap();
            let n = masses.n_particles();
            let d = 2;
            let j = 1 + jsel % n;
            let mut k = 1 + ksel % n;
            if j == k { k = if j == n { 1 } else { j + 1 }; }
            let (j, k) = (j.min(k), j.max(k));
            let frame = JacobiFrame::pair_centered(&masses, d, j, k).unwrap();
            prop_assert!((frame.reduced_masses()[0] - masses.pair_reduced_mass(j, k)).abs() < 1e-13);

            let mut state = 5u64;
            let mut lab = rand_vec(n * d, &mut state);
            remove_com(&masses, &mut lab, d);
            let x = frame.to_internal(&lab);
            let lhs: f64 = (0..n)
                .map(|p| {
                    let m = masses.masses()[p];
                    (0..d).map(|a| m * lab[p * d + a] * lab[p * d + a]).sum::<f64>()
                })
                .sum();
            let rhs: f64 = x.iter().map(|v| v * v).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1.0));
        }
    }
}
