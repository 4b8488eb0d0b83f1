//! Exact small-matrix arithmetic for su(2)/SU(2) and the Dirac matrix
//! constants.
//!
//! The generator basis is fixed to `T_a = -(i/2) sigma_a`, so the structure
//! constants are the Levi-Civita symbol and the commutator of coefficient
//! triples is the ordinary cross product.  Two coupling conventions are
//! carried side by side: `Paper` inserts the skew-hermitian `T_a` directly
//! into the interaction terms, `Physics` inserts the hermitian
//! `tau_a = (1/2) sigma_a = i T_a` (the covariant-derivative form, which
//! makes the Dirac Hamiltonian hermitian).

use nalgebra::{Matrix2, Matrix4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::C64;

pub type M2 = Matrix2<C64>;
pub type M4 = Matrix4<C64>;

/// Tolerance for "is numerically in the group/algebra" checks.
pub const ALGEBRA_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum LieError {
    /// Conjugation result left the algebra; the group element is corrupted.
    #[error("matrix is not in su(2) (defect {defect:.3e}); corrupted group element")]
    NotInAlgebra { defect: f64 },
}

#[inline]
fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Pauli matrix `sigma_a`, `a` in `1..=3`.
pub fn pauli(a: usize) -> M2 {
    match a {
        1 => M2::new(c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)),
        2 => M2::new(c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)),
        3 => M2::new(c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)),
        _ => panic!("pauli index must be 1..=3"),
    }
}

/// Generator `T_a = -(i/2) sigma_a`, `a` in `0..3` (zero based).
pub fn generator(a: usize) -> M2 {
    pauli(a + 1) * c(0., -0.5)
}

/// Coupling convention for the fermion interaction and current terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    /// Skew-hermitian `T_a` inserted literally into the interaction terms.
    Paper,
    /// Hermitian `tau_a = i T_a = (1/2) sigma_a` in the interaction terms.
    Physics,
}

impl Convention {
    /// Generator matrix used in the interaction/current terms.
    pub fn interaction_generator(self, a: usize) -> M2 {
        match self {
            Convention::Paper => generator(a),
            Convention::Physics => generator(a) * c(0., 1.),
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Convention::Paper => 0,
            Convention::Physics => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Convention::Paper),
            1 => Some(Convention::Physics),
            _ => None,
        }
    }
}

impl std::fmt::Display for Convention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Convention::Paper => write!(f, "paper"),
            Convention::Physics => write!(f, "physics"),
        }
    }
}

/// An su(2) element `X = a^a T_a`, stored as its three real coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LieElement {
    pub coeffs: [f64; 3],
}

impl LieElement {
    pub fn new(a1: f64, a2: f64, a3: f64) -> Self {
        Self { coeffs: [a1, a2, a3] }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Matrix form `a^a T_a` (trace free, skew hermitian).
    pub fn matrix(&self) -> M2 {
        let mut m = M2::zeros();
        for a in 0..3 {
            m += generator(a) * c(self.coeffs[a], 0.);
        }
        m
    }

    /// Recover coefficients from a matrix known to lie in su(2).
    ///
    /// Fails when the non-algebra part (hermitian part or trace) exceeds
    /// [`ALGEBRA_TOL`] relative to the matrix size.
    pub fn from_matrix(m: &M2) -> Result<Self, LieError> {
        let x = coeffs_from_matrix(m);
        let back = x.matrix();
        let defect = (m - back).norm();
        let scale = m.norm().max(1.0);
        if defect > ALGEBRA_TOL * scale {
            return Err(LieError::NotInAlgebra { defect });
        }
        Ok(x)
    }

    /// Killing-type norm `(-2 tr X^2)^{1/2} = |coeffs|`.
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Coefficient extraction without the algebra-membership check.
fn coeffs_from_matrix(m: &M2) -> LieElement {
    // a^c = -2 tr(X T_c) since tr(T_a T_b) = -delta_ab / 2.
    let mut coeffs = [0.0; 3];
    for a in 0..3 {
        let t = m * generator(a);
        coeffs[a] = -2.0 * (t[(0, 0)] + t[(1, 1)]).re;
    }
    LieElement { coeffs }
}

/// `[X, Y]` in coefficients: `f^{abc} X_a Y_b` with `f = epsilon`.
pub fn commutator(x: LieElement, y: LieElement) -> LieElement {
    let a = x.coeffs;
    let b = y.coeffs;
    LieElement::new(
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )
}

/// An SU(2) element (2x2 unitary, det 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupElement {
    pub matrix: M2,
}

impl GroupElement {
    pub fn identity() -> Self {
        Self { matrix: M2::identity() }
    }

    pub fn new(matrix: M2) -> Self {
        Self { matrix }
    }

    pub fn mul(&self, other: &GroupElement) -> GroupElement {
        GroupElement { matrix: self.matrix * other.matrix }
    }

    pub fn inverse(&self) -> GroupElement {
        GroupElement { matrix: self.matrix.adjoint() }
    }

    /// `max(|U^dagger U - I|, |det U - 1|)`.
    pub fn unitarity_defect(&self) -> f64 {
        let g = self.matrix.adjoint() * self.matrix - M2::identity();
        let det = self.matrix[(0, 0)] * self.matrix[(1, 1)]
            - self.matrix[(0, 1)] * self.matrix[(1, 0)];
        g.norm().max((det - c(1., 0.)).norm())
    }

    /// Project to the nearest SU(2) matrix (polar projection through the
    /// real-quaternion components, then normalization).
    pub fn renormalize(&mut self) {
        let m = &self.matrix;
        let q0 = 0.5 * (m[(0, 0)] + m[(1, 1)]).re;
        let q1 = 0.5 * (m[(0, 1)] + m[(1, 0)]).im;
        let q2 = 0.5 * (m[(0, 1)] - m[(1, 0)]).re;
        let q3 = 0.5 * (m[(0, 0)] - m[(1, 1)]).im;
        let n = (q0 * q0 + q1 * q1 + q2 * q2 + q3 * q3).sqrt();
        let (q0, q1, q2, q3) = (q0 / n, q1 / n, q2 / n, q3 / n);
        // U = q0 I + i (q1 s1 + q2 s2 + q3 s3)
        self.matrix = M2::new(
            c(q0, q3),
            c(q2, q1),
            c(-q2, q1),
            c(q0, -q3),
        );
    }
}

/// Matrix exponential of `a^a T_a`, in closed form:
/// `exp(-(i/2) theta n.sigma) = cos(theta/2) I - i sin(theta/2) n.sigma`.
pub fn exp_map(v: LieElement) -> GroupElement {
    let theta = v.norm();
    if theta == 0.0 {
        return GroupElement::identity();
    }
    let n = [v.coeffs[0] / theta, v.coeffs[1] / theta, v.coeffs[2] / theta];
    let (s, ch) = ((theta / 2.0).sin(), (theta / 2.0).cos());
    let mut m = M2::identity() * c(ch, 0.);
    for a in 0..3 {
        m += pauli(a + 1) * c(0., -s * n[a]);
    }
    GroupElement::new(m)
}

/// `U X U^{-1}` mapped back to coefficients.
///
/// Errors when the result is not numerically in the algebra, which signals a
/// corrupted (non-unitary) group element.
pub fn adjoint(u: &GroupElement, x: LieElement) -> Result<LieElement, LieError> {
    let m = u.matrix * x.matrix() * u.matrix.adjoint();
    LieElement::from_matrix(&m)
}

/// The su(2) structure constants `f^{abc} = epsilon_{abc}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct StructureConstants;

impl StructureConstants {
    pub fn f(&self, a: usize, b: usize, c: usize) -> f64 {
        match (a, b, c) {
            (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
            (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
            _ => 0.0,
        }
    }
}

/// The Dirac matrices in the Dirac representation, plus the Pauli matrices.
///
/// `alpha^0 = I`, `alpha^j = [[0, s_j], [s_j, 0]]`, `gamma^0 = diag(I, -I)`,
/// `gamma^j = [[0, s_j], [-s_j, 0]]`, with `alpha^mu = gamma^0 gamma^mu`.
#[derive(Debug, Clone)]
pub struct DiracConstants {
    pub alpha: [M4; 4],
    pub gamma: [M4; 4],
    pub sigma: [M2; 3],
}

fn block(a: &M2, b: &M2, c_: &M2, d: &M2) -> M4 {
    let mut m = M4::zeros();
    for i in 0..2 {
        for j in 0..2 {
            m[(i, j)] = a[(i, j)];
            m[(i, j + 2)] = b[(i, j)];
            m[(i + 2, j)] = c_[(i, j)];
            m[(i + 2, j + 2)] = d[(i, j)];
        }
    }
    m
}

impl DiracConstants {
    pub fn new() -> Self {
        let z = M2::zeros();
        let i2 = M2::identity();
        let sigma = [pauli(1), pauli(2), pauli(3)];
        let gamma0 = block(&i2, &z, &z, &(-i2));
        let mut gamma = [gamma0, M4::zeros(), M4::zeros(), M4::zeros()];
        let mut alpha = [M4::identity(), M4::zeros(), M4::zeros(), M4::zeros()];
        for j in 0..3 {
            gamma[j + 1] = block(&z, &sigma[j], &(-sigma[j]), &z);
            alpha[j + 1] = block(&z, &sigma[j], &sigma[j], &z);
        }
        Self { alpha, gamma, sigma }
    }
}

impl Default for DiracConstants {
    fn default() -> Self {
        Self::new()
    }
}

pub static DIRAC: once_cell::sync::Lazy<DiracConstants> =
    once_cell::sync::Lazy::new(DiracConstants::new);

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand_lie(rng: &mut impl Rng) -> LieElement {
        LieElement::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
    }

    /// Brute-force matrix exponential via scaling and squaring on the series.
    fn exp_oracle(m: &M2) -> M2 {
        let k = 8u32;
        let scaled = m / c(2f64.powi(k as i32), 0.);
        let mut term = M2::identity();
        let mut sum = M2::identity();
        for n in 1..30 {
            term = term * scaled / c(n as f64, 0.);
            sum += term;
        }
        let mut r = sum;
        for _ in 0..k {
            r = r * r;
        }
        r
    }

    #[test]
    fn commutator_matches_matrix_bracket() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let x = rand_lie(&mut rng);
            let y = rand_lie(&mut rng);
            let z = commutator(x, y);
            let mm = x.matrix() * y.matrix() - y.matrix() * x.matrix();
            assert!((mm - z.matrix()).norm() < 1e-14);
        }
        // [T_1, T_2] = T_3
        let z = commutator(LieElement::new(1., 0., 0.), LieElement::new(0., 1., 0.));
        assert_eq!(z.coeffs, [0., 0., 1.]);
    }

    #[test]
    fn commutator_antisymmetry_and_jacobi() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let x = rand_lie(&mut rng);
            let y = rand_lie(&mut rng);
            let z = rand_lie(&mut rng);
            assert!(commutator(x, x).norm() < 1e-15);
            let mut j = [0.0; 3];
            let t1 = commutator(x, commutator(y, z));
            let t2 = commutator(y, commutator(z, x));
            let t3 = commutator(z, commutator(x, y));
            for a in 0..3 {
                j[a] = t1.coeffs[a] + t2.coeffs[a] + t3.coeffs[a];
            }
            assert!(j.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-14);
        }
    }

    #[test]
    fn structure_constants_antisymmetry_and_jacobi_contraction() {
        let f = StructureConstants;
        for a in 0..3 {
            for b in 0..3 {
                for cc in 0..3 {
                    assert_eq!(f.f(a, b, cc), -f.f(b, a, cc));
                    // [T_a, T_b] = f^{abc} T_c in matrix arithmetic.
                    let mut m = M2::zeros();
                    for e in 0..3 {
                        m += generator(e) * c(f.f(a, b, e), 0.);
                    }
                    let lhs = generator(a) * generator(b) - generator(b) * generator(a);
                    assert!((lhs - m).norm() < 1e-15);
                }
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                for cc in 0..3 {
                    for d in 0..3 {
                        let mut s = 0.0;
                        for e in 0..3 {
                            s += f.f(a, b, e) * f.f(e, cc, d)
                                + f.f(cc, b, e) * f.f(a, e, d)
                                + f.f(d, b, e) * f.f(a, cc, e);
                        }
                        assert!(s.abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn exp_map_identity_and_inverse() {
        assert!((exp_map(LieElement::zero()).matrix - M2::identity()).norm() < 1e-16);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let v = rand_lie(&mut rng);
            let u = exp_map(v);
            let w = exp_map(LieElement::new(-v.coeffs[0], -v.coeffs[1], -v.coeffs[2]));
            assert!((u.matrix * w.matrix - M2::identity()).norm() < 1e-13);
            assert!(u.unitarity_defect() < 1e-13);
        }
    }

    #[test]
    fn exp_map_against_series_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let v = rand_lie(&mut rng);
            let u = exp_map(v);
            let o = exp_oracle(&v.matrix());
            assert!((u.matrix - o).norm() < 1e-12);
        }
        // coeffs (0,0,4*pi) wind all the way around to -I.
        let u = exp_map(LieElement::new(0., 0., 2.0 * std::f64::consts::PI));
        assert!((u.matrix + M2::identity()).norm() < 1e-12);
    }

    #[test]
    fn adjoint_identity_isometry_and_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let x = rand_lie(&mut rng);
            let v = rand_lie(&mut rng);
            let u = exp_map(v);
            assert!((adjoint(&GroupElement::identity(), x).unwrap().norm() - x.norm()).abs() < 1e-15);
            let y = adjoint(&u, x).unwrap();
            assert!((y.norm() - x.norm()).abs() < 1e-13);
        }
        // adjoint(exp(t T_3), T_1) = cos t T_1 + sin t T_2, checked against an
        // RK4 integration of d/dt X = [T_3, X].
        let t_end = 0.8;
        let mut x = LieElement::new(1., 0., 0.);
        let t3 = LieElement::new(0., 0., 1.);
        let n = 2000;
        let h = t_end / n as f64;
        for _ in 0..n {
            let k1 = commutator(t3, x);
            let mid1 = add(x, scale(k1, h / 2.));
            let k2 = commutator(t3, mid1);
            let mid2 = add(x, scale(k2, h / 2.));
            let k3 = commutator(t3, mid2);
            let k4 = commutator(t3, add(x, scale(k3, h)));
            let incr = add(add(k1, scale(k2, 2.)), add(scale(k3, 2.), k4));
            x = add(x, scale(incr, h / 6.));
        }
        let u = exp_map(LieElement::new(0., 0., t_end));
        let direct = adjoint(&u, LieElement::new(1., 0., 0.)).unwrap();
        for a in 0..3 {
            assert!((direct.coeffs[a] - x.coeffs[a]).abs() < 1e-10);
        }
        assert!((direct.coeffs[0] - t_end.cos()).abs() < 1e-12);
        assert!((direct.coeffs[1] - t_end.sin()).abs() < 1e-12);
    }

    fn add(x: LieElement, y: LieElement) -> LieElement {
        LieElement::new(
            x.coeffs[0] + y.coeffs[0],
            x.coeffs[1] + y.coeffs[1],
            x.coeffs[2] + y.coeffs[2],
        )
    }

    fn scale(x: LieElement, s: f64) -> LieElement {
        LieElement::new(x.coeffs[0] * s, x.coeffs[1] * s, x.coeffs[2] * s)
    }

    #[test]
    fn adjoint_rejects_corrupted_group_element() {
        let mut u = exp_map(LieElement::new(0.3, 0.1, -0.2));
        u.matrix[(0, 0)] += c(0.05, 0.);
        assert!(adjoint(&u, LieElement::new(1., 0., 0.)).is_err());
    }

    #[test]
    fn renormalize_restores_unitarity() {
        let mut u = exp_map(LieElement::new(0.4, -0.7, 0.2));
        u.matrix *= c(1.0 + 1e-4, 1e-5);
        assert!(u.unitarity_defect() > 1e-5);
        u.renormalize();
        assert!(u.unitarity_defect() < 1e-15);
    }

    #[test]
    fn dirac_constants_algebra() {
        let d = DiracConstants::new();
        for mu in 0..4 {
            // hermitian and squares to the identity
            assert!((d.alpha[mu].adjoint() - d.alpha[mu]).norm() < 1e-15);
            assert!((d.alpha[mu] * d.alpha[mu] - M4::identity()).norm() < 1e-15);
            // alpha^mu = gamma^0 gamma^mu
            assert!((d.gamma[0] * d.gamma[mu] - d.alpha[mu]).norm() < 1e-15);
        }
        for j in 1..4 {
            for k in 1..4 {
                if j != k {
                    assert!((d.alpha[j] * d.alpha[k] + d.alpha[k] * d.alpha[j]).norm() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn interaction_generator_hermiticity() {
        for a in 0..3 {
            let t = Convention::Paper.interaction_generator(a);
            let tau = Convention::Physics.interaction_generator(a);
            assert!((t.adjoint() + t).norm() < 1e-15, "T_a skew-hermitian");
            assert!((tau.adjoint() - tau).norm() < 1e-15, "tau_a hermitian");
            assert!((tau - t * c(0., 1.)).norm() < 1e-15);
        }
    }
}
