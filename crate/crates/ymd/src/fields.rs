//! Lattice containers for the gauge potential, spinor, and curvature fields,
//! random small-data generation, the Gauss-constraint projection of the
//! initial velocity, and bit-exact checkpoint I/O.
//!
//! Lie-valued fields store three complex coefficient lattices per component
//! over the fixed su(2) basis; physically real fields simply carry zero
//! imaginary parts, which lets the same container house the complex
//! half-wave amplitudes.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::io::{Read as _, Write as _};
use std::path::Path;
use thiserror::Error;

use crate::dynamics::SimulationState;
use crate::liealg::Convention;
use crate::spectral::{
    self, apply_multiplier_hat, from_hat, hodge_split_hat, to_hat, Grid, MultiplierSpec, Padded,
};
use crate::C64;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"YMD1";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const N_COLORS: usize = 2;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("exponents (s, l) = ({s}, {l}) violate the admissible range")]
    InadmissibleExponents { s: f64, l: f64 },
    #[error("constraint projection did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
}

/// Spatial gauge potential: 3 spatial components x 3 Lie coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LieVectorField {
    pub grid: Grid,
    /// `comp[j][a]` is the lattice function of `A_j`'s `T_a` coefficient.
    pub comp: [[Vec<C64>; 3]; 3],
}

/// A Lie-valued scalar lattice function (divergences, charge densities,
/// gauge-fix potentials, constraint residuals).
#[derive(Debug, Clone, PartialEq)]
pub struct LieScalarField {
    pub grid: Grid,
    pub comp: [Vec<C64>; 3],
}

/// Dirac field: 2 color components x 4 spinor components.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinorField {
    pub grid: Grid,
    /// `comp[i][s]` is color `i`, spinor component `s`.
    pub comp: [[Vec<C64>; 4]; 2],
}

fn zero_vec(grid: Grid) -> Vec<C64> {
    vec![C64::default(); grid.len()]
}

impl LieVectorField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            comp: std::array::from_fn(|_| std::array::from_fn(|_| zero_vec(grid))),
        }
    }

    pub fn add_scaled(&mut self, other: &Self, factor: C64) {
        for j in 0..3 {
            for a in 0..3 {
                for (x, y) in self.comp[j][a].iter_mut().zip(&other.comp[j][a]) {
                    *x += factor * y;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: C64) {
        for j in 0..3 {
            for a in 0..3 {
                for x in self.comp[j][a].iter_mut() {
                    *x *= factor;
                }
            }
        }
    }

    pub fn linf(&self) -> f64 {
        self.comp
            .iter()
            .flatten()
            .map(|c| spectral::linf(c))
            .fold(0.0, f64::max)
    }

    /// `H^s` norm over all nine scalar components.
    pub fn sobolev(&self, s: f64) -> f64 {
        let mut acc = 0.0;
        for j in 0..3 {
            for a in 0..3 {
                let hat = to_hat(self.grid, &self.comp[j][a]);
                acc += spectral::sobolev_hat(self.grid, &hat, s).powi(2);
            }
        }
        acc.sqrt()
    }

    pub fn l2(&self) -> f64 {
        let mut acc = 0.0;
        for j in 0..3 {
            for a in 0..3 {
                acc += spectral::l2_phys(self.grid, &self.comp[j][a]).powi(2);
            }
        }
        acc.sqrt()
    }

    /// Drop imaginary parts (used after constructions that are real by
    /// design, to keep exact realness).
    pub fn realify(&mut self) {
        for j in 0..3 {
            for a in 0..3 {
                for v in self.comp[j][a].iter_mut() {
                    *v = C64::new(v.re, 0.0);
                }
            }
        }
    }

    /// Hodge split per Lie coefficient; zero mode goes to the df part.
    pub fn hodge_split(&self) -> (Self, Self) {
        let grid = self.grid;
        let mut df = Self::zeros(grid);
        let mut cf = Self::zeros(grid);
        for a in 0..3 {
            let hats: Vec<Vec<C64>> =
                (0..3).map(|j| to_hat(grid, &self.comp[j][a])).collect();
            let (dfh, cfh) = hodge_split_hat(grid, [&hats[0], &hats[1], &hats[2]]);
            for j in 0..3 {
                df.comp[j][a] = from_hat(grid, &dfh[j]);
                cf.comp[j][a] = from_hat(grid, &cfh[j]);
            }
        }
        (df, cf)
    }

    /// Divergence (spectral), as a Lie-valued scalar field.
    pub fn divergence(&self) -> LieScalarField {
        let grid = self.grid;
        let mut out = LieScalarField::zeros(grid);
        for a in 0..3 {
            let hats: Vec<Vec<C64>> =
                (0..3).map(|j| to_hat(grid, &self.comp[j][a])).collect();
            let div = spectral::divergence_hat(grid, [&hats[0], &hats[1], &hats[2]]);
            out.comp[a] = from_hat(grid, &div);
        }
        out
    }

    pub fn apply_multiplier(&self, spec: MultiplierSpec) -> Self {
        let mut out = self.clone();
        for j in 0..3 {
            for a in 0..3 {
                let mut hat = to_hat(self.grid, &self.comp[j][a]);
                apply_multiplier_hat(spec, self.grid, &mut hat);
                out.comp[j][a] = from_hat(self.grid, &hat);
            }
        }
        out
    }
}

impl LieScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, comp: std::array::from_fn(|_| zero_vec(grid)) }
    }

    pub fn l2(&self) -> f64 {
        self.comp
            .iter()
            .map(|c| spectral::l2_phys(self.grid, c).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn linf(&self) -> f64 {
        self.comp.iter().map(|c| spectral::linf(c)).fold(0.0, f64::max)
    }

    pub fn sobolev(&self, s: f64) -> f64 {
        self.comp
            .iter()
            .map(|c| spectral::sobolev_hat(self.grid, &to_hat(self.grid, c), s).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Gradient, as a Lie vector field.
    pub fn gradient(&self) -> LieVectorField {
        let grid = self.grid;
        let mut out = LieVectorField::zeros(grid);
        for a in 0..3 {
            let hat = to_hat(grid, &self.comp[a]);
            for j in 0..3 {
                let mut h = hat.clone();
                apply_multiplier_hat(MultiplierSpec::Partial(j), grid, &mut h);
                out.comp[j][a] = from_hat(grid, &h);
            }
        }
        out
    }
}

impl SpinorField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            comp: std::array::from_fn(|_| std::array::from_fn(|_| zero_vec(grid))),
        }
    }

    pub fn add_scaled(&mut self, other: &Self, factor: C64) {
        for i in 0..2 {
            for s in 0..4 {
                for (x, y) in self.comp[i][s].iter_mut().zip(&other.comp[i][s]) {
                    *x += factor * y;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: C64) {
        for i in 0..2 {
            for s in 0..4 {
                for x in self.comp[i][s].iter_mut() {
                    *x *= factor;
                }
            }
        }
    }

    pub fn l2(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..2 {
            for s in 0..4 {
                acc += spectral::l2_phys(self.grid, &self.comp[i][s]).powi(2);
            }
        }
        acc.sqrt()
    }

    pub fn sobolev(&self, l: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..2 {
            for s in 0..4 {
                let hat = to_hat(self.grid, &self.comp[i][s]);
                acc += spectral::sobolev_hat(self.grid, &hat, l).powi(2);
            }
        }
        acc.sqrt()
    }

    pub fn linf(&self) -> f64 {
        self.comp
            .iter()
            .flatten()
            .map(|c| spectral::linf(c))
            .fold(0.0, f64::max)
    }
}

/// Curvature: spatial components `F_ij` for `i < j` and the electric field
/// `F_j0 = -dtA_j` of temporal gauge.
#[derive(Debug, Clone)]
pub struct CurvatureField {
    pub grid: Grid,
    /// `(F_12, F_13, F_23)`.
    pub spatial: [LieScalarField; 3],
    pub electric: LieVectorField,
}

impl CurvatureField {
    /// `F_ij` with sign handling; `i`, `j` in `0..3`, `i != j`.
    pub fn f_spatial(&self, i: usize, j: usize) -> LieScalarField {
        let (idx, sign) = match (i, j) {
            (0, 1) => (0, 1.0),
            (1, 0) => (0, -1.0),
            (0, 2) => (1, 1.0),
            (2, 0) => (1, -1.0),
            (1, 2) => (2, 1.0),
            (2, 1) => (2, -1.0),
            _ => panic!("f_spatial needs i != j in 0..3"),
        };
        let mut out = self.spatial[idx].clone();
        for a in 0..3 {
            for v in out.comp[a].iter_mut() {
                *v *= sign;
            }
        }
        out
    }
}

/// Pointwise su(2) bracket of two coefficient triples on a shared grid
/// (no dealiasing; use on padded-grid data).
pub fn cross_lie(x: &[Vec<C64>; 3], y: &[Vec<C64>; 3]) -> [Vec<C64>; 3] {
    let pair = |a: &[C64], b: &[C64], c: &[C64], d: &[C64]| -> Vec<C64> {
        a.iter()
            .zip(b)
            .zip(c.iter().zip(d))
            .map(|((a, b), (c, d))| a * b - c * d)
            .collect()
    };
    [
        pair(&x[1], &y[2], &x[2], &y[1]),
        pair(&x[2], &y[0], &x[0], &y[2]),
        pair(&x[0], &y[1], &x[1], &y[0]),
    ]
}

/// Lift all nine components of a Lie vector field to the padded grid.
pub fn lift_lie_vector(p: &Padded, a: &LieVectorField) -> [[Vec<C64>; 3]; 3] {
    std::array::from_fn(|j| std::array::from_fn(|l| p.lift(&a.comp[j][l])))
}

/// Lift all eight components of a spinor field to the padded grid.
pub fn lift_spinor(p: &Padded, psi: &SpinorField) -> [[Vec<C64>; 4]; 2] {
    std::array::from_fn(|i| std::array::from_fn(|s| p.lift(&psi.comp[i][s])))
}

/// Curvature of `(A, dtA)`: `F_ij = d_i A_j - d_j A_i + [A_i, A_j]`
/// (spectral derivatives, dealiased bracket), `F_j0 = -dtA_j`.
pub fn curvature(a: &LieVectorField, dta: &LieVectorField) -> Result<CurvatureField, FieldError> {
    if a.grid != dta.grid {
        return Err(FieldError::GridMismatch);
    }
    let grid = a.grid;
    let p = Padded::new(grid);
    let big = lift_lie_vector(&p, a);
    let pairs = [(0usize, 1usize), (0, 2), (1, 2)];
    let mut spatial: Vec<LieScalarField> = Vec::with_capacity(3);
    for &(i, j) in &pairs {
        let br = cross_lie(&big[i], &big[j]);
        let mut f = LieScalarField::zeros(grid);
        for l in 0..3 {
            let mut hat_i = to_hat(grid, &a.comp[i][l]);
            let mut hat_j = to_hat(grid, &a.comp[j][l]);
            apply_multiplier_hat(MultiplierSpec::Partial(j), grid, &mut hat_i);
            apply_multiplier_hat(MultiplierSpec::Partial(i), grid, &mut hat_j);
            // d_i A_j - d_j A_i
            let lin_hat: Vec<C64> =
                hat_j.iter().zip(&hat_i).map(|(dj, di)| dj - di).collect();
            let lin = from_hat(grid, &lin_hat);
            let nl = p.restrict(&br[l]);
            f.comp[l] = lin.iter().zip(&nl).map(|(x, y)| x + y).collect();
        }
        spatial.push(f);
    }
    let mut electric = dta.clone();
    electric.scale(C64::new(-1.0, 0.0));
    let spatial: [LieScalarField; 3] = spatial.try_into().unwrap();
    Ok(CurvatureField { grid, spatial, electric })
}

/// Charge density `rho^a = <psi^i, G^a_{ij} psi^j>` (the `nu = 0` current),
/// dealiased.
pub fn charge_density(psi: &SpinorField, conv: Convention) -> LieScalarField {
    let grid = psi.grid;
    let p = Padded::new(grid);
    let big = lift_spinor(&p, psi);
    let mut out = LieScalarField::zeros(grid);
    for a in 0..3 {
        let g = conv.interaction_generator(a);
        let mut acc = vec![C64::default(); p.big.len()];
        for i in 0..2 {
            for j in 0..2 {
                let gij = C64::new(g[(i, j)].re, g[(i, j)].im);
                if gij.norm() == 0.0 {
                    continue;
                }
                for s in 0..4 {
                    for (v, (x, y)) in acc.iter_mut().zip(big[i][s].iter().zip(&big[j][s])) {
                        *v += gij * x.conj() * y;
                    }
                }
            }
        }
        out.comp[a] = p.restrict(&acc);
    }
    out
}

/// Gauss residual of initial data `(a, a1, psi)` with `F_{j0} = -a1_j`:
/// `residual = -div a1 - [a_j, a1_j] - rho`, returned with its `L^2` norm.
pub fn gauss_residual_data(
    a: &LieVectorField,
    a1: &LieVectorField,
    psi: &SpinorField,
    conv: Convention,
) -> (LieScalarField, f64) {
    let grid = a.grid;
    let p = Padded::new(grid);
    let a_big = lift_lie_vector(&p, a);
    let a1_big = lift_lie_vector(&p, a1);
    let rho = charge_density(psi, conv);
    let div = a1.divergence();
    let mut res = LieScalarField::zeros(grid);
    let mut comm_big: [Vec<C64>; 3] = std::array::from_fn(|_| vec![C64::default(); p.big.len()]);
    for j in 0..3 {
        let c = cross_lie(&a_big[j], &a1_big[j]);
        for l in 0..3 {
            for (x, y) in comm_big[l].iter_mut().zip(&c[l]) {
                *x += y;
            }
        }
    }
    for l in 0..3 {
        let comm = p.restrict(&comm_big[l]);
        res.comp[l] = div.comp[l]
            .iter()
            .zip(&comm)
            .zip(&rho.comp[l])
            .map(|((d, c), r)| -d - c - r)
            .collect();
    }
    let norm = res.l2();
    (res, norm)
}

/// Initial data bundle.
#[derive(Debug, Clone)]
pub struct InitialData {
    pub a0: LieVectorField,
    pub a1: LieVectorField,
    pub psi0: SpinorField,
    /// `|a0|_{H^s} + |a1^{df}|_{H^{s-1}} + |psi0|_{H^l}` before the
    /// constraint correction; equals the requested `eps` exactly.
    pub quoted_norm: f64,
}

fn check_exponents(s: f64, l: f64) -> Result<(), FieldError> {
    let ok = s > 0.75
        && l > 0.25
        && s >= l
        && l >= s - 1.0
        && 2.0 * s - l > 1.0
        && l - s >= -0.5;
    if ok {
        Ok(())
    } else {
        Err(FieldError::InadmissibleExponents { s, l })
    }
}

/// Real Gaussian random field with spectral decay `<xi>^{-decay}`.
fn gaussian_scalar(grid: Grid, rng: &mut ChaCha8Rng, decay: f64) -> Vec<C64> {
    let mut data: Vec<C64> = (0..grid.len())
        .map(|_| C64::new(rng.sample(StandardNormal), 0.0))
        .collect();
    spectral::forward(grid, &mut data);
    for (idx, v) in data.iter_mut().enumerate() {
        let xi = grid.xi(idx);
        let w = (1.0 + xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).powf(-decay / 2.0);
        *v *= w;
    }
    spectral::zero_nyquist(grid, &mut data);
    spectral::inverse(grid, &mut data);
    for v in data.iter_mut() {
        *v = C64::new(v.re, 0.0);
    }
    data
}

/// Complex Gaussian random field with spectral decay `<xi>^{-decay}`.
fn gaussian_scalar_complex(grid: Grid, rng: &mut ChaCha8Rng, decay: f64) -> Vec<C64> {
    let mut data: Vec<C64> = (0..grid.len())
        .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    spectral::forward(grid, &mut data);
    for (idx, v) in data.iter_mut().enumerate() {
        let xi = grid.xi(idx);
        let w = (1.0 + xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).powf(-decay / 2.0);
        *v *= w;
    }
    spectral::zero_nyquist(grid, &mut data);
    spectral::inverse(grid, &mut data);
    data
}

/// Draw random initial data at the small-data scale `eps`, with the
/// divergence-free parts projected exactly and the curl-free part of the
/// velocity corrected so the Gauss constraint holds.
///
/// Deterministic given `(seed, grid, s, l, eps)`.  With `abelian` set, all
/// Lie content lies along `T_3` and the spinor vanishes.
pub fn random_small_data(
    grid: Grid,
    s: f64,
    l: f64,
    eps: f64,
    seed: u64,
    abelian: bool,
    conv: Convention,
) -> Result<InitialData, FieldError> {
    check_exponents(s, l)?;
    if eps < 0.0 {
        return Err(FieldError::InadmissibleExponents { s, l });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lie_range = if abelian { 2..3 } else { 0..3 };

    // a0 = df-projected random field + gradient potential (cf part)
    let mut a0raw = LieVectorField::zeros(grid);
    for a in lie_range.clone() {
        for j in 0..3 {
            a0raw.comp[j][a] = gaussian_scalar(grid, &mut rng, s + 2.0);
        }
    }
    let (mut a0, _) = a0raw.hodge_split();
    let mut chi = LieScalarField::zeros(grid);
    for a in lie_range.clone() {
        chi.comp[a] = gaussian_scalar(grid, &mut rng, s + 3.0);
    }
    let a0cf = chi.gradient();
    a0.add_scaled(&a0cf, C64::new(1.0, 0.0));
    a0.realify();

    // a1 df part
    let mut a1raw = LieVectorField::zeros(grid);
    for a in lie_range.clone() {
        for j in 0..3 {
            a1raw.comp[j][a] = gaussian_scalar(grid, &mut rng, s + 1.0);
        }
    }
    let (mut a1, _) = a1raw.hodge_split();
    a1.realify();

    // spinor
    let mut psi0 = SpinorField::zeros(grid);
    if !abelian {
        for i in 0..2 {
            for sc in 0..4 {
                psi0.comp[i][sc] = gaussian_scalar_complex(grid, &mut rng, l + 2.0);
            }
        }
    }

    if eps == 0.0 {
        return Ok(InitialData {
            a0: LieVectorField::zeros(grid),
            a1: LieVectorField::zeros(grid),
            psi0: SpinorField::zeros(grid),
            quoted_norm: 0.0,
        });
    }

    let total = a0.sobolev(s) + a1.sobolev(s - 1.0) + psi0.sobolev(l);
    let factor = C64::new(eps / total, 0.0);
    a0.scale(factor);
    a1.scale(factor);
    psi0.scale(factor);
    let quoted_norm = a0.sobolev(s) + a1.sobolev(s - 1.0) + psi0.sobolev(l);

    let a1 = gauss_project(&a0, &a1, &psi0, conv, 1e-13, 60)?;
    Ok(InitialData { a0, a1, psi0, quoted_norm })
}

fn mean_of(grid: Grid, data: &[C64]) -> C64 {
    data.iter().sum::<C64>() / C64::new(grid.len() as f64, 0.0)
}

/// Adjust the curl-free part (gradient potential plus spatial mean) of `a1`
/// so the Gauss constraint holds; the nonconstant divergence-free part is
/// untouched.
///
/// The constraint reads `div a1 = -[a0_j, a1_j] - rho`.  On the torus the
/// right side must integrate to zero; a pure-gradient correction cannot
/// reach the mean, so the spatial mean of `a1` (harmless: divergence- and
/// curl-free) is used to cancel it through `[a0_j, .]`.  A Picard iteration
/// couples the two corrections.
pub fn gauss_project(
    a0: &LieVectorField,
    a1: &LieVectorField,
    psi: &SpinorField,
    conv: Convention,
    tol: f64,
    max_iter: usize,
) -> Result<LieVectorField, FieldError> {
    if a0.grid != a1.grid || a0.grid != psi.grid {
        return Err(FieldError::GridMismatch);
    }
    let grid = a0.grid;
    let p = Padded::new(grid);
    let a0_big = lift_lie_vector(&p, a0);
    let rho = charge_density(psi, conv);

    // fixed df part without its zero mode; phi and b are the unknowns
    let (df_full, cf) = a1.hodge_split();
    let mut df_fixed = df_full.clone();
    let mut b: [[C64; 3]; 3] = [[C64::default(); 3]; 3];
    for j in 0..3 {
        for l in 0..3 {
            let m = mean_of(grid, &df_fixed.comp[j][l]);
            b[j][l] = m;
            for v in df_fixed.comp[j][l].iter_mut() {
                *v -= m;
            }
        }
    }
    // initial gradient potential from the incoming cf part:
    // cf_j = d_j phi  =>  phihat = -|xi|^{-2} (div cf)hat
    let mut phi_hat: [Vec<C64>; 3] = std::array::from_fn(|_| vec![C64::default(); grid.len()]);
    for l in 0..3 {
        let hats: Vec<Vec<C64>> = (0..3).map(|j| to_hat(grid, &cf.comp[j][l])).collect();
        let div = spectral::divergence_hat(grid, [&hats[0], &hats[1], &hats[2]]);
        for (idx, v) in div.iter().enumerate() {
            let xi = grid.xi(idx);
            let r2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
            phi_hat[l][idx] = if r2 == 0.0 { C64::default() } else { -v / r2 };
        }
    }

    // mean-cancellation matrix: R^9 -> R^3, (j, beta) -> [mean a0_j, e_beta]
    let eps_sym = crate::liealg::StructureConstants;
    let a0_mean: [[f64; 3]; 3] =
        std::array::from_fn(|j| std::array::from_fn(|l| mean_of(grid, &a0.comp[j][l]).re));
    let mut m = nalgebra::DMatrix::<f64>::zeros(3, 9);
    for j in 0..3 {
        for beta in 0..3 {
            for alpha in 0..3 {
                for c in 0..3 {
                    // [a0_j, e_beta]^c = f^{alpha beta c} a0_j^alpha
                    m[(c, 3 * j + beta)] += eps_sym.f(alpha, beta, c) * a0_mean[j][alpha];
                }
            }
        }
    }
    let pinv = m
        .clone()
        .svd(true, true)
        .pseudo_inverse(1e-12)
        .expect("svd of 3x9 matrix");

    let assemble = |phi_hat: &[Vec<C64>; 3], b: &[[C64; 3]; 3]| -> LieVectorField {
        let mut out = df_fixed.clone();
        for l in 0..3 {
            for j in 0..3 {
                let mut h = phi_hat[l].clone();
                apply_multiplier_hat(MultiplierSpec::Partial(j), grid, &mut h);
                let grad = from_hat(grid, &h);
                for (x, g) in out.comp[j][l].iter_mut().zip(&grad) {
                    *x += g + b[j][l];
                }
            }
        }
        out
    };

    let mut last_residual = f64::INFINITY;
    for _ in 0..max_iter {
        let a1_cur = assemble(&phi_hat, &b);
        let (_, resn) = gauss_residual_data(a0, &a1_cur, psi, conv);
        if resn <= tol {
            return Ok(a1_cur);
        }
        last_residual = resn;
        // source S = -[a0_j, a1_j] - rho; want div a1 = Laplacian phi = S
        let a1_big = lift_lie_vector(&p, &a1_cur);
        let mut s_field: [Vec<C64>; 3] = std::array::from_fn(|_| vec![C64::default(); grid.len()]);
        let mut comm_big: [Vec<C64>; 3] =
            std::array::from_fn(|_| vec![C64::default(); p.big.len()]);
        for j in 0..3 {
            let c = cross_lie(&a0_big[j], &a1_big[j]);
            for l in 0..3 {
                for (x, y) in comm_big[l].iter_mut().zip(&c[l]) {
                    *x += y;
                }
            }
        }
        for l in 0..3 {
            let comm = p.restrict(&comm_big[l]);
            s_field[l] = comm
                .iter()
                .zip(&rho.comp[l])
                .map(|(c, r)| -c - r)
                .collect();
        }
        // cancel the mean by shifting b, then solve the Laplacian
        let mut mean_re = nalgebra::DVector::<f64>::zeros(3);
        let mut mean_im = nalgebra::DVector::<f64>::zeros(3);
        for l in 0..3 {
            let mv = mean_of(grid, &s_field[l]);
            mean_re[l] = mv.re;
            mean_im[l] = mv.im;
        }
        // S includes -[a0_j, b_j]; the new b must satisfy
        // [mean a0_j, b_new] = (mean S with current b) + [mean a0_j, b_cur]
        let mut cur = nalgebra::DVector::<f64>::zeros(9);
        let mut cur_im = nalgebra::DVector::<f64>::zeros(9);
        for j in 0..3 {
            for l in 0..3 {
                cur[3 * j + l] = b[j][l].re;
                cur_im[3 * j + l] = b[j][l].im;
            }
        }
        let rhs_re = &mean_re + &m * &cur;
        let rhs_im = &mean_im + &m * &cur_im;
        let sol_re = &pinv * rhs_re;
        let sol_im = &pinv * rhs_im;
        for j in 0..3 {
            for l in 0..3 {
                b[j][l] = C64::new(sol_re[3 * j + l], sol_im[3 * j + l]);
            }
        }
        for l in 0..3 {
            let mut hat = to_hat(grid, &s_field[l]);
            for (idx, v) in hat.iter_mut().enumerate() {
                let xi = grid.xi(idx);
                let r2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
                *v = if r2 == 0.0 { C64::default() } else { -*v / r2 };
            }
            phi_hat[l] = hat;
        }
    }
    // final check after the last update
    let a1_cur = assemble(&phi_hat, &b);
    let (_, resn) = gauss_residual_data(a0, &a1_cur, psi, conv);
    if resn <= tol {
        return Ok(a1_cur);
    }
    Err(FieldError::NonConvergence { iterations: max_iter, residual: resn.min(last_residual) })
}

fn write_complex_array(w: &mut impl std::io::Write, data: &[C64]) -> std::io::Result<()> {
    for v in data {
        w.write_all(&v.re.to_le_bytes())?;
        w.write_all(&v.im.to_le_bytes())?;
    }
    Ok(())
}

fn read_complex_array(
    r: &mut impl std::io::Read,
    len: usize,
) -> Result<Vec<C64>, FieldError> {
    let mut buf = vec![0u8; 16 * len];
    r.read_exact(&mut buf)
        .map_err(|_| FieldError::Corrupt("truncated array section".into()))?;
    let mut out = Vec::with_capacity(len);
    for chunk in buf.chunks_exact(16) {
        let re = f64::from_le_bytes(chunk[0..8].try_into().unwrap());
        let im = f64::from_le_bytes(chunk[8..16].try_into().unwrap());
        out.push(C64::new(re, im));
    }
    Ok(out)
}

/// Serialize a split-system state: header (magic, version, N, colors,
/// convention, time), then the arrays in declared field order, x-fastest,
/// little-endian complex doubles.
pub fn checkpoint_write(state: &SimulationState, path: &Path) -> Result<(), FieldError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(state.grid().n as u32).to_le_bytes())?;
    w.write_all(&(N_COLORS as u32).to_le_bytes())?;
    w.write_all(&[state.convention.tag()])?;
    w.write_all(&state.t.to_le_bytes())?;
    for field in [&state.adf_plus, &state.adf_minus, &state.acf, &state.dt_acf] {
        for j in 0..3 {
            for a in 0..3 {
                write_complex_array(&mut w, &field.comp[j][a])?;
            }
        }
    }
    for field in [&state.psi_plus, &state.psi_minus] {
        for i in 0..2 {
            for s in 0..4 {
                write_complex_array(&mut w, &field.comp[i][s])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a checkpoint back; the box length is not part of the format and must
/// be supplied by the caller's configuration.
pub fn checkpoint_read(path: &Path, box_length: f64) -> Result<SimulationState, FieldError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| FieldError::Corrupt("missing header".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(FieldError::Corrupt("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)
        .map_err(|_| FieldError::Corrupt("missing version".into()))?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(FieldError::UnsupportedVersion(version));
    }
    r.read_exact(&mut u32buf)
        .map_err(|_| FieldError::Corrupt("missing grid size".into()))?;
    let n = u32::from_le_bytes(u32buf) as usize;
    if !(n >= 8 && n.is_power_of_two()) {
        return Err(FieldError::Corrupt(format!("bad grid size {n}")));
    }
    r.read_exact(&mut u32buf)
        .map_err(|_| FieldError::Corrupt("missing color count".into()))?;
    let colors = u32::from_le_bytes(u32buf) as usize;
    if colors != N_COLORS {
        return Err(FieldError::Corrupt(format!("unsupported color count {colors}")));
    }
    let mut byte = [0u8; 1];
    r.read_exact(&mut byte)
        .map_err(|_| FieldError::Corrupt("missing convention".into()))?;
    let convention = Convention::from_tag(byte[0])
        .ok_or_else(|| FieldError::Corrupt(format!("bad convention tag {}", byte[0])))?;
    let mut f64buf = [0u8; 8];
    r.read_exact(&mut f64buf)
        .map_err(|_| FieldError::Corrupt("missing time".into()))?;
    let t = f64::from_le_bytes(f64buf);

    let grid = Grid::new(n, box_length);
    let len = grid.len();
    let mut lie_fields = Vec::with_capacity(4);
    for _ in 0..4 {
        let mut f = LieVectorField::zeros(grid);
        for j in 0..3 {
            for a in 0..3 {
                f.comp[j][a] = read_complex_array(&mut r, len)?;
            }
        }
        lie_fields.push(f);
    }
    let mut spinor_fields = Vec::with_capacity(2);
    for _ in 0..2 {
        let mut f = SpinorField::zeros(grid);
        for i in 0..2 {
            for s in 0..4 {
                f.comp[i][s] = read_complex_array(&mut r, len)?;
            }
        }
        spinor_fields.push(f);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(FieldError::Corrupt("trailing bytes".into()));
    }
    let dt_acf = lie_fields.pop().unwrap();
    let acf = lie_fields.pop().unwrap();
    let adf_minus = lie_fields.pop().unwrap();
    let adf_plus = lie_fields.pop().unwrap();
    let psi_minus = spinor_fields.pop().unwrap();
    let psi_plus = spinor_fields.pop().unwrap();
    Ok(SimulationState {
        adf_plus,
        adf_minus,
        acf,
        dt_acf,
        psi_plus,
        psi_minus,
        t,
        convention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TAU: f64 = std::f64::consts::TAU;

    #[test]
    fn curvature_vacuum_and_constant_fields() {
        let grid = Grid::new(8, TAU);
        let zero = LieVectorField::zeros(grid);
        let f = curvature(&zero, &zero).unwrap();
        for s in &f.spatial {
            assert!(s.linf() < 1e-15);
        }
        // A_1 = T_1, A_2 = T_2 constant: F_12 = [T_1, T_2] = T_3
        let mut a = LieVectorField::zeros(grid);
        for v in a.comp[0][0].iter_mut() {
            *v = C64::new(1.0, 0.0);
        }
        for v in a.comp[1][1].iter_mut() {
            *v = C64::new(1.0, 0.0);
        }
        let f = curvature(&a, &zero).unwrap();
        let f12 = &f.spatial[0];
        for idx in 0..grid.len() {
            assert!((f12.comp[2][idx] - C64::new(1.0, 0.0)).norm() < 1e-12);
            assert!(f12.comp[0][idx].norm() < 1e-12);
            assert!(f12.comp[1][idx].norm() < 1e-12);
        }
        // sanity: matches the matrix bracket
        let t3 = crate::liealg::commutator(
            crate::liealg::LieElement::new(1.0, 0.0, 0.0),
            crate::liealg::LieElement::new(0.0, 1.0, 0.0),
        );
        assert_eq!(t3.coeffs, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn curvature_abelian_has_no_bracket_term() {
        let grid = Grid::new(8, TAU);
        let mut a = LieVectorField::zeros(grid);
        let f1 = spectral::ScalarField::from_fn(grid, |x, y, _| C64::new((x + y).sin(), 0.0));
        let f2 = spectral::ScalarField::from_fn(grid, |_, y, z| C64::new((y - z).cos(), 0.0));
        a.comp[0][2] = f1.data.clone();
        a.comp[1][2] = f2.data.clone();
        let f = curvature(&a, &LieVectorField::zeros(grid)).unwrap();
        // expected: F_12 = d_1 A_2 - d_2 A_1 along T_3 only
        let mut h1 = to_hat(grid, &a.comp[1][2]);
        apply_multiplier_hat(MultiplierSpec::Partial(0), grid, &mut h1);
        let mut h2 = to_hat(grid, &a.comp[0][2]);
        apply_multiplier_hat(MultiplierSpec::Partial(1), grid, &mut h2);
        let lin: Vec<C64> = from_hat(grid, &h1)
            .iter()
            .zip(&from_hat(grid, &h2))
            .map(|(x, y)| x - y)
            .collect();
        for idx in 0..grid.len() {
            assert!((f.spatial[0].comp[2][idx] - lin[idx]).norm() < 1e-12);
            assert!(f.spatial[0].comp[0][idx].norm() < 1e-14);
            assert!(f.spatial[0].comp[1][idx].norm() < 1e-14);
        }
    }

    #[test]
    fn random_data_normalization_and_determinism() {
        let grid = Grid::new(8, TAU);
        let d1 = random_small_data(grid, 0.9, 0.5, 1e-3, 42, false, Convention::Physics).unwrap();
        let d2 = random_small_data(grid, 0.9, 0.5, 1e-3, 42, false, Convention::Physics).unwrap();
        assert!((d1.quoted_norm - 1e-3).abs() < 1e-15);
        assert_eq!(d1.a0, d2.a0);
        assert_eq!(d1.a1, d2.a1);
        assert_eq!(d1.psi0, d2.psi0);
        let d3 = random_small_data(grid, 0.9, 0.5, 1e-3, 43, false, Convention::Physics).unwrap();
        assert!(d3.a0 != d1.a0);
        // eps = 0 gives vacuum
        let z = random_small_data(grid, 0.9, 0.5, 0.0, 42, false, Convention::Physics).unwrap();
        assert!(z.a0.linf() == 0.0 && z.psi0.l2() == 0.0);
    }

    #[test]
    fn random_data_rejects_bad_exponents() {
        let grid = Grid::new(8, TAU);
        assert!(matches!(
            random_small_data(grid, 0.5, 0.5, 1e-3, 1, false, Convention::Physics),
            Err(FieldError::InadmissibleExponents { .. })
        ));
        assert!(matches!(
            random_small_data(grid, 0.9, 0.1, 1e-3, 1, false, Convention::Physics),
            Err(FieldError::InadmissibleExponents { .. })
        ));
    }

    #[test]
    fn gauss_projection_converges_and_is_idempotent() {
        let grid = Grid::new(8, TAU);
        let d = random_small_data(grid, 0.9, 0.5, 1e-3, 7, false, Convention::Physics).unwrap();
        let (_, resn) = gauss_residual_data(&d.a0, &d.a1, &d.psi0, Convention::Physics);
        assert!(resn <= 1e-13, "residual {resn:.3e}");
        // relative to the data scale this is comfortably within 1e-10
        assert!(resn / d.quoted_norm <= 1e-10);
        let a1_again =
            gauss_project(&d.a0, &d.a1, &d.psi0, Convention::Physics, 1e-13, 60).unwrap();
        let mut diff: f64 = 0.0;
        for j in 0..3 {
            for a in 0..3 {
                for (x, y) in a1_again.comp[j][a].iter().zip(&d.a1.comp[j][a]) {
                    diff = diff.max((x - y).norm());
                }
            }
        }
        assert!(diff <= 1e-13, "idempotence drift {diff:.3e}");
    }

    #[test]
    fn gauss_projection_abelian_leaves_cf_empty() {
        let grid = Grid::new(8, TAU);
        let d = random_small_data(grid, 0.9, 0.5, 1e-3, 11, true, Convention::Physics).unwrap();
        let (_, cf) = d.a1.hodge_split();
        assert!(cf.linf() < 1e-14);
        let (_, resn) = gauss_residual_data(&d.a0, &d.a1, &d.psi0, Convention::Physics);
        assert!(resn < 1e-13);
    }

    #[test]
    fn gauss_residual_single_abelian_mode() {
        // A_1 = a sin(k x_1) T_3, dtA_1 = b cos(k x_1) T_3, psi = 0:
        // residual = -div dtA = b k sin(k x_1) T_3.
        let grid = Grid::new(16, TAU);
        let (aamp, bamp, k) = (0.3, 0.7, 2.0);
        let mut a = LieVectorField::zeros(grid);
        let mut dta = LieVectorField::zeros(grid);
        a.comp[0][2] = spectral::ScalarField::from_fn(grid, |x, _, _| {
            C64::new(aamp * (k * x).sin(), 0.0)
        })
        .data;
        dta.comp[0][2] = spectral::ScalarField::from_fn(grid, |x, _, _| {
            C64::new(bamp * (k * x).cos(), 0.0)
        })
        .data;
        let psi = SpinorField::zeros(grid);
        let (res, norm) = gauss_residual_data(&a, &dta, &psi, Convention::Physics);
        let expect = spectral::ScalarField::from_fn(grid, |x, _, _| {
            C64::new(bamp * k * (k * x).sin(), 0.0)
        });
        for (u, v) in res.comp[2].iter().zip(&expect.data) {
            assert!((u - v).norm() < 1e-12);
        }
        // |b k sin(k x)|_{L^2} = b k (L^3 / 2)^{1/2}
        let direct = bamp * k * (grid.l.powi(3) / 2.0).sqrt();
        assert!((norm - direct).abs() < 1e-10 * direct.max(1.0));
    }

    #[test]
    fn checkpoint_roundtrip_and_errors() {
        let grid = Grid::new(8, TAU);
        let d = random_small_data(grid, 0.9, 0.5, 1e-3, 3, false, Convention::Physics).unwrap();
        let state = crate::dynamics::SimulationState::from_initial_data(&d, Convention::Physics);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        checkpoint_write(&state, &path).unwrap();
        let back = checkpoint_read(&path, grid.l).unwrap();
        assert_eq!(back.t, state.t);
        assert_eq!(back.convention, state.convention);
        assert_eq!(back.adf_plus, state.adf_plus);
        assert_eq!(back.psi_minus, state.psi_minus);
        // re-serialization is byte identical
        let path2 = dir.path().join("state2.ckpt");
        checkpoint_write(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        // truncation
        let bytes = std::fs::read(&path).unwrap();
        let path3 = dir.path().join("trunc.ckpt");
        std::fs::write(&path3, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(checkpoint_read(&path3, grid.l), Err(FieldError::Corrupt(_))));
        // version bump
        let mut bumped = bytes.clone();
        bumped[4] = 99;
        let path4 = dir.path().join("vers.ckpt");
        std::fs::write(&path4, &bumped).unwrap();
        assert!(matches!(
            checkpoint_read(&path4, grid.l),
            Err(FieldError::UnsupportedVersion(99))
        ));
        // bad magic
        let mut badmag = bytes;
        badmag[0] = b'X';
        let path5 = dir.path().join("mag.ckpt");
        std::fs::write(&path5, &badmag).unwrap();
        assert!(matches!(checkpoint_read(&path5, grid.l), Err(FieldError::Corrupt(_))));
    }
}
