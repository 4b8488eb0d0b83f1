//! Null-form evaluators and verifiers: the bilinear forms Q_ij, the bracket
//! identities used to expose null structure, the angular bilinear form, the
//! spinorial null bound, and discrete space-time restriction norms.
//!
//! The identity verifiers evaluate both sides through independent spectral
//! pipelines and report the maximal relative spectral deviation; they are the
//! machine-checkable content of the null-structure algebra.

use rayon::prelude::*;
use thiserror::Error;

use crate::fields::{cross_lie, LieScalarField, LieVectorField, SpinorField};
use crate::liealg::DIRAC;
use crate::spectral::{
    df_project_hat, from_hat, to_hat, Grid, MultiplierSpec, Padded, ScalarField,
};
use crate::C64;

const TAU: f64 = std::f64::consts::TAU;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("trace needs at least 8 snapshots, got {0}")]
    TooFewSnapshots(usize),
    #[error("traces disagree in snapshot count or duration")]
    TraceMismatch,
    #[error("space-time mode count {0} exceeds the direct-convolution guard")]
    TooLarge(usize),
}

/// Uniformly sampled time slices of a complex scalar lattice function on
/// `[0, t_total]`.
#[derive(Debug, Clone)]
pub struct SpaceTimeTrace {
    pub grid: Grid,
    pub t_total: f64,
    pub snapshots: Vec<Vec<C64>>,
}

/// Hann taper weight for slice `m` of `big_m`.
pub fn hann(m: usize, big_m: usize) -> f64 {
    0.5 * (1.0 - (TAU * m as f64 / big_m as f64).cos())
}

impl SpaceTimeTrace {
    pub fn new(
        grid: Grid,
        t_total: f64,
        snapshots: Vec<Vec<C64>>,
    ) -> Result<Self, AnalysisError> {
        if snapshots.len() < 8 {
            return Err(AnalysisError::TooFewSnapshots(snapshots.len()));
        }
        if snapshots.iter().any(|s| s.len() != grid.len()) {
            return Err(AnalysisError::GridMismatch);
        }
        Ok(Self { grid, t_total, snapshots })
    }

    pub fn m(&self) -> usize {
        self.snapshots.len()
    }

    /// Time frequency of storage index `k` (signed convention, step `2pi/T`).
    pub fn tau(&self, k: usize) -> f64 {
        let m = self.m() as i64;
        let k = k as i64;
        let signed = if k < m / 2 { k } else { k - m };
        TAU / self.t_total * signed as f64
    }

    /// Space-time spectrum, indexed `[k][spatial]`; `windowed` applies the
    /// Hann taper before the time transform.
    pub fn space_time_hat(&self, windowed: bool) -> Vec<Vec<C64>> {
        let big_m = self.m();
        let slices: Vec<Vec<C64>> = self
            .snapshots
            .iter()
            .map(|s| to_hat(self.grid, s))
            .collect();
        (0..big_m)
            .into_par_iter()
            .map(|k| {
                let mut out = vec![C64::default(); self.grid.len()];
                for (m, slice) in slices.iter().enumerate() {
                    let w = if windowed { hann(m, big_m) } else { 1.0 };
                    let phase =
                        C64::from_polar(w / big_m as f64, -TAU * (k * m) as f64 / big_m as f64);
                    for (o, v) in out.iter_mut().zip(slice) {
                        *o += phase * v;
                    }
                }
                out
            })
            .collect()
    }
}

/// Space-time restriction norm flavor: which modulation distance weights the
/// spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XsbFlavor {
    /// Vanishing modulation on forward half-waves `e^{-i|xi|t}`.
    Plus,
    /// Vanishing modulation on backward half-waves `e^{+i|xi|t}`.
    Minus,
    /// Distance to the full light cone `|tau| = |xi|`.
    Wave,
    /// Distance to the zero-frequency plane `tau = 0`.
    TauZero,
}

#[derive(Debug, Clone, Copy)]
pub struct XsbSpec {
    pub s: f64,
    pub b: f64,
    pub flavor: XsbFlavor,
}

/// Norm value together with the window's own contribution, so single-mode
/// inputs are checkable in closed form.
#[derive(Debug, Clone, Copy)]
pub struct XsbNorm {
    pub value: f64,
    /// `sqrt(T L^3 sum_k |what(k)|^2)` for the Hann window alone.
    pub window_factor: f64,
}

fn japanese_bracket(x: f64) -> f64 {
    (1.0 + x * x).sqrt()
}

fn modulation(flavor: XsbFlavor, tau: f64, r: f64) -> f64 {
    match flavor {
        XsbFlavor::Plus => tau + r,
        XsbFlavor::Minus => tau - r,
        XsbFlavor::Wave => tau.abs() - r,
        XsbFlavor::TauZero => tau,
    }
}

/// Discrete windowed space-time restriction norm
/// `(T L^3 sum <xi>^{2s} <mod>^{2b} |u(tau,xi)|^2)^{1/2}`.
pub fn xsb_norm(trace: &SpaceTimeTrace, spec: &XsbSpec) -> XsbNorm {
    let grid = trace.grid;
    let big_m = trace.m();
    let hat = trace.space_time_hat(true);
    let vol = trace.t_total * grid.l.powi(3);
    let mut acc = 0.0;
    for (k, slice) in hat.iter().enumerate() {
        let tau = trace.tau(k);
        for (idx, v) in slice.iter().enumerate() {
            let xi = grid.xi(idx);
            let r = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
            let w = japanese_bracket(r).powf(2.0 * spec.s)
                * japanese_bracket(modulation(spec.flavor, tau, r)).powf(2.0 * spec.b);
            acc += w * v.norm_sqr();
        }
    }
    // window spectrum: what(k) = (1/M) sum_m hann(m) e^{-2pi i km/M}
    let mut wacc = 0.0;
    for k in 0..big_m {
        let mut what = C64::default();
        for m in 0..big_m {
            what += C64::from_polar(
                hann(m, big_m) / big_m as f64,
                -TAU * (k * m) as f64 / big_m as f64,
            );
        }
        wacc += what.norm_sqr();
    }
    XsbNorm { value: (vol * acc).sqrt(), window_factor: (vol * wacc).sqrt() }
}

/// Standard null form `Q_ij(u,v) = d_i u d_j v - d_j u d_i v`, dealiased.
pub fn qij_null_form(u: &ScalarField, v: &ScalarField, i: usize, j: usize) -> ScalarField {
    let grid = u.grid;
    let p = Padded::new(grid);
    let d = |f: &ScalarField, ax: usize| -> Vec<C64> {
        let mut hat = f.hat();
        crate::spectral::apply_multiplier_hat(MultiplierSpec::Partial(ax), grid, &mut hat);
        p.lift_hat(&hat)
    };
    let (diu, dju) = (d(u, i), d(u, j));
    let (div, djv) = (d(v, i), d(v, j));
    let mut big = vec![C64::default(); p.big.len()];
    for idx in 0..big.len() {
        big[idx] = diu[idx] * djv[idx] - dju[idx] * div[idx];
    }
    ScalarField { grid, data: p.restrict(&big) }
}

/// Bracket null form `Q_ij[u,v] = [d_i u, d_j v] - [d_j u, d_i v]` for
/// Lie-algebra-valued scalars, dealiased.
pub fn qij_bracket(
    u: &LieScalarField,
    v: &LieScalarField,
    i: usize,
    j: usize,
) -> LieScalarField {
    let grid = u.grid;
    let p = Padded::new(grid);
    let d = |f: &LieScalarField, ax: usize| -> [Vec<C64>; 3] {
        std::array::from_fn(|l| {
            let mut hat = to_hat(grid, &f.comp[l]);
            crate::spectral::apply_multiplier_hat(MultiplierSpec::Partial(ax), grid, &mut hat);
            p.lift_hat(&hat)
        })
    };
    let (diu, dju) = (d(u, i), d(u, j));
    let (div, djv) = (d(v, i), d(v, j));
    let pos = cross_lie(&diu, &djv);
    let neg = cross_lie(&dju, &div);
    let mut out = LieScalarField::zeros(grid);
    for l in 0..3 {
        let big: Vec<C64> = pos[l].iter().zip(&neg[l]).map(|(a, b)| a - b).collect();
        out.comp[l] = p.restrict(&big);
    }
    out
}

fn df_mean_free_hats(adf: &LieVectorField) -> [[Vec<C64>; 3]; 3] {
    let grid = adf.grid;
    // [lie l][spatial j]: project df per lie component, drop the mean
    std::array::from_fn(|l| {
        let hats: [Vec<C64>; 3] =
            std::array::from_fn(|j| to_hat(grid, &adf.comp[j][l]));
        let mut df = df_project_hat(grid, [&hats[0], &hats[1], &hats[2]]);
        for comp in df.iter_mut() {
            comp[0] = C64::default();
        }
        df
    })
}

/// Max spectral deviation between two `[spatial][lie]` collections, relative
/// to the larger of the two spectra; `0` when both vanish.
fn relative_spectral_deviation(
    grid: Grid,
    lhs: &[[Vec<C64>; 3]; 3],
    rhs: &[[Vec<C64>; 3]; 3],
) -> f64 {
    let mut denom: f64 = 0.0;
    let mut diff: f64 = 0.0;
    for j in 0..3 {
        for l in 0..3 {
            let lh = to_hat(grid, &lhs[j][l]);
            let rh = to_hat(grid, &rhs[j][l]);
            for (a, b) in lh.iter().zip(&rh) {
                denom = denom.max(a.norm()).max(b.norm());
                diff = diff.max((a - b).norm());
            }
        }
    }
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

/// Check the bracket identity expressing the divergence-free convection term
/// through null forms:
/// `[A_i, d_i A_j] = -1/2 sum_{i,k} Q_ik[ |nabla|^{-2}(d_i A_k - d_k A_i), A_j ]`
/// for divergence-free mean-free `A`.  Returns the max relative spectral
/// deviation between the two evaluations.
pub fn verify_identity_50(adf: &LieVectorField) -> f64 {
    let grid = adf.grid;
    let p = Padded::new(grid);
    let lie_hats = df_mean_free_hats(adf);
    // a_big[j][l], da_big[i][j][l] = lift d_i A_j
    let a_big: [[Vec<C64>; 3]; 3] =
        std::array::from_fn(|j| std::array::from_fn(|l| p.lift_hat(&lie_hats[l][j])));
    let da_big: [[[Vec<C64>; 3]; 3]; 3] = std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            std::array::from_fn(|l| {
                let mut hat = lie_hats[l][j].clone();
                crate::spectral::apply_multiplier_hat(
                    MultiplierSpec::Partial(i),
                    grid,
                    &mut hat,
                );
                p.lift_hat(&hat)
            })
        })
    });

    // lhs_j = sum_i [A_i, d_i A_j]
    let mut lhs: [[Vec<C64>; 3]; 3] =
        std::array::from_fn(|_| std::array::from_fn(|_| vec![C64::default(); grid.len()]));
    for j in 0..3 {
        let mut acc: [Vec<C64>; 3] =
            std::array::from_fn(|_| vec![C64::default(); p.big.len()]);
        for i in 0..3 {
            let c = cross_lie(&a_big[i], &da_big[i][j]);
            for l in 0..3 {
                for (x, y) in acc[l].iter_mut().zip(&c[l]) {
                    *x += y;
                }
            }
        }
        for l in 0..3 {
            lhs[j][l] = p.restrict(&acc[l]);
        }
    }

    // B_ik = |nabla|^{-2}(d_i A_k - d_k A_i); rhs_j = -1/2 Q_ik[B_ik, A_j]
    let mut rhs: [[Vec<C64>; 3]; 3] =
        std::array::from_fn(|_| std::array::from_fn(|_| vec![C64::default(); grid.len()]));
    // b_hat[i][k][l]
    let b_hat: [[[Vec<C64>; 3]; 3]; 3] = std::array::from_fn(|i| {
        std::array::from_fn(|k| {
            std::array::from_fn(|l| {
                let mut hat = vec![C64::default(); grid.len()];
                for (idx, h) in hat.iter_mut().enumerate() {
                    let xi = grid.xi(idx);
                    let r2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
                    if r2 > 0.0 {
                        let im = C64::new(0.0, 1.0);
                        *h = im * (xi[i] * lie_hats[l][k][idx] - xi[k] * lie_hats[l][i][idx])
                            / r2;
                    }
                }
                hat
            })
        })
    });
    for j in 0..3 {
        let mut acc: [Vec<C64>; 3] =
            std::array::from_fn(|_| vec![C64::default(); p.big.len()]);
        for i in 0..3 {
            for k in 0..3 {
                // Q_ik[B_ik, A_j] = [d_i B_ik, d_k A_j] - [d_k B_ik, d_i A_j]
                let db = |ax: usize| -> [Vec<C64>; 3] {
                    std::array::from_fn(|l| {
                        let mut hat = b_hat[i][k][l].clone();
                        crate::spectral::apply_multiplier_hat(
                            MultiplierSpec::Partial(ax),
                            grid,
                            &mut hat,
                        );
                        p.lift_hat(&hat)
                    })
                };
                let pos = cross_lie(&db(i), &da_big[k][j]);
                let neg = cross_lie(&db(k), &da_big[i][j]);
                for l in 0..3 {
                    for (x, (a, b)) in acc[l].iter_mut().zip(pos[l].iter().zip(&neg[l])) {
                        *x += -0.5 * (a - b);
                    }
                }
            }
        }
        for l in 0..3 {
            rhs[j][l] = p.restrict(&acc[l]);
        }
    }
    relative_spectral_deviation(grid, &lhs, &rhs)
}

/// Check the gradient-interaction identity
/// `P[A_i, d_j A_i] = |nabla|^{-2} d^k Q_jk[A_i, A_i]`
/// (Leray projector `P`, zero modes excluded) for divergence-free `A`.
pub fn verify_identity_n3(adf: &LieVectorField) -> f64 {
    let grid = adf.grid;
    let p = Padded::new(grid);
    let lie_hats = df_mean_free_hats(adf);
    let a_big: [[Vec<C64>; 3]; 3] =
        std::array::from_fn(|j| std::array::from_fn(|l| p.lift_hat(&lie_hats[l][j])));
    let da_big: [[[Vec<C64>; 3]; 3]; 3] = std::array::from_fn(|ax| {
        std::array::from_fn(|j| {
            std::array::from_fn(|l| {
                let mut hat = lie_hats[l][j].clone();
                crate::spectral::apply_multiplier_hat(
                    MultiplierSpec::Partial(ax),
                    grid,
                    &mut hat,
                );
                p.lift_hat(&hat)
            })
        })
    });

    // lhs: V_j = sum_i [A_i, d_j A_i], then Leray projection per lie comp
    let mut v_hat: [[Vec<C64>; 3]; 3] =
        std::array::from_fn(|_| std::array::from_fn(|_| Vec::new()));
    for j in 0..3 {
        let mut acc: [Vec<C64>; 3] =
            std::array::from_fn(|_| vec![C64::default(); p.big.len()]);
        for i in 0..3 {
            let c = cross_lie(&a_big[i], &da_big[j][i]);
            for l in 0..3 {
                for (x, y) in acc[l].iter_mut().zip(&c[l]) {
                    *x += y;
                }
            }
        }
        for l in 0..3 {
            v_hat[j][l] = to_hat(grid, &p.restrict(&acc[l]));
        }
    }
    let mut lhs: [[Vec<C64>; 3]; 3] =
        std::array::from_fn(|_| std::array::from_fn(|_| Vec::new()));
    for l in 0..3 {
        let mut df = df_project_hat(grid, [&v_hat[0][l], &v_hat[1][l], &v_hat[2][l]]);
        for comp in df.iter_mut() {
            comp[0] = C64::default();
        }
        for j in 0..3 {
            lhs[j][l] = from_hat(grid, &df[j]);
        }
    }

    // rhs_j = |nabla|^{-2} sum_k d^k Q_jk[A_i, A_i]
    let mut rhs: [[Vec<C64>; 3]; 3] =
        std::array::from_fn(|_| std::array::from_fn(|_| Vec::new()));
    for j in 0..3 {
        let mut q_hat: [[Vec<C64>; 3]; 3] =
            std::array::from_fn(|_| std::array::from_fn(|_| Vec::new()));
        for k in 0..3 {
            let mut acc: [Vec<C64>; 3] =
                std::array::from_fn(|_| vec![C64::default(); p.big.len()]);
            for i in 0..3 {
                let pos = cross_lie(&da_big[j][i], &da_big[k][i]);
                let neg = cross_lie(&da_big[k][i], &da_big[j][i]);
                for l in 0..3 {
                    for (x, (a, b)) in acc[l].iter_mut().zip(pos[l].iter().zip(&neg[l])) {
                        *x += a - b;
                    }
                }
            }
            for l in 0..3 {
                q_hat[k][l] = to_hat(grid, &p.restrict(&acc[l]));
            }
        }
        for l in 0..3 {
            let mut hat = vec![C64::default(); grid.len()];
            for (idx, h) in hat.iter_mut().enumerate() {
                let xi = grid.xi(idx);
                let r2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
                if r2 > 0.0 {
                    let im = C64::new(0.0, 1.0);
                    let mut s = C64::default();
                    for k in 0..3 {
                        s += im * xi[k] * q_hat[k][l][idx];
                    }
                    *h = s / r2;
                }
            }
            rhs[j][l] = from_hat(grid, &hat);
        }
    }
    relative_spectral_deviation(grid, &lhs, &rhs)
}

fn angle(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let cn = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    cn.atan2(dot)
}

/// Angular bilinear form: frequency-side convolution of two traces weighted
/// by the angle between `sign1 * xi_1` and `sign2 * xi_2`.  Direct double sum
/// over nonzero space-time modes; a correctness oracle, desk scale only.
pub fn angular_bilinear(
    u: &SpaceTimeTrace,
    v: &SpaceTimeTrace,
    sign1: bool,
    sign2: bool,
) -> Result<SpaceTimeTrace, AnalysisError> {
    if u.grid != v.grid {
        return Err(AnalysisError::GridMismatch);
    }
    if u.m() != v.m() || (u.t_total - v.t_total).abs() > 1e-12 {
        return Err(AnalysisError::TraceMismatch);
    }
    let grid = u.grid;
    let total = u.m() * grid.len();
    if total > 1 << 18 {
        return Err(AnalysisError::TooLarge(total));
    }
    let big_m = u.m();
    let n = grid.n as i64;
    let collect = |t: &SpaceTimeTrace| -> Vec<(usize, usize, C64)> {
        let hat = t.space_time_hat(false);
        let mut out = Vec::new();
        for (k, slice) in hat.iter().enumerate() {
            for (idx, val) in slice.iter().enumerate() {
                if val.norm() > 0.0 {
                    out.push((k, idx, *val));
                }
            }
        }
        out
    };
    let modes_u = collect(u);
    let modes_v = collect(v);
    let s1 = if sign1 { 1.0 } else { -1.0 };
    let s2 = if sign2 { 1.0 } else { -1.0 };
    let mut out_hat = vec![vec![C64::default(); grid.len()]; big_m];
    let wrap = |x: i64| -> usize { (x.rem_euclid(n)) as usize };
    for &(k1, i1, a1) in &modes_u {
        let xi1 = grid.xi(i1);
        if xi1 == [0.0; 3] {
            continue; // angle undefined at the zero mode: weight 0
        }
        let k1v = [
            grid.k_signed(i1 / (grid.n * grid.n)),
            grid.k_signed((i1 / grid.n) % grid.n),
            grid.k_signed(i1 % grid.n),
        ];
        for &(k2, i2, a2) in &modes_v {
            let xi2 = grid.xi(i2);
            if xi2 == [0.0; 3] {
                continue;
            }
            let k2v = [
                grid.k_signed(i2 / (grid.n * grid.n)),
                grid.k_signed((i2 / grid.n) % grid.n),
                grid.k_signed(i2 % grid.n),
            ];
            let w = angle(
                [s1 * xi1[0], s1 * xi1[1], s1 * xi1[2]],
                [s2 * xi2[0], s2 * xi2[1], s2 * xi2[2]],
            )
            .abs();
            let kt = ((k1 + k2) % big_m) as usize;
            let target = wrap(k1v[0] + k2v[0]) * grid.n * grid.n
                + wrap(k1v[1] + k2v[1]) * grid.n
                + wrap(k1v[2] + k2v[2]);
            out_hat[kt][target] += w * a1 * a2;
        }
    }
    // back to physical snapshots: inverse time DFT then inverse space FFT
    let mut snapshots = vec![vec![C64::default(); grid.len()]; big_m];
    for (m, snap) in snapshots.iter_mut().enumerate() {
        let mut hat = vec![C64::default(); grid.len()];
        for (k, slice) in out_hat.iter().enumerate() {
            let phase = C64::from_polar(1.0, TAU * (k * m) as f64 / big_m as f64);
            for (h, v) in hat.iter_mut().zip(slice) {
                *h += phase * v;
            }
        }
        *snap = from_hat(grid, &hat);
    }
    SpaceTimeTrace::new(grid, u.t_total, snapshots)
}

/// Half-wave projection symbol `Pi(xi) = (I + xihat . alpha)/2` as a dense
/// matrix for a direction `xihat` (not necessarily unit; normalized inside).
pub fn dirac_projector_matrix(dir: [f64; 3]) -> nalgebra::Matrix4<C64> {
    let r = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    let mut m = nalgebra::Matrix4::<C64>::identity() * C64::new(0.5, 0.0);
    if r > 0.0 {
        for k in 0..3 {
            m += DIRAC.alpha[k + 1] * C64::new(0.5 * dir[k] / r, 0.0);
        }
    }
    m
}

#[derive(Debug, Clone, Copy)]
pub struct SpinorialScan {
    /// Sup of `|Pi(xi1) Pi(-xi2) z| / (|z| angle(xi1, xi2))` over samples.
    pub max_ratio: f64,
    /// Fitted slope of the operator norm versus angle for angles below 0.1.
    pub slope_near_zero: f64,
    /// Coefficient of determination of the through-origin fit.
    pub r_squared: f64,
}

/// Monte Carlo scan of the spinorial null bound
/// `|Pi(xi1) Pi(-xi2) z| <= |z| angle(xi1, xi2)`.
///
/// `max_ratio` comes from random `(xi1, xi2, z)` triples; the small-angle
/// slope is fitted on the operator norm (the sharp constant) over a
/// controlled-angle sweep, so the fit is deterministic given the seed.
pub fn spinorial_bound_scan(samples: usize, seed: u64) -> SpinorialScan {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal3 = |rng: &mut rand_chacha::ChaCha8Rng| -> [f64; 3] {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / r, v[1] / r, v[2] / r]
    };
    let mut max_ratio: f64 = 0.0;
    for _ in 0..samples {
        let xi1 = normal3(&mut rng);
        let xi2 = normal3(&mut rng);
        let th = angle(xi1, xi2);
        if th < 1e-10 {
            continue;
        }
        let z = nalgebra::Vector4::<C64>::from_fn(|_, _| {
            C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
        });
        let p1 = dirac_projector_matrix(xi1);
        let p2 = dirac_projector_matrix([-xi2[0], -xi2[1], -xi2[2]]);
        let num = (p1 * p2 * z).norm();
        max_ratio = max_ratio.max(num / (z.norm() * th));
    }
    // controlled small-angle sweep on the operator norm
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for t in 1..=100 {
        let th = 0.1 * t as f64 / 100.0;
        let xi1 = normal3(&mut rng);
        // orthonormal companion
        let probe = normal3(&mut rng);
        let dot = xi1[0] * probe[0] + xi1[1] * probe[1] + xi1[2] * probe[2];
        let mut perp = [probe[0] - dot * xi1[0], probe[1] - dot * xi1[1], probe[2] - dot * xi1[2]];
        let pr = (perp[0] * perp[0] + perp[1] * perp[1] + perp[2] * perp[2]).sqrt();
        for v in perp.iter_mut() {
            *v /= pr;
        }
        let xi2: [f64; 3] =
            std::array::from_fn(|k| th.cos() * xi1[k] + th.sin() * perp[k]);
        let p1 = dirac_projector_matrix(xi1);
        let p2 = dirac_projector_matrix([-xi2[0], -xi2[1], -xi2[2]]);
        let opnorm = (p1 * p2).svd(false, false).singular_values[0];
        xs.push(th);
        ys.push(opnorm);
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let slope = sxy / sxx;
    let ybar: f64 = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - slope * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - ybar).powi(2)).sum();
    SpinorialScan {
        max_ratio,
        slope_near_zero: slope,
        r_squared: 1.0 - ss_res / ss_tot,
    }
}

/// Snapshot history of a split-system run at a uniform stride.
#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub t_total: f64,
    pub acf: Vec<LieVectorField>,
    pub adf_plus: Vec<LieVectorField>,
    pub adf_minus: Vec<LieVectorField>,
    pub psi_plus: Vec<SpinorField>,
    pub psi_minus: Vec<SpinorField>,
}

impl RunTrace {
    pub fn push(&mut self, state: &crate::dynamics::SimulationState) {
        self.acf.push(state.acf.clone());
        self.adf_plus.push(state.adf_plus.clone());
        self.adf_minus.push(state.adf_minus.clone());
        self.psi_plus.push(state.psi_plus.clone());
        self.psi_minus.push(state.psi_minus.clone());
    }
}

#[derive(Debug, Clone)]
pub struct RegularityRow {
    pub field: &'static str,
    pub s: f64,
    pub b: f64,
    pub norm: f64,
}

fn vector_trace_norm(
    snapshots: &[LieVectorField],
    t_total: f64,
    spec: &XsbSpec,
) -> Result<f64, AnalysisError> {
    let grid = snapshots.first().ok_or(AnalysisError::TooFewSnapshots(0))?.grid;
    let mut acc = 0.0;
    for j in 0..3 {
        for l in 0..3 {
            let slices: Vec<Vec<C64>> =
                snapshots.iter().map(|f| f.comp[j][l].clone()).collect();
            let trace = SpaceTimeTrace::new(grid, t_total, slices)?;
            acc += xsb_norm(&trace, spec).value.powi(2);
        }
    }
    Ok(acc.sqrt())
}

fn spinor_trace_norm(
    snapshots: &[SpinorField],
    t_total: f64,
    spec: &XsbSpec,
) -> Result<f64, AnalysisError> {
    let grid = snapshots.first().ok_or(AnalysisError::TooFewSnapshots(0))?.grid;
    let mut acc = 0.0;
    for i in 0..2 {
        for sc in 0..4 {
            let slices: Vec<Vec<C64>> =
                snapshots.iter().map(|f| f.comp[i][sc].clone()).collect();
            let trace = SpaceTimeTrace::new(grid, t_total, slices)?;
            acc += xsb_norm(&trace, spec).value.powi(2);
        }
    }
    Ok(acc.sqrt())
}

/// Restriction-norm table for a completed run: `(s+1/4, 1/2+delta)` on the
/// zero-frequency flavor for the curl-free part, `(s, 3/4+delta)` on the
/// half-wave flavors for the divergence-free parts, `(l, 1/2+delta)` for the
/// spinor halves.  Report only; membership claims carry no computable bound.
pub fn regularity_report(
    run: &RunTrace,
    s: f64,
    l: f64,
    delta: f64,
) -> Result<Vec<RegularityRow>, AnalysisError> {
    let rows = vec![
        RegularityRow {
            field: "acf",
            s: s + 0.25,
            b: 0.5 + delta,
            norm: vector_trace_norm(
                &run.acf,
                run.t_total,
                &XsbSpec { s: s + 0.25, b: 0.5 + delta, flavor: XsbFlavor::TauZero },
            )?,
        },
        RegularityRow {
            field: "adf_plus",
            s,
            b: 0.75 + delta,
            norm: vector_trace_norm(
                &run.adf_plus,
                run.t_total,
                &XsbSpec { s, b: 0.75 + delta, flavor: XsbFlavor::Plus },
            )?,
        },
        RegularityRow {
            field: "adf_minus",
            s,
            b: 0.75 + delta,
            norm: vector_trace_norm(
                &run.adf_minus,
                run.t_total,
                &XsbSpec { s, b: 0.75 + delta, flavor: XsbFlavor::Minus },
            )?,
        },
        RegularityRow {
            field: "psi_plus",
            s: l,
            b: 0.5 + delta,
            norm: spinor_trace_norm(
                &run.psi_plus,
                run.t_total,
                &XsbSpec { s: l, b: 0.5 + delta, flavor: XsbFlavor::Plus },
            )?,
        },
        RegularityRow {
            field: "psi_minus",
            s: l,
            b: 0.5 + delta,
            norm: spinor_trace_norm(
                &run.psi_minus,
                run.t_total,
                &XsbSpec { s: l, b: 0.5 + delta, flavor: XsbFlavor::Minus },
            )?,
        },
    ];
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::random_small_data;
    use crate::liealg::Convention;

    fn plane_wave(grid: Grid, k: [i64; 3]) -> ScalarField {
        ScalarField::from_fn(grid, |x, y, z| {
            C64::from_polar(1.0, k[0] as f64 * x + k[1] as f64 * y + k[2] as f64 * z)
        })
    }

    #[test]
    fn qij_self_is_zero() {
        let grid = Grid::new(8, TAU);
        let u = plane_wave(grid, [1, 2, 0]);
        let q = qij_null_form(&u, &u, 0, 1);
        assert!(q.linf() < 1e-14);
    }

    #[test]
    fn qij_antisymmetric_in_indices() {
        let grid = Grid::new(8, TAU);
        let u = plane_wave(grid, [1, 0, 0]);
        let v = plane_wave(grid, [0, 2, 1]);
        let q1 = qij_null_form(&u, &v, 0, 2);
        let q2 = qij_null_form(&u, &v, 2, 0);
        for (a, b) in q1.data.iter().zip(&q2.data) {
            assert!((a + b).norm() < 1e-14);
        }
    }

    #[test]
    fn qij_plane_wave_symbol() {
        // Q_ij(e^{ix.k1}, e^{ix.k2}) = -(k1_i k2_j - k1_j k2_i) e^{ix.(k1+k2)}
        let grid = Grid::new(16, TAU);
        let (k1, k2) = ([1i64, 2, 0], [0i64, 1, 3]);
        let u = plane_wave(grid, k1);
        let v = plane_wave(grid, k2);
        let (i, j) = (0, 1);
        let q = qij_null_form(&u, &v, i, j);
        let coeff = -((k1[i] * k2[j] - k1[j] * k2[i]) as f64);
        let expect = plane_wave(grid, [k1[0] + k2[0], k1[1] + k2[1], k1[2] + k2[2]]);
        for (a, b) in q.data.iter().zip(&expect.data) {
            assert!((a - coeff * b).norm() < 1e-12);
        }
    }

    #[test]
    fn qij_parallel_frequencies_cancel() {
        let grid = Grid::new(16, TAU);
        let u = plane_wave(grid, [1, 1, 0]);
        let v = plane_wave(grid, [2, 2, 0]);
        let q = qij_null_form(&u, &v, 0, 1);
        assert!(q.linf() < 1e-13);
    }

    #[test]
    fn identity_50_trivial_and_abelian() {
        let grid = Grid::new(8, TAU);
        let zero = LieVectorField::zeros(grid);
        assert_eq!(verify_identity_50(&zero), 0.0);
        let d = random_small_data(grid, 0.9, 0.5, 1e-2, 61, true, Convention::Physics).unwrap();
        let (adf, _) = d.a0.hodge_split();
        assert_eq!(verify_identity_50(&adf), 0.0);
    }

    #[test]
    fn identity_50_random() {
        let grid = Grid::new(8, TAU);
        let d = random_small_data(grid, 0.9, 0.5, 1e-2, 67, false, Convention::Physics).unwrap();
        let (adf, _) = d.a0.hodge_split();
        let dev = verify_identity_50(&adf);
        assert!(dev <= 1e-10, "deviation {dev:.3e}");
    }

    #[test]
    fn identity_n3_trivial_and_random() {
        let grid = Grid::new(8, TAU);
        let zero = LieVectorField::zeros(grid);
        assert_eq!(verify_identity_n3(&zero), 0.0);
        let d = random_small_data(grid, 0.9, 0.5, 1e-2, 71, false, Convention::Physics).unwrap();
        let (adf, _) = d.a0.hodge_split();
        let dev = verify_identity_n3(&adf);
        assert!(dev <= 1e-10, "deviation {dev:.3e}");
    }

    #[test]
    fn identity_n3_two_mode_oracle() {
        // A = u e^{ix.eta} T_1 + v e^{ix.zeta} T_2 with eta.u = zeta.v = 0:
        // P[A_i, d_j A_i] at mode eta+zeta equals
        // (u.v) P(xi) i(zeta - eta) in the T_3 component.
        let grid = Grid::new(16, TAU);
        let eta = [1i64, 0, 0];
        let zeta = [0i64, 2, 0];
        let u = [0.0, 1.0, 1.0];
        let v = [1.0, 0.0, 1.0];
        let mut a = LieVectorField::zeros(grid);
        let we = plane_wave(grid, eta);
        let wz = plane_wave(grid, zeta);
        for j in 0..3 {
            for (idx, (pe, pz)) in we.data.iter().zip(&wz.data).enumerate() {
                a.comp[j][0][idx] = u[j] * pe;
                a.comp[j][1][idx] = v[j] * pz;
            }
        }
        let dev = verify_identity_n3(&a);
        assert!(dev <= 1e-12, "deviation {dev:.3e}");
        // independent symbol value for the lhs pipeline
        let xi = [1.0f64, 2.0, 0.0];
        let udotv: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        let w = [
            C64::new(0.0, (zeta[0] - eta[0]) as f64 * udotv),
            C64::new(0.0, (zeta[1] - eta[1]) as f64 * udotv),
            C64::new(0.0, (zeta[2] - eta[2]) as f64 * udotv),
        ];
        let xw = xi[0] * w[0] + xi[1] * w[1] + xi[2] * w[2];
        let r2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
        let expect: [C64; 3] = std::array::from_fn(|j| w[j] - xw * xi[j] / r2);
        // evaluate the lhs directly through the public pieces
        let p = Padded::new(grid);
        let mut vfield: [Vec<C64>; 3] = std::array::from_fn(|_| Vec::new());
        for j in 0..3 {
            let mut acc = vec![C64::default(); p.big.len()];
            for i in 0..3 {
                let ai: [Vec<C64>; 3] = std::array::from_fn(|l| p.lift(&a.comp[i][l]));
                let dji: [Vec<C64>; 3] = std::array::from_fn(|l| {
                    let mut hat = to_hat(grid, &a.comp[i][l]);
                    crate::spectral::apply_multiplier_hat(
                        MultiplierSpec::Partial(j),
                        grid,
                        &mut hat,
                    );
                    p.lift_hat(&hat)
                });
                let c = cross_lie(&ai, &dji);
                for (x, y) in acc.iter_mut().zip(&c[2]) {
                    *x += y;
                }
            }
            vfield[j] = to_hat(grid, &p.restrict(&acc));
        }
        let df = df_project_hat(grid, [&vfield[0], &vfield[1], &vfield[2]]);
        let mode = grid.index(1, 2, 0);
        for j in 0..3 {
            assert!((df[j][mode] - expect[j]).norm() < 1e-12);
        }
    }

    fn single_mode_trace(
        grid: Grid,
        big_m: usize,
        t_total: f64,
        k: [i64; 3],
        ktime: i64,
    ) -> SpaceTimeTrace {
        let base = plane_wave(grid, k);
        let snapshots: Vec<Vec<C64>> = (0..big_m)
            .map(|m| {
                let phase =
                    C64::from_polar(1.0, TAU * (ktime * m as i64) as f64 / big_m as f64);
                base.data.iter().map(|v| phase * v).collect()
            })
            .collect();
        SpaceTimeTrace::new(grid, t_total, snapshots).unwrap()
    }

    #[test]
    fn angular_bilinear_orthogonal_modes() {
        let grid = Grid::new(8, TAU);
        let u = single_mode_trace(grid, 8, 1.0, [1, 0, 0], 0);
        let v = single_mode_trace(grid, 8, 1.0, [0, 2, 0], 0);
        let out = angular_bilinear(&u, &v, true, true).unwrap();
        let hat = out.space_time_hat(false);
        let mode = grid.index(1, 2, 0);
        assert!((hat[0][mode].re - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        // everything else vanishes
        let total: f64 = hat.iter().flatten().map(|v| v.norm()).sum();
        assert!((total - std::f64::consts::FRAC_PI_2).abs() < 1e-10);
    }

    #[test]
    fn angular_bilinear_parallel_and_antipodal() {
        let grid = Grid::new(8, TAU);
        let u = single_mode_trace(grid, 8, 1.0, [1, 0, 0], 0);
        let v = single_mode_trace(grid, 8, 1.0, [2, 0, 0], 0);
        let out = angular_bilinear(&u, &v, true, true).unwrap();
        let hat = out.space_time_hat(false);
        let total: f64 = hat.iter().flatten().map(|v| v.norm()).sum();
        assert!(total < 1e-12, "parallel same-sign weight must vanish");
        let w = single_mode_trace(grid, 8, 1.0, [1, 0, 0], 0);
        let out2 = angular_bilinear(&u, &w, true, false).unwrap();
        let hat2 = out2.space_time_hat(false);
        let mode = grid.index(2, 0, 0);
        assert!((hat2[0][mode].re - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn angular_bilinear_swap_symmetry() {
        let grid = Grid::new(8, TAU);
        let u = single_mode_trace(grid, 8, 1.0, [1, 1, 0], 2);
        let v = single_mode_trace(grid, 8, 1.0, [0, 2, 1], 1);
        let a = angular_bilinear(&u, &v, true, false).unwrap();
        let b = angular_bilinear(&v, &u, false, true).unwrap();
        for (sa, sb) in a.snapshots.iter().zip(&b.snapshots) {
            for (x, y) in sa.iter().zip(sb) {
                assert!((x - y).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn angular_bilinear_cost_guard() {
        let grid = Grid::new(32, TAU);
        let zero = vec![vec![C64::default(); grid.len()]; 16];
        let t = SpaceTimeTrace::new(grid, 1.0, zero).unwrap();
        assert!(matches!(
            angular_bilinear(&t, &t, true, true),
            Err(AnalysisError::TooLarge(_))
        ));
    }

    #[test]
    fn spinorial_complementary_projections_annihilate() {
        let xi = [0.3, -0.7, 0.65];
        let p1 = dirac_projector_matrix(xi);
        let p2 = dirac_projector_matrix([-xi[0], -xi[1], -xi[2]]);
        let prod = p1 * p2;
        assert!(prod.norm() < 1e-14);
    }

    #[test]
    fn spinorial_antipodal_ratio() {
        // xi2 = -xi1: Pi(xi1)Pi(xi1) = Pi(xi1), angle pi: ratio <= 1/pi
        let xi = [1.0, 2.0, -0.5];
        let p = dirac_projector_matrix(xi);
        let opnorm = (p * p).svd(false, false).singular_values[0];
        assert!((opnorm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spinorial_scan_bound_holds() {
        let scan = spinorial_bound_scan(10_000, 7);
        assert!(scan.max_ratio <= 1.0 + 1e-6, "max ratio {}", scan.max_ratio);
        assert!(
            (scan.slope_near_zero - 0.5).abs() < 0.05,
            "slope {}",
            scan.slope_near_zero
        );
        assert!(scan.r_squared >= 0.999, "r^2 {}", scan.r_squared);
    }

    #[test]
    fn xsb_zero_trace() {
        let grid = Grid::new(8, TAU);
        let zero = vec![vec![C64::default(); grid.len()]; 8];
        let t = SpaceTimeTrace::new(grid, 1.0, zero).unwrap();
        let n = xsb_norm(&t, &XsbSpec { s: 0.9, b: 0.75, flavor: XsbFlavor::Plus });
        assert_eq!(n.value, 0.0);
        assert!(n.window_factor > 0.0);
    }

    #[test]
    fn xsb_single_mode_b_zero() {
        // b = 0: modulation weight 1, norm = <xi0>^s * window factor exactly
        let grid = Grid::new(8, TAU);
        let t = single_mode_trace(grid, 16, 1.0, [2, 1, 0], 3);
        let s = 0.9;
        for flavor in [XsbFlavor::Plus, XsbFlavor::Minus, XsbFlavor::Wave, XsbFlavor::TauZero] {
            let n = xsb_norm(&t, &XsbSpec { s, b: 0.0, flavor });
            let bracket = 6.0f64.sqrt().powf(s);
            assert!(
                (n.value - bracket * n.window_factor).abs() < 1e-10 * n.value,
                "flavor {flavor:?}"
            );
        }
    }

    #[test]
    fn xsb_constant_in_time_tau_zero_oracle() {
        // Hann spectrum: 1/2 at k=0, -1/4 at k = +-1; closed-form tau=0 norm
        let grid = Grid::new(8, TAU);
        let big_m = 16;
        let t_total = 1.0;
        let t = single_mode_trace(grid, big_m, t_total, [2, 0, 0], 0);
        let (s, b) = (0.9, 0.75);
        let n = xsb_norm(&t, &XsbSpec { s, b, flavor: XsbFlavor::TauZero });
        let vol = t_total * grid.l.powi(3);
        let tau1 = TAU / t_total;
        let sum = 0.25 + 2.0 * (1.0 / 16.0) * (1.0 + tau1 * tau1).powf(b);
        let expect = (1.0f64 + 4.0).sqrt().powf(s) * (vol * sum).sqrt();
        assert!((n.value - expect).abs() < 1e-10 * expect, "{} vs {expect}", n.value);
    }

    #[test]
    fn xsb_free_half_wave_concentrates() {
        // e^{i(x.xi0 - |xi0| t)} on T = 2pi: tau lands on the grid; the plus
        // flavor sees near-zero modulation while tau=0 pays <|xi0|>^b.
        let grid = Grid::new(16, TAU);
        let big_m = 32;
        let t = single_mode_trace(grid, big_m, TAU, [4, 0, 0], -4);
        let spec_plus = XsbSpec { s: 0.0, b: 0.75, flavor: XsbFlavor::Plus };
        let spec_tz = XsbSpec { s: 0.0, b: 0.75, flavor: XsbFlavor::TauZero };
        let np = xsb_norm(&t, &spec_plus).value;
        let nz = xsb_norm(&t, &spec_tz).value;
        assert!(nz / np >= 2.0, "ratio {}", nz / np);
    }

    #[test]
    fn regularity_report_vacuum() {
        let grid = Grid::new(8, TAU);
        let mut run = RunTrace { t_total: 1.0, ..Default::default() };
        for _ in 0..8 {
            run.acf.push(LieVectorField::zeros(grid));
            run.adf_plus.push(LieVectorField::zeros(grid));
            run.adf_minus.push(LieVectorField::zeros(grid));
            run.psi_plus.push(SpinorField::zeros(grid));
            run.psi_minus.push(SpinorField::zeros(grid));
        }
        let rows = regularity_report(&run, 0.9, 0.5, 0.01).unwrap();
        assert_eq!(rows.len(), 5);
        for row in rows {
            assert_eq!(row.norm, 0.0);
        }
    }
}
