//! Fourier-multiplier layer: 3-d transforms on the periodic box, fractional
//! operators, Riesz transforms, Hodge projections, the Dirac half-wave
//! projections, and dealiased pointwise products.
//!
//! Convention: `fhat(xi) = N^{-3} sum_x f(x) e^{-i xi.x}`, so coefficients are
//! grid-size independent and zero-padding between grids is a plain copy.
//! Zero-mode conventions: `R_j`, `R^j_pm` and `|nabla|^{-a}` send the mean to
//! zero, the curl-free projector sends it to zero (the df part carries the
//! mean), and `Pi_+(0) = I`, `Pi_-(0) = 0` so the projections still resolve
//! the identity.

use once_cell::sync::Lazy;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::C64;

/// Uniform periodic grid: `n` points per axis on a box of side `l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub n: usize,
    pub l: f64,
}

impl Grid {
    pub fn new(n: usize, l: f64) -> Self {
        assert!(n >= 8 && n.is_power_of_two(), "grid size must be a power of two >= 8");
        assert!(l > 0.0);
        Self { n, l }
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Signed integer frequency for axis index `i` (in `-n/2 .. n/2-1`).
    #[inline]
    pub fn k_signed(&self, i: usize) -> i64 {
        let n = self.n as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    /// Physical frequency `xi = (2 pi / l) k` for axis index `i`.
    #[inline]
    pub fn xi_axis(&self, i: usize) -> f64 {
        (2.0 * std::f64::consts::PI / self.l) * self.k_signed(i) as f64
    }

    /// Frequency vector at linear index (x-fastest layout).
    #[inline]
    pub fn xi(&self, idx: usize) -> [f64; 3] {
        let n = self.n;
        let ix = idx % n;
        let iy = (idx / n) % n;
        let iz = idx / (n * n);
        [self.xi_axis(ix), self.xi_axis(iy), self.xi_axis(iz)]
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.n * (iy + self.n * iz)
    }

    /// Grid spacing.
    pub fn dx(&self) -> f64 {
        self.l / self.n as f64
    }

    /// Cell volume, the quadrature weight of the discrete `L^2` norm.
    pub fn dv(&self) -> f64 {
        self.dx().powi(3)
    }
}

struct PlanPair {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

static PLAN_CACHE: Lazy<Mutex<HashMap<usize, Arc<PlanPair>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

fn plans(n: usize) -> Arc<PlanPair> {
    let mut cache = PLAN_CACHE.lock().unwrap();
    cache
        .entry(n)
        .or_insert_with(|| {
            let mut p = FftPlanner::new();
            Arc::new(PlanPair {
                fwd: p.plan_fft(n, FftDirection::Forward),
                inv: p.plan_fft(n, FftDirection::Inverse),
            })
        })
        .clone()
}

fn fft_axes(grid: Grid, data: &mut [C64], dir: FftDirection) {
    let n = grid.n;
    let pair = plans(n);
    let fft = match dir {
        FftDirection::Forward => &pair.fwd,
        FftDirection::Inverse => &pair.inv,
    };
    let mut scratch = vec![C64::default(); fft.get_inplace_scratch_len()];
    // axis 0: all n^2 contiguous lines in one batched call
    fft.process_with_scratch(data, &mut scratch);
    // axes 1 and 2: transpose each plane into a contiguous buffer, run one
    // batched call of n lines, scatter back
    let mut buf = vec![C64::default(); n * n];
    for iz in 0..n {
        let plane = &mut data[iz * n * n..(iz + 1) * n * n];
        for (iy, row) in plane.chunks_exact(n).enumerate() {
            for (ix, v) in row.iter().enumerate() {
                buf[ix * n + iy] = *v;
            }
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (iy, row) in plane.chunks_exact_mut(n).enumerate() {
            for (ix, v) in row.iter_mut().enumerate() {
                *v = buf[ix * n + iy];
            }
        }
    }
    for iy in 0..n {
        for iz in 0..n {
            let row = &data[n * iy + n * n * iz..n * iy + n * n * iz + n];
            for (ix, v) in row.iter().enumerate() {
                buf[ix * n + iz] = *v;
            }
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for iz in 0..n {
            let row = &mut data[n * iy + n * n * iz..n * iy + n * n * iz + n];
            for (ix, v) in row.iter_mut().enumerate() {
                *v = buf[ix * n + iz];
            }
        }
    }
}

/// In-place forward transform with the `N^{-3}` normalization.
pub fn forward(grid: Grid, data: &mut [C64]) {
    debug_assert_eq!(data.len(), grid.len());
    fft_axes(grid, data, FftDirection::Forward);
    let scale = 1.0 / grid.len() as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// In-place inverse transform (unnormalized synthesis sum).
pub fn inverse(grid: Grid, data: &mut [C64]) {
    debug_assert_eq!(data.len(), grid.len());
    fft_axes(grid, data, FftDirection::Inverse);
}

pub fn to_hat(grid: Grid, data: &[C64]) -> Vec<C64> {
    let mut out = data.to_vec();
    forward(grid, &mut out);
    out
}

pub fn from_hat(grid: Grid, hat: &[C64]) -> Vec<C64> {
    let mut out = hat.to_vec();
    inverse(grid, &mut out);
    out
}

/// A complex scalar lattice function in physical space.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub data: Vec<C64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, data: vec![C64::default(); grid.len()] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64, f64) -> C64) -> Self {
        let n = grid.n;
        let dx = grid.dx();
        let mut data = vec![C64::default(); grid.len()];
        for iz in 0..n {
            for iy in 0..n {
                for ix in 0..n {
                    data[grid.index(ix, iy, iz)] =
                        f(ix as f64 * dx, iy as f64 * dx, iz as f64 * dx);
                }
            }
        }
        Self { grid, data }
    }

    pub fn hat(&self) -> Vec<C64> {
        to_hat(self.grid, &self.data)
    }

    pub fn linf(&self) -> f64 {
        linf(&self.data)
    }

    pub fn l2(&self) -> f64 {
        l2_phys(self.grid, &self.data)
    }
}

pub fn linf(data: &[C64]) -> f64 {
    data.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Discrete `L^2` norm in physical space, `(dv sum |f|^2)^{1/2}`.
pub fn l2_phys(grid: Grid, data: &[C64]) -> f64 {
    (data.iter().map(|v| v.norm_sqr()).sum::<f64>() * grid.dv()).sqrt()
}

/// `H^s` norm from spectral coefficients, `(L^3 sum <xi>^{2s} |fhat|^2)^{1/2}`.
pub fn sobolev_hat(grid: Grid, hat: &[C64], s: f64) -> f64 {
    let vol = grid.l.powi(3);
    let mut acc = 0.0;
    for (idx, v) in hat.iter().enumerate() {
        let xi = grid.xi(idx);
        let w = 1.0 + xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
        acc += w.powf(s) * v.norm_sqr();
    }
    (vol * acc).sqrt()
}

/// Fourier multiplier symbols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MultiplierSpec {
    /// `|nabla|^a`; zero mode to 0 for any `a != 0`.
    GradPow(f64),
    /// `<nabla>^a` with `<xi> = (1+|xi|^2)^{1/2}`.
    BesselPow(f64),
    /// Riesz transform `R_j = partial_j / |nabla|`, symbol `i xi_j / |xi|`.
    Riesz(usize),
    /// Modified Riesz `R^j_pm = -+ partial_j / (i |nabla|)`, symbol `-+ xi_j/|xi|`.
    ModifiedRiesz { j: usize, plus: bool },
    /// Spectral derivative `partial_j`, symbol `i xi_j`.
    Partial(usize),
}

impl MultiplierSpec {
    pub fn symbol(&self, xi: [f64; 3]) -> C64 {
        let r2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
        match *self {
            MultiplierSpec::GradPow(a) => {
                if r2 == 0.0 {
                    C64::new(0.0, 0.0)
                } else {
                    C64::new(r2.sqrt().powf(a), 0.0)
                }
            }
            MultiplierSpec::BesselPow(a) => C64::new((1.0 + r2).powf(a / 2.0), 0.0),
            MultiplierSpec::Riesz(j) => {
                if r2 == 0.0 {
                    C64::new(0.0, 0.0)
                } else {
                    C64::new(0.0, xi[j] / r2.sqrt())
                }
            }
            MultiplierSpec::ModifiedRiesz { j, plus } => {
                if r2 == 0.0 {
                    C64::new(0.0, 0.0)
                } else {
                    let s = if plus { -1.0 } else { 1.0 };
                    C64::new(s * xi[j] / r2.sqrt(), 0.0)
                }
            }
            MultiplierSpec::Partial(j) => C64::new(0.0, xi[j]),
        }
    }
}

/// Apply a multiplier to spectral coefficients in place.
pub fn apply_multiplier_hat(spec: MultiplierSpec, grid: Grid, hat: &mut [C64]) {
    for (idx, v) in hat.iter_mut().enumerate() {
        *v *= spec.symbol(grid.xi(idx));
    }
}

/// Apply a multiplier to a physical-space field.
pub fn apply_multiplier(spec: MultiplierSpec, field: &ScalarField) -> ScalarField {
    let mut hat = field.hat();
    apply_multiplier_hat(spec, field.grid, &mut hat);
    ScalarField { grid: field.grid, data: from_hat(field.grid, &hat) }
}

/// Divergence of a 3-component spectral vector (per Lie coefficient caller).
pub fn divergence_hat(grid: Grid, hat: [&[C64]; 3]) -> Vec<C64> {
    let mut out = vec![C64::default(); grid.len()];
    for idx in 0..grid.len() {
        let xi = grid.xi(idx);
        for j in 0..3 {
            out[idx] += C64::new(0.0, xi[j]) * hat[j][idx];
        }
    }
    out
}

/// Curl of a 3-component spectral vector.
pub fn curl_hat(grid: Grid, hat: [&[C64]; 3]) -> [Vec<C64>; 3] {
    let mut out = [
        vec![C64::default(); grid.len()],
        vec![C64::default(); grid.len()],
        vec![C64::default(); grid.len()],
    ];
    for idx in 0..grid.len() {
        let xi = grid.xi(idx);
        let i = C64::new(0.0, 1.0);
        out[0][idx] = i * (xi[1] * hat[2][idx] - xi[2] * hat[1][idx]);
        out[1][idx] = i * (xi[2] * hat[0][idx] - xi[0] * hat[2][idx]);
        out[2][idx] = i * (xi[0] * hat[1][idx] - xi[1] * hat[0][idx]);
    }
    out
}

/// Hodge split in spectral space: returns `(df, cf)` with `df + cf` equal to
/// the input exactly; the zero mode goes to the df part.
pub fn hodge_split_hat(grid: Grid, hat: [&[C64]; 3]) -> ([Vec<C64>; 3], [Vec<C64>; 3]) {
    let len = grid.len();
    let mut df = [
        vec![C64::default(); len],
        vec![C64::default(); len],
        vec![C64::default(); len],
    ];
    let mut cf = [
        vec![C64::default(); len],
        vec![C64::default(); len],
        vec![C64::default(); len],
    ];
    for idx in 0..len {
        let xi = grid.xi(idx);
        let r2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
        if r2 == 0.0 {
            for j in 0..3 {
                df[j][idx] = hat[j][idx];
            }
            continue;
        }
        let mut dot = C64::default();
        for k in 0..3 {
            dot += C64::new(xi[k], 0.0) * hat[k][idx];
        }
        for j in 0..3 {
            let c = dot * C64::new(xi[j] / r2, 0.0);
            cf[j][idx] = c;
            df[j][idx] = hat[j][idx] - c;
        }
    }
    (df, cf)
}

/// The curl-free projector alone (spectral in/out).
pub fn cf_project_hat(grid: Grid, hat: [&[C64]; 3]) -> [Vec<C64>; 3] {
    hodge_split_hat(grid, hat).1
}

/// The Leray projector `P` (divergence-free part, spectral in/out).
pub fn df_project_hat(grid: Grid, hat: [&[C64]; 3]) -> [Vec<C64>; 3] {
    hodge_split_hat(grid, hat).0
}

/// Half-wave Dirac projector `Pi(+-xi) = (I +- xi_j alpha^j / |xi|)/2`,
/// applied per frequency to the four spinor components of one color.
#[derive(Debug, Clone, Copy)]
pub struct DiracProjector {
    pub plus: bool,
}

impl DiracProjector {
    /// Apply in spectral space, in place.
    pub fn apply_hat(&self, grid: Grid, comps: &mut [Vec<C64>; 4]) {
        let sgn = if self.plus { 1.0 } else { -1.0 };
        for idx in 0..grid.len() {
            let xi = grid.xi(idx);
            let r = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
            if r == 0.0 {
                // Pi_+(0) = I, Pi_-(0) = 0
                if !self.plus {
                    for c in comps.iter_mut() {
                        c[idx] = C64::default();
                    }
                }
                continue;
            }
            let s = [xi[0] / r * sgn, xi[1] / r * sgn, xi[2] / r * sgn];
            let (u0, u1, u2, u3) = (comps[0][idx], comps[1][idx], comps[2][idx], comps[3][idx]);
            // (sigma.s) v for v = (a, b):
            //   (s3 a + (s1 - i s2) b, (s1 + i s2) a - s3 b)
            let sm = C64::new(s[0], -s[1]);
            let sp = C64::new(s[0], s[1]);
            let s3 = C64::new(s[2], 0.0);
            // alpha.s u = (sigma.s lower, sigma.s upper)
            let v0 = s3 * u2 + sm * u3;
            let v1 = sp * u2 - s3 * u3;
            let v2 = s3 * u0 + sm * u1;
            let v3 = sp * u0 - s3 * u1;
            comps[0][idx] = (u0 + v0) * 0.5;
            comps[1][idx] = (u1 + v1) * 0.5;
            comps[2][idx] = (u2 + v2) * 0.5;
            comps[3][idx] = (u3 + v3) * 0.5;
        }
    }

    /// Apply to a physical-space 4-component block.
    pub fn apply(&self, grid: Grid, comps: &mut [Vec<C64>; 4]) {
        for c in comps.iter_mut() {
            forward(grid, c);
        }
        self.apply_hat(grid, comps);
        for c in comps.iter_mut() {
            inverse(grid, c);
        }
    }
}

pub fn dirac_project_hat(grid: Grid, plus: bool, comps: &mut [Vec<C64>; 4]) {
    DiracProjector { plus }.apply_hat(grid, comps);
}

/// Dealiasing engine: 2x zero-padding, exact through cubic products.
///
/// Sources are padded once to the double grid, pointwise algebra runs there,
/// and accumulated results are truncated back in a single pass.
#[derive(Debug, Clone, Copy)]
pub struct Padded {
    pub small: Grid,
    pub big: Grid,
}

impl Padded {
    pub fn new(small: Grid) -> Self {
        Self { small, big: Grid::new(2 * small.n, small.l) }
    }

    #[inline]
    fn big_axis(&self, i: usize) -> usize {
        let k = self.small.k_signed(i);
        if k >= 0 {
            k as usize
        } else {
            (self.big.n as i64 + k) as usize
        }
    }

    /// Embed small-grid spectral coefficients into the double grid.
    pub fn pad_hat(&self, hat: &[C64]) -> Vec<C64> {
        let n = self.small.n;
        let mut out = vec![C64::default(); self.big.len()];
        for iz in 0..n {
            let bz = self.big_axis(iz);
            for iy in 0..n {
                let by = self.big_axis(iy);
                for ix in 0..n {
                    out[self.big.index(self.big_axis(ix), by, bz)] =
                        hat[self.small.index(ix, iy, iz)];
                }
            }
        }
        out
    }

    /// Truncate double-grid spectral coefficients back to the small grid.
    ///
    /// The Nyquist planes `k_j = -n/2` are zeroed: the retained band is
    /// asymmetric, and keeping `-n/2` without its `+n/2` partner would break
    /// the conjugate symmetry of products of real fields.
    pub fn unpad_hat(&self, hat_big: &[C64]) -> Vec<C64> {
        let n = self.small.n;
        let nyq = -(n as i64) / 2;
        let mut out = vec![C64::default(); self.small.len()];
        for iz in 0..n {
            if self.small.k_signed(iz) == nyq {
                continue;
            }
            let bz = self.big_axis(iz);
            for iy in 0..n {
                if self.small.k_signed(iy) == nyq {
                    continue;
                }
                let by = self.big_axis(iy);
                for ix in 0..n {
                    if self.small.k_signed(ix) == nyq {
                        continue;
                    }
                    out[self.small.index(ix, iy, iz)] =
                        hat_big[self.big.index(self.big_axis(ix), by, bz)];
                }
            }
        }
        out
    }

    /// Physical small-grid field to physical double-grid field.
    pub fn lift(&self, phys: &[C64]) -> Vec<C64> {
        let hat = to_hat(self.small, phys);
        self.lift_hat(&hat)
    }

    /// Spectral small-grid field to physical double-grid field.
    pub fn lift_hat(&self, hat: &[C64]) -> Vec<C64> {
        let mut big = self.pad_hat(hat);
        inverse(self.big, &mut big);
        big
    }

    /// Physical double-grid field back to physical small-grid field.
    pub fn restrict(&self, phys_big: &[C64]) -> Vec<C64> {
        let hat = self.restrict_hat(phys_big);
        from_hat(self.small, &hat)
    }

    /// Physical double-grid field back to small-grid spectral coefficients.
    pub fn restrict_hat(&self, phys_big: &[C64]) -> Vec<C64> {
        let hat_big = to_hat(self.big, phys_big);
        self.unpad_hat(&hat_big)
    }
}

/// Zero all modes touching a Nyquist plane `k_j = -n/2`, in place.
///
/// Fields kept free of Nyquist content stay exactly real under the
/// dealiased product pipeline.
pub fn zero_nyquist(grid: Grid, hat: &mut [C64]) {
    let n = grid.n;
    let nyq = -(n as i64) / 2;
    for iz in 0..n {
        for iy in 0..n {
            for ix in 0..n {
                if grid.k_signed(ix) == nyq
                    || grid.k_signed(iy) == nyq
                    || grid.k_signed(iz) == nyq
                {
                    hat[grid.index(ix, iy, iz)] = C64::default();
                }
            }
        }
    }
}

/// Alias-free pointwise product of two band-limited fields.
pub fn dealiased_product(grid: Grid, f: &[C64], g: &[C64]) -> Vec<C64> {
    let p = Padded::new(grid);
    let fb = p.lift(f);
    let gb = p.lift(g);
    let prod: Vec<C64> = fb.iter().zip(&gb).map(|(a, b)| a * b).collect();
    p.restrict(&prod)
}

/// Alias-free pointwise triple product.
pub fn dealiased_triple(grid: Grid, f: &[C64], g: &[C64], h: &[C64]) -> Vec<C64> {
    let p = Padded::new(grid);
    let fb = p.lift(f);
    let gb = p.lift(g);
    let hb = p.lift(h);
    let prod: Vec<C64> = fb
        .iter()
        .zip(&gb)
        .zip(&hb)
        .map(|((a, b), c)| a * b * c)
        .collect();
    p.restrict(&prod)
}
