//! Interaction kernels, their gridded evaluation, and Littlewood–Paley block norms.
//!
//! Singular kernels are written as a direction times a radial profile,
//! `K(x) = e(x) φ(|x|)`, with `e(x) = x/|x|` (gradient mode) or
//! `x^⊥/|x|` (Biot–Savart). Inside the ball `|x| < ε` the profile is replaced
//! by a polynomial in `s = |x|/ε` that matches `φ`, `φ'` and `φ''` at `ε`.
//! Directional kernels use `s³, s⁴, s⁵` so the field stays C² through the
//! origin; scalar radial kernels (d = 1 only) use `1, s², s³`.
//!
//! The Biot–Savart kernel carries the `1/(2π)` prefactor,
//! `K(x) = x^⊥ / (2π|x|²)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::fft::{signed_bin, NdFft};
use crate::grid::{GriddedField, SpatialGrid, MAX_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// `x |x|^{σ-1}`: vector valued, odd.
    Gradient,
    /// `|x|^σ`: scalar, even; only in d = 1.
    Radial,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    PowerLaw { sigma: f64, mode: Mode },
    BiotSavart,
    /// Gaussian of standard deviation ε with unit mass.
    MollifiedDirac,
    /// Profile `r^{-2p} - 2 r^{-p}`.
    LennardJones { p: f64, mode: Mode },
    /// `K(x) = A x`, row-major `d × d`.
    Linear { matrix: Vec<f64> },
    Zero,
    Custom { table: GriddedField },
}

impl Family {
    fn is_singular(&self) -> bool {
        matches!(
            self,
            Family::PowerLaw { .. } | Family::BiotSavart | Family::MollifiedDirac | Family::LennardJones { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Direction {
    Radial,
    Perp,
    Scalar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    family: Family,
    epsilon: f64,
    dim: usize,
    direction: Direction,
    // polynomial coefficients of the blend in s = r/ε
    blend: [f64; 3],
}

impl Kernel {
    pub fn new(family: Family, epsilon: f64, dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return invalid(format!("kernel dimension must be in 1..={MAX_DIM}, got {dim}"));
        }
        if family.is_singular() && !(epsilon.is_finite() && epsilon > 0.0) {
            return invalid(format!("singular kernels need eps > 0, got {epsilon}"));
        }
        let direction = match &family {
            Family::PowerLaw { sigma, mode } | Family::LennardJones { p: sigma, mode } => {
                if !sigma.is_finite() {
                    return invalid("kernel parameter must be finite");
                }
                if let Family::LennardJones { p, .. } = &family {
                    if *p <= 0.0 {
                        return invalid(format!("Lennard-Jones exponent must be positive, got {p}"));
                    }
                }
                match mode {
                    Mode::Gradient => Direction::Radial,
                    Mode::Radial if dim == 1 => Direction::Scalar,
                    Mode::Radial => return invalid("radial (scalar) mode is only available in d = 1"),
                }
            }
            Family::BiotSavart => {
                if dim != 2 {
                    return invalid("biot_savart requires d = 2");
                }
                Direction::Perp
            }
            Family::MollifiedDirac => {
                if dim != 1 {
                    return invalid("the mollified Dirac kernel is scalar and needs d = 1");
                }
                Direction::Scalar
            }
            Family::Linear { matrix } => {
                if matrix.len() != dim * dim {
                    return invalid(format!("linear kernel needs {} matrix entries, got {}", dim * dim, matrix.len()));
                }
                Direction::Scalar
            }
            Family::Zero => Direction::Scalar,
            Family::Custom { table } => {
                if table.grid.dim() != dim || table.components != dim {
                    return Err(Error::GridMismatch("custom kernel table must have d components on a d-dimensional grid".into()));
                }
                Direction::Scalar
            }
        };
        let mut kernel = Self {
            family,
            epsilon,
            dim,
            direction,
            blend: [0.0; 3],
        };
        if matches!(kernel.family, Family::PowerLaw { .. } | Family::BiotSavart | Family::LennardJones { .. }) {
            let (v, v1, v2) = kernel.profile(epsilon);
            let e = epsilon;
            kernel.blend = match direction {
                Direction::Scalar => blend_even(v, e * v1, e * e * v2),
                _ => blend_odd(v, e * v1, e * e * v2),
            };
        }
        Ok(kernel)
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(Family::Zero, 0.0, dim).expect("zero kernel is always valid")
    }

    pub fn power_law(sigma: f64, epsilon: f64, dim: usize) -> Result<Self> {
        Self::new(Family::PowerLaw { sigma, mode: Mode::Gradient }, epsilon, dim)
    }

    pub fn linear(matrix: Vec<f64>, dim: usize) -> Result<Self> {
        Self::new(Family::Linear { matrix }, 0.0, dim)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of output components (always `d`).
    pub fn components(&self) -> usize {
        self.dim
    }

    /// Homogeneity order of the singular part, if any.
    pub fn sigma(&self) -> Option<f64> {
        match &self.family {
            Family::PowerLaw { sigma, .. } => Some(*sigma),
            Family::BiotSavart => Some(-1.0),
            Family::MollifiedDirac => Some(-(self.dim as f64)),
            Family::LennardJones { p, .. } => Some(-2.0 * p),
            Family::Linear { .. } => Some(1.0),
            Family::Zero | Family::Custom { .. } => None,
        }
    }

    /// `K(-x) = -K(x)`.
    pub fn is_odd(&self) -> bool {
        match &self.family {
            Family::PowerLaw { mode, .. } | Family::LennardJones { mode, .. } => *mode == Mode::Gradient,
            Family::BiotSavart | Family::Linear { .. } | Family::Zero => true,
            Family::MollifiedDirac | Family::Custom { .. } => false,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.family, Family::Zero)
    }

    /// Radial profile `(φ, φ', φ'')` at `r > 0`.
    fn profile(&self, r: f64) -> (f64, f64, f64) {
        match &self.family {
            Family::PowerLaw { sigma, .. } => {
                let s = *sigma;
                let v = r.powf(s);
                (v, s * v / r, s * (s - 1.0) * v / (r * r))
            }
            Family::BiotSavart => {
                let c = 1.0 / (2.0 * PI);
                (c / r, -c / (r * r), 2.0 * c / (r * r * r))
            }
            Family::LennardJones { p, .. } => {
                let a = r.powf(-2.0 * p);
                let b = r.powf(-p);
                let v = a - 2.0 * b;
                let v1 = (-2.0 * p * a + 2.0 * p * b) / r;
                let v2 = (2.0 * p * (2.0 * p + 1.0) * a - 2.0 * p * (p + 1.0) * b) / (r * r);
                (v, v1, v2)
            }
            _ => unreachable!("profile only exists for radial families"),
        }
    }

    fn mollified_profile(&self, r: f64) -> f64 {
        if r >= self.epsilon {
            return self.profile(r).0;
        }
        let s = r / self.epsilon;
        let [a, b, c] = self.blend;
        match self.direction {
            Direction::Scalar => a + s * s * (b + c * s),
            _ => s * s * s * (a + s * (b + c * s)),
        }
    }

    /// Closed-form value at `x` (mollified inside the ε-ball).
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match &self.family {
            Family::Zero => out[..d].iter_mut().for_each(|v| *v = 0.0),
            Family::Linear { matrix } => {
                for i in 0..d {
                    out[i] = (0..d).map(|j| matrix[i * d + j] * x[j]).sum();
                }
            }
            Family::Custom { table } => {
                table.interpolate(x, out);
            }
            Family::MollifiedDirac => {
                let e = self.epsilon;
                out[0] = (-0.5 * (x[0] / e).powi(2)).exp() / (e * (2.0 * PI).sqrt());
            }
            _ => {
                let r = crate::stats::norm(&x[..d]);
                let phi = self.mollified_profile(r);
                match self.direction {
                    Direction::Scalar => out[0] = phi,
                    Direction::Radial => {
                        if r == 0.0 {
                            out[..d].iter_mut().for_each(|v| *v = 0.0);
                        } else {
                            let f = phi / r;
                            for a in 0..d {
                                out[a] = x[a] * f;
                            }
                        }
                    }
                    Direction::Perp => {
                        if r == 0.0 {
                            out[0] = 0.0;
                            out[1] = 0.0;
                        } else {
                            let f = phi / r;
                            out[0] = -x[1] * f;
                            out[1] = x[0] * f;
                        }
                    }
                }
            }
        }
    }

    /// Analytic Jacobian `∂K_i/∂x_j`, row-major; available for smooth families.
    pub fn jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.dim;
        match &self.family {
            Family::Zero => out[..d * d].iter_mut().for_each(|v| *v = 0.0),
            Family::Linear { matrix } => out[..d * d].copy_from_slice(matrix),
            Family::MollifiedDirac => {
                let mut v = [0.0];
                self.eval(x, &mut v);
                out[0] = -x[0] / (self.epsilon * self.epsilon) * v[0];
            }
            _ => return invalid("analytic Jacobian is only available for zero, linear and Dirac kernels"),
        }
        Ok(())
    }

    /// Sample the kernel at the nodes of `grid`, checking that ε is resolved (`h ≤ ε/2`).
    pub fn evaluate_on_grid(&self, grid: &SpatialGrid) -> Result<GriddedField> {
        evaluate_on_grid(self, grid)
    }
}

fn blend_even(v: f64, v1: f64, v2: f64) -> [f64; 3] {
    // a + b s² + c s³
    let c = (v2 - v1) / 3.0;
    let b = (v1 - 3.0 * c) / 2.0;
    [v - b - c, b, c]
}

fn blend_odd(v: f64, v1: f64, v2: f64) -> [f64; 3] {
    // a s³ + b s⁴ + c s⁵: rows (1,1,1), (3,4,5), (6,12,20)
    let m = [[1.0, 1.0, 1.0], [3.0, 4.0, 5.0], [6.0, 12.0, 20.0]];
    let rhs = [v, v1, v2];
    let det3 = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let det = det3(&m);
    let mut out = [0.0; 3];
    for (col, o) in out.iter_mut().enumerate() {
        let mut mm = m;
        for row in 0..3 {
            mm[row][col] = rhs[row];
        }
        *o = det3(&mm) / det;
    }
    out
}

/// Sample the kernel at the nodes of `grid`, checking that ε is resolved (`h ≤ ε/2`).
pub fn evaluate_on_grid(kernel: &Kernel, grid: &SpatialGrid) -> Result<GriddedField> {
    if grid.dim() != kernel.dim() {
        return Err(Error::GridMismatch(format!(
            "kernel is {}-dimensional, grid is {}-dimensional",
            kernel.dim(),
            grid.dim()
        )));
    }
    check_resolution(kernel, grid)?;
    let comps = kernel.components();
    let d = grid.dim();
    let mut field = GriddedField::zeros(*grid, comps);
    field.data.par_chunks_mut(comps).enumerate().for_each(|(node, out)| {
        let mut x = [0.0; MAX_DIM];
        grid.node_position(node, &mut x[..d]);
        kernel.eval(&x[..d], out);
    });
    Ok(field)
}

/// Singular kernels need `h ≤ ε/2`.
pub fn check_resolution(kernel: &Kernel, grid: &SpatialGrid) -> Result<()> {
    if kernel.family.is_singular() && grid.spacing() > kernel.epsilon / 2.0 * (1.0 + 1e-12) {
        return invalid(format!(
            "grid spacing {} does not resolve eps = {} (need h <= eps/2)",
            grid.spacing(),
            kernel.epsilon
        ));
    }
    Ok(())
}

/// Largest Hurst index for which an order-σ kernel is regularised: `1/(4 − 2σ)`.
pub fn hurst_threshold(sigma: f64) -> Result<f64> {
    if !(sigma <= 0.0) {
        return invalid(format!("hurst_threshold needs sigma <= 0, got {sigma}"));
    }
    Ok(1.0 / (4.0 - 2.0 * sigma))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpNorm {
    L1,
    L2,
    Inf,
}

impl FromStr for LpNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" => Ok(LpNorm::L1),
            "2" => Ok(LpNorm::L2),
            "inf" | "Inf" | "infinity" => Ok(LpNorm::Inf),
            other => invalid(format!("p must be 1, 2 or inf, got {other:?}")),
        }
    }
}

/// Block index of angular frequency magnitude `xi`: -1 below 1, else `floor(log2 xi)`.
fn block_of(xi: f64) -> i64 {
    if xi < 1.0 {
        -1
    } else {
        xi.log2().floor() as i64
    }
}

/// `‖Δ_k f‖_{L^p}` for `k = -1..=k_max`, with sharp dyadic annuli on the discrete transform.
///
/// The grid is treated as one period of length `2L`; frequencies are angular,
/// `ξ = 2π m / (2L)`. Vector fields are projected componentwise and measured
/// through their pointwise Euclidean magnitude.
pub fn besov_block_norms(field: &GriddedField, p: LpNorm, k_max: i64) -> Result<Vec<f64>> {
    let grid = field.grid;
    let n = grid.n_cells();
    let h = grid.spacing();
    let nyquist = PI / h;
    if k_max < -1 || (2f64).powi(k_max as i32) > nyquist {
        return invalid(format!("k_max = {k_max} exceeds the grid band (Nyquist {nyquist})"));
    }
    let d = grid.dim();
    let comps = field.components;
    let len = grid.n_nodes();
    let fft = NdFft::new(&grid.shape());
    let base = 2.0 * PI / (2.0 * grid.half_width());
    let mut block = vec![0i64; len];
    let mut idx = [0usize; MAX_DIM];
    for (flat, b) in block.iter_mut().enumerate() {
        grid.multi_index(flat, &mut idx[..d]);
        let xi2: f64 = idx[..d].iter().map(|&i| (base * signed_bin(i, n)).powi(2)).sum();
        *b = block_of(xi2.sqrt());
    }
    let spectra: Vec<Vec<Complex64>> = (0..comps)
        .map(|c| {
            let mut buf: Vec<Complex64> = (0..len).map(|i| Complex64::new(field.data[i * comps + c], 0.0)).collect();
            fft.forward(&mut buf);
            buf
        })
        .collect();
    let vol = grid.cell_volume();
    let mut norms = Vec::with_capacity((k_max + 2) as usize);
    for k in -1..=k_max {
        let mut mag2 = vec![0.0; len];
        for spec in &spectra {
            let mut buf: Vec<Complex64> = spec
                .iter()
                .zip(&block)
                .map(|(z, &b)| if b == k { *z } else { Complex64::default() })
                .collect();
            fft.inverse(&mut buf);
            for (m, z) in mag2.iter_mut().zip(&buf) {
                *m += z.re * z.re;
            }
        }
        let norm = match p {
            LpNorm::L1 => mag2.iter().map(|m| m.sqrt()).sum::<f64>() * vol,
            LpNorm::L2 => (mag2.iter().sum::<f64>() * vol).sqrt(),
            LpNorm::Inf => mag2.iter().cloned().fold(0.0, f64::max).sqrt(),
        };
        norms.push(norm);
    }
    Ok(norms)
}

/// String form of a kernel: `family[:param][,eps=..][,mode=gradient|radial]`.
///
/// Examples: `power_law:-1,eps=0.05`, `biot_savart,eps=0.02`, `dirac,eps=0.1`,
/// `lennard_jones:1,eps=0.05`, `linear:-1` (scalar times identity),
/// `linear:a;b;c;d` (row-major matrix), `zero`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub family: String,
    pub param: Option<String>,
    pub epsilon: Option<f64>,
    pub mode: Mode,
}

impl KernelSpec {
    pub fn build(&self, dim: usize) -> Result<Kernel> {
        let num = |what: &str| -> Result<f64> {
            let p = self
                .param
                .as_deref()
                .ok_or_else(|| Error::InvalidParameter(format!("{} needs a {what} parameter", self.family)))?;
            p.parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("bad {what} {p:?}")))
        };
        let eps = self.epsilon.unwrap_or(0.0);
        let family = match self.family.as_str() {
            "power_law" => Family::PowerLaw {
                sigma: num("sigma")?,
                mode: self.mode,
            },
            "biot_savart" => Family::BiotSavart,
            "dirac" | "mollified_dirac" => Family::MollifiedDirac,
            "lennard_jones" => Family::LennardJones {
                p: num("p")?,
                mode: self.mode,
            },
            "linear" => {
                let p = self.param.as_deref().unwrap_or("1");
                let entries: Vec<f64> = p
                    .split(';')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::InvalidParameter(format!("bad linear matrix {p:?}")))?;
                let matrix = if entries.len() == 1 {
                    (0..dim * dim).map(|i| if i % (dim + 1) == 0 { entries[0] } else { 0.0 }).collect()
                } else {
                    entries
                };
                Family::Linear { matrix }
            }
            "zero" => Family::Zero,
            other => return invalid(format!("unknown kernel family {other:?}")),
        };
        Kernel::new(family, eps, dim)
    }

    pub fn sigma(&self) -> Option<f64> {
        match self.family.as_str() {
            "power_law" => self.param.as_deref().and_then(|p| p.parse().ok()),
            "biot_savart" => Some(-1.0),
            "lennard_jones" => self.param.as_deref().and_then(|p| p.parse::<f64>().ok()).map(|p| -2.0 * p),
            _ => None,
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(',').map(str::trim);
        let head = parts.next().filter(|h| !h.is_empty()).ok_or(Error::Empty("kernel spec"))?;
        let (family, param) = match head.split_once(':') {
            Some((f, p)) => (f.to_string(), Some(p.to_string())),
            None => (head.to_string(), None),
        };
        let mut spec = KernelSpec {
            family,
            param,
            epsilon: None,
            mode: Mode::Gradient,
        };
        for part in parts {
            match part.split_once('=') {
                Some(("eps", v)) => {
                    spec.epsilon = Some(v.parse().map_err(|_| Error::InvalidParameter(format!("bad eps {v:?}")))?)
                }
                Some(("mode", "gradient")) => spec.mode = Mode::Gradient,
                Some(("mode", "radial")) => spec.mode = Mode::Radial,
                _ => return invalid(format!("unrecognised kernel option {part:?}")),
            }
        }
        Ok(spec)
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.family)?;
        if let Some(p) = &self.param {
            write!(f, ":{p}")?;
        }
        if let Some(e) = self.epsilon {
            write!(f, ",eps={e}")?;
        }
        if self.mode == Mode::Radial {
            write!(f, ",mode=radial")?;
        }
        Ok(())
    }
}
