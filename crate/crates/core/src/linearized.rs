//! Collocation solver for the projected linear problem and the nonlinear
//! correction.
//!
//! A boundary solution of the linearized Neumann problem satisfies the
//! second-kind integral equation
//!
//! `φ(y) - ∫ G(y,z) (2#-1) K W^{2#-2} φ(z) dz̄ - Σ_j c_j ∫ G(y,z) Σ_i U_i^{2#-2} Z_{i,j}(z) dz̄ = ∫ G(y,z) h(z) dz̄`
//!
//! with the boundary kernel `G(y, z) = g_N |y - z|^{2-N}`. The unknowns are
//! the values of `φ` at one representative of every mirror pair of sector
//! nodes together with the multipliers `c₁, c₂`; the `Q_k` rotations and the
//! reflection of `y_2, …, y_{N-1}` are folded into the matrix.
//!
//! Inside the spike ball the density is represented by Lagrange
//! interpolation in the distance to `x₁` and by hyperinterpolation on the
//! sphere of directions. The kernel is integrated against this
//! representation exactly in angle through the Funk-Hecke formula and by
//! geometrically graded quadrature in the radius. Rows of far-field nodes
//! receive a diagonal correction making them exact for a bump centred at the
//! collocation point.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bubbles::{nonlinear_part, residual_from_values, two_sharp, weighted_sup, KProfile, ProblemParams};
use crate::error::{Error, Result};
use crate::expansion::interaction_sum;
use crate::geometry::{boundary_green_coefficient, HalfSpacePoint, SpikeConfig};
use crate::quadrature::{build_sector_grid, rotation_table, SectorGrid, SpikeShell};
use crate::special::{gauss_jacobi, gauss_jacobi_symmetric, gauss_legendre, norm_sq, pairwise_sum, sphere_area};

/// Largest admissible 1-norm condition estimate of the bordered matrix.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Ratio between the outer and inner radius of the band of spike-ball
/// panels integrated with the singular rule.
const NEAR_RATIO: f64 = 8.0;

/// Width of the far-field correction bump in units of the local cell size.
const BUMP_CELLS: f64 = 2.0;

/// Number of geometric levels used to grade radial quadrature towards the
/// logarithmic singularity of the angular kernel moments.
const GRADING_LEVELS: usize = 34;

const SEGMENT_ORDER: usize = 8;

/// `x^{(1-d)/2}` for `x > 0`.
#[inline]
fn kernel_pow(x: f64, d: usize) -> f64 {
    let h = d - 1;
    let mut v = x.powi(-((h / 2) as i32));
    if h % 2 == 1 {
        v /= x.sqrt();
    }
    v
}

fn binomial(n: usize, k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * (n - k + i) as f64 / i as f64)
}

/// Dimension of the space of degree-`l` spherical harmonics on `S^{d-1}`.
fn harmonic_dimension(d: usize, l: usize) -> f64 {
    if l == 0 {
        return 1.0;
    }
    (2 * l + d - 2) as f64 / (l + d - 2) as f64 * binomial(l + d - 2, l)
}

/// Gegenbauer polynomials `C_ℓ^α` normalised to one at `t = 1`, and the
/// reproducing-kernel coefficients `dim_ℓ / |S^{d-1}|`.
struct Harmonics {
    alpha: f64,
    norms: Vec<f64>,
    coef: Vec<f64>,
}

impl Harmonics {
    fn new(d: usize, l_max: usize) -> Self {
        let alpha = (d as f64 - 2.0) / 2.0;
        let mut norms = vec![1.0; l_max + 1];
        for l in 1..=l_max {
            norms[l] = norms[l - 1] * (l as f64 + 2.0 * alpha - 1.0) / l as f64;
        }
        let area = sphere_area(d);
        let coef = (0..=l_max).map(|l| harmonic_dimension(d, l) / area).collect();
        Self { alpha, norms, coef }
    }

    fn len(&self) -> usize {
        self.norms.len()
    }

    fn eval(&self, t: f64, out: &mut [f64]) {
        let a = self.alpha;
        let mut prev = 1.0;
        let mut cur = 2.0 * a * t;
        out[0] = 1.0;
        if out.len() > 1 {
            out[1] = cur / self.norms[1];
        }
        for l in 2..out.len() {
            let lf = l as f64;
            let next = (2.0 * t * (lf + a - 1.0) * cur - (lf + 2.0 * a - 2.0) * prev) / lf;
            prev = cur;
            cur = next;
            out[l] = cur / self.norms[l];
        }
    }
}

/// Funk-Hecke eigenvalues `λ_ℓ(ρ, ρ_y)` of the zonal kernel
/// `ω ↦ |ρω - ρ_y ŷ|^{1-d}` on `S^{d-1}`.
struct FunkHecke {
    d: usize,
    harmonics: Harmonics,
    full: Vec<(f64, f64)>,
    left: Vec<(f64, f64)>,
    tip: Vec<(f64, f64)>,
    panel: Vec<(f64, f64)>,
    sub_area: f64,
}

impl FunkHecke {
    fn new(d: usize, l_max: usize) -> Self {
        let a = (d as f64 - 3.0) / 2.0;
        Self {
            d,
            harmonics: Harmonics::new(d, l_max),
            full: gauss_jacobi_symmetric(16, a),
            left: gauss_jacobi(12, 0.0, a),
            tip: gauss_jacobi(8, 0.0, a),
            panel: gauss_legendre(10, -1.0, 1.0),
            sub_area: sphere_area(d - 1),
        }
    }

    fn eval(&self, rho: f64, rho_y: f64, out: &mut [f64], scratch: &mut [f64]) {
        let d = self.d;
        let a = (d as f64 - 3.0) / 2.0;
        out.fill(0.0);
        let base = (rho - rho_y) * (rho - rho_y);
        let b = 2.0 * rho * rho_y;
        let mut add = |t: f64, weight: f64, out: &mut [f64]| {
            self.harmonics.eval(t, scratch);
            for (o, p) in out.iter_mut().zip(scratch.iter()) {
                *o += weight * p;
            }
        };
        if b <= 1e-300 * base.max(1e-300) {
            out[0] = sphere_area(d) * kernel_pow(rho * rho + rho_y * rho_y, d);
            return;
        }
        if base >= 0.5 * b {
            for &(t, w) in &self.full {
                add(t, w * kernel_pow(base + b * (1.0 - t), d), out);
            }
        } else {
            let eps = (base / b).max(1e-300);
            let shift = 2f64.powf(-a - 1.0);
            for &(x, w) in &self.left {
                let t = 0.5 * (x - 1.0);
                let s = 1.0 - t;
                add(t, w * shift * s.powf(a) * kernel_pow(base + b * s, d), out);
            }
            let e0 = eps.min(1.0);
            let scale = (0.5 * e0).powf(a + 1.0);
            for &(x, w) in &self.tip {
                let s = 0.5 * e0 * (1.0 + x);
                add(
                    1.0 - s,
                    w * scale * (2.0 - s).powf(a) * kernel_pow(base + b * s, d),
                    out,
                );
            }
            let mut lo = e0;
            while lo < 1.0 {
                let hi = (2.0 * lo).min(1.0);
                let half = 0.5 * (hi - lo);
                let mid = 0.5 * (hi + lo);
                for &(x, w) in &self.panel {
                    let s = mid + half * x;
                    let jac = (s * (2.0 - s)).powf(a);
                    add(1.0 - s, w * half * jac * kernel_pow(base + b * s, d), out);
                }
                lo = hi;
            }
        }
        for o in out.iter_mut() {
            *o *= self.sub_area;
        }
    }
}

/// Gauss-Legendre points on the pieces `[x0 + (x1-x0)2^{-j-1}, x0 + (x1-x0)2^{-j}]`
/// for `j < levels`, plus the innermost piece when `tail` is set.
fn graded(x0: f64, x1: f64, levels: usize, tail: bool, out: &mut Vec<(f64, f64)>) {
    let span = x1 - x0;
    for j in 0..levels {
        let outer = x0 + span * 0.5f64.powi(j as i32);
        let inner = x0 + span * 0.5f64.powi(j as i32 + 1);
        push_rule(inner, outer, SEGMENT_ORDER, out);
    }
    if tail {
        push_rule(x0, x0 + span * 0.5f64.powi(levels as i32), SEGMENT_ORDER, out);
    }
}

fn push_rule(a: f64, b: f64, order: usize, out: &mut Vec<(f64, f64)>) {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    out.extend(gauss_legendre(order, lo, hi));
}

/// Radial quadrature on `[lo, hi]` resolving the logarithmic singularity of
/// `λ_ℓ(·, ρ_y)` at `ρ_y`.
fn radial_points(lo: f64, hi: f64, rho_y: f64, order: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let width = hi - lo;
    if rho_y > lo && rho_y < hi {
        graded(rho_y, lo, GRADING_LEVELS, false, &mut out);
        graded(rho_y, hi, GRADING_LEVELS, false, &mut out);
        return out;
    }
    let (near, far) = if rho_y <= lo { (lo, hi) } else { (hi, lo) };
    let dist = (rho_y - near).abs();
    if dist >= width {
        push_rule(lo, hi, order + 8, &mut out);
    } else if dist <= 1e-14 * width {
        graded(near, far, GRADING_LEVELS, false, &mut out);
    } else {
        let levels = ((width / dist).log2().ceil() as usize + 1).min(GRADING_LEVELS);
        graded(near, far, levels, true, &mut out);
    }
    out
}

fn lagrange(nodes: &[f64], x: f64, out: &mut [f64]) {
    for (m, o) in out.iter_mut().enumerate() {
        let mut v = 1.0;
        for (n, xn) in nodes.iter().enumerate() {
            if n != m {
                v *= (x - xn) / (nodes[m] - xn);
            }
        }
        *o = v;
    }
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    lo: f64,
    hi: f64,
    first: usize,
}

/// Row builder for the folded Green matrix.
struct Assembler<'a> {
    grid: &'a SectorGrid,
    d: usize,
    n: usize,
    k: usize,
    g: f64,
    rotations: Vec<(f64, f64)>,
    center: Vec<f64>,
    directions: &'a [(Vec<f64>, f64)],
    panels: Vec<Panel>,
    order: usize,
    funk_hecke: FunkHecke,
    ball_count: usize,
    own_moments: Vec<Vec<(usize, Vec<f64>)>>,
}

impl<'a> Assembler<'a> {
    fn new(grid: &'a SectorGrid) -> Self {
        let n = grid.dim();
        let d = n - 1;
        let order = grid.radial_order();
        let shells: &[SpikeShell] = grid.spike_shells();
        let breaks = &grid.annuli().spike_breaks;
        let panels: Vec<Panel> = breaks
            .windows(2)
            .enumerate()
            .map(|(p, w)| Panel {
                lo: w[0],
                hi: w[1],
                first: p * order,
            })
            .collect();
        let l_max = angular_degree(grid);
        let mut asm = Self {
            grid,
            d,
            n,
            k: grid.symmetry_multiplier(),
            g: boundary_green_coefficient(n),
            rotations: rotation_table(grid.symmetry_multiplier()),
            center: grid.center().to_vec(),
            directions: grid.spike_directions(),
            panels,
            order,
            funk_hecke: FunkHecke::new(d, l_max),
            ball_count: grid.spike_node_count(),
            own_moments: Vec::new(),
        };
        let own: Vec<Vec<(usize, Vec<f64>)>> = shells.par_iter().map(|s| asm.near_moments(s.rho)).collect();
        asm.own_moments = own;
        asm
    }

    fn is_near(&self, panel: &Panel, rho_y: f64) -> bool {
        panel.hi >= rho_y / NEAR_RATIO && panel.lo <= NEAR_RATIO * rho_y
    }

    /// `∫_{panel} L_m(ρ) ρ^{d-1} λ_ℓ(ρ, ρ_y) dρ` laid out as `[m][ℓ]`.
    fn moments(&self, panel: &Panel, rho_y: f64) -> Vec<f64> {
        let ll = self.funk_hecke.harmonics.len();
        let nodes: Vec<f64> = (0..self.order)
            .map(|m| self.grid.spike_shells()[panel.first + m].rho)
            .collect();
        let mut out = vec![0.0; self.order * ll];
        let mut lam = vec![0.0; ll];
        let mut scratch = vec![0.0; ll];
        let mut lag = vec![0.0; self.order];
        for (rho, w) in radial_points(panel.lo, panel.hi, rho_y, self.order) {
            self.funk_hecke.eval(rho, rho_y, &mut lam, &mut scratch);
            lagrange(&nodes, rho, &mut lag);
            let jac = w * rho.powi(self.d as i32 - 1);
            for (m, lm) in lag.iter().enumerate() {
                for (l, lv) in lam.iter().enumerate() {
                    out[m * ll + l] += jac * lm * lv;
                }
            }
        }
        out
    }

    fn near_moments(&self, rho_y: f64) -> Vec<(usize, Vec<f64>)> {
        self.panels
            .iter()
            .enumerate()
            .filter(|(_, p)| self.is_near(p, rho_y))
            .map(|(i, p)| (i, self.moments(p, rho_y)))
            .collect()
    }

    /// Full row `M_{a,b}` over all grid nodes `b`, so that `Σ_b M_{a,b} f_b`
    /// approximates `∫ G(y_a, z) f(z) dz̄` for `Q_k`-invariant densities.
    fn row(&self, a: usize) -> Vec<f64> {
        let grid = self.grid;
        let d = self.d;
        let total = grid.len();
        let dirs = self.directions.len();
        let ll = self.funk_hecke.harmonics.len();
        let y = grid.node(a);
        let mut row = vec![0.0; total];
        let mut yl = vec![0.0; d];
        let mut diff = vec![0.0; d];
        let mut pvals = vec![0.0; dirs * ll];
        let mut tmp = vec![0.0; ll];
        let mut computed: Vec<(usize, Vec<f64>)>;
        for (l, &(c, s)) in self.rotations.iter().enumerate() {
            yl.copy_from_slice(y);
            yl[0] = c * y[0] + s * y[1];
            yl[1] = -s * y[0] + c * y[1];
            for ((df, a_), b_) in diff.iter_mut().zip(&yl).zip(&self.center) {
                *df = a_ - b_;
            }
            let rho_y = norm_sq(&diff).sqrt();
            let near: &[(usize, Vec<f64>)] = if l == 0 && a < self.ball_count {
                &self.own_moments[a / dirs]
            } else {
                computed = self.near_moments(rho_y);
                &computed
            };
            if !near.is_empty() {
                for (j, (omega, wj)) in self.directions.iter().enumerate() {
                    let t = (omega.iter().zip(&diff).map(|(o, v)| o * v).sum::<f64>() / rho_y).clamp(-1.0, 1.0);
                    self.funk_hecke.harmonics.eval(t, &mut tmp);
                    for (ell, p) in tmp.iter().enumerate() {
                        pvals[j * ll + ell] = self.g * wj * self.funk_hecke.harmonics.coef[ell] * p;
                    }
                }
                for (p, mom) in near {
                    let panel = &self.panels[*p];
                    for m in 0..self.order {
                        let shell = panel.first + m;
                        let mrow = &mom[m * ll..(m + 1) * ll];
                        for j in 0..dirs {
                            let pv = &pvals[j * ll..(j + 1) * ll];
                            row[shell * dirs + j] += pv.iter().zip(mrow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
            }
            for (p, panel) in self.panels.iter().enumerate() {
                if near.iter().any(|(q, _)| *q == p) {
                    continue;
                }
                for b in panel.first * dirs..(panel.first + self.order) * dirs {
                    row[b] += self.g * grid.weight(b) * kernel_pow(dist_sq(&yl, grid.node(b)), d);
                }
            }
            for b in self.ball_count..total {
                if l == 0 && b == a {
                    continue;
                }
                row[b] += self.g * grid.weight(b) * kernel_pow(dist_sq(&yl, grid.node(b)), d);
            }
        }
        if a >= self.ball_count {
            self.correct_far_row(a, &mut row);
        }
        row
    }

    /// Adds `(∫ G B - Σ_b M_{a,b} B(z_b)) / B(y_a)` to the diagonal, with `B`
    /// the symmetrised bump `Σ_g (1 + λ²|z - g y_a|²)^{-N/2}`.
    fn correct_far_row(&self, a: usize, row: &mut [f64]) {
        let grid = self.grid;
        let y = grid.node(a);
        let lam = 1.0 / (BUMP_CELLS * grid.cell(a));
        let nf = self.n as f64;
        let mut images: Vec<Vec<f64>> = Vec::with_capacity(2 * self.k);
        for &(c, s) in &self.rotations {
            for reflect in [false, true] {
                let mut p = y.to_vec();
                if reflect {
                    for v in p.iter_mut().skip(1) {
                        *v = -*v;
                    }
                }
                let (p0, p1) = (p[0], p[1]);
                p[0] = c * p0 - s * p1;
                p[1] = s * p0 + c * p1;
                images.push(p);
            }
        }
        let bump = |z: &[f64]| -> f64 {
            images
                .iter()
                .map(|p| (1.0 + lam * lam * dist_sq(z, p)).powf(-nf / 2.0))
                .sum()
        };
        let exact: f64 = images
            .iter()
            .map(|p| (1.0 + lam * lam * dist_sq(y, p)).powf(-(nf - 2.0) / 2.0) / ((nf - 2.0) * lam))
            .sum();
        let quad: f64 = (0..grid.len()).map(|b| row[b] * bump(grid.node(b))).sum();
        row[a] += (exact - quad) / bump(y);
    }
}

#[inline]
fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Degree of the hyperinterpolation on the spike-ball sphere rule. The
/// product rule of order `o` is exact to degree `2o - 1`, so degree `o - 1`
/// is reproduced.
fn angular_degree(grid: &SectorGrid) -> usize {
    let d = grid.dim() - 1;
    let dirs = grid.spike_directions().len();
    let mut order = 1;
    while sphere_rule_size(d, order) < dirs {
        order += 1;
    }
    order - 1
}

fn sphere_rule_size(d: usize, order: usize) -> usize {
    match d {
        0 => 0,
        1 => 2,
        2 => 2 * order,
        _ => order * sphere_rule_size(d - 1, order),
    }
}

/// Folded boundary Green operator on the symmetry-reduced node set.
#[derive(Debug, Clone)]
pub struct GreenOperator {
    representatives: Vec<usize>,
    reduced_of: Vec<usize>,
    matrix: DMatrix<f64>,
    folded_weights: Vec<f64>,
}

impl GreenOperator {
    /// Assembles `M` with rows at the representatives and columns summed
    /// over mirror pairs.
    pub fn assemble(grid: &SectorGrid) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::EmptySamples);
        }
        let mirror = grid.mirror();
        let representatives: Vec<usize> = (0..grid.len()).filter(|&i| mirror[i] >= i).collect();
        let mut position = vec![usize::MAX; grid.len()];
        for (r, &i) in representatives.iter().enumerate() {
            position[i] = r;
        }
        let reduced_of: Vec<usize> = (0..grid.len()).map(|i| position[i.min(mirror[i])]).collect();
        let size = representatives.len();
        let asm = Assembler::new(grid);
        let rows: Vec<Vec<f64>> = representatives
            .par_iter()
            .map(|&a| {
                let full = asm.row(a);
                let mut folded = vec![0.0; size];
                for (b, v) in full.iter().enumerate() {
                    folded[reduced_of[b]] += v;
                }
                folded
            })
            .collect();
        if let Some(index) = rows.iter().flatten().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteIntegrand { index });
        }
        let matrix = DMatrix::from_fn(size, size, |i, j| rows[i][j]);
        let mut folded_weights = vec![0.0; size];
        for b in 0..grid.len() {
            folded_weights[reduced_of[b]] += grid.weight(b);
        }
        Ok(Self {
            representatives,
            reduced_of,
            matrix,
            folded_weights,
        })
    }

    /// Number of reduced unknowns.
    pub fn len(&self) -> usize {
        self.representatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.representatives.is_empty()
    }

    /// Grid indices of the representatives, in reduced order.
    pub fn representatives(&self) -> &[usize] {
        &self.representatives
    }

    /// Reduced index of every grid node.
    pub fn reduced_of(&self) -> &[usize] {
        &self.reduced_of
    }

    /// The folded matrix `M`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Sector weights summed over mirror pairs.
    pub fn folded_weights(&self) -> &[f64] {
        &self.folded_weights
    }

    /// Values at the representatives of a function given on all nodes.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.representatives.iter().map(|&i| full[i]).collect()
    }

    /// Mirror-symmetric extension of reduced values to all nodes.
    pub fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        self.reduced_of.iter().map(|&r| reduced[r]).collect()
    }

    /// `(M f)(y_a) ≈ ∫ G(y_a, z) f(z) dz̄` at the representatives for a
    /// symmetric density given on all nodes.
    pub fn apply(&self, full: &[f64]) -> Vec<f64> {
        let v = DVector::from_vec(self.restrict(full));
        (&self.matrix * v).iter().copied().collect()
    }
}

/// The bordered collocation system for `(φ, c₁, c₂)`.
#[derive(Debug, Clone)]
pub struct CollocationSystem {
    params: ProblemParams,
    config: SpikeConfig,
    profile: KProfile,
    grid: SectorGrid,
    green: GreenOperator,
    potential: Vec<f64>,
    kernels: [Vec<f64>; 2],
    multiplier_columns: [Vec<f64>; 2],
    constraint_scale: [f64; 2],
    matrix: DMatrix<f64>,
    lu: LU<f64, Dyn, Dyn>,
    condition: f64,
}

/// Node values of `Σ_i U_i^{2#-2} Z_{i,j}` for `j = 1, 2`.
fn projected_kernels(config: &SpikeConfig, grid: &SectorGrid) -> [Vec<f64>; 2] {
    let q = two_sharp(config.dim()) - 1.0;
    let eval = |j: usize| -> Vec<f64> {
        (0..grid.len())
            .map(|b| {
                let z = grid.node(b);
                let u = config.bubble_values(z, 0.0);
                (0..config.k())
                    .map(|i| u[i].powf(q - 1.0) * config.kernel(i, j, z, 0.0))
                    .sum()
            })
            .collect()
    };
    [eval(1), eval(2)]
}

/// `(2#-1) K(|z|/μ) W^{2#-2}` at every node.
fn potential_values(config: &SpikeConfig, profile: &KProfile, grid: &SectorGrid) -> Vec<f64> {
    let q = two_sharp(config.dim()) - 1.0;
    (0..grid.len())
        .map(|b| {
            let z = grid.node(b);
            q * profile.eval(norm_sq(z).sqrt() / config.mu()) * config.ansatz(z, 0.0).powf(q - 1.0)
        })
        .collect()
}

fn check_grid(config: &SpikeConfig, grid: &SectorGrid) -> Result<()> {
    if grid.dim() != config.dim() || grid.symmetry_multiplier() != config.k() {
        return Err(Error::InvalidParams(format!(
            "grid for N = {}, k = {} does not match configuration N = {}, k = {}",
            grid.dim(),
            grid.symmetry_multiplier(),
            config.dim(),
            config.k()
        )));
    }
    let gap = crate::special::distance(grid.center(), &config.spikes()[0]);
    if gap > 1e-9 * config.r().max(1.0) {
        return Err(Error::InvalidParams("grid is not centred on the first spike".into()));
    }
    Ok(())
}

/// Assembles the bordered system
/// `[I - M V, -T; S E w, 0]` for the problem data.
pub fn assemble(
    params: &ProblemParams,
    config: &SpikeConfig,
    profile: &KProfile,
    grid: &SectorGrid,
) -> Result<CollocationSystem> {
    if params.n() != config.dim() {
        return Err(Error::InvalidParams(
            "parameter dimension does not match the configuration".into(),
        ));
    }
    check_grid(config, grid)?;
    let green = GreenOperator::assemble(grid)?;
    let potential = potential_values(config, profile, grid);
    let kernels = projected_kernels(config, grid);
    let q = two_sharp(config.dim()) - 1.0;
    let reps = green.representatives().to_vec();
    let size = reps.len();
    let multiplier_columns: [Vec<f64>; 2] = [1usize, 2].map(|j| {
        reps.iter()
            .map(|&a| {
                let y = grid.node(a);
                (0..config.k()).map(|i| config.kernel(i, j, y, 0.0)).sum::<f64>() / q
            })
            .collect()
    });
    let folded = green.folded_weights();
    let constraint_scale: [f64; 2] = [0, 1].map(|j| {
        let peak = reps
            .iter()
            .zip(folded)
            .map(|(&b, w)| (w * kernels[j][b]).abs())
            .fold(0.0, f64::max);
        if peak > 0.0 {
            1.0 / peak
        } else {
            1.0
        }
    });
    let mut matrix = DMatrix::zeros(size + 2, size + 2);
    let m = green.matrix();
    for a in 0..size {
        for b in 0..size {
            matrix[(a, b)] = -m[(a, b)] * potential[reps[b]];
        }
        matrix[(a, a)] += 1.0;
        for j in 0..2 {
            matrix[(a, size + j)] = -multiplier_columns[j][a];
        }
    }
    for j in 0..2 {
        for b in 0..size {
            matrix[(size + j, b)] = constraint_scale[j] * folded[b] * kernels[j][reps[b]];
        }
    }
    let lu = matrix.clone().lu();
    let condition = condition_estimate(&matrix, &lu);
    if !(condition.is_finite() && condition <= CONDITION_LIMIT) {
        return Err(Error::SingularSystem { condition });
    }
    Ok(CollocationSystem {
        params: *params,
        config: config.clone(),
        profile: *profile,
        grid: grid.clone(),
        green,
        potential,
        kernels,
        multiplier_columns,
        constraint_scale,
        matrix,
        lu,
        condition,
    })
}

/// Hager's estimate of `‖A‖₁ ‖A^{-1}‖₁`.
fn condition_estimate(matrix: &DMatrix<f64>, lu: &LU<f64, Dyn, Dyn>) -> f64 {
    let n = matrix.nrows();
    let norm_a = (0..n)
        .map(|j| matrix.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let l = lu.l();
    let u = lu.u();
    let p = lu.p();
    let solve_t = |b: &DVector<f64>| -> Option<DVector<f64>> {
        let z = u.tr_solve_upper_triangular(b)?;
        let mut w = l.tr_solve_lower_triangular(&z)?;
        p.inv_permute_rows(&mut w);
        Some(w)
    };
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut estimate = 0.0;
    for _ in 0..5 {
        let y = match lu.solve(&x) {
            Some(y) => y,
            None => return f64::INFINITY,
        };
        estimate = y.iter().map(|v| v.abs()).sum::<f64>();
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let z = match solve_t(&xi) {
            Some(z) => z,
            None => return f64::INFINITY,
        };
        let (j, zmax) = z.iter().enumerate().fold(
            (0, 0.0),
            |best, (i, v)| {
                if v.abs() > best.1 {
                    (i, v.abs())
                } else {
                    best
                }
            },
        );
        if zmax <= z.dot(&x) {
            break;
        }
        x.fill(0.0);
        x[j] = 1.0;
    }
    norm_a * estimate
}

impl CollocationSystem {
    /// Number of rows, `representatives + 2`.
    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// 1-norm condition estimate of the bordered matrix.
    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    pub fn grid(&self) -> &SectorGrid {
        &self.grid
    }

    pub fn config(&self) -> &SpikeConfig {
        &self.config
    }

    pub fn params(&self) -> &ProblemParams {
        &self.params
    }

    pub fn profile(&self) -> &KProfile {
        &self.profile
    }

    pub fn green(&self) -> &GreenOperator {
        &self.green
    }

    /// `(2#-1) K W^{2#-2}` at every node.
    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    /// `Σ_i U_i^{2#-2} Z_{i,j}` at every node, `j = 1, 2`.
    pub fn projected_kernel(&self, j: usize) -> &[f64] {
        &self.kernels[j - 1]
    }

    /// Exact multiplier columns `Σ_i Z_{i,j} / (2#-1)` at the representatives.
    pub fn multiplier_column(&self, j: usize) -> &[f64] {
        &self.multiplier_columns[j - 1]
    }

    /// Scale applied to constraint row `j`.
    pub fn constraint_scale(&self, j: usize) -> f64 {
        self.constraint_scale[j - 1]
    }

    /// Residual of the unconstrained homogeneous rows
    /// `φ(y_a) - (M V φ)(y_a)` at the representatives.
    pub fn homogeneous_residual(&self, phi: &[f64]) -> Vec<f64> {
        let density: Vec<f64> = phi.iter().zip(&self.potential).map(|(p, v)| p * v).collect();
        let mv = self.green.apply(&density);
        self.green
            .representatives()
            .iter()
            .zip(mv)
            .map(|(&a, m)| phi[a] - m)
            .collect()
    }

    /// Residual `R = Σ U_i^{2#-1} - K W^{2#-1}` at every node.
    pub fn residual_values(&self) -> Vec<f64> {
        let q = two_sharp(self.config.dim()) - 1.0;
        (0..self.grid.len())
            .map(|b| {
                let z = self.grid.node(b);
                let values = self.config.bubble_values(z, 0.0);
                residual_from_values(&values, self.profile.one_minus(norm_sq(z).sqrt() / self.config.mu()), q)
            })
            .collect()
    }

    /// `N(φ)` at every node.
    pub fn nonlinearity_values(&self, phi: &[f64]) -> Vec<f64> {
        let q = two_sharp(self.config.dim()) - 1.0;
        (0..self.grid.len())
            .map(|b| {
                let z = self.grid.node(b);
                let w = self.config.ansatz(z, 0.0);
                self.profile.eval(norm_sq(z).sqrt() / self.config.mu()) * nonlinear_part(w, phi[b], q)
            })
            .collect()
    }

    /// Sampled `‖f‖*` over the boundary nodes.
    pub fn node_norm_star(&self, values: &[f64]) -> Result<f64> {
        self.node_norm(values, self.params.star_exponent())
    }

    /// Sampled `‖f‖**` over the boundary nodes.
    pub fn node_norm_dstar(&self, values: &[f64]) -> Result<f64> {
        self.node_norm(values, self.params.dstar_exponent())
    }

    fn node_norm(&self, values: &[f64], exponent: f64) -> Result<f64> {
        weighted_sup(
            &self.config,
            exponent,
            (0..self.grid.len()).map(|b| (self.grid.node(b), 0.0, values[b])),
        )
    }

    /// Relative orthogonality defects `|Σ w E_j φ| / Σ w |E_j φ|`.
    pub fn orthogonality(&self, phi: &[f64]) -> [f64; 2] {
        [0, 1].map(|j| {
            let mut signed = 0.0;
            let mut absolute = 0.0;
            for (b, p) in phi.iter().enumerate() {
                let t = self.grid.weight(b) * self.kernels[j][b] * p;
                signed += t;
                absolute += t.abs();
            }
            if absolute > 0.0 {
                signed.abs() / absolute
            } else {
                0.0
            }
        })
    }
}

/// Solution of the projected problem or of the nonlinear correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSolution {
    /// `φ` at every sector node.
    pub phi_values: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    /// `‖φ‖*` sampled on the nodes.
    pub norm_star_value: f64,
    /// `‖φ‖* / ‖h‖**` for the last linear solve.
    pub operator_ratio: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Relative orthogonality defects for `j = 1, 2`.
    pub orthogonality: [f64; 2],
    /// `‖φ^{n+1} - φ^n‖*` along the Picard iteration.
    pub differences: Vec<f64>,
    /// Ratios of successive differences.
    pub contraction_factors: Vec<f64>,
    /// `‖φ - L(N(φ) - R)‖*` at the returned `φ`.
    pub fixed_point_residual: Option<f64>,
    /// Boundary density `V φ + h + Σ c_j E_j` whose single layer is `φ`.
    #[serde(skip)]
    pub density: Option<Vec<f64>>,
}

impl CorrectionSolution {
    /// A bare set of node values without multipliers or density, for
    /// checks on prescribed functions.
    pub fn from_values(phi_values: Vec<f64>) -> Self {
        Self {
            phi_values,
            c1: 0.0,
            c2: 0.0,
            norm_star_value: f64::NAN,
            operator_ratio: None,
            iterations: 0,
            converged: false,
            orthogonality: [0.0; 2],
            differences: Vec::new(),
            contraction_factors: Vec::new(),
            fixed_point_residual: None,
            density: None,
        }
    }
}

/// Solves the projected problem for the right-hand side `h` given at every
/// node.
pub fn solve_linear(system: &CollocationSystem, h_values: &[f64]) -> Result<CorrectionSolution> {
    let grid = &system.grid;
    if h_values.len() != grid.len() {
        return Err(Error::InvalidParams(format!(
            "right-hand side has {} values for {} nodes",
            h_values.len(),
            grid.len()
        )));
    }
    let size = system.green.len();
    let mh = system.green.apply(h_values);
    let mut rhs = DVector::zeros(size + 2);
    for (slot, v) in rhs.iter_mut().zip(mh) {
        *slot = v;
    }
    let x = system.lu.solve(&rhs).ok_or(Error::SingularSystem {
        condition: f64::INFINITY,
    })?;
    let phi = system.green.expand(&x.as_slice()[..size]);
    let (c1, c2) = (x[size], x[size + 1]);
    let norm_star_value = system.node_norm_star(&phi)?;
    let h_norm = system.node_norm_dstar(h_values)?;
    let density: Vec<f64> = (0..grid.len())
        .map(|b| system.potential[b] * phi[b] + h_values[b] + c1 * system.kernels[0][b] + c2 * system.kernels[1][b])
        .collect();
    Ok(CorrectionSolution {
        orthogonality: system.orthogonality(&phi),
        phi_values: phi,
        c1,
        c2,
        norm_star_value,
        operator_ratio: (h_norm > 0.0).then(|| norm_star_value / h_norm),
        iterations: 1,
        converged: true,
        differences: Vec::new(),
        contraction_factors: Vec::new(),
        fixed_point_residual: None,
        density: Some(density),
    })
}

/// Picard iteration `φ^{n+1} = L(N(φ^n) - R)` from `φ⁰ = 0` on an
/// assembled system.
pub fn iterate_correction(system: &CollocationSystem, max_iter: usize, tol: f64) -> Result<CorrectionSolution> {
    if max_iter == 0 {
        return Err(Error::InvalidParams("max_iter must be at least 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParams("tolerance must be positive".into()));
    }
    let residual = system.residual_values();
    let source = |phi: &[f64]| -> Vec<f64> {
        system
            .nonlinearity_values(phi)
            .iter()
            .zip(&residual)
            .map(|(n, r)| n - r)
            .collect()
    };
    let distance = |a: &[f64], b: &[f64]| -> Result<f64> {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        system.node_norm_star(&diff)
    };
    let mut phi = vec![0.0; system.grid.len()];
    let mut differences: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut last = None;
    for iteration in 1..=max_iter {
        let next = solve_linear(system, &source(&phi))?;
        let diff = distance(&next.phi_values, &phi)?;
        differences.push(diff);
        phi = next.phi_values.clone();
        last = Some(next);
        if diff < tol {
            converged = true;
            break;
        }
        if growing(&differences) {
            return Err(Error::NotContracting { iteration });
        }
    }
    let mut solution = last.ok_or(Error::InvalidParams("no iteration was performed".into()))?;
    let check = solve_linear(system, &source(&phi))?;
    let fixed = distance(&check.phi_values, &phi)?;
    let mut factors: Vec<f64> = differences.windows(2).map(|w| ratio(w[1], w[0])).collect();
    if let Some(&tail) = differences.last() {
        factors.push(ratio(fixed, tail));
    }
    solution.iterations = differences.len();
    solution.converged = converged;
    solution.differences = differences;
    solution.contraction_factors = factors;
    solution.fixed_point_residual = Some(fixed);
    Ok(solution)
}

/// True when the last three differences each exceed their predecessor.
fn growing(differences: &[f64]) -> bool {
    let n = differences.len();
    n >= 4 && (n - 3..n).all(|i| differences[i] > differences[i - 1])
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Assembles the system on `grid` and runs the Picard iteration.
pub fn solve_correction(
    params: &ProblemParams,
    config: &SpikeConfig,
    profile: &KProfile,
    grid: &SectorGrid,
    max_iter: usize,
    tol: f64,
) -> Result<CorrectionSolution> {
    let system = assemble(params, config, profile, grid)?;
    iterate_correction(&system, max_iter, tol)
}

/// Outcome of a positivity check of `W + φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub positive: bool,
    /// Smallest value of `W + φ` over the samples.
    pub minimum: f64,
    /// Smallest value of `(W + φ) / W` over the samples.
    pub minimum_ratio: f64,
    pub samples: usize,
}

/// Interior sample points on rays leaving `x₁` into the half-space at
/// 45 degrees outward and inward and vertically, at geometric distances
/// from `10^{-2}/Λ` to `cutoff`.
pub fn interior_ray_points(config: &SpikeConfig, cutoff: f64, per_ray: usize) -> Result<Vec<HalfSpacePoint>> {
    let x1 = &config.spikes()[0];
    let start = 1e-2 / config.lambda();
    let count = per_ray.max(2);
    let ratio = (cutoff / start).max(1.0).powf(1.0 / (count - 1) as f64);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let rays = [(s, s), (-s, s), (0.0, 1.0)];
    let mut out = Vec::new();
    for (along, up) in rays {
        for i in 0..count {
            let t = start * ratio.powi(i as i32);
            let mut tan = x1.clone();
            tan[0] += along * t;
            out.push(HalfSpacePoint::new(tan, up * t)?);
        }
    }
    Ok(out)
}

/// Single-layer extension `φ(x) = ∫ G(x, z) g(z) dz̄` of a solved
/// correction to a point with positive height, `g` being the boundary
/// density carried by the solution.
pub fn correction_at(
    config: &SpikeConfig,
    grid: &SectorGrid,
    solution: &CorrectionSolution,
    p: &HalfSpacePoint,
) -> Result<f64> {
    let density = solution
        .density
        .as_ref()
        .ok_or_else(|| Error::InvalidParams("the correction carries no boundary density".into()))?;
    if density.len() != grid.len() {
        return Err(Error::InvalidParams("correction does not match the grid".into()));
    }
    if !(p.height() > 0.0) {
        return Err(Error::InvalidParams(
            "the extension is evaluated at interior points only".into(),
        ));
    }
    let n = config.dim();
    let g = boundary_green_coefficient(n);
    let y = p.tangential();
    let h2 = p.height() * p.height();
    let mut yl = y.to_vec();
    let mut terms = Vec::with_capacity(config.k() * grid.len());
    for (c, s) in rotation_table(config.k()) {
        yl[0] = c * y[0] + s * y[1];
        yl[1] = -s * y[0] + c * y[1];
        for (b, dv) in density.iter().enumerate() {
            let r2 = dist_sq(&yl, grid.node(b)) + h2;
            terms.push(g * grid.weight(b) * dv * r2.powf(-(n as f64 - 2.0) / 2.0));
        }
    }
    Ok(pairwise_sum(&terms))
}

/// Checks `W + φ > 0` at every grid node and, when the solution carries its
/// boundary density, at the interior points through the single-layer
/// extension of `φ`.
pub fn positivity_check(
    config: &SpikeConfig,
    grid: &SectorGrid,
    solution: &CorrectionSolution,
    interior: &[HalfSpacePoint],
) -> Result<PositivityReport> {
    check_grid(config, grid)?;
    if solution.phi_values.len() != grid.len() {
        return Err(Error::InvalidParams("correction does not match the grid".into()));
    }
    let mut minimum = f64::INFINITY;
    let mut minimum_ratio = f64::INFINITY;
    let mut samples = 0;
    let mut record = |w: f64, phi: f64| {
        minimum = minimum.min(w + phi);
        minimum_ratio = minimum_ratio.min((w + phi) / w);
        samples += 1;
    };
    for (b, phi) in solution.phi_values.iter().enumerate() {
        record(config.ansatz(grid.node(b), 0.0), *phi);
    }
    if solution.density.is_some() {
        for p in interior {
            let phi = correction_at(config, grid, solution, p)?;
            record(config.ansatz(p.tangential(), p.height()), phi);
        }
    }
    Ok(PositivityReport {
        positive: minimum > 0.0,
        minimum,
        minimum_ratio,
        samples,
    })
}

/// The multiplier coefficient matrix `Σ_i ⟨U_i^{2#-2} Z_{i,j}, Z_{1,ℓ}⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierDiagnostics {
    pub k: usize,
    /// Full matrix, rows `j`, columns `ℓ`.
    pub matrix: [[f64; 2]; 2],
    /// Contribution of the first spike alone.
    pub self_matrix: [[f64; 2]; 2],
    /// Largest off-diagonal entry over the smallest diagonal entry.
    pub off_diagonal_ratio: f64,
    /// Largest cross-spike contribution over the smallest diagonal entry of
    /// the self matrix.
    pub contamination: f64,
    /// `Σ_{i≥2} (Λ|x_i - x_1|)^{2-N}`.
    pub interaction_scale: f64,
}

/// Computes the multiplier coefficient matrix on a level-1 sector grid.
pub fn multiplier_system_diagnostics(config: &SpikeConfig) -> Result<MultiplierDiagnostics> {
    let grid = build_sector_grid(config, 1)?;
    let q = two_sharp(config.dim()) - 1.0;
    let k = config.k();
    let rotations = rotation_table(k);
    let mut full = [[0.0; 2]; 2];
    let mut own = [[0.0; 2]; 2];
    let mut point = vec![0.0; config.dim() - 1];
    for (z, w) in grid.iter() {
        for &(c, s) in &rotations {
            point.copy_from_slice(z);
            point[0] = c * z[0] - s * z[1];
            point[1] = s * z[0] + c * z[1];
            let u = config.bubble_values(&point, 0.0);
            let z1 = [config.kernel(0, 1, &point, 0.0), config.kernel(0, 2, &point, 0.0)];
            for j in 0..2 {
                let mut sum = 0.0;
                for (i, ui) in u.iter().enumerate() {
                    let term = ui.powf(q - 1.0) * config.kernel(i, j + 1, &point, 0.0);
                    sum += term;
                    if i == 0 {
                        for l in 0..2 {
                            own[j][l] += w * term * z1[l];
                        }
                    }
                }
                for l in 0..2 {
                    full[j][l] += w * sum * z1[l];
                }
            }
        }
    }
    let diag = own[0][0].min(own[1][1]);
    let off = full[0][1].abs().max(full[1][0].abs());
    let cross = (0..2)
        .flat_map(|j| (0..2).map(move |l| (j, l)))
        .map(|(j, l)| (full[j][l] - own[j][l]).abs())
        .fold(0.0, f64::max);
    let full_diag = full[0][0].min(full[1][1]);
    let n = config.dim();
    Ok(MultiplierDiagnostics {
        k,
        matrix: full,
        self_matrix: own,
        off_diagonal_ratio: off / full_diag,
        contamination: cross / diag,
        interaction_scale: interaction_sum(k, config.r(), n) * config.lambda().powf(2.0 - n as f64),
    })
}
