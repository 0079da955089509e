//! Boundary quadrature on the symmetry sector `Ω₁`, Gamma-function moment
//! integrals, an independent Monte-Carlo moment oracle and sampled checks
//! of the auxiliary convolution estimates.
//!
//! The sector grid has two parts. Around the spike `x₁` a ball of radius
//! `r·sin(π/k)` (the largest ball centred at `x₁` inside `Ω₁`) is covered in
//! spherical coordinates with radial panels `[0, a], [a, 2a], [2a, 4a], …`
//! where `a` is a fraction of `1/Λ`. The rest of the sector, out to the
//! cylinder radius `R = 10·max(μ, 1/Λ, r)` in the `(y₁, y₂)` plane, is covered
//! in cylindrical coordinates `(ρ cos θ, ρ sin θ, t)` with the spike ball cut
//! out exactly in the `t` direction. For `k = 1` the spike ball has radius
//! `R` and there is no far field.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Pareto, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bubbles::{two_sharp, ProblemParams};
use crate::error::{Error, Result};
use crate::geometry::{boundary_green_coefficient, SpikeConfig};
use crate::special::{beta, gamma, gauss_jacobi_symmetric, gauss_legendre, pairwise_sum, sphere_area};

/// Orders and panel sizes of a sector grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    /// Gauss-Legendre order per radial panel inside the spike ball.
    pub radial_order: usize,
    /// Width of the innermost spike panel in units of `1/Λ`.
    pub finest_panel: f64,
    /// Gauss-Legendre order of each polar angle on the spike sphere (even).
    pub angular_order: usize,
    /// Gauss-Legendre order per far-field `ρ` panel.
    pub far_radial_order: usize,
    /// Number of midpoint nodes in the sector angle (even).
    pub far_angle_count: usize,
    /// Number of panels in the tangent variable of the `t` radius.
    pub far_tau_panels: usize,
    /// Gauss-Legendre order per tangent panel.
    pub far_tau_order: usize,
    /// Order of the sphere rule for the `t` direction.
    pub far_sphere_order: usize,
    /// Cutoff radius in units of `max(μ, 1/Λ, r)`.
    pub cutoff_factor: f64,
    /// Largest number of radial spike panels; the panel growth ratio is
    /// raised above 2 when needed. Zero means no limit.
    pub max_spike_panels: usize,
}

impl GridOptions {
    /// Options of refinement level `level ≥ 1`.
    pub fn for_level(level: usize) -> Result<Self> {
        if level == 0 {
            return Err(Error::InvalidRefinement(level));
        }
        Ok(Self {
            radial_order: 4 + 2 * level,
            finest_panel: 0.5f64.powi(level as i32),
            angular_order: 2 + 2 * level,
            far_radial_order: 4 + 2 * level,
            far_angle_count: 4 + 4 * level,
            far_tau_panels: 4,
            far_tau_order: 2 + 2 * level,
            far_sphere_order: 2 + 2 * level,
            cutoff_factor: 10.0,
            max_spike_panels: 0,
        })
    }

    /// Coarser options sized for dense collocation systems. Level 1 keeps
    /// every sector below 4000 nodes for `N = 5`.
    pub fn collocation(level: usize) -> Result<Self> {
        if level == 0 {
            return Err(Error::InvalidRefinement(level));
        }
        Ok(Self {
            radial_order: 2 + level,
            finest_panel: 1.0,
            angular_order: 4,
            far_radial_order: level,
            far_angle_count: 2 * level,
            far_tau_panels: 2,
            far_tau_order: 1 + level,
            far_sphere_order: 1 + level,
            cutoff_factor: 10.0,
            max_spike_panels: 8,
        })
    }

    fn validate(&self) -> Result<()> {
        let orders = [
            self.radial_order,
            self.angular_order,
            self.far_radial_order,
            self.far_angle_count,
            self.far_tau_panels,
            self.far_tau_order,
            self.far_sphere_order,
        ];
        if orders.contains(&0) {
            return Err(Error::InvalidParams("grid orders must be positive".into()));
        }
        if !self.angular_order.is_multiple_of(2) || !self.far_angle_count.is_multiple_of(2) {
            return Err(Error::InvalidParams(
                "angular order and far-field angle count must be even".into(),
            ));
        }
        if !(self.finest_panel > 0.0 && self.cutoff_factor > 1.0) {
            return Err(Error::InvalidParams(
                "finest panel and cutoff factor must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Which part of the grid a node belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridRegion {
    Spike,
    Far,
}

/// Panel layout of a sector grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnuliSpec {
    /// Radius of the spike ball around `x₁`.
    pub spike_radius: f64,
    /// Radial panel breakpoints inside the spike ball.
    pub spike_breaks: Vec<f64>,
    /// Far-field panel breakpoints in `ρ = |(y₁, y₂)|`.
    pub far_breaks: Vec<f64>,
    /// Truncation radius.
    pub cutoff: f64,
}

/// Quadrature nodes and weights covering the sector `Ω₁`.
#[derive(Debug, Clone)]
pub struct SectorGrid {
    n: usize,
    k: usize,
    center: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    cells: Vec<f64>,
    regions: Vec<GridRegion>,
    annuli: AnnuliSpec,
    shells: Vec<SpikeShell>,
    directions: Vec<(Vec<f64>, f64)>,
    radial_order: usize,
    mirror: Vec<usize>,
}

/// One radial Gauss-Legendre node of the spike ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeShell {
    /// Distance from the spike `x₁`.
    pub rho: f64,
    /// Gauss-Legendre weight in `ρ`, without the Jacobian `ρ^{N-2}`.
    pub weight: f64,
    /// Index of the radial panel in [`AnnuliSpec::spike_breaks`].
    pub panel: usize,
}

impl SectorGrid {
    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Ambient dimension `N`; nodes have `N - 1` coordinates.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// The factor `k` applied to sector sums.
    pub fn symmetry_multiplier(&self) -> usize {
        self.k
    }

    pub fn node(&self, i: usize) -> &[f64] {
        let d = self.n - 1;
        &self.nodes[i * d..(i + 1) * d]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Local cell size `w^{1/(N-1)}`.
    pub fn cell(&self, i: usize) -> f64 {
        self.cells[i]
    }

    pub fn region(&self, i: usize) -> GridRegion {
        self.regions[i]
    }

    pub fn annuli(&self) -> &AnnuliSpec {
        &self.annuli
    }

    /// Spike `x₁` the grid is centred on.
    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// Radial nodes of the spike ball. Spike node `s · D + j` sits at
    /// shell `s` in direction `j`, with `D` the number of directions.
    pub fn spike_shells(&self) -> &[SpikeShell] {
        &self.shells
    }

    /// Unit directions and weights of the spike-ball sphere rule.
    pub fn spike_directions(&self) -> &[(Vec<f64>, f64)] {
        &self.directions
    }

    /// Number of spike-ball nodes; they precede all far-field nodes.
    pub fn spike_node_count(&self) -> usize {
        self.shells.len() * self.directions.len()
    }

    /// Gauss-Legendre order of each spike-ball radial panel.
    pub fn radial_order(&self) -> usize {
        self.radial_order
    }

    /// Index of the node obtained by negating the coordinates `y_2, …, y_{N-1}`.
    pub fn mirror(&self) -> &[usize] {
        &self.mirror
    }

    /// Iterator over `(node, weight)`.
    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        (0..self.len()).map(move |i| (self.node(i), self.weights[i]))
    }

    fn push(&mut self, node: &[f64], weight: f64, region: GridRegion) {
        self.nodes.extend_from_slice(node);
        self.weights.push(weight);
        self.cells.push(weight.powf(1.0 / (self.n - 1) as f64));
        self.regions.push(region);
    }
}

/// Points and weights of a product rule on the unit sphere `S^{d-1} ⊂ R^d`.
/// The weights sum to the sphere area and the rule is invariant under
/// every coordinate sign flip.
pub fn sphere_rule(d: usize, order: usize) -> Vec<(Vec<f64>, f64)> {
    match d {
        0 => Vec::new(),
        1 => vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)],
        2 => {
            let count = 2 * order;
            let step = 2.0 * PI / count as f64;
            (0..count)
                .map(|j| {
                    let a = (j as f64 + 0.5) * step;
                    (vec![a.cos(), a.sin()], step)
                })
                .collect()
        }
        _ => {
            let inner = sphere_rule(d - 1, order);
            let mut out = Vec::with_capacity(order * inner.len());
            for (c, w) in gauss_jacobi_symmetric(order, (d as f64 - 3.0) / 2.0) {
                let s = (1.0 - c * c).sqrt();
                for (eta, we) in &inner {
                    let mut p = Vec::with_capacity(d);
                    p.push(c);
                    p.extend(eta.iter().map(|e| s * e));
                    out.push((p, w * we));
                }
            }
            out
        }
    }
}

fn cutoff_radius(config: &SpikeConfig, opts: &GridOptions) -> f64 {
    opts.cutoff_factor * config.mu().max(1.0 / config.lambda()).max(config.r())
}

/// Sector grid at refinement `level ≥ 1`.
pub fn build_sector_grid(config: &SpikeConfig, refinement: usize) -> Result<SectorGrid> {
    let opts = GridOptions::for_level(refinement)?;
    build_sector_grid_with(config, &opts)
}

/// Sector grid with explicit options.
pub fn build_sector_grid_with(config: &SpikeConfig, opts: &GridOptions) -> Result<SectorGrid> {
    opts.validate()?;
    let n = config.dim();
    let d = n - 1;
    let k = config.k();
    let r = config.r();
    let lambda = config.lambda();
    let cutoff = cutoff_radius(config, opts);
    let spike_radius = if k == 1 { cutoff } else { r * (PI / k as f64).sin() };
    let center = config.spikes()[0].clone();

    let mut spike_breaks = vec![0.0];
    let mut b = opts.finest_panel / lambda;
    let mut growth: f64 = 2.0;
    if opts.max_spike_panels > 1 && spike_radius > b {
        let needed = (spike_radius / b).powf(1.0 / (opts.max_spike_panels - 1) as f64) * (1.0 + 1e-9);
        growth = growth.max(needed);
    }
    while b < spike_radius * (1.0 - 1e-12) {
        spike_breaks.push(b);
        b *= growth;
    }
    spike_breaks.push(spike_radius);

    let far_breaks = if k == 1 {
        Vec::new()
    } else {
        far_breakpoints(r, spike_radius, cutoff)
    };
    let t_dirs = sphere_rule(d - 2, opts.far_sphere_order);

    let mut grid = SectorGrid {
        n,
        k,
        center: center.clone(),
        nodes: Vec::new(),
        weights: Vec::new(),
        cells: Vec::new(),
        regions: Vec::new(),
        annuli: AnnuliSpec {
            spike_radius,
            spike_breaks: spike_breaks.clone(),
            far_breaks: far_breaks.clone(),
            cutoff,
        },
        shells: Vec::new(),
        directions: sphere_rule(d, opts.angular_order),
        radial_order: opts.radial_order,
        mirror: Vec::new(),
    };

    let directions = grid.directions.clone();
    let mut point = vec![0.0; d];
    for (panel, pair) in spike_breaks.windows(2).enumerate() {
        for (rho, wr) in gauss_legendre(opts.radial_order, pair[0], pair[1]) {
            grid.shells.push(SpikeShell { rho, weight: wr, panel });
            let radial = wr * rho.powi(d as i32 - 1);
            for (omega, wo) in &directions {
                for ((p, c), o) in point.iter_mut().zip(&center).zip(omega) {
                    *p = c + rho * o;
                }
                grid.push(&point, radial * wo, GridRegion::Spike);
            }
        }
    }

    if k > 1 {
        let half = PI / k as f64;
        let dtheta = 2.0 * half / opts.far_angle_count as f64;
        let mut u_rule = Vec::new();
        for p in 0..opts.far_tau_panels {
            let a = 0.5 * PI * p as f64 / opts.far_tau_panels as f64;
            let b = 0.5 * PI * (p + 1) as f64 / opts.far_tau_panels as f64;
            u_rule.extend(gauss_legendre(opts.far_tau_order, a, b));
        }
        for pair in far_breaks.windows(2) {
            for (rho, wr) in gauss_legendre(opts.far_radial_order, pair[0], pair[1]) {
                for j in 0..opts.far_angle_count {
                    let theta = -half + (j as f64 + 0.5) * dtheta;
                    let (s, c) = theta.sin_cos();
                    let plane = (rho * rho + r * r - 2.0 * rho * r * c).max(0.0).sqrt();
                    let tau_min = (spike_radius * spike_radius - plane * plane).max(0.0).sqrt();
                    let scale = plane.max(spike_radius);
                    let base = wr * rho * dtheta;
                    point[0] = rho * c;
                    point[1] = rho * s;
                    for &(u, wu) in &u_rule {
                        let (su, cu) = u.sin_cos();
                        let tau = tau_min + scale * su / cu;
                        let jac = scale / (cu * cu);
                        let wt = base * wu * jac * tau.powi(d as i32 - 3);
                        for (nu, wn) in &t_dirs {
                            for (slot, e) in point[2..].iter_mut().zip(nu) {
                                *slot = tau * e;
                            }
                            grid.push(&point, wt * wn, GridRegion::Far);
                        }
                    }
                }
            }
        }
    }
    grid.mirror = mirror_map(&grid, &t_dirs, opts);
    Ok(grid)
}

fn mirrored_index(points: &[(Vec<f64>, f64)], skip_first: bool) -> Vec<usize> {
    points
        .iter()
        .map(|(p, _)| {
            let target: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(i, v)| if i == 0 && skip_first { *v } else { -*v })
                .collect();
            points
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    let da: f64 = a.1 .0.iter().zip(&target).map(|(x, y)| (x - y).powi(2)).sum();
                    let db: f64 = b.1 .0.iter().zip(&target).map(|(x, y)| (x - y).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .map(|(i, _)| i)
                .unwrap_or(0)
        })
        .collect()
}

fn mirror_map(grid: &SectorGrid, t_dirs: &[(Vec<f64>, f64)], opts: &GridOptions) -> Vec<usize> {
    let dirs = grid.directions.len();
    let dir_mirror = mirrored_index(&grid.directions, true);
    let mut mirror: Vec<usize> = (0..grid.spike_node_count())
        .map(|i| (i / dirs) * dirs + dir_mirror[i % dirs])
        .collect();
    let base = mirror.len();
    if grid.len() > base {
        let nu_mirror = mirrored_index(t_dirs, false);
        let v = t_dirs.len();
        let u = opts.far_tau_panels * opts.far_tau_order;
        let j_count = opts.far_angle_count;
        for f in 0..grid.len() - base {
            let vi = f % v;
            let ui = (f / v) % u;
            let ji = (f / (v * u)) % j_count;
            let ri = f / (v * u * j_count);
            let g = ((ri * j_count + (j_count - 1 - ji)) * u + ui) * v + nu_mirror[vi];
            mirror.push(base + g);
        }
    }
    mirror
}

fn far_breakpoints(r: f64, spike_radius: f64, cutoff: f64) -> Vec<f64> {
    let mut breaks = vec![0.0, r, cutoff];
    let mut c = 0.5;
    loop {
        let lo = r - spike_radius * c;
        let hi = r + spike_radius * c;
        if lo > 0.0 {
            breaks.push(lo);
        }
        if hi < cutoff {
            breaks.push(hi);
        }
        if lo <= 0.0 && hi >= cutoff {
            break;
        }
        c *= 2.0;
    }
    breaks.retain(|b| (0.0..=cutoff).contains(b));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * cutoff);
    breaks
}

fn evaluate<F>(grid: &SectorGrid, f: &F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let terms: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| grid.weights[i] * f(grid.node(i)))
        .collect();
    match terms.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFiniteIntegrand { index }),
        None => Ok(terms),
    }
}

/// `Σ w_b f(z_b)` over the sector only.
pub fn integrate_sector<F>(grid: &SectorGrid, f: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    Ok(pairwise_sum(&evaluate(grid, &f)?))
}

/// `k · Σ w_b f(z_b)`, the boundary integral of a `Q_k`-invariant integrand.
pub fn integrate_boundary<F>(grid: &SectorGrid, f: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    Ok(grid.k as f64 * integrate_sector(grid, f)?)
}

/// Boundary integral of an arbitrary integrand, summing `f` over all `k`
/// rotated copies of every node.
pub fn integrate_full<F>(grid: &SectorGrid, f: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let table = rotation_table(grid.k);
    let images = |z: &[f64]| {
        let mut p = z.to_vec();
        table
            .iter()
            .map(|&(c, s)| {
                p[0] = c * z[0] - s * z[1];
                p[1] = s * z[0] + c * z[1];
                f(&p)
            })
            .sum::<f64>()
    };
    integrate_sector(grid, images)
}

/// `integrate_boundary` plus a closed-form estimate of the integral beyond
/// the truncation radius for an integrand decaying like `|y|^{-decay_power}`.
pub fn integrate_with_tail<F>(grid: &SectorGrid, f: F, decay_power: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let body = integrate_sector(grid, &f)?;
    Ok(grid.k as f64 * (body + tail_estimate(grid, &f, decay_power)?))
}

fn tail_estimate<F>(grid: &SectorGrid, f: &F, q: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let n = grid.n as f64;
    let d = grid.n - 1;
    let big_r = grid.annuli.cutoff;
    if q <= n - 1.0 {
        return Err(Error::DivergentIntegral {
            n: d,
            moment: 0.0,
            decay: q / 2.0,
        });
    }
    let mut probe = vec![0.0; d];
    if grid.k == 1 {
        probe.copy_from_slice(&grid.center);
        probe[0] += big_r;
        let amplitude = f(&probe) * big_r.powf(q);
        Ok(amplitude * sphere_area(d) * big_r.powf(n - 1.0 - q) / (q - n + 1.0))
    } else {
        probe[0] = big_r;
        let amplitude = f(&probe) * big_r.powf(q);
        let t_dim = n - 3.0;
        let t_factor = PI.powf(t_dim / 2.0) * gamma((q - t_dim) / 2.0) / gamma(q / 2.0);
        let radial = big_r.powf(n - 1.0 - q) / (q - n + 1.0);
        Ok(amplitude * (2.0 * PI / grid.k as f64) * t_factor * radial)
    }
}

/// `(cos, sin)` of the rotation angles `2πl/k`, `l = 0..k`.
pub fn rotation_table(k: usize) -> Vec<(f64, f64)> {
    (0..k)
        .map(|l| {
            let (s, c) = (2.0 * PI * l as f64 / k as f64).sin_cos();
            (c, s)
        })
        .collect()
}

/// Explicit sample points in `Ω₁`: every grid node plus geometric ray scans
/// from the spike `x₁` and along the sector axis.
pub fn sample_points(grid: &SectorGrid, config: &SpikeConfig, per_ray: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = grid.iter().map(|(z, _)| z.to_vec()).collect();
    out.extend(ray_scan_points(config, grid.annuli.cutoff, per_ray));
    out
}

/// Geometric ray scans starting at `x₁` in the outward, inward, tangential
/// and transverse directions, and along the sector axis from near the origin.
pub fn ray_scan_points(config: &SpikeConfig, cutoff: f64, per_ray: usize) -> Vec<Vec<f64>> {
    let d = config.dim() - 1;
    let x1 = &config.spikes()[0];
    let r = config.r();
    let k = config.k();
    let start = 1e-2 / config.lambda();
    let geometric = |lo: f64, hi: f64| -> Vec<f64> {
        if per_ray < 2 || hi <= lo {
            return vec![lo];
        }
        let ratio = (hi / lo).powf(1.0 / (per_ray - 1) as f64);
        (0..per_ray).map(|i| lo * ratio.powi(i as i32)).collect()
    };
    let tangent_limit = if k == 1 {
        cutoff
    } else {
        0.999 * r * (PI / k as f64).tan()
    };
    let inward_limit = 0.999 * r;
    let mut rays: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut e = |i: usize, sign: f64, limit: f64| {
        let mut v = vec![0.0; d];
        v[i] = sign;
        rays.push((v, limit));
    };
    e(0, 1.0, cutoff);
    e(0, -1.0, inward_limit);
    e(1, 1.0, tangent_limit);
    e(2, 1.0, cutoff);
    let mut diag = vec![0.0; d];
    diag[0] = std::f64::consts::FRAC_1_SQRT_2;
    diag[2] = std::f64::consts::FRAC_1_SQRT_2;
    rays.push((diag, cutoff));
    let mut out = Vec::new();
    for (dir, limit) in rays {
        for t in geometric(start, limit) {
            out.push(x1.iter().zip(&dir).map(|(a, b)| a + t * b).collect());
        }
    }
    let half = if k == 1 { 0.0 } else { 0.5 * PI / k as f64 };
    for t in geometric(1e-3 * r.max(1.0), cutoff) {
        let mut p = vec![0.0; d];
        p[0] = t * half.cos();
        p[1] = t * half.sin();
        out.push(p);
    }
    out
}

/// `∫_{R^{N-1}} |y - z|^{2-N} g(z) dz̄` for a `Q_k`-invariant density with
/// values `values[b]` at the grid nodes and value `g_foot` at the foot point
/// `ȳ` of `y = (ȳ, height)`. The singularity is removed by subtracting a
/// scaled boundary bump whose convolution is known in closed form.
pub fn green_convolution(grid: &SectorGrid, values: &[f64], g_foot: f64, y: &[f64], height: f64) -> f64 {
    let n = grid.n;
    let nf = n as f64;
    let table = rotation_table(grid.k);
    let mut nearest = (f64::INFINITY, 1.0);
    for b in 0..grid.len() {
        let z = grid.node(b);
        for &(c, s) in &table {
            let d2 = image_dist_sq(z, c, s, y);
            if d2 < nearest.0 {
                nearest = (d2, grid.cells[b]);
            }
        }
    }
    let h_loc = nearest.1;
    let lambda = 1.0 / (4.0 * h_loc);
    let eps = 0.3 * h_loc;
    let hh = height * height;
    let terms: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|b| {
            let z = grid.node(b);
            let mut acc = 0.0;
            for &(c, s) in &table {
                let t2 = image_dist_sq(z, c, s, y);
                let d2 = t2 + hh;
                if d2 < eps * eps {
                    continue;
                }
                let kernel = crate::bubbles::pow_half(d2, n - 2).recip();
                let bump = crate::bubbles::pow_half(1.0 + lambda * lambda * t2, n).recip();
                acc += kernel * (values[b] - g_foot * bump);
            }
            grid.weights[b] * acc
        })
        .collect();
    let exact = (1.0 + lambda * height).powf(2.0 - nf) / (boundary_green_coefficient(n) * (nf - 2.0) * lambda);
    pairwise_sum(&terms) + g_foot * exact
}

#[inline]
fn image_dist_sq(z: &[f64], c: f64, s: f64, y: &[f64]) -> f64 {
    let a = c * z[0] - s * z[1] - y[0];
    let b = s * z[0] + c * z[1] - y[1];
    a * a + b * b + z[2..].iter().zip(&y[2..]).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()
}

/// Shape of the moment integral `∫_{R^n} |y₁|^{m̃} (1+|y|²)^{-p} dy`; the odd
/// variant integrates `sign(y₁)|y₁|^{m̃}` instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSpec {
    pub n: usize,
    pub moment_power: f64,
    pub decay_power: f64,
    #[serde(default)]
    pub odd: bool,
}

impl MomentSpec {
    /// Validated even moment.
    pub fn new(n: usize, moment_power: f64, decay_power: f64) -> Result<Self> {
        let spec = Self {
            n,
            moment_power,
            decay_power,
            odd: false,
        };
        spec.check()?;
        Ok(spec)
    }

    /// Same shape with the odd integrand.
    pub fn odd(self) -> Self {
        Self { odd: true, ..self }
    }

    fn check(&self) -> Result<()> {
        if self.n == 0 || !(self.moment_power >= 0.0) {
            return Err(Error::InvalidParams(
                "moment needs n ≥ 1 and a non-negative power".into(),
            ));
        }
        if !(2.0 * self.decay_power > self.n as f64 + self.moment_power) {
            return Err(Error::DivergentIntegral {
                n: self.n,
                moment: self.moment_power,
                decay: self.decay_power,
            });
        }
        Ok(())
    }
}

/// Exact moment: angular moment of `|ω₁|^{m̃}` times the radial Beta integral.
pub fn closed_form_moment(spec: &MomentSpec) -> Result<f64> {
    spec.check()?;
    if spec.odd {
        return Ok(0.0);
    }
    let n = spec.n as f64;
    let m = spec.moment_power;
    let p = spec.decay_power;
    let angular = 2.0 * PI.powf((n - 1.0) / 2.0) * gamma((m + 1.0) / 2.0) / gamma((n + m) / 2.0);
    let radial = 0.5 * beta((n + m) / 2.0, p - (n + m) / 2.0);
    Ok(angular * radial)
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub standard_error: f64,
    pub samples: usize,
}

const MC_CHUNK: usize = 1 << 14;

/// Importance-sampled moment: uniform direction, radius from an even mixture
/// of `Uniform(0, 1)` and a Pareto tail matched to the decay. Deterministic
/// for a given seed regardless of the thread count.
pub fn monte_carlo_moment(spec: &MomentSpec, samples: usize, seed: u64) -> Result<MonteCarloEstimate> {
    spec.check()?;
    if samples < 10_000 {
        return Err(Error::InvalidParams(format!(
            "at least 10^4 samples required, got {samples}"
        )));
    }
    let n = spec.n;
    let nf = n as f64;
    let m = spec.moment_power;
    let p = spec.decay_power;
    let shape = 2.0 * p - m - nf;
    let pareto = Pareto::new(1.0, shape).map_err(|e| Error::InvalidParams(e.to_string()))?;
    let area = sphere_area(n);
    let chunks = samples.div_ceil(MC_CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut sum = Vec::with_capacity(count);
            let mut sq = Vec::with_capacity(count);
            let mut dir = vec![0.0; n];
            for _ in 0..count {
                let mut norm2: f64 = 0.0;
                for v in dir.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                    norm2 += *v * *v;
                }
                let y1 = dir[0] / norm2.sqrt();
                let rho: f64 = if rng.random::<f64>() < 0.5 {
                    rng.random::<f64>()
                } else {
                    pareto.sample(&mut rng)
                };
                let density = if rho < 1.0 {
                    0.5
                } else {
                    0.5 * shape * rho.powf(-shape - 1.0)
                };
                let mut g = (rho * y1).abs().powf(m) * (1.0 + rho * rho).powf(-p);
                if spec.odd && y1 < 0.0 {
                    g = -g;
                }
                let value = rho.powi(n as i32 - 1) * g * area / density;
                sum.push(value);
                sq.push(value * value);
            }
            (pairwise_sum(&sum), pairwise_sum(&sq))
        })
        .collect();
    let total: Vec<f64> = partial.iter().map(|x| x.0).collect();
    let total_sq: Vec<f64> = partial.iter().map(|x| x.1).collect();
    let count = samples as f64;
    let mean = pairwise_sum(&total) / count;
    let var = ((pairwise_sum(&total_sq) / count - mean * mean) * count / (count - 1.0)).max(0.0);
    Ok(MonteCarloEstimate {
        estimate: mean,
        standard_error: (var / count).sqrt(),
        samples,
    })
}

/// Empirical constant of one sampled inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    /// Which estimate: `laa1`, `laa2` or `laa3`.
    pub lemma: String,
    /// Exponents used, as `name=value` pairs.
    pub exponents: Vec<(String, f64)>,
    /// Description of the sampled region.
    pub region: String,
    pub samples: usize,
    /// `max LHS/RHS` over `samples` points.
    pub constant: f64,
    /// `max LHS/RHS` over `2·samples` points.
    pub constant_doubled: f64,
    /// Known upper bound for the constant, when one is available.
    pub bound: Option<f64>,
    /// Finite, positive and changing by less than a factor of two.
    pub stable: bool,
    pub passed: bool,
}

/// Results of the sampled auxiliary estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppendixReport {
    pub checks: Vec<LemmaCheck>,
    pub passed: bool,
}

fn finish_check(
    lemma: &str,
    exponents: Vec<(String, f64)>,
    region: String,
    ratios: &[f64],
    samples: usize,
    bound: Option<f64>,
) -> LemmaCheck {
    let max = |s: &[f64]| s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let constant = max(&ratios[..samples]);
    let constant_doubled = max(ratios);
    let stable = constant.is_finite()
        && constant_doubled.is_finite()
        && constant > 0.0
        && constant_doubled < 2.0 * constant
        && constant < 2.0 * constant_doubled;
    let within = bound.is_none_or(|b| constant_doubled <= b * (1.0 + 1e-12));
    LemmaCheck {
        lemma: lemma.to_string(),
        exponents,
        region,
        samples,
        constant,
        constant_doubled,
        bound,
        stable,
        passed: stable && within,
    }
}

fn random_direction(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Random point `(ȳ, h)` at log-uniform distance in `[lo, hi]` from `base`;
/// half of the points lie on the boundary.
fn sample_near(rng: &mut ChaCha8Rng, base: &[f64], lo: f64, hi: f64) -> (Vec<f64>, f64) {
    let d = base.len();
    let dist = log_uniform(rng, lo, hi);
    let interior = rng.random::<f64>() < 0.5;
    let dir = random_direction(rng, d + 1);
    let (tan_scale, h) = if interior {
        (1.0, dist * dir[d].abs())
    } else {
        let t = dir[..d].iter().map(|x| x * x).sum::<f64>().sqrt();
        (1.0 / t, 0.0)
    };
    let y = base.iter().zip(&dir).map(|(b, v)| b + dist * v * tan_scale).collect();
    (y, h)
}

fn dist_with_height(a: &[f64], b: &[f64], h: f64) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() + h * h).sqrt()
}

fn laa1_ratios(config: &SpikeConfig, alpha: f64, beta_exp: f64, sigma: f64, total: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spikes = config.spikes();
    let k = spikes.len();
    let hi = 10.0 * config.mu().max(config.r());
    (0..total)
        .map(|_| {
            let i = rng.random_range(0..k);
            let j = (i + 1 + rng.random_range(0..k - 1)) % k;
            let anchor = if rng.random::<f64>() < 0.5 { i } else { j };
            let (y, h) = sample_near(&mut rng, &spikes[anchor], 1e-3, hi);
            let a = dist_with_height(&y, &spikes[i], h);
            let b = dist_with_height(&y, &spikes[j], h);
            let dij = dist_with_height(&spikes[i], &spikes[j], 0.0);
            let lhs = (1.0 + b).powf(-alpha) * (1.0 + a).powf(-beta_exp);
            let e = alpha + beta_exp - sigma;
            let rhs = dij.powf(-sigma) * ((1.0 + a).powf(-e) + (1.0 + b).powf(-e));
            lhs / rhs
        })
        .collect()
}

/// `∫_{R^{N-1}} |y - z|^{2-N} (1+|z|)^{-1-σ} dz̄` by a graded product rule in
/// the radius `|z|` and the angle between `z` and `ȳ`.
pub fn laa2_lhs(n: usize, sigma: f64, foot_norm: f64, height: f64) -> f64 {
    let nf = n as f64;
    let a = foot_norm;
    let order = 8;
    let levels = 30;
    let mut rho_breaks = vec![0.0];
    let far_start = if a > 1e-12 {
        for j in (1..=levels).rev() {
            rho_breaks.push(a * (1.0 - 0.5f64.powi(j)));
        }
        rho_breaks.push(a);
        for j in 1..=levels {
            rho_breaks.push(a * (1.0 + 0.5f64.powi(levels + 1 - j)));
        }
        2.0 * a
    } else {
        rho_breaks.push(1e-3);
        1e-3
    };
    let scale = far_start.max(1.0);
    let mut b = far_start;
    while b < scale * 2f64.powi(40) {
        b *= 2.0;
        rho_breaks.push(b);
    }
    rho_breaks.sort_by(f64::total_cmp);
    rho_breaks.dedup();
    let mut psi_breaks: Vec<f64> = (0..=levels).map(|j| PI * 0.5f64.powi(j)).collect();
    psi_breaks.push(0.0);
    psi_breaks.reverse();
    let psi_rule: Vec<(f64, f64)> = psi_breaks
        .windows(2)
        .flat_map(|w| gauss_legendre(order, w[0], w[1]))
        .map(|(psi, w)| (2.0 * (0.5 * psi).sin().powi(2), w * psi.sin().powi(n as i32 - 3)))
        .collect();
    let outer_area = sphere_area(n - 2);
    let h2 = height * height;
    let mut terms = Vec::new();
    for w in rho_breaks.windows(2) {
        for (rho, wr) in gauss_legendre(order, w[0], w[1]) {
            let inner: f64 = psi_rule
                .iter()
                .map(|&(vers, wp)| {
                    wp * crate::bubbles::pow_half((a - rho).powi(2) + 2.0 * a * rho * vers + h2, n - 2).recip()
                })
                .sum();
            terms.push(wr * (1.0 + rho).powf(-1.0 - sigma) * rho.powi(n as i32 - 2) * outer_area * inner);
        }
    }
    let last = *rho_breaks.last().expect("non-empty");
    let tail = sphere_area(n - 1) * last.powf(-sigma) / sigma;
    let _ = nf;
    pairwise_sum(&terms) + tail
}

fn laa2_ratios(n: usize, sigma: f64, total: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = vec![0.0; n - 1];
    let points: Vec<(f64, f64)> = (0..total)
        .map(|_| {
            let (y, h) = sample_near(&mut rng, &origin, 1e-2, 1e4);
            (y.iter().map(|v| v * v).sum::<f64>().sqrt(), h)
        })
        .collect();
    points
        .par_iter()
        .map(|&(a, h)| laa2_lhs(n, sigma, a, h) * (1.0 + (a * a + h * h).sqrt()).powf(sigma))
        .collect()
}

fn laa3_ratios(params: &ProblemParams, config: &SpikeConfig, grid: &SectorGrid, total: usize, seed: u64) -> Vec<f64> {
    let n = config.dim();
    let nf = n as f64;
    let e = (nf - 2.0) / 2.0 - params.m() / (nf - 2.0) + params.tau();
    let q = two_sharp(n) - 2.0;
    let density = |z: &[f64]| -> f64 {
        let w = config.ansatz(z, 0.0);
        w.powf(q) * crate::bubbles::weight_sum(config, z, 0.0, e)
    };
    let values: Vec<f64> = (0..grid.len()).into_par_iter().map(|b| density(grid.node(b))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x1 = config.spikes()[0].clone();
    let hi = 10.0 * config.mu().max(config.r());
    let points: Vec<(Vec<f64>, f64)> = (0..total).map(|_| sample_near(&mut rng, &x1, 1e-2, hi)).collect();
    points
        .iter()
        .map(|(y, h)| {
            let lhs = green_convolution(grid, &values, density(y), y, *h);
            let rhs = crate::bubbles::weight_sum(config, y, *h, e);
            lhs / rhs
        })
        .collect()
}

/// Samples the three auxiliary convolution estimates at `sample_count` and
/// `2·sample_count` random points and reports empirical constants.
pub fn verify_appendix_estimates(
    params: &ProblemParams,
    config: &SpikeConfig,
    sample_count: usize,
    seed: u64,
) -> Result<AppendixReport> {
    if config.k() < 2 {
        return Err(Error::InvalidParams(
            "the pair estimate needs at least two spikes".into(),
        ));
    }
    if sample_count == 0 {
        return Err(Error::EmptySamples);
    }
    let total = 2 * sample_count;
    let n = config.dim();
    let hi = 10.0 * config.mu().max(config.r());
    let pair_region = format!("points at distance 1e-3..{hi:.3e} from a spike of the pair, half on the boundary");
    let mut checks = Vec::new();
    for (alpha, beta_exp, sigma, bound) in [
        (1.0, 1.0, 1.0, Some(2.0)),
        (1.0, 1.0, 0.0, Some(1.0)),
        (2.0, 1.5, params.sigma(), Some(2f64.powf(params.sigma()))),
    ] {
        let ratios = laa1_ratios(config, alpha, beta_exp, sigma, total, seed);
        checks.push(finish_check(
            "laa1",
            vec![
                ("alpha".into(), alpha),
                ("beta".into(), beta_exp),
                ("sigma".into(), sigma),
            ],
            pair_region.clone(),
            &ratios,
            sample_count,
            bound,
        ));
    }
    for sigma in [params.sigma(), 1.0] {
        let ratios = laa2_ratios(n, sigma, total, seed);
        checks.push(finish_check(
            "laa2",
            vec![("sigma".into(), sigma)],
            "points at distance 1e-2..1e4 from the origin, half on the boundary".into(),
            &ratios,
            sample_count,
            None,
        ));
    }
    let grid = build_sector_grid_with(config, &GridOptions::collocation(1)?)?;
    let ratios = laa3_ratios(params, config, &grid, total, seed);
    let nf = n as f64;
    checks.push(finish_check(
        "laa3",
        vec![(
            "exponent".into(),
            (nf - 2.0) / 2.0 - params.m() / (nf - 2.0) + params.tau(),
        )],
        format!(
            "points at distance 1e-2..{hi:.3e} from x_1, half on the boundary; integral truncated at radius {:.3e}",
            grid.annuli.cutoff
        ),
        &ratios,
        sample_count,
        None,
    ));
    let passed = checks.iter().all(|c| c.passed);
    Ok(AppendixReport { checks, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_spikes, sector_of_tangential};
    use crate::special::unit_ball_volume;

    fn params() -> ProblemParams {
        ProblemParams::default()
    }

    fn a_n(n: usize) -> f64 {
        let nf = n as f64;
        (nf - 2.0).powf(nf - 1.0) * closed_form_moment(&MomentSpec::new(n - 1, 0.0, nf - 1.0).unwrap()).unwrap()
    }

    fn spike_mass(config: &SpikeConfig, opts: &GridOptions) -> f64 {
        let grid = build_sector_grid_with(config, opts).unwrap();
        let p = two_sharp(config.dim());
        integrate_boundary(&grid, |z| config.bubble_values(z, 0.0).iter().map(|u| u.powf(p)).sum()).unwrap()
            / config.k() as f64
    }

    #[test]
    fn sphere_rule_weights_sum_to_area() {
        for d in 2..6 {
            let total: f64 = sphere_rule(d, 4).iter().map(|x| x.1).sum();
            assert!((total - sphere_area(d)).abs() < 1e-12 * total, "{d}");
        }
    }

    #[test]
    fn mirror_map_reflects_every_node() {
        for n in [5, 6] {
            let p = params().with_dimension(n, 2.0).unwrap();
            let c = build_spikes(&p, 8, mu_of_for_test(&p, 8), 0.31).unwrap();
            let grid = build_sector_grid_with(&c, &GridOptions::collocation(1).unwrap()).unwrap();
            let mirror = grid.mirror();
            assert_eq!(mirror.len(), grid.len());
            let scale = grid.annuli().cutoff;
            for (i, &j) in mirror.iter().enumerate() {
                let reflected = crate::geometry::reflect(grid.node(i));
                let gap = crate::special::distance(&reflected, grid.node(j));
                assert!(gap < 1e-9 * scale, "node {i} -> {j}: {gap}");
                assert!((grid.weight(i) - grid.weight(j)).abs() < 1e-12 * grid.weight(i));
                assert_eq!(mirror[j], i);
            }
            assert_eq!(
                grid.spike_node_count(),
                grid.spike_shells().len() * grid.spike_directions().len()
            );
        }
    }

    fn mu_of_for_test(p: &ProblemParams, k: usize) -> f64 {
        crate::geometry::mu_of(p, k) * p.r0()
    }

    #[test]
    fn refinement_zero_is_rejected() {
        let c = build_spikes(&params(), 8, 512.0, 0.3).unwrap();
        assert_eq!(build_sector_grid(&c, 0).unwrap_err(), Error::InvalidRefinement(0));
    }

    #[test]
    fn nodes_lie_in_the_first_sector_with_positive_weights() {
        let c = build_spikes(&params(), 8, 512.0, 0.31).unwrap();
        let grid = build_sector_grid(&c, 1).unwrap();
        for (z, w) in grid.iter() {
            assert!(w > 0.0);
            assert_eq!(sector_of_tangential(z, 8).unwrap(), 1);
            assert!(z[1] != 0.0);
        }
    }

    #[test]
    fn unit_disc_measure() {
        let c = build_spikes(&params(), 8, 512.0, 1.0).unwrap();
        let grid = build_sector_grid(&c, 1).unwrap();
        let x1 = c.spikes()[0].clone();
        let measure = integrate_sector(&grid, |z| {
            let d2: f64 = z.iter().zip(&x1).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < 1.0 {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let exact = unit_ball_volume(4);
        assert!((measure - exact).abs() < 1e-3 * exact);
    }

    #[test]
    fn spike_integral_localizes_and_converges() {
        let p = params();
        let mu = crate::geometry::mu_of(&p, 8);
        let c = build_spikes(&p, 8, mu, 0.31).unwrap();
        let exact = a_n(5);
        let e1 = (spike_mass(&c, &GridOptions::for_level(1).unwrap()) - exact).abs();
        let e2 = (spike_mass(&c, &GridOptions::for_level(2).unwrap()) - exact).abs();
        assert!(e1 < 5e-3 * exact);
        assert!(e2 * 2.0 <= e1, "{e1} {e2}");
    }

    #[test]
    fn halving_the_finest_panel_barely_changes_spike_integrals() {
        let p = params();
        let c = build_spikes(&p, 8, crate::geometry::mu_of(&p, 8), 0.31).unwrap();
        let opts = GridOptions::for_level(1).unwrap();
        let finer = GridOptions {
            finest_panel: opts.finest_panel / 2.0,
            ..opts
        };
        let a = spike_mass(&c, &opts);
        let b = spike_mass(&c, &finer);
        assert!((a - b).abs() < 2e-3 * a);
    }

    #[test]
    fn integration_is_linear_and_checks_finiteness() {
        let c = build_spikes(&params(), 4, 20.0, 1.0).unwrap();
        let grid = build_sector_grid(&c, 1).unwrap();
        let f = |z: &[f64]| c.ansatz(z, 0.0);
        let g = |z: &[f64]| (1.0 + z.iter().map(|v| v * v).sum::<f64>()).powi(-3);
        let sum = integrate_boundary(&grid, |z| f(z) + g(z)).unwrap();
        let parts = integrate_boundary(&grid, f).unwrap() + integrate_boundary(&grid, g).unwrap();
        assert!((sum - parts).abs() < 1e-12 * sum);
        assert_eq!(integrate_boundary(&grid, |_| 0.0).unwrap(), 0.0);
        assert!(matches!(
            integrate_boundary(&grid, |_| f64::NAN),
            Err(Error::NonFiniteIntegrand { index: 0 })
        ));
    }

    #[test]
    fn pair_interaction_matches_leading_term() {
        let p = params();
        let lambda = 1.0;
        let r = 200.0;
        let c = build_spikes(&p, 2, r, lambda).unwrap();
        let grid = build_sector_grid(&c, 2).unwrap();
        let q = two_sharp(5) - 1.0;
        let value = integrate_boundary(&grid, |z| {
            let u = c.bubble_values(z, 0.0);
            0.5 * (u[0].powf(q) * u[1] + u[1].powf(q) * u[0])
        })
        .unwrap();
        let c3n = 81.0 * closed_form_moment(&MomentSpec::new(4, 0.0, 2.5).unwrap()).unwrap();
        let predicted = c3n / (lambda * 2.0 * r).powi(3);
        assert!((value - predicted).abs() < 1e-2 * predicted, "{value} {predicted}");
    }

    #[test]
    fn sector_sum_matches_full_plane_grid() {
        let p = params();
        let k = 8;
        let mu = crate::geometry::mu_of(&p, k);
        let c = build_spikes(&p, k, mu, 0.31).unwrap();
        let sector = build_sector_grid(&c, 2).unwrap();
        let single = build_spikes(&p, 1, 1e-6 * mu, 0.31).unwrap();
        let opts = GridOptions {
            cutoff_factor: 10.0 * mu * 0.31,
            ..GridOptions::for_level(2).unwrap()
        };
        let whole = build_sector_grid_with(&single, &opts).unwrap();
        let f = |z: &[f64]| {
            let s: f64 = z.iter().map(|v| v * v).sum::<f64>() / (mu * mu);
            let (a, b) = (z[0] / mu, z[1] / mu);
            let angle = b.atan2(a);
            let planar = (a * a + b * b).powi(4) * (8.0 * angle).cos();
            (1.0 + s).powi(-5) * (1.0 + 0.5 * planar / (1.0 + s).powi(4))
        };
        let exact = PI * PI * mu.powi(4) / 12.0;
        let a = integrate_with_tail(&sector, f, 10.0).unwrap();
        let b = integrate_with_tail(&whole, f, 10.0).unwrap();
        assert!((a - exact).abs() < 1e-3 * exact, "{a} {exact}");
        assert!((a - b).abs() < 1e-3 * a, "{a} {b}");
    }

    #[test]
    fn moment_examples() {
        let v = closed_form_moment(&MomentSpec::new(4, 0.0, 4.0).unwrap()).unwrap();
        assert!((v - PI * PI / 6.0).abs() < 1e-14);
        let v = closed_form_moment(&MomentSpec::new(4, 0.0, 2.5).unwrap()).unwrap();
        assert!((v - 4.0 * PI * PI / 3.0).abs() < 1e-13);
        let odd = MomentSpec::new(4, 1.0, 4.0).unwrap().odd();
        assert_eq!(closed_form_moment(&odd).unwrap(), 0.0);
        assert!(matches!(
            MomentSpec::new(4, 2.0, 3.0),
            Err(Error::DivergentIntegral { .. })
        ));
        assert!((a_n(5) - 13.5 * PI * PI).abs() < 1e-10 * a_n(5));
    }

    #[test]
    fn monte_carlo_agrees_and_is_deterministic() {
        let spec = MomentSpec::new(4, 0.0, 4.0).unwrap();
        let est = monte_carlo_moment(&spec, 1_000_000, 7).unwrap();
        assert!((est.estimate - PI * PI / 6.0).abs() < 3.0 * est.standard_error);
        let again = monte_carlo_moment(&spec, 1_000_000, 7).unwrap();
        assert_eq!(est.estimate.to_bits(), again.estimate.to_bits());
        let odd = monte_carlo_moment(&spec.odd(), 100_000, 3).unwrap();
        assert!(odd.estimate.abs() < 3.0 * odd.standard_error);
    }

    #[test]
    fn monte_carlo_error_rate() {
        let spec = MomentSpec::new(4, 2.0, 4.0).unwrap();
        let errs: Vec<f64> = [10_000, 100_000, 1_000_000]
            .iter()
            .map(|&s| monte_carlo_moment(&spec, s, 11).unwrap().standard_error)
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 10f64.sqrt() / 1.5 && ratio < 10f64.sqrt() * 1.5, "{ratio}");
        }
    }

    #[test]
    fn green_convolution_reproduces_bubbles() {
        let p = params();
        let c = build_spikes(&p, 4, 30.0, 0.8).unwrap();
        let grid = build_sector_grid(&c, 1).unwrap();
        let q = two_sharp(5) - 1.0;
        let density = |z: &[f64]| c.bubble_values(z, 0.0).iter().map(|u| u.powf(q)).sum::<f64>();
        let values: Vec<f64> = (0..grid.len()).map(|b| density(grid.node(b))).collect();
        let g = boundary_green_coefficient(5);
        let x1 = c.spikes()[0].clone();
        for (offset, h) in [(0.0, 0.0), (0.7, 0.0), (3.0, 0.0), (1.0, 0.5), (20.0, 0.0)] {
            let mut y = x1.clone();
            y[2] += offset;
            let approx = g * green_convolution(&grid, &values, density(&y), &y, h);
            let exact = c.ansatz(&y, h);
            assert!((approx - exact).abs() < 2e-2 * exact, "{offset} {h} {approx} {exact}");
        }
    }

    #[test]
    fn laa2_radial_integral_at_origin() {
        let sigma = 0.5;
        let lhs = laa2_lhs(5, sigma, 0.0, 0.0);
        let exact = sphere_area(4) * gamma(sigma) * gamma(1.0) / gamma(1.0 + sigma);
        assert!((lhs - exact).abs() < 1e-3 * exact, "{lhs} {exact}");
    }

    #[test]
    fn laa2_is_finite_on_the_boundary_near_the_break() {
        for a in [1e-2, 0.5, 1.0, 37.25, 1e4] {
            for sigma in [0.2, 1.0] {
                let lhs = laa2_lhs(5, sigma, a, 0.0);
                assert!(lhs.is_finite() && lhs > 0.0, "{a} {sigma} {lhs}");
            }
        }
    }

    #[test]
    fn appendix_report_is_stable() {
        let p = params();
        let c = build_spikes(&p, 8, crate::geometry::mu_of(&p, 8), 0.31).unwrap();
        let report = verify_appendix_estimates(&p, &c, 200, 3).unwrap();
        assert_eq!(report.checks.len(), 6);
        for check in &report.checks {
            assert!(check.stable && check.passed, "{check:?}");
        }
        assert!(report.passed);
        let single = build_spikes(&p, 1, 1.0, 0.31).unwrap();
        assert!(verify_appendix_estimates(&p, &single, 200, 3).is_err());
        assert_eq!(
            verify_appendix_estimates(&p, &c, 0, 3).unwrap_err(),
            Error::EmptySamples
        );
    }

    #[test]
    fn pair_estimate_constants() {
        let p = params();
        let c = build_spikes(&p, 8, crate::geometry::mu_of(&p, 8), 0.31).unwrap();
        let zero = laa1_ratios(&c, 1.0, 1.0, 0.0, 2000, 1);
        assert!(zero.iter().all(|&r| r <= 1.0 + 1e-12));
        let one = laa1_ratios(&c, 1.0, 1.0, 1.0, 2000, 1);
        assert!(one.iter().all(|&r| r <= 2.0 + 1e-12));
    }
}
