//! Reduced energy of the multi-bubble ansatz.
//!
//! The moment constants come from closed-form Beta integrals, the lattice
//! constant `B₄` from an extrapolated interaction sum. On top of them sit the
//! asymptotic energy `F(r, Λ)`, its derivatives, the balance point `Λ₀`, a
//! damped Newton search for the critical point in the box `D`, the energy of
//! the ansatz evaluated by quadrature and the Kazdan-Warner integral.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bubbles::{KProfile, ProblemParams};
use crate::error::{Error, Result};
use crate::geometry::{mu_of, SpikeConfig};
use crate::quadrature::{closed_form_moment, integrate_boundary, monte_carlo_moment, MomentSpec, SectorGrid};
use crate::special::{pairwise_sum, pow_sum_excess, riemann_zeta};

/// Moment constants of the energy expansion and the derived coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionConstants {
    #[serde(rename = "A_N")]
    pub a_n: f64,
    #[serde(rename = "C1N")]
    pub c1n: f64,
    #[serde(rename = "C2N")]
    pub c2n: f64,
    #[serde(rename = "C3N")]
    pub c3n: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B1")]
    pub b1: f64,
    #[serde(rename = "B2")]
    pub b2: f64,
    #[serde(rename = "B3")]
    pub b3: f64,
    #[serde(rename = "B4")]
    pub b4: f64,
}

/// The moment integrals behind each constant, as `(name, prefactor, shape)`.
fn moment_table(params: &ProblemParams) -> Result<[(&'static str, f64, MomentSpec); 4]> {
    let n = params.n();
    let nf = n as f64;
    let m = params.m();
    let d = n - 1;
    let scale = (nf - 2.0).powi(n as i32 - 1);
    Ok([
        ("A_N", scale, MomentSpec::new(d, 0.0, nf - 1.0)?),
        ("C1N", scale, MomentSpec::new(d, m, nf - 1.0)?),
        (
            "C2N",
            0.5 * m * (m - 1.0) * scale,
            MomentSpec::new(d, m - 2.0, nf - 1.0)?,
        ),
        ("C3N", scale, MomentSpec::new(d, 0.0, nf / 2.0)?),
    ])
}

/// Closed-form constants; `B₄` is the extrapolated lattice limit.
pub fn compute_constants(params: &ProblemParams) -> Result<ExpansionConstants> {
    let table = moment_table(params)?;
    let mut values = [0.0; 4];
    for (slot, (_, prefactor, spec)) in values.iter_mut().zip(table.iter()) {
        *slot = prefactor * closed_form_moment(spec)?;
    }
    let [a_n, c1n, c2n, c3n] = values;
    let q = params.two_sharp();
    Ok(ExpansionConstants {
        a_n,
        c1n,
        c2n,
        c3n,
        a: (0.5 - 1.0 / q) * a_n,
        b1: c1n / q,
        b2: c2n / q,
        b3: c3n / 2.0,
        b4: b4_limit(params.n(), &default_b4_sequence())?,
    })
}

/// Closed form versus Monte-Carlo estimate for one moment constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantCheck {
    pub name: String,
    pub closed_form: f64,
    pub monte_carlo: f64,
    pub standard_error: f64,
    /// `|closed - estimate| / standard_error`.
    pub z_score: f64,
}

/// Re-derives `A_N, C1N, C2N, C3N` by Monte-Carlo with `samples` draws each.
pub fn cross_check_constants(params: &ProblemParams, samples: usize, seed: u64) -> Result<Vec<ConstantCheck>> {
    moment_table(params)?
        .iter()
        .enumerate()
        .map(|(i, (name, prefactor, spec))| {
            let exact = prefactor * closed_form_moment(spec)?;
            let mc = monte_carlo_moment(spec, samples, seed.wrapping_add(i as u64))?;
            let estimate = prefactor * mc.estimate;
            let se = prefactor * mc.standard_error;
            Ok(ConstantCheck {
                name: (*name).to_string(),
                closed_form: exact,
                monte_carlo: estimate,
                standard_error: se,
                z_score: (exact - estimate).abs() / se,
            })
        })
        .collect()
}

/// `Σ_{j=1}^{k-1} csc^p(jπ/k)`, pairing `j` with `k - j` and summing the
/// small terms first.
fn csc_power_sum(k: usize, p: f64) -> f64 {
    let kf = k as f64;
    let mut terms: Vec<f64> = (1..=(k - 1) / 2)
        .map(|j| 2.0 * (j as f64 * PI / kf).sin().powf(-p))
        .collect();
    if k.is_multiple_of(2) {
        terms.push(1.0);
    }
    terms.reverse();
    pairwise_sum(&terms)
}

/// `Σ_{j=2}^{k} |x_j - x_1|^{2-N}` for `k` points on a regular polygon of
/// radius `r`; zero when `k < 2`.
pub fn interaction_sum(k: usize, r: f64, n: usize) -> f64 {
    if k < 2 {
        return 0.0;
    }
    let p = n as f64 - 2.0;
    (2.0 * r).powf(-p) * csc_power_sum(k, p)
}

/// The polygon sizes `2⁶, 2⁷, …, 2¹⁴`.
pub fn default_b4_sequence() -> Vec<usize> {
    (6..=14).map(|e| 1usize << e).collect()
}

/// `2ζ(N-2)/(2π)^{N-2}`, the limit of `interaction_sum(k, 1, N) k^{2-N}`.
pub fn b4_zeta(n: usize) -> f64 {
    let p = n as f64 - 2.0;
    2.0 * riemann_zeta(p) / (2.0 * PI).powf(p)
}

fn correction_basis(p: usize, k: f64, k0: f64) -> Vec<f64> {
    let x = k0 / k;
    let log = (k / k0).ln();
    let mut row = vec![1.0];
    let mut power = 1.0;
    for _ in 0..(if p % 2 == 1 { 2 } else { 3 }) {
        power *= x * x;
        row.push(power);
        if p % 2 == 1 {
            row.push(power * log);
        }
    }
    row
}

/// Successive extrapolants of `interaction_sum(k, 1, N) k^{2-N}`. Each one
/// fits a constant plus the even-power corrections (with their logarithmic
/// companions when `N` is odd) through a window of consecutive entries.
pub fn b4_extrapolants(n: usize, k_sequence: &[usize]) -> Result<Vec<f64>> {
    if n < 3 {
        return Err(Error::InvalidParams(format!("the lattice sum needs N ≥ 3, got {n}")));
    }
    let p = n - 2;
    let width = correction_basis(p, 2.0, 1.0).len();
    if k_sequence.len() < width + 1 || k_sequence.windows(2).any(|w| w[1] <= w[0]) || k_sequence[0] < 2 {
        return Err(Error::InvalidParams(format!(
            "need at least {} strictly increasing polygon sizes ≥ 2",
            width + 1
        )));
    }
    let scaled: Vec<f64> = k_sequence
        .iter()
        .map(|&k| interaction_sum(k, 1.0, n) * (k as f64).powi(-(p as i32)))
        .collect();
    let mut out = Vec::with_capacity(k_sequence.len() - width + 1);
    for start in 0..=(k_sequence.len() - width) {
        let k0 = k_sequence[start] as f64;
        let rows: Vec<f64> = k_sequence[start..start + width]
            .iter()
            .flat_map(|&k| correction_basis(p, k as f64, k0))
            .collect();
        let a = DMatrix::from_row_slice(width, width, &rows);
        let b = DVector::from_column_slice(&scaled[start..start + width]);
        let sol = a.lu().solve(&b).ok_or(Error::SingularSystem {
            condition: f64::INFINITY,
        })?;
        out.push(sol[0]);
    }
    Ok(out)
}

/// Extrapolated `B₄ = lim interaction_sum(k, 1, N) k^{2-N}`.
pub fn b4_limit(n: usize, k_sequence: &[usize]) -> Result<f64> {
    if k_sequence.last().copied().unwrap_or(0) < 1 << 14 {
        return Err(Error::InvalidParams(
            "the last polygon size must be at least 2^14".into(),
        ));
    }
    let ex = b4_extrapolants(n, k_sequence)?;
    for w in ex.windows(2) {
        let difference = (w[1] - w[0]).abs() / w[1].abs();
        if difference > 1e-6 {
            return Err(Error::NonConvergent { difference });
        }
    }
    Ok(*ex.last().expect("at least two extrapolants"))
}

/// How the interaction term of `F` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InteractionForm {
    /// The finite polygon sum.
    #[default]
    Exact,
    /// The leading lattice asymptotics `B₄ k^{N-2} r^{2-N}`.
    Asymptotic,
}

/// `s` in `Σ_j |x_j - x_1|^{2-N} = s r^{2-N}`.
fn interaction_coefficient(c: &ExpansionConstants, n: usize, k: usize, form: InteractionForm) -> f64 {
    match form {
        InteractionForm::Exact => interaction_sum(k, 1.0, n),
        InteractionForm::Asymptotic => c.b4 * (k as f64).powi(n as i32 - 2),
    }
}

/// Value, gradient and Hessian of `F/k` in `(r, Λ)`.
#[derive(Debug, Clone, Copy)]
struct Reduced {
    value: f64,
    gap: f64,
    grad: [f64; 2],
    hess: [[f64; 2]; 2],
}

fn reduced(
    c: &ExpansionConstants,
    params: &ProblemParams,
    k: usize,
    r: f64,
    lambda: f64,
    form: InteractionForm,
) -> Reduced {
    let n = params.n();
    let nf = n as f64;
    let m = params.m();
    let c0 = params.c0();
    let mu = mu_of(params, k);
    let mum = mu.powf(-m);
    let gap = mu * params.r0() - r;
    let s = interaction_coefficient(c, n, k, form);
    let p1 = c0 * c.b1 * lambda.powf(-m) * mum;
    let p2 = c0 * c.b2 * lambda.powf(2.0 - m) * mum;
    let p3 = c.b3 * s * r.powf(2.0 - nf) * lambda.powf(2.0 - nf);
    Reduced {
        value: c.a + (p1 + p2 * gap * gap - p3),
        gap: p1 + p2 * gap * gap - p3,
        grad: [
            -2.0 * p2 * gap + (nf - 2.0) * p3 / r,
            -m * p1 / lambda + (2.0 - m) * p2 * gap * gap / lambda + (nf - 2.0) * p3 / lambda,
        ],
        hess: [
            [
                2.0 * p2 - (nf - 2.0) * (nf - 1.0) * p3 / (r * r),
                -2.0 * (2.0 - m) * p2 * gap / lambda - (nf - 2.0) * (nf - 2.0) * p3 / (r * lambda),
            ],
            [
                -2.0 * (2.0 - m) * p2 * gap / lambda - (nf - 2.0) * (nf - 2.0) * p3 / (r * lambda),
                m * (m + 1.0) * p1 / (lambda * lambda) + (2.0 - m) * (1.0 - m) * p2 * gap * gap / (lambda * lambda)
                    - (nf - 2.0) * (nf - 1.0) * p3 / (lambda * lambda),
            ],
        ],
    }
}

/// Main terms of the reduced energy
/// `F = k(A + c₀B₁/(Λ^mμ^m) + c₀B₂(μr₀-r)²/(Λ^{m-2}μ^m) - B₃ Σ_j 1/(Λ^{N-2}|x_1-x_j|^{N-2}))`.
pub fn f_asym(
    constants: &ExpansionConstants,
    params: &ProblemParams,
    k: usize,
    r: f64,
    lambda: f64,
    form: InteractionForm,
) -> f64 {
    k as f64 * reduced(constants, params, k, r, lambda, form).value
}

/// `∂F/∂Λ` of [`f_asym`].
pub fn df_dlambda_asym(
    constants: &ExpansionConstants,
    params: &ProblemParams,
    k: usize,
    r: f64,
    lambda: f64,
    form: InteractionForm,
) -> f64 {
    k as f64 * reduced(constants, params, k, r, lambda, form).grad[1]
}

/// `∂F/∂r` of [`f_asym`].
pub fn df_dr_asym(
    constants: &ExpansionConstants,
    params: &ProblemParams,
    k: usize,
    r: f64,
    lambda: f64,
    form: InteractionForm,
) -> f64 {
    k as f64 * reduced(constants, params, k, r, lambda, form).grad[0]
}

/// `Λ₀ = (B₃B₄(N-2) / (c₀B₁ m r₀^{N-2}))^{1/(N-2-m)}`.
pub fn lambda0(constants: &ExpansionConstants, params: &ProblemParams) -> f64 {
    let nf = params.n() as f64;
    let m = params.m();
    let ratio =
        constants.b3 * constants.b4 * (nf - 2.0) / (params.c0() * constants.b1 * m * params.r0().powf(nf - 2.0));
    ratio.powf(1.0 / (nf - 2.0 - m))
}

/// The box `D` around `(μr₀, Λ₀)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub r_min: f64,
    pub r_max: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Domain {
    /// `[μr₀ ∓ μ^{-θ̄}] × [Λ₀ ∓ μ^{-3θ̄/2}]`.
    pub fn new(params: &ProblemParams, k: usize, lambda0: f64, theta_bar: f64) -> Self {
        let mu = mu_of(params, k);
        let dr = mu.powf(-theta_bar);
        let dl = mu.powf(-1.5 * theta_bar);
        Self {
            r_min: mu * params.r0() - dr,
            r_max: mu * params.r0() + dr,
            lambda_min: lambda0 - dl,
            lambda_max: lambda0 + dl,
        }
    }

    pub fn contains(&self, r: f64, lambda: f64) -> bool {
        (self.r_min..=self.r_max).contains(&r) && (self.lambda_min..=self.lambda_max).contains(&lambda)
    }

    fn project(&self, r: f64, lambda: f64) -> (f64, f64) {
        (
            r.clamp(self.r_min, self.r_max),
            lambda.clamp(self.lambda_min, self.lambda_max),
        )
    }
}

/// Settings of the critical-point search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPointOptions {
    pub theta_bar: f64,
    pub k_min: usize,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for CriticalPointOptions {
    fn default() -> Self {
        Self {
            theta_bar: 0.1,
            k_min: 8,
            max_iterations: 100,
            max_halvings: 30,
        }
    }
}

/// Outcome of the Newton search on `∇F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPointReport {
    pub k: usize,
    pub r_star: f64,
    pub lambda_star: f64,
    pub domain: Domain,
    pub converged: bool,
    pub gradient_norm: f64,
    pub f_value: f64,
    pub iterations: usize,
}

/// Damped Newton search with default options.
pub fn find_critical_point(
    constants: &ExpansionConstants,
    params: &ProblemParams,
    k: usize,
) -> Result<CriticalPointReport> {
    find_critical_point_with(constants, params, k, &CriticalPointOptions::default())
}

/// Damped Newton on `∇F` (exact interaction sum) from `(μr₀, Λ₀)`, with step
/// halving on gradient growth and projection onto `D`. Non-convergence is
/// reported through the `converged` flag.
pub fn find_critical_point_with(
    constants: &ExpansionConstants,
    params: &ProblemParams,
    k: usize,
    opts: &CriticalPointOptions,
) -> Result<CriticalPointReport> {
    if k < opts.k_min {
        return Err(Error::InvalidParams(format!("k = {k} is below k_min = {}", opts.k_min)));
    }
    let form = InteractionForm::Exact;
    let l0 = lambda0(constants, params);
    let domain = Domain::new(params, k, l0, opts.theta_bar);
    let mu = mu_of(params, k);
    let scale = mu.powf(params.m());
    let centre = mu * params.r0();
    let eval = |t: f64, l: f64| reduced(constants, params, k, centre + t, l, form);
    let norm = |g: [f64; 2]| scale * g[0].hypot(g[1]);
    let (mut t, mut l) = (0.0, l0.clamp(domain.lambda_min, domain.lambda_max));
    let mut state = eval(t, l);
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let h = state.hess;
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let dt = -(h[1][1] * state.grad[0] - h[0][1] * state.grad[1]) / det;
        let dl = -(h[0][0] * state.grad[1] - h[1][0] * state.grad[0]) / det;
        let current = norm(state.grad);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let (r_new, l_new) = domain.project(centre + t + step * dt, l + step * dl);
            let trial = eval(r_new - centre, l_new);
            if norm(trial.grad) <= current {
                accepted = Some((r_new - centre, l_new, trial));
                break;
            }
            step *= 0.5;
        }
        let Some((t_new, l_new, trial)) = accepted else {
            break;
        };
        let moved = (t_new - t).abs() * mu + (l_new - l).abs();
        t = t_new;
        l = l_new;
        state = trial;
        if moved < 1e-14 || state.grad == [0.0, 0.0] {
            break;
        }
    }
    let kf = k as f64;
    let gradient_norm = kf * state.grad[0].hypot(state.grad[1]);
    Ok(CriticalPointReport {
        k,
        r_star: centre + t,
        lambda_star: l,
        domain,
        converged: gradient_norm < 1e-10 * kf && domain.contains(centre + t, l),
        gradient_norm,
        f_value: kf * state.value,
        iterations,
    })
}

/// Pieces of the ansatz energy `I(W)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyComponents {
    /// `Σ_i ∫U_i^{2#} = k A_N`.
    pub self_part: f64,
    /// `Σ_{i≠j} ∫U_i^{2#-1} U_j`.
    pub interaction: f64,
    /// `∫(W^{2#} - Σ U_i^{2#})`.
    pub excess: f64,
    /// `∫(1 - K(|y|/μ)) W^{2#}`.
    pub curvature: f64,
    /// `I(W)`.
    pub total: f64,
    /// `I(W)/k - A`, assembled from the small pieces.
    pub gap_per_spike: f64,
}

/// Quadrature energy of the ansatz, split into its parts.
pub fn energy_components(
    constants: &ExpansionConstants,
    config: &SpikeConfig,
    profile: &KProfile,
    grid: &SectorGrid,
) -> Result<EnergyComponents> {
    let n = config.dim();
    let q = 2.0 * (n as f64 - 1.0) / (n as f64 - 2.0);
    let mu = config.mu();
    let k = config.k() as f64;
    let interaction = integrate_boundary(grid, |z| {
        let u = config.bubble_values(z, 0.0);
        let mut prefix = 0.0;
        let mut suffix: Vec<f64> = vec![0.0; u.len() + 1];
        for i in (0..u.len()).rev() {
            suffix[i] = suffix[i + 1] + u[i];
        }
        let mut acc = 0.0;
        for (i, &ui) in u.iter().enumerate() {
            acc += ui.powf(q - 1.0) * (prefix + suffix[i + 1]);
            prefix += ui;
        }
        acc
    })?;
    let excess = integrate_boundary(grid, |z| pow_sum_excess(&config.bubble_values(z, 0.0), q))?;
    let curvature = match profile {
        KProfile::Constant { value } => (1.0 - value) * (k * constants.a_n + excess),
        _ => integrate_boundary(grid, |z| {
            let radius = z.iter().map(|v| v * v).sum::<f64>().sqrt() / mu;
            let w = config.ansatz(z, 0.0);
            profile.one_minus(radius) * w.powf(q)
        })?,
    };
    let self_part = k * constants.a_n;
    let total = 0.5 * (self_part + interaction) - (self_part + excess - curvature) / q;
    Ok(EnergyComponents {
        self_part,
        interaction,
        excess,
        curvature,
        total,
        gap_per_spike: (0.5 * interaction - (excess - curvature) / q) / k,
    })
}

/// `I(W) = ½∫|DW|² - (1/2#)∫K W^{2#}` with the gradient term reduced to
/// boundary integrals and the self terms in closed form.
pub fn energy_exact(
    constants: &ExpansionConstants,
    config: &SpikeConfig,
    profile: &KProfile,
    grid: &SectorGrid,
) -> Result<f64> {
    Ok(energy_components(constants, config, profile, grid)?.total)
}

/// `F/k - A` at `(r, Λ)`: the B-terms the quadrature gap is compared with.
pub fn predicted_gap(constants: &ExpansionConstants, params: &ProblemParams, k: usize, r: f64, lambda: f64) -> f64 {
    reduced(constants, params, k, r, lambda, InteractionForm::Exact).gap
}

/// `∫ K'(|y|/μ) (|y|/μ) u^{2#}` with `u = W` or `u = W + φ` when node
/// values of a correction are supplied; the integrand uses `|u|^{2#}`.
pub fn kazdan_warner(
    config: &SpikeConfig,
    profile: &KProfile,
    grid: &SectorGrid,
    correction: Option<&[f64]>,
) -> Result<f64> {
    if let Some(phi) = correction {
        if phi.len() != grid.len() {
            return Err(Error::InvalidParams(format!(
                "correction has {} values for {} nodes",
                phi.len(),
                grid.len()
            )));
        }
    }
    let n = config.dim();
    let q = 2.0 * (n as f64 - 1.0) / (n as f64 - 2.0);
    let mu = config.mu();
    let terms: Vec<f64> = (0..grid.len())
        .map(|i| {
            let z = grid.node(i);
            let s = z.iter().map(|v| v * v).sum::<f64>().sqrt() / mu;
            let slope = profile.derivative(s);
            if slope == 0.0 {
                return 0.0;
            }
            let u = config.ansatz(z, 0.0) + correction.map_or(0.0, |phi| phi[i]);
            grid.weight(i) * slope * s * u.abs().powf(q)
        })
        .collect();
    Ok(config.k() as f64 * pairwise_sum(&terms))
}

/// `∫|u|^{2#}` on the same grid, the normalisation of [`kazdan_warner`].
pub fn critical_mass(config: &SpikeConfig, grid: &SectorGrid, correction: Option<&[f64]>) -> Result<f64> {
    let n = config.dim();
    let q = 2.0 * (n as f64 - 1.0) / (n as f64 - 2.0);
    let terms: Vec<f64> = (0..grid.len())
        .map(|i| {
            let u = config.ansatz(grid.node(i), 0.0) + correction.map_or(0.0, |phi| phi[i]);
            grid.weight(i) * u.abs().powf(q)
        })
        .collect();
    Ok(config.k() as f64 * pairwise_sum(&terms))
}
