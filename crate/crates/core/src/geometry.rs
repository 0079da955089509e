//! Half-space model geometry: stereographic transfer from the unit ball,
//! the Neumann Green's function, spike polygons, the symmetry group and the
//! sector decomposition of the boundary.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::bubbles::ProblemParams;
use crate::error::{Error, Result};
use crate::special::{norm_sq, sphere_area, unit_ball_volume};

const SINGULAR_TOL: f64 = 1e-12;
const COINCIDENT_TOL: f64 = 1e-14;
const DEGENERATE_TOL: f64 = 1e-14;

/// A point of the closed unit ball `B^N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallPoint {
    coords: Vec<f64>,
}

impl BallPoint {
    /// Builds a ball point, rejecting points outside the closed ball.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::InvalidParams("ball point needs at least two coordinates".into()));
        }
        let norm = norm_sq(&coords).sqrt();
        if !norm.is_finite() || norm > 1.0 + 1e-12 {
            return Err(Error::InvalidParams(format!("ball point has norm {norm} > 1")));
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// A point `(x̄, x_N)` of the closed upper half-space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpacePoint {
    tangential: Vec<f64>,
    height: f64,
}

impl HalfSpacePoint {
    /// Builds a half-space point; the height must be non-negative.
    pub fn new(tangential: Vec<f64>, height: f64) -> Result<Self> {
        if !(height >= 0.0) {
            return Err(Error::InvalidParams(format!("height {height} is negative")));
        }
        Ok(Self { tangential, height })
    }

    /// A point on the boundary hyperplane.
    pub fn boundary(tangential: Vec<f64>) -> Self {
        Self {
            tangential,
            height: 0.0,
        }
    }

    pub fn tangential(&self) -> &[f64] {
        &self.tangential
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    /// Ambient dimension `N`.
    pub fn dim(&self) -> usize {
        self.tangential.len() + 1
    }
}

/// Stereographic projection `Π` from the ball onto the half-space.
pub fn to_halfspace(p: &BallPoint) -> Result<HalfSpacePoint> {
    let y = p.coords();
    let (tan, yn) = y.split_at(y.len() - 1);
    let yn = yn[0];
    let tan_sq = norm_sq(tan);
    let denominator = (1.0 + yn) * (1.0 + yn) + tan_sq;
    if denominator < SINGULAR_TOL {
        return Err(Error::SingularPoint { denominator });
    }
    let tangential = tan.iter().map(|v| 4.0 * v / denominator).collect();
    let height = (2.0 * (1.0 - yn * yn - tan_sq) / denominator).max(0.0);
    Ok(HalfSpacePoint { tangential, height })
}

/// Inverse of the stereographic projection.
pub fn to_ball(q: &HalfSpacePoint) -> BallPoint {
    let xn = q.height;
    let tan_sq = norm_sq(&q.tangential);
    let e = (2.0 + xn) * (2.0 + xn) + tan_sq;
    let mut coords: Vec<f64> = q.tangential.iter().map(|v| 4.0 * v / e).collect();
    coords.push((4.0 - xn * xn - tan_sq) / e);
    BallPoint { coords }
}

/// Transfers a value of a function on the ball to the corresponding value of
/// the conformally related function at `Π(p)`.
pub fn conformal_transfer(u_ball_value: f64, p: &BallPoint) -> Result<f64> {
    let x = to_halfspace(p)?;
    let n = p.dim() as f64;
    let bracket = (2.0 + x.height).powi(2) + norm_sq(&x.tangential);
    Ok(4f64.powf((n - 2.0) / 2.0) * u_ball_value / bracket.powf((n - 2.0) / 2.0))
}

/// `G(x, y) = (|x - y|^{2-N} + |x - y^s|^{2-N}) / (ω_N (N - 2))` with `ω_N`
/// the volume of the unit `N`-ball.
pub fn greens_function(x: &HalfSpacePoint, y: &HalfSpacePoint) -> Result<f64> {
    let n = x.dim();
    if y.dim() != n {
        return Err(Error::InvalidParams("dimension mismatch".into()));
    }
    let tan_sq: f64 = x
        .tangential
        .iter()
        .zip(&y.tangential)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let direct = (tan_sq + (x.height - y.height).powi(2)).sqrt();
    if direct < COINCIDENT_TOL {
        return Err(Error::CoincidentPoints { distance: direct });
    }
    Ok(green_from_parts(n, tan_sq, x.height, y.height))
}

fn green_from_parts(n: usize, tan_sq: f64, xh: f64, yh: f64) -> f64 {
    let e = 2 - n as i32;
    let direct = (tan_sq + (xh - yh).powi(2)).sqrt();
    let mirrored = (tan_sq + (xh + yh).powi(2)).sqrt();
    (direct.powi(e) + mirrored.powi(e)) / (unit_ball_volume(n) * (n as f64 - 2.0))
}

/// Green's function normalised so that `-ΔG = δ` with zero Neumann data:
/// `greens_function / N`.
pub fn neumann_green(x: &HalfSpacePoint, y: &HalfSpacePoint) -> Result<f64> {
    Ok(greens_function(x, y)? / x.dim() as f64)
}

/// Coefficient `g_N` with `neumann_green(x, y) = g_N |x - y|^{2-N}` for
/// boundary arguments.
pub fn boundary_green_coefficient(n: usize) -> f64 {
    2.0 / ((n as f64 - 2.0) * sphere_area(n))
}

/// `k` boundary bubbles on a regular polygon of radius `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeConfig {
    n: usize,
    k: usize,
    r: f64,
    lambda: f64,
    mu: f64,
    spikes: Vec<Vec<f64>>,
}

impl SpikeConfig {
    /// Ambient dimension `N`.
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Boundary spike positions `x̄_j`, each of length `N - 1`.
    pub fn spikes(&self) -> &[Vec<f64>] {
        &self.spikes
    }

    /// Same configuration with a different radius and scale.
    pub fn with_r_lambda(&self, r: f64, lambda: f64) -> Result<Self> {
        if !(r > 0.0 && lambda > 0.0) {
            return Err(Error::InvalidParams("r and lambda must be positive".into()));
        }
        Ok(Self {
            spikes: polygon(self.n, self.k, r),
            r,
            lambda,
            ..self.clone()
        })
    }
}

/// Scaling `μ = k^{(N-2)/(N-2-m)}`.
pub fn mu_of(params: &ProblemParams, k: usize) -> f64 {
    let n = params.n() as f64;
    (k as f64).powf((n - 2.0) / (n - 2.0 - params.m()))
}

fn polygon(n: usize, k: usize, r: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|j| {
            let angle = 2.0 * PI * j as f64 / k as f64;
            let mut x = vec![0.0; n - 1];
            x[0] = r * angle.cos();
            x[1] = r * angle.sin();
            x
        })
        .collect()
}

/// Builds the spike configuration for `k` bubbles of scale `lambda` at
/// polygon radius `r`. A single bubble (`k = 1`) is allowed for
/// degenerate reference computations.
pub fn build_spikes(params: &ProblemParams, k: usize, r: f64, lambda: f64) -> Result<SpikeConfig> {
    if k == 0 {
        return Err(Error::InvalidParams("k must be at least 1".into()));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "polygon radius must be positive, got {r}"
        )));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParams(format!("lambda must be positive, got {lambda}")));
    }
    let n = params.n();
    Ok(SpikeConfig {
        n,
        k,
        r,
        lambda,
        mu: mu_of(params, k),
        spikes: polygon(n, k, r),
    })
}

/// Rotation `Q_k^times` acting on the first two tangential coordinates.
pub fn rotate(tangential: &[f64], k: usize, times: i64) -> Vec<f64> {
    let angle = 2.0 * PI * times as f64 / k as f64;
    let (s, c) = angle.sin_cos();
    let mut out = tangential.to_vec();
    out[0] = c * tangential[0] - s * tangential[1];
    out[1] = s * tangential[0] + c * tangential[1];
    out
}

/// Reflection `(y_2, …, y_{N-1}) ↦ -(y_2, …, y_{N-1})`.
pub fn reflect(tangential: &[f64]) -> Vec<f64> {
    let mut out = tangential.to_vec();
    for v in out.iter_mut().skip(1) {
        *v = -*v;
    }
    out
}

/// Index `j ∈ {1, …, k}` of the sector `Ω_j` containing `p`; boundary points
/// go to the smaller index.
pub fn sector_of(p: &HalfSpacePoint, k: usize) -> Result<usize> {
    sector_of_tangential(&p.tangential, k)
}

/// Slice form of [`sector_of`].
pub fn sector_of_tangential(tangential: &[f64], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::InvalidParams("k must be at least 1".into()));
    }
    let (a, b) = (tangential[0], tangential[1]);
    if a.abs() < DEGENERATE_TOL && b.abs() < DEGENERATE_TOL {
        return Err(Error::DegenerateDirection);
    }
    if k == 1 {
        return Ok(1);
    }
    let angle = b.atan2(a).rem_euclid(2.0 * PI);
    let width = 2.0 * PI / k as f64;
    let half = PI / k as f64;
    let nearest = ((angle / width).round() as usize) % k;
    let mut best = usize::MAX;
    for candidate in [nearest + k - 1, nearest, nearest + 1] {
        let j = candidate % k;
        let centre = width * j as f64;
        let mut gap = (angle - centre).abs();
        gap = gap.min(2.0 * PI - gap);
        if gap <= half * (1.0 + 1e-12) && j < best {
            best = j;
        }
    }
    Ok(best + 1)
}
