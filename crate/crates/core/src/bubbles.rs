//! Bubble family, multi-bubble ansatz, linearization kernels, curvature
//! profile, residual, nonlinearity and the two weighted sup-norms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{HalfSpacePoint, SpikeConfig};
use crate::special::{norm_sq, pow1p_m1, pow_sum_excess, signed_pow};

/// Fixed exponents and constants of the problem: dimension `N`, flatness
/// order `m`, the curvature profile constants `c₀, r₀, θ, δ` and the norm
/// exponents `τ, σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ProblemParams {
    n: usize,
    m: f64,
    c0: f64,
    r0: f64,
    theta: f64,
    delta: f64,
    tau: f64,
    sigma: f64,
}

/// Unvalidated serialized form of [`ProblemParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawParams {
    #[serde(rename = "N")]
    pub n: usize,
    pub m: f64,
    pub c0: f64,
    pub r0: f64,
    pub theta: f64,
    pub delta: f64,
    pub tau: f64,
    pub sigma: f64,
}

impl Default for RawParams {
    fn default() -> Self {
        Self {
            n: 5,
            m: 2.0,
            c0: 1.0,
            r0: 1.0,
            theta: 0.5,
            delta: 0.5,
            tau: 0.05,
            sigma: 0.2,
        }
    }
}

impl TryFrom<RawParams> for ProblemParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        ProblemParams::new(raw.n, raw.m, raw.c0, raw.r0, raw.theta, raw.delta, raw.tau, raw.sigma)
    }
}

impl From<ProblemParams> for RawParams {
    fn from(p: ProblemParams) -> Self {
        Self {
            n: p.n,
            m: p.m,
            c0: p.c0,
            r0: p.r0,
            theta: p.theta,
            delta: p.delta,
            tau: p.tau,
            sigma: p.sigma,
        }
    }
}

impl Default for ProblemParams {
    fn default() -> Self {
        RawParams::default().try_into().expect("defaults are valid")
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl ProblemParams {
    /// Validates every range constraint and builds the parameter set.
    #[allow(clippy::too_many_arguments)]
    pub fn new(n: usize, m: f64, c0: f64, r0: f64, theta: f64, delta: f64, tau: f64, sigma: f64) -> Result<Self> {
        if n < 5 {
            return Err(Error::InvalidParams(format!("N must be at least 5, got {n}")));
        }
        let nf = n as f64;
        if !(m >= 2.0 && m < nf - 2.0) {
            return Err(Error::InvalidParams(format!(
                "m must lie in [2, N-2) = [2, {}), got {m}",
                nf - 2.0
            )));
        }
        positive("c0", c0)?;
        positive("r0", r0)?;
        positive("theta", theta)?;
        positive("delta", delta)?;
        let tau_max = 1.0 / (2.0 * (nf - 2.0));
        if !(tau > 0.0 && tau < tau_max) {
            return Err(Error::InvalidParams(format!(
                "tau must lie in (0, 1/(2(N-2))) = (0, {tau_max}), got {tau}"
            )));
        }
        let ratio = m / (nf - 2.0);
        let sigma_max = ratio * (ratio - tau);
        if !(sigma > 0.0 && sigma < sigma_max) {
            return Err(Error::InvalidParams(format!(
                "sigma must lie in (0, (m/(N-2))(m/(N-2) - tau)) = (0, {sigma_max}), got {sigma}"
            )));
        }
        Ok(Self {
            n,
            m,
            c0,
            r0,
            theta,
            delta,
            tau,
            sigma,
        })
    }

    /// Ambient dimension `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Critical trace exponent `2# = 2(N-1)/(N-2)`.
    pub fn two_sharp(&self) -> f64 {
        two_sharp(self.n)
    }

    /// Weight exponent of `‖·‖*`: `N/2 - m/(N-2) + τ`.
    pub fn star_exponent(&self) -> f64 {
        let nf = self.n as f64;
        nf / 2.0 - self.m / (nf - 2.0) + self.tau
    }

    /// Weight exponent of `‖·‖**`: `(N+2)/2 - m/(N-2) + τ`.
    pub fn dstar_exponent(&self) -> f64 {
        self.star_exponent() + 1.0
    }

    /// Same parameters with a different dimension and flatness order.
    pub fn with_dimension(&self, n: usize, m: f64) -> Result<Self> {
        let nf = n as f64;
        let tau = self.tau.min(0.5 / (2.0 * (nf - 2.0)));
        let ratio = m / (nf - 2.0);
        let sigma = self.sigma.min(0.5 * ratio * (ratio - tau));
        Self::new(n, m, self.c0, self.r0, self.theta, self.delta, tau, sigma)
    }
}

/// `2# = 2(N-1)/(N-2)`.
pub fn two_sharp(n: usize) -> f64 {
    let nf = n as f64;
    2.0 * (nf - 1.0) / (nf - 2.0)
}

/// Radial curvature profile `K(r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KProfile {
    /// `K ≡ value`.
    Constant { value: f64 },
    /// `K(r) = 1 - c₀|r - r₀|^m` for `|r - r₀| ≤ δ`, continued by the constant
    /// `max(1 - c₀δ^m, 0.1)` outside.
    LocalMax { c0: f64, r0: f64, m: f64, delta: f64 },
    /// `K(r) = 1 + slope · r / (1 + r)`.
    Monotone { slope: f64 },
}

const K_FLOOR: f64 = 0.1;

impl KProfile {
    /// Constant profile; the value must be positive.
    pub fn constant(value: f64) -> Result<Self> {
        positive("constant curvature", value)?;
        Ok(Self::Constant { value })
    }

    /// Local maximum profile built from the problem constants.
    pub fn local_max(params: &ProblemParams) -> Self {
        Self::LocalMax {
            c0: params.c0(),
            r0: params.r0(),
            m: params.m(),
            delta: params.delta(),
        }
    }

    /// Monotone profile; `slope > -1` keeps it positive.
    pub fn monotone(slope: f64) -> Result<Self> {
        if !(slope > -1.0 && slope.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "monotone slope must exceed -1, got {slope}"
            )));
        }
        Ok(Self::Monotone { slope })
    }

    /// `K(radius)`.
    pub fn eval(&self, radius: f64) -> f64 {
        match *self {
            Self::Constant { value } => value,
            _ => 1.0 - self.one_minus(radius),
        }
    }

    /// `1 - K(radius)`, evaluated without cancellation.
    pub fn one_minus(&self, radius: f64) -> f64 {
        match *self {
            Self::Constant { value } => 1.0 - value,
            Self::LocalMax { c0, r0, m, delta } => {
                let d = (radius - r0).abs();
                if d <= delta {
                    c0 * d.powf(m)
                } else {
                    (c0 * delta.powf(m)).min(1.0 - K_FLOOR)
                }
            }
            Self::Monotone { slope } => -slope * radius / (1.0 + radius),
        }
    }

    /// `K'(radius)`.
    pub fn derivative(&self, radius: f64) -> f64 {
        match *self {
            Self::Constant { .. } => 0.0,
            Self::LocalMax { c0, r0, m, delta } => {
                let d = radius - r0;
                if d.abs() <= delta {
                    -c0 * m * signed_pow(d, m - 1.0)
                } else {
                    0.0
                }
            }
            Self::Monotone { slope } => slope / ((1.0 + radius) * (1.0 + radius)),
        }
    }
}

/// Evaluates `K_eval(profile, radius)`.
pub fn k_eval(profile: &KProfile, radius: f64) -> f64 {
    profile.eval(radius)
}

/// `x^{j/2}` for integer `j ≥ 0`.
#[inline]
pub(crate) fn pow_half(x: f64, j: usize) -> f64 {
    if j.is_multiple_of(2) {
        x.powi((j / 2) as i32)
    } else {
        x.powi((j / 2) as i32) * x.sqrt()
    }
}

/// Normalisation `(N-2)^{(N-2)/2}` of the bubble.
pub fn bubble_constant(n: usize) -> f64 {
    pow_half(n as f64 - 2.0, n - 2)
}

/// `U_{ζ,Λ}(x̄, h) = (N-2)^{(N-2)/2} [Λ / ((1+Λh)² + Λ²|x̄-ζ̄|²)]^{(N-2)/2}`
/// from the squared tangential distance.
#[inline]
pub(crate) fn bubble_from_dist_sq(n: usize, lambda: f64, dist_sq: f64, height: f64) -> f64 {
    let den = (1.0 + lambda * height).powi(2) + lambda * lambda * dist_sq;
    bubble_constant(n) * pow_half(lambda / den, n - 2)
}

/// A single bubble `U_{ζ,Λ}` centred at a boundary point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleField {
    center: Vec<f64>,
    lambda: f64,
}

impl BubbleField {
    pub fn new(center: Vec<f64>, lambda: f64) -> Result<Self> {
        positive("lambda", lambda)?;
        Ok(Self { center, lambda })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// `U_{ζ,Λ}(p)`.
pub fn bubble_eval(b: &BubbleField, p: &HalfSpacePoint) -> f64 {
    let d2: f64 = p
        .tangential()
        .iter()
        .zip(&b.center)
        .map(|(a, c)| (a - c) * (a - c))
        .sum();
    bubble_from_dist_sq(p.dim(), b.lambda, d2, p.height())
}

impl SpikeConfig {
    /// Writes `U_{x_j,Λ}(p)` for every spike into `out`.
    pub fn bubble_values_into(&self, tangential: &[f64], height: f64, out: &mut Vec<f64>) {
        out.clear();
        let n = self.dim();
        for x in self.spikes() {
            let d2: f64 = tangential.iter().zip(x).map(|(a, c)| (a - c) * (a - c)).sum();
            out.push(bubble_from_dist_sq(n, self.lambda(), d2, height));
        }
    }

    /// `U_{x_j,Λ}(p)` for every spike.
    pub fn bubble_values(&self, tangential: &[f64], height: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.k());
        self.bubble_values_into(tangential, height, &mut out);
        out
    }

    /// `W_{r,Λ}(p) = Σ_j U_{x_j,Λ}(p)`.
    pub fn ansatz(&self, tangential: &[f64], height: f64) -> f64 {
        self.bubble_values(tangential, height).iter().sum()
    }

    /// Kernel `Z_{i,j}` at `(tangential, height)`; `j = 1` is the radial
    /// derivative, `j = 2` the scale derivative. `i` is zero based.
    pub fn kernel(&self, i: usize, j: usize, tangential: &[f64], height: f64) -> f64 {
        let n = self.dim() as f64;
        let lambda = self.lambda();
        let x = &self.spikes()[i];
        let d2: f64 = tangential.iter().zip(x).map(|(a, c)| (a - c) * (a - c)).sum();
        let den = (1.0 + lambda * height).powi(2) + lambda * lambda * d2;
        let u = bubble_from_dist_sq(self.dim(), lambda, d2, height);
        if j == 1 {
            let r = self.r();
            let dot: f64 = tangential.iter().zip(x).map(|(a, c)| (a - c) * c / r).sum();
            u * (n - 2.0) * lambda * lambda * dot / den
        } else {
            let num = 1.0 - lambda * lambda * height * height - lambda * lambda * d2;
            u * (n - 2.0) / (2.0 * lambda) * num / den
        }
    }
}

/// `W_{r,Λ}(p)`.
pub fn ansatz_eval(config: &SpikeConfig, p: &HalfSpacePoint) -> f64 {
    config.ansatz(p.tangential(), p.height())
}

/// `Z_{i,j}(p)` for a zero-based spike index `i` and `j ∈ {1, 2}`.
pub fn kernel_z(config: &SpikeConfig, i: usize, j: usize, p: &HalfSpacePoint) -> Result<f64> {
    if j != 1 && j != 2 {
        return Err(Error::InvalidParams(format!("kernel index j must be 1 or 2, got {j}")));
    }
    if i >= config.k() {
        return Err(Error::InvalidParams(format!(
            "spike index {i} out of range for k = {}",
            config.k()
        )));
    }
    Ok(config.kernel(i, j, p.tangential(), p.height()))
}

/// Residual `R = Σ_j U_j^{2#-1} - K(|y|/μ) W^{2#-1}` at a boundary point,
/// from pre-computed bubble values.
pub fn residual_from_values(values: &[f64], one_minus_k: f64, q: f64) -> f64 {
    let w: f64 = values.iter().sum();
    one_minus_k * w.powf(q) - pow_sum_excess(values, q)
}

/// Residual `R(p)` at the boundary point with tangential coordinates of `p`.
pub fn residual_eval(config: &SpikeConfig, profile: &KProfile, p: &HalfSpacePoint) -> f64 {
    let y = p.tangential();
    let values = config.bubble_values(y, 0.0);
    let q = two_sharp(config.dim()) - 1.0;
    residual_from_values(&values, profile.one_minus(norm_sq(y).sqrt() / config.mu()), q)
}

/// `(W+φ)^q - W^q - q W^{q-1} φ` with the odd power convention.
pub fn nonlinear_part(w: f64, phi: f64, q: f64) -> f64 {
    if w <= 0.0 {
        return signed_pow(w + phi, q) - signed_pow(w, q);
    }
    let x = phi / w;
    if x.abs() < 1e-3 {
        let c2 = q * (q - 1.0) / 2.0;
        let c3 = c2 * (q - 2.0) / 3.0;
        let c4 = c3 * (q - 3.0) / 4.0;
        let c5 = c4 * (q - 4.0) / 5.0;
        w.powf(q) * x * x * (c2 + x * (c3 + x * (c4 + x * c5)))
    } else if x > -1.0 {
        w.powf(q) * (pow1p_m1(x, q) - q * x)
    } else {
        signed_pow(w + phi, q) - w.powf(q) - q * w.powf(q - 1.0) * phi
    }
}

/// `N(φ) = K(|y|/μ)[(W+φ)^{2#-1} - W^{2#-1} - (2#-1)W^{2#-2}φ]`.
pub fn nonlinearity_eval(config: &SpikeConfig, profile: &KProfile, p: &HalfSpacePoint, phi_value: f64) -> f64 {
    let y = p.tangential();
    let w = config.ansatz(y, 0.0);
    let q = two_sharp(config.dim()) - 1.0;
    profile.eval(norm_sq(y).sqrt() / config.mu()) * nonlinear_part(w, phi_value, q)
}

/// `Σ_j (1 + |p - x_j|)^{-exponent}`.
pub fn weight_sum(config: &SpikeConfig, tangential: &[f64], height: f64, exponent: f64) -> f64 {
    config
        .spikes()
        .iter()
        .map(|x| {
            let d2: f64 = tangential.iter().zip(x).map(|(a, c)| (a - c) * (a - c)).sum::<f64>() + height * height;
            (1.0 + d2.sqrt()).powf(-exponent)
        })
        .sum()
}

/// Weighted sup over explicit samples `(tangential, height, value)`.
pub fn weighted_sup<'a, I>(config: &SpikeConfig, exponent: f64, samples: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a [f64], f64, f64)>,
{
    let mut best: Option<f64> = None;
    for (tan, h, v) in samples {
        let ratio = v.abs() / weight_sum(config, tan, h, exponent);
        best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
    }
    best.ok_or(Error::EmptySamples)
}

/// Sampled `‖φ‖*`, a lower bound for the true weighted sup.
pub fn norm_star(config: &SpikeConfig, params: &ProblemParams, samples: &[(HalfSpacePoint, f64)]) -> Result<f64> {
    weighted_sup(
        config,
        params.star_exponent(),
        samples.iter().map(|(p, v)| (p.tangential(), p.height(), *v)),
    )
}

/// Sampled `‖h‖**` over boundary samples.
pub fn norm_dstar(config: &SpikeConfig, params: &ProblemParams, samples: &[(HalfSpacePoint, f64)]) -> Result<f64> {
    if samples.iter().any(|(p, _)| p.height() != 0.0) {
        return Err(Error::InvalidParams(
            "the ** norm is sampled on boundary points only".into(),
        ));
    }
    weighted_sup(
        config,
        params.dstar_exponent(),
        samples.iter().map(|(p, v)| (p.tangential(), 0.0, *v)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_spikes, reflect, rotate};
    use proptest::prelude::*;

    fn params() -> ProblemParams {
        ProblemParams::default()
    }

    fn boundary(v: Vec<f64>) -> HalfSpacePoint {
        HalfSpacePoint::boundary(v)
    }

    #[test]
    fn parameter_validation() {
        assert!(ProblemParams::new(4, 2.0, 1.0, 1.0, 0.5, 0.5, 0.05, 0.2).is_err());
        assert!(ProblemParams::new(5, 3.0, 1.0, 1.0, 0.5, 0.5, 0.05, 0.2).is_err());
        assert!(ProblemParams::new(5, 1.5, 1.0, 1.0, 0.5, 0.5, 0.05, 0.2).is_err());
        let err = ProblemParams::new(5, 2.0, 1.0, 1.0, 0.5, 0.5, 1.0 / 6.0, 0.2).unwrap_err();
        assert!(err.to_string().contains("tau"));
        assert!(ProblemParams::new(5, 2.0, 1.0, 1.0, 0.5, 0.5, 0.05, 0.5).is_err());
        let p = params();
        assert!((p.two_sharp() - 8.0 / 3.0).abs() < 1e-15);
        assert!(p.two_sharp() > 2.0 && p.two_sharp() < 3.0);
    }

    #[test]
    fn params_round_trip_through_json() {
        let p = params();
        let text = serde_json::to_string(&p).unwrap();
        let back: ProblemParams = serde_json::from_str(&text).unwrap();
        assert_eq!(p, back);
        let bad = text.replace("\"tau\":0.05", "\"tau\":0.5");
        assert!(serde_json::from_str::<ProblemParams>(&bad).is_err());
    }

    #[test]
    fn bubble_examples() {
        let b = BubbleField::new(vec![0.0; 4], 1.0).unwrap();
        let centre = boundary(vec![0.0; 4]);
        assert!((bubble_eval(&b, &centre) - 3f64.powf(1.5)).abs() < 1e-14);
        let unit = boundary(vec![0.0, 1.0, 0.0, 0.0]);
        assert!((bubble_eval(&b, &unit) - 3f64.powf(1.5) / 2f64.powf(1.5)).abs() < 1e-14);
    }

    #[test]
    fn kernel_examples_at_centre() {
        let c = build_spikes(&params(), 1, 2.0, 1.0).unwrap();
        let centre = boundary(c.spikes()[0].clone());
        let z2 = kernel_z(&c, 0, 2, &centre).unwrap();
        assert!((z2 - 1.5 * 3f64.powf(1.5)).abs() < 1e-13);
        assert_eq!(kernel_z(&c, 0, 1, &centre).unwrap(), 0.0);
        assert!(kernel_z(&c, 0, 3, &centre).is_err());
    }

    #[test]
    fn kernel_matches_finite_differences() {
        let p = params();
        let h = 1e-5;
        let (r, lambda) = (3.0, 0.8);
        let c = build_spikes(&p, 5, r, lambda).unwrap();
        let mut state = 17u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let y: Vec<f64> = (0..4).map(|_| 8.0 * next() - 4.0).collect();
            let rp = build_spikes(&p, 5, r + h, lambda).unwrap().ansatz(&y, 0.0);
            let rm = build_spikes(&p, 5, r - h, lambda).unwrap().ansatz(&y, 0.0);
            let fd_r = (rp - rm) / (2.0 * h);
            let lp = build_spikes(&p, 5, r, lambda + h).unwrap().ansatz(&y, 0.0);
            let lm = build_spikes(&p, 5, r, lambda - h).unwrap().ansatz(&y, 0.0);
            let fd_l = (lp - lm) / (2.0 * h);
            let z1: f64 = (0..5).map(|i| c.kernel(i, 1, &y, 0.0)).sum();
            let z2: f64 = (0..5).map(|i| c.kernel(i, 2, &y, 0.0)).sum();
            let scale = c.ansatz(&y, 0.0);
            assert!((z1 - fd_r).abs() <= 1e-6 * scale.max(z1.abs()), "{z1} {fd_r}");
            assert!((z2 - fd_l).abs() <= 1e-6 * scale.max(z2.abs()), "{z2} {fd_l}");
        }
    }

    #[test]
    fn profile_examples() {
        let p = params();
        let k = KProfile::local_max(&p);
        assert_eq!(k_eval(&k, 1.0), 1.0);
        let k2 = KProfile::LocalMax {
            c0: 1.0,
            r0: 1.0,
            m: 2.0,
            delta: 0.5,
        };
        assert!((k_eval(&k2, 1.1) - 0.99).abs() < 1e-14);
        assert_eq!(k_eval(&KProfile::constant(1.0).unwrap(), 37.0), 1.0);
        assert!((k_eval(&k2, 10.0) - 0.75).abs() < 1e-15);
        assert!(KProfile::monotone(-1.5).is_err());
    }

    #[test]
    fn residual_examples() {
        let p = params();
        let one = KProfile::constant(1.0).unwrap();
        let c1 = build_spikes(&p, 1, 2.0, 1.0).unwrap();
        for y in [
            vec![2.0, 0.0, 0.0, 0.0],
            vec![0.3, -1.0, 2.0, 0.5],
            vec![40.0, 1.0, 0.0, 0.0],
        ] {
            assert!(residual_eval(&c1, &one, &boundary(y)).abs() < 1e-12);
        }
        let c2 = build_spikes(&p, 2, 2.0, 1.0).unwrap();
        let mid = boundary(vec![0.0, 0.0, 0.0, 0.0]);
        assert!(residual_eval(&c2, &one, &mid) < 0.0);
        let mut last = f64::INFINITY;
        for j in 0..30 {
            let t = 3.0 * 1.3f64.powi(j);
            let v = residual_eval(&c2, &one, &boundary(vec![t, 0.0, 0.0, 0.0])).abs();
            assert!(v < last);
            last = v;
        }
        assert!(last < 1e-8);
    }

    #[test]
    fn nonlinearity_examples() {
        let p = params();
        let k = KProfile::local_max(&p);
        let c = build_spikes(&p, 4, 10.0, 1.0).unwrap();
        let y = boundary(vec![9.0, 1.0, 0.5, 0.0]);
        assert_eq!(nonlinearity_eval(&c, &k, &y, 0.0), 0.0);
        let q = p.two_sharp() - 1.0;
        let mut ratios = Vec::new();
        for e in 1..=6 {
            let t = 10f64.powi(-e);
            let v = nonlinearity_eval(&c, &k, &y, t);
            ratios.push(v.abs() / t.powf(q));
            assert!(v.abs() / t < 10.0 * t);
        }
        let max = ratios.iter().cloned().fold(0.0, f64::max);
        assert!(max.is_finite() && max < 1e3);
        assert!(nonlinear_part(1.0, -3.0, q).is_finite());
    }

    #[test]
    fn norms_basic_identities() {
        let p = params();
        let c = build_spikes(&p, 6, 20.0, 1.0).unwrap();
        let pts: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, 0.5 * i as f64, 1.0, -2.0]).collect();
        for (exp, f) in [
            (p.star_exponent(), norm_star as fn(&_, &_, &_) -> _),
            (p.dstar_exponent(), norm_dstar),
        ] {
            let weighted: Vec<(HalfSpacePoint, f64)> = pts
                .iter()
                .map(|y| (boundary(y.clone()), weight_sum(&c, y, 0.0, exp)))
                .collect();
            assert!((f(&c, &p, &weighted).unwrap() - 1.0).abs() < 1e-14);
            let zero: Vec<(HalfSpacePoint, f64)> = pts.iter().map(|y| (boundary(y.clone()), 0.0)).collect();
            assert_eq!(f(&c, &p, &zero).unwrap(), 0.0);
            let v: Vec<(HalfSpacePoint, f64)> = pts.iter().map(|y| (boundary(y.clone()), y[0].sin())).collect();
            let v2: Vec<(HalfSpacePoint, f64)> = v.iter().map(|(q, x)| (q.clone(), 2.0 * x)).collect();
            assert!((f(&c, &p, &v2).unwrap() - 2.0 * f(&c, &p, &v).unwrap()).abs() < 1e-14);
            assert_eq!(f(&c, &p, &[]), Err(Error::EmptySamples));
        }
    }

    fn laplacian(c: &SpikeConfig, y: &[f64], h0: f64, step: f64) -> (f64, f64) {
        let f = |t: &[f64], hh: f64| c.ansatz(t, hh);
        let centre = f(y, h0);
        let mut lap = 0.0;
        let mut scale = 0.0;
        for axis in 0..=y.len() {
            let mut vals = [0.0; 4];
            for (slot, off) in [-2.0, -1.0, 1.0, 2.0].iter().enumerate() {
                let mut t = y.to_vec();
                let mut hh = h0;
                if axis < y.len() {
                    t[axis] += off * step;
                } else {
                    hh += off * step;
                }
                vals[slot] = f(&t, hh);
            }
            let d2 = (-vals[0] + 16.0 * vals[1] - 30.0 * centre + 16.0 * vals[2] - vals[3]) / (12.0 * step * step);
            lap += d2;
            scale += d2.abs();
        }
        (lap, scale)
    }

    #[test]
    fn bubbles_are_harmonic() {
        let p = params();
        let c = build_spikes(&p, 1, 1.0, 1.3).unwrap();
        let mut state = 5u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..50 {
            let y: Vec<f64> = (0..4).map(|_| 4.0 * next() - 2.0).collect();
            let h = 0.1 + 2.0 * next();
            let (lap, scale) = laplacian(&c, &y, h, 1e-3);
            assert!(lap.abs() < 1e-4 * scale, "{lap} {scale}");
        }
    }

    #[test]
    fn boundary_flux_identity() {
        let p = params();
        let q = p.two_sharp() - 1.0;
        let c = build_spikes(&p, 1, 1.0, 0.7).unwrap();
        let h = 1e-5;
        for y in [
            vec![1.0, 0.0, 0.0, 0.0],
            vec![2.0, 1.0, -0.5, 0.3],
            vec![-3.0, 2.0, 1.0, 1.0],
        ] {
            let up = c.ansatz(&y, h);
            let down = c.ansatz(&y, -h);
            let flux = -(up - down) / (2.0 * h);
            let target = c.ansatz(&y, 0.0).powf(q);
            assert!((flux - target).abs() < 1e-6 * target);
        }
    }

    #[test]
    fn linearized_kernel_identity() {
        let p = params();
        let q = p.two_sharp() - 1.0;
        let c = build_spikes(&p, 1, 1.5, 0.9).unwrap();
        let h = 1e-5;
        for y in [
            vec![1.0, 0.2, 0.0, 0.0],
            vec![2.5, 1.0, -0.5, 0.3],
            vec![-1.0, 2.0, 1.0, 1.0],
        ] {
            for j in 1..=2 {
                let up = c.kernel(0, j, &y, h);
                let down = c.kernel(0, j, &y, -h);
                let flux = -(up - down) / (2.0 * h);
                let u = c.ansatz(&y, 0.0);
                let target = q * u.powf(q - 1.0) * c.kernel(0, j, &y, 0.0);
                assert!(
                    (flux - target).abs() < 1e-6 * target.abs().max(1e-3 * u.powf(q)),
                    "{j} {flux} {target}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn ansatz_symmetries(k in 2usize..12, a in -30.0f64..30.0, b in -30.0f64..30.0, c3 in -5.0f64..5.0, c4 in -5.0f64..5.0) {
            let p = params();
            let c = build_spikes(&p, k, 10.0, 0.8).unwrap();
            let y = vec![a, b, c3, c4];
            let w = c.ansatz(&y, 0.0);
            let wr = c.ansatz(&rotate(&y, k, 1), 0.0);
            let wf = c.ansatz(&reflect(&y), 0.0);
            prop_assert!((w - wr).abs() <= 1e-12 * w);
            prop_assert!((w - wf).abs() <= 1e-12 * w);
        }

        #[test]
        fn single_bubble_ansatz_matches_bubble(a in -10.0f64..10.0, b in -10.0f64..10.0, h in 0.0f64..3.0) {
            let p = params();
            let c = build_spikes(&p, 1, 2.0, 1.7).unwrap();
            let bf = BubbleField::new(c.spikes()[0].clone(), 1.7).unwrap();
            let pt = HalfSpacePoint::new(vec![a, b, 0.5, 0.1], h).unwrap();
            prop_assert_eq!(ansatz_eval(&c, &pt), bubble_eval(&bf, &pt));
        }

        #[test]
        fn norms_are_subadditive(vals in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 20)) {
            let p = params();
            let c = build_spikes(&p, 4, 5.0, 1.0).unwrap();
            let pts: Vec<HalfSpacePoint> = (0..20).map(|i| boundary(vec![i as f64 * 0.7, 1.0, 0.0, 0.0])).collect();
            let f: Vec<(HalfSpacePoint, f64)> = pts.iter().cloned().zip(vals.iter().map(|v| v.0)).collect();
            let g: Vec<(HalfSpacePoint, f64)> = pts.iter().cloned().zip(vals.iter().map(|v| v.1)).collect();
            let fg: Vec<(HalfSpacePoint, f64)> = pts.iter().cloned().zip(vals.iter().map(|v| v.0 + v.1)).collect();
            let s = norm_star(&c, &p, &fg).unwrap();
            prop_assert!(s <= norm_star(&c, &p, &f).unwrap() + norm_star(&c, &p, &g).unwrap() + 1e-12);
            let d = norm_dstar(&c, &p, &fg).unwrap();
            prop_assert!(d <= norm_dstar(&c, &p, &f).unwrap() + norm_dstar(&c, &p, &g).unwrap() + 1e-12);
        }
    }
}
