//! Two-factor rough Bergomi dynamics.
//!
//! v_t = v₀[χ ℰ(ν W^{1,H})_t + χ̄ ℰ(η(ρ W^{1,H} + ρ̄ W^{2,H}))_t], with
//! Wick exponentials normalised by the exact variance t^{2H}/(2H).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

/// Default VIX window of 30 calendar days.
pub const DEFAULT_DELTA: f64 = 30.0 / 365.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub hurst: f64,
    pub nu: f64,
    pub eta: f64,
    pub rho: f64,
    pub chi: f64,
    pub v0: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    pub delta: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        let (rho1, rho2) = (-0.7, -0.3);
        ModelParams {
            hurst: 0.1,
            nu: 1.2,
            eta: 0.9,
            rho: -0.4,
            chi: 0.5,
            v0: 0.04,
            rho1,
            rho2,
            rho3: (1.0 - rho1 * rho1 - rho2 * rho2).sqrt(),
            delta: DEFAULT_DELTA,
        }
    }
}

impl ModelParams {
    /// Sets (ρ₁, ρ₂) and derives ρ₃ ≥ 0 from the unit-norm constraint.
    pub fn with_loadings(mut self, rho1: f64, rho2: f64) -> Result<Self> {
        let rest = 1.0 - rho1 * rho1 - rho2 * rho2;
        if rest < -1e-12 {
            return Err(Error::param(
                "rho1",
                format!("ρ₁² + ρ₂² = {} exceeds 1", rho1 * rho1 + rho2 * rho2),
            ));
        }
        self.rho1 = rho1;
        self.rho2 = rho2;
        self.rho3 = rest.max(0.0).sqrt();
        Ok(self)
    }

    pub fn chi_bar(&self) -> f64 {
        1.0 - self.chi
    }

    pub fn rho_bar(&self) -> f64 {
        (1.0 - self.rho * self.rho).max(0.0).sqrt()
    }

    pub fn hp(&self) -> f64 {
        self.hurst + 0.5
    }

    pub fn hm(&self) -> f64 {
        self.hurst - 0.5
    }

    /// Loadings of the two lognormal factors on (W¹, W²): a = (ν, 0), b = η(ρ, ρ̄).
    pub fn factor_loadings(&self) -> ([f64; 2], [f64; 2]) {
        (
            [self.nu, 0.0],
            [self.eta * self.rho, self.eta * self.rho_bar()],
        )
    }

    /// ψ = √((χν + χ̄ηρ)² + χ̄²η²ρ̄²)
    pub fn psi(&self) -> f64 {
        let w1 = self.chi * self.nu + self.chi_bar() * self.eta * self.rho;
        let w2 = self.chi_bar() * self.eta * self.rho_bar();
        w1.hypot(w2)
    }

    /// Checks every invariant; returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let finite = [
            ("hurst", self.hurst),
            ("nu", self.nu),
            ("eta", self.eta),
            ("rho", self.rho),
            ("chi", self.chi),
            ("v0", self.v0),
            ("rho1", self.rho1),
            ("rho2", self.rho2),
            ("rho3", self.rho3),
            ("delta", self.delta),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::param(name, "must be finite"));
            }
        }
        if !(self.hurst > 0.0 && self.hurst < 0.5) {
            return Err(Error::param("hurst", format!("must lie in (0, 1/2), got {}", self.hurst)));
        }
        for (name, v) in [("nu", self.nu), ("eta", self.eta), ("v0", self.v0), ("delta", self.delta)] {
            if v <= 0.0 {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.chi) {
            return Err(Error::param("chi", format!("must lie in [0, 1], got {}", self.chi)));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::param("rho", format!("must lie in [−1, 1], got {}", self.rho)));
        }
        let norm = self.rho1 * self.rho1 + self.rho2 * self.rho2 + self.rho3 * self.rho3;
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::param(
                "rho3",
                format!("loadings must satisfy ρ₁² + ρ₂² + ρ₃² = 1, got {norm}"),
            ));
        }
        let mut warnings = Vec::new();
        if self.rho <= -std::f64::consts::FRAC_1_SQRT_2 {
            warnings.push(format!(
                "rho = {} ≤ −√2/2: outside the range where the limit theorems are known to apply",
                self.rho
            ));
        }
        Ok(warnings)
    }
}

/// Exact variance t^{2H}/(2H) of the fBm value W^H_t.
pub fn wick_variance(hurst: f64, t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        t.powf(2.0 * hurst) / (2.0 * hurst)
    }
}

/// Spot variance v_t given the fBm values of both factors.
pub fn variance(p: &ModelParams, w1h: f64, w2h: f64, t: f64) -> f64 {
    let var = wick_variance(p.hurst, t);
    let e1 = (p.nu * w1h - 0.5 * p.nu * p.nu * var).exp();
    let e2 = (p.eta * (p.rho * w1h + p.rho_bar() * w2h) - 0.5 * p.eta * p.eta * var).exp();
    p.v0 * (p.chi * e1 + p.chi_bar() * e2)
}

/// E_T[v_r] given Z^i_r = ∫₀^T (r−s)^{H−½} dW^i_s.
pub fn conditional_forward_variance(p: &ModelParams, maturity: f64, r: f64, z1: f64, z2: f64) -> Result<f64> {
    if !(r >= maturity) {
        return Err(Error::Domain(format!("forward date {r} precedes the observation time {maturity}")));
    }
    let (c1, c2) = drift_terms(p, maturity, r);
    Ok(forward_variance_from(p, c1, c2, z1, z2))
}

// −½Var(Z_r) scaled by the vol-of-vol of each factor.
fn drift_terms(p: &ModelParams, maturity: f64, r: f64) -> (f64, f64) {
    let two_h = 2.0 * p.hurst;
    let base = ((r - maturity).max(0.0).powf(two_h) - r.powf(two_h)) / (2.0 * two_h);
    (p.nu * p.nu * base, p.eta * p.eta * base)
}

#[inline]
fn forward_variance_from(p: &ModelParams, c1: f64, c2: f64, z1: f64, z2: f64) -> f64 {
    p.v0
        * (p.chi * (c1 + p.nu * z1).exp()
            + p.chi_bar() * (c2 + p.eta * (p.rho * z1 + p.rho_bar() * z2)).exp())
}

/// Realized forward integrals at quadrature nodes r ≥ y.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardVarianceState {
    pub observation: f64,
    pub nodes: Vec<f64>,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
}

impl ForwardVarianceState {
    pub fn new(observation: f64, nodes: Vec<f64>, z1: Vec<f64>, z2: Vec<f64>) -> Result<Self> {
        if nodes.len() != z1.len() || nodes.len() != z2.len() {
            return Err(Error::Domain("state arrays must have one entry per node".into()));
        }
        if let Some(r) = nodes.iter().find(|&&r| !(r >= observation)) {
            return Err(Error::Domain(format!("node {r} precedes the observation time {observation}")));
        }
        Ok(ForwardVarianceState {
            observation,
            nodes,
            z1,
            z2,
        })
    }

    /// Zero state, i.e. the forward curve at its unconditional median path.
    pub fn zero(observation: f64, nodes: Vec<f64>) -> Result<Self> {
        let n = nodes.len();
        Self::new(observation, nodes, vec![0.0; n], vec![0.0; n])
    }
}

/// Quadrature rule over the VIX window [T, T+Δ].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VixQuadrature {
    pub maturity: f64,
    pub window: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl VixQuadrature {
    pub fn gauss_legendre(maturity: f64, window: f64, n: usize) -> Self {
        let (nodes, weights) = quadrature::gauss_legendre_interval(n, maturity, maturity + window);
        VixQuadrature {
            maturity,
            window,
            nodes,
            weights,
        }
    }
}

/// Deterministic parts of E_T[v_r] at each node, so VIX² is cheap per path.
#[derive(Debug, Clone)]
pub struct ForwardVarianceCurve {
    params: ModelParams,
    window: f64,
    weights: Vec<f64>,
    c1: Vec<f64>,
    c2: Vec<f64>,
}

impl ForwardVarianceCurve {
    pub fn new(p: &ModelParams, quad: &VixQuadrature) -> Self {
        let (c1, c2) = quad.nodes.iter().map(|&r| drift_terms(p, quad.maturity, r)).unzip();
        ForwardVarianceCurve {
            params: *p,
            window: quad.window,
            weights: quad.weights.clone(),
            c1,
            c2,
        }
    }

    #[inline]
    pub fn vix_squared_from(&self, z1: &[f64], z2: &[f64]) -> f64 {
        let p = &self.params;
        let mut acc = 0.0;
        for i in 0..self.weights.len() {
            acc += self.weights[i] * forward_variance_from(p, self.c1[i], self.c2[i], z1[i], z2[i]);
        }
        acc / self.window
    }
}

/// VIX²_T = (1/Δ) ∫_T^{T+Δ} E_T[v_r] dr by the given quadrature.
pub fn vix_squared(p: &ModelParams, state: &ForwardVarianceState, quad: &VixQuadrature) -> Result<f64> {
    if state.nodes.len() != quad.nodes.len()
        || state
            .nodes
            .iter()
            .zip(&quad.nodes)
            .any(|(a, b)| (a - b).abs() > 1e-14 * b.abs().max(1.0))
    {
        return Err(Error::Domain("state must be observed at the quadrature nodes".into()));
    }
    if (state.observation - quad.maturity).abs() > 1e-14 * quad.maturity.max(1.0) {
        return Err(Error::Domain("state observation time differs from the quadrature maturity".into()));
    }
    Ok(ForwardVarianceCurve::new(p, quad).vix_squared_from(&state.z1, &state.z2))
}

/// Expectations at time 0 of the first three Malliavin derivatives of v_r.
///
/// Each is v₀ r^{n(H−½)} times a tensor coefficient
/// χ a⊗…⊗a + χ̄ b⊗…⊗b built from the factor loadings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MalliavinExpectations {
    pub v0: f64,
    pub hm: f64,
    pub first: [f64; 2],
    pub second: [[f64; 2]; 2],
    pub third: [[[f64; 2]; 2]; 2],
}

pub fn malliavin_dv_expectations(p: &ModelParams) -> MalliavinExpectations {
    let (a, b) = p.factor_loadings();
    let (chi, chib) = (p.chi, p.chi_bar());
    let mut first = [0.0; 2];
    let mut second = [[0.0; 2]; 2];
    let mut third = [[[0.0; 2]; 2]; 2];
    for i in 0..2 {
        first[i] = chi * a[i] + chib * b[i];
        for j in 0..2 {
            second[i][j] = chi * a[i] * a[j] + chib * b[i] * b[j];
            for k in 0..2 {
                third[i][j][k] = chi * a[i] * a[j] * a[k] + chib * b[i] * b[j] * b[k];
            }
        }
    }
    MalliavinExpectations {
        v0: p.v0,
        hm: p.hm(),
        first,
        second,
        third,
    }
}

impl MalliavinExpectations {
    fn power(&self, n: i32, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::Domain(format!("forward date must be positive, got {r}")));
        }
        Ok(self.v0 * r.powf(n as f64 * self.hm))
    }

    /// E[D^i₀ v_r], factor index i ∈ {0, 1}.
    pub fn d1(&self, i: usize, r: f64) -> Result<f64> {
        Ok(self.power(1, r)? * self.first[i])
    }

    /// E[D^j₀ D^i₀ v_r]
    pub fn d2(&self, i: usize, j: usize, r: f64) -> Result<f64> {
        Ok(self.power(2, r)? * self.second[i][j])
    }

    /// E[D^k₀ D^j₀ D^i₀ v_r]
    pub fn d3(&self, i: usize, j: usize, k: usize, r: f64) -> Result<f64> {
        Ok(self.power(3, r)? * self.third[i][j][k])
    }
}
