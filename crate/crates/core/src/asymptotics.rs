//! Short-maturity limits of the ATM implied-volatility level, skew and
//! curvature for VIX and SPX options.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{malliavin_dv_expectations, ModelParams};
use crate::quadrature;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Underlying {
    Vix,
    Spx,
}

impl std::fmt::Display for Underlying {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Underlying::Vix => "vix",
            Underlying::Spx => "spx",
        })
    }
}

/// Limits of I_T, S_T/T^λ and C_T/T^γ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmileAsymptotics {
    pub underlying: Underlying,
    pub level: f64,
    pub skew_value: f64,
    pub skew_exponent: f64,
    pub curvature_value: Option<f64>,
    pub curvature_exponent: Option<f64>,
}

/// J_i = ∫₀^Δ E[D^i₀v_r]dr, G_ij = ∫₀^Δ E[D^j₀D^i₀v_r]dr and the third-order
/// tensor lim T^{½−3H} ∫_T^{T+Δ} E[D^kD^jD^i₀v_r]dr.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JgTensors {
    pub j: [f64; 2],
    pub g: [[f64; 2]; 2],
    pub third: Option<[[[f64; 2]; 2]; 2]>,
}

impl JgTensors {
    pub fn norm_j(&self) -> f64 {
        self.j[0].hypot(self.j[1])
    }
}

fn curvature_allowed(hurst: f64) -> Result<()> {
    if hurst > 0.0 && hurst < 1.0 / 6.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "the curvature limit requires H in (0, 1/6), got H = {hurst}"
        )))
    }
}

/// Closed forms of the J, G and third-derivative tensors.
pub fn compute_jg(p: &ModelParams) -> JgTensors {
    let m = malliavin_dv_expectations(p);
    let (h, hp) = (p.hurst, p.hp());
    let a = p.delta.powf(hp) / hp;
    let b = p.delta.powf(2.0 * h) / (2.0 * h);
    let mut j = [0.0; 2];
    let mut g = [[0.0; 2]; 2];
    for i in 0..2 {
        j[i] = p.v0 * a * m.first[i];
        for k in 0..2 {
            g[i][k] = p.v0 * b * m.second[i][k];
        }
    }
    let third = (h < 1.0 / 6.0).then(|| {
        let factor = p.v0 * 2.0 / (1.0 - 6.0 * h);
        let mut t = m.third;
        t.iter_mut().flatten().flatten().for_each(|v| *v *= factor);
        t
    });
    JgTensors { j, g, third }
}

/// J and G by adaptive quadrature of the Malliavin expectations.
pub fn jg_by_quadrature(p: &ModelParams) -> Result<JgTensors> {
    let m = malliavin_dv_expectations(p);
    let (h, hp) = (p.hurst, p.hp());
    let integral = |f: &dyn Fn(f64) -> f64, power: f64| {
        quadrature::integrate_origin_singular(f, p.delta, power, 1e-300, 1e-13).value
    };
    let mut j = [0.0; 2];
    let mut g = [[0.0; 2]; 2];
    for i in 0..2 {
        j[i] = integral(&|r| m.d1(i, r).unwrap_or(0.0), hp);
        for k in 0..2 {
            g[i][k] = integral(&|r| m.d2(i, k, r).unwrap_or(0.0), 2.0 * h);
        }
    }
    if j.iter().chain(g.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite quadrature of the J/G integrals".into()));
    }
    Ok(JgTensors { j, g, third: None })
}

/// Limits expressed through J, G and the third-derivative tensor.
pub fn vix_limits_generic(
    jg: &JgTensors,
    vix0_sq: f64,
    delta: f64,
    hurst: f64,
    curvature: bool,
) -> Result<SmileAsymptotics> {
    let nj = jg.norm_j();
    if !(nj > 0.0) {
        return Err(Error::Domain("degenerate model: ‖J‖ = 0".into()));
    }
    let dv = delta * vix0_sq;
    let level = nj / (2.0 * dv);
    let mut sum = 0.0;
    for i in 0..2 {
        for k in 0..2 {
            let jj = jg.j[i] * jg.j[k];
            sum += jj * (jg.g[i][k] - jj / dv);
        }
    }
    let skew = sum / (2.0 * nj.powi(3));
    let (curvature_value, curvature_exponent) = if curvature {
        curvature_allowed(hurst)?;
        let t3 = jg
            .third
            .ok_or_else(|| Error::Domain("curvature requested without a third-derivative tensor".into()))?;
        let mut s = 0.0;
        for i in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    s += jg.j[i] * jg.j[k] * jg.j[l] * t3[i][k][l];
                }
            }
        }
        (Some(2.0 * dv * s / (3.0 * nj.powi(5))), Some(3.0 * hurst - 0.5))
    } else {
        (None, None)
    };
    Ok(SmileAsymptotics {
        underlying: Underlying::Vix,
        level,
        skew_value: skew,
        skew_exponent: 0.0,
        curvature_value,
        curvature_exponent,
    })
}

fn vix_result(p: &ModelParams, level: f64, skew: f64, curvature: Option<f64>) -> SmileAsymptotics {
    SmileAsymptotics {
        underlying: Underlying::Vix,
        level,
        skew_value: skew,
        skew_exponent: 0.0,
        curvature_exponent: curvature.map(|_| 3.0 * p.hurst - 0.5),
        curvature_value: curvature,
    }
}

// Common prefactors: level, skew and curvature multipliers.
fn vix_prefactors(p: &ModelParams) -> (f64, f64, f64) {
    let (h, hp, hm) = (p.hurst, p.hp(), p.hm());
    let dm = p.delta.powf(hm);
    (
        dm / (2.0 * h + 1.0),
        dm * hp / 2.0,
        4.0 * hp * hp * p.delta.powf(-2.0 * h) / (3.0 * (1.0 - 6.0 * h)),
    )
}

/// Explicit limits of the two-factor rough Bergomi model.
pub fn vix_limits_rbergomi(p: &ModelParams, curvature: bool) -> Result<SmileAsymptotics> {
    if curvature {
        curvature_allowed(p.hurst)?;
    }
    let (h, hp) = (p.hurst, p.hp());
    let (chi, chib) = (p.chi, p.chi_bar());
    let (nu, eta, rho) = (p.nu, p.eta, p.rho);
    let psi = p.psi();
    if !(psi > 0.0) {
        return Err(Error::Domain("degenerate model: ψ = 0".into()));
    }
    let wf = chi * nu + chib * eta * rho;
    // projections of the two factor loadings on the direction of J, times ψ
    let pa = nu * wf;
    let pb = eta * (chi * nu * rho + chib * eta);
    let (cl, cs, cc) = vix_prefactors(p);
    let level = cl * psi;
    let skew = cs / psi.powi(3) * ((chi * pa * pa + chib * pb * pb) / (2.0 * h) - psi.powi(4) / (hp * hp));
    let curv = curvature.then(|| cc / psi.powi(5) * (chi * pa.powi(3) + chib * pb.powi(3)));
    Ok(vix_result(p, level, skew, curv))
}

/// Simplified limits for ρ = 1, where both factors share one driver.
pub fn vix_limits_rho_one(p: &ModelParams, curvature: bool) -> Result<SmileAsymptotics> {
    if p.rho != 1.0 {
        return Err(Error::Domain(format!("ρ = 1 formulas called with ρ = {}", p.rho)));
    }
    if curvature {
        curvature_allowed(p.hurst)?;
    }
    let (h, hp) = (p.hurst, p.hp());
    let (chi, chib, nu, eta) = (p.chi, p.chi_bar(), p.nu, p.eta);
    let psi = chi * nu + chib * eta;
    let (cl, cs, cc) = vix_prefactors(p);
    let level = cl * psi;
    let skew = cs / psi * ((chi * nu * nu + chib * eta * eta) / (2.0 * h) - psi * psi / (hp * hp));
    let curv = curvature.then(|| cc / (psi * psi) * (chi * nu.powi(3) + chib * eta.powi(3)));
    Ok(vix_result(p, level, skew, curv))
}

/// Simplified limits for ρ = 0, independent factors.
pub fn vix_limits_rho_zero(p: &ModelParams, curvature: bool) -> Result<SmileAsymptotics> {
    if p.rho != 0.0 {
        return Err(Error::Domain(format!("ρ = 0 formulas called with ρ = {}", p.rho)));
    }
    if curvature {
        curvature_allowed(p.hurst)?;
    }
    let (h, hp) = (p.hurst, p.hp());
    let (chi, chib, nu, eta) = (p.chi, p.chi_bar(), p.nu, p.eta);
    let psi = (chi * chi * nu * nu + chib * chib * eta * eta).sqrt();
    let (cl, cs, cc) = vix_prefactors(p);
    let hp2 = hp * hp;
    let level = cl * psi;
    let skew = cs / psi.powi(3)
        * (chi.powi(3) * nu.powi(4) * (1.0 / (2.0 * h) - chi / hp2)
            - 2.0 * chi * chi * chib * chib * nu * nu * eta * eta / hp2
            + chib.powi(3) * eta.powi(4) * (1.0 / (2.0 * h) - chib / hp2));
    let curv = curvature.then(|| cc / psi.powi(5) * (chi.powi(4) * nu.powi(6) + chib.powi(4) * eta.powi(6)));
    Ok(vix_result(p, level, skew, curv))
}

/// ATM SPX level √v₀ and skew coefficient of T^{H−½}.
pub fn spx_skew_limit(p: &ModelParams) -> SmileAsymptotics {
    let hp = p.hp();
    let num = p.rho1 * p.chi * p.nu + p.eta * p.chi_bar() * (p.rho1 * p.rho + p.rho2 * p.rho_bar());
    SmileAsymptotics {
        underlying: Underlying::Spx,
        level: p.v0.sqrt(),
        skew_value: num / (2.0 * hp * (1.0 + hp)),
        skew_exponent: p.hm(),
        curvature_value: None,
        curvature_exponent: None,
    }
}

/// SPX skew coefficient from the double integral of E[D^j_s v_y] over
/// 0 ≤ s ≤ y ≤ T, evaluated by nested quadrature at T = 1.
pub fn spx_skew_by_quadrature(p: &ModelParams) -> Result<f64> {
    let m = malliavin_dv_expectations(p);
    let hp = p.hp();
    let horizon: f64 = 1.0;
    let mut total = 0.0;
    for (j, rho_j) in [(0, p.rho1), (1, p.rho2)] {
        if rho_j == 0.0 {
            continue;
        }
        let inner = |s: f64| {
            quadrature::integrate_origin_singular(|u| m.d1(j, u).unwrap_or(0.0), horizon - s, hp, 1e-300, 1e-13).value
        };
        let outer = quadrature::integrate(inner, 0.0, horizon, 1e-300, 1e-12, 400).value;
        total += rho_j * outer / horizon.powf(p.hurst + 1.5);
    }
    if !total.is_finite() {
        return Err(Error::Numerical("non-finite SPX skew quadrature".into()));
    }
    Ok(total / (2.0 * p.v0))
}

/// Normalised quantities at χ = 1/2 as functions of ã = ηρ/ν, b̃ = ηρ̄/ν.
///
/// I₀ = νC_Iψ̃, S₀ = νC_SΦ_S/ψ̃³, C₀ = νC_CΦ_C/ψ̃⁵.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalizedFunctions {
    pub psi: f64,
    pub phi_s: f64,
    pub phi_c: f64,
    pub c_i: f64,
    pub c_s: f64,
    pub c_c: f64,
}

impl NormalizedFunctions {
    /// (I₀, S₀, C₀) for a given ν.
    pub fn limits(&self, nu: f64) -> (f64, f64, f64) {
        (
            nu * self.c_i * self.psi,
            nu * self.c_s * self.phi_s / self.psi.powi(3),
            nu * self.c_c * self.phi_c / self.psi.powi(5),
        )
    }

    /// ν-free quotients (S₀/I₀, C₀/I₀).
    pub fn quotients(&self) -> (f64, f64) {
        (
            self.c_s * self.phi_s / (self.c_i * self.psi.powi(4)),
            self.c_c * self.phi_c / (self.c_i * self.psi.powi(6)),
        )
    }
}

pub fn normalized_functions(a: f64, b: f64, hurst: f64, delta: f64) -> Result<NormalizedFunctions> {
    curvature_allowed(hurst)?;
    if !(delta > 0.0) {
        return Err(Error::param("delta", format!("must be positive, got {delta}")));
    }
    let (h, hp, hm) = (hurst, hurst + 0.5, hurst - 0.5);
    let a1 = 1.0 + a;
    let b2 = b * b;
    let psi = (a1 * a1 + b2).sqrt();
    let two_h = 2.0 * h;
    let two_hp2 = 2.0 * hp * hp;
    let phi_s = a1 * a1 * ((1.0 + a * a) / two_h - a1 * a1 / two_hp2)
        + 2.0 * a1 * b2 * (a / two_h - a1 / two_hp2)
        + b2 * b2 * (1.0 / two_h - 1.0 / two_hp2);
    let phi_c = a1.powi(3) * (1.0 + a.powi(3)) + 3.0 * a1 * a1 * a * a * b2 + 3.0 * a1 * a * b2 * b2 + b2.powi(3);
    Ok(NormalizedFunctions {
        psi,
        phi_s,
        phi_c,
        c_i: delta.powf(hm) / (4.0 * hp),
        c_s: hp * delta.powf(hm) / 2.0,
        c_c: 8.0 * hp * hp * delta.powf(-2.0 * h) / (3.0 * (1.0 - 6.0 * h)),
    })
}

/// [`normalized_functions`] for a parameter set, which must have χ = 1/2.
pub fn normalized_for(p: &ModelParams) -> Result<NormalizedFunctions> {
    if p.chi != 0.5 {
        return Err(Error::Domain(format!(
            "normalised functions are defined for χ = 1/2, got χ = {}",
            p.chi
        )));
    }
    normalized_functions(p.eta * p.rho / p.nu, p.eta * p.rho_bar() / p.nu, p.hurst, p.delta)
}
