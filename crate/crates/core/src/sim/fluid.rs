use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{ATMOSPHERE, CENTIPOISE, PSI};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Water,
    Oil,
}

/// Oil–water capillary pressure `p_cow(S_w) = p_o - p_w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Capillary {
    Zero,
    /// `p_cow = max_pa · (1 - S_e)`.
    Linear {
        max_pa: f64,
    },
}

impl Capillary {
    /// Value and derivative with respect to `S_w`.
    pub fn eval(&self, s_e: f64, ds_e: f64) -> (f64, f64) {
        match *self {
            Capillary::Zero => (0.0, 0.0),
            Capillary::Linear { max_pa } => (max_pa * (1.0 - s_e), -max_pa * ds_e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidModel {
    /// Viscosities (Pa·s).
    pub mu_w: f64,
    pub mu_o: f64,
    /// Densities at atmospheric pressure (kg/m³).
    pub rho_w: f64,
    pub rho_o: f64,
    /// Compressibilities (1/Pa).
    pub c_w: f64,
    pub c_o: f64,
    /// Corey exponent shared by both phases.
    pub corey_n: f64,
    pub s_wc: f64,
    pub s_or: f64,
    pub capillary: Capillary,
}

impl Default for FluidModel {
    fn default() -> Self {
        Self {
            mu_w: 1.0 * CENTIPOISE,
            mu_o: 5.0 * CENTIPOISE,
            rho_w: 1000.0,
            rho_o: 850.0,
            c_w: 3e-6 / PSI,
            c_o: 1e-5 / PSI,
            corey_n: 2.0,
            s_wc: 0.2,
            s_or: 0.2,
            capillary: Capillary::Zero,
        }
    }
}

/// Relative permeabilities and their saturation derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelPerm {
    pub krw: f64,
    pub kro: f64,
    pub dkrw: f64,
    pub dkro: f64,
}

impl FluidModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_w > 0.0 && self.mu_o > 0.0) {
            return Err(Error::Config("viscosities must be positive".into()));
        }
        if !(self.rho_w > 0.0 && self.rho_o > 0.0) {
            return Err(Error::Config("densities must be positive".into()));
        }
        if !(self.s_wc >= 0.0 && self.s_or >= 0.0 && self.s_wc + self.s_or < 1.0) {
            return Err(Error::Config("need 0 <= S_wc + S_or < 1".into()));
        }
        if !(self.corey_n >= 1.0) {
            return Err(Error::Config("Corey exponent must be >= 1".into()));
        }
        Ok(())
    }

    /// Normalised mobile saturation and its derivative (zero where clamped).
    pub fn effective_saturation(&self, s_w: f64) -> (f64, f64) {
        let span = 1.0 - self.s_wc - self.s_or;
        let s_e = (s_w - self.s_wc) / span;
        if s_e <= 0.0 {
            (0.0, 0.0)
        } else if s_e >= 1.0 {
            (1.0, 0.0)
        } else {
            (s_e, 1.0 / span)
        }
    }

    pub fn relperm_with_derivatives(&self, s_w: f64) -> RelPerm {
        let n = self.corey_n;
        let (s_e, ds) = self.effective_saturation(s_w);
        let so = 1.0 - s_e;
        RelPerm {
            krw: s_e.powf(n),
            kro: so.powf(n),
            dkrw: if ds > 0.0 { n * s_e.powf(n - 1.0) * ds } else { 0.0 },
            dkro: if ds > 0.0 { -n * so.powf(n - 1.0) * ds } else { 0.0 },
        }
    }

    /// Corey curves `(k_rw, k_ro)`.
    pub fn relperm(&self, s_w: f64) -> (f64, f64) {
        let r = self.relperm_with_derivatives(s_w);
        (r.krw, r.kro)
    }

    /// `(p_cow, d p_cow / d S_w)`.
    pub fn capillary_pressure(&self, s_w: f64) -> (f64, f64) {
        let (s_e, ds) = self.effective_saturation(s_w);
        self.capillary.eval(s_e, ds)
    }

    pub fn viscosity(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Water => self.mu_w,
            Phase::Oil => self.mu_o,
        }
    }

    pub fn surface_density(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Water => self.rho_w,
            Phase::Oil => self.rho_o,
        }
    }

    pub fn compressibility(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Water => self.c_w,
            Phase::Oil => self.c_o,
        }
    }

    /// `ρ(p) = ρ_surf · exp(c (p - p_atm))` and its pressure derivative.
    pub fn density_with_derivative(&self, p: f64, phase: Phase) -> (f64, f64) {
        let c = self.compressibility(phase);
        let rho = self.surface_density(phase) * (c * (p - ATMOSPHERE)).exp();
        (rho, c * rho)
    }

    pub fn phase_density(&self, p: f64, phase: Phase) -> f64 {
        self.density_with_derivative(p, phase).0
    }
}
