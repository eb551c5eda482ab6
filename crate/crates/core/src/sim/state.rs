use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Oil pressure (Pa) and water saturation per cell at one report step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirState {
    pub pressure: Vec<f64>,
    pub saturation: Vec<f64>,
    pub step: usize,
}

impl ReservoirState {
    pub fn uniform(n_cells: usize, pressure: f64, saturation: f64) -> Self {
        Self {
            pressure: vec![pressure; n_cells],
            saturation: vec![saturation; n_cells],
            step: 0,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.pressure.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.pressure.len() != self.saturation.len() {
            return Err(Error::shape(
                "ReservoirState",
                self.pressure.len(),
                self.saturation.len(),
            ));
        }
        if let Some(i) = self.pressure.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::NonFinite(format!("pressure {} in cell {i}", self.pressure[i])));
        }
        if let Some(i) = self.saturation.iter().position(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::NonFinite(format!(
                "saturation {} in cell {i}",
                self.saturation[i]
            )));
        }
        Ok(())
    }
}
