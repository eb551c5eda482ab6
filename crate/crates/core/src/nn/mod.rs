//! Differentiable building blocks with explicit backward passes: dense
//! layers, layer normalization, MLPs, LSTM layers, Adam and a finite-difference
//! gradient checker. Parameters live in one flat buffer per model.

mod adam;
mod gradcheck;
mod layers;
mod lstm;
mod params;

pub use adam::Adam;
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use layers::{Dense, LayerNorm, LayerNormCache, Mlp, MlpCache, MlpSpec, LAYER_NORM_EPS};
pub use lstm::{LstmCache, LstmLayer};
pub use params::{ParamEntry, ParamStore, Slot};
