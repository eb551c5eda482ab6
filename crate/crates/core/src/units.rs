//! Unit conversions. Geometry is in meters, permeability in millidarcy and
//! transmissibility in md·m everywhere outside the flow solver.

/// One millidarcy in m².
pub const MILLIDARCY: f64 = 9.869233e-16;
/// One pound per square inch in Pa.
pub const PSI: f64 = 6894.757293168361;
/// One centipoise in Pa·s.
pub const CENTIPOISE: f64 = 1e-3;
pub const MEGAPASCAL: f64 = 1e6;
pub const ATMOSPHERE: f64 = 101_325.0;
pub const DAY: f64 = 86_400.0;
pub const YEAR: f64 = 365.0 * DAY;
