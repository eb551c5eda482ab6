//! Stochastic discrete fracture networks made of vertical rectangular planes.
//!
//! Two orthogonal sets are drawn: fracture centres are uniform in the domain,
//! trace lengths uniform in a configured range, and each trace is clipped to
//! the domain footprint. Planes always span the full domain height.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FracturePlane {
    /// Trace start in the horizontal plane (m).
    pub start: [f64; 2],
    /// Trace end in the horizontal plane (m).
    pub end: [f64; 2],
    /// Vertical extent `[z_min, z_max]` (m).
    pub z_extent: [f64; 2],
    /// Aperture (m).
    pub aperture: f64,
    pub porosity: f64,
    /// Permeability (md).
    pub perm_md: f64,
    /// Orientation set label (0 or 1).
    pub set: u8,
}

impl FracturePlane {
    pub fn trace_length(&self) -> f64 {
        let dx = self.end[0] - self.start[0];
        let dy = self.end[1] - self.start[1];
        dx.hypot(dy)
    }

    pub fn height(&self) -> f64 {
        self.z_extent[1] - self.z_extent[0]
    }

    pub fn area(&self) -> f64 {
        self.trace_length() * self.height()
    }

    /// Strike direction as a unit vector.
    pub fn direction(&self) -> [f64; 2] {
        let len = self.trace_length();
        [(self.end[0] - self.start[0]) / len, (self.end[1] - self.start[1]) / len]
    }

    pub fn point_at(&self, t: f64) -> [f64; 2] {
        [
            self.start[0] + t * (self.end[0] - self.start[0]),
            self.start[1] + t * (self.end[1] - self.start[1]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractureNetwork {
    pub planes: Vec<FracturePlane>,
    pub seed: u64,
    /// Strike angle (degrees from the x axis) of each set.
    pub set_strikes_deg: [f64; 2],
}

impl FractureNetwork {
    pub fn empty(seed: u64) -> Self {
        Self {
            planes: Vec::new(),
            seed,
            set_strikes_deg: [0.0, 90.0],
        }
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }
}

/// Inclusive integer range for the number of fractures per set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

impl CountRange {
    pub fn fixed(n: usize) -> Self {
        Self { min: n, max: n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfnConfig {
    /// Domain extent `[lx, ly, lz]` (m).
    pub domain: [f64; 3],
    pub count_per_set: CountRange,
    /// Trace length range (m), sampled uniformly.
    pub length_range: [f64; 2],
    /// Strike of the first set (degrees); the second set is rotated by 90°.
    pub strike_deg: f64,
    pub aperture: f64,
    pub porosity: f64,
    pub perm_md: f64,
}

impl Default for DfnConfig {
    fn default() -> Self {
        Self {
            domain: [500.0, 500.0, 5.0],
            count_per_set: CountRange { min: 10, max: 20 },
            length_range: [50.0, 200.0],
            strike_deg: 30.0,
            aperture: 1e-3,
            porosity: 0.8,
            perm_md: 1e7,
        }
    }
}

impl DfnConfig {
    pub fn validate(&self) -> Result<()> {
        let [lx, ly, lz] = self.domain;
        if !(lx > 0.0 && ly > 0.0 && lz > 0.0) {
            return Err(Error::Config(format!("non-positive domain {:?}", self.domain)));
        }
        if self.count_per_set.min > self.count_per_set.max {
            return Err(Error::Config("count_per_set.min > max".into()));
        }
        let [lo, hi] = self.length_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(format!("bad length range {:?}", self.length_range)));
        }
        if !(self.aperture > 0.0 && self.perm_md > 0.0) {
            return Err(Error::Config(
                "fracture aperture and permeability must be positive".into(),
            ));
        }
        if !(self.porosity > 0.0 && self.porosity <= 1.0) {
            return Err(Error::Config("fracture porosity must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Clip the segment `a + t (b - a)`, `t ∈ [0, 1]`, to the box `[0, lx] × [0, ly]`
/// (Liang–Barsky). Returns the clipped parameter interval.
pub fn clip_segment_to_box(a: [f64; 2], b: [f64; 2], lx: f64, ly: f64) -> Option<(f64, f64)> {
    let d = [b[0] - a[0], b[1] - a[1]];
    let mut t0 = 0.0_f64;
    let mut t1 = 1.0_f64;
    let checks = [(-d[0], a[0]), (d[0], lx - a[0]), (-d[1], a[1]), (d[1], ly - a[1])];
    for (p, q) in checks {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t1 > t0).then_some((t0, t1))
}

/// Draw a fracture network. Deterministic for a fixed `(seed, config)`.
pub fn generate_dfn(seed: u64, config: &DfnConfig) -> Result<FractureNetwork> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lx, ly, lz] = config.domain;
    let strikes = [config.strike_deg, config.strike_deg + 90.0];
    let mut planes = Vec::new();
    for (set, strike) in strikes.iter().enumerate() {
        let CountRange { min, max } = config.count_per_set;
        let count = rng.random_range(min..=max);
        let (sin, cos) = strike.to_radians().sin_cos();
        for _ in 0..count {
            let cx = rng.random_range(0.0..lx);
            let cy = rng.random_range(0.0..ly);
            let [lo, hi] = config.length_range;
            let length = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let half = 0.5 * length;
            let a = [cx - half * cos, cy - half * sin];
            let b = [cx + half * cos, cy + half * sin];
            let Some((t0, t1)) = clip_segment_to_box(a, b, lx, ly) else {
                continue;
            };
            let lerp = |t: f64| {
                [
                    (a[0] + t * (b[0] - a[0])).clamp(0.0, lx),
                    (a[1] + t * (b[1] - a[1])).clamp(0.0, ly),
                ]
            };
            let plane = FracturePlane {
                start: lerp(t0),
                end: lerp(t1),
                z_extent: [0.0, lz],
                aperture: config.aperture,
                porosity: config.porosity,
                perm_md: config.perm_md,
                set: set as u8,
            };
            if plane.trace_length() > 0.0 {
                planes.push(plane);
            }
        }
    }
    Ok(FractureNetwork {
        planes,
        seed,
        set_strikes_deg: strikes,
    })
}
