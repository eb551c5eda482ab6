//! Buckley–Leverett reference solution for 1-D incompressible waterflooding
//! without capillarity, from the Welge tangent construction.

use super::fluid::FluidModel;

/// Water fractional flow `λ_w / (λ_w + λ_o)`.
pub fn fractional_flow(fluid: &FluidModel, s_w: f64) -> f64 {
    let (krw, kro) = fluid.relperm(s_w);
    let lw = krw / fluid.mu_w;
    let lo = kro / fluid.mu_o;
    if lw + lo == 0.0 {
        0.0
    } else {
        lw / (lw + lo)
    }
}

fn fractional_flow_slope(fluid: &FluidModel, s: f64) -> f64 {
    let h = 1e-7;
    (fractional_flow(fluid, s + h) - fractional_flow(fluid, s - h)) / (2.0 * h)
}

/// Saturation of steepest fractional flow (inflection point of `f`),
/// by golden-section search on `f'` over the mobile range.
pub fn inflection_saturation(fluid: &FluidModel) -> f64 {
    let (mut a, mut b) = (fluid.s_wc, 1.0 - fluid.s_or);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..100 {
        if fractional_flow_slope(fluid, c) > fractional_flow_slope(fluid, d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    0.5 * (a + b)
}

/// Shock-front saturation: the tangent point of the line from `(s_init, 0)`
/// to the fractional-flow curve, found by golden-section search on the chord
/// slope `f(S) / (S - s_init)`.
pub fn front_saturation(fluid: &FluidModel, s_init: f64) -> f64 {
    let chord = |s: f64| fractional_flow(fluid, s) / (s - s_init);
    let (mut a, mut b) = (s_init + 1e-9, 1.0 - fluid.s_or);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..200 {
        if chord(c) > chord(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    0.5 * (a + b)
}

/// Dimensionless front position `x_f / L` after `pvi` pore volumes injected.
pub fn front_position(fluid: &FluidModel, s_init: f64, pvi: f64) -> f64 {
    let sf = front_saturation(fluid, s_init);
    pvi * fractional_flow(fluid, sf) / (sf - s_init)
}

/// Saturation at dimensionless position `x_d` after `pvi` pore volumes.
pub fn saturation_profile(fluid: &FluidModel, s_init: f64, pvi: f64, x_d: f64) -> f64 {
    let sf = front_saturation(fluid, s_init);
    let xf = front_position(fluid, s_init, pvi);
    if x_d > xf {
        return s_init;
    }
    // Behind the shock, f'(S) = x_d / pvi with f' decreasing in S.
    let target = x_d / pvi;
    let (mut lo, mut hi) = (sf, 1.0 - fluid.s_or);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if fractional_flow_slope(fluid, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Front location of a numerical 1-D profile: the first downstream crossing
/// of the level halfway between `s_front` and `s_init`, linearly interpolated
/// between cell centres. `None` if the profile never drops below the level.
pub fn numerical_front_position(saturation: &[f64], dx: f64, s_front: f64, s_init: f64) -> Option<f64> {
    let level = 0.5 * (s_front + s_init);
    let k = saturation.iter().position(|&s| s < level)?;
    if k == 0 {
        return Some(0.0);
    }
    let (s0, s1) = (saturation[k - 1], saturation[k]);
    let x0 = (k as f64 - 0.5) * dx;
    Some(x0 + (s0 - level) / (s0 - s1) * dx)
}
