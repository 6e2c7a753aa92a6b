//! Physical constants and the unit system used throughout the crate.
//!
//! Positions are in cm, gradients in mT/m, times in ms. With those units the
//! phase accrued by a spin at position `x` under gradient `g` for `dt` is
//! `K_PER_AREA * g * x * dt` radians.

/// Proton gyromagnetic ratio.
pub const GAMMA_RAD_PER_S_PER_T: f64 = 2.675e8;

/// k-space extent (rad/cm) per unit gradient area (mT/m * ms).
pub const K_PER_AREA: f64 = GAMMA_RAD_PER_S_PER_T * 1e-3 * 1e-2 * 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicsConstants {
    pub gamma_rad_per_s_per_t: f64,
}

impl Default for PhysicsConstants {
    fn default() -> Self {
        Self {
            gamma_rad_per_s_per_t: GAMMA_RAD_PER_S_PER_T,
        }
    }
}

/// Nyquist k-space step for a field of view, rad/cm.
pub fn delta_k(fov_cm: f64) -> f64 {
    std::f64::consts::TAU / fov_cm
}

/// Gradient area (mT/m * ms) that moves the trajectory by `k_index` steps.
pub fn area_for_k_index(k_index: f64, fov_cm: f64) -> f64 {
    k_index * delta_k(fov_cm) / K_PER_AREA
}

/// k-space displacement, in Nyquist steps, produced by a gradient area.
pub fn k_index_for_area(area: f64, fov_cm: f64) -> f64 {
    area * K_PER_AREA / delta_k(fov_cm)
}
