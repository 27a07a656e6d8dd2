//! Unit conventions: geometry in mm, optical coefficients in cm⁻¹.

pub const MM_PER_CM: f64 = 10.0;

#[inline]
pub fn mm_to_cm(mm: f64) -> f64 {
    mm / MM_PER_CM
}

#[inline]
pub fn cm_to_mm(cm: f64) -> f64 {
    cm * MM_PER_CM
}

/// Amplitude ratio in decibels (20·log10).
#[inline]
pub fn amplitude_db(ratio: f64) -> f64 {
    20.0 * ratio.log10()
}

/// Energy (power) ratio in decibels (10·log10).
#[inline]
pub fn energy_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}
