//! Physical constants and frequency/energy conversions.
//!
//! Energies are carried in joules inside the crate; interfaces accept and
//! report ordinary frequencies. Exchange couplings convert through `J = h f`,
//! Larmor frequencies through `omega = 2 pi f`.

use std::f64::consts::TAU;

/// Planck constant, J/Hz (exact SI value).
pub const H_PLANCK: f64 = 6.626_070_15e-34;

/// Reduced Planck constant, J s.
pub const HBAR: f64 = H_PLANCK / TAU;

/// Electron volt, J.
pub const EV: f64 = 1.602_176_634e-19;

/// Exchange energy (J) from an ordinary frequency J/h (Hz).
#[inline]
pub fn energy_from_hz(f: f64) -> f64 {
    H_PLANCK * f
}

/// Ordinary frequency J/h (Hz) from an exchange energy (J).
#[inline]
pub fn hz_from_energy(e: f64) -> f64 {
    e / H_PLANCK
}

/// Angular frequency (rad/s) from an ordinary frequency (Hz).
#[inline]
pub fn angular_from_hz(f: f64) -> f64 {
    TAU * f
}

/// Ordinary frequency (Hz) from an angular frequency (rad/s).
#[inline]
pub fn hz_from_angular(w: f64) -> f64 {
    w / TAU
}
