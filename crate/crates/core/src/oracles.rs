//! Closed-form cross-checks for the numeric stack.
//!
//! Three families of results, each with an independent evaluation route so
//! the simulator can be validated against them:
//!
//! - the drive error integrals `I_x`, `I_z` of a raised-cosine resonant
//!   exchange pulse, in closed form and by adaptive quadrature of their
//!   defining integrals;
//! - the Magnus zeroth-order propagator of the driven qubit;
//! - perturbative ZZ-interaction strengths for the direct chain (first
//!   order) and the coupler chain (full second order plus the large-detuning
//!   approximation).
//!
//! The closed forms have removable singularities at `omega_d tau` in
//! `{pi, 2 pi}`; those are evaluated by series expansion whenever the bare
//! denominator would lose more than six digits.

use std::f64::consts::PI;

use nalgebra::{Complex, Matrix2};

use crate::chain::{Bond, ChainSpec, Topology};
use crate::units::HBAR;
use crate::{Error, Result};

type C64 = Complex<f64>;

/// Frame parameters of a driven RST qubit: dressed frequency, mixing angle
/// between quantization and exchange axes, and the drive tone.
#[derive(Debug, Clone, Copy)]
pub struct QubitFrameParams {
    /// Dressed qubit angular frequency (rad/s).
    pub omega_q: f64,
    /// Mixing angle: cos = |detuning|/omega_q, sin = J_r/(hbar omega_q).
    pub theta_mix: f64,
    /// Drive amplitude (J).
    pub j_d: f64,
    /// Carrier angular frequency (rad/s).
    pub omega_d: f64,
    /// Carrier phase (rad).
    pub phase: f64,
    /// Pulse width (s).
    pub width: f64,
}

impl QubitFrameParams {
    /// Derive the frame of qubit 1 or 2 of a chain, given a drive.
    pub fn for_qubit(
        spec: &ChainSpec,
        qubit: usize,
        j_d: f64,
        omega_d: f64,
        phase: f64,
        width: f64,
    ) -> Result<Self> {
        let (s0, s1, bond) = match qubit {
            1 => (0, 1, Bond::B12),
            2 => (2, 3, Bond::B34),
            _ => {
                return Err(Error::InvalidSpec(format!(
                    "qubit index {qubit} not in {{1, 2}}"
                )))
            }
        };
        let delta = spec.larmor(s0) - spec.larmor(s1);
        let jr = spec.residual(bond);
        let omega_q = (delta * delta + (jr / HBAR) * (jr / HBAR)).sqrt();
        let theta_mix = (jr / (HBAR * omega_q)).atan2(delta.abs() / omega_q);
        Ok(QubitFrameParams {
            omega_q,
            theta_mix,
            j_d,
            omega_d,
            phase,
            width,
        })
    }

    fn validate(&self) -> Result<()> {
        let vals = [
            self.omega_q,
            self.theta_mix,
            self.j_d,
            self.omega_d,
            self.phase,
            self.width,
        ];
        if vals.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("qubit frame parameters"))
        }
    }
}

/// Ratio of analytic functions with a removable singularity: numerator and
/// denominator both vanish at the pole. Away from the pole the bare ratio is
/// used; inside a small window a first-order expansion around the pole.
fn removable(num: C64, den: f64, near_pole: impl FnOnce() -> C64, near: bool) -> C64 {
    if near {
        near_pole()
    } else {
        num / C64::new(den, 0.0)
    }
}

/// Closed forms of the drive error integrals `I_k = (1/hbar) int eps_k dt`.
///
/// Returns `(I_x, I_z)` with `I_x` complex and `I_z` real. At commensurate
/// widths `omega_d tau = 2 pi n` with `n >= 2`, `I_x` vanishes identically
/// and `I_z` loses its phase dependence.
pub fn error_integrals(p: &QubitFrameParams) -> Result<(C64, f64)> {
    p.validate()?;
    let x = p.omega_d * p.width;
    let phi = p.phase;
    let (sin_t, cos_t) = p.theta_mix.sin_cos();
    let tol = 1e-6 * x.abs().max(1.0);

    // A = (1 - e^{-2ix}) / (pi^2 - x^2), removable at x = +-pi
    let a = {
        let near = (x.abs() - PI).abs() < tol;
        let x0 = PI.copysign(x);
        removable(
            C64::new(1.0, 0.0) - (-C64::i() * 2.0 * x).exp(),
            PI * PI - x * x,
            || {
                let d = x - x0;
                // (2i - 2d + O(d^2)) / -(2 x0 + d)
                (C64::new(-2.0 * d, 2.0) + C64::new(0.0, -4.0 / 3.0) * d * d)
                    / C64::new(-(2.0 * x0 + d), 0.0)
            },
            near,
        )
    };
    // B = 16 (1 - e^{-ix}) / (4 pi^2 - x^2), removable at x = +-2pi
    let b = {
        let near = (x.abs() - 2.0 * PI).abs() < tol;
        let x0 = (2.0 * PI).copysign(x);
        removable(
            (C64::new(1.0, 0.0) - (-C64::i() * x).exp()) * 16.0,
            4.0 * PI * PI - x * x,
            || {
                let d = x - x0;
                // 16 (i + d/2 - i d^2/6) / -(2 x0 + d)
                C64::new(0.5 * d, 1.0 - d * d / 6.0) * 16.0 / C64::new(-(2.0 * x0 + d), 0.0)
            },
            near,
        )
    };
    let pref = C64::new(PI * PI * p.j_d * cos_t, 0.0) / (C64::i() * 16.0 * HBAR * p.omega_d);
    let ix = pref * ((-C64::i() * phi).exp() * a + b);

    // C = (sin(x + phi) - sin(phi)) / (4 pi^2 - x^2), removable at x = +-2pi
    let c = {
        let near = (x.abs() - 2.0 * PI).abs() < tol;
        let x0 = (2.0 * PI).copysign(x);
        if near {
            let d = x - x0;
            -(phi.cos() - 0.5 * phi.sin() * d) / (2.0 * x0 + d)
        } else {
            ((x + phi).sin() - phi.sin()) / (4.0 * PI * PI - x * x)
        }
    };
    let iz = PI * PI * p.j_d * sin_t / (HBAR * p.omega_d) * (x / (4.0 * PI * PI) + c);
    Ok((ix, iz))
}

/// Magnus zeroth-order propagator of the driven qubit in the frame rotating
/// at the carrier: the exponential of the time-averaged effective
/// Hamiltonian, expressed through the error integrals.
pub fn magnus_u0(p: &QubitFrameParams) -> Result<Matrix2<C64>> {
    let (ix, iz) = error_integrals(p)?;
    let base = p.j_d * p.width * p.theta_mix.cos() / (4.0 * HBAR);
    let t1 = base * p.phase.cos() + 2.0 * ix.re;
    let t2 = -base * p.phase.sin() - 2.0 * ix.im;
    let t3 = -2.0 * iz;
    let theta = (t1 * t1 + t2 * t2 + t3 * t3).sqrt();
    if theta == 0.0 {
        return Ok(Matrix2::identity());
    }
    let (s, c) = (0.5 * theta).sin_cos();
    let nz = t3 / theta;
    let diag = C64::new(c, -nz * s);
    let upper = -C64::new(t2, t1) / theta * s;
    let lower = C64::new(t2, -t1) / theta * s;
    Ok(Matrix2::new(diag, upper, lower, diag.conj()))
}

/// First-order ZZ-interaction of the direct chain: `zeta = -J23^r` (J).
pub fn zz_direct_perturbative(spec: &ChainSpec) -> Result<f64> {
    if spec.topology() != Topology::Direct4 {
        return Err(Error::InvalidSpec(
            "direct-chain perturbative ZZ needs the Direct4 topology".into(),
        ));
    }
    Ok(-spec.residual(Bond::B23))
}

/// Evaluation mode for the coupler-chain perturbative ZZ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplerZzMode {
    /// Full second-order expression with exchange-shifted denominators.
    Full2ndOrder,
    /// Large-detuning approximation
    /// `zeta ~ -(J2c J3c / 4 hbar^2)(J2c/D2c^2 + J3c/D3c^2)`.
    LargeDetuning,
}

/// Perturbative ZZ-interaction (J) mediated by the single-spin coupler.
pub fn zz_coupler_perturbative(spec: &ChainSpec, mode: CouplerZzMode) -> Result<f64> {
    if spec.topology() != Topology::Coupler5 {
        return Err(Error::InvalidSpec(
            "coupler perturbative ZZ needs the Coupler5 topology".into(),
        ));
    }
    let j12 = spec.residual(Bond::B12);
    let j34 = spec.residual(Bond::B34);
    let j2c = spec.residual(Bond::B2C);
    let j3c = spec.residual(Bond::B3C);
    // signed detunings omega_k - omega_c
    let d2c = spec.larmor(1) - spec.larmor(4);
    let d3c = spec.larmor(2) - spec.larmor(4);
    match mode {
        CouplerZzMode::Full2ndOrder => {
            let mut zeta = 0.0;
            for (jkc, jother, jintra, delta) in [(j2c, j3c, j12, d2c), (j3c, j2c, j34, d3c)] {
                let base = 2.0 * HBAR * delta;
                let scale = base.abs() + jother + jintra;
                let den_plus = base + jother - jintra;
                let den_minus = base - jother - jintra;
                if den_plus.abs() < 1e-6 * scale || den_minus.abs() < 1e-6 * scale {
                    return Err(Error::NearResonance(
                        den_plus.abs().min(den_minus.abs()) / scale,
                    ));
                }
                zeta += 0.5 * jkc * jkc * (1.0 / den_plus - 1.0 / den_minus);
            }
            Ok(zeta)
        }
        CouplerZzMode::LargeDetuning => {
            if d2c == 0.0 || d3c == 0.0 {
                return Err(Error::NearResonance(0.0));
            }
            Ok(-j2c * j3c / (4.0 * HBAR * HBAR) * (j2c / (d2c * d2c) + j3c / (d3c * d3c)))
        }
    }
}

/// Adaptive Simpson quadrature of a complex-valued function on `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> C64>(f: &F, a: f64, b: f64, tol: f64) -> C64 {
    fn simpson(fa: C64, fm: C64, fb: C64, h: f64) -> C64 {
        (fa + fm * 4.0 + fb) * (h / 6.0)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> C64>(
        f: &F,
        a: f64,
        b: f64,
        fa: C64,
        fm: C64,
        fb: C64,
        whole: C64,
        tol: f64,
        depth: u32,
    ) -> C64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        if depth == 0 || delta.norm() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(fa, fm, fb, b - a);
    recurse(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// `I_x`, `I_z` by direct quadrature of their defining integrals; the
/// independent route checking [`error_integrals`].
pub fn error_integrals_quadrature(p: &QubitFrameParams) -> (C64, f64) {
    let tau = p.width;
    let (sin_t, cos_t) = p.theta_mix.sin_cos();
    let envelope = |t: f64| 0.5 - 0.5 * (2.0 * PI * t / tau).cos();
    let ex = |t: f64| -> C64 {
        let osc = (-C64::i() * (p.omega_d * t)).exp() * 2.0
            + (-C64::i() * (2.0 * p.omega_d * t + p.phase)).exp();
        osc * (0.25 * p.j_d * envelope(t) * cos_t / HBAR)
    };
    let ez = |t: f64| -> C64 {
        C64::new(
            0.5 * p.j_d * envelope(t) * sin_t * (1.0 + (p.omega_d * t + p.phase).cos()) / HBAR,
            0.0,
        )
    };
    let scale = (p.j_d * tau / HBAR).abs().max(1e-30);
    let ix = adaptive_simpson(&ex, 0.0, tau, 1e-13 * scale);
    let iz = adaptive_simpson(&ez, 0.0, tau, 1e-13 * scale).re;
    (ix, iz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::ChainSpec;
    use crate::units::{energy_from_hz, hz_from_energy};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::TAU;

    /// Generic frame handy for oracle-only tests.
    fn frame(x: f64, phi: f64, sin_theta: f64) -> QubitFrameParams {
        let omega_d = TAU * 150.0e6;
        QubitFrameParams {
            omega_q: omega_d,
            theta_mix: sin_theta.asin(),
            j_d: energy_from_hz(25.0e6),
            omega_d,
            phase: phi,
            width: x / omega_d,
        }
    }

    #[test]
    fn ix_vanishes_at_commensurate_widths() {
        for n in 2..=10 {
            let p = frame(TAU * n as f64, 0.7, 0.013);
            let (ix, _) = error_integrals(&p).unwrap();
            let scale = p.j_d * p.width / HBAR;
            assert!(
                ix.norm() < 1e-12 * scale,
                "n = {n}: |I_x| = {} (scale {scale})",
                ix.norm()
            );
        }
    }

    #[test]
    fn iz_phase_independent_at_commensurate_widths() {
        let base = frame(TAU * 4.0, 0.0, 0.013);
        let (_, iz0) = error_integrals(&base).unwrap();
        for phi in [0.3, 1.0, 2.5, -1.2] {
            let p = frame(TAU * 4.0, phi, 0.013);
            let (_, iz) = error_integrals(&p).unwrap();
            assert_relative_eq!(iz, iz0, max_relative = 1e-12);
        }
        // and equals J_d tau sin(theta) / (4 hbar)
        let expect = base.j_d * base.width * base.theta_mix.sin() / (4.0 * HBAR);
        assert_relative_eq!(iz0, expect, max_relative = 1e-12);
    }

    #[test]
    fn iz_zero_for_aligned_axes() {
        let p = frame(7.0, 1.1, 0.0);
        let (_, iz) = error_integrals(&p).unwrap();
        assert_eq!(iz, 0.0);
    }

    #[test]
    fn closed_forms_match_quadrature_generic_point() {
        let p = frame(7.0, PI / 3.0, 0.013);
        let (ix, iz) = error_integrals(&p).unwrap();
        let (qx, qz) = error_integrals_quadrature(&p);
        let scale = p.j_d * p.width / HBAR;
        assert!((ix - qx).norm() < 1e-9 * scale);
        assert!((iz - qz).abs() < 1e-9 * scale);
    }

    #[test]
    fn closed_forms_match_quadrature_random_sample() {
        // 100 random parameter points, spanning near-pole widths too
        let mut rng = StdRng::seed_from_u64(7);
        for trial in 0..100 {
            let x = rng.gen_range(0.3..70.0);
            let phi = rng.gen_range(-PI..PI);
            let st = rng.gen_range(0.0..0.1);
            let p = frame(x, phi, st);
            let (ix, iz) = error_integrals(&p).unwrap();
            let (qx, qz) = error_integrals_quadrature(&p);
            let scale = p.j_d * p.width / HBAR;
            assert!(
                (ix - qx).norm() < 1e-9 * scale,
                "trial {trial}: x = {x}, I_x mismatch {}",
                (ix - qx).norm() / scale
            );
            assert!(
                (iz - qz).abs() < 1e-9 * scale,
                "trial {trial}: x = {x}, I_z mismatch {}",
                (iz - qz).abs() / scale
            );
        }
    }

    #[test]
    fn closed_forms_finite_at_poles() {
        for x in [PI, 2.0 * PI, PI + 1e-9, 2.0 * PI - 1e-9] {
            let p = frame(x, 0.4, 0.02);
            let (ix, iz) = error_integrals(&p).unwrap();
            assert!(ix.norm().is_finite() && iz.is_finite());
            let (qx, qz) = error_integrals_quadrature(&p);
            let scale = p.j_d * p.width / HBAR;
            assert!((ix - qx).norm() < 1e-8 * scale, "x = {x}");
            assert!((iz - qz).abs() < 1e-8 * scale, "x = {x}");
        }
    }

    #[test]
    fn magnus_ideal_limit_is_transversal_rotation() {
        // commensurate width, aligned axes: theta_1 = pi/2 gives R(pi/2, 0)
        let omega_d = TAU * 150.0e6;
        let width = 4.0 * TAU / omega_d;
        let j_d = TAU * HBAR / width; // J_d tau / (4 hbar) = pi/2
        let p = QubitFrameParams {
            omega_q: omega_d,
            theta_mix: 0.0,
            j_d,
            omega_d,
            phase: 0.0,
            width,
        };
        let u = magnus_u0(&p).unwrap();
        let angle = PI / 2.0;
        let (s, c) = (0.5 * angle).sin_cos();
        // R(theta, 0) = exp(-i theta sigma_x / 2)
        let r = Matrix2::new(
            C64::new(c, 0.0),
            C64::new(0.0, -s),
            C64::new(0.0, -s),
            C64::new(c, 0.0),
        );
        assert!((u - r).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-9);
    }

    #[test]
    fn magnus_angle_wraps_to_same_unitary() {
        let omega_d = TAU * 150.0e6;
        let width = 4.0 * TAU / omega_d;
        let j_d = TAU * HBAR / width;
        let mk = |j: f64| QubitFrameParams {
            omega_q: omega_d,
            theta_mix: 0.0,
            j_d: j,
            omega_d,
            phase: 0.3,
            width,
        };
        let u1 = magnus_u0(&mk(j_d)).unwrap();
        // theta_1: pi/2 -> pi/2 + 4 pi, same rotation
        let u2 = magnus_u0(&mk(j_d * 9.0)).unwrap();
        let diff = (u1 - u2).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "diff = {diff}");
    }

    #[test]
    fn magnus_zero_drive_is_identity() {
        let p = frame(TAU * 4.0, 0.0, 0.0);
        let p = QubitFrameParams { j_d: 0.0, ..p };
        let u = magnus_u0(&p).unwrap();
        assert_eq!(u, Matrix2::identity());
    }

    #[test]
    fn direct_zz_oracle() {
        let spec = ChainSpec::table1(Topology::Direct4);
        let zeta = zz_direct_perturbative(&spec).unwrap();
        assert_relative_eq!(hz_from_energy(zeta), -2.0e6, max_relative = 1e-12);
        let zero = spec.with_residual_hz(Bond::B23, 0.0).unwrap();
        assert_eq!(zz_direct_perturbative(&zero).unwrap(), 0.0);
    }

    #[test]
    fn coupler_zz_large_detuning_value() {
        // symmetric J/h = 12 MHz, detuning 60 MHz: zeta/h = -12^3/(2*60^2) MHz
        let spec = ChainSpec::table1(Topology::Coupler5);
        let zeta = zz_coupler_perturbative(&spec, CouplerZzMode::LargeDetuning).unwrap();
        assert_relative_eq!(hz_from_energy(zeta) / 1e6, -0.24, max_relative = 1e-9);
    }

    #[test]
    fn coupler_zz_vanishes_without_coupling() {
        let spec = ChainSpec::table1(Topology::Coupler5)
            .with_residual_hz(Bond::B2C, 0.0)
            .unwrap()
            .with_residual_hz(Bond::B3C, 0.0)
            .unwrap();
        for mode in [CouplerZzMode::Full2ndOrder, CouplerZzMode::LargeDetuning] {
            assert_eq!(zz_coupler_perturbative(&spec, mode).unwrap(), 0.0);
        }
    }

    #[test]
    fn coupler_zz_full_second_order_tracks_exact() {
        // away from resonances the full second-order expression stays within
        // 10% of exact diagonalization
        let spec = ChainSpec::table1(Topology::Coupler5);
        let zeta_p = zz_coupler_perturbative(&spec, CouplerZzMode::Full2ndOrder).unwrap();
        let h = crate::chain::build_hamiltonian(&spec, None).unwrap();
        let es = crate::eigen::diagonalize_and_label(&h).unwrap();
        let zeta_e = crate::eigen::zz_interaction(&es, Topology::Coupler5).unwrap();
        assert_relative_eq!(zeta_p, zeta_e, max_relative = 0.10);
    }

    #[test]
    fn coupler_zz_nonpositive_in_large_detuning_regime() {
        // large-detuning regime: coupler stays >= 40 MHz away from both
        // qubit-spin frequencies, exchange couplings well below the detuning
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..50 {
            let j: f64 = rng.gen_range(0.0..12.0e6);
            let off = rng.gen_range(-20.0e6..20.0e6);
            let spec = ChainSpec::table1(Topology::Coupler5)
                .with_residual_hz(Bond::B2C, j)
                .unwrap()
                .with_residual_hz(Bond::B3C, j)
                .unwrap()
                .with_larmor_hz(4, (10.60e9 + 10.48e9) / 2.0 + off)
                .unwrap();
            for mode in [CouplerZzMode::Full2ndOrder, CouplerZzMode::LargeDetuning] {
                let zeta = zz_coupler_perturbative(&spec, mode).unwrap();
                assert!(zeta <= 0.0, "mode {mode:?}: zeta = {} Hz", hz_from_energy(zeta));
            }
        }
    }

    #[test]
    fn coupler_zz_rejects_near_resonance() {
        // 2 hbar Delta2c ~ J3c + J12 makes a denominator vanish
        let spec = ChainSpec::table1(Topology::Coupler5)
            .with_larmor_hz(4, 10.60e9 - 7.0e6)
            .unwrap();
        assert!(matches!(
            zz_coupler_perturbative(&spec, CouplerZzMode::Full2ndOrder),
            Err(Error::NearResonance(_))
        ));
    }
}
