//! Gate fidelity over fiducial sets, per-channel error budgets, and Ramsey
//! coherence-time extraction.
//!
//! Entanglement fidelity averages state overlaps over a complete fiducial
//! set, `F_e = 4^-n sum Tr[rho_actual rho_ideal]`, and maps to the average
//! gate fidelity through `F_g = (2^n F_e + 1)/(2^n + 1)`. Actual states are
//! density matrices projected onto the computational subspace without
//! renormalization, so leaked population lowers the fidelity.

use std::f64::consts::TAU;

use nalgebra::{Complex, DMatrix, DVector};

use crate::fit::fit_least_squares;
use crate::noise::{
    monte_carlo, HyperfineSpec, MonteCarloPlan, NoiseConfig, NoiseRealization,
    HYPERFINE_PRECESSION_FACTOR,
};
use crate::{Error, Result};

type C64 = Complex<f64>;

/// Complete fiducial set of an `n`-qubit computational space: per qubit
/// `{|0>, |1>, (|0>+|1>)/sqrt2, (|0>+i|1>)/sqrt2}`, tensored.
#[derive(Debug, Clone)]
pub struct FiducialSet {
    pub n_qubits: usize,
    pub vectors: Vec<DVector<C64>>,
}

impl FiducialSet {
    pub fn single_qubit() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let vectors = vec![
            DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]),
            DVector::from_vec(vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)]),
            DVector::from_vec(vec![C64::new(s, 0.0), C64::new(s, 0.0)]),
            DVector::from_vec(vec![C64::new(s, 0.0), C64::new(0.0, s)]),
        ];
        FiducialSet {
            n_qubits: 1,
            vectors,
        }
    }

    pub fn two_qubit() -> Self {
        let single = Self::single_qubit();
        let mut vectors = Vec::with_capacity(16);
        for a in &single.vectors {
            for b in &single.vectors {
                let mut v = DVector::<C64>::zeros(4);
                for i in 0..2 {
                    for j in 0..2 {
                        v[(i << 1) | j] = a[i] * b[j];
                    }
                }
                vectors.push(v);
            }
        }
        FiducialSet {
            n_qubits: 2,
            vectors,
        }
    }

    pub fn for_qubits(n_qubits: usize) -> Result<Self> {
        match n_qubits {
            1 => Ok(Self::single_qubit()),
            2 => Ok(Self::two_qubit()),
            _ => Err(Error::Invalid(format!(
                "fiducial sets exist for 1 or 2 qubits, not {n_qubits}"
            ))),
        }
    }

    /// The fiducials as density matrices.
    pub fn states(&self) -> Vec<DMatrix<C64>> {
        self.vectors.iter().map(|v| v * v.adjoint()).collect()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// `R(theta, phi) = exp[-i theta (cos(phi) sx - sin(phi) sy) / 2]`.
pub fn rotation_gate(theta: f64, phi: f64) -> DMatrix<C64> {
    let (s, c) = (0.5 * theta).sin_cos();
    // axis n = (cos phi, -sin phi, 0)
    let nx = phi.cos();
    let ny = -phi.sin();
    DMatrix::from_row_slice(
        2,
        2,
        &[
            C64::new(c, 0.0),
            C64::new(-ny * s, -nx * s),
            C64::new(ny * s, -nx * s),
            C64::new(c, 0.0),
        ],
    )
}

/// Ideal CZ: `diag(1, 1, 1, -1)`.
pub fn cz_gate() -> DMatrix<C64> {
    let mut m = DMatrix::<C64>::identity(4, 4);
    m[(3, 3)] = C64::new(-1.0, 0.0);
    m
}

/// Entanglement fidelity of projected (possibly trace-deficient) final
/// states against the ideal unitary applied to the same fiducials.
pub fn entanglement_fidelity(
    actual: &[DMatrix<C64>],
    ideal_unitary: &DMatrix<C64>,
    fiducials: &FiducialSet,
) -> Result<f64> {
    if actual.len() != fiducials.len() {
        return Err(Error::DimensionMismatch {
            expected: fiducials.len(),
            got: actual.len(),
        });
    }
    let dim = 1 << fiducials.n_qubits;
    if ideal_unitary.nrows() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: ideal_unitary.nrows(),
        });
    }
    let mut sum = 0.0;
    for (rho_actual, fid) in actual.iter().zip(&fiducials.vectors) {
        if rho_actual.nrows() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: rho_actual.nrows(),
            });
        }
        // Tr[rho_actual |psi_ideal><psi_ideal|] = <psi| rho |psi>
        let psi = ideal_unitary * fid;
        let val = (psi.adjoint() * rho_actual * &psi)[(0, 0)];
        sum += val.re;
    }
    Ok(sum / fiducials.len() as f64)
}

/// `F_g = (2^n F_e + 1) / (2^n + 1)`.
pub fn average_fidelity(f_e: f64, n_qubits: usize) -> f64 {
    let d = (1usize << n_qubits) as f64;
    (d * f_e + 1.0) / (d + 1.0)
}

/// One error channel of a budget: mean gate error and Monte Carlo spread.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ChannelError {
    pub error: f64,
    pub stderr: f64,
}

/// Per-channel error budget of a gate plus leakage accounting.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FidelityReport {
    /// Entanglement fidelity with both noise channels active.
    pub entanglement_fidelity: f64,
    /// Average gate fidelity with both noise channels active.
    pub average_fidelity: f64,
    /// Mean leaked population outside the computational subspace (both
    /// noise channels active).
    pub leakage: f64,
    pub leakage_stderr: f64,
    /// Noise-free gate error.
    pub coherent: ChannelError,
    /// Charge noise only.
    pub charge: ChannelError,
    /// Hyperfine noise only.
    pub hyperfine: ChannelError,
    /// Both channels.
    pub total: ChannelError,
}

/// A gate experiment that can be sampled per noise realization, yielding the
/// entanglement fidelity and mean leakage over its fiducial set.
pub trait GateExperiment: Sync {
    fn n_qubits(&self) -> usize;
    fn sample(&self, noise: &NoiseConfig, master_seed: u64, index: u64) -> Result<(f64, f64)>;
}

/// Run the four noise configurations of a budget: noise-free (coherent),
/// charge only, hyperfine only, and both; reports `1 - F_g` per channel.
pub fn error_budget(
    experiment: &dyn GateExperiment,
    noise: &NoiseConfig,
    plan: &MonteCarloPlan,
) -> Result<FidelityReport> {
    let n_qubits = experiment.n_qubits();
    let error_of = |f_e: f64| 1.0 - average_fidelity(f_e, n_qubits);

    let (fe_coh, _) = experiment.sample(&NoiseConfig::none(), plan.master_seed, 0)?;
    let coherent = ChannelError {
        error: error_of(fe_coh),
        stderr: 0.0,
    };

    let mut channel = |cfg: NoiseConfig| -> Result<(ChannelError, McOut)> {
        let stats = monte_carlo(plan, |idx| {
            let (f_e, leak) = experiment.sample(&cfg, plan.master_seed, idx)?;
            Ok(vec![error_of(f_e), f_e, leak])
        })?;
        Ok((
            ChannelError {
                error: stats.mean[0],
                stderr: stats.stderr[0],
            },
            McOut {
                f_e: stats.mean[1],
                leak: stats.mean[2],
                leak_stderr: stats.stderr[2],
            },
        ))
    };

    struct McOut {
        f_e: f64,
        leak: f64,
        leak_stderr: f64,
    }

    let charge_cfg = NoiseConfig {
        charge: noise.charge,
        hyperfine: None,
    };
    let hyper_cfg = NoiseConfig {
        charge: None,
        hyperfine: noise.hyperfine,
    };
    let (charge, _) = channel(charge_cfg)?;
    let (hyperfine, _) = channel(hyper_cfg)?;
    let (total, out) = channel(*noise)?;

    Ok(FidelityReport {
        entanglement_fidelity: out.f_e,
        average_fidelity: average_fidelity(out.f_e, n_qubits),
        leakage: out.leak,
        leakage_stderr: out.leak_stderr,
        coherent,
        charge,
        hyperfine,
        total,
    })
}

/// Ramsey fit parameters: `P(t) = A exp(-(t/T2*)^2) cos(2 pi f t + phi) + B`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RamseyFit {
    pub t2star: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub offset: f64,
    pub residual_rms: f64,
    /// Set when the fitted decay exceeds the sampled window, e.g. at zero
    /// noise amplitude; the `t2star` value is then only a lower bound.
    pub window_limited: bool,
}

/// Ramsey experiment layout: ideal pi/2 pulses around a free hold, with an
/// artificial detuning so the fringe frequency is visible in the window.
#[derive(Debug, Clone)]
pub struct RamseyConfig {
    pub hyperfine: HyperfineSpec,
    /// Artificial detuning (rad/s) between drive frame and spin.
    pub detuning: f64,
    pub delays: Vec<f64>,
    pub plan: MonteCarloPlan,
}

impl RamseyConfig {
    /// Delays spanning `window` seconds at `n_delays` points with a default
    /// 1 MHz artificial detuning.
    pub fn new(hyperfine: HyperfineSpec, window: f64, n_delays: usize, plan: MonteCarloPlan) -> Self {
        let delays = (0..n_delays)
            .map(|i| window * i as f64 / (n_delays - 1) as f64)
            .collect();
        RamseyConfig {
            hyperfine,
            detuning: TAU * 1.0e6,
            delays,
            plan,
        }
    }
}

/// Simulate the Ramsey sequence (pi/2 - hold t - pi/2) of a single spin per
/// realization, average the spin-down population, and fit the Gaussian-decay
/// cosine. Also returns the averaged `(t, P_down)` data.
pub fn ramsey_t2star(cfg: &RamseyConfig) -> Result<(RamseyFit, Vec<(f64, f64)>)> {
    if cfg.delays.len() < 8 {
        return Err(Error::Invalid("Ramsey needs at least 8 delay points".into()));
    }
    let x90 = rotation_gate(std::f64::consts::FRAC_PI_2, 0.0);
    let stats = monte_carlo(&cfg.plan, |idx| {
        let mut rng = NoiseRealization::rng_for(cfg.plan.master_seed, idx);
        let offsets = crate::noise::sample_hyperfine(&cfg.hyperfine, 1, &mut rng);
        // precession-frequency shift in the drive frame
        let delta = HYPERFINE_PRECESSION_FACTOR * offsets[0] + cfg.detuning;
        let sample: Vec<f64> = cfg
            .delays
            .iter()
            .map(|&t| {
                // |0> = spin-up ground state; hold phase on the coherence
                let hold = DMatrix::from_diagonal(&DVector::from_vec(vec![
                    C64::from_polar(1.0, 0.5 * delta * t),
                    C64::from_polar(1.0, -0.5 * delta * t),
                ]));
                let u = &x90 * hold * &x90;
                // spin-down population from |0>
                u[(1, 0)].norm_sqr()
            })
            .collect();
        Ok(sample)
    })?;
    let data: Vec<(f64, f64)> = cfg.delays.iter().copied().zip(stats.mean).collect();
    let fit = fit_ramsey(&data)?;
    Ok((fit, data))
}

/// Fit `A exp(-(t/T2)^2) cos(2 pi f t + phi) + B` to averaged Ramsey data.
pub fn fit_ramsey(data: &[(f64, f64)]) -> Result<RamseyFit> {
    let t: Vec<f64> = data.iter().map(|d| d.0).collect();
    let y: Vec<f64> = data.iter().map(|d| d.1).collect();
    let n = y.len();
    let window = t[n - 1] - t[0];

    // initial guesses: offset from the mean, amplitude from half the
    // peak-to-peak, frequency from the discrete spectrum peak, decay from
    // the envelope 1/e point
    let b0 = y.iter().sum::<f64>() / n as f64;
    let (y_min, y_max) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let a0 = 0.5 * (y_max - y_min);
    let f0 = dominant_frequency(&t, &y, b0);
    let mut t2_0 = window;
    for (&ti, &yi) in t.iter().zip(&y).rev() {
        if (yi - b0).abs() > a0 * (-1.0f64).exp() {
            t2_0 = ti.max(window / 10.0);
            break;
        }
    }
    let p0 = [a0.max(1e-6), b0, f0, 0.0, t2_0];
    let model = |p: &[f64], x: f64| {
        let decay = (-(x / p[4]) * (x / p[4])).exp();
        p[0] * decay * (TAU * p[2] * x + p[3]).cos() + p[1]
    };
    let jac = |p: &[f64], x: f64, g: &mut [f64]| {
        let decay = (-(x / p[4]) * (x / p[4])).exp();
        let arg = TAU * p[2] * x + p[3];
        let (s, c) = arg.sin_cos();
        g[0] = decay * c;
        g[1] = 1.0;
        g[2] = -p[0] * decay * s * TAU * x;
        g[3] = -p[0] * decay * s;
        g[4] = p[0] * decay * c * 2.0 * x * x / (p[4] * p[4] * p[4]);
    };
    let fit = fit_least_squares(&t, &y, &p0, model, jac, 200)?;
    let t2star = fit.params[4].abs();
    Ok(RamseyFit {
        t2star,
        amplitude: fit.params[0],
        frequency: fit.params[2],
        phase: fit.params[3],
        offset: fit.params[1],
        residual_rms: fit.residual_rms,
        window_limited: t2star > window,
    })
}

fn dominant_frequency(t: &[f64], y: &[f64], offset: f64) -> f64 {
    let n = y.len();
    let window = t[n - 1] - t[0];
    let mut best = (0.0, 1.0 / window);
    for k in 1..n / 2 {
        let f = k as f64 / window;
        let mut re = 0.0;
        let mut im = 0.0;
        for (&ti, &yi) in t.iter().zip(y) {
            let arg = TAU * f * (ti - t[0]);
            re += (yi - offset) * arg.cos();
            im += (yi - offset) * arg.sin();
        }
        let p = re * re + im * im;
        if p > best.0 {
            best = (p, f);
        }
    }
    best.1
}

/// Least-squares slope of `T2*(sigma) = Omega / (sigma/2pi)` across a sigma
/// sweep: the dimensionless calibration constant of the quasi-static model.
pub fn ramsey_omega_constant(points: &[(HyperfineSpec, f64)]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (spec, t2) in points {
        let x = TAU / spec.sigma_bz; // 1 / (sigma/2pi)
        num += t2 * x;
        den += x * x;
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_unitary_2(rng: &mut StdRng) -> DMatrix<C64> {
        // Z(a) R(theta, phi) Z(b) spans SU(2)
        let z = |l: f64| {
            DMatrix::from_diagonal(&DVector::from_vec(vec![
                C64::from_polar(1.0, -0.5 * l),
                C64::from_polar(1.0, 0.5 * l),
            ]))
        };
        z(rng.gen_range(-3.0..3.0))
            * rotation_gate(rng.gen_range(0.0..3.0), rng.gen_range(-3.0..3.0))
            * z(rng.gen_range(-3.0..3.0))
    }

    #[test]
    fn perfect_gate_has_unit_fidelity() {
        let fid = FiducialSet::single_qubit();
        let u = rotation_gate(std::f64::consts::FRAC_PI_2, 0.3);
        let actual: Vec<DMatrix<C64>> = fid
            .vectors
            .iter()
            .map(|v| {
                let psi = &u * v;
                &psi * psi.adjoint()
            })
            .collect();
        let f_e = entanglement_fidelity(&actual, &u, &fid).unwrap();
        assert_relative_eq!(f_e, 1.0, epsilon = 1e-12);
        assert_relative_eq!(average_fidelity(f_e, 1), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn small_z_error_fidelity_matches_closed_form() {
        // actual = Z(eps) after the ideal: F_e = (1 + cos(eps/1))^2/4 ...
        // computed by brute force over the fiducials instead
        let fid = FiducialSet::single_qubit();
        let ideal = rotation_gate(std::f64::consts::FRAC_PI_2, 0.0);
        for eps in [0.0, 1e-3, 1e-2, 0.1] {
            let z = DMatrix::from_diagonal(&DVector::from_vec(vec![
                C64::from_polar(1.0, -0.5 * eps),
                C64::from_polar(1.0, 0.5 * eps),
            ]));
            let u = &z * &ideal;
            let actual: Vec<DMatrix<C64>> = fid
                .vectors
                .iter()
                .map(|v| {
                    let psi = &u * v;
                    &psi * psi.adjoint()
                })
                .collect();
            let f_e = entanglement_fidelity(&actual, &ideal, &fid).unwrap();
            // brute-force oracle: F_e = (1/4) sum |<psi_ideal|Z|psi_ideal>|^2
            let mut oracle = 0.0;
            for v in &fid.vectors {
                let psi = &ideal * v;
                let amp = (psi.adjoint() * &z * &psi)[(0, 0)];
                oracle += amp.norm_sqr();
            }
            oracle /= 4.0;
            assert_relative_eq!(f_e, oracle, epsilon = 1e-12);
            if eps == 0.0 {
                assert_relative_eq!(f_e, 1.0, epsilon = 1e-12);
            } else {
                assert!(f_e < 1.0);
            }
        }
    }

    #[test]
    fn fidelity_bounds_and_affine_relation_hold() {
        let mut rng = StdRng::seed_from_u64(3);
        let fid = FiducialSet::single_qubit();
        for _ in 0..50 {
            let ideal = random_unitary_2(&mut rng);
            let actual_u = random_unitary_2(&mut rng);
            // random trace-non-increasing map: unitary then partial leak
            let keep: f64 = rng.gen_range(0.2..1.0);
            let actual: Vec<DMatrix<C64>> = fid
                .vectors
                .iter()
                .map(|v| {
                    let psi = &actual_u * v;
                    (&psi * psi.adjoint()) * C64::new(keep, 0.0)
                })
                .collect();
            let f_e = entanglement_fidelity(&actual, &ideal, &fid).unwrap();
            assert!((0.0..=1.0 + 1e-12).contains(&f_e), "F_e = {f_e}");
            let f_g = average_fidelity(f_e, 1);
            assert_relative_eq!(f_g, (2.0 * f_e + 1.0) / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn shared_virtual_z_leaves_fidelity_unchanged() {
        let mut rng = StdRng::seed_from_u64(9);
        let fid = FiducialSet::single_qubit();
        let ideal = rotation_gate(std::f64::consts::FRAC_PI_2, 0.0);
        let actual_u = random_unitary_2(&mut rng);
        let f_of = |post: &DMatrix<C64>| {
            let actual: Vec<DMatrix<C64>> = fid
                .vectors
                .iter()
                .map(|v| {
                    let psi = post * &actual_u * v;
                    &psi * psi.adjoint()
                })
                .collect();
            entanglement_fidelity(&actual, &(post * &ideal), &fid).unwrap()
        };
        let id = DMatrix::<C64>::identity(2, 2);
        let z = DMatrix::from_diagonal(&DVector::from_vec(vec![
            C64::from_polar(1.0, -0.4),
            C64::from_polar(1.0, 0.4),
        ]));
        assert_relative_eq!(f_of(&id), f_of(&z), epsilon = 1e-12);
    }

    #[test]
    fn ramsey_fit_recovers_synthetic_parameters() {
        let truth = RamseyFit {
            t2star: 2.5e-6,
            amplitude: 0.5,
            frequency: 1.1e6,
            phase: 0.2,
            offset: 0.5,
            residual_rms: 0.0,
            window_limited: false,
        };
        let data: Vec<(f64, f64)> = (0..200)
            .map(|i| {
                let t = 6.0e-6 * i as f64 / 199.0;
                let y = truth.amplitude
                    * (-(t / truth.t2star) * (t / truth.t2star)).exp()
                    * (TAU * truth.frequency * t + truth.phase).cos()
                    + truth.offset;
                (t, y)
            })
            .collect();
        let fit = fit_ramsey(&data).unwrap();
        assert_relative_eq!(fit.t2star, truth.t2star, max_relative = 1e-6);
        assert_relative_eq!(fit.amplitude, truth.amplitude, max_relative = 1e-6);
        assert_relative_eq!(fit.frequency, truth.frequency, max_relative = 1e-6);
        assert_relative_eq!(fit.offset, truth.offset, max_relative = 1e-6);
        assert!(fit.residual_rms < 1e-9);
    }

    #[test]
    fn ramsey_t2star_matches_quasistatic_model() {
        // T2* = 1/(sqrt 2 sigma): 2.81 us at sigma = 2 pi x 0.04 MHz
        let hyperfine = HyperfineSpec::from_hz(0.04e6);
        let plan = MonteCarloPlan::new(256, 7);
        let cfg = RamseyConfig::new(hyperfine, 6.0e-6, 121, plan);
        let (fit, _) = ramsey_t2star(&cfg).unwrap();
        assert_relative_eq!(fit.t2star, 2.81e-6, max_relative = 0.10);
        assert!(!fit.window_limited);
    }

    #[test]
    fn ramsey_zero_noise_is_window_limited() {
        let hyperfine = HyperfineSpec { sigma_bz: 0.0 };
        let plan = MonteCarloPlan::new(4, 7);
        let cfg = RamseyConfig::new(hyperfine, 6.0e-6, 121, plan);
        let (fit, _) = ramsey_t2star(&cfg).unwrap();
        assert!(fit.window_limited, "t2star = {}", fit.t2star);
    }

    #[test]
    fn omega_constant_recovers_sqrt_half_over_tau() {
        // synthetic points following T2 = 1/(sqrt(2) sigma)
        let points: Vec<(HyperfineSpec, f64)> = [0.02e6, 0.04e6, 0.06e6]
            .iter()
            .map(|&f| {
                let spec = HyperfineSpec::from_hz(f);
                let t2 = 1.0 / (2.0f64.sqrt() * spec.sigma_bz);
                (spec, t2)
            })
            .collect();
        let omega = ramsey_omega_constant(&points);
        assert_relative_eq!(omega, 2.0f64.sqrt() / (2.0 * TAU), max_relative = 1e-12);
    }
}
