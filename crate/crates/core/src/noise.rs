//! Stochastic noise models: 1/f^beta charge noise on barrier voltages,
//! quasi-static hyperfine offsets on spin precession, and the seeded Monte
//! Carlo harness that averages over realizations.
//!
//! # Charge noise synthesis
//!
//! For an evolution of duration `T` sampled at `N` points, a unit-variance
//! white Gaussian series is Fourier transformed, the coefficient at bin `k`
//! (frequency `k/T`) is scaled by `(A_mu/gamma) sqrt((N/T) (k/T)^-beta)`, and
//! the series is inverse transformed. The DC bin is zeroed: it diverges for
//! `beta > 0` and a static offset is the hyperfine channel's job. The upper
//! half of the spectrum mirrors the lower conjugated, so the inverse
//! transform is exactly real. The resulting two-sided periodogram satisfies
//! `S(f) = (A_mu/gamma)^2 / f^beta`.
//!
//! # Hyperfine convention
//!
//! [`sample_hyperfine`] draws per-spin offsets `delta_omega ~ N(0, sigma^2)`.
//! The propagator injects them with [`HYPERFINE_PRECESSION_FACTOR`] = 2: the
//! stochastic term enters as `-hbar delta_omega s^z`, twice the half-quantum
//! Zeeman convention, so a spin's precession frequency shifts by
//! `2 delta_omega`. Under the quasi-static model this gives a Ramsey
//! coherence time `T2* = 1/(sqrt(2) sigma)`, the normalization the Ramsey
//! calibration in [`crate::metrics`] reproduces.
//!
//! # Reproducibility
//!
//! All randomness flows from ChaCha12 keyed by the master seed with the
//! realization index as the stream number, so a `(master_seed, index)` pair
//! names one realization on any platform. Draw order is fixed: charge series
//! per bond in canonical bond order, then hyperfine offsets per site.

use std::collections::BTreeMap;

use nalgebra::Complex;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::chain::Bond;
use crate::units::EV;
use crate::{Error, Result};

type C64 = Complex<f64>;

/// Factor between a sampled hyperfine offset and the induced shift of the
/// spin's precession frequency. See the module docs.
pub const HYPERFINE_PRECESSION_FACTOR: f64 = 2.0;

/// 1/f^beta charge-noise spectrum on a barrier voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargeNoiseSpec {
    /// PSD amplitude at 1 Hz (J / sqrt(Hz)).
    pub a_mu: f64,
    /// Lever arm converting energy noise to voltage noise (J/V).
    pub gamma: f64,
    /// Spectral exponent, in [0, 2].
    pub beta: f64,
}

impl ChargeNoiseSpec {
    /// Table I values: A_mu = 1 ueV/rtHz, gamma = 0.1 eV/V, beta = 1.
    pub fn table1() -> Self {
        ChargeNoiseSpec {
            a_mu: 1.0e-6 * EV,
            gamma: 0.1 * EV,
            beta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a_mu >= 0.0) || !(self.gamma > 0.0) {
            return Err(Error::Invalid(
                "charge noise amplitudes must be non-negative".into(),
            ));
        }
        if !(0.0..=2.0).contains(&self.beta) {
            return Err(Error::Invalid(format!(
                "charge noise exponent beta = {} outside [0, 2]",
                self.beta
            )));
        }
        Ok(())
    }

    /// RMS voltage scale (A_mu / gamma), volts per root-hertz at 1 Hz.
    pub fn voltage_scale(&self) -> f64 {
        self.a_mu / self.gamma
    }
}

/// Quasi-static hyperfine noise amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperfineSpec {
    /// Standard deviation of the per-spin offset (rad/s).
    pub sigma_bz: f64,
}

impl HyperfineSpec {
    /// Table I value sigma_Bz = 2 pi x 0.05 MHz.
    pub fn table1() -> Self {
        HyperfineSpec {
            sigma_bz: std::f64::consts::TAU * 0.05e6,
        }
    }

    /// sigma_Bz = 2 pi x f.
    pub fn from_hz(f: f64) -> Self {
        HyperfineSpec {
            sigma_bz: std::f64::consts::TAU * f,
        }
    }
}

/// Which noise channels are active for a run.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoiseConfig {
    pub charge: Option<ChargeNoiseSpec>,
    pub hyperfine: Option<HyperfineSpec>,
}

impl NoiseConfig {
    pub fn none() -> Self {
        NoiseConfig::default()
    }

    pub fn both(charge: ChargeNoiseSpec, hyperfine: HyperfineSpec) -> Self {
        NoiseConfig {
            charge: Some(charge),
            hyperfine: Some(hyperfine),
        }
    }
}

/// One sampled noise realization: a voltage series per driven bond on the
/// propagation grid plus one precession offset per spin.
#[derive(Debug, Clone)]
pub struct NoiseRealization {
    pub delta_v: BTreeMap<Bond, Vec<f64>>,
    /// Per-spin offsets (rad/s), quasi-static over the realization.
    pub delta_omega: Vec<f64>,
    pub master_seed: u64,
    pub index: u64,
}

impl NoiseRealization {
    /// Deterministic RNG of realization `index` under `master_seed`.
    pub fn rng_for(master_seed: u64, index: u64) -> ChaCha12Rng {
        let mut seed = [0u8; 32];
        let mut x = master_seed;
        for chunk in seed.chunks_exact_mut(8) {
            x = splitmix64(x);
            chunk.copy_from_slice(&x.to_le_bytes());
        }
        let mut rng = ChaCha12Rng::from_seed(seed);
        rng.set_stream(index);
        rng
    }

    /// Sample realization `index`: charge series of length `grid_len` over
    /// `duration` seconds for each of `bonds`, then hyperfine offsets for
    /// `n_spins` sites.
    pub fn generate(
        cfg: &NoiseConfig,
        bonds: &[Bond],
        n_spins: usize,
        grid_len: usize,
        duration: f64,
        master_seed: u64,
        index: u64,
    ) -> Result<Self> {
        let mut rng = Self::rng_for(master_seed, index);
        let mut delta_v = BTreeMap::new();
        if let Some(charge) = &cfg.charge {
            charge.validate()?;
            let mut sorted: Vec<Bond> = bonds.to_vec();
            sorted.sort();
            sorted.dedup();
            for bond in sorted {
                delta_v.insert(
                    bond,
                    generate_charge_series(charge, grid_len, duration, &mut rng),
                );
            }
        }
        let delta_omega = match &cfg.hyperfine {
            Some(h) => sample_hyperfine(h, n_spins, &mut rng),
            None => vec![0.0; n_spins],
        };
        Ok(NoiseRealization {
            delta_v,
            delta_omega,
            master_seed,
            index,
        })
    }

    /// A realization with every channel silent.
    pub fn quiet(n_spins: usize) -> Self {
        NoiseRealization {
            delta_v: BTreeMap::new(),
            delta_omega: vec![0.0; n_spins],
            master_seed: 0,
            index: 0,
        }
    }
}

fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Synthesize one voltage noise series (volts) with a `1/f^beta` spectrum on
/// a grid of `n` samples spanning `duration` seconds.
pub fn generate_charge_series<R: Rng>(
    spec: &ChargeNoiseSpec,
    n: usize,
    duration: f64,
    rng: &mut R,
) -> Vec<f64> {
    assert!(n >= 2, "charge series needs at least two samples");
    let mut buf: Vec<C64> = (0..n)
        .map(|_| C64::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);

    let scale = spec.voltage_scale();
    let rate = n as f64 / duration;
    buf[0] = C64::new(0.0, 0.0);
    for k in 1..=n / 2 {
        let f = k as f64 / duration;
        let c = scale * (rate * f.powf(-spec.beta)).sqrt();
        buf[k] *= c;
        if k < n - k {
            buf[n - k] = buf[k].conj();
        } else {
            // Nyquist bin of an even-length grid must be real
            buf[k] = C64::new(buf[k].re, 0.0);
        }
    }

    planner.plan_fft_inverse(n).process(&mut buf);
    let inv = 1.0 / n as f64;
    buf.iter().map(|z| z.re * inv).collect()
}

/// Independent Gaussian offsets, zero mean, standard deviation `sigma_bz`,
/// one per spin, constant over a realization.
pub fn sample_hyperfine<R: Rng>(spec: &HyperfineSpec, n_spins: usize, rng: &mut R) -> Vec<f64> {
    (0..n_spins)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            spec.sigma_bz * g
        })
        .collect()
}

/// Two-sided periodogram of a series: `(f_k, (dt/N) |FFT|^2)` for
/// `k = 1 .. N/2`.
pub fn periodogram(series: &[f64], dt: f64) -> Vec<(f64, f64)> {
    let n = series.len();
    let mut buf: Vec<C64> = series.iter().map(|&x| C64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let norm = dt / n as f64;
    (1..=n / 2)
        .map(|k| (k as f64 / (n as f64 * dt), buf[k].norm_sqr() * norm))
        .collect()
}

/// Monte Carlo execution plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarloPlan {
    pub n_realizations: usize,
    pub master_seed: u64,
    /// Worker thread hint; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl MonteCarloPlan {
    pub fn new(n_realizations: usize, master_seed: u64) -> Self {
        MonteCarloPlan {
            n_realizations,
            master_seed,
            threads: None,
        }
    }
}

impl Default for MonteCarloPlan {
    fn default() -> Self {
        MonteCarloPlan::new(512, 0)
    }
}

/// Monte Carlo statistics over realizations: per-component mean, standard
/// error, and the raw samples in realization order.
#[derive(Debug, Clone)]
pub struct McStats {
    pub n: usize,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
}

impl McStats {
    fn from_samples(samples: Vec<Vec<f64>>) -> Self {
        let n = samples.len();
        let width = samples.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; width];
        for (c, m) in mean.iter_mut().enumerate() {
            *m = neumaier_sum(samples.iter().map(|s| s[c])) / n as f64;
        }
        let mut stderr = vec![0.0; width];
        if n > 1 {
            for (c, se) in stderr.iter_mut().enumerate() {
                let var = neumaier_sum(samples.iter().map(|s| {
                    let d = s[c] - mean[c];
                    d * d
                })) / (n as f64 - 1.0);
                *se = (var / n as f64).sqrt();
            }
        }
        McStats {
            n,
            mean,
            stderr,
            samples,
        }
    }
}

/// Compensated (Neumaier) summation; the reduction is evaluated in sample
/// order so results do not depend on worker scheduling.
fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Run `experiment` once per realization index and aggregate. The experiment
/// must be deterministic given its index; realizations execute in parallel
/// and any failure aborts with the index and seed needed to replay it.
pub fn monte_carlo<F>(plan: &MonteCarloPlan, experiment: F) -> Result<McStats>
where
    F: Fn(u64) -> Result<Vec<f64>> + Sync,
{
    if plan.n_realizations == 0 {
        return Err(Error::Invalid("monte carlo plan needs n >= 1".into()));
    }
    let run = || -> Result<Vec<Vec<f64>>> {
        (0..plan.n_realizations as u64)
            .into_par_iter()
            .map(|idx| {
                experiment(idx).map_err(|e| Error::Realization {
                    index: idx,
                    seed: plan.master_seed,
                    source: Box::new(e),
                })
            })
            .collect()
    };
    let samples = match plan.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }?;
    Ok(McStats::from_samples(samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn white_noise_variance_matches_flat_psd() {
        let spec = ChargeNoiseSpec {
            beta: 0.0,
            ..ChargeNoiseSpec::table1()
        };
        let n = 10_000;
        let duration = 1.0e-3;
        let mut rng = NoiseRealization::rng_for(1, 0);
        let series = generate_charge_series(&spec, n, duration, &mut rng);
        let var: f64 = series.iter().map(|v| v * v).sum::<f64>() / n as f64;
        // flat two-sided PSD integrated over the band: (A/gamma)^2 N/T
        let expect = spec.voltage_scale().powi(2) * n as f64 / duration;
        assert_relative_eq!(var, expect, max_relative = 0.10);
    }

    #[test]
    fn one_over_f_periodogram_level_at_1hz() {
        let spec = ChargeNoiseSpec::table1();
        let n = 4096;
        let duration = 256.0;
        let dt = duration / n as f64;
        let n_avg = 256;
        let mut acc = vec![0.0; n / 2];
        for idx in 0..n_avg {
            let mut rng = NoiseRealization::rng_for(42, idx);
            let series = generate_charge_series(&spec, n, duration, &mut rng);
            for (i, (_, p)) in periodogram(&series, dt).iter().enumerate() {
                acc[i] += p / n_avg as f64;
            }
        }
        let k_1hz = 256; // 1 Hz = k / duration
        let level = acc[k_1hz - 1];
        let expect = spec.voltage_scale().powi(2); // (10 uV)^2 / Hz
        assert!(
            level / expect < 1.5 && expect / level < 1.5,
            "1 Hz level {level:.3e}, expected {expect:.3e}"
        );
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let spec = ChargeNoiseSpec::table1();
        let a = {
            let mut rng = NoiseRealization::rng_for(7, 3);
            generate_charge_series(&spec, 512, 1e-6, &mut rng)
        };
        let b = {
            let mut rng = NoiseRealization::rng_for(7, 3);
            generate_charge_series(&spec, 512, 1e-6, &mut rng)
        };
        assert_eq!(a, b);
        let c = {
            let mut rng = NoiseRealization::rng_for(7, 4);
            generate_charge_series(&spec, 512, 1e-6, &mut rng)
        };
        assert_ne!(a, c);
    }

    #[test]
    fn hyperfine_sampling_statistics() {
        let spec = HyperfineSpec::from_hz(0.05e6);
        let mut rng = NoiseRealization::rng_for(5, 0);
        let draws = sample_hyperfine(&spec, 10_000, &mut rng);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let std = (draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
            / (draws.len() as f64 - 1.0))
            .sqrt();
        assert_relative_eq!(std, spec.sigma_bz, max_relative = 0.03);
        assert!(mean.abs() < 3.0 * spec.sigma_bz / (draws.len() as f64).sqrt());

        let zero = HyperfineSpec { sigma_bz: 0.0 };
        let mut rng = NoiseRealization::rng_for(5, 1);
        assert!(sample_hyperfine(&zero, 5, &mut rng).iter().all(|&d| d == 0.0));
    }

    #[test]
    fn realizations_generate_reproducibly() {
        let cfg = NoiseConfig::both(ChargeNoiseSpec::table1(), HyperfineSpec::table1());
        let bonds = [Bond::B12, Bond::B23];
        let a = NoiseRealization::generate(&cfg, &bonds, 4, 256, 1e-7, 9, 2).unwrap();
        let b = NoiseRealization::generate(&cfg, &bonds, 4, 256, 1e-7, 9, 2).unwrap();
        assert_eq!(a.delta_v, b.delta_v);
        assert_eq!(a.delta_omega, b.delta_omega);
        assert_eq!(a.delta_v.len(), 2);
        assert_eq!(a.delta_v[&Bond::B12].len(), 256);
    }

    #[test]
    fn realization_streams_are_statistically_independent() {
        let cfg = NoiseConfig {
            charge: None,
            hyperfine: Some(HyperfineSpec::from_hz(1.0)),
        };
        let n = 4096;
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for idx in 0..n as u64 {
            let r = NoiseRealization::generate(&cfg, &[], 2, 2, 1.0, 13, idx).unwrap();
            x.push(r.delta_omega[0]);
            y.push(r.delta_omega[1]);
        }
        let sig = std::f64::consts::TAU;
        let corr = x
            .iter()
            .zip(&y)
            .map(|(a, b)| a * b / (sig * sig))
            .sum::<f64>()
            / n as f64;
        assert!(corr.abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn monte_carlo_constant_experiment() {
        let plan = MonteCarloPlan::new(64, 1);
        let stats = monte_carlo(&plan, |_| Ok(vec![2.5])).unwrap();
        assert_eq!(stats.mean, vec![2.5]);
        assert_eq!(stats.stderr, vec![0.0]);
        assert_eq!(stats.n, 64);
    }

    #[test]
    fn monte_carlo_mean_of_offsets_is_zero() {
        let plan = MonteCarloPlan::new(512, 3);
        let spec = HyperfineSpec::from_hz(0.05e6);
        let stats = monte_carlo(&plan, |idx| {
            let mut rng = NoiseRealization::rng_for(plan.master_seed, idx);
            Ok(vec![sample_hyperfine(&spec, 1, &mut rng)[0]])
        })
        .unwrap();
        assert!(stats.mean[0].abs() < 3.0 * stats.stderr[0].max(f64::MIN_POSITIVE));
    }

    #[test]
    fn monte_carlo_scheduling_invariant() {
        let spec = HyperfineSpec::from_hz(0.05e6);
        let experiment = |idx: u64| -> Result<Vec<f64>> {
            let mut rng = NoiseRealization::rng_for(11, idx);
            Ok(vec![sample_hyperfine(&spec, 1, &mut rng)[0]])
        };
        let mut single = MonteCarloPlan::new(128, 11);
        single.threads = Some(1);
        let mut multi = MonteCarloPlan::new(128, 11);
        multi.threads = Some(2);
        let a = monte_carlo(&single, experiment).unwrap();
        let b = monte_carlo(&multi, experiment).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn monte_carlo_failure_reports_index_and_seed() {
        let plan = MonteCarloPlan::new(8, 21);
        let err = monte_carlo(&plan, |idx| {
            if idx == 5 {
                Err(Error::Invalid("boom".into()))
            } else {
                Ok(vec![0.0])
            }
        })
        .unwrap_err();
        match err {
            Error::Realization { index, seed, .. } => {
                assert_eq!(index, 5);
                assert_eq!(seed, 21);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn psd_slope_tracks_beta() {
        for beta in [0.5, 1.0, 1.5] {
            let spec = ChargeNoiseSpec {
                beta,
                ..ChargeNoiseSpec::table1()
            };
            let n = 8192;
            let duration = 1024.0;
            let dt = duration / n as f64;
            let n_avg = 128;
            let mut acc = vec![0.0; n / 2];
            for idx in 0..n_avg {
                let mut rng = NoiseRealization::rng_for(100 + beta.to_bits(), idx);
                let series = generate_charge_series(&spec, n, duration, &mut rng);
                for (i, (_, p)) in periodogram(&series, dt).iter().enumerate() {
                    acc[i] += p / n_avg as f64;
                }
            }
            // log-log fit over two decades 0.01 .. 1 Hz
            let pts: Vec<(f64, f64)> = (1..=n / 2)
                .map(|k| (k as f64 / duration, acc[k - 1]))
                .filter(|&(f, _)| (0.01..=1.0).contains(&f))
                .map(|(f, p)| (f.ln(), p.ln()))
                .collect();
            let slope = linear_slope(&pts);
            assert!(
                (slope + beta).abs() < 0.1,
                "beta = {beta}: fitted slope {slope:.3}"
            );
        }
    }

    fn linear_slope(pts: &[(f64, f64)]) -> f64 {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    }
}
