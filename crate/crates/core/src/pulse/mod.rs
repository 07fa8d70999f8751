//! Exchange pulse construction: envelopes, carriers, voltage mapping, and
//! virtual-Z frame bookkeeping.
//!
//! Exchange on a bond follows the barrier voltage exponentially,
//! `J = J^r exp(2 alpha V_B)`, so a raised-cosine exchange envelope
//! corresponds to a logarithmic-cosine voltage pulse. A [`PulseSchedule`]
//! carries the complete control program of one gate: per-bond segments
//! (either a resonant tone or a DC envelope toward a peak level) plus the
//! virtual-Z phase updates that close the gate.

mod calibrate;

pub use calibrate::{calibrate_cz, calibrate_x90, CzCalibration, X90Calibration};

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::chain::{Bond, ChainSpec};
use crate::units::{hz_from_angular, hz_from_energy};
use crate::{Error, Result};

/// A resonant drive tone: `J_d s(t) [1 + cos(omega_d t + phi)]` on top of the
/// residual exchange. The carrier phase is referenced to the segment start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveTone {
    /// Amplitude J_d (J), non-negative.
    pub amplitude: f64,
    /// Carrier angular frequency (rad/s).
    pub carrier: f64,
    /// Carrier phase (rad).
    pub phase: f64,
}

/// Envelope shapes. Only the full-period raised cosine is supported:
/// `s(t) = 1/2 - cos(2 pi t / tau) / 2`, which starts and ends at zero and
/// integrates to `tau / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvelopeShape {
    CosineRaisedFull,
}

/// Envelope specification: shape plus width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeSpec {
    pub shape: EnvelopeShape,
    /// Pulse width tau (s), positive.
    pub width: f64,
}

impl EnvelopeSpec {
    pub fn cosine(width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::Invalid(format!(
                "envelope width must be positive, got {width}"
            )));
        }
        Ok(EnvelopeSpec {
            shape: EnvelopeShape::CosineRaisedFull,
            width,
        })
    }

    /// Envelope value in `[0, 1]` at `0 <= t <= width`.
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        match self.shape {
            EnvelopeShape::CosineRaisedFull => 0.5 - 0.5 * (TAU * t / self.width).cos(),
        }
    }
}

/// What a segment drives on its bond.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentDrive {
    /// Resonant tone riding the envelope.
    Tone(DriveTone),
    /// DC envelope from the residual level up to `peak` (J) and back.
    DcPeak(f64),
}

/// One contiguous drive on one bond.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub bond: Bond,
    /// Segment start time (s) within the schedule.
    pub start: f64,
    pub envelope: EnvelopeSpec,
    pub drive: SegmentDrive,
}

impl Segment {
    /// Commanded exchange (J) at absolute schedule time `t`, given the
    /// residual exchange of the bond. Outside the segment this is `j_r`.
    pub fn exchange_at(&self, j_r: f64, t: f64) -> f64 {
        let local = t - self.start;
        if !(0.0..=self.envelope.width).contains(&local) {
            return j_r;
        }
        let s = self.envelope.value(local);
        match self.drive {
            SegmentDrive::Tone(tone) => {
                j_r + tone.amplitude * s * (1.0 + (tone.carrier * local + tone.phase).cos())
            }
            SegmentDrive::DcPeak(peak) => j_r + (peak - j_r) * s,
        }
    }

    /// Largest exchange the segment can command.
    fn peak_exchange(&self, j_r: f64) -> f64 {
        match self.drive {
            SegmentDrive::Tone(tone) => j_r + 2.0 * tone.amplitude,
            SegmentDrive::DcPeak(peak) => peak.max(j_r),
        }
    }
}

/// A virtual-Z frame update: subsequent carrier phases on `qubit` shift by
/// `phase` from `time` on. Zero duration, zero error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualZ {
    /// 1-based RST qubit index.
    pub qubit: usize,
    /// Frame phase (rad).
    pub phase: f64,
    /// When the update applies (s).
    pub time: f64,
}

/// The complete control program of one gate.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSchedule {
    pub segments: Vec<Segment>,
    pub virtual_z: Vec<VirtualZ>,
    pub total_duration: f64,
    /// Default sampling rate for waveform export (Hz).
    pub sample_rate: f64,
}

impl PulseSchedule {
    /// Assemble and validate: per-bond segments must not overlap, every
    /// sample must stay non-negative, and each segment must start and end at
    /// the residual exchange of its bond.
    pub fn new(spec: &ChainSpec, segments: Vec<Segment>, virtual_z: Vec<VirtualZ>) -> Result<Self> {
        let mut total: f64 = 0.0;
        let mut max_carrier: f64 = 0.0;
        for seg in &segments {
            if !spec.topology().bonds().contains(&seg.bond) {
                return Err(Error::UnknownBond(seg.bond.to_string()));
            }
            total = total.max(seg.start + seg.envelope.width);
            if let SegmentDrive::Tone(tone) = seg.drive {
                if tone.amplitude < 0.0 {
                    return Err(Error::Invalid("drive amplitude must be non-negative".into()));
                }
                max_carrier = max_carrier.max(hz_from_angular(tone.carrier).abs());
            }
            let j_r = spec.residual(seg.bond);
            if seg.exchange_at(j_r, seg.start) - j_r > 1e-12 * j_r.abs().max(1e-40)
                || seg.exchange_at(j_r, seg.start + seg.envelope.width) - j_r
                    > 1e-12 * j_r.abs().max(1e-40)
            {
                return Err(Error::Invalid(format!(
                    "segment on {} does not start and end at the residual exchange",
                    seg.bond
                )));
            }
            // positivity over a dense sample
            for i in 0..=512 {
                let t = seg.start + seg.envelope.width * i as f64 / 512.0;
                let j = seg.exchange_at(j_r, t);
                if j < 0.0 {
                    return Err(Error::NegativeExchange {
                        bond: seg.bond.to_string(),
                        value_hz: hz_from_energy(j),
                    });
                }
            }
        }
        // per-bond overlap check
        for (i, a) in segments.iter().enumerate() {
            for b in segments.iter().skip(i + 1) {
                if a.bond == b.bond {
                    let (a0, a1) = (a.start, a.start + a.envelope.width);
                    let (b0, b1) = (b.start, b.start + b.envelope.width);
                    if a0 < b1 && b0 < a1 {
                        return Err(Error::Invalid(format!(
                            "overlapping segments on bond {}",
                            a.bond
                        )));
                    }
                }
            }
        }
        // default export rate: 64 samples per carrier period (resolving the
        // 2 omega_d counter-rotating content), at least 256 per envelope
        let min_width = segments
            .iter()
            .map(|s| s.envelope.width)
            .fold(f64::INFINITY, f64::min);
        let envelope_rate = if min_width.is_finite() {
            256.0 / min_width
        } else {
            1.0e9
        };
        let sample_rate = (64.0 * max_carrier).max(envelope_rate);
        Ok(PulseSchedule {
            segments,
            virtual_z,
            total_duration: total,
            sample_rate,
        })
    }

    /// Commanded exchange (J) on `bond` at time `t`.
    pub fn exchange_at(&self, spec: &ChainSpec, bond: Bond, t: f64) -> f64 {
        let j_r = spec.residual(bond);
        for seg in &self.segments {
            if seg.bond == bond {
                let local = t - seg.start;
                if (0.0..=seg.envelope.width).contains(&local) {
                    return seg.exchange_at(j_r, t);
                }
            }
        }
        j_r
    }

    /// Bonds driven by at least one segment, in canonical order.
    pub fn driven_bonds(&self) -> Vec<Bond> {
        let mut bonds: Vec<Bond> = self.segments.iter().map(|s| s.bond).collect();
        bonds.sort();
        bonds.dedup();
        bonds
    }

    /// Largest exchange (J) the schedule commands on `bond`.
    pub fn peak_exchange(&self, spec: &ChainSpec, bond: Bond) -> f64 {
        let j_r = spec.residual(bond);
        self.segments
            .iter()
            .filter(|s| s.bond == bond)
            .map(|s| s.peak_exchange(j_r))
            .fold(j_r, f64::max)
    }

    /// Net virtual-Z phase applied to a qubit by the end of the schedule.
    pub fn net_virtual_z(&self, qubit: usize) -> f64 {
        self.virtual_z
            .iter()
            .filter(|vz| vz.qubit == qubit)
            .map(|vz| vz.phase)
            .sum()
    }

    /// JSON document: segments and virtual-Z list, energies as frequencies.
    pub fn to_json(&self, spec: &ChainSpec) -> String {
        #[derive(Serialize)]
        struct SegDoc {
            bond: Bond,
            start_s: f64,
            width_s: f64,
            shape: EnvelopeShape,
            kind: &'static str,
            amplitude_hz: f64,
            carrier_hz: f64,
            phase_rad: f64,
        }
        #[derive(Serialize)]
        struct VzDoc {
            qubit: usize,
            phase_rad: f64,
            time_s: f64,
        }
        #[derive(Serialize)]
        struct Doc {
            total_duration_s: f64,
            sample_rate_hz: f64,
            segments: Vec<SegDoc>,
            virtual_z: Vec<VzDoc>,
        }
        let _ = spec;
        let doc = Doc {
            total_duration_s: self.total_duration,
            sample_rate_hz: self.sample_rate,
            segments: self
                .segments
                .iter()
                .map(|s| match s.drive {
                    SegmentDrive::Tone(t) => SegDoc {
                        bond: s.bond,
                        start_s: s.start,
                        width_s: s.envelope.width,
                        shape: s.envelope.shape,
                        kind: "tone",
                        amplitude_hz: hz_from_energy(t.amplitude),
                        carrier_hz: hz_from_angular(t.carrier),
                        phase_rad: t.phase,
                    },
                    SegmentDrive::DcPeak(p) => SegDoc {
                        bond: s.bond,
                        start_s: s.start,
                        width_s: s.envelope.width,
                        shape: s.envelope.shape,
                        kind: "dc",
                        amplitude_hz: hz_from_energy(p),
                        carrier_hz: 0.0,
                        phase_rad: 0.0,
                    },
                })
                .collect(),
            virtual_z: self
                .virtual_z
                .iter()
                .map(|vz| VzDoc {
                    qubit: vz.qubit,
                    phase_rad: vz.phase,
                    time_s: vz.time,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("schedule serializes")
    }

    /// CSV sample dump `time_s,bond,j_hz,v_b_volt` at the schedule's sample
    /// rate, for external plotting.
    pub fn to_csv(&self, spec: &ChainSpec) -> Result<String> {
        let mut out = String::from("time_s,bond,j_hz,v_b_volt\n");
        let n = (self.total_duration * self.sample_rate).ceil() as usize;
        for bond in self.driven_bonds() {
            let j_r = spec.residual(bond);
            let alpha = spec.alpha(bond);
            for i in 0..=n {
                let t = self.total_duration * i as f64 / n as f64;
                let j = self.exchange_at(spec, bond, t);
                let v = voltage_from_exchange(j_r, alpha, j.max(j_r * 1.0e-15))?;
                out.push_str(&format!("{t:e},{bond},{:e},{v:e}\n", hz_from_energy(j)));
            }
        }
        Ok(out)
    }
}

/// Exchange (J) commanded by barrier voltage `v_b` (V): `J = J^r e^{2 alpha V}`.
pub fn exchange_from_voltage(j_r: f64, alpha: f64, v_b: f64) -> Result<f64> {
    if !j_r.is_finite() || !alpha.is_finite() || !v_b.is_finite() {
        return Err(Error::NonFinite("exchange_from_voltage"));
    }
    if j_r < 0.0 {
        return Err(Error::NegativeExchange {
            bond: "input".into(),
            value_hz: hz_from_energy(j_r),
        });
    }
    let arg = 2.0 * alpha * v_b;
    if arg > 60.0 {
        return Err(Error::VoltageOverflow(arg));
    }
    Ok(j_r * arg.exp())
}

/// Barrier voltage (V) producing `j_target`: `V = ln(J/J^r) / (2 alpha)`.
/// Requires `j_target > 0` and `j_target >= J^r * 1e-15` (log-domain guard).
pub fn voltage_from_exchange(j_r: f64, alpha: f64, j_target: f64) -> Result<f64> {
    if !j_r.is_finite() || !alpha.is_finite() || !j_target.is_finite() {
        return Err(Error::NonFinite("voltage_from_exchange"));
    }
    if j_target <= 0.0 || j_target < j_r * 1.0e-15 {
        return Err(Error::InvalidExchangeTarget(hz_from_energy(j_target)));
    }
    Ok((j_target / j_r).ln() / (2.0 * alpha))
}

/// Commensurate pulse width: `tau = n 2 pi / omega_q`, `n >= 1`.
pub fn commensurate_width(n: u32, omega_q: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Invalid(
            "commensurate width needs n >= 1; n = 0 is not an identity gate".into(),
        ));
    }
    if !(omega_q > 0.0) {
        return Err(Error::Invalid(format!(
            "qubit frequency must be positive, got {omega_q}"
        )));
    }
    Ok(f64::from(n) * TAU / omega_q)
}

/// Integral of the drive minus residual over the pulse, by quadrature;
/// used by tests to confirm the non-zero time-averaged drive.
pub fn mean_excess_exchange(tone: &DriveTone, env: &EnvelopeSpec) -> f64 {
    let f = |t: f64| {
        nalgebra::Complex::new(
            tone.amplitude * env.value(t) * (1.0 + (tone.carrier * t + tone.phase).cos()),
            0.0,
        )
    };
    let integral = crate::oracles::adaptive_simpson(&f, 0.0, env.width, 1e-12 * tone.amplitude * env.width);
    integral.re / env.width
}

/// Phase-shifted copy of a transversal-rotation schedule:
/// `R(theta, phi) = Z(-phi) R(theta, 0) Z(phi)` realized as a carrier phase
/// offset on every tone plus unchanged envelope.
pub fn with_carrier_phase(schedule: &PulseSchedule, phase: f64) -> PulseSchedule {
    let mut out = schedule.clone();
    for seg in &mut out.segments {
        if let SegmentDrive::Tone(ref mut tone) = seg.drive {
            tone.phase += phase;
        }
    }
    out
}
