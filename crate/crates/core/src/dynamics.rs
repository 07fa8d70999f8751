//! Time-ordered propagation of the chain under a pulse schedule.
//!
//! Propagation runs in the uniform rotating frame at the mean qubit-spin
//! Larmor frequency: every exchange term keeps its form there and the
//! fastest diagonal scale drops from ~10.75 GHz to at most a couple hundred
//! MHz, buying a ~50x coarser stable step. Each step evaluates the
//! Hamiltonian at the interval midpoint (with the noisy exchange
//! `J = J_cmd e^{2 alpha dV}` and hyperfine-shifted precession frequencies)
//! and applies its exact exponential via a real-symmetric eigendecomposition.
//!
//! Total `S_z` is conserved exactly, so the work happens inside fixed
//! spin-up-count sector blocks; the full propagator is assembled from them.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::chain::{Bond, ChainModel, ChainSpec, ProductState, SectorOps, Topology};
use crate::eigen::{computational_states, EigenStructure};
use crate::noise::{NoiseRealization, HYPERFINE_PRECESSION_FACTOR};
use crate::pulse::PulseSchedule;
use crate::units::{hz_from_angular, hz_from_energy, HBAR};
use crate::{Error, Result};

type C64 = Complex<f64>;

/// Tolerance on the accumulated propagator's unitarity defect.
pub const UNITARITY_TOLERANCE: f64 = 1.0e-6;

/// Uniform time grid: `n_steps` intervals of width `dt` starting at `t0`,
/// ending exactly at the schedule duration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_steps: usize) -> Result<Self> {
        if n_steps > 0 && !(dt > 0.0) {
            return Err(Error::Invalid(format!("grid step must be positive, got {dt}")));
        }
        Ok(TimeGrid { t0, dt, n_steps })
    }

    /// Number of propagation intervals (= noise series length).
    pub fn len(&self) -> usize {
        self.n_steps
    }

    pub fn is_empty(&self) -> bool {
        self.n_steps == 0
    }

    /// Midpoint of interval `i`.
    #[inline]
    pub fn midpoint(&self, i: usize) -> f64 {
        self.t0 + (i as f64 + 0.5) * self.dt
    }

    pub fn total(&self) -> f64 {
        self.t0 + self.dt * self.n_steps as f64
    }

    /// Same span with every interval halved.
    pub fn halved(&self) -> TimeGrid {
        TimeGrid {
            t0: self.t0,
            dt: 0.5 * self.dt,
            n_steps: 2 * self.n_steps,
        }
    }
}

/// Default grid for a schedule: `dt = min(1/(64 f_max), tau/floor)` with
/// `f_max` the largest rotating-frame frequency (spin detunings, carriers,
/// peak exchange), rounded so the grid ends exactly at the duration.
///
/// The step floor is 4096 for DC envelopes and 16384 when a carrier tone is
/// present: the midpoint rule only sees the intra-step time dependence, and
/// the carrier needs the finer grid to keep the dt-halving convergence of
/// the final amplitudes below 1e-7.
pub fn default_grid(spec: &ChainSpec, schedule: &PulseSchedule) -> TimeGrid {
    grid_with_reference(spec, schedule, spec.rotating_frame_reference())
}

pub(crate) fn grid_with_reference(
    spec: &ChainSpec,
    schedule: &PulseSchedule,
    omega_ref: f64,
) -> TimeGrid {
    let tau = schedule.total_duration;
    if tau <= 0.0 {
        return TimeGrid {
            t0: 0.0,
            dt: 1.0,
            n_steps: 0,
        };
    }
    let mut f_max: f64 = 1.0;
    let mut has_tone = false;
    for &w in spec.larmor_all() {
        f_max = f_max.max(hz_from_angular((w - omega_ref).abs()));
    }
    for seg in &schedule.segments {
        if let crate::pulse::SegmentDrive::Tone(tone) = seg.drive {
            f_max = f_max.max(hz_from_angular(tone.carrier.abs()));
            has_tone = true;
        }
        f_max = f_max.max(hz_from_energy(schedule.peak_exchange(spec, seg.bond)).abs());
    }
    let floor = if has_tone { 16384.0 } else { 4096.0 };
    let dt = (1.0 / (64.0 * f_max)).min(tau / floor);
    let n_steps = (tau / dt).ceil() as usize;
    TimeGrid {
        t0: 0.0,
        dt: tau / n_steps as f64,
        n_steps,
    }
}

/// Pure state or density operator of the chain (or of a projected subspace).
#[derive(Debug, Clone, PartialEq)]
pub enum QuantumState {
    Vector(DVector<C64>),
    Density(DMatrix<C64>),
}

impl QuantumState {
    pub fn dim(&self) -> usize {
        match self {
            QuantumState::Vector(v) => v.len(),
            QuantumState::Density(m) => m.nrows(),
        }
    }

    /// Basis vector of a product state in a `2^n`-dimensional chain.
    pub fn from_product(state: ProductState, n_spins: usize) -> Self {
        let dim = 1 << n_spins;
        let mut v = DVector::<C64>::zeros(dim);
        v[state.0 as usize] = C64::new(1.0, 0.0);
        QuantumState::Vector(v)
    }

    /// Norm / trace / positivity checks at 1e-9 tolerance.
    pub fn validate(&self) -> Result<()> {
        match self {
            QuantumState::Vector(v) => {
                let norm = v.norm();
                if (norm - 1.0).abs() > 1.0e-9 {
                    return Err(Error::Invalid(format!(
                        "state vector norm {norm} deviates from 1"
                    )));
                }
            }
            QuantumState::Density(m) => {
                let scale = m.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300);
                let herm = (m - m.adjoint())
                    .iter()
                    .map(|c| c.norm())
                    .fold(0.0, f64::max);
                if herm > 1.0e-9 * scale {
                    return Err(Error::Invalid("density matrix is not Hermitian".into()));
                }
                let trace: C64 = m.diagonal().iter().sum();
                if (trace.re - 1.0).abs() > 1.0e-9 || trace.im.abs() > 1.0e-9 {
                    return Err(Error::Invalid(format!(
                        "density matrix trace {} deviates from 1",
                        trace.re
                    )));
                }
                let shifted =
                    m + DMatrix::<C64>::identity(m.nrows(), m.ncols()) * C64::new(1.0e-9, 0.0);
                if shifted.cholesky().is_none() {
                    return Err(Error::Invalid(
                        "density matrix is not positive semidefinite".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_density(&self) -> DMatrix<C64> {
        match self {
            QuantumState::Vector(v) => v * v.adjoint(),
            QuantumState::Density(m) => m.clone(),
        }
    }

    /// `U psi` or `U rho U^dagger`.
    pub fn evolve(&self, u: &DMatrix<C64>) -> QuantumState {
        match self {
            QuantumState::Vector(v) => QuantumState::Vector(u * v),
            QuantumState::Density(m) => QuantumState::Density(u * m * u.adjoint()),
        }
    }
}

/// Prepared propagation engine for one (chain, schedule, grid) triple;
/// reusable across noise realizations.
pub struct GatePropagator {
    model: ChainModel,
    pub omega_ref: f64,
    pub grid: TimeGrid,
    /// Per model bond, per step: commanded exchange / hbar (rad/s).
    j_cmd: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    bond_ids: Vec<Bond>,
    sector_ops: Vec<SectorOps>,
}

impl GatePropagator {
    pub fn new(spec: &ChainSpec, schedule: &PulseSchedule, grid: TimeGrid) -> Result<Self> {
        Self::with_reference(spec, schedule, grid, spec.rotating_frame_reference())
    }

    /// Engine in an arbitrary uniform rotating frame (`omega_ref = 0` is the
    /// lab frame); used for frame-equivalence checks.
    pub fn with_reference(
        spec: &ChainSpec,
        schedule: &PulseSchedule,
        grid: TimeGrid,
        omega_ref: f64,
    ) -> Result<Self> {
        let duration = schedule.total_duration;
        if duration > 0.0 && (grid.total() - duration).abs() > 1e-12 * duration.max(1e-30) {
            return Err(Error::Invalid(format!(
                "grid covers {:.6e} s but the schedule lasts {:.6e} s",
                grid.total(),
                duration
            )));
        }
        let model = spec.model();
        let mut j_cmd = Vec::with_capacity(model.bonds.len());
        let mut alpha = Vec::with_capacity(model.bonds.len());
        let mut bond_ids = Vec::with_capacity(model.bonds.len());
        for bs in &model.bonds {
            let series: Vec<f64> = (0..grid.n_steps)
                .map(|i| schedule.exchange_at(spec, bs.bond, grid.midpoint(i)) / HBAR)
                .collect();
            j_cmd.push(series);
            alpha.push(spec.alpha(bs.bond));
            bond_ids.push(bs.bond);
        }
        let sector_ops = (0..=model.n_spins)
            .map(|n_up| SectorOps::new(&model, n_up))
            .collect();
        Ok(GatePropagator {
            model,
            omega_ref,
            grid,
            j_cmd,
            alpha,
            bond_ids,
            sector_ops,
        })
    }

    /// Engine for a two-spin isolated-qubit model.
    pub(crate) fn for_model(
        spec: &ChainSpec,
        model: ChainModel,
        schedule: &PulseSchedule,
        grid: TimeGrid,
    ) -> Result<Self> {
        let omega_ref = model.rotating_frame_reference();
        let mut j_cmd = Vec::with_capacity(model.bonds.len());
        let mut alpha = Vec::with_capacity(model.bonds.len());
        let mut bond_ids = Vec::with_capacity(model.bonds.len());
        for bs in &model.bonds {
            let series: Vec<f64> = (0..grid.n_steps)
                .map(|i| schedule.exchange_at(spec, bs.bond, grid.midpoint(i)) / HBAR)
                .collect();
            j_cmd.push(series);
            alpha.push(spec.alpha(bs.bond));
            bond_ids.push(bs.bond);
        }
        let sector_ops = (0..=model.n_spins)
            .map(|n_up| SectorOps::new(&model, n_up))
            .collect();
        Ok(GatePropagator {
            model,
            omega_ref,
            grid,
            j_cmd,
            alpha,
            bond_ids,
            sector_ops,
        })
    }

    pub fn n_spins(&self) -> usize {
        self.model.n_spins
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Product states spanning one total-S_z sector, ascending.
    pub fn sector_basis(&self, n_up: usize) -> &[u16] {
        &self.sector_ops[n_up].sector.basis
    }

    fn effective_larmor(&self, noise: &NoiseRealization) -> Result<Vec<f64>> {
        if noise.delta_omega.len() != self.model.n_spins {
            return Err(Error::DimensionMismatch {
                expected: self.model.n_spins,
                got: noise.delta_omega.len(),
            });
        }
        Ok(self
            .model
            .larmor
            .iter()
            .zip(&noise.delta_omega)
            .map(|(&w, &dw)| w - self.omega_ref + HYPERFINE_PRECESSION_FACTOR * dw)
            .collect())
    }

    /// Accumulated unitary of one total-S_z sector over the whole schedule.
    pub fn sector_unitary(&self, n_up: usize, noise: &NoiseRealization) -> Result<DMatrix<C64>> {
        let ops = &self.sector_ops[n_up];
        let d = ops.sector.dim();
        let larmor = self.effective_larmor(noise)?;
        let n_bonds = self.model.bonds.len();
        for (bond, series) in &noise.delta_v {
            if self.bond_ids.contains(bond) && series.len() != self.grid.n_steps {
                return Err(Error::DimensionMismatch {
                    expected: self.grid.n_steps,
                    got: series.len(),
                });
            }
        }
        let charge: Vec<Option<&[f64]>> = self
            .bond_ids
            .iter()
            .map(|b| noise.delta_v.get(b).map(Vec::as_slice))
            .collect();

        let mut u = DMatrix::<C64>::identity(d, d);
        let mut u_next = DMatrix::<C64>::zeros(d, d);
        let mut u_step = DMatrix::<C64>::zeros(d, d);
        let mut block = DMatrix::<f64>::zeros(d, d);
        let mut j_step = vec![0.0; n_bonds];
        for i in 0..self.grid.n_steps {
            for b in 0..n_bonds {
                let mut j = self.j_cmd[b][i];
                if let Some(dv) = charge[b] {
                    j *= (2.0 * self.alpha[b] * dv[i]).exp();
                }
                j_step[b] = j;
            }
            ops.assemble(&larmor, &j_step, &mut block);
            step_exponential(&block, self.grid.dt, &mut u_step);
            u_step.mul_to(&u, &mut u_next);
            std::mem::swap(&mut u, &mut u_next);
        }
        let drift = unitarity_defect(&u);
        if drift > UNITARITY_TOLERANCE {
            return Err(Error::PropagationAccuracy { drift });
        }
        Ok(u)
    }

    /// Full-dimension propagator assembled from every sector block.
    pub fn full_unitary(&self, noise: &NoiseRealization) -> Result<DMatrix<C64>> {
        let dim = self.dim();
        let mut u = DMatrix::<C64>::zeros(dim, dim);
        for n_up in 0..=self.model.n_spins {
            let block = self.sector_unitary(n_up, noise)?;
            let basis = &self.sector_ops[n_up].sector.basis;
            for (i, &si) in basis.iter().enumerate() {
                for (j, &sj) in basis.iter().enumerate() {
                    u[(si as usize, sj as usize)] = block[(i, j)];
                }
            }
        }
        Ok(u)
    }
}

/// `exp(-i H dt)` for a real-symmetric `H` given in angular-frequency units.
fn step_exponential(block: &DMatrix<f64>, dt: f64, out: &mut DMatrix<C64>) {
    let d = block.nrows();
    let eig = SymmetricEigen::new(block.clone());
    let phases: Vec<C64> = eig
        .eigenvalues
        .iter()
        .map(|&w| C64::from_polar(1.0, -w * dt))
        .collect();
    for a in 0..d {
        for b in 0..d {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..d {
                acc += phases[k] * (eig.eigenvectors[(a, k)] * eig.eigenvectors[(b, k)]);
            }
            out[(a, b)] = acc;
        }
    }
}

/// `max |U^dagger U - I|`.
pub fn unitarity_defect(u: &DMatrix<C64>) -> f64 {
    let d = u.nrows();
    let gram = u.adjoint() * u;
    let mut defect: f64 = 0.0;
    for r in 0..d {
        for c in 0..d {
            let expect = if r == c { 1.0 } else { 0.0 };
            defect = defect.max((gram[(r, c)] - C64::new(expect, 0.0)).norm());
        }
    }
    defect
}

/// Propagate `initial` under `schedule` in the uniform rotating frame,
/// returning the final state and the accumulated propagator.
pub fn propagate(
    spec: &ChainSpec,
    schedule: &PulseSchedule,
    grid: &TimeGrid,
    noise: Option<&NoiseRealization>,
    initial: &QuantumState,
) -> Result<(QuantumState, DMatrix<C64>)> {
    let engine = GatePropagator::new(spec, schedule, *grid)?;
    if initial.dim() != engine.dim() {
        return Err(Error::DimensionMismatch {
            expected: engine.dim(),
            got: initial.dim(),
        });
    }
    initial.validate()?;
    let quiet = NoiseRealization::quiet(spec.n_spins());
    let u = engine.full_unitary(noise.unwrap_or(&quiet))?;
    Ok((initial.evolve(&u), u))
}

/// Project a state onto the span of labeled eigenstates.
///
/// Returns the renormalized projected state in the given basis order and the
/// leaked probability outside the span.
pub fn project_onto_labeled(
    state: &QuantumState,
    es: &EigenStructure,
    states: &[ProductState],
) -> Result<(QuantumState, f64)> {
    let k = states.len();
    match state {
        QuantumState::Vector(v) => {
            let mut amps = DVector::<C64>::zeros(k);
            for (i, &s) in states.iter().enumerate() {
                let basis = es.vector_of(s)?;
                let mut a = C64::new(0.0, 0.0);
                for (j, &b) in basis.iter().enumerate() {
                    a += C64::new(b, 0.0) * v[j];
                }
                amps[i] = a;
            }
            let p = amps.norm_squared();
            let leak = (1.0 - p).max(0.0);
            let reduced = if p > 0.0 {
                amps / C64::new(p.sqrt(), 0.0)
            } else {
                amps
            };
            Ok((QuantumState::Vector(reduced), leak))
        }
        QuantumState::Density(rho) => {
            let mut m = DMatrix::<C64>::zeros(k, k);
            let basis: Vec<DVector<f64>> = states
                .iter()
                .map(|&s| es.vector_of(s))
                .collect::<Result<_>>()?;
            for i in 0..k {
                for j in 0..k {
                    let mut acc = C64::new(0.0, 0.0);
                    for a in 0..rho.nrows() {
                        for b in 0..rho.ncols() {
                            acc += C64::new(basis[i][a] * basis[j][b], 0.0) * rho[(a, b)];
                        }
                    }
                    m[(i, j)] = acc;
                }
            }
            let tr: f64 = m.diagonal().iter().map(|c| c.re).sum();
            let leak = (1.0 - tr).max(0.0);
            let reduced = if tr > 0.0 { &m / C64::new(tr, 0.0) } else { m.clone() };
            Ok((QuantumState::Density(reduced), leak))
        }
    }
}

/// Projection onto the topology's four computational eigenstates.
pub fn project_computational(
    state: &QuantumState,
    es: &EigenStructure,
    topology: Topology,
) -> Result<(QuantumState, f64)> {
    project_onto_labeled(state, es, &computational_states(topology))
}

/// Bloch vector samples of one RST qubit over time, in the frame co-rotating
/// at the qubit frequency.
#[derive(Debug, Clone)]
pub struct BlochTrajectory {
    pub times: Vec<f64>,
    pub r: Vec<[f64; 3]>,
}

impl BlochTrajectory {
    /// CSV rows `t,r_x,r_y,r_z`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s,r_x,r_y,r_z\n");
        for (t, r) in self.times.iter().zip(&self.r) {
            out.push_str(&format!("{t:e},{:e},{:e},{:e}\n", r[0], r[1], r[2]));
        }
        out
    }
}

/// Extract the Bloch trajectory of one RST qubit from full-chain states: the
/// complementary spins are traced out, the reduced pair state is expressed in
/// the isolated qubit's hybridized `{|0>, |1>}` basis, and the transverse
/// components are co-rotated at the qubit frequency.
///
/// Purity loss shows up as `|r| < 1`, not as an error.
pub fn bloch_trajectory(
    spec: &ChainSpec,
    states: &[(f64, QuantumState)],
    qubit: usize,
) -> Result<BlochTrajectory> {
    let model = spec.qubit_model(qubit)?;
    let pair_sites = match qubit {
        1 => (0usize, 1usize),
        _ => (2, 3),
    };
    // isolated-pair eigenbasis: |0> = |~down up>, |1> = |~up down>
    let h_pair = crate::chain::dense_hamiltonian(&model, &model.larmor, &model.j_residual);
    let es_pair = crate::eigen::diagonalize_and_label(&h_pair)?;
    let v0 = es_pair.vector_of(ProductState(0b10))?;
    let v1 = es_pair.vector_of(ProductState(0b01))?;
    let omega_q = (es_pair.energy_of(ProductState(0b01))?
        - es_pair.energy_of(ProductState(0b10))?)
        / HBAR;

    let n = spec.n_spins();
    let mut times = Vec::with_capacity(states.len());
    let mut rs = Vec::with_capacity(states.len());
    for (t, state) in states {
        let rho = state.to_density();
        let pair = partial_trace_to_pair(&rho, n, pair_sites);
        // project into the hybridized qubit basis
        let mut q = [[C64::new(0.0, 0.0); 2]; 2];
        for (i, vi) in [&v0, &v1].iter().enumerate() {
            for (j, vj) in [&v0, &v1].iter().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for a in 0..4 {
                    for b in 0..4 {
                        acc += C64::new(vi[a] * vj[b], 0.0) * pair[(a, b)];
                    }
                }
                q[i][j] = acc;
            }
        }
        // co-rotate the coherence at omega_q
        let rot = C64::from_polar(1.0, -omega_q * t);
        let q01 = q[0][1] * rot;
        let r = [
            2.0 * q01.re,
            -2.0 * q01.im,
            q[0][0].re - q[1][1].re,
        ];
        times.push(*t);
        rs.push(r);
    }
    Ok(BlochTrajectory { times, r: rs })
}

/// Reduced density matrix of two sites of an `n`-spin chain, ordered
/// `|s_a s_b>` with `site_a` the more significant bit.
fn partial_trace_to_pair(
    rho: &DMatrix<C64>,
    n_spins: usize,
    (site_a, site_b): (usize, usize),
) -> DMatrix<C64> {
    let dim = rho.nrows();
    let bit_a = n_spins - 1 - site_a;
    let bit_b = n_spins - 1 - site_b;
    let mut out = DMatrix::<C64>::zeros(4, 4);
    for row in 0..dim {
        let ra = (row >> bit_a) & 1;
        let rb = (row >> bit_b) & 1;
        let rest_row = row & !((1 << bit_a) | (1 << bit_b));
        for col in 0..dim {
            let ca = (col >> bit_a) & 1;
            let cb = (col >> bit_b) & 1;
            let rest_col = col & !((1 << bit_a) | (1 << bit_b));
            if rest_row == rest_col {
                out[((ra << 1) | rb, (ca << 1) | cb)] += rho[(row, col)];
            }
        }
    }
    out
}

/// JSON export of a complex matrix as nested `[re, im]` pairs.
pub fn matrix_to_json(m: &DMatrix<C64>) -> String {
    let rows: Vec<Vec<[f64; 2]>> = (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
        .collect();
    serde_json::to_string(&rows).expect("matrix serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_hamiltonian, ChainSpec, Topology};
    use crate::eigen::diagonalize_and_label;
    use crate::pulse::{
        commensurate_width, DriveTone, EnvelopeSpec, PulseSchedule, Segment, SegmentDrive,
    };
    use crate::units::energy_from_hz;
    use approx::assert_relative_eq;

    fn empty_schedule(spec: &ChainSpec) -> PulseSchedule {
        PulseSchedule::new(spec, vec![], vec![]).unwrap()
    }

    fn idle_schedule(spec: &ChainSpec, width: f64) -> PulseSchedule {
        // a zero-amplitude tone only fixes the duration
        let seg = Segment {
            bond: Bond::B12,
            start: 0.0,
            envelope: EnvelopeSpec::cosine(width).unwrap(),
            drive: SegmentDrive::Tone(DriveTone {
                amplitude: 0.0,
                carrier: crate::units::angular_from_hz(150.0e6),
                phase: 0.0,
            }),
        };
        PulseSchedule::new(spec, vec![seg], vec![]).unwrap()
    }

    fn x90_like_schedule(spec: &ChainSpec, n: u32) -> PulseSchedule {
        let p = crate::oracles::QubitFrameParams::for_qubit(spec, 1, 0.0, 0.0, 0.0, 1.0).unwrap();
        let width = commensurate_width(n, p.omega_q).unwrap();
        let j_d = crate::units::H_PLANCK / (width * p.theta_mix.cos());
        let seg = Segment {
            bond: Bond::B12,
            start: 0.0,
            envelope: EnvelopeSpec::cosine(width).unwrap(),
            drive: SegmentDrive::Tone(DriveTone {
                amplitude: j_d,
                carrier: p.omega_q,
                phase: 0.0,
            }),
        };
        PulseSchedule::new(spec, vec![seg], vec![]).unwrap()
    }

    #[test]
    fn zero_duration_schedule_gives_identity() {
        let spec = ChainSpec::table1(Topology::Direct4);
        let schedule = empty_schedule(&spec);
        let grid = default_grid(&spec, &schedule);
        let initial = QuantumState::from_product(ProductState(0b1010), 4);
        let (_final_state, u) = propagate(&spec, &schedule, &grid, None, &initial).unwrap();
        assert_eq!(u, DMatrix::<C64>::identity(16, 16));
    }

    #[test]
    fn zeeman_only_chain_gives_diagonal_phases() {
        let spec = ChainSpec::table1(Topology::Direct4);
        let zeroed = spec
            .with_residual_hz(Bond::B12, 0.0)
            .unwrap()
            .with_residual_hz(Bond::B23, 0.0)
            .unwrap()
            .with_residual_hz(Bond::B34, 0.0)
            .unwrap();
        let schedule = idle_schedule(&zeroed, 10.0e-9);
        let grid = default_grid(&zeroed, &schedule);
        let initial = QuantumState::from_product(ProductState(0b1010), 4);
        let (_, u) = propagate(&zeroed, &schedule, &grid, None, &initial).unwrap();
        let w_ref = zeroed.rotating_frame_reference();
        for s in 0..16u16 {
            // diagonal with e^{-i E t / hbar} pattern
            let st = ProductState(s);
            let mut e = 0.0;
            for k in 0..4 {
                e -= 0.5 * (zeroed.larmor(k) - w_ref) * st.sigma_z(k, 4) as f64;
            }
            let expect = C64::from_polar(1.0, -e * schedule.total_duration);
            assert!(
                (u[(s as usize, s as usize)] - expect).norm() < 1e-7,
                "state {s}"
            );
            for t in 0..16 {
                if t != s as usize {
                    assert!(u[(s as usize, t)].norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn propagator_is_unitary_under_drive() {
        let spec = ChainSpec::table1(Topology::Direct4);
        let schedule = x90_like_schedule(&spec, 4);
        let grid = default_grid(&spec, &schedule);
        let initial = QuantumState::from_product(ProductState(0b1010), 4);
        let (final_state, u) = propagate(&spec, &schedule, &grid, None, &initial).unwrap();
        assert!(unitarity_defect(&u) < 1e-8);
        final_state.validate().unwrap();
    }

    #[test]
    fn halving_dt_converges() {
        let spec = ChainSpec::table1(Topology::Direct4);
        let schedule = x90_like_schedule(&spec, 3);
        let grid = default_grid(&spec, &schedule);
        let initial = QuantumState::from_product(ProductState(0b1010), 4);
        let (a, _) = propagate(&spec, &schedule, &grid, None, &initial).unwrap();
        let (b, _) = propagate(&spec, &schedule, &grid.halved(), None, &initial).unwrap();
        let (QuantumState::Vector(va), QuantumState::Vector(vb)) = (a, b) else {
            panic!("vector states expected");
        };
        let max_diff = (va - vb).iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!(max_diff < 1e-7, "dt-halving changed amplitudes by {max_diff}");
    }

    #[test]
    fn rotating_frame_agrees_with_lab_frame() {
        // one Larmor period, lab frame propagated 50x finer
        let spec = ChainSpec::table1(Topology::Direct4);
        let p = crate::oracles::QubitFrameParams::for_qubit(&spec, 1, 0.0, 0.0, 0.0, 1.0).unwrap();
        let schedule = x90_like_schedule(&spec, 1);
        let grid = default_grid(&spec, &schedule);
        let initial = QuantumState::from_product(ProductState(0b1010), 4);

        let rot = GatePropagator::new(&spec, &schedule, grid).unwrap();
        let quiet = NoiseRealization::quiet(4);
        let u_rot = rot.full_unitary(&quiet).unwrap();

        let lab_grid = TimeGrid {
            t0: 0.0,
            dt: grid.dt / 50.0,
            n_steps: grid.n_steps * 50,
        };
        let lab = GatePropagator::with_reference(&spec, &schedule, lab_grid, 0.0).unwrap();
        let u_lab = lab.full_unitary(&quiet).unwrap();

        // undo the uniform frame on the final propagator: W(t) = exp(-i w t Sz/2)
        let w_ref = spec.rotating_frame_reference();
        let tau = schedule.total_duration;
        let mut w = DMatrix::<C64>::zeros(16, 16);
        for s in 0..16u16 {
            let st = ProductState(s);
            let mut m = 0.0;
            for k in 0..4 {
                m += st.sigma_z(k, 4) as f64;
            }
            w[(s as usize, s as usize)] = C64::from_polar(1.0, -0.5 * w_ref * tau * m);
        }
        let u_lab_in_rot = &w * &u_lab;
        let psi0 = match &initial {
            QuantumState::Vector(v) => v.clone(),
            _ => unreachable!(),
        };
        let f = ((&u_rot * &psi0).adjoint() * (&u_lab_in_rot * &psi0))[(0, 0)].norm();
        assert!(
            f > 1.0 - 1e-6,
            "frame equivalence fidelity {f} (omega_q = {})",
            p.omega_q
        );
    }

    #[test]
    fn quiet_noise_matches_noise_free_bit_for_bit() {
        let spec = ChainSpec::table1(Topology::Direct4);
        let schedule = x90_like_schedule(&spec, 3);
        let grid = default_grid(&spec, &schedule);
        let engine = GatePropagator::new(&spec, &schedule, grid).unwrap();
        let quiet = NoiseRealization::quiet(4);
        // zero-amplitude channels, explicitly sampled
        let zero_noise = NoiseRealization {
            delta_v: [(Bond::B12, vec![0.0; grid.n_steps])].into(),
            delta_omega: vec![0.0; 4],
            master_seed: 1,
            index: 0,
        };
        let a = engine.sector_unitary(2, &quiet).unwrap();
        let b = engine.sector_unitary(2, &zero_noise).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sz_sectors_do_not_mix() {
        let spec = ChainSpec::table1(Topology::Direct4);
        let schedule = x90_like_schedule(&spec, 3);
        let grid = default_grid(&spec, &schedule);
        let initial = QuantumState::from_product(ProductState(0b1010), 4);
        let (final_state, _) = propagate(&spec, &schedule, &grid, None, &initial).unwrap();
        let QuantumState::Vector(v) = final_state else {
            panic!()
        };
        let mut outside = 0.0;
        for s in 0..16u16 {
            if ProductState(s).n_up(4) != 2 {
                outside += v[s as usize].norm_sqr();
            }
        }
        assert!(outside < 1e-10, "population outside manifold {outside}");
    }

    #[test]
    fn projection_examples() {
        let spec = ChainSpec::table1(Topology::Direct4);
        let h = build_hamiltonian(&spec, None).unwrap();
        let es = diagonalize_and_label(&h).unwrap();
        // |00> eigenvector itself: zero leakage
        let v00 = es.vector_of(ProductState(0b1010)).unwrap();
        let state = QuantumState::Vector(v00.map(|x| C64::new(x, 0.0)));
        let (_, leak) = project_computational(&state, &es, Topology::Direct4).unwrap();
        assert!(leak < 1e-12);
        // equal superposition with the |~up up down down> leakage state
        let vl = es.vector_of(ProductState(0b0011)).unwrap();
        let mix = (v00 + vl).map(|x| C64::new(x / 2.0f64.sqrt(), 0.0));
        let state = QuantumState::Vector(mix);
        let (reduced, leak) = project_computational(&state, &es, Topology::Direct4).unwrap();
        assert_relative_eq!(leak, 0.5, max_relative = 1e-9);
        assert_eq!(reduced.dim(), 4);
    }

    #[test]
    fn bloch_initial_zero_state_points_north() {
        let spec = ChainSpec::table1(Topology::Direct4);
        let h = build_hamiltonian(&spec, None).unwrap();
        let es = diagonalize_and_label(&h).unwrap();
        let v = es.vector_of(ProductState(0b1010)).unwrap();
        let state = QuantumState::Vector(v.map(|x| C64::new(x, 0.0)));
        let traj = bloch_trajectory(&spec, &[(0.0, state)], 1).unwrap();
        let r = traj.r[0];
        assert!(r[2] > 0.999, "r_z = {}", r[2]);
        assert!(r[0].abs() < 1e-2 && r[1].abs() < 1e-2);
    }

    #[test]
    fn bloch_free_evolution_is_frozen_in_corotating_frame() {
        // |+> of qubit 1 stays near +x when co-rotated at omega_q
        let spec = ChainSpec::table1(Topology::Direct4);
        let h = build_hamiltonian(&spec, None).unwrap();
        let es = diagonalize_and_label(&h).unwrap();
        let v00 = es.vector_of(ProductState(0b1010)).unwrap();
        let v10 = es.vector_of(ProductState(0b0110)).unwrap();
        let plus = (v00 + v10).map(|x| C64::new(x / 2.0f64.sqrt(), 0.0));
        let initial = QuantumState::Vector(plus);

        let schedule = idle_schedule(&spec, 20.0e-9);
        let grid = default_grid(&spec, &schedule);
        let engine = GatePropagator::new(&spec, &schedule, grid).unwrap();
        let quiet = NoiseRealization::quiet(4);
        let u = engine.full_unitary(&quiet).unwrap();

        let mut samples = Vec::new();
        let steps = 8;
        for k in 0..=steps {
            let t = schedule.total_duration * k as f64 / steps as f64;
            // re-propagate up to t
            let sub = Segment {
                bond: Bond::B12,
                start: 0.0,
                envelope: EnvelopeSpec::cosine(t.max(1e-12)).unwrap(),
                drive: SegmentDrive::Tone(DriveTone {
                    amplitude: 0.0,
                    carrier: crate::units::angular_from_hz(150.0e6),
                    phase: 0.0,
                }),
            };
            let s = PulseSchedule::new(&spec, vec![sub], vec![]).unwrap();
            let g = default_grid(&spec, &s);
            let (state, _) = propagate(&spec, &s, &g, None, &initial).unwrap();
            samples.push((t, state));
        }
        let _ = u;
        let traj = bloch_trajectory(&spec, &samples, 1).unwrap();
        for (i, r) in traj.r.iter().enumerate() {
            assert!(
                r[0] > 0.95,
                "sample {i}: r = {r:?} (transverse drifted in co-rotating frame)"
            );
        }
    }

    #[test]
    fn grid_validation() {
        let spec = ChainSpec::table1(Topology::Direct4);
        let schedule = x90_like_schedule(&spec, 3);
        let bad = TimeGrid {
            t0: 0.0,
            dt: 1e-9,
            n_steps: 3,
        };
        assert!(GatePropagator::new(&spec, &schedule, bad).is_err());
    }
}
