//! Static spin-chain model: topologies, couplings, and Hamiltonian assembly.
//!
//! # Basis conventions
//!
//! Product states are indexed with site 1 in the most significant bit and the
//! coupler (when present) in the least significant bit. Bit value 0 means
//! spin-up. Spin-up is the lower-energy eigenstate of the Zeeman term
//! `-(hbar omega / 2) s^z` for `omega > 0`, i.e. `s^z |up> = +|up>`.
//!
//! The chain Hamiltonian is
//!
//! ```text
//! H = -(1/2) sum_k hbar omega_k s_k^z + (1/4) sum_bonds J_b (s_k . s_l)
//! ```
//!
//! with `s` the Pauli operators. Every term commutes with the total `S_z`,
//! so the matrix is block-diagonal over sectors of fixed spin-up count; the
//! [`SzSector`] helpers expose that structure for the propagator.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::units::{angular_from_hz, energy_from_hz, hz_from_angular, hz_from_energy, EV, HBAR};
use crate::{Error, Result};

type C64 = Complex<f64>;

/// Chain layout: two RST qubits coupled directly or through a single-spin
/// coupler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// Four spins S1..S4, bonds (1,2), (2,3), (3,4).
    Direct4,
    /// Five spins S1..S4 plus coupler C, bonds (1,2), (2,c), (3,c), (3,4).
    Coupler5,
}

impl Topology {
    pub fn n_spins(self) -> usize {
        match self {
            Topology::Direct4 => 4,
            Topology::Coupler5 => 5,
        }
    }

    /// Bonds of this topology in canonical order.
    pub fn bonds(self) -> &'static [Bond] {
        match self {
            Topology::Direct4 => &[Bond::B12, Bond::B23, Bond::B34],
            Topology::Coupler5 => &[Bond::B12, Bond::B2C, Bond::B3C, Bond::B34],
        }
    }
}

/// Exchange bond identifier. `B2C`/`B3C` exist only on [`Topology::Coupler5`],
/// `B23` only on [`Topology::Direct4`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
#[serde(rename_all = "lowercase")]
pub enum Bond {
    #[serde(rename = "j12")]
    B12,
    #[serde(rename = "j23")]
    B23,
    #[serde(rename = "j34")]
    B34,
    #[serde(rename = "j2c")]
    B2C,
    #[serde(rename = "j3c")]
    B3C,
}

impl Bond {
    /// Zero-based site indices joined by this bond (coupler is site 4).
    pub fn sites(self) -> (usize, usize) {
        match self {
            Bond::B12 => (0, 1),
            Bond::B23 => (1, 2),
            Bond::B34 => (2, 3),
            Bond::B2C => (1, 4),
            Bond::B3C => (2, 4),
        }
    }
}

impl fmt::Display for Bond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Bond::B12 => "j12",
            Bond::B23 => "j23",
            Bond::B34 => "j34",
            Bond::B2C => "j2c",
            Bond::B3C => "j3c",
        };
        f.write_str(s)
    }
}

/// A product basis state of the chain, bit-packed per the module conventions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProductState(pub u16);

impl ProductState {
    /// Build from per-site spin-down flags, site 1 first.
    pub fn from_downs(downs: &[bool]) -> Self {
        let mut s = 0u16;
        for &d in downs {
            s = (s << 1) | u16::from(d);
        }
        ProductState(s)
    }

    /// +1 for spin-up, -1 for spin-down at `site` (0-based) in an
    /// `n_spins`-site chain.
    #[inline]
    pub fn sigma_z(self, site: usize, n_spins: usize) -> i32 {
        if self.0 >> (n_spins - 1 - site) & 1 == 0 {
            1
        } else {
            -1
        }
    }

    /// Number of spin-up sites.
    #[inline]
    pub fn n_up(self, n_spins: usize) -> usize {
        n_spins - (self.0.count_ones() as usize)
    }

    /// Arrow string, double arrows for the coupler site of a 5-spin chain.
    pub fn arrows(self, n_spins: usize) -> String {
        (0..n_spins)
            .map(|k| {
                let up = self.sigma_z(k, n_spins) > 0;
                match (n_spins == 5 && k == 4, up) {
                    (false, true) => '\u{2191}',
                    (false, false) => '\u{2193}',
                    (true, true) => '\u{21D1}',
                    (true, false) => '\u{21D3}',
                }
            })
            .collect()
    }
}

/// Static description of the spin chain: Larmor frequencies, residual
/// exchange couplings, and barrier lever arms.
///
/// Larmor frequencies are stored as angular frequencies (rad/s) and exchange
/// couplings as energies (J); constructors and the JSON form take ordinary
/// frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    topology: Topology,
    larmor: Vec<f64>,
    residual_exchange: BTreeMap<Bond, f64>,
    lever_arm_alpha: BTreeMap<Bond, f64>,
    lever_arm_gamma: f64,
}

/// JSON document form of [`ChainSpec`]; all energies as frequencies.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChainSpecDoc {
    topology: Topology,
    /// omega/2pi per site in Hz, qubit spins S1..S4 first, coupler last.
    larmor_hz: Vec<f64>,
    /// J^r/h per bond in Hz.
    residual_exchange_hz: BTreeMap<Bond, f64>,
    /// Barrier lever arm per bond, 1/V. A bare number applies uniformly.
    #[serde(default)]
    lever_arm_alpha_per_volt: Option<AlphaDoc>,
    /// Charge-noise lever arm, eV/V.
    lever_arm_gamma_ev_per_volt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum AlphaDoc {
    Uniform(f64),
    PerBond(BTreeMap<Bond, f64>),
}

impl ChainSpec {
    /// Build a chain from ordinary frequencies: `larmor_hz` (omega/2pi) and
    /// `residual_hz` (J^r/h) per bond. `alpha_per_volt` applies to every bond.
    pub fn from_frequencies(
        topology: Topology,
        larmor_hz: &[f64],
        residual_hz: &[(Bond, f64)],
        alpha_per_volt: f64,
        gamma_ev_per_volt: f64,
    ) -> Result<Self> {
        let larmor: Vec<f64> = larmor_hz.iter().map(|&f| angular_from_hz(f)).collect();
        let residual_exchange: BTreeMap<Bond, f64> = residual_hz
            .iter()
            .map(|&(b, f)| (b, energy_from_hz(f)))
            .collect();
        let lever_arm_alpha: BTreeMap<Bond, f64> = topology
            .bonds()
            .iter()
            .map(|&b| (b, alpha_per_volt))
            .collect();
        Self::new(
            topology,
            larmor,
            residual_exchange,
            lever_arm_alpha,
            gamma_ev_per_volt * EV,
        )
    }

    /// Build from internal units (rad/s, joules). Validates the invariants.
    pub fn new(
        topology: Topology,
        larmor: Vec<f64>,
        residual_exchange: BTreeMap<Bond, f64>,
        lever_arm_alpha: BTreeMap<Bond, f64>,
        lever_arm_gamma: f64,
    ) -> Result<Self> {
        if larmor.len() != topology.n_spins() {
            return Err(Error::InvalidSpec(format!(
                "larmor list has {} entries, topology needs {}",
                larmor.len(),
                topology.n_spins()
            )));
        }
        if !larmor.iter().all(|w| w.is_finite()) || !lever_arm_gamma.is_finite() {
            return Err(Error::NonFinite("chain spec"));
        }
        for &bond in topology.bonds() {
            let j = *residual_exchange
                .get(&bond)
                .ok_or_else(|| Error::InvalidSpec(format!("missing residual exchange for {bond}")))?;
            if !j.is_finite() {
                return Err(Error::NonFinite("residual exchange"));
            }
            if j < 0.0 {
                return Err(Error::NegativeExchange {
                    bond: bond.to_string(),
                    value_hz: hz_from_energy(j),
                });
            }
        }
        for (&bond, _) in residual_exchange.iter().chain(lever_arm_alpha.iter()) {
            if !topology.bonds().contains(&bond) {
                return Err(Error::UnknownBond(bond.to_string()));
            }
        }
        let mut alpha = lever_arm_alpha;
        for &bond in topology.bonds() {
            alpha.entry(bond).or_insert(11.0);
        }
        Ok(ChainSpec {
            topology,
            larmor,
            residual_exchange,
            lever_arm_alpha: alpha,
            lever_arm_gamma,
        })
    }

    /// Default simulation parameters (the built-in `table1` preset).
    ///
    /// Larmor frequencies 10.75/10.60/10.48/10.35 GHz (coupler 10.54 GHz),
    /// intra-qubit residuals 2 MHz, inter-qubit residual 2 MHz for the direct
    /// chain and 12 MHz per coupler bond for the coupler chain, lever arms
    /// alpha = 0.011/mV and gamma = 0.1 eV/V.
    pub fn table1(topology: Topology) -> Self {
        let alpha = 0.011e3; // 0.011 mV^-1 in 1/V
        let gamma_ev = 0.1;
        match topology {
            Topology::Direct4 => Self::from_frequencies(
                topology,
                &[10.75e9, 10.60e9, 10.48e9, 10.35e9],
                &[(Bond::B12, 2.0e6), (Bond::B23, 2.0e6), (Bond::B34, 2.0e6)],
                alpha,
                gamma_ev,
            )
            .expect("table1 direct4 preset is valid"),
            Topology::Coupler5 => Self::from_frequencies(
                topology,
                &[10.75e9, 10.60e9, 10.48e9, 10.35e9, 10.54e9],
                &[
                    (Bond::B12, 2.0e6),
                    (Bond::B2C, 12.0e6),
                    (Bond::B3C, 12.0e6),
                    (Bond::B34, 2.0e6),
                ],
                alpha,
                gamma_ev,
            )
            .expect("table1 coupler5 preset is valid"),
        }
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn n_spins(&self) -> usize {
        self.topology.n_spins()
    }

    /// Angular Larmor frequency of a site (rad/s).
    pub fn larmor(&self, site: usize) -> f64 {
        self.larmor[site]
    }

    pub fn larmor_all(&self) -> &[f64] {
        &self.larmor
    }

    /// Residual exchange of a bond (J).
    pub fn residual(&self, bond: Bond) -> f64 {
        self.residual_exchange[&bond]
    }

    /// Barrier lever arm of a bond (1/V).
    pub fn alpha(&self, bond: Bond) -> f64 {
        self.lever_arm_alpha[&bond]
    }

    /// Charge-noise lever arm (J/V).
    pub fn gamma(&self) -> f64 {
        self.lever_arm_gamma
    }

    /// Copy with one residual exchange replaced (value as J/h in Hz).
    pub fn with_residual_hz(&self, bond: Bond, f_hz: f64) -> Result<Self> {
        let mut residual = self.residual_exchange.clone();
        if !residual.contains_key(&bond) {
            return Err(Error::UnknownBond(bond.to_string()));
        }
        residual.insert(bond, energy_from_hz(f_hz));
        Self::new(
            self.topology,
            self.larmor.clone(),
            residual,
            self.lever_arm_alpha.clone(),
            self.lever_arm_gamma,
        )
    }

    /// Copy with one site's Larmor frequency replaced (omega/2pi in Hz).
    pub fn with_larmor_hz(&self, site: usize, f_hz: f64) -> Result<Self> {
        let mut larmor = self.larmor.clone();
        if site >= larmor.len() {
            return Err(Error::InvalidSpec(format!("site {site} out of range")));
        }
        larmor[site] = angular_from_hz(f_hz);
        Self::new(
            self.topology,
            larmor,
            self.residual_exchange.clone(),
            self.lever_arm_alpha.clone(),
            self.lever_arm_gamma,
        )
    }

    /// Mean angular Larmor frequency of the four qubit spins; the uniform
    /// rotating-frame reference used for time propagation.
    pub fn rotating_frame_reference(&self) -> f64 {
        self.larmor[..4].iter().sum::<f64>() / 4.0
    }

    /// Serialize to the JSON document form (frequencies in Hz).
    pub fn to_json(&self) -> String {
        let doc = ChainSpecDoc {
            topology: self.topology,
            larmor_hz: self.larmor.iter().map(|&w| hz_from_angular(w)).collect(),
            residual_exchange_hz: self
                .residual_exchange
                .iter()
                .map(|(&b, &j)| (b, hz_from_energy(j)))
                .collect(),
            lever_arm_alpha_per_volt: Some(AlphaDoc::PerBond(self.lever_arm_alpha.clone())),
            lever_arm_gamma_ev_per_volt: self.lever_arm_gamma / EV,
        };
        serde_json::to_string_pretty(&doc).expect("chain spec serializes")
    }

    /// Parse the JSON document form.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ChainSpecDoc =
            serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        let larmor = doc.larmor_hz.iter().map(|&f| angular_from_hz(f)).collect();
        let residual = doc
            .residual_exchange_hz
            .iter()
            .map(|(&b, &f)| (b, energy_from_hz(f)))
            .collect();
        let alpha = match doc.lever_arm_alpha_per_volt {
            None => BTreeMap::new(),
            Some(AlphaDoc::Uniform(a)) => {
                doc.topology.bonds().iter().map(|&b| (b, a)).collect()
            }
            Some(AlphaDoc::PerBond(m)) => m,
        };
        Self::new(
            doc.topology,
            larmor,
            residual,
            alpha,
            doc.lever_arm_gamma_ev_per_volt * EV,
        )
    }

    /// Internal generic model (site list + bond list) for this chain.
    pub(crate) fn model(&self) -> ChainModel {
        ChainModel {
            n_spins: self.n_spins(),
            larmor: self.larmor.clone(),
            bonds: self
                .topology
                .bonds()
                .iter()
                .map(|&b| {
                    let (k, l) = b.sites();
                    // coupler site index 4 holds for Coupler5; Direct4 bonds
                    // never reference it
                    BondSites { bond: b, k, l }
                })
                .collect(),
            j_residual: self
                .topology
                .bonds()
                .iter()
                .map(|&b| self.residual(b))
                .collect(),
        }
    }

    /// Two-spin model of one RST qubit in isolation.
    pub(crate) fn qubit_model(&self, qubit: usize) -> Result<ChainModel> {
        let (s0, s1, bond) = match qubit {
            1 => (0, 1, Bond::B12),
            2 => (2, 3, Bond::B34),
            _ => {
                return Err(Error::InvalidSpec(format!(
                    "qubit index {qubit} not in {{1, 2}}"
                )))
            }
        };
        Ok(ChainModel {
            n_spins: 2,
            larmor: vec![self.larmor[s0], self.larmor[s1]],
            bonds: vec![BondSites { bond, k: 0, l: 1 }],
            j_residual: vec![self.residual(bond)],
        })
    }
}

/// Site pair carried by a bond inside a [`ChainModel`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct BondSites {
    pub bond: Bond,
    pub k: usize,
    pub l: usize,
}

/// Generic chain: any number of spins with arbitrary two-site bonds.
/// [`ChainSpec`] reduces to this; the two-spin isolated qubit uses it too.
#[derive(Debug, Clone)]
pub(crate) struct ChainModel {
    pub n_spins: usize,
    pub larmor: Vec<f64>,
    pub bonds: Vec<BondSites>,
    pub j_residual: Vec<f64>,
}

impl ChainModel {
    pub fn dim(&self) -> usize {
        1 << self.n_spins
    }

    pub fn bond_index(&self, bond: Bond) -> Option<usize> {
        self.bonds.iter().position(|bs| bs.bond == bond)
    }

    /// Mean qubit-spin Larmor frequency (all sites except a 5th coupler).
    pub fn rotating_frame_reference(&self) -> f64 {
        let n_q = if self.n_spins == 5 { 4 } else { self.n_spins };
        self.larmor[..n_q].iter().sum::<f64>() / n_q as f64
    }
}

/// Dense Hamiltonian of the chain in joules, `2^n` square, complex entries.
///
/// `exchange_override` replaces the residual coupling on the listed bonds
/// (values in joules, must be non-negative).
pub fn build_hamiltonian(
    spec: &ChainSpec,
    exchange_override: Option<&BTreeMap<Bond, f64>>,
) -> Result<DMatrix<C64>> {
    if let Some(over) = exchange_override {
        for (&bond, &j) in over {
            if !spec.topology().bonds().contains(&bond) {
                return Err(Error::UnknownBond(bond.to_string()));
            }
            if !j.is_finite() {
                return Err(Error::NonFinite("exchange override"));
            }
            if j < 0.0 {
                return Err(Error::NegativeExchange {
                    bond: bond.to_string(),
                    value_hz: hz_from_energy(j),
                });
            }
        }
    }
    let model = spec.model();
    let j: Vec<f64> = model
        .bonds
        .iter()
        .zip(&model.j_residual)
        .map(|(bs, &jr)| {
            exchange_override
                .and_then(|m| m.get(&bs.bond).copied())
                .unwrap_or(jr)
        })
        .collect();
    Ok(dense_hamiltonian(&model, &model.larmor, &j))
}

/// Dense Hamiltonian (joules) for a generic model with explicit per-site
/// Larmor frequencies (rad/s) and per-bond exchange energies (J).
pub(crate) fn dense_hamiltonian(model: &ChainModel, larmor: &[f64], j: &[f64]) -> DMatrix<C64> {
    let n = model.n_spins;
    let dim = model.dim();
    let mut h = DMatrix::<C64>::zeros(dim, dim);
    for s in 0..dim as u16 {
        let st = ProductState(s);
        let mut diag = 0.0;
        for (k, &w) in larmor.iter().enumerate() {
            diag -= 0.5 * HBAR * w * st.sigma_z(k, n) as f64;
        }
        for (bs, &jb) in model.bonds.iter().zip(j) {
            diag += 0.25 * jb * (st.sigma_z(bs.k, n) * st.sigma_z(bs.l, n)) as f64;
        }
        h[(s as usize, s as usize)] = C64::new(diag, 0.0);
        // flip-flop terms: connect states with opposite spins on the bond
        for (bs, &jb) in model.bonds.iter().zip(j) {
            if st.sigma_z(bs.k, n) != st.sigma_z(bs.l, n) {
                let mask = (1u16 << (n - 1 - bs.k)) | (1u16 << (n - 1 - bs.l));
                let t = s ^ mask;
                if t > s {
                    h[(s as usize, t as usize)] += C64::new(0.5 * jb, 0.0);
                    h[(t as usize, s as usize)] += C64::new(0.5 * jb, 0.0);
                }
            }
        }
    }
    h
}

/// Transform a chain Hamiltonian into the frame rotating uniformly at
/// `omega_ref`: `H' = H + (hbar omega_ref / 2) sum_k s_k^z`.
///
/// Flip-flop and `s_z s_z` exchange terms commute with the uniform rotation
/// and are unchanged; only the Zeeman diagonal shifts.
pub fn rotating_frame(h: &DMatrix<C64>, omega_ref: f64) -> DMatrix<C64> {
    let dim = h.nrows();
    let n = dim.trailing_zeros() as usize;
    let mut out = h.clone();
    for s in 0..dim as u16 {
        let st = ProductState(s);
        let mut shift = 0.0;
        for k in 0..n {
            shift += 0.5 * HBAR * omega_ref * st.sigma_z(k, n) as f64;
        }
        out[(s as usize, s as usize)] += C64::new(shift, 0.0);
    }
    out
}

/// Basis of one total-S_z sector: all product states with a fixed number of
/// up spins, sorted ascending by basis index.
#[derive(Debug, Clone)]
pub struct SzSector {
    pub n_spins: usize,
    pub n_up: usize,
    pub basis: Vec<u16>,
    pos: Vec<u32>,
}

impl SzSector {
    pub fn of(n_spins: usize, n_up: usize) -> Self {
        let dim = 1usize << n_spins;
        let mut basis = Vec::new();
        let mut pos = vec![u32::MAX; dim];
        for s in 0..dim as u16 {
            if ProductState(s).n_up(n_spins) == n_up {
                pos[s as usize] = basis.len() as u32;
                basis.push(s);
            }
        }
        SzSector {
            n_spins,
            n_up,
            basis,
            pos,
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Position of a product state inside the sector basis.
    pub fn index_of(&self, state: u16) -> Option<usize> {
        let p = self.pos[state as usize];
        (p != u32::MAX).then_some(p as usize)
    }
}

/// Precomputed sector blocks of the chain Hamiltonian terms, in angular
/// frequency units (H/hbar). Assembly per time step is a cheap fill.
#[derive(Debug, Clone)]
pub(crate) struct SectorOps {
    pub sector: SzSector,
    /// Per state, per site: sigma_z = +-1.
    sigma: Vec<Vec<i8>>,
    /// Per bond: diagonal pattern sigma_k*sigma_l per state.
    bond_diag: Vec<Vec<i8>>,
    /// Per bond: flip-flop connected index pairs (i < j).
    bond_pairs: Vec<Vec<(u32, u32)>>,
}

impl SectorOps {
    pub fn new(model: &ChainModel, n_up: usize) -> Self {
        let n = model.n_spins;
        let sector = SzSector::of(n, n_up);
        let sigma: Vec<Vec<i8>> = sector
            .basis
            .iter()
            .map(|&s| {
                (0..n)
                    .map(|k| ProductState(s).sigma_z(k, n) as i8)
                    .collect()
            })
            .collect();
        let mut bond_diag = Vec::with_capacity(model.bonds.len());
        let mut bond_pairs = Vec::with_capacity(model.bonds.len());
        for bs in &model.bonds {
            let diag: Vec<i8> = sigma.iter().map(|sg| sg[bs.k] * sg[bs.l]).collect();
            let mut pairs = Vec::new();
            for (i, &s) in sector.basis.iter().enumerate() {
                let st = ProductState(s);
                if st.sigma_z(bs.k, n) != st.sigma_z(bs.l, n) {
                    let mask = (1u16 << (n - 1 - bs.k)) | (1u16 << (n - 1 - bs.l));
                    let t = s ^ mask;
                    if t > s {
                        let j = sector.index_of(t).expect("flip-flop stays in sector");
                        pairs.push((i as u32, j as u32));
                    }
                }
            }
            bond_diag.push(diag);
            bond_pairs.push(pairs);
        }
        SectorOps {
            sector,
            sigma,
            bond_diag,
            bond_pairs,
        }
    }

    /// Fill `out` with the sector block of H/hbar (rad/s) for per-site
    /// angular Larmor frequencies `larmor` and per-bond exchange couplings
    /// `j_over_hbar` (rad/s).
    pub fn assemble(&self, larmor: &[f64], j_over_hbar: &[f64], out: &mut DMatrix<f64>) {
        let d = self.sector.dim();
        debug_assert_eq!(out.nrows(), d);
        out.fill(0.0);
        for i in 0..d {
            let mut diag = 0.0;
            for (k, &w) in larmor.iter().enumerate() {
                diag -= 0.5 * w * self.sigma[i][k] as f64;
            }
            for (b, &jw) in j_over_hbar.iter().enumerate() {
                diag += 0.25 * jw * self.bond_diag[b][i] as f64;
            }
            out[(i, i)] = diag;
        }
        for (b, &jw) in j_over_hbar.iter().enumerate() {
            for &(i, j) in &self.bond_pairs[b] {
                out[(i as usize, j as usize)] += 0.5 * jw;
                out[(j as usize, i as usize)] += 0.5 * jw;
            }
        }
    }
}
