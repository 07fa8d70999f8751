//! Exact diagonalization with product-state labeling, ZZ-interaction
//! strength, and commensurability timescales.
//!
//! Exchange couplings hybridize the product eigenstates only slightly at the
//! working detunings, so each product state can be matched to the eigenvector
//! it overlaps most. Labels are assigned greedily in descending overlap with
//! ties broken toward the lower eigenindex, and an assignment is rejected
//! when the best remaining overlap drops to 0.5 or below.

use std::collections::BTreeMap;

use nalgebra::{Complex, DMatrix, DVector};

use crate::chain::{ProductState, Topology};
use crate::units::H_PLANCK;
use crate::{Error, Result};

type C64 = Complex<f64>;

/// Labeled spectrum of a static chain Hamiltonian.
///
/// `energies` ascend; `vectors` holds the corresponding eigenvectors as
/// columns (real orthogonal, hence unitary: chain Hamiltonians are real
/// symmetric in the product basis); `labels` maps each product state to the
/// eigenindex it dominates.
#[derive(Debug, Clone)]
pub struct EigenStructure {
    pub n_spins: usize,
    pub energies: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub labels: BTreeMap<u16, usize>,
}

impl EigenStructure {
    /// Energy (J) of the eigenstate labeled by `state`.
    pub fn energy_of(&self, state: ProductState) -> Result<f64> {
        let idx = self
            .labels
            .get(&state.0)
            .ok_or_else(|| Error::MissingLabel(state.arrows(self.n_spins)))?;
        Ok(self.energies[*idx])
    }

    /// Eigenvector (sign-fixed) of the eigenstate labeled by `state`.
    pub fn vector_of(&self, state: ProductState) -> Result<DVector<f64>> {
        let idx = self
            .labels
            .get(&state.0)
            .ok_or_else(|| Error::MissingLabel(state.arrows(self.n_spins)))?;
        Ok(self.vectors.column(*idx).into_owned())
    }

    /// Eigenindex labeled by `state`.
    pub fn index_of(&self, state: ProductState) -> Result<usize> {
        self.labels
            .get(&state.0)
            .copied()
            .ok_or_else(|| Error::MissingLabel(state.arrows(self.n_spins)))
    }
}

/// Diagonalize a Hermitian chain Hamiltonian (joules) and label every product
/// state with the eigenvector of maximum overlap.
///
/// Fails with [`Error::LabelingAmbiguous`] when some product state cannot be
/// matched with squared overlap above 0.5.
pub fn diagonalize_and_label(h: &DMatrix<C64>) -> Result<EigenStructure> {
    let dim = h.nrows();
    let n_spins = dim.trailing_zeros() as usize;
    let scale = h.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut real = DMatrix::<f64>::zeros(dim, dim);
    for r in 0..dim {
        for c in 0..dim {
            let v = h[(r, c)];
            let vt = h[(c, r)];
            if (v - vt.conj()).norm() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::Invalid(format!(
                    "matrix is not Hermitian at ({r}, {c})"
                )));
            }
            if v.im.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::Invalid(
                    "chain Hamiltonian has complex entries; expected real symmetric".into(),
                ));
            }
            real[(r, c)] = v.re;
        }
    }
    let (energies, vectors) = eigh_sorted(&real);
    label_eigenvectors(n_spins, energies, vectors)
}

/// Real-symmetric eigendecomposition sorted by ascending eigenvalue.
pub(crate) fn eigh_sorted(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let se = m.clone().symmetric_eigen();
    let dim = m.nrows();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
    let energies: Vec<f64> = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vectors = DMatrix::<f64>::zeros(dim, dim);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &se.eigenvectors.column(i));
    }
    (energies, vectors)
}

fn label_eigenvectors(
    n_spins: usize,
    energies: Vec<f64>,
    mut vectors: DMatrix<f64>,
) -> Result<EigenStructure> {
    let dim = vectors.nrows();
    // all (product state, eigenindex) overlaps, sorted descending; greedy
    // assignment, ties toward lower eigenindex
    let mut entries: Vec<(f64, usize, usize)> = Vec::with_capacity(dim * dim);
    for s in 0..dim {
        for e in 0..dim {
            let ov = vectors[(s, e)] * vectors[(s, e)];
            if ov > 0.0 {
                entries.push((ov, s, e));
            }
        }
    }
    entries.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
    let mut state_done = vec![false; dim];
    let mut eig_done = vec![false; dim];
    let mut labels = BTreeMap::new();
    let mut assigned = 0;
    for &(ov, s, e) in &entries {
        if state_done[s] || eig_done[e] {
            continue;
        }
        if ov <= 0.5 {
            return Err(Error::LabelingAmbiguous {
                state: ProductState(s as u16).arrows(n_spins),
                overlap: ov,
            });
        }
        labels.insert(s as u16, e);
        state_done[s] = true;
        eig_done[e] = true;
        assigned += 1;
        if assigned == dim {
            break;
        }
    }
    if assigned < dim {
        // some state had zero overlap with every unassigned eigenvector
        let s = state_done.iter().position(|d| !d).unwrap();
        return Err(Error::LabelingAmbiguous {
            state: ProductState(s as u16).arrows(n_spins),
            overlap: 0.0,
        });
    }
    // fix gauge: dominant component positive
    for (&s, &e) in &labels {
        if vectors[(s as usize, e)] < 0.0 {
            let mut col = vectors.column_mut(e);
            col.neg_mut();
        }
    }
    Ok(EigenStructure {
        n_spins,
        energies,
        vectors,
        labels,
    })
}

/// The four computational product states `|00>, |01>, |10>, |11>` of a
/// topology, in that order.
pub fn computational_states(topology: Topology) -> [ProductState; 4] {
    match topology {
        // |0> = |down up>, |1> = |up down> per qubit
        Topology::Direct4 => [
            ProductState(0b1010),
            ProductState(0b1001),
            ProductState(0b0110),
            ProductState(0b0101),
        ],
        Topology::Coupler5 => [
            ProductState(0b10101),
            ProductState(0b10011),
            ProductState(0b01101),
            ProductState(0b01011),
        ],
    }
}

/// Leakage product states of the two-excitation manifold.
pub fn leakage_states(topology: Topology) -> &'static [ProductState] {
    match topology {
        Topology::Direct4 => &[ProductState(0b0011), ProductState(0b1100)],
        Topology::Coupler5 => &[
            ProductState(0b01110), // up down down down Up
            ProductState(0b10110), // down up down down Up
            ProductState(0b11010), // down down up down Up
            ProductState(0b11100), // down down down up Up
            ProductState(0b11001), // down down up up Down
            ProductState(0b00111), // up up down down Down
        ],
    }
}

/// ZZ-interaction strength (J): `zeta = E11 + E00 - E10 - E01` over the
/// labeled computational eigenstates.
pub fn zz_interaction(es: &EigenStructure, topology: Topology) -> Result<f64> {
    let [s00, s01, s10, s11] = computational_states(topology);
    Ok(es.energy_of(s11)? + es.energy_of(s00)? - es.energy_of(s10)? - es.energy_of(s01)?)
}

/// Commensurability unit period of the two-qubit leakage dynamics (s).
///
/// Direct chain: `tau = h / (|E_uudd - E00| + |E_dduu - E11|)`. Coupler
/// chain: the inverse is the mean of the four coupled computational/leakage
/// gaps divided by h.
pub fn tau_cz(es: &EigenStructure, topology: Topology) -> Result<f64> {
    let [s00, _s01, s10, s11] = computational_states(topology);
    match topology {
        Topology::Direct4 => {
            let e_uudd = es.energy_of(ProductState(0b0011))?;
            let e_dduu = es.energy_of(ProductState(0b1100))?;
            let gap = (e_uudd - es.energy_of(s00)?).abs() + (e_dduu - es.energy_of(s11)?).abs();
            Ok(H_PLANCK / gap)
        }
        Topology::Coupler5 => {
            let g1 = (es.energy_of(ProductState(0b01110))? - es.energy_of(s11)?).abs();
            let g2 = (es.energy_of(ProductState(0b11100))? - es.energy_of(s00)?).abs();
            let g3 = (es.energy_of(ProductState(0b10110))? - es.energy_of(s10)?).abs();
            let g4 = (es.energy_of(ProductState(0b11010))? - es.energy_of(s10)?).abs();
            Ok(4.0 * H_PLANCK / (g1 + g2 + g3 + g4))
        }
    }
}
