use thiserror::Error;

use super::{BondOrder, Molecule};

pub const NUM_ATOM_FEATURES: usize = 9;
pub const NUM_BOND_FEATURES: usize = 3;

/// Atomic number, chirality, degree, charge (offset by 5), H count,
/// radical electrons, hybridization, aromatic, in ring.
pub const ATOM_FEATURE_CARDINALITIES: [usize; NUM_ATOM_FEATURES] = [119, 4, 11, 12, 9, 5, 8, 2, 2];

/// Bond order, stereo, conjugated.
pub const BOND_FEATURE_CARDINALITIES: [usize; NUM_BOND_FEATURES] = [4, 6, 2];

const CHARGE_OFFSET: i32 = 5;

const HYB_SP: usize = 2;
const HYB_SP2: usize = 3;
const HYB_SP3: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("atom {atom}: {feature} value {value} outside supported range")]
    OutOfRange {
        atom: usize,
        feature: &'static str,
        value: i32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVectors {
    pub atom_features: Vec<[usize; NUM_ATOM_FEATURES]>,
    pub bond_features: Vec<[usize; NUM_BOND_FEATURES]>,
}

pub fn featurize(m: &Molecule) -> Result<FeatureVectors, FeatureError> {
    let mut atom_features = Vec::with_capacity(m.atom_count());
    for (i, atom) in m.atoms().iter().enumerate() {
        let degree = m.degree(i);
        let charge = atom.formal_charge as i32 + CHARGE_OFFSET;
        let checks = [
            ("degree", degree as i32, 2),
            ("formal charge", charge, 3),
            ("hydrogen count", atom.explicit_h_count as i32, 4),
        ];
        for (feature, value, slot) in checks {
            if value < 0 || value as usize >= ATOM_FEATURE_CARDINALITIES[slot] {
                let value = if slot == 3 {
                    value - CHARGE_OFFSET
                } else {
                    value
                };
                return Err(FeatureError::OutOfRange {
                    atom: i,
                    feature,
                    value,
                });
            }
        }
        atom_features.push([
            atom.element.atomic_number() as usize,
            0,
            degree,
            charge as usize,
            atom.explicit_h_count as usize,
            0,
            hybridization(m, i),
            atom.aromatic as usize,
            atom.in_ring as usize,
        ]);
    }
    let bond_features = (0..m.bond_count())
        .map(|b| {
            [
                m.bonds()[b].order.code() as usize,
                0,
                conjugated(m, b) as usize,
            ]
        })
        .collect();
    Ok(FeatureVectors {
        atom_features,
        bond_features,
    })
}

fn hybridization(m: &Molecule, atom: usize) -> usize {
    if m.atoms()[atom].aromatic {
        return HYB_SP2;
    }
    let mut doubles = 0;
    for &(_, b) in m.neighbors(atom) {
        match m.bonds()[b].order {
            BondOrder::Triple => return HYB_SP,
            BondOrder::Double => doubles += 1,
            _ => {}
        }
    }
    match doubles {
        0 => HYB_SP3,
        1 => HYB_SP2,
        _ => HYB_SP,
    }
}

fn is_unsaturated(order: BondOrder) -> bool {
    order != BondOrder::Single
}

/// Whether `atom` carries an unsaturated bond other than `except`.
fn has_other_unsaturated(m: &Molecule, atom: usize, except: usize) -> bool {
    m.neighbors(atom)
        .iter()
        .any(|&(_, b)| b != except && is_unsaturated(m.bonds()[b].order))
}

/// A single bond flanked on both ends by unsaturated bonds.
fn conjugating_single(m: &Molecule, b: usize) -> bool {
    let bond = m.bonds()[b];
    bond.order == BondOrder::Single
        && has_other_unsaturated(m, bond.a, b)
        && has_other_unsaturated(m, bond.b, b)
}

fn conjugated(m: &Molecule, b: usize) -> bool {
    let bond = m.bonds()[b];
    match bond.order {
        BondOrder::Aromatic => true,
        BondOrder::Single => conjugating_single(m, b),
        _ => [bond.a, bond.b].iter().any(|&atom| {
            m.neighbors(atom)
                .iter()
                .any(|&(_, other)| other != b && conjugating_single(m, other))
        }),
    }
}
