//! Reader and canonical writer for a SMILES subset: organic-subset and
//! bracket atoms (element, H count, charge), branches, ring closures and the
//! bond symbols `- = # :`. Stereo, isotopes, atom classes, wildcards and
//! multi-fragment input are rejected.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{Atom, Bond, BondOrder, Element, MolError, Molecule};
use crate::canon::{canonicalize, LabeledGraph};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unsupported feature at {pos}: {feature}")]
    UnsupportedFeature { pos: usize, feature: String },
    #[error("input contains more than one fragment")]
    DisconnectedInput,
    #[error("invalid molecule: {0}")]
    Invalid(#[from] MolError),
}

fn syntax(pos: usize, msg: impl Into<String>) -> SmilesError {
    SmilesError::Syntax {
        pos,
        msg: msg.into(),
    }
}

fn unsupported(pos: usize, feature: impl Into<String>) -> SmilesError {
    SmilesError::UnsupportedFeature {
        pos,
        feature: feature.into(),
    }
}

struct ParsedAtom {
    atom: Atom,
    /// Bracket atoms carry their hydrogen count explicitly.
    bracket: bool,
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    atoms: Vec<ParsedAtom>,
    bonds: Vec<(usize, usize, Option<BondOrder>)>,
    rings: BTreeMap<u32, (usize, Option<BondOrder>, usize)>,
}

pub fn parse_smiles(text: &str) -> Result<Molecule, SmilesError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(syntax(0, "empty input"));
    }
    let mut p = Parser {
        s: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        rings: BTreeMap::new(),
    };
    p.run()?;
    p.finish()
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        let mut prev: Option<usize> = None;
        let mut pending: Option<(BondOrder, usize)> = None;
        let mut branches: Vec<usize> = Vec::new();
        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                b'(' => {
                    let Some(p) = prev else {
                        return Err(syntax(start, "branch before any atom"));
                    };
                    if pending.is_some() {
                        return Err(syntax(start, "bond symbol before branch"));
                    }
                    branches.push(p);
                    self.pos += 1;
                }
                b')' => {
                    let Some(p) = branches.pop() else {
                        return Err(syntax(start, "unmatched ')'"));
                    };
                    if pending.is_some() {
                        return Err(syntax(start, "dangling bond symbol"));
                    }
                    prev = Some(p);
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' => {
                    if pending.is_some() {
                        return Err(syntax(start, "consecutive bond symbols"));
                    }
                    let order = match c {
                        b'-' => BondOrder::Single,
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        _ => BondOrder::Aromatic,
                    };
                    pending = Some((order, start));
                    self.pos += 1;
                }
                b'/' | b'\\' => return Err(unsupported(start, "directional bond")),
                b'$' => return Err(unsupported(start, "quadruple bond")),
                b'.' => return Err(SmilesError::DisconnectedInput),
                b'*' => return Err(unsupported(start, "wildcard atom")),
                b'0'..=b'9' | b'%' => {
                    let Some(atom) = prev else {
                        return Err(syntax(start, "ring closure before any atom"));
                    };
                    let label = self.ring_label()?;
                    let order = pending.take().map(|(o, _)| o);
                    match self.rings.remove(&label) {
                        Some((other, other_order, _)) => {
                            let order = match (order, other_order) {
                                (Some(a), Some(b)) if a != b => {
                                    return Err(syntax(start, "conflicting ring-closure bonds"))
                                }
                                (a, b) => a.or(b),
                            };
                            self.bonds.push((other, atom, order));
                        }
                        None => {
                            self.rings.insert(label, (atom, order, start));
                        }
                    }
                }
                _ => {
                    let atom = self.atom()?;
                    if let Some(p) = prev {
                        self.bonds.push((p, atom, pending.take().map(|(o, _)| o)));
                    } else if let Some((_, at)) = pending {
                        return Err(syntax(at, "bond symbol before first atom"));
                    }
                    prev = Some(atom);
                }
            }
        }
        if let Some((_, at)) = pending {
            return Err(syntax(at, "dangling bond symbol"));
        }
        if !branches.is_empty() {
            return Err(syntax(self.pos, "unclosed branch"));
        }
        if let Some((_, &(_, _, at))) = self.rings.iter().next() {
            return Err(syntax(at, "unclosed ring"));
        }
        Ok(())
    }

    fn ring_label(&mut self) -> Result<u32, SmilesError> {
        let start = self.pos;
        if self.peek() == Some(b'%') {
            let digits = self.s.get(self.pos + 1..self.pos + 3);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 3;
                    Ok(((d[0] - b'0') * 10 + (d[1] - b'0')) as u32)
                }
                _ => Err(syntax(start, "'%' must be followed by two digits")),
            }
        } else {
            let d = self.s[self.pos] - b'0';
            self.pos += 1;
            Ok(d as u32)
        }
    }

    fn atom(&mut self) -> Result<usize, SmilesError> {
        let start = self.pos;
        let parsed = if self.peek() == Some(b'[') {
            self.bracket_atom()?
        } else {
            let (element, aromatic) = self.organic_symbol().ok_or_else(|| {
                syntax(
                    start,
                    format!("unexpected character '{}'", self.s[start] as char),
                )
            })?;
            let mut atom = Atom::new(element);
            atom.aromatic = aromatic;
            ParsedAtom {
                atom,
                bracket: false,
            }
        };
        self.atoms.push(parsed);
        Ok(self.atoms.len() - 1)
    }

    fn organic_symbol(&mut self) -> Option<(Element, bool)> {
        let rest = &self.s[self.pos..];
        let two = [(b"Cl", Element::Cl), (b"Br", Element::Br)];
        for (sym, el) in two {
            if rest.starts_with(sym) {
                self.pos += 2;
                return Some((el, false));
            }
        }
        let (el, aromatic) = match rest[0] {
            b'B' => (Element::B, false),
            b'C' => (Element::C, false),
            b'N' => (Element::N, false),
            b'O' => (Element::O, false),
            b'P' => (Element::P, false),
            b'S' => (Element::S, false),
            b'F' => (Element::F, false),
            b'I' => (Element::I, false),
            b'b' => (Element::B, true),
            b'c' => (Element::C, true),
            b'n' => (Element::N, true),
            b'o' => (Element::O, true),
            b'p' => (Element::P, true),
            b's' => (Element::S, true),
            _ => return None,
        };
        self.pos += 1;
        Some((el, aromatic))
    }

    fn bracket_atom(&mut self) -> Result<ParsedAtom, SmilesError> {
        let open = self.pos;
        self.pos += 1;
        if self.peek().is_some_and(|c| c.is_ascii_digit()) {
            return Err(unsupported(self.pos, "isotope"));
        }
        let rest = &self.s[self.pos..];
        let mut found = None;
        for el in Element::ALL {
            let sym = el.symbol().as_bytes();
            if rest.starts_with(sym) && found.is_none_or(|(_, len, _)| sym.len() > len) {
                found = Some((el, sym.len(), false));
            }
            let lower = el.symbol().to_ascii_lowercase();
            if el.can_be_aromatic() && rest.starts_with(lower.as_bytes()) && found.is_none() {
                found = Some((el, lower.len(), true));
            }
        }
        let Some((element, len, aromatic)) = found else {
            return Err(syntax(self.pos, "unknown element in bracket atom"));
        };
        self.pos += len;
        let mut atom = Atom::new(element);
        atom.aromatic = aromatic;
        if self.peek() == Some(b'@') {
            return Err(unsupported(self.pos, "chirality"));
        }
        if self.peek() == Some(b'H') {
            self.pos += 1;
            let n = self.number().unwrap_or(1);
            atom.explicit_h_count =
                u8::try_from(n).map_err(|_| syntax(self.pos, "H count too large"))?;
        }
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let unit: i32 = if sign == b'+' { 1 } else { -1 };
            let mut magnitude = 1i32;
            if let Some(n) = self.number() {
                magnitude = n as i32;
            } else {
                while self.peek() == Some(sign) {
                    self.pos += 1;
                    magnitude += 1;
                }
            }
            atom.formal_charge = i8::try_from(unit * magnitude)
                .map_err(|_| syntax(self.pos, "charge out of range"))?;
        }
        match self.peek() {
            Some(b']') => {
                self.pos += 1;
                Ok(ParsedAtom {
                    atom,
                    bracket: true,
                })
            }
            Some(b':') => Err(unsupported(self.pos, "atom class")),
            Some(b'@') => Err(unsupported(self.pos, "chirality")),
            Some(_) => Err(syntax(self.pos, "unexpected character in bracket atom")),
            None => Err(syntax(open, "unclosed bracket atom")),
        }
    }

    fn number(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return None;
        }
        std::str::from_utf8(&self.s[start..self.pos])
            .ok()?
            .parse()
            .ok()
    }

    fn finish(self) -> Result<Molecule, SmilesError> {
        let bonds: Vec<Bond> = self
            .bonds
            .iter()
            .map(|&(a, b, order)| {
                let order =
                    order.unwrap_or_else(|| default_bond(&self.atoms[a].atom, &self.atoms[b].atom));
                Bond::new(a, b, order)
            })
            .collect();
        let mut atoms: Vec<Atom> = self.atoms.iter().map(|p| p.atom).collect();
        let mut bond_sum = vec![0u8; atoms.len()];
        for b in &bonds {
            bond_sum[b.a] += b.order.valence();
            bond_sum[b.b] += b.order.valence();
        }
        for (i, p) in self.atoms.iter().enumerate() {
            if !p.bracket {
                atoms[i].explicit_h_count = implicit_hydrogens(&atoms[i], bond_sum[i]);
            }
        }
        Ok(Molecule::new(atoms, bonds)?)
    }
}

fn default_bond(a: &Atom, b: &Atom) -> BondOrder {
    if a.aromatic && b.aromatic {
        BondOrder::Aromatic
    } else {
        BondOrder::Single
    }
}

/// Hydrogens implied for an unbracketed, uncharged atom: the lowest valence
/// that accommodates the bonds, minus the bonds, minus one more for an
/// aromatic atom's pi contribution; never negative.
fn implicit_hydrogens(atom: &Atom, bond_sum: u8) -> u8 {
    let Some(&v) = atom.element.valences().iter().find(|&&v| v >= bond_sum) else {
        return 0;
    };
    let h = v - bond_sum;
    if atom.aromatic {
        h.saturating_sub(1)
    } else {
        h
    }
}

fn bond_valence_sum(m: &Molecule, atom: usize) -> u8 {
    m.neighbors(atom)
        .iter()
        .map(|&(_, b)| m.bonds()[b].order.valence())
        .sum()
}

/// Canonical atom ranks: equal for no two atoms, and identical for
/// corresponding atoms of isomorphic molecules.
pub(crate) fn canonical_atom_ranks(m: &Molecule) -> Vec<usize> {
    let mut g = LabeledGraph::new();
    for a in m.atoms() {
        g.add_vertex(atom_label_bytes(a));
    }
    for b in m.bonds() {
        g.add_edge(b.a, b.b, b.order.code() as u32);
    }
    canonicalize(&g).position
}

pub(crate) fn atom_label_bytes(a: &Atom) -> Vec<u8> {
    vec![
        a.element.atomic_number(),
        a.formal_charge as u8,
        a.aromatic as u8,
        a.explicit_h_count,
    ]
}

/// Writes a canonical SMILES string: a DFS from the lowest-ranked atom that
/// visits neighbors in rank order.
pub fn write_smiles(m: &Molecule) -> String {
    let rank = canonical_atom_ranks(m);
    let n = m.atom_count();
    let root = (0..n)
        .min_by_key(|&i| rank[i])
        .expect("molecule is non-empty");

    // first pass: spanning tree and ring-closure bonds
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut tree_bond = vec![false; m.bond_count()];
    dfs(
        m,
        root,
        &rank,
        &mut visited,
        &mut order,
        &mut children,
        &mut tree_bond,
    );
    let mut closures: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (i, b) in m.bonds().iter().enumerate() {
        if !tree_bond[i] {
            closures[b.a].push((b.b, i));
            closures[b.b].push((b.a, i));
        }
    }
    let mut visit_pos = vec![0; n];
    for (k, &a) in order.iter().enumerate() {
        visit_pos[a] = k;
    }
    for c in &mut closures {
        c.sort_by_key(|&(other, _)| (visit_pos[other], rank[other]));
    }

    let mut out = String::new();
    let mut open: BTreeMap<usize, u32> = BTreeMap::new();
    let mut free: Vec<u32> = Vec::new();
    let mut next_digit = 1u32;
    let mut written = vec![false; n];
    write_atom_tree(
        m,
        root,
        None,
        &children,
        &closures,
        &mut written,
        &mut open,
        &mut free,
        &mut next_digit,
        &mut out,
    );
    out
}

fn dfs(
    m: &Molecule,
    v: usize,
    rank: &[usize],
    visited: &mut [bool],
    order: &mut Vec<usize>,
    children: &mut [Vec<(usize, usize)>],
    tree_bond: &mut [bool],
) {
    visited[v] = true;
    order.push(v);
    let mut nbrs: Vec<(usize, usize)> = m.neighbors(v).to_vec();
    nbrs.sort_by_key(|&(u, _)| rank[u]);
    for (u, b) in nbrs {
        if !visited[u] {
            tree_bond[b] = true;
            children[v].push((u, b));
            dfs(m, u, rank, visited, order, children, tree_bond);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn write_atom_tree(
    m: &Molecule,
    v: usize,
    via: Option<usize>,
    children: &[Vec<(usize, usize)>],
    closures: &[Vec<(usize, usize)>],
    written: &mut [bool],
    open: &mut BTreeMap<usize, u32>,
    free: &mut Vec<u32>,
    next_digit: &mut u32,
    out: &mut String,
) {
    if let Some(b) = via {
        out.push_str(bond_symbol(m, b));
    }
    out.push_str(&atom_token(m, v));
    written[v] = true;
    for &(other, b) in &closures[v] {
        if written[other] {
            let digit = open.remove(&b).expect("closure opened at partner");
            push_ring_digit(out, digit);
            free.push(digit);
            free.sort_unstable_by(|a, b| b.cmp(a));
        } else {
            let digit = free.pop().unwrap_or_else(|| {
                let d = *next_digit;
                *next_digit += 1;
                d
            });
            out.push_str(bond_symbol(m, b));
            push_ring_digit(out, digit);
            open.insert(b, digit);
        }
    }
    let kids = &children[v];
    for (k, &(u, b)) in kids.iter().enumerate() {
        let branch = k + 1 < kids.len();
        if branch {
            out.push('(');
        }
        write_atom_tree(
            m,
            u,
            Some(b),
            children,
            closures,
            written,
            open,
            free,
            next_digit,
            out,
        );
        if branch {
            out.push(')');
        }
    }
}

fn push_ring_digit(out: &mut String, digit: u32) {
    if digit < 10 {
        out.push(char::from_digit(digit, 10).unwrap());
    } else {
        out.push_str(&format!("%{digit:02}"));
    }
}

fn bond_symbol(m: &Molecule, b: usize) -> &'static str {
    let bond = m.bonds()[b];
    let (x, y) = (m.atoms()[bond.a], m.atoms()[bond.b]);
    match bond.order {
        BondOrder::Single if x.aromatic && y.aromatic => "-",
        BondOrder::Single | BondOrder::Aromatic => "",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
    }
}

fn atom_token(m: &Molecule, v: usize) -> String {
    let a = m.atoms()[v];
    let symbol = if a.aromatic {
        a.element.symbol().to_ascii_lowercase()
    } else {
        a.element.symbol().to_string()
    };
    let bare_ok = a.formal_charge == 0
        && a.element != Element::H
        && (!a.aromatic || a.element.can_be_aromatic())
        && implicit_hydrogens(&a, bond_valence_sum(m, v)) == a.explicit_h_count;
    if bare_ok {
        return symbol;
    }
    let mut s = format!("[{symbol}");
    match a.explicit_h_count {
        0 => {}
        1 => s.push('H'),
        h => s.push_str(&format!("H{h}")),
    }
    match a.formal_charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        c if c > 0 => s.push_str(&format!("+{c}")),
        c => s.push_str(&format!("-{}", -c)),
    }
    s.push(']');
    s
}
