//! Logical all-to-all Ising models and their lattice-gauge (LHZ) representation.
//!
//! Conventions used throughout the crate:
//!
//! * bit value `0` is the σ^z eigenvalue `+1`, bit value `1` is `−1`;
//! * the logical energy is `E(x) = −Σ_{i<j} J_ij s_i s_j + h s_1`, so a
//!   positive field `h` favours strings whose first bit is `1`;
//! * physical qubit `(i, j)` carries the relative orientation of logical
//!   spins `i` and `j` (bit `0` when aligned), so its σ^z value is `s_i s_j`;
//! * physical qubits are numbered row by row through the LHZ triangle: all
//!   pairs `(i, i+1)`, then all pairs `(i, i+2)`, and so on;
//! * plaquette `(i, j)` with `j ≥ i+1`, `j+1 < N` couples qubits
//!   `(i, j)`, `(i+1, j+1)`, `(i, j+1)` and, when `i+1 < j`, `(i+1, j)`.
//!   Boundary plaquettes have three members; their fourth spin is held
//!   fixed at `+1`.
//!
//! For `N = 4` this yields the constraint memberships
//! `{1,2,4}`, `{2,3,5}`, `{2,4,5,6}` (one-based).

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest logical size accepted by the brute-force ground-state check.
pub const MAX_VERIFY_BITS: usize = 24;

/// Relative tolerance used when comparing classical energies.
const ENERGY_TOL: f64 = 1e-9;

/// A classical bit string, stored one bit per element.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitString(Vec<u8>);

impl BitString {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::ShapeMismatch("bit string must not be empty".into()));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Parse(format!("bit value {b} is not 0 or 1")));
        }
        Ok(Self(bits))
    }

    /// Builds the `len`-bit string whose bit `i` is bit `i` of `index`.
    pub fn from_index(index: u64, len: usize) -> Self {
        Self((0..len).map(|i| ((index >> i) & 1) as u8).collect())
    }

    /// Basis index with bit `i` of the string at bit position `i`.
    pub fn to_index(&self) -> u64 {
        debug_assert!(self.0.len() <= 64);
        self.0
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &b)| acc | ((b as u64) << i))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn bit(&self, i: usize) -> u8 {
        self.0[i]
    }

    /// σ^z eigenvalue of bit `i`.
    pub fn spin(&self, i: usize) -> f64 {
        spin_of(self.0[i])
    }

    pub fn complement(&self) -> Self {
        Self(self.0.iter().map(|b| 1 - b).collect())
    }

    pub fn flipped(&self, indices: &[usize]) -> Self {
        let mut out = self.clone();
        for &i in indices {
            out.0[i] ^= 1;
        }
        out
    }
}

#[inline]
pub(crate) fn spin_of(bit: u8) -> f64 {
    if bit == 0 {
        1.0
    } else {
        -1.0
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|{self}⟩")
    }
}

impl FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::Parse(format!("invalid bit character {other:?} in {s:?}"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(bits)
    }
}

impl Serialize for BitString {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Number of positions in which two strings differ.
pub fn hamming(a: &BitString, b: &BitString) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "hamming distance of strings with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.0.iter().zip(&b.0).filter(|(x, y)| x != y).count())
}

/// Positions in which two equal-length strings differ, ascending.
pub fn differing_positions(a: &BitString, b: &BitString) -> Vec<usize> {
    a.0.iter()
        .zip(&b.0)
        .enumerate()
        .filter(|(_, (x, y))| x != y)
        .map(|(i, _)| i)
        .collect()
}

/// All-to-all Ising model on `N` logical spins.
#[derive(Clone, Debug, PartialEq)]
pub struct LogicalModel {
    couplings: DMatrix<f64>,
    field: f64,
}

impl LogicalModel {
    pub fn new(couplings: DMatrix<f64>, field: f64) -> Result<Self> {
        let n = couplings.nrows();
        if n < 2 || couplings.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "couplings must be square with N >= 2, got {}x{}",
                couplings.nrows(),
                couplings.ncols()
            )));
        }
        for i in 0..n {
            if couplings[(i, i)] != 0.0 {
                return Err(Error::ShapeMismatch(format!("nonzero diagonal coupling at {i}")));
            }
            for j in 0..i {
                if (couplings[(i, j)] - couplings[(j, i)]).abs() > 1e-12 {
                    return Err(Error::ShapeMismatch(format!(
                        "couplings not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { couplings, field })
    }

    /// Builds a model from the upper-triangle entries `(i, j, J_ij)` (zero-based).
    pub fn from_pairs(n: usize, entries: &[(usize, usize, f64)], field: f64) -> Result<Self> {
        let mut j = DMatrix::zeros(n, n);
        for &(a, b, v) in entries {
            if a >= n || b >= n || a == b {
                return Err(Error::ShapeMismatch(format!("invalid coupling index ({a}, {b})")));
            }
            j[(a, b)] = v;
            j[(b, a)] = v;
        }
        Self::new(j, field)
    }

    pub fn n(&self) -> usize {
        self.couplings.nrows()
    }

    pub fn couplings(&self) -> &DMatrix<f64> {
        &self.couplings
    }

    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.couplings[(i, j)]
    }

    pub fn field(&self) -> f64 {
        self.field
    }

    pub fn energy(&self, x: &BitString) -> f64 {
        let n = self.n();
        let mut e = 0.0;
        for i in 0..n {
            let si = x.spin(i);
            for j in (i + 1)..n {
                e -= self.couplings[(i, j)] * si * x.spin(j);
            }
        }
        e + self.field * x.spin(0)
    }
}

fn check_inputs(bitstrings: &[BitString]) -> Result<usize> {
    let first = bitstrings
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no bit strings given".into()))?;
    let n = first.len();
    let mut seen = HashSet::new();
    for b in bitstrings {
        if b.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "mixed bit-string lengths {} and {}",
                n,
                b.len()
            )));
        }
        if !seen.insert(b.clone()) {
            return Err(Error::DuplicateInput(b.to_string()));
        }
    }
    Ok(n)
}

/// Hebbian encoding `J = Σ_n ξ_n ξ_nᵀ` (zero diagonal), rescaled to `max|J_ij| = 1`.
///
/// The stored patterns are not guaranteed to be the degenerate ground states;
/// run [`verify_degenerate_ground`] on the result.
pub fn encode_hopfield(bitstrings: &[BitString]) -> Result<LogicalModel> {
    let n = check_inputs(bitstrings)?;
    if n < 2 {
        return Err(Error::ShapeMismatch("need at least two logical bits".into()));
    }
    let mut j = DMatrix::zeros(n, n);
    for x in bitstrings {
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    j[(a, b)] += x.spin(a) * x.spin(b);
                }
            }
        }
    }
    let scale = j.amax();
    if scale > 0.0 {
        j /= scale;
    }
    LogicalModel::new(j, 0.0)
}

/// Outcome of the exhaustive ground-state scan.
#[derive(Clone, Debug, Serialize)]
pub struct VerificationReport {
    pub is_valid: bool,
    pub ground_energy: f64,
    /// All minimizers in ascending index order.
    pub minimizers: Vec<BitString>,
    /// True when the field vanishes and minimizers were compared up to global flips.
    pub z2_symmetric: bool,
    /// Energy of every basis string, indexed by [`BitString::to_index`].
    pub spectrum: Vec<f64>,
}

/// Brute-force check that `bitstrings` are exactly the minimizers of `model`.
///
/// When the field is zero every energy level is Z2 symmetric, and the
/// comparison is made against the given strings closed under complement.
pub fn verify_degenerate_ground(
    model: &LogicalModel,
    bitstrings: &[BitString],
) -> Result<VerificationReport> {
    let n = model.n();
    if n > MAX_VERIFY_BITS {
        return Err(Error::TooLarge {
            what: "logical model",
            size: n,
            limit: MAX_VERIFY_BITS,
        });
    }
    check_inputs(bitstrings)?;
    if bitstrings[0].len() != n {
        return Err(Error::ShapeMismatch(format!(
            "bit strings of length {} for a model with N = {}",
            bitstrings[0].len(),
            n
        )));
    }
    let spectrum: Vec<f64> = (0..1u64 << n)
        .map(|idx| model.energy(&BitString::from_index(idx, n)))
        .collect();
    let ground_energy = spectrum.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = ENERGY_TOL * ground_energy.abs().max(1.0);
    let minimizers: Vec<BitString> = spectrum
        .iter()
        .enumerate()
        .filter(|(_, &e)| e <= ground_energy + tol)
        .map(|(idx, _)| BitString::from_index(idx as u64, n))
        .collect();

    let z2_symmetric = model.field() == 0.0;
    let mut expected: HashSet<BitString> = bitstrings.iter().cloned().collect();
    if z2_symmetric {
        expected.extend(bitstrings.iter().map(BitString::complement));
    }
    let found: HashSet<BitString> = minimizers.iter().cloned().collect();

    Ok(VerificationReport {
        is_valid: found == expected,
        ground_energy,
        minimizers,
        z2_symmetric,
        spectrum,
    })
}

/// Logical pairs in physical-qubit order for `n` logical spins.
pub fn lhz_pairs(n: usize) -> Vec<(usize, usize)> {
    (1..n)
        .flat_map(|r| (0..n - r).map(move |i| (i, i + r)))
        .collect()
}

/// Index of the physical qubit carrying logical pair `(i, j)`, `i < j`.
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    let r = j - i;
    // rows 1..r-1 hold n-1, n-2, ..., n-r+1 qubits
    let offset: usize = (1..r).map(|q| n - q).sum();
    offset + i
}

/// Member qubits of every plaquette constraint, in constraint order.
pub fn lhz_plaquettes(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for r in 1..n.saturating_sub(1) {
        for i in 0..(n - 1 - r) {
            let j = i + r;
            let mut members = vec![
                pair_index(n, i, j),
                pair_index(n, i + 1, j + 1),
                pair_index(n, i, j + 1),
            ];
            if i + 1 < j {
                members.push(pair_index(n, i + 1, j));
            }
            members.sort_unstable();
            out.push(members);
        }
    }
    out
}

/// Relative orientation of every logical pair, in physical-qubit order.
pub fn logical_to_physical(x: &BitString) -> BitString {
    let n = x.len();
    let bits = lhz_pairs(n)
        .into_iter()
        .map(|(i, j)| x.bit(i) ^ x.bit(j))
        .collect();
    BitString(bits)
}

/// One parity constraint: a σ^z product over its member qubits with strength `C_p`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Constraint {
    pub members: Vec<usize>,
    pub strength: f64,
}

/// Lattice-gauge model on `K = N(N−1)/2` physical qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct LhzModel {
    n_logical: usize,
    pairs: Vec<(usize, usize)>,
    local_fields: Vec<f64>,
    constraints: Vec<Constraint>,
    member_sets: Vec<Vec<usize>>,
    ground_strings: Vec<BitString>,
}

impl LhzModel {
    /// Standard LHZ layout for `n_logical` spins with the given physical
    /// local fields, constraint strengths and ground strings.
    pub fn new(
        n_logical: usize,
        local_fields: Vec<f64>,
        strengths: &[f64],
        ground_strings: Vec<BitString>,
    ) -> Result<Self> {
        if n_logical < 2 {
            return Err(Error::ShapeMismatch("need at least two logical spins".into()));
        }
        let pairs = lhz_pairs(n_logical);
        let k = pairs.len();
        if k > 64 {
            return Err(Error::TooLarge {
                what: "physical qubit count",
                size: k,
                limit: 64,
            });
        }
        if local_fields.len() != k {
            return Err(Error::ShapeMismatch(format!(
                "{} local fields for K = {k}",
                local_fields.len()
            )));
        }
        let plaquettes = lhz_plaquettes(n_logical);
        if strengths.len() != plaquettes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} constraint strengths for {} constraints",
                strengths.len(),
                plaquettes.len()
            )));
        }
        if ground_strings.is_empty() {
            return Err(Error::ShapeMismatch("no ground strings".into()));
        }
        if let Some(z) = ground_strings.iter().find(|z| z.len() != k) {
            return Err(Error::ShapeMismatch(format!("ground string {z} has length != K = {k}")));
        }
        let constraints: Vec<Constraint> = plaquettes
            .into_iter()
            .zip(strengths)
            .map(|(members, &strength)| Constraint { members, strength })
            .collect();
        let mut member_sets = vec![Vec::new(); k];
        for (p, c) in constraints.iter().enumerate() {
            for &q in &c.members {
                member_sets[q].push(p);
            }
        }
        Ok(Self {
            n_logical,
            pairs,
            local_fields,
            constraints,
            member_sets,
            ground_strings,
        })
    }

    /// Copy of this model with new constraint strengths.
    pub fn with_strengths(&self, strengths: &[f64]) -> Result<Self> {
        if strengths.len() != self.constraints.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} constraint strengths for {} constraints",
                strengths.len(),
                self.constraints.len()
            )));
        }
        let mut out = self.clone();
        for (c, &s) in out.constraints.iter_mut().zip(strengths) {
            c.strength = s;
        }
        Ok(out)
    }

    pub fn n_logical(&self) -> usize {
        self.n_logical
    }

    /// Physical qubit count `K`.
    pub fn k(&self) -> usize {
        self.pairs.len()
    }

    pub fn m(&self) -> usize {
        self.ground_strings.len()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn local_fields(&self) -> &[f64] {
        &self.local_fields
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn strengths(&self) -> Vec<f64> {
        self.constraints.iter().map(|c| c.strength).collect()
    }

    /// `S_i`: indices of the constraints that involve qubit `i`.
    pub fn member_sets(&self) -> &[Vec<usize>] {
        &self.member_sets
    }

    pub fn ground_strings(&self) -> &[BitString] {
        &self.ground_strings
    }

    /// Classical energy at unit problem weight of the basis state `index`:
    /// `−Σ_i J_i s_i − Σ_p C_p Π_{q∈p} s_q`.
    pub fn energy_of_index(&self, index: u64) -> f64 {
        let sign = |q: usize| if (index >> q) & 1 == 0 { 1.0 } else { -1.0 };
        let field: f64 = self
            .local_fields
            .iter()
            .enumerate()
            .map(|(q, j)| j * sign(q))
            .sum();
        let plaquettes: f64 = self
            .constraints
            .iter()
            .map(|c| {
                let parity = c.members.iter().fold(0u64, |acc, &q| acc ^ ((index >> q) & 1));
                if parity == 0 {
                    c.strength
                } else {
                    -c.strength
                }
            })
            .sum();
        -field - plaquettes
    }

    pub fn energy(&self, z: &BitString) -> f64 {
        self.energy_of_index(z.to_index())
    }

    /// True when every constraint product equals `+1` on `z`.
    pub fn satisfies_constraints(&self, z: &BitString) -> bool {
        self.constraints
            .iter()
            .all(|c| c.members.iter().fold(0u8, |acc, &q| acc ^ z.bit(q)) == 0)
    }

    /// Brute-force check that the ground strings are exactly the minimizers
    /// of `H_0` at the current constraint strengths.
    pub fn ground_manifold_is_exact(&self) -> Result<bool> {
        const LIMIT: usize = 20;
        let k = self.k();
        if k > LIMIT {
            return Err(Error::TooLarge {
                what: "physical qubit count",
                size: k,
                limit: LIMIT,
            });
        }
        let energies: Vec<f64> = (0..1u64 << k).map(|i| self.energy_of_index(i)).collect();
        let min = energies.iter().copied().fold(f64::INFINITY, f64::min);
        let tol = ENERGY_TOL * min.abs().max(1.0);
        let found: HashSet<u64> = energies
            .iter()
            .enumerate()
            .filter(|(_, &e)| e <= min + tol)
            .map(|(i, _)| i as u64)
            .collect();
        let expected: HashSet<u64> = self.ground_strings.iter().map(BitString::to_index).collect();
        Ok(found == expected)
    }
}

/// Maps a verified logical model to the LHZ representation.
///
/// Physical local fields are `J_k = J_ij` for the pair carried by qubit `k`;
/// the logical field is dropped. Z2-conjugate strings collapse onto one
/// physical string, which is kept once, at its first occurrence. All
/// constraint strengths start at `initial_strength`.
pub fn map_to_lhz(
    model: &LogicalModel,
    bitstrings: &[BitString],
    initial_strength: f64,
) -> Result<LhzModel> {
    let report = verify_degenerate_ground(model, bitstrings)?;
    if !report.is_valid {
        return Err(Error::NotVerified);
    }
    let n = model.n();
    let pairs = lhz_pairs(n);
    let fields = pairs.iter().map(|&(i, j)| model.coupling(i, j)).collect();
    let mut ground = Vec::new();
    for x in bitstrings {
        let z = logical_to_physical(x);
        if !ground.contains(&z) {
            ground.push(z);
        }
    }
    let n_constraints = lhz_plaquettes(n).len();
    LhzModel::new(n, fields, &vec![initial_strength; n_constraints], ground)
}

/// Four-spin instance with `J_12 = J_13 = J_34 = 1`, `J_23 = −1`, field 1,
/// storing `1111`, `1100` and `1011` (in that order).
pub fn four_spin_example() -> (LogicalModel, Vec<BitString>) {
    let model =
        LogicalModel::from_pairs(4, &[(0, 1, 1.0), (0, 2, 1.0), (2, 3, 1.0), (1, 2, -1.0)], 1.0)
            .expect("valid couplings");
    let strings = ["1111", "1100", "1011"]
        .iter()
        .map(|s| s.parse().expect("valid bit string"))
        .collect();
    (model, strings)
}

/// LHZ image of [`four_spin_example`] with the given constraint strengths.
pub fn four_spin_lhz(strengths: &[f64]) -> Result<LhzModel> {
    let (model, strings) = four_spin_example();
    map_to_lhz(&model, &strings, 1.0)?.with_strengths(strengths)
}
