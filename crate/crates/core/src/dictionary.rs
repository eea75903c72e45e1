//! Symmetric dictionaries and the selection oracle.
//!
//! A dictionary is never enumerated in general: the symmetrized canonical
//! basis is implicit and its sup is read off the support of the queried
//! vector. Finite families are stored with both signs materialized.
//!
//! Ties in the sup are broken by the smallest [`AtomId`] so traces are
//! reproducible.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::vector::{Coord, SparseVector};

/// Absolute slack on the weak greedy inequality `ip >= t * sup`.
pub const ADMISSIBILITY_TOL: f64 = 1e-12;

const ZERO_ATOM_TOL: f64 = 1e-12;
const ORTHOGONALITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn flip(self) -> Self {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    pub fn of<S: Scalar>(x: S) -> Self {
        if x < S::zero() {
            Sign::Minus
        } else {
            Sign::Plus
        }
    }

    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Sign::Plus => x,
            Sign::Minus => -x,
        }
    }
}

/// Identifier of a dictionary element.
///
/// The derived order (basis atoms, then dense atoms, then block atoms;
/// index before sign, `+` before `-`) is the tie-breaking order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AtomId {
    /// `±e_i` of the canonical basis.
    Basis { index: u64, sign: Sign },
    /// `±y_k`, the k-th explicitly supplied atom (1-based).
    Dense { k: u32, sign: Sign },
    /// Atom of the `block`-th summand of a direct sum.
    Block { block: u32, inner: Box<AtomId> },
}

impl AtomId {
    pub fn basis(index: u64, sign: Sign) -> Self {
        AtomId::Basis { index, sign }
    }

    pub fn dense(k: u32, sign: Sign) -> Self {
        AtomId::Dense { k, sign }
    }

    pub fn block(block: u32, inner: AtomId) -> Self {
        AtomId::Block {
            block,
            inner: Box::new(inner),
        }
    }

    /// Identifier of the negated atom.
    pub fn negated(&self) -> Self {
        match self {
            AtomId::Basis { index, sign } => AtomId::basis(*index, sign.flip()),
            AtomId::Dense { k, sign } => AtomId::dense(*k, sign.flip()),
            AtomId::Block { block, inner } => AtomId::block(*block, inner.negated()),
        }
    }

    /// Outermost block number, if any.
    pub fn block_index(&self) -> Option<u32> {
        match self {
            AtomId::Block { block, .. } => Some(*block),
            _ => None,
        }
    }
}

impl fmt::Display for AtomId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AtomId::Basis { index, sign } => {
                let s = if *sign == Sign::Plus { '+' } else { '-' };
                write!(f, "{s}e{index}")
            }
            AtomId::Dense {
                k,
                sign: Sign::Plus,
            } => write!(f, "y{k}"),
            AtomId::Dense {
                k,
                sign: Sign::Minus,
            } => write!(f, "-y{k}"),
            AtomId::Block { block, inner } => write!(f, "b{block}:{inner}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed atom id `{0}`")]
pub struct ParseAtomIdError(pub String);

impl FromStr for AtomId {
    type Err = ParseAtomIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseAtomIdError(s.to_string());
        let positive = |x: &str| x.parse::<u64>().ok().filter(|&v| v >= 1);
        if let Some(rest) = s.strip_prefix('b') {
            let (block, inner) = rest.split_once(':').ok_or_else(err)?;
            let block = positive(block)
                .and_then(|b| u32::try_from(b).ok())
                .ok_or_else(err)?;
            let inner = inner.parse::<AtomId>().map_err(|_| err())?;
            return Ok(AtomId::block(block, inner));
        }
        let (sign, body) = match s.as_bytes().first() {
            Some(b'+') => (Some(Sign::Plus), &s[1..]),
            Some(b'-') => (Some(Sign::Minus), &s[1..]),
            _ => (None, s),
        };
        if let Some(idx) = body.strip_prefix('e') {
            let index = positive(idx).ok_or_else(err)?;
            Ok(AtomId::basis(index, sign.ok_or_else(err)?))
        } else if let Some(idx) = body.strip_prefix('y') {
            if sign == Some(Sign::Plus) {
                return Err(err());
            }
            let k = positive(idx)
                .and_then(|k| u32::try_from(k).ok())
                .ok_or_else(err)?;
            Ok(AtomId::dense(k, sign.unwrap_or(Sign::Plus)))
        } else {
            Err(err())
        }
    }
}

impl Serialize for AtomId {
    fn serialize<Z: serde::Serializer>(&self, s: Z) -> Result<Z::Ok, Z::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AtomId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A unit-norm dictionary element together with its identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom<S> {
    pub id: AtomId,
    pub vector: SparseVector<S>,
}

impl<S: Scalar> Atom<S> {
    pub fn negated(&self) -> Self {
        Atom {
            id: self.id.negated(),
            vector: self.vector.neg(),
        }
    }

    fn signed_basis(index: u64, sign: Sign) -> Self {
        Atom {
            id: AtomId::basis(index, sign),
            vector: SparseVector::basis(index).scale(sign.apply(S::one())),
        }
    }
}

/// Outcome of a selection step: the chosen atom, its inner product with the
/// remainder, and the dictionary sup at that remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection<S> {
    pub atom: Atom<S>,
    pub ip: S,
    pub sup: S,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DictionaryError {
    #[error("dictionary needs at least one atom")]
    EmptyAtomList,
    #[error("atom {0} has (numerically) zero norm")]
    ZeroAtom(usize),
    #[error("extra atom {atom} touches coordinate {coord} outside the declared index set")]
    SupportOutsideEPrime { atom: usize, coord: Coord },
    #[error("direct sum needs at least one component")]
    EmptyDirectSum,
    #[error("direct sum components must live on plain coordinates")]
    NestedDirectSum,
    #[error("matrix is not orthogonal: max |QᵀQ - I| = {deviation:e}")]
    NotOrthogonal { deviation: f64 },
    #[error("matrix must be square and nonempty")]
    NotSquare,
    #[error("atom support exceeds the {0}-dimensional range of the matrix")]
    DimensionMismatch(usize),
    #[error("pushforward is only defined for finite or augmented-basis dictionaries")]
    UnsupportedBase,
    #[error("operation needs a dictionary on a finite coordinate range")]
    InfiniteRange,
    #[error("sample count must be positive")]
    InvalidSamples,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error("remainder has empty support")]
    EmptyVector,
    #[error("atom {atom} is not admissible: <f, g> = {ip:e} < t * sup = {threshold:e}")]
    NoAdmissibleAtom {
        atom: AtomId,
        ip: f64,
        threshold: f64,
    },
    #[error("atom {0} is not in the dictionary")]
    UnknownAtom(AtomId),
    #[error("weakening parameter {0} outside (0, 1]")]
    InvalidWeakening(f64),
}

/// Square matrix stored row-major, acting on plain coordinates `1..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<S> {
    n: usize,
    data: Vec<S>,
}

impl<S: Scalar> SquareMatrix<S> {
    pub fn from_rows(rows: Vec<Vec<S>>) -> Result<Self, DictionaryError> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(DictionaryError::NotSquare);
        }
        Ok(Self {
            n,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![S::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = S::one();
        }
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> S {
        self.data[row * self.n + col]
    }

    /// `max |QᵀQ - I|` over all entries.
    pub fn orthogonality_defect(&self) -> S {
        let n = self.n;
        let mut worst = S::zero();
        for i in 0..n {
            for j in 0..n {
                let dot = (0..n).fold(S::zero(), |acc, r| acc + self.get(r, i) * self.get(r, j));
                let target = if i == j { S::one() } else { S::zero() };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Applies the matrix to coordinates `1..=n`; higher plain coordinates
    /// pass through unchanged. Block coordinates are rejected.
    pub fn apply(&self, v: &SparseVector<S>) -> Result<SparseVector<S>, DictionaryError> {
        if v.has_block_coords() {
            return Err(DictionaryError::DimensionMismatch(self.n));
        }
        let mut head = vec![S::zero(); self.n];
        let mut tail = Vec::new();
        for (c, x) in v.iter() {
            let i = c.index() as usize;
            if i <= self.n {
                head[i - 1] = x;
            } else {
                tail.push((c, x));
            }
        }
        let image = (0..self.n).map(|r| {
            let y = (0..self.n).fold(S::zero(), |acc, k| acc + self.get(r, k) * head[k]);
            (Coord::Plain(r as u64 + 1), y)
        });
        Ok(SparseVector::from_entries(image.chain(tail)).expect("coordinates are distinct"))
    }
}

/// Tag of a dictionary constructor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictionaryKind {
    SymmetrizedOnb,
    Finite,
    AugmentedOnb,
    DirectSum,
    Pushforward,
}

#[derive(Debug, Clone, PartialEq)]
enum Repr<S> {
    Onb,
    Finite {
        atoms: Vec<Atom<S>>,
    },
    Augmented {
        eprime: BTreeSet<u64>,
        extra: Vec<Atom<S>>,
    },
    DirectSum {
        components: Vec<Dictionary<S>>,
    },
    /// `atoms` are the images of the finite part; when `onb_tail` is set,
    /// `±e_i` for `i > matrix.dim()` are members as well.
    Pushforward {
        matrix: SquareMatrix<S>,
        atoms: Vec<Atom<S>>,
        onb_tail: bool,
    },
}

/// A symmetric dictionary of unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary<S> {
    repr: Repr<S>,
}

/// Heuristic estimate of `inf_{‖f‖=1} sup_g <f, g>`.
///
/// The minimum over finitely many samples can only overshoot the true
/// infimum, so `value` is an upper bound on the constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoherenceEstimate<S> {
    pub value: S,
    pub samples: u64,
    pub seed: u64,
}

impl<S: Scalar> CoherenceEstimate<S> {
    /// Wraps a constant known in closed form.
    pub fn exact(value: S) -> Self {
        Self {
            value,
            samples: 0,
            seed: 0,
        }
    }
}

/// Keeps the larger value; on equal values keeps the smaller id.
fn improves<S: Scalar>(value: S, id: &AtomId, best: &Option<(S, Atom<S>)>) -> bool {
    match best {
        None => true,
        Some((bv, ba)) => value > *bv || (value == *bv && *id < ba.id),
    }
}

fn normalize<S: Scalar>(
    v: SparseVector<S>,
    position: usize,
) -> Result<SparseVector<S>, DictionaryError> {
    let n = v.norm();
    if n < S::lit(ZERO_ATOM_TOL) {
        return Err(DictionaryError::ZeroAtom(position));
    }
    Ok(if n == S::one() {
        v
    } else {
        v.scale(S::one() / n)
    })
}

fn symmetrize<S: Scalar>(vectors: Vec<SparseVector<S>>) -> Result<Vec<Atom<S>>, DictionaryError> {
    let mut atoms = Vec::with_capacity(2 * vectors.len());
    for (pos, v) in vectors.into_iter().enumerate() {
        let v = normalize(v, pos)?;
        let k = pos as u32 + 1;
        let plus = Atom {
            id: AtomId::dense(k, Sign::Plus),
            vector: v,
        };
        atoms.push(plus.negated());
        atoms.push(plus);
    }
    atoms.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(atoms)
}

impl<S: Scalar> Dictionary<S> {
    /// `{e_i} ∪ {-e_i}` over the whole canonical basis.
    pub fn symmetrized_onb() -> Self {
        Self { repr: Repr::Onb }
    }

    /// Finite dictionary `{±y_k}`; inputs are renormalized to unit norm.
    ///
    /// Completeness is not checked; see [`Dictionary::rank`].
    pub fn finite(atoms: Vec<SparseVector<S>>) -> Result<Self, DictionaryError> {
        if atoms.is_empty() {
            return Err(DictionaryError::EmptyAtomList);
        }
        Ok(Self {
            repr: Repr::Finite {
                atoms: symmetrize(atoms)?,
            },
        })
    }

    /// `E± ∪ Y±` where every `y` is supported inside `eprime`.
    pub fn augmented_onb<I>(extra: Vec<SparseVector<S>>, eprime: I) -> Result<Self, DictionaryError>
    where
        I: IntoIterator<Item = u64>,
    {
        let eprime: BTreeSet<u64> = eprime.into_iter().collect();
        for (pos, y) in extra.iter().enumerate() {
            if let Some((coord, _)) = y.iter().find(|(c, _)| match c {
                Coord::Plain(i) => !eprime.contains(i),
                Coord::Block(..) => true,
            }) {
                return Err(DictionaryError::SupportOutsideEPrime {
                    atom: pos + 1,
                    coord,
                });
            }
        }
        Ok(Self {
            repr: Repr::Augmented {
                eprime,
                extra: symmetrize(extra)?,
            },
        })
    }

    /// Direct sum: component `l` (1-based) acts on block-`l` coordinates.
    pub fn direct_sum(components: Vec<Dictionary<S>>) -> Result<Self, DictionaryError> {
        if components.is_empty() {
            return Err(DictionaryError::EmptyDirectSum);
        }
        for c in &components {
            let nested = match &c.repr {
                Repr::DirectSum { .. } => true,
                Repr::Finite { atoms } | Repr::Pushforward { atoms, .. } => {
                    atoms.iter().any(|a| a.vector.has_block_coords())
                }
                _ => false,
            };
            if nested {
                return Err(DictionaryError::NestedDirectSum);
            }
        }
        Ok(Self {
            repr: Repr::DirectSum { components },
        })
    }

    /// Image of `base` under the orthogonal map `matrix`, which acts on
    /// coordinates `1..=n` and as the identity beyond.
    ///
    /// Atom ids are inherited from `base`, so ties are broken identically on
    /// both sides of the isometry.
    pub fn pushforward(
        base: &Dictionary<S>,
        matrix: SquareMatrix<S>,
    ) -> Result<Self, DictionaryError> {
        let deviation = matrix.orthogonality_defect();
        // Written so that a NaN defect is rejected too.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(deviation <= S::lit(ORTHOGONALITY_TOL)) {
            return Err(DictionaryError::NotOrthogonal {
                deviation: deviation.as_f64(),
            });
        }
        let n = matrix.dim();
        let fits = |v: &SparseVector<S>| {
            !v.has_block_coords() && v.max_plain_index().is_none_or(|i| i as usize <= n)
        };
        let (sources, onb_tail): (Vec<Atom<S>>, bool) = match &base.repr {
            Repr::Finite { atoms } => {
                if !atoms.iter().all(|a| fits(&a.vector)) {
                    return Err(DictionaryError::DimensionMismatch(n));
                }
                (atoms.clone(), false)
            }
            Repr::Onb => (Self::basis_atoms(n), true),
            Repr::Augmented { eprime, extra } => {
                if eprime.iter().any(|&i| i as usize > n) {
                    return Err(DictionaryError::DimensionMismatch(n));
                }
                let mut all = Self::basis_atoms(n);
                all.extend(extra.iter().cloned());
                (all, true)
            }
            Repr::DirectSum { .. } | Repr::Pushforward { .. } => {
                return Err(DictionaryError::UnsupportedBase)
            }
        };
        let mut atoms = sources
            .into_iter()
            .map(|a| {
                Ok(Atom {
                    id: a.id,
                    vector: matrix.apply(&a.vector)?,
                })
            })
            .collect::<Result<Vec<_>, DictionaryError>>()?;
        atoms.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self {
            repr: Repr::Pushforward {
                matrix,
                atoms,
                onb_tail,
            },
        })
    }

    fn basis_atoms(n: usize) -> Vec<Atom<S>> {
        (1..=n as u64)
            .flat_map(|i| {
                [
                    Atom::signed_basis(i, Sign::Plus),
                    Atom::signed_basis(i, Sign::Minus),
                ]
            })
            .collect()
    }

    pub fn kind(&self) -> DictionaryKind {
        match self.repr {
            Repr::Onb => DictionaryKind::SymmetrizedOnb,
            Repr::Finite { .. } => DictionaryKind::Finite,
            Repr::Augmented { .. } => DictionaryKind::AugmentedOnb,
            Repr::DirectSum { .. } => DictionaryKind::DirectSum,
            Repr::Pushforward { .. } => DictionaryKind::Pushforward,
        }
    }

    /// Materialized atoms, when the dictionary is a finite list.
    pub fn atoms(&self) -> Option<&[Atom<S>]> {
        match &self.repr {
            Repr::Finite { atoms } => Some(atoms),
            Repr::Pushforward {
                atoms,
                onb_tail: false,
                ..
            } => Some(atoms),
            _ => None,
        }
    }

    pub fn components(&self) -> Option<&[Dictionary<S>]> {
        match &self.repr {
            Repr::DirectSum { components } => Some(components),
            _ => None,
        }
    }

    /// Realizes the atom with the given id, or `None` if it is not a member.
    pub fn atom(&self, id: &AtomId) -> Option<Atom<S>> {
        let lookup = |atoms: &[Atom<S>]| {
            atoms
                .binary_search_by(|a| a.id.cmp(id))
                .ok()
                .map(|k| atoms[k].clone())
        };
        match (&self.repr, id) {
            (Repr::Onb | Repr::Augmented { .. }, AtomId::Basis { index, sign }) => {
                Some(Atom::signed_basis(*index, *sign))
            }
            (Repr::Augmented { extra, .. }, AtomId::Dense { .. }) => lookup(extra),
            (Repr::Finite { atoms }, _) => lookup(atoms),
            (
                Repr::Pushforward {
                    matrix,
                    atoms,
                    onb_tail,
                },
                _,
            ) => match id {
                AtomId::Basis { index, sign } if *onb_tail && *index as usize > matrix.dim() => {
                    Some(Atom::signed_basis(*index, *sign))
                }
                _ => lookup(atoms),
            },
            (Repr::DirectSum { components }, AtomId::Block { block, inner }) => {
                let comp = components.get((*block as usize).checked_sub(1)?)?;
                let a = comp.atom(inner)?;
                Some(Atom {
                    id: id.clone(),
                    vector: a.vector.into_block(*block)?,
                })
            }
            _ => None,
        }
    }

    /// `sup_{g∈D} <f, g>` with its smallest-id witness.
    ///
    /// Fails with [`SelectionError::EmptyVector`] when `f` has empty support,
    /// where the sup is 0 and no witness is canonical.
    pub fn sup_inner(&self, f: &SparseVector<S>) -> Result<(S, Atom<S>), SelectionError> {
        if f.is_zero() {
            return Err(SelectionError::EmptyVector);
        }
        Ok(self.sup_witness(f))
    }

    /// Sup and witness, defined for every `f` (the zero vector yields 0 and
    /// the smallest atom).
    fn sup_witness(&self, f: &SparseVector<S>) -> (S, Atom<S>) {
        let mut best: Option<(S, Atom<S>)> = None;
        match &self.repr {
            Repr::Onb => Self::onb_candidate(f, 1, &mut best),
            Repr::Finite { atoms } => Self::list_candidates(f, atoms, &mut best),
            Repr::Augmented { extra, .. } => {
                Self::onb_candidate(f, 1, &mut best);
                Self::list_candidates(f, extra, &mut best);
            }
            Repr::Pushforward {
                matrix,
                atoms,
                onb_tail,
            } => {
                Self::list_candidates(f, atoms, &mut best);
                if *onb_tail {
                    Self::onb_candidate(f, matrix.dim() as u64 + 1, &mut best);
                }
            }
            Repr::DirectSum { components } => {
                for (pos, comp) in components.iter().enumerate() {
                    let l = pos as u32 + 1;
                    let (value, inner) = comp.sup_witness(&f.block_component(l));
                    let id = AtomId::block(l, inner.id);
                    if improves(value, &id, &best) {
                        let vector = inner
                            .vector
                            .into_block(l)
                            .expect("component atoms use plain coordinates");
                        best = Some((value, Atom { id, vector }));
                    }
                }
            }
        }
        best.expect("dictionaries are nonempty")
    }

    /// Best `±e_i` over plain indices `i >= from`.
    fn onb_candidate(f: &SparseVector<S>, from: u64, best: &mut Option<(S, Atom<S>)>) {
        let mut top: Option<(S, u64, Sign)> = None;
        for (c, v) in f.iter() {
            if let Coord::Plain(i) = c {
                if i >= from && top.is_none_or(|(m, _, _)| v.abs() > m) {
                    top = Some((v.abs(), i, Sign::of(v)));
                }
            }
        }
        // With no plain coordinates in range every ±e_i gives 0; the
        // smallest id is +e_from.
        let (value, index, sign) = top.unwrap_or((S::zero(), from, Sign::Plus));
        let id = AtomId::basis(index, sign);
        if improves(value, &id, best) {
            *best = Some((value, Atom::signed_basis(index, sign)));
        }
    }

    fn list_candidates(f: &SparseVector<S>, atoms: &[Atom<S>], best: &mut Option<(S, Atom<S>)>) {
        for a in atoms {
            let value = f.inner(&a.vector);
            if improves(value, &a.id, best) {
                *best = Some((value, a.clone()));
            }
        }
    }

    /// Chooses `φ` with `<f, φ> >= t * sup - ADMISSIBILITY_TOL`.
    ///
    /// Without a `scripted` atom the sup witness is returned; otherwise the
    /// scripted atom is realized and validated against the same inequality.
    pub fn select(
        &self,
        f: &SparseVector<S>,
        t: S,
        scripted: Option<&AtomId>,
    ) -> Result<Selection<S>, SelectionError> {
        if !(t > S::zero() && t <= S::one()) {
            return Err(SelectionError::InvalidWeakening(t.as_f64()));
        }
        let (sup, witness) = self.sup_inner(f)?;
        let Some(id) = scripted else {
            return Ok(Selection {
                atom: witness,
                ip: sup,
                sup,
            });
        };
        let atom = self
            .atom(id)
            .ok_or_else(|| SelectionError::UnknownAtom(id.clone()))?;
        let ip = f.inner(&atom.vector);
        let threshold = t * sup;
        if ip < threshold - S::lit(ADMISSIBILITY_TOL) {
            return Err(SelectionError::NoAdmissibleAtom {
                atom: id.clone(),
                ip: ip.as_f64(),
                threshold: threshold.as_f64(),
            });
        }
        Ok(Selection { atom, ip, sup })
    }

    /// Coordinates spanned by the dictionary, when that set is finite.
    pub fn finite_coordinates(&self) -> Option<Vec<Coord>> {
        match &self.repr {
            Repr::Finite { atoms }
            | Repr::Pushforward {
                atoms,
                onb_tail: false,
                ..
            } => {
                let set: BTreeSet<Coord> = atoms
                    .iter()
                    .flat_map(|a| a.vector.iter().map(|(c, _)| c))
                    .collect();
                Some(set.into_iter().collect())
            }
            Repr::DirectSum { components } => {
                let mut out = Vec::new();
                for (pos, comp) in components.iter().enumerate() {
                    let l = pos as u32 + 1;
                    out.extend(
                        comp.finite_coordinates()?
                            .into_iter()
                            .map(|c| Coord::Block(l, c.index())),
                    );
                }
                Some(out)
            }
            _ => None,
        }
    }

    /// Rank of the atom family over its finite coordinate range, by Gaussian
    /// elimination with partial pivoting.
    pub fn rank(&self) -> Option<usize> {
        let coords = self.finite_coordinates()?;
        let atoms: Vec<SparseVector<S>> = match &self.repr {
            Repr::DirectSum { components } => {
                let mut all = Vec::new();
                for (pos, comp) in components.iter().enumerate() {
                    let l = pos as u32 + 1;
                    for a in comp.atoms()? {
                        all.push(a.vector.into_block(l)?);
                    }
                }
                all
            }
            _ => self.atoms()?.iter().map(|a| a.vector.clone()).collect(),
        };
        let mut rows: Vec<Vec<S>> = atoms
            .iter()
            .map(|a| coords.iter().map(|&c| a.get(c)).collect())
            .collect();
        let tol = S::lit(1e-10);
        let mut rank = 0;
        for col in 0..coords.len() {
            let pivot = (rank..rows.len())
                .max_by(|&a, &b| rows[a][col].abs().partial_cmp(&rows[b][col].abs()).unwrap());
            let Some(p) = pivot.filter(|&p| rows[p][col].abs() > tol) else {
                continue;
            };
            rows.swap(rank, p);
            let (top, below) = rows.split_at_mut(rank + 1);
            let pivot_row = &top[rank];
            for row in below {
                let factor = row[col] / pivot_row[col];
                for (x, &y) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                    *x = *x - factor * y;
                }
            }
            rank += 1;
        }
        Some(rank)
    }

    /// Whether the atoms span their finite coordinate range.
    pub fn spans(&self) -> Option<bool> {
        Some(self.rank()? == self.finite_coordinates()?.len())
    }

    /// Sampling estimate of `inf_{‖f‖=1} sup_{g∈D} <f, g>`.
    ///
    /// Draws `samples` directions uniformly on the unit sphere of the
    /// dictionary's coordinate range (normalized Gaussians from a ChaCha8
    /// stream seeded with `seed`) and returns the smallest observed sup.
    pub fn estimate_coherence(
        &self,
        samples: u64,
        seed: u64,
    ) -> Result<CoherenceEstimate<S>, DictionaryError> {
        if samples == 0 {
            return Err(DictionaryError::InvalidSamples);
        }
        let coords = self
            .finite_coordinates()
            .ok_or(DictionaryError::InfiniteRange)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut value = S::infinity();
        let mut drawn = 0;
        let mut buf = vec![0.0f64; coords.len()];
        while drawn < samples {
            for x in buf.iter_mut() {
                *x = StandardNormal.sample(&mut rng);
            }
            let norm = buf.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let f = SparseVector::from_entries(
                coords
                    .iter()
                    .zip(&buf)
                    .map(|(&c, &x)| (c, S::lit(x / norm))),
            )
            .expect("distinct finite coordinates");
            if f.is_zero() {
                continue;
            }
            let (sup, _) = self.sup_witness(&f);
            value = value.min(sup / f.norm());
            drawn += 1;
        }
        Ok(CoherenceEstimate {
            value,
            samples,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type V = SparseVector<f64>;
    type D = Dictionary<f64>;

    fn e(i: u64) -> V {
        V::basis(i)
    }

    fn id(s: &str) -> AtomId {
        s.parse().unwrap()
    }

    fn unit_axes(d: u64) -> D {
        D::finite((1..=d).map(e).collect()).unwrap()
    }

    #[test]
    fn atom_id_strings() {
        for s in ["+e12", "-e3", "y4", "-y4", "b2:+e1", "b1:b3:-y2"] {
            assert_eq!(id(s).to_string(), s);
        }
        for bad in ["e1", "+e0", "+y2", "b0:+e1", "b2", "x1", "", "+e"] {
            assert!(bad.parse::<AtomId>().is_err(), "{bad}");
        }
        assert_eq!(id("-e3").negated(), id("+e3"));
        assert_eq!(id("b2:y1").negated(), id("b2:-y1"));
    }

    #[test]
    fn atom_id_tie_order() {
        let mut ids: Vec<AtomId> = ["b1:+e1", "y1", "-e1", "+e2", "+e1", "-y1"]
            .iter()
            .map(|s| id(s))
            .collect();
        ids.sort();
        let got: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
        assert_eq!(got, ["+e1", "-e1", "+e2", "y1", "-y1", "b1:+e1"]);
    }

    #[test]
    fn onb_sup_examples() {
        let d = D::symmetrized_onb();
        let f = V::from_pairs(&[(1, -0.3), (5, 0.2)]).unwrap();
        let (v, a) = d.sup_inner(&f).unwrap();
        assert_eq!(v, 0.3);
        assert_eq!(a.id, id("-e1"));
        assert_eq!(a.vector, e(1).neg());

        let (v, a) = d.sup_inner(&e(3)).unwrap();
        assert_eq!((v, a.id), (1.0, id("+e3")));

        assert_eq!(d.sup_inner(&V::zero()), Err(SelectionError::EmptyVector));
    }

    #[test]
    fn onb_ties_pick_smallest_index() {
        let d = D::symmetrized_onb();
        let f = V::from_pairs(&[(2, 0.5), (4, -0.5), (7, 0.5)]).unwrap();
        assert_eq!(d.sup_inner(&f).unwrap().1.id, id("+e2"));
    }

    #[test]
    fn onb_is_symmetric() {
        let d = D::symmetrized_onb();
        for i in [1, 2, 17, 1_000_003] {
            for s in [Sign::Plus, Sign::Minus] {
                let a = d.atom(&AtomId::basis(i, s)).unwrap();
                let b = d.atom(&a.id.negated()).unwrap();
                assert_eq!(b.vector, a.vector.neg());
            }
        }
    }

    #[test]
    fn finite_sup_example() {
        let d = unit_axes(2);
        let f = V::from_dense(&[0.6, 0.8]);
        let (v, a) = d.sup_inner(&f).unwrap();
        assert_eq!(v, 0.8);
        assert_eq!(a.vector, e(2));
        assert_eq!(a.id, id("y2"));
    }

    #[test]
    fn finite_symmetrizes_and_normalizes() {
        let d = D::finite(vec![e(1)]).unwrap();
        let atoms = d.atoms().unwrap();
        assert_eq!(atoms.len(), 2);
        assert_eq!(atoms[0].vector, e(1));
        assert_eq!(atoms[1].vector, e(1).neg());

        let d = D::finite(vec![V::from_dense(&[0.6, 0.8])]).unwrap();
        assert!(d
            .atoms()
            .unwrap()
            .iter()
            .any(|a| a.vector == V::from_dense(&[-0.6, -0.8])));

        let d = D::finite(vec![V::from_dense(&[3.0, 4.0])]).unwrap();
        assert!((d.atoms().unwrap()[0].vector.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn finite_rejects_zero_and_empty() {
        assert_eq!(
            D::finite(vec![V::zero()]),
            Err(DictionaryError::ZeroAtom(0))
        );
        assert_eq!(D::finite(vec![]), Err(DictionaryError::EmptyAtomList));
    }

    #[test]
    fn augmented_examples() {
        let s = 1.0 / 2f64.sqrt();
        let y = V::from_dense(&[s, s]);
        let d = D::augmented_onb(vec![y], [1, 2]).unwrap();
        let (v, a) = d.sup_inner(&e(1)).unwrap();
        assert_eq!((v, a.id), (1.0, id("+e1")));
        let (v, a) = d.sup_inner(&V::from_dense(&[1.0, 1.0])).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(a.id, id("y1"));

        assert_eq!(
            D::augmented_onb(vec![e(3)], [1, 2]),
            Err(DictionaryError::SupportOutsideEPrime {
                atom: 1,
                coord: Coord::Plain(3)
            })
        );

        let plain = D::augmented_onb(vec![], [1, 2]).unwrap();
        let f = V::from_pairs(&[(1, -0.3), (5, 0.2)]).unwrap();
        assert_eq!(plain.sup_inner(&f), D::symmetrized_onb().sup_inner(&f));
    }

    #[test]
    fn direct_sum_examples() {
        let d = D::direct_sum(vec![D::symmetrized_onb(), D::symmetrized_onb()]).unwrap();
        let f = V::from_entries([(Coord::Block(1, 1), 0.5), (Coord::Block(2, 1), 0.7)]).unwrap();
        let (v, a) = d.sup_inner(&f).unwrap();
        assert_eq!(v, 0.7);
        assert_eq!(a.id, id("b2:+e1"));
        assert_eq!(a.vector, V::unit(Coord::Block(2, 1)));

        let d = D::direct_sum(vec![unit_axes(1), unit_axes(1)]).unwrap();
        let f = V::from_entries([(Coord::Block(1, 1), 0.3), (Coord::Block(2, 1), -0.4)]).unwrap();
        let (v, a) = d.sup_inner(&f).unwrap();
        assert_eq!(v, 0.4);
        assert_eq!(a.id, id("b2:-y1"));

        let single = D::direct_sum(vec![unit_axes(3)]).unwrap();
        let g = V::from_dense(&[0.1, -0.9, 0.2]);
        let (v1, a1) = single.sup_inner(&g.into_block(1).unwrap()).unwrap();
        let (v0, a0) = unit_axes(3).sup_inner(&g).unwrap();
        assert_eq!(v1, v0);
        assert_eq!(a1.id, AtomId::block(1, a0.id));

        let a = d.atom(&id("b1:y1")).unwrap();
        assert_eq!(d.atom(&id("b1:-y1")).unwrap().vector, a.vector.neg());
        assert!(d.atom(&id("b3:y1")).is_none());
    }

    #[test]
    fn direct_sum_rejects_bad_components() {
        assert_eq!(D::direct_sum(vec![]), Err(DictionaryError::EmptyDirectSum));
        let inner = D::direct_sum(vec![D::symmetrized_onb()]).unwrap();
        assert_eq!(
            D::direct_sum(vec![inner]),
            Err(DictionaryError::NestedDirectSum)
        );
    }

    #[test]
    fn pushforward_examples() {
        let base = unit_axes(2);
        let same = D::pushforward(&base, SquareMatrix::identity(2)).unwrap();
        assert_eq!(same.atoms(), base.atoms());

        let rot = SquareMatrix::from_rows(vec![vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        let d = D::pushforward(&base, rot.clone()).unwrap();
        let vecs: Vec<V> = d
            .atoms()
            .unwrap()
            .iter()
            .map(|a| a.vector.clone())
            .collect();
        for want in [e(2), e(2).neg(), e(1), e(1).neg()] {
            assert!(vecs.contains(&want));
        }
        let f = V::from_dense(&[0.3, -0.5]);
        let (v0, a0) = base.sup_inner(&f).unwrap();
        let (v1, a1) = d.sup_inner(&rot.apply(&f).unwrap()).unwrap();
        assert_eq!(v0, v1);
        assert_eq!(a0.id, a1.id);

        let bad = SquareMatrix::from_rows(vec![vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            D::pushforward(&base, bad),
            Err(DictionaryError::NotOrthogonal { .. })
        ));
        assert_eq!(
            D::pushforward(&unit_axes(3), SquareMatrix::identity(2)),
            Err(DictionaryError::DimensionMismatch(2))
        );
    }

    #[test]
    fn pushforward_of_augmented_keeps_the_tail() {
        let s = 1.0 / 2f64.sqrt();
        let base = D::augmented_onb(vec![V::from_dense(&[s, s])], [1, 2]).unwrap();
        let rot = SquareMatrix::from_rows(vec![vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        let d = D::pushforward(&base, rot.clone()).unwrap();
        let f = V::from_pairs(&[(1, 0.2), (2, -0.1), (9, 0.4)]).unwrap();
        let (v0, a0) = base.sup_inner(&f).unwrap();
        let (v1, a1) = d.sup_inner(&rot.apply(&f).unwrap()).unwrap();
        assert_eq!((v0, &a0.id), (v1, &a1.id));
        assert_eq!(a1.id, id("+e9"));
        assert!(d.atom(&id("-e40")).is_some());
        assert!(d.atoms().is_none());
    }

    #[test]
    fn select_examples() {
        let d = D::symmetrized_onb();
        let s = d
            .select(&V::from_pairs(&[(2, 0.9)]).unwrap(), 1.0, None)
            .unwrap();
        assert_eq!(s.atom.id, id("+e2"));

        let f = V::from_pairs(&[(1, 0.25), (2, 0.5)]).unwrap();
        let s = d.select(&f, 0.5, Some(&id("+e1"))).unwrap();
        assert_eq!((s.ip, s.sup), (0.25, 0.5));

        let f = V::from_pairs(&[(1, 0.1), (2, 0.5)]).unwrap();
        assert!(matches!(
            d.select(&f, 0.5, Some(&id("+e1"))),
            Err(SelectionError::NoAdmissibleAtom { .. })
        ));
        assert!(matches!(
            d.select(&f, 0.0, None),
            Err(SelectionError::InvalidWeakening(_))
        ));
        assert!(matches!(
            d.select(&f, 1.0, Some(&id("y1"))),
            Err(SelectionError::UnknownAtom(_))
        ));
        assert_eq!(
            d.select(&V::zero(), 1.0, None),
            Err(SelectionError::EmptyVector)
        );
    }

    #[test]
    fn coherence_examples() {
        let d = unit_axes(1);
        assert_eq!(d.estimate_coherence(100, 3).unwrap().value, 1.0);

        let d = unit_axes(2);
        let a = d.estimate_coherence(1, 42).unwrap();
        let b = d.estimate_coherence(1, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.value >= 0.5f64.sqrt() && a.value <= 1.0);

        assert_eq!(
            D::symmetrized_onb().estimate_coherence(10, 0),
            Err(DictionaryError::InfiniteRange)
        );
        assert_eq!(
            d.estimate_coherence(0, 0),
            Err(DictionaryError::InvalidSamples)
        );
    }

    #[test]
    fn rank_utility() {
        assert_eq!(unit_axes(3).spans(), Some(true));
        let degenerate = D::finite(vec![
            e(1),
            V::from_dense(&[1.0, 1.0, 0.0]),
            e(3),
            V::from_dense(&[1.0, 1.0, 1.0]),
        ])
        .unwrap();
        assert_eq!(degenerate.rank(), Some(3));
        let flat = D::finite(vec![V::from_dense(&[1.0, 1.0]), V::from_dense(&[2.0, 2.0])]).unwrap();
        assert_eq!(flat.rank(), Some(1));
        assert_eq!(flat.spans(), Some(false));
        assert_eq!(D::symmetrized_onb().rank(), None);
    }
}
