//! Finitely supported vectors in a real Hilbert space.
//!
//! Every element is stored through its coordinates in a fixed canonical
//! orthonormal basis. Coordinates of direct sums carry a block number in
//! addition to the index inside the block.

use std::cmp::Ordering;
use std::fmt;

use serde::de::{Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Identifier of a canonical basis coordinate.
///
/// Ordering is `Plain` before `Block`, and blocks are ordered by block
/// number first, then by inner index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coord {
    Plain(u64),
    Block(u32, u64),
}

impl Coord {
    /// Inner index, ignoring any block number.
    pub fn index(self) -> u64 {
        match self {
            Coord::Plain(i) | Coord::Block(_, i) => i,
        }
    }

    pub fn block(self) -> Option<u32> {
        match self {
            Coord::Plain(_) => None,
            Coord::Block(l, _) => Some(l),
        }
    }

    fn is_valid(self) -> bool {
        match self {
            Coord::Plain(i) => i >= 1,
            Coord::Block(l, i) => l >= 1 && i >= 1,
        }
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coord::Plain(i) => write!(f, "{i}"),
            Coord::Block(l, i) => write!(f, "{l}:{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VectorError {
    #[error("coordinate {0} is not a positive index")]
    InvalidIndex(Coord),
    #[error("coordinate {0} appears more than once")]
    DuplicateIndex(Coord),
    #[error("coordinate {0} holds a non-finite value")]
    NonFinite(Coord),
}

/// A finitely supported vector in canonical form.
///
/// Entries are sorted by coordinate, indices are distinct and no stored
/// value is exactly zero. Zero removal uses literal equality so that an
/// exact annihilation leaves an empty support.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector<S> {
    entries: Vec<(Coord, S)>,
}

impl<S: Scalar> SparseVector<S> {
    pub fn zero() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    /// Builds a canonical vector from arbitrary `(coordinate, value)` pairs.
    pub fn from_entries<I>(entries: I) -> Result<Self, VectorError>
    where
        I: IntoIterator<Item = (Coord, S)>,
    {
        let mut entries: Vec<(Coord, S)> = entries.into_iter().collect();
        for &(c, v) in &entries {
            if !c.is_valid() {
                return Err(VectorError::InvalidIndex(c));
            }
            if !v.is_finite() {
                return Err(VectorError::NonFinite(c));
            }
        }
        entries.sort_by_key(|a| a.0);
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(VectorError::DuplicateIndex(w[0].0));
        }
        entries.retain(|&(_, v)| v != S::zero());
        Ok(Self { entries })
    }

    /// Convenience constructor over plain 1-based indices.
    pub fn from_pairs(pairs: &[(u64, S)]) -> Result<Self, VectorError> {
        Self::from_entries(pairs.iter().map(|&(i, v)| (Coord::Plain(i), v)))
    }

    /// Vector `(x_1, ..., x_n)` on plain coordinates `1..=n`.
    pub fn from_dense(values: &[S]) -> Self {
        let entries = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != S::zero())
            .map(|(i, &v)| (Coord::Plain(i as u64 + 1), v))
            .collect();
        Self { entries }
    }

    /// Canonical basis vector `e_i`.
    pub fn basis(i: u64) -> Self {
        Self::unit(Coord::Plain(i))
    }

    pub fn unit(c: Coord) -> Self {
        assert!(c.is_valid(), "basis coordinate must be positive");
        Self {
            entries: vec![(c, S::one())],
        }
    }

    pub fn entries(&self) -> &[(Coord, S)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (Coord, S)> + '_ {
        self.entries.iter().copied()
    }

    /// Number of stored (nonzero) coordinates.
    pub fn support_len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, c: Coord) -> S {
        self.entries
            .binary_search_by(|e| e.0.cmp(&c))
            .map(|k| self.entries[k].1)
            .unwrap_or_else(|_| S::zero())
    }

    pub fn inner(&self, other: &Self) -> S {
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j) = (0, 0);
        let mut acc = S::zero();
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                Ordering::Less => i += 1,
                Ordering::Greater => j += 1,
                Ordering::Equal => {
                    acc = acc + a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn norm_sq(&self) -> S {
        self.entries
            .iter()
            .fold(S::zero(), |acc, &(_, v)| acc + v * v)
    }

    pub fn norm(&self) -> S {
        self.norm_sq().sqrt()
    }

    /// `self - c * other`, re-canonicalized.
    pub fn subtract_scaled(&self, c: S, other: &Self) -> Self {
        self.combine(other, |x, y| x - c * y)
    }

    /// `self + c * other`, re-canonicalized.
    pub fn add_scaled(&self, c: S, other: &Self) -> Self {
        self.combine(other, |x, y| x + c * y)
    }

    pub fn scale(&self, c: S) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|&(k, v)| (k, v * c))
            .filter(|&(_, v)| v != S::zero())
            .collect();
        Self { entries }
    }

    pub fn neg(&self) -> Self {
        Self {
            entries: self.entries.iter().map(|&(k, v)| (k, -v)).collect(),
        }
    }

    /// Componentwise merge; entries absent on one side read as zero.
    fn combine(&self, other: &Self, op: impl Fn(S, S) -> S) -> Self {
        let (a, b) = (&self.entries, &other.entries);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        let zero = S::zero();
        loop {
            let (k, v) = match (a.get(i), b.get(j)) {
                (None, None) => break,
                (Some(&(ka, va)), None) => {
                    i += 1;
                    (ka, op(va, zero))
                }
                (None, Some(&(kb, vb))) => {
                    j += 1;
                    (kb, op(zero, vb))
                }
                (Some(&(ka, va)), Some(&(kb, vb))) => match ka.cmp(&kb) {
                    Ordering::Less => {
                        i += 1;
                        (ka, op(va, zero))
                    }
                    Ordering::Greater => {
                        j += 1;
                        (kb, op(zero, vb))
                    }
                    Ordering::Equal => {
                        i += 1;
                        j += 1;
                        (ka, op(va, vb))
                    }
                },
            };
            if v != zero {
                out.push((k, v));
            }
        }
        Self { entries: out }
    }

    /// Component of `self` in block `l`, re-indexed onto plain coordinates.
    pub fn block_component(&self, l: u32) -> Self {
        let entries = self
            .entries
            .iter()
            .filter_map(|&(c, v)| match c {
                Coord::Block(b, i) if b == l => Some((Coord::Plain(i), v)),
                _ => None,
            })
            .collect();
        Self { entries }
    }

    /// Embeds a plain-coordinate vector as block `l` of a direct sum.
    ///
    /// Returns `None` when `self` already carries block coordinates.
    pub fn into_block(&self, l: u32) -> Option<Self> {
        let entries = self
            .entries
            .iter()
            .map(|&(c, v)| match c {
                Coord::Plain(i) => Some((Coord::Block(l, i), v)),
                Coord::Block(..) => None,
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Self { entries })
    }

    /// Largest plain index in the support, if any.
    pub fn max_plain_index(&self) -> Option<u64> {
        self.entries
            .iter()
            .filter_map(|(c, _)| match c {
                Coord::Plain(i) => Some(*i),
                _ => None,
            })
            .max()
    }

    pub fn has_block_coords(&self) -> bool {
        self.entries.iter().any(|(c, _)| c.block().is_some())
    }

    /// Converts every value into another scalar type.
    pub fn cast<T: Scalar>(&self) -> SparseVector<T> {
        SparseVector {
            entries: self
                .entries
                .iter()
                .map(|&(c, v)| (c, T::lit(v.as_f64())))
                .filter(|&(_, v)| v != T::zero())
                .collect(),
        }
    }
}

impl<S: Scalar> Serialize for SparseVector<S> {
    fn serialize<Z: Serializer>(&self, serializer: Z) -> Result<Z::Ok, Z::Error> {
        let mut seq = serializer.serialize_seq(Some(self.entries.len()))?;
        for &(c, v) in &self.entries {
            seq.serialize_element(&(c, v.as_f64()))?;
        }
        seq.end()
    }
}

impl<'de, S: Scalar> Deserialize<'de> for SparseVector<S> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor<S>(std::marker::PhantomData<S>);

        impl<'de, S: Scalar> Visitor<'de> for EntriesVisitor<S> {
            type Value = SparseVector<S>;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a list of [index, value] pairs")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Self::Value, A::Error> {
                let mut entries = Vec::new();
                while let Some((c, v)) = seq.next_element::<(Coord, f64)>()? {
                    entries.push((c, S::lit(v)));
                }
                SparseVector::from_entries(entries).map_err(serde::de::Error::custom)
            }
        }

        deserializer.deserialize_seq(EntriesVisitor(std::marker::PhantomData))
    }
}
