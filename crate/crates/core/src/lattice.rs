//! Geometry of `Z^d`: points, norms, boxes, general finite regions,
//! coarse-graining indices and lattice-animal enumeration.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::ops::{Add, Deref, Sub};

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// A site of `Z^d`, `d >= 2`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatticePoint(SmallVec<[i64; 4]>);

impl LatticePoint {
    /// Panics if fewer than two coordinates are given.
    pub fn new(coords: impl IntoIterator<Item = i64>) -> Self {
        let v: SmallVec<[i64; 4]> = coords.into_iter().collect();
        assert!(v.len() >= 2, "lattice points need d >= 2, got d = {}", v.len());
        LatticePoint(v)
    }

    pub fn try_new(coords: &[i64]) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::param("d", format!("need d >= 2, got {}", coords.len())));
        }
        Ok(LatticePoint(coords.iter().copied().collect()))
    }

    pub fn origin(d: usize) -> Self {
        Self::new(std::iter::repeat_n(0, d))
    }

    /// `sign * e_axis`.
    pub fn unit(d: usize, axis: usize, sign: i64) -> Self {
        let mut p = Self::origin(d);
        p.0[axis] = sign;
        p
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn is_origin(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn scale(&self, k: i64) -> Self {
        LatticePoint(self.0.iter().map(|&c| c * k).collect())
    }

    pub fn l1(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).sum()
    }

    pub fn linf(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn l2(&self) -> f64 {
        self.0.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt()
    }

    pub fn norms(&self) -> Norms {
        Norms { l1: self.l1(), l2: self.l2(), linf: self.linf() }
    }

    fn with_coord(&self, axis: usize, delta: i64) -> Self {
        let mut p = self.clone();
        p.0[axis] += delta;
        p
    }
}

impl Deref for LatticePoint {
    type Target = [i64];
    fn deref(&self) -> &[i64] {
        &self.0
    }
}

impl fmt::Debug for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Add for &LatticePoint {
    type Output = LatticePoint;
    fn add(self, rhs: &LatticePoint) -> LatticePoint {
        debug_assert_eq!(self.dim(), rhs.dim());
        LatticePoint(self.0.iter().zip(rhs.0.iter()).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &LatticePoint {
    type Output = LatticePoint;
    fn sub(self, rhs: &LatticePoint) -> LatticePoint {
        debug_assert_eq!(self.dim(), rhs.dim());
        LatticePoint(self.0.iter().zip(rhs.0.iter()).map(|(a, b)| a - b).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub l1: i64,
    pub l2: f64,
    pub linf: i64,
}

pub fn norms(p: &LatticePoint) -> Norms {
    p.norms()
}

/// The `2d` nearest neighbours in the order `+x1, -x1, +x2, -x2, ...`.
pub fn neighbors(p: &LatticePoint) -> Vec<LatticePoint> {
    let mut out = Vec::with_capacity(2 * p.dim());
    for axis in 0..p.dim() {
        out.push(p.with_coord(axis, 1));
        out.push(p.with_coord(axis, -1));
    }
    out
}

/// Axis-aligned box `[lo, hi)` (inclusive lower, exclusive upper corner).
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoxRegion {
    lo: LatticePoint,
    hi: LatticePoint,
}

impl BoxRegion {
    pub fn new(lo: LatticePoint, hi: LatticePoint) -> Result<Self> {
        if lo.dim() != hi.dim() {
            return Err(Error::param("hi", "corner dimensions differ"));
        }
        if lo.iter().zip(hi.iter()).any(|(a, b)| a >= b) {
            return Err(Error::param("hi", format!("need lo < hi componentwise, got {lo} / {hi}")));
        }
        Ok(BoxRegion { lo, hi })
    }

    /// The cube `[-r, r]^d`.
    pub fn centered(d: usize, r: i64) -> Self {
        assert!(r >= 0);
        BoxRegion {
            lo: LatticePoint::new(std::iter::repeat_n(-r, d)),
            hi: LatticePoint::new(std::iter::repeat_n(r + 1, d)),
        }
    }

    /// The cube `[c - r, c + r]^d` around `c`.
    pub fn cube_around(c: &LatticePoint, r: i64) -> Self {
        assert!(r >= 0);
        BoxRegion {
            lo: LatticePoint::new(c.iter().map(|&x| x - r)),
            hi: LatticePoint::new(c.iter().map(|&x| x + r + 1)),
        }
    }

    pub fn lo(&self) -> &LatticePoint {
        &self.lo
    }

    pub fn hi(&self) -> &LatticePoint {
        &self.hi
    }

    pub fn dim(&self) -> usize {
        self.lo.dim()
    }

    pub fn extents(&self) -> SmallVec<[usize; 4]> {
        self.lo.iter().zip(self.hi.iter()).map(|(a, b)| (b - a) as usize).collect()
    }

    pub fn site_count(&self) -> usize {
        self.extents().iter().product()
    }

    pub fn contains(&self, p: &LatticePoint) -> bool {
        p.dim() == self.dim() && p.iter().zip(self.lo.iter().zip(self.hi.iter())).all(|(x, (a, b))| a <= x && x < b)
    }

    pub fn contains_box(&self, other: &BoxRegion) -> bool {
        other.dim() == self.dim() && (0..self.dim()).all(|i| self.lo[i] <= other.lo[i] && other.hi[i] <= self.hi[i])
    }

    /// Row-major index (last axis fastest).
    pub fn index_of(&self, p: &LatticePoint) -> Option<usize> {
        if !self.contains(p) {
            return None;
        }
        let mut idx = 0usize;
        for i in 0..self.dim() {
            let ext = (self.hi[i] - self.lo[i]) as usize;
            idx = idx * ext + (p[i] - self.lo[i]) as usize;
        }
        Some(idx)
    }

    pub fn point_at(&self, mut idx: usize) -> LatticePoint {
        let d = self.dim();
        let mut c: SmallVec<[i64; 4]> = SmallVec::from_elem(0, d);
        for i in (0..d).rev() {
            let ext = (self.hi[i] - self.lo[i]) as usize;
            c[i] = self.lo[i] + (idx % ext) as i64;
            idx /= ext;
        }
        LatticePoint(c)
    }

    /// Row-major strides.
    pub fn strides(&self) -> SmallVec<[usize; 4]> {
        let ext = self.extents();
        let mut s: SmallVec<[usize; 4]> = SmallVec::from_elem(1, ext.len());
        for i in (0..ext.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * ext[i + 1];
        }
        s
    }

    pub fn points(&self) -> impl Iterator<Item = LatticePoint> + '_ {
        (0..self.site_count()).map(move |i| self.point_at(i))
    }
}

impl fmt::Debug for BoxRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{} .. {})", self.lo, self.hi)
    }
}

/// A finite set of sites: a bounding box plus an optional membership mask.
///
/// Plain boxes carry no mask. Rasterized rotated blocks, ℓ∞ balls clipped to
/// something else and hand-built site sets use the mask.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    bbox: BoxRegion,
    mask: Option<Vec<bool>>,
}

impl Region {
    pub fn from_box(bbox: BoxRegion) -> Self {
        Region { bbox, mask: None }
    }

    pub fn from_sites(sites: &[LatticePoint]) -> Result<Self> {
        let first = sites.first().ok_or_else(|| Error::param("sites", "empty site set"))?;
        let d = first.dim();
        let mut lo: Vec<i64> = first.to_vec();
        let mut hi: Vec<i64> = first.to_vec();
        for s in sites {
            if s.dim() != d {
                return Err(Error::param("sites", "mixed dimensions"));
            }
            for i in 0..d {
                lo[i] = lo[i].min(s[i]);
                hi[i] = hi[i].max(s[i]);
            }
        }
        let bbox = BoxRegion::new(LatticePoint::new(lo), LatticePoint::new(hi.into_iter().map(|h| h + 1)))?;
        let mut mask = vec![false; bbox.site_count()];
        for s in sites {
            mask[bbox.index_of(s).expect("inside bounding box")] = true;
        }
        Ok(Region { bbox, mask: Some(mask) })
    }

    /// Sites whose ℓ∞ distance to `center` is at most `radius`.
    pub fn linf_ball(center: &LatticePoint, radius: i64) -> Self {
        Region::from_box(BoxRegion::cube_around(center, radius))
    }

    pub fn bbox(&self) -> &BoxRegion {
        &self.bbox
    }

    pub fn dim(&self) -> usize {
        self.bbox.dim()
    }

    pub fn is_box(&self) -> bool {
        self.mask.is_none()
    }

    pub fn contains(&self, p: &LatticePoint) -> bool {
        match self.bbox.index_of(p) {
            None => false,
            Some(i) => self.mask.as_ref().is_none_or(|m| m[i]),
        }
    }

    pub(crate) fn contains_index(&self, bbox_idx: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[bbox_idx])
    }

    pub fn site_count(&self) -> usize {
        match &self.mask {
            None => self.bbox.site_count(),
            Some(m) => m.iter().filter(|&&b| b).count(),
        }
    }

    pub fn sites(&self) -> impl Iterator<Item = LatticePoint> + '_ {
        (0..self.bbox.site_count()).filter(move |&i| self.contains_index(i)).map(move |i| self.bbox.point_at(i))
    }

    /// True when every site of `self` is also in `other`.
    pub fn is_subset_of(&self, other: &Region) -> bool {
        self.sites().all(|p| other.contains(&p))
    }

    /// Rasterized block `R_xi([m|xi|_2 - N, n|xi|_2 + N] x [-N, N]^{d-1}) ∩ Z^d`.
    ///
    /// `R_xi` is the orthogonal map whose first column is `xi/|xi|_2` and whose
    /// remaining columns come from Gram-Schmidt on `e_1, ..., e_d`. Because the
    /// transverse interval is symmetric, the orientation of those columns does
    /// not change the site set.
    pub fn block(xi: &LatticePoint, m: i64, n: i64, big_n: i64) -> Result<Self> {
        if xi.is_origin() {
            return Err(Error::param("xi", "direction must be nonzero"));
        }
        if !(n > m && m >= 0) {
            return Err(Error::param("n", format!("need n > m >= 0, got m = {m}, n = {n}")));
        }
        if big_n < 0 {
            return Err(Error::param("N", "must be nonnegative"));
        }
        let d = xi.dim();
        let basis = block_rotation(xi);
        let norm = xi.l2();
        let lo1 = m as f64 * norm - big_n as f64;
        let hi1 = n as f64 * norm + big_n as f64;
        let nn = big_n as f64;
        // Every block point has |coordinate| <= max(|lo1|, |hi1|) + sqrt(d) N.
        let reach = (lo1.abs().max(hi1.abs()) + (d as f64).sqrt() * nn).ceil() as i64 + 1;
        let bbox = BoxRegion::centered(d, reach);
        let eps = 1e-9;
        let mut mask = vec![false; bbox.site_count()];
        let mut any = false;
        for (i, slot) in mask.iter_mut().enumerate() {
            let p = bbox.point_at(i);
            let y: SmallVec<[f64; 4]> =
                basis.iter().map(|col| col.iter().zip(p.iter()).map(|(c, &x)| c * x as f64).sum()).collect();
            let inside = y[0] >= lo1 - eps && y[0] <= hi1 + eps && y[1..].iter().all(|&t| t.abs() <= nn + eps);
            *slot = inside;
            any |= inside;
        }
        if !any {
            return Err(Error::Domain("block contains no lattice site".into()));
        }
        // Shrink the bounding box to the occupied part.
        let sites: Vec<LatticePoint> =
            mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| bbox.point_at(i)).collect();
        let region = Region::from_sites(&sites)?;
        if region.site_count() == region.bbox.site_count() {
            return Ok(Region::from_box(region.bbox));
        }
        Ok(region)
    }
}

impl fmt::Debug for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.mask {
            None => write!(f, "Region{:?}", self.bbox),
            Some(_) => write!(f, "Region{:?} ({} sites)", self.bbox, self.site_count()),
        }
    }
}

/// Orthonormal columns `R_xi e_1, ..., R_xi e_d`, with `R_xi e_1 = xi/|xi|_2`.
pub fn block_rotation(xi: &LatticePoint) -> Vec<Vec<f64>> {
    let d = xi.dim();
    let norm = xi.l2();
    let mut basis: Vec<Vec<f64>> = vec![xi.iter().map(|&c| c as f64 / norm).collect()];
    for axis in 0..d {
        if basis.len() == d {
            break;
        }
        let mut v: Vec<f64> = (0..d).map(|i| if i == axis { 1.0 } else { 0.0 }).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len > 1e-9 {
            basis.push(v.into_iter().map(|x| x / len).collect());
        }
    }
    basis
}

/// Coarse-graining partitions of `Z^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoarseScheme {
    /// `B(q) = Mq + [0, M)^d`.
    Boxes(i64),
    /// `C(q) = lq + [-l/2, l/2)^d`, `l` even.
    Cubes(i64),
}

/// Index `q` of the coarse cell containing `p`.
pub fn coarse_index(p: &LatticePoint, scheme: CoarseScheme) -> Result<LatticePoint> {
    match scheme {
        CoarseScheme::Boxes(m) => {
            if m < 1 {
                return Err(Error::param("M", format!("need M >= 1, got {m}")));
            }
            Ok(LatticePoint::new(p.iter().map(|&x| x.div_euclid(m))))
        }
        CoarseScheme::Cubes(l) => {
            if l < 2 || l % 2 != 0 {
                return Err(Error::param("l", format!("need even l >= 2, got {l}")));
            }
            Ok(LatticePoint::new(p.iter().map(|&x| (x + l / 2).div_euclid(l))))
        }
    }
}

/// Adjacency used for lattice animals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    /// `|v1 - v2|_1 = 1`.
    L1,
    /// `|v1 - v2|_inf = 1`.
    Linf,
}

impl Connectivity {
    /// Offsets of the adjacency relation in `d` dimensions.
    pub fn offsets(self, d: usize) -> Vec<LatticePoint> {
        match self {
            Connectivity::L1 => neighbors(&LatticePoint::origin(d)),
            Connectivity::Linf => {
                let total = 3usize.pow(d as u32);
                (0..total)
                    .map(|mut k| {
                        LatticePoint::new((0..d).map(|_| {
                            let c = (k % 3) as i64 - 1;
                            k /= 3;
                            c
                        }))
                    })
                    .filter(|p| !p.is_origin())
                    .collect()
            }
        }
    }

    pub fn adjacent(self, a: &LatticePoint, b: &LatticePoint) -> bool {
        let diff = a - b;
        match self {
            Connectivity::L1 => diff.l1() == 1,
            Connectivity::Linf => diff.linf() == 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnimalSpec {
    pub dimension: usize,
    pub size: usize,
    pub connectivity: Connectivity,
    /// Enumerate every placement containing the origin instead of one
    /// representative per translation class.
    pub anchored: bool,
}

/// Largest animal size enumerated per dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnimalCaps {
    pub d2: usize,
    pub d3: usize,
    pub other: usize,
}

impl Default for AnimalCaps {
    fn default() -> Self {
        AnimalCaps { d2: 8, d3: 5, other: 4 }
    }
}

impl AnimalCaps {
    pub fn cap(&self, d: usize) -> usize {
        match d {
            2 => self.d2,
            3 => self.d3,
            _ => self.other,
        }
    }
}

/// A lattice animal as a sorted list of sites.
pub type Animal = Vec<LatticePoint>;

#[derive(Debug, Clone)]
pub struct AnimalEnumeration {
    pub spec: AnimalSpec,
    pub animals: Vec<Animal>,
}

impl AnimalEnumeration {
    pub fn count(&self) -> usize {
        self.animals.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Animal> {
        self.animals.iter()
    }
}

/// Translate so that the lexicographically smallest site is the origin, then sort.
pub fn canonical_animal(cells: &[LatticePoint]) -> Animal {
    let min = cells.iter().min().expect("nonempty animal").clone();
    let mut out: Animal = cells.iter().map(|c| c - &min).collect();
    out.sort();
    out
}

fn lex_positive(p: &LatticePoint) -> bool {
    p.iter().find(|&&c| c != 0).is_some_and(|&c| c > 0)
}

/// Enumerate every animal described by `spec` exactly once.
///
/// Unanchored animals are fixed (translation-class) animals in canonical
/// form. Anchored animals are all translates containing the origin.
pub fn enumerate_animals(spec: &AnimalSpec, caps: &AnimalCaps) -> Result<AnimalEnumeration> {
    let mut animals = Vec::new();
    for_each_animal(spec, caps, |a| animals.push(a.to_vec()))?;
    Ok(AnimalEnumeration { spec: *spec, animals })
}

/// Visitor form of [`enumerate_animals`]; avoids collecting when only counts
/// or per-animal statistics are needed.
pub fn for_each_animal(spec: &AnimalSpec, caps: &AnimalCaps, mut visit: impl FnMut(&[LatticePoint])) -> Result<usize> {
    if spec.dimension < 2 {
        return Err(Error::param("dimension", "need d >= 2"));
    }
    if spec.size == 0 {
        return Err(Error::param("size", "need size >= 1"));
    }
    let cap = caps.cap(spec.dimension);
    if spec.size > cap {
        return Err(Error::Capacity(format!(
            "animal size {} exceeds the cap {} for d = {}",
            spec.size, cap, spec.dimension
        )));
    }
    let offsets = spec.connectivity.offsets(spec.dimension);
    let origin = LatticePoint::origin(spec.dimension);
    let mut count = 0usize;
    let mut current = Vec::with_capacity(spec.size);
    let mut reached: HashSet<LatticePoint> = HashSet::new();
    reached.insert(origin.clone());
    let mut on_fixed = |cells: &[LatticePoint]| {
        if spec.anchored {
            for c in cells {
                let mut shifted: Animal = cells.iter().map(|x| x - c).collect();
                shifted.sort();
                visit(&shifted);
                count += 1;
            }
        } else {
            let mut sorted = cells.to_vec();
            sorted.sort();
            visit(&sorted);
            count += 1;
        }
    };
    redelmeier(vec![origin], &mut current, &mut reached, &offsets, spec.size, &mut on_fixed);
    Ok(count)
}

// Redelmeier's algorithm: grow animals whose lexicographic minimum is the
// origin; every fixed animal is produced exactly once.
fn redelmeier(
    mut untried: Vec<LatticePoint>,
    current: &mut Vec<LatticePoint>,
    reached: &mut HashSet<LatticePoint>,
    offsets: &[LatticePoint],
    size: usize,
    emit: &mut dyn FnMut(&[LatticePoint]),
) {
    while let Some(cell) = untried.pop() {
        current.push(cell.clone());
        if current.len() == size {
            emit(current);
        } else {
            let mut fresh = Vec::new();
            for off in offsets {
                let nb = &cell + off;
                if lex_positive(&nb) && !reached.contains(&nb) {
                    fresh.push(nb);
                }
            }
            for nb in &fresh {
                reached.insert(nb.clone());
            }
            let mut next = untried.clone();
            next.extend(fresh.iter().cloned());
            redelmeier(next, current, reached, offsets, size, emit);
            for nb in &fresh {
                reached.remove(nb);
            }
        }
        current.pop();
    }
}

/// Brute-force flood-fill count of fixed animals; kept alongside the
/// enumerator as an independent reference.
pub fn count_fixed_animals_bruteforce(d: usize, size: usize, conn: Connectivity) -> usize {
    let offsets = conn.offsets(d);
    let mut layer: BTreeSet<Animal> = BTreeSet::new();
    layer.insert(vec![LatticePoint::origin(d)]);
    for _ in 1..size {
        let mut next = BTreeSet::new();
        for animal in &layer {
            for cell in animal {
                for off in &offsets {
                    let nb = cell + off;
                    if animal.contains(&nb) {
                        continue;
                    }
                    let mut grown = animal.clone();
                    grown.push(nb);
                    next.insert(canonical_animal(&grown));
                }
            }
        }
        layer = next;
    }
    layer.len()
}

/// True when `cells` is connected under `conn`.
pub fn is_connected(cells: &[LatticePoint], conn: Connectivity) -> bool {
    if cells.is_empty() {
        return true;
    }
    let set: HashSet<&LatticePoint> = cells.iter().collect();
    let mut seen: HashSet<LatticePoint> = HashSet::new();
    let mut stack = vec![cells[0].clone()];
    seen.insert(cells[0].clone());
    let offsets = conn.offsets(cells[0].dim());
    while let Some(c) = stack.pop() {
        for off in &offsets {
            let nb = &c + off;
            if set.contains(&nb) && seen.insert(nb.clone()) {
                stack.push(nb);
            }
        }
    }
    seen.len() == set.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: &[i64]) -> LatticePoint {
        LatticePoint::new(c.iter().copied())
    }

    #[test]
    fn neighbor_order_in_2d() {
        let n = neighbors(&p(&[0, 0]));
        assert_eq!(n, vec![p(&[1, 0]), p(&[-1, 0]), p(&[0, 1]), p(&[0, -1])]);
    }

    #[test]
    fn neighbors_in_3d_are_at_unit_distance() {
        let c = p(&[1, 1, 1]);
        let n = neighbors(&c);
        assert_eq!(n.len(), 6);
        assert!(n.iter().all(|q| (q - &c).l1() == 1));
        assert!(neighbors(&n[0]).contains(&c));
    }

    #[test]
    fn norms_examples() {
        assert_eq!(p(&[3, -4]).norms(), Norms { l1: 7, l2: 5.0, linf: 4 });
        assert_eq!(p(&[0, 0]).norms(), Norms { l1: 0, l2: 0.0, linf: 0 });
        let ones = LatticePoint::new(std::iter::repeat_n(1, 5));
        let n = ones.norms();
        assert_eq!((n.l1, n.linf), (5, 1));
        assert!((n.l2 - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    #[should_panic]
    fn one_dimensional_points_are_rejected() {
        let _ = LatticePoint::new([1]);
    }

    #[test]
    fn box_indexing_round_trips() {
        let b = BoxRegion::new(p(&[-2, -1, 0]), p(&[1, 3, 2])).unwrap();
        assert_eq!(b.site_count(), 3 * 4 * 2);
        for i in 0..b.site_count() {
            assert_eq!(b.index_of(&b.point_at(i)), Some(i));
        }
        assert_eq!(b.index_of(&p(&[1, 0, 0])), None);
        assert!(BoxRegion::new(p(&[0, 0]), p(&[0, 1])).is_err());
    }

    #[test]
    fn coarse_index_examples() {
        let b4 = CoarseScheme::Boxes(4);
        assert_eq!(coarse_index(&p(&[0, 0]), b4).unwrap(), p(&[0, 0]));
        assert_eq!(coarse_index(&p(&[-1, 0]), b4).unwrap(), p(&[-1, 0]));
        let c4 = CoarseScheme::Cubes(4);
        assert_eq!(coarse_index(&p(&[1, 1]), c4).unwrap(), p(&[0, 0]));
        assert_eq!(coarse_index(&p(&[2, 0]), c4).unwrap(), p(&[1, 0]));
        assert_eq!(coarse_index(&p(&[-2, -3]), c4).unwrap(), p(&[0, -1]));
        assert!(coarse_index(&p(&[0, 0]), CoarseScheme::Boxes(0)).is_err());
        assert!(coarse_index(&p(&[0, 0]), CoarseScheme::Cubes(3)).is_err());
    }

    #[test]
    fn coarse_index_partitions_a_box() {
        for scheme in [CoarseScheme::Boxes(3), CoarseScheme::Cubes(4)] {
            let b = BoxRegion::centered(2, 7);
            let mut cells: std::collections::HashMap<LatticePoint, usize> = Default::default();
            for x in b.points() {
                let q = coarse_index(&x, scheme).unwrap();
                // membership check against the cell definition
                match scheme {
                    CoarseScheme::Boxes(m) => {
                        assert!(x.iter().zip(q.iter()).all(|(&xi, &qi)| (0..m).contains(&(xi - m * qi))))
                    }
                    CoarseScheme::Cubes(l) => {
                        assert!(x.iter().zip(q.iter()).all(|(&xi, &qi)| (-l / 2..l / 2).contains(&(xi - l * qi))))
                    }
                }
                *cells.entry(q).or_default() += 1;
            }
            assert_eq!(cells.values().sum::<usize>(), b.site_count());
        }
    }

    #[test]
    fn anchored_domino_count() {
        let spec = AnimalSpec { dimension: 2, size: 2, connectivity: Connectivity::L1, anchored: true };
        assert_eq!(enumerate_animals(&spec, &AnimalCaps::default()).unwrap().count(), 4);
    }

    #[test]
    fn single_cell() {
        let spec = AnimalSpec { dimension: 2, size: 1, connectivity: Connectivity::L1, anchored: false };
        let e = enumerate_animals(&spec, &AnimalCaps::default()).unwrap();
        assert_eq!(e.count(), 1);
        assert_eq!(e.animals[0], vec![p(&[0, 0])]);
    }

    #[test]
    fn cap_is_enforced() {
        let spec = AnimalSpec { dimension: 3, size: 6, connectivity: Connectivity::L1, anchored: false };
        assert!(matches!(enumerate_animals(&spec, &AnimalCaps::default()), Err(Error::Capacity(_))));
        let caps = AnimalCaps { d3: 6, ..Default::default() };
        assert!(enumerate_animals(&spec, &caps).is_ok());
    }

    #[test]
    fn enumerated_animals_are_canonical_connected_and_distinct() {
        for conn in [Connectivity::L1, Connectivity::Linf] {
            let spec = AnimalSpec { dimension: 2, size: 4, connectivity: conn, anchored: false };
            let e = enumerate_animals(&spec, &AnimalCaps::default()).unwrap();
            let set: HashSet<&Animal> = e.animals.iter().collect();
            assert_eq!(set.len(), e.count());
            for a in &e.animals {
                assert_eq!(*a, canonical_animal(a));
                assert!(is_connected(a, conn));
            }
        }
    }

    #[test]
    fn linf_counts_match_bruteforce() {
        for size in 1..=4 {
            let spec = AnimalSpec { dimension: 2, size, connectivity: Connectivity::Linf, anchored: false };
            let n = enumerate_animals(&spec, &AnimalCaps::default()).unwrap().count();
            assert_eq!(n, count_fixed_animals_bruteforce(2, size, Connectivity::Linf));
        }
    }

    #[test]
    fn axis_block_is_a_box() {
        let r = Region::block(&p(&[1, 0]), 0, 3, 5).unwrap();
        assert!(r.is_box());
        assert_eq!(r.bbox(), &BoxRegion::new(p(&[-5, -5]), p(&[9, 6])).unwrap());
    }

    #[test]
    fn blocks_tile() {
        // P_{0,2v} = P_{0,v} ∪ P_{v,2v}
        for xi in [p(&[1, 0]), p(&[1, 1]), p(&[2, 1])] {
            let whole = Region::block(&xi, 0, 4, 2).unwrap();
            let a = Region::block(&xi, 0, 2, 2).unwrap();
            let b = Region::block(&xi, 2, 4, 2).unwrap();
            assert!(a.is_subset_of(&whole) && b.is_subset_of(&whole));
            assert!(whole.sites().all(|s| a.contains(&s) || b.contains(&s)));
            for k in 0..=4 {
                assert!(whole.contains(&xi.scale(k)));
            }
        }
    }

    #[test]
    fn rotation_is_orthonormal() {
        let r = block_rotation(&p(&[2, -1, 3]));
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = r[i].iter().zip(&r[j]).map(|(a, b)| a * b).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
