//! Killed-walk operators on a lattice region and their solvers.
//!
//! All systems have the form `K u = f` with
//! `K = diag(e^omega) - (1/2d) A`, `A` the adjacency of the unknown sites.
//! `K` is a symmetric nonsingular M-matrix. The direct path keeps track of
//! the row excess `(e^omega - 1) + #(non-unknown neighbours)/2d` so every
//! pivot is a sum of nonnegative terms (Grassmann-Taksar-Heyman).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::lattice::Region;

pub(crate) const NONE: u32 = u32::MAX;

/// Potentials above this are clamped when forming `e^omega`.
pub(crate) const OMEGA_CAP: f64 = 700.0;

/// Largest number of stored band entries for a direct factorization.
pub(crate) const BAND_ENTRY_CAP: usize = 30_000_000;

pub(crate) struct Assembly {
    pub d: usize,
    /// Bounding-box index of each unknown, in elimination order.
    pub sites: Vec<usize>,
    /// Bounding-box index to unknown index.
    pub slot: Vec<u32>,
    /// Per unknown, `2d` neighbour unknowns (`NONE` when not an unknown).
    pub nbr: Vec<u32>,
    /// Per unknown, `2d` neighbour bounding-box indices (`NONE` outside the box).
    pub nbr_site: Vec<u32>,
    pub omega: Vec<f64>,
    pub diag: Vec<f64>,
    pub excess: Vec<f64>,
    pub band: usize,
}

impl Assembly {
    pub fn n(&self) -> usize {
        self.sites.len()
    }

    pub fn hop(&self) -> f64 {
        1.0 / (2 * self.d) as f64
    }

    pub fn unknown_at(&self, bbox_idx: usize) -> Option<usize> {
        match self.slot[bbox_idx] {
            NONE => None,
            u => Some(u as usize),
        }
    }

    /// `f_i = (1/2d) * #{neighbours j of i with pred(j)}` over bounding-box indices.
    pub fn coupling(&self, pred: impl Fn(Option<usize>) -> bool) -> Vec<f64> {
        let k = 2 * self.d;
        let h = self.hop();
        (0..self.n())
            .map(|i| {
                let c = self.nbr_site[i * k..(i + 1) * k]
                    .iter()
                    .filter(|&&s| pred((s != NONE).then_some(s as usize)))
                    .count();
                c as f64 * h
            })
            .collect()
    }

    /// `f_i = (1/2d) * #{neighbours of i that are not unknowns}`.
    pub fn exit_coupling(&self) -> Vec<f64> {
        let k = 2 * self.d;
        let h = self.hop();
        (0..self.n()).map(|i| self.nbr[i * k..(i + 1) * k].iter().filter(|&&j| j == NONE).count() as f64 * h).collect()
    }

    /// `max_i |u_i - (f_i + (1/2d) sum_j u_j) / K_ii|`.
    pub fn fixed_point_residual(&self, u: &[f64], f: &[f64]) -> f64 {
        let k = 2 * self.d;
        let h = self.hop();
        let mut r = 0.0f64;
        for i in 0..self.n() {
            let s: f64 = self.nbr[i * k..(i + 1) * k].iter().filter(|&&j| j != NONE).map(|&j| u[j as usize]).sum();
            r = r.max((u[i] - (f[i] + h * s) / self.diag[i]).abs());
        }
        r
    }

    pub fn direct_feasible(&self) -> bool {
        self.n() <= 200_000 && self.n().saturating_mul(self.band.max(1)) <= BAND_ENTRY_CAP
    }
}

/// Assemble `K` over `region` minus the sites flagged by `absorbing`.
///
/// Unknowns are numbered row-major with the longest axis slowest, which keeps
/// the bandwidth at the product of the shorter extents.
pub(crate) fn assemble(
    region: &Region,
    absorbing: impl Fn(usize) -> bool,
    potential: impl Fn(usize) -> Result<f64>,
    fault: Option<(usize, f64)>,
) -> Result<Assembly> {
    let bbox = region.bbox();
    let d = bbox.dim();
    let ext = bbox.extents();
    let strides = bbox.strides();
    let total = bbox.site_count();

    let mut axes: Vec<usize> = (0..d).collect();
    axes.sort_by(|&a, &b| ext[b].cmp(&ext[a]).then(a.cmp(&b)));
    let mut pstride = vec![0usize; d];
    let mut acc = 1usize;
    for &a in axes.iter().rev() {
        pstride[a] = acc;
        acc *= ext[a];
    }
    let mut order = vec![0usize; total];
    for idx in 0..total {
        let key: usize = (0..d).map(|a| (idx / strides[a]) % ext[a] * pstride[a]).sum();
        order[key] = idx;
    }

    let mut slot = vec![NONE; total];
    let mut sites = Vec::new();
    for &idx in &order {
        if region.contains_index(idx) && !absorbing(idx) {
            slot[idx] = sites.len() as u32;
            sites.push(idx);
        }
    }
    let n = sites.len();
    if n >= NONE as usize {
        return Err(Error::Capacity(format!("{n} unknowns exceed the index width")));
    }

    let k = 2 * d;
    let h = 1.0 / k as f64;
    let mut nbr = Vec::with_capacity(n * k);
    let mut nbr_site = Vec::with_capacity(n * k);
    let mut band = 0usize;
    let mut omega = Vec::with_capacity(n);
    let mut diag = Vec::with_capacity(n);
    let mut excess = Vec::with_capacity(n);
    for (u, &idx) in sites.iter().enumerate() {
        let mut outside = 0usize;
        for a in 0..d {
            let c = (idx / strides[a]) % ext[a];
            for (ok, s) in [(c + 1 < ext[a], idx.wrapping_add(strides[a])), (c >= 1, idx.wrapping_sub(strides[a]))] {
                if ok {
                    nbr_site.push(s as u32);
                    let j = slot[s];
                    nbr.push(j);
                    if j == NONE {
                        outside += 1;
                    } else {
                        band = band.max((j as usize).abs_diff(u));
                    }
                } else {
                    nbr_site.push(NONE);
                    nbr.push(NONE);
                    outside += 1;
                }
            }
        }
        let w = potential(idx)?;
        let wc = w.min(OMEGA_CAP);
        omega.push(w);
        diag.push(wc.exp());
        excess.push(wc.exp_m1() + outside as f64 * h);
    }
    if let Some((fidx, factor)) = fault {
        if let Some(u) = (slot.get(fidx).copied()).filter(|&u| u != NONE) {
            let u = u as usize;
            let old = diag[u];
            diag[u] *= factor;
            excess[u] += diag[u] - old;
        }
    }
    Ok(Assembly { d, sites, slot, nbr, nbr_site, omega, diag, excess, band })
}

/// Banded `L D L^T` factorization of an assembled operator.
pub(crate) struct BandFactor {
    n: usize,
    b: usize,
    /// Row `i` holds `L[i][i-b..i]`.
    l: Vec<f64>,
    piv: Vec<f64>,
}

impl BandFactor {
    pub fn new(asm: &Assembly) -> Result<Self> {
        if !asm.direct_feasible() {
            return Err(Error::Capacity(format!(
                "direct factorization of {} unknowns with bandwidth {} exceeds the memory cap",
                asm.n(),
                asm.band
            )));
        }
        let n = asm.n();
        let b = asm.band;
        let k2 = 2 * asm.d;
        let h = asm.hop();
        let mut l = vec![0.0f64; n * b];
        for i in 0..n {
            for &j in &asm.nbr[i * k2..(i + 1) * k2] {
                if j != NONE && (j as usize) < i {
                    let j = j as usize;
                    l[i * b + j + b - i] = -h;
                }
            }
        }
        let mut excess = asm.excess.clone();
        let mut piv = vec![0.0f64; n];
        let mut w: Vec<f64> = Vec::with_capacity(b);
        for k in 0..n {
            let hi = (k + b).min(n.saturating_sub(1));
            w.clear();
            for i in k + 1..=hi {
                w.push(l[i * b + k + b - i]);
            }
            let off: f64 = w.iter().map(|v| -v).sum();
            let dk = excess[k] + off;
            if !(dk.is_finite() && dk > 0.0) {
                return Err(Error::Solver(format!("nonpositive pivot {dk} at unknown {k}")));
            }
            piv[k] = dk;
            let ek = excess[k];
            for (t, i) in (k + 1..=hi).enumerate() {
                let li = w[t] / dk;
                if li == 0.0 {
                    continue;
                }
                l[i * b + k + b - i] = li;
                excess[i] -= li * ek;
                let row = &mut l[i * b..(i + 1) * b];
                for (s, j) in (k + 1..i).enumerate() {
                    row[j + b - i] -= li * w[s];
                }
            }
        }
        Ok(BandFactor { n, b, l, piv })
    }

    #[inline]
    fn lower(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.b + j + self.b - i]
    }

    pub fn solve(&self, f: &[f64]) -> Vec<f64> {
        let (n, b) = (self.n, self.b);
        let mut y = f.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for j in i.saturating_sub(b)..i {
                s -= self.lower(i, j) * y[j];
            }
            y[i] = s;
        }
        for i in 0..n {
            y[i] /= self.piv[i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..=(i + b).min(n - 1) {
                s -= self.lower(k, i) * y[k];
            }
            y[i] = s;
        }
        y
    }

    /// Diagonal of `K^{-1}` by selected inversion inside the band.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        let (n, b) = (self.n, self.b);
        let w = b + 1;
        // z[max * w + (max - min)] = Z[max][min]
        let mut z = vec![0.0f64; n * w];
        let mut col: Vec<f64> = Vec::with_capacity(b);
        for i in (0..n).rev() {
            let hi = (i + b).min(n - 1);
            col.clear();
            for k in i + 1..=hi {
                col.push(self.lower(k, i));
            }
            for j in i + 1..=hi {
                let mut s = 0.0;
                for (t, k) in (i + 1..=hi).enumerate() {
                    let (mx, mn) = if k >= j { (k, j) } else { (j, k) };
                    s -= col[t] * z[mx * w + mx - mn];
                }
                z[j * w + j - i] = s;
            }
            let mut s = 1.0 / self.piv[i];
            for (t, k) in (i + 1..=hi).enumerate() {
                s -= col[t] * z[k * w + k - i];
            }
            z[i * w] = s;
        }
        (0..n).map(|i| z[i * w]).collect()
    }
}

pub(crate) struct IterOutcome {
    pub u: Vec<f64>,
    pub residual: f64,
}

/// Plain Gauss-Seidel on the fixed-point form, from `u = 0`.
pub(crate) fn gauss_seidel(asm: &Assembly, f: &[f64], tol: f64, max_sweeps: usize) -> Result<IterOutcome> {
    let n = asm.n();
    let k = 2 * asm.d;
    let h = asm.hop();
    let inv: Vec<f64> = asm.diag.iter().map(|d| 1.0 / d).collect();
    let mut u = vec![0.0f64; n];
    for _ in 0..max_sweeps {
        let mut change = 0.0f64;
        for i in 0..n {
            let s: f64 = asm.nbr[i * k..(i + 1) * k].iter().filter(|&&j| j != NONE).map(|&j| u[j as usize]).sum();
            let new = (f[i] + h * s) * inv[i];
            change = change.max((new - u[i]).abs());
            u[i] = new;
        }
        if change <= tol {
            return Ok(IterOutcome { u, residual: change });
        }
    }
    Err(Error::Solver(format!("Gauss-Seidel did not reach {tol:e} within {max_sweeps} sweeps")))
}

/// Jacobi-preconditioned conjugate gradients.
pub(crate) fn conjugate_gradient(asm: &Assembly, f: &[f64], tol: f64, max_iter: usize) -> Result<IterOutcome> {
    let n = asm.n();
    let k = 2 * asm.d;
    let h = asm.hop();
    let apply = |v: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let s: f64 = asm.nbr[i * k..(i + 1) * k].iter().filter(|&&j| j != NONE).map(|&j| v[j as usize]).sum();
            out[i] = asm.diag[i] * v[i] - h * s;
        }
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut x = vec![0.0f64; n];
    let mut r = f.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&asm.diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0f64; n];
    let mut rz = dot(&r, &z);
    let res = |r: &[f64]| r.iter().zip(&asm.diag).map(|(r, d)| (r / d).abs()).fold(0.0f64, f64::max);
    if res(&r) <= tol {
        return Ok(IterOutcome { u: x, residual: res(&r) });
    }
    for _ in 0..max_iter {
        apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr = res(&r);
        if rr <= tol {
            // Recompute against the true residual to guard against drift.
            let true_res = asm.fixed_point_residual(&x, f);
            if true_res <= tol {
                return Ok(IterOutcome { u: x, residual: true_res });
            }
        }
        for i in 0..n {
            z[i] = r[i] / asm.diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Solver(format!("conjugate gradients did not reach {tol:e} within {max_iter} iterations")))
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Cheapest single-path cost to the target, `phi(z) = min sum (omega + log 2d)`
/// over departure sites. `e^{-phi}` is a lower bound for the travel weight.
pub(crate) fn path_potential(asm: &Assembly, target_site: usize) -> Vec<f64> {
    let n = asm.n();
    let k = 2 * asm.d;
    let step = ((2 * asm.d) as f64).ln();
    let mut phi = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    for i in 0..n {
        if asm.nbr_site[i * k..(i + 1) * k].iter().any(|&s| s as usize == target_site && s != NONE) {
            phi[i] = asm.omega[i] + step;
            heap.push(Entry(phi[i], i));
        }
    }
    while let Some(Entry(c, j)) = heap.pop() {
        if c > phi[j] {
            continue;
        }
        for &i in &asm.nbr[j * k..(j + 1) * k] {
            if i == NONE {
                continue;
            }
            let i = i as usize;
            let cand = c + asm.omega[i] + step;
            if cand < phi[i] {
                phi[i] = cand;
                heap.push(Entry(cand, i));
            }
        }
    }
    phi
}

/// Gauss-Seidel on `v = u e^{phi}` for a single target, used when the
/// plain solve underflows. Returns `log u`.
pub(crate) fn log_space_solve(asm: &Assembly, target_site: usize, tol: f64, max_sweeps: usize) -> Result<IterOutcome> {
    let n = asm.n();
    let k = 2 * asm.d;
    let h = asm.hop();
    let phi = path_potential(asm, target_site);
    let mut coef = vec![0.0f64; n * k];
    let mut g = vec![0.0f64; n];
    for i in 0..n {
        if !phi[i].is_finite() {
            continue;
        }
        for t in 0..k {
            let s = asm.nbr_site[i * k + t];
            if s == NONE {
                continue;
            }
            if s as usize == target_site {
                g[i] += h * (phi[i] - asm.omega[i]).exp();
            } else if asm.nbr[i * k + t] != NONE {
                let j = asm.nbr[i * k + t] as usize;
                if phi[j].is_finite() {
                    coef[i * k + t] = h * (phi[i] - phi[j] - asm.omega[i]).exp();
                }
            }
        }
    }
    let mut v: Vec<f64> = phi.iter().map(|p| if p.is_finite() { 1.0 } else { 0.0 }).collect();
    for _ in 0..max_sweeps {
        let mut change = 0.0f64;
        for i in 0..n {
            if !phi[i].is_finite() {
                continue;
            }
            let mut s = g[i];
            for t in 0..k {
                let c = coef[i * k + t];
                if c != 0.0 {
                    s += c * v[asm.nbr[i * k + t] as usize];
                }
            }
            change = change.max(((s - v[i]) / s).abs());
            v[i] = s;
        }
        if change <= tol {
            let logu =
                v.iter().zip(&phi).map(|(v, p)| if p.is_finite() { v.ln() - p } else { f64::NEG_INFINITY }).collect();
            return Ok(IterOutcome { u: logu, residual: change });
        }
    }
    Err(Error::Solver(format!("log-space Gauss-Seidel did not reach {tol:e} within {max_sweeps} sweeps")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{BoxRegion, LatticePoint};

    fn dense_inverse(asm: &Assembly) -> Vec<Vec<f64>> {
        let n = asm.n();
        let k = 2 * asm.d;
        let mut a = vec![vec![0.0; 2 * n]; n];
        for i in 0..n {
            a[i][i] = asm.diag[i];
            for &j in &asm.nbr[i * k..(i + 1) * k] {
                if j != NONE {
                    a[i][j as usize] -= asm.hop();
                }
            }
            a[i][n + i] = 1.0;
        }
        for c in 0..n {
            let p = a[c][c];
            for v in a[c].iter_mut() {
                *v /= p;
            }
            for r in 0..n {
                if r != c {
                    let m = a[r][c];
                    let rowc = a[c].clone();
                    for (x, y) in a[r].iter_mut().zip(rowc) {
                        *x -= m * y;
                    }
                }
            }
        }
        a.into_iter().map(|row| row[n..].to_vec()).collect()
    }

    fn small_assembly(seed: u64) -> Assembly {
        let region = Region::from_box(BoxRegion::new(LatticePoint::new([0, 0]), LatticePoint::new([4, 6])).unwrap());
        assemble(&region, |i| i == 7, |i| Ok(((i as u64 * 2654435761 + seed) % 7) as f64 * 0.3), None).unwrap()
    }

    #[test]
    fn band_solve_and_selected_inverse_match_dense() {
        let asm = small_assembly(3);
        let inv = dense_inverse(&asm);
        let fac = BandFactor::new(&asm).unwrap();
        let diag = fac.inverse_diagonal();
        for i in 0..asm.n() {
            assert!((diag[i] - inv[i][i]).abs() < 1e-13 * inv[i][i].abs().max(1.0));
        }
        let mut e = vec![0.0; asm.n()];
        e[5] = 1.0;
        let col = fac.solve(&e);
        for i in 0..asm.n() {
            assert!((col[i] - inv[i][5]).abs() < 1e-14);
        }
    }

    #[test]
    fn iterative_solvers_agree_with_direct() {
        let asm = small_assembly(11);
        let f = asm.coupling(|s| s.is_none());
        let direct = BandFactor::new(&asm).unwrap().solve(&f);
        let gs = gauss_seidel(&asm, &f, 1e-14, 100_000).unwrap();
        let cg = conjugate_gradient(&asm, &f, 1e-14, 10_000).unwrap();
        for i in 0..asm.n() {
            assert!((gs.u[i] - direct[i]).abs() < 1e-12);
            assert!((cg.u[i] - direct[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn elimination_order_puts_longest_axis_slowest() {
        let region = Region::from_box(BoxRegion::new(LatticePoint::new([0, 0]), LatticePoint::new([3, 10])).unwrap());
        let asm = assemble(&region, |_| false, |_| Ok(0.0), None).unwrap();
        assert_eq!(asm.band, 3);
    }
}
