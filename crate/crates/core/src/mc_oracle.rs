//! Oracles that never touch the linear solver: exact path sums over bounded
//! lengths and plain Monte Carlo walks.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{coarse_index, CoarseScheme, LatticePoint, Region};
use crate::potential::PotentialField;
use crate::seed::{self, tag};
use crate::stats;

pub const MAX_ENUM_SITES: usize = 49;
pub const MAX_ENUM_LENGTH: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathEnumResult {
    /// Weight of all paths of length at most `max_len` from 0 that hit `x`
    /// before leaving the region or touching a taboo site.
    pub partial_weight: f64,
    /// Upper bound on the weight of the longer paths.
    pub remainder_bound: f64,
    /// `rho^L / (1 - rho)` with `rho` the per-step substochasticity factor.
    pub geometric_bound: f64,
    /// Weight still alive (not hit, not killed) after `max_len` steps.
    pub alive_mass: f64,
    pub rho: f64,
    /// Smallest potential over the live sites.
    pub kappa_min: f64,
    pub max_len: usize,
}

// Dense view of a region for walkers: offsets, live flags, potentials.
struct Grid {
    d: usize,
    ext: Vec<i64>,
    strides: Vec<usize>,
    lo: Vec<i64>,
    live: Vec<bool>,
    omega: Vec<f64>,
}

impl Grid {
    fn new(field: &PotentialField, region: &Region, taboo: &[LatticePoint]) -> Result<Self> {
        let bbox = region.bbox();
        let d = bbox.dim();
        let mut live = vec![false; bbox.site_count()];
        let mut omega = vec![0.0; bbox.site_count()];
        for (i, p) in bbox.points().enumerate() {
            if region.contains(&p) && !taboo.contains(&p) {
                live[i] = true;
                omega[i] = field
                    .get(&p)
                    .ok_or_else(|| Error::Domain(format!("site {p} of the region is outside the field")))?;
            }
        }
        Ok(Grid {
            d,
            ext: bbox.extents().iter().map(|&e| e as i64).collect(),
            strides: bbox.strides().to_vec(),
            lo: bbox.lo().to_vec(),
            live,
            omega,
        })
    }

    fn index(&self, offs: &[i64]) -> Option<usize> {
        let mut idx = 0;
        for a in 0..self.d {
            if offs[a] < 0 || offs[a] >= self.ext[a] {
                return None;
            }
            idx += offs[a] as usize * self.strides[a];
        }
        Some(idx)
    }

    fn offsets(&self, p: &LatticePoint) -> Vec<i64> {
        p.iter().zip(&self.lo).map(|(c, l)| c - l).collect()
    }

    /// Neighbour index in direction `dir` (`+e_1, -e_1, ...`), if inside the box.
    fn step(&self, idx: usize, dir: usize) -> Option<usize> {
        let a = dir / 2;
        let c = (idx / self.strides[a]) as i64 % self.ext[a];
        if dir.is_multiple_of(2) {
            (c + 1 < self.ext[a]).then(|| idx + self.strides[a])
        } else {
            (c >= 1).then(|| idx - self.strides[a])
        }
    }
}

fn enum_checks(region: &Region, max_len: usize) -> Result<()> {
    if region.site_count() > MAX_ENUM_SITES {
        return Err(Error::Capacity(format!(
            "path enumeration allows at most {MAX_ENUM_SITES} sites, region has {}",
            region.site_count()
        )));
    }
    if max_len > MAX_ENUM_LENGTH {
        return Err(Error::Capacity(format!("path length {max_len} exceeds {MAX_ENUM_LENGTH}")));
    }
    Ok(())
}

/// Sum of path weights `prod e^{-omega(z_k)}/2d` over all paths of length at
/// most `max_len` from 0 to their first visit of `x`.
///
/// Paths are grouped by their current site after each step, so the sum is
/// exact over all `(2d)^L` paths without listing them.
pub fn enumerate_paths(
    field: &PotentialField,
    region: &Region,
    x: &LatticePoint,
    taboo: &[LatticePoint],
    max_len: usize,
) -> Result<PathEnumResult> {
    enum_checks(region, max_len)?;
    let d = region.dim();
    let origin = LatticePoint::origin(d);
    if !region.contains(&origin) || !region.contains(x) {
        return Err(Error::Domain("0 and x must lie in the region".into()));
    }
    if taboo.contains(&origin) || taboo.contains(x) {
        return Err(Error::Domain("0 and x must not be taboo".into()));
    }
    let grid = Grid::new(field, region, taboo)?;
    let xi = grid.index(&grid.offsets(x)).unwrap();
    let oi = grid.index(&grid.offsets(&origin)).unwrap();
    let h = 1.0 / (2 * d) as f64;

    // Per-step factor over the live non-target sites.
    let mut rho = 0.0f64;
    let mut kappa_min = f64::INFINITY;
    for i in 0..grid.live.len() {
        if !grid.live[i] || i == xi {
            continue;
        }
        kappa_min = kappa_min.min(grid.omega[i]);
        let stay = (0..2 * d).filter(|&dir| grid.step(i, dir).is_some_and(|j| grid.live[j] && j != xi)).count();
        rho = rho.max((-grid.omega[i]).exp() * stay as f64 * h);
    }

    if oi == xi {
        return Ok(PathEnumResult {
            partial_weight: 1.0,
            remainder_bound: 0.0,
            geometric_bound: 0.0,
            alive_mass: 0.0,
            rho,
            kappa_min,
            max_len,
        });
    }
    let mut mass = vec![0.0f64; grid.live.len()];
    mass[oi] = 1.0;
    let mut next = vec![0.0f64; grid.live.len()];
    let mut partial = 0.0;
    for _ in 0..max_len {
        next.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..mass.len() {
            let m = mass[i];
            if m == 0.0 {
                continue;
            }
            let w = m * (-grid.omega[i]).exp() * h;
            for dir in 0..2 * d {
                match grid.step(i, dir) {
                    Some(j) if j == xi => partial += w,
                    Some(j) if grid.live[j] => next[j] += w,
                    _ => {}
                }
            }
        }
        std::mem::swap(&mut mass, &mut next);
    }
    let alive: f64 = mass.iter().sum();
    let geometric = if rho < 1.0 { rho.powi(max_len as i32) / (1.0 - rho) } else { f64::INFINITY };
    Ok(PathEnumResult {
        partial_weight: partial,
        remainder_bound: alive.min(geometric),
        geometric_bound: geometric,
        alive_mass: alive,
        rho,
        kappa_min,
        max_len,
    })
}

// One walk from 0 until it hits x or leaves the live set.
struct Episode {
    hit: bool,
    log_weight: f64,
    path: Vec<usize>,
}

fn run_episode<R: Rng>(grid: &Grid, start: usize, target: usize, rng: &mut R, keep_path: bool) -> Episode {
    let k = 2 * grid.d;
    let mut pos = start;
    let mut acc = 0.0;
    let mut path = Vec::new();
    loop {
        if keep_path {
            path.push(pos);
        }
        if pos == target {
            return Episode { hit: true, log_weight: -acc, path };
        }
        acc += grid.omega[pos];
        let dir = rng.random_range(0..k);
        match grid.step(pos, dir) {
            Some(j) if grid.live[j] => pos = j,
            _ => return Episode { hit: false, log_weight: f64::NEG_INFINITY, path },
        }
        // Beyond this the weight is below the smallest subnormal.
        if !keep_path && acc > 746.0 {
            return Episode { hit: false, log_weight: f64::NEG_INFINITY, path };
        }
    }
}

/// Monte Carlo estimate of `e_V(0, x)` with its standard error.
pub fn sample_walk_weight(
    field: &PotentialField,
    region: &Region,
    x: &LatticePoint,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_samples == 0 {
        return Err(Error::param("n_samples", "must be at least 1"));
    }
    let d = region.dim();
    let origin = LatticePoint::origin(d);
    if !region.contains(&origin) || !region.contains(x) {
        return Err(Error::Domain("0 and x must lie in the region".into()));
    }
    let grid = Grid::new(field, region, &[])?;
    let oi = grid.index(&grid.offsets(&origin)).unwrap();
    let xi = grid.index(&grid.offsets(x)).unwrap();
    let weights: Vec<f64> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng_for(seed, &[tag::EPISODE, i]);
            run_episode(&grid, oi, xi, &mut rng, false).log_weight.exp()
        })
        .collect();
    let s = stats::summarize(&weights);
    Ok((s.mean, if n_samples > 1 { s.se } else { 0.0 }))
}

/// Coarse-grained record of one accepted walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingTrace {
    /// `tau_0 = 0` and successive `ceil(3l/4)` ℓ∞-crossing times before `H(x)`.
    pub tau_times: Vec<usize>,
    /// Cube indices of `S_{tau_i}` plus the cube of `x` (the animal `Ã`).
    pub visited_cubes: Vec<LatticePoint>,
    /// Number of distinct sites visited strictly before `H(x)`.
    pub range_size: usize,
    pub hit_time: usize,
    /// `exp(-sum_{k < H(x)} omega(S_k))`.
    pub weight: f64,
}

/// One line of the trace dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub accepted: bool,
    pub weight: f64,
    pub range_size: usize,
    pub animal_size: usize,
    pub tau_count: usize,
}

#[derive(Debug, Clone)]
pub struct CrossingSample {
    pub l: i64,
    pub traces: Vec<CrossingTrace>,
    pub records: Vec<EpisodeRecord>,
    pub acceptance: f64,
}

impl CrossingSample {
    /// Importance-weighted mean of `#A` and its delta-method standard error.
    pub fn weighted_range(&self) -> (f64, f64) {
        let n = self.records.len() as f64;
        let w: Vec<f64> = self.records.iter().map(|r| if r.accepted { r.weight } else { 0.0 }).collect();
        let wa: Vec<f64> = self.records.iter().zip(&w).map(|(r, w)| w * r.range_size as f64).collect();
        let sw: f64 = w.iter().sum();
        let swa: f64 = wa.iter().sum();
        let ratio = swa / sw;
        let mean_w = sw / n;
        let var: f64 = w.iter().zip(&wa).map(|(w, wa)| (wa - ratio * w).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (ratio, (var / n).sqrt() / mean_w)
    }

    /// JSON-lines dump, one object per episode.
    pub fn trace_dump(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Walks from 0 conditioned on hitting `x` before leaving the region, by
/// rejection, with the `τ`-crossing coarse graining at cube size `l`.
pub fn sample_crossings(
    field: &PotentialField,
    region: &Region,
    x: &LatticePoint,
    l: i64,
    n_samples: usize,
    seed: u64,
) -> Result<CrossingSample> {
    if l < 4 || l % 2 != 0 {
        return Err(Error::param("l", format!("must be even and at least 4, got {l}")));
    }
    if n_samples == 0 {
        return Err(Error::param("n_samples", "must be at least 1"));
    }
    let d = region.dim();
    let origin = LatticePoint::origin(d);
    if !region.contains(&origin) || !region.contains(x) {
        return Err(Error::Domain("0 and x must lie in the region".into()));
    }
    let grid = Grid::new(field, region, &[])?;
    let bbox = region.bbox();
    let oi = grid.index(&grid.offsets(&origin)).unwrap();
    let xi = grid.index(&grid.offsets(x)).unwrap();
    let r = (3 * l + 3) / 4;
    let scheme = CoarseScheme::Cubes(l);

    let results: Vec<(EpisodeRecord, Option<CrossingTrace>)> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng_for(seed, &[tag::EPISODE, i]);
            let ep = run_episode(&grid, oi, xi, &mut rng, true);
            if !ep.hit {
                let rec = EpisodeRecord { accepted: false, weight: 0.0, range_size: 0, animal_size: 0, tau_count: 0 };
                return Ok((rec, None));
            }
            let pts: Vec<LatticePoint> = ep.path.iter().map(|&j| bbox.point_at(j)).collect();
            let hit_time = pts.len() - 1;
            let mut taus = vec![0usize];
            let mut anchor = pts[0].clone();
            for (k, p) in pts.iter().enumerate().skip(1) {
                if (p - &anchor).linf() >= r {
                    if k < hit_time {
                        taus.push(k);
                    }
                    anchor = p.clone();
                }
            }
            let mut cubes: Vec<LatticePoint> = taus
                .iter()
                .map(|&t| coarse_index(&pts[t], scheme))
                .chain(std::iter::once(coarse_index(x, scheme)))
                .collect::<Result<_>>()?;
            cubes.sort();
            cubes.dedup();
            let mut seen = ep.path[..hit_time].to_vec();
            seen.sort_unstable();
            seen.dedup();
            let trace = CrossingTrace {
                tau_times: taus,
                visited_cubes: cubes,
                range_size: seen.len(),
                hit_time,
                weight: ep.log_weight.exp(),
            };
            let rec = EpisodeRecord {
                accepted: true,
                weight: trace.weight,
                range_size: trace.range_size,
                animal_size: trace.visited_cubes.len(),
                tau_count: trace.tau_times.len(),
            };
            Ok((rec, Some(trace)))
        })
        .collect::<Result<_>>()?;
    let records: Vec<EpisodeRecord> = results.iter().map(|(r, _)| *r).collect();
    let traces: Vec<CrossingTrace> = results.into_iter().filter_map(|(_, t)| t).collect();
    let acceptance = traces.len() as f64 / n_samples as f64;
    if acceptance < 1e-6 {
        return Err(Error::Feasibility(format!(
            "{} of {n_samples} walks hit {x} before leaving the region",
            traces.len()
        )));
    }
    Ok(CrossingSample { l, traces, records, acceptance })
}

/// `#A <= (3l)^d #Ã` for a trace.
pub fn animal_bound_holds(trace: &CrossingTrace, l: i64, d: usize) -> bool {
    (trace.range_size as f64) <= ((3 * l) as f64).powi(d as i32) * trace.visited_cubes.len() as f64
}
