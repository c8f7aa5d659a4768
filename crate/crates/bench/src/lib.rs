//! Fixed benchmark instances shared by the solver and animal benches.

use rwpot_core::potential::sample_field;
use rwpot_core::{BoxRegion, DistributionSpec, LatticePoint, PotentialField, Region};

pub const SPEC: DistributionSpec = DistributionSpec::TwoPoint { v_lo: 0.2, v_hi: 1.0, p_hi: 0.5 };

/// Field on the centred cube of radius `r`, target at `(r/2, 0, ...)`.
pub fn cube_instance(d: usize, r: i64, seed: u64) -> (PotentialField, Region, LatticePoint) {
    let bx = BoxRegion::centered(d, r);
    let field = sample_field(&SPEC, &bx, seed).expect("benchmark field");
    let x = LatticePoint::unit(d, 0, 1).scale((r / 2).max(1));
    (field, Region::from_box(bx), x)
}
