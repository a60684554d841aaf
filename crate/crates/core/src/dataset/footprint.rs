//! Signed distance to the die-footprint outline.
//!
//! The footprint is the `[0, C2] x [0, C3]` region of the blank quadrant with
//! fillet radius `r2` at corner (C2, 0), `r1` at (C2, C3), `r3` at (0, C3),
//! and a quarter-circular relief of radius `C1` cut out at the origin corner.
//! Distances are positive outside the footprint, negative inside, in mm.

use super::design::{DesignPoint, GeometrySpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    r1: f64,
    r2: f64,
    r3: f64,
    relief: f64,
    half_x: f64,
    half_y: f64,
}

impl Footprint {
    pub fn new(design: &DesignPoint, spec: &GeometrySpec) -> Self {
        Footprint {
            r1: design.r1,
            r2: design.r2,
            r3: design.r3,
            relief: spec.c1,
            half_x: spec.c2 / 2.0,
            half_y: spec.c3 / 2.0,
        }
    }

    /// Signed distance from `(x, y)` to the footprint outline.
    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        // Rounded box with a per-corner radius, then a CSG subtraction of the
        // relief disc centered at the origin.
        let dx = x - self.half_x;
        let dy = y - self.half_y;
        let r = if dx >= 0.0 {
            if dy >= 0.0 {
                self.r1
            } else {
                self.r2
            }
        } else if dy >= 0.0 {
            self.r3
        } else {
            0.0
        };
        let qx = dx.abs() - self.half_x + r;
        let qy = dy.abs() - self.half_y + r;
        let outside = {
            let ox = qx.max(0.0);
            let oy = qy.max(0.0);
            (ox * ox + oy * oy).sqrt()
        };
        let box_d = qx.max(qy).min(0.0) + outside - r;
        let relief_d = self.relief - (x * x + y * y).sqrt();
        box_d.max(relief_d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{enumerate_design_space, geo_index_to_radii};

    fn footprint(geo: u8) -> Footprint {
        let spec = GeometrySpec::default();
        let design = enumerate_design_space()
            .into_iter()
            .find(|p| p.geo_index == geo)
            .unwrap();
        Footprint::new(&design, &spec)
    }

    #[test]
    fn edge_points_are_on_the_outline() {
        let f = footprint(1); // all radii 6
        // Right edge x = 40, between the fillets and away from the relief.
        assert!(f.signed_distance(40.0, 20.0).abs() < 1e-12);
        // Top edge y = 40.
        assert!(f.signed_distance(20.0, 40.0).abs() < 1e-12);
    }

    #[test]
    fn relief_arc_is_on_the_outline() {
        let f = footprint(1);
        // Point on the radius-25 arc, inside the box.
        let (x, y) = (25.0 * 0.6, 25.0 * 0.8);
        assert!(f.signed_distance(x, y).abs() < 1e-12);
        // The origin is 25 mm from the nearest footprint boundary.
        assert!((f.signed_distance(0.0, 0.0) - 25.0).abs() < 1e-12);
    }

    #[test]
    fn sign_convention() {
        let f = footprint(14);
        assert!(f.signed_distance(30.0, 30.0) < 0.0, "deep interior point");
        assert!(f.signed_distance(60.0, 60.0) > 0.0, "blank corner outside");
        assert!(f.signed_distance(5.0, 5.0) > 0.0, "inside the relief cut");
    }

    #[test]
    fn fillet_radius_changes_corner_distance() {
        let f6 = footprint(1); // r1 = 6
        let f10 = footprint(27); // r1 = 10
        // Outside the (40, 40) corner along the diagonal.
        let d6 = f6.signed_distance(44.0, 44.0);
        let d10 = f10.signed_distance(44.0, 44.0);
        // A larger fillet pulls the outline inward at the corner.
        assert!(d10 > d6);
    }

    #[test]
    fn transpose_swaps_r2_r3_exactly() {
        // The footprint mirrored across the diagonal equals the footprint
        // with r2 and r3 exchanged, bit for bit.
        let spec = GeometrySpec::default();
        let points = enumerate_design_space();
        for geo in [2u8, 6, 11, 16, 22] {
            let a = points.iter().find(|p| p.geo_index == geo).unwrap();
            let (r1, r2, r3) = geo_index_to_radii(geo).unwrap();
            let swapped = crate::dataset::radii_to_geo_index(r1, r3, r2).unwrap();
            let b = points.iter().find(|p| p.geo_index == swapped).unwrap();
            let fa = Footprint::new(a, &spec);
            let fb = Footprint::new(b, &spec);
            for (x, y) in [(3.0, 17.0), (40.0, 1.5), (12.5, 39.0), (55.0, 8.0)] {
                assert_eq!(fa.signed_distance(x, y), fb.signed_distance(y, x));
            }
        }
    }
}
