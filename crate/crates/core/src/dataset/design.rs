//! The design space: 27 geometries x 20 binder forces x 2 thicknesses.

use crate::error::{Error, Result};

pub const GEO_COUNT: u8 = 27;
pub const BF_COUNT: u32 = 20;
pub const THICKNESS_VALUES: [f64; 2] = [1.0, 1.5];

/// Fixed geometry constants of the quarter model (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySpec {
    /// Radius of the quarter-circular relief at the origin corner.
    pub c1: f64,
    /// Footprint extent along x.
    pub c2: f64,
    /// Footprint extent along y.
    pub c3: f64,
    /// Blank side length.
    pub blank_side: f64,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        GeometrySpec { c1: 25.0, c2: 40.0, c3: 40.0, blank_side: 70.0 }
    }
}

/// One point of the design space, with its position in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPoint {
    /// 1..=27; encodes the radii triple.
    pub geo_index: u8,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    /// Binder force, MPa; one of `0.25 * k` for k in 1..=20.
    pub bf: f64,
    /// Blank thickness, mm; 1.0 or 1.5.
    pub t: f64,
    /// Position in the unshuffled dataset order.
    pub ordinal: u32,
}

impl super::HasOrdinal for DesignPoint {
    fn ordinal(&self) -> u32 {
        self.ordinal
    }
}

/// Decode a geometry index into `(r1, r2, r3)`: base-3 over {6, 8, 10} mm
/// with `r3` varying fastest (Geo1 = 6/6/6, Geo2 = 6/6/8, ...).
pub fn geo_index_to_radii(geo_index: u8) -> Result<(f64, f64, f64)> {
    if !(1..=GEO_COUNT).contains(&geo_index) {
        return Err(Error::OutOfRange {
            context: "geo_index_to_radii",
            value: geo_index as i64,
            min: 1,
            max: GEO_COUNT as i64,
        });
    }
    let idx = (geo_index - 1) as usize;
    let decode = |d: usize| 6.0 + 2.0 * d as f64;
    Ok((decode(idx / 9), decode((idx / 3) % 3), decode(idx % 3)))
}

/// Inverse of [`geo_index_to_radii`].
pub fn radii_to_geo_index(r1: f64, r2: f64, r3: f64) -> Result<u8> {
    let encode = |r: f64, which: &'static str| -> Result<usize> {
        match r {
            x if x == 6.0 => Ok(0),
            x if x == 8.0 => Ok(1),
            x if x == 10.0 => Ok(2),
            _ => Err(Error::OutOfRange { context: which, value: r as i64, min: 6, max: 10 }),
        }
    };
    let (i1, i2, i3) = (encode(r1, "radii_to_geo_index r1")?, encode(r2, "radii_to_geo_index r2")?, encode(r3, "radii_to_geo_index r3")?);
    Ok((9 * i1 + 3 * i2 + i3 + 1) as u8)
}

/// All 1,080 design points in dataset order: geometry outermost, then binder
/// force, then thickness.
pub fn enumerate_design_space() -> Vec<DesignPoint> {
    let mut out = Vec::with_capacity((GEO_COUNT as usize) * (BF_COUNT as usize) * 2);
    let mut ordinal = 0u32;
    for geo_index in 1..=GEO_COUNT {
        let (r1, r2, r3) = geo_index_to_radii(geo_index).expect("index in range");
        for k in 1..=BF_COUNT {
            let bf = 0.25 * k as f64;
            for &t in &THICKNESS_VALUES {
                out.push(DesignPoint { geo_index, r1, r2, r3, bf, t, ordinal });
                ordinal += 1;
            }
        }
    }
    out
}

/// Keep every `stride`-th binder force starting from the first (BF1, BF5,
/// ... for stride 4), preserving dataset order and original ordinals.
pub fn subset_every_kth_bf(points: &[DesignPoint], stride: u32) -> Vec<DesignPoint> {
    points
        .iter()
        .filter(|p| {
            let k = (p.bf / 0.25).round() as u32;
            (k - 1) % stride.max(1) == 0
        })
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_layout() {
        let points = enumerate_design_space();
        assert_eq!(points.len(), 1080);
        let first = &points[0];
        assert_eq!((first.geo_index, first.bf, first.t, first.ordinal), (1, 0.25, 1.0, 0));
        let last = &points[1079];
        assert_eq!((last.geo_index, last.bf, last.t, last.ordinal), (27, 5.0, 1.5, 1079));
        // Thickness varies fastest, then binder force.
        assert_eq!((points[1].bf, points[1].t), (0.25, 1.5));
        assert_eq!((points[2].bf, points[2].t), (0.5, 1.0));
        assert_eq!(points[40].geo_index, 2);
    }

    #[test]
    fn radii_decoding_examples() {
        assert_eq!(geo_index_to_radii(1).unwrap(), (6.0, 6.0, 6.0));
        assert_eq!(geo_index_to_radii(2).unwrap(), (6.0, 6.0, 8.0));
        assert_eq!(geo_index_to_radii(27).unwrap(), (10.0, 10.0, 10.0));
        assert!(geo_index_to_radii(0).is_err());
        assert!(geo_index_to_radii(28).is_err());
    }

    #[test]
    fn radii_round_trip_bijection() {
        for geo in 1..=GEO_COUNT {
            let (r1, r2, r3) = geo_index_to_radii(geo).unwrap();
            assert_eq!(radii_to_geo_index(r1, r2, r3).unwrap(), geo);
        }
        assert!(radii_to_geo_index(7.0, 6.0, 6.0).is_err());
    }

    #[test]
    fn bf_subset_keeps_270() {
        let points = enumerate_design_space();
        let subset = subset_every_kth_bf(&points, 4);
        assert_eq!(subset.len(), 270);
        let mut bfs: Vec<f64> = subset.iter().map(|p| p.bf).collect();
        bfs.dedup();
        bfs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        bfs.dedup();
        assert_eq!(bfs, vec![0.25, 1.25, 2.25, 3.25, 4.25]);
        // Original ordinals and order retained.
        assert!(subset.windows(2).all(|w| w[0].ordinal < w[1].ordinal));
    }
}
