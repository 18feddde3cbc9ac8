//! Rendering-area geometry: sampling grid, zones, control-point selection,
//! and coordinate normalization for the network input.

use crate::error::{PszError, Result};
use serde::{Deserialize, Serialize};

/// Rectangular region of the horizontal plane in which zones may be placed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderingArea {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl RenderingArea {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        if !(x_min < x_max && y_min < y_max) {
            return Err(PszError::Config(format!(
                "invalid rendering area [{x_min},{x_max}]x[{y_min},{y_max}]"
            )));
        }
        Ok(Self { x_min, x_max, y_min, y_max })
    }

    /// The 2 m x 1.5 m area used throughout the experiments.
    pub fn default_area() -> Self {
        Self { x_min: -1.0, x_max: 1.0, y_min: 0.5, y_max: 2.0 }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Regular lattice of field points covering a rendering area.
///
/// Points are ordered row-major: y varies slowest, x fastest. The ordering is
/// part of the dataset file contract and must stay deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingGrid {
    pub area: RenderingArea,
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
    pub points: Vec<(f64, f64)>,
}

impl SamplingGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, id: usize) -> (f64, f64) {
        self.points[id]
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.nx + col
    }
}

/// Circular personal sound zone in the rendering plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub center: (f64, f64),
    pub radius: f64,
}

impl Zone {
    pub fn new(center: (f64, f64), radius: f64) -> Self {
        Self { center, radius }
    }
}

/// Bright zone / dark zone assignment for one rendering query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZonePair {
    pub bz: Zone,
    pub dz: Zone,
}

fn side_divisible(len: f64, resolution: f64) -> Option<usize> {
    let n = len / resolution;
    let rounded = n.round();
    if (n - rounded).abs() * resolution < 1e-9 {
        Some(rounded as usize)
    } else {
        None
    }
}

/// Builds the lattice covering `area` inclusively at the given spacing.
///
/// The resolution must divide both side lengths; a 5 cm grid over
/// [-1,1]x[0.5,2] yields 41x31 = 1271 points.
pub fn make_grid(area: RenderingArea, resolution: f64) -> Result<SamplingGrid> {
    if resolution <= 0.0 {
        return Err(PszError::Config(format!("resolution must be positive, got {resolution}")));
    }
    let nx = side_divisible(area.x_max - area.x_min, resolution)
        .ok_or_else(|| PszError::Config(format!(
            "resolution {resolution} does not divide x side {}",
            area.x_max - area.x_min
        )))?
        + 1;
    let ny = side_divisible(area.y_max - area.y_min, resolution)
        .ok_or_else(|| PszError::Config(format!(
            "resolution {resolution} does not divide y side {}",
            area.y_max - area.y_min
        )))?
        + 1;
    let mut points = Vec::with_capacity(nx * ny);
    for row in 0..ny {
        let y = area.y_min + row as f64 * resolution;
        for col in 0..nx {
            let x = area.x_min + col as f64 * resolution;
            points.push((x, y));
        }
    }
    Ok(SamplingGrid { area, resolution, nx, ny, points })
}

/// Grid points inside the closed disk of the zone, in grid order.
///
/// Membership uses `<=` so an exact-radius lattice hit is included.
pub fn select_control_points(grid: &SamplingGrid, zone: &Zone) -> Result<Vec<usize>> {
    let (cx, cy) = zone.center;
    let limit = zone.radius * (1.0 + 1e-12) + 1e-12;
    let ids: Vec<usize> = grid
        .points
        .iter()
        .enumerate()
        .filter(|(_, &(x, y))| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() <= limit)
        .map(|(i, _)| i)
        .collect();
    if ids.is_empty() {
        return Err(PszError::DegenerateZone(format!(
            "zone at ({cx}, {cy}) with radius {} covers no grid point",
            zone.radius
        )));
    }
    Ok(ids)
}

/// True iff the two zone disks intersect (open condition on the distance).
pub fn zones_overlap(pair: &ZonePair) -> bool {
    let (x1, y1) = pair.bz.center;
    let (x2, y2) = pair.dz.center;
    let dist = ((x1 - x2).powi(2) + (y1 - y2).powi(2)).sqrt();
    dist < pair.bz.radius + pair.dz.radius
}

fn normalize_axis(v: f64, lo: f64, hi: f64, delta: f64) -> f64 {
    let span = 1.0 - delta;
    -span + 2.0 * span * (v - lo) / (hi - lo)
}

fn denormalize_axis(t: f64, lo: f64, hi: f64, delta: f64) -> f64 {
    let span = 1.0 - delta;
    lo + (t + span) / (2.0 * span) * (hi - lo)
}

/// Maps both zone centers into [-1+delta, 1-delta] per axis,
/// ordered (bz.x, bz.y, dz.x, dz.y).
pub fn normalize_coords(pair: &ZonePair, area: &RenderingArea, delta: f64) -> Result<[f64; 4]> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(PszError::Config(format!("margin delta must be in (0,1), got {delta}")));
    }
    for zone in [&pair.bz, &pair.dz] {
        let (x, y) = zone.center;
        if !area.contains(x, y) {
            return Err(PszError::OutOfRange(format!(
                "zone center ({x}, {y}) outside rendering area"
            )));
        }
    }
    Ok([
        normalize_axis(pair.bz.center.0, area.x_min, area.x_max, delta),
        normalize_axis(pair.bz.center.1, area.y_min, area.y_max, delta),
        normalize_axis(pair.dz.center.0, area.x_min, area.x_max, delta),
        normalize_axis(pair.dz.center.1, area.y_min, area.y_max, delta),
    ])
}

/// Inverse of [`normalize_coords`] for one axis pairing; used for round-trip
/// checks and for mapping normalized samples back into the area.
pub fn denormalize_coords(v: &[f64; 4], area: &RenderingArea, delta: f64) -> [f64; 4] {
    [
        denormalize_axis(v[0], area.x_min, area.x_max, delta),
        denormalize_axis(v[1], area.y_min, area.y_max, delta),
        denormalize_axis(v[2], area.x_min, area.x_max, delta),
        denormalize_axis(v[3], area.y_min, area.y_max, delta),
    ]
}

/// Default normalization margin.
pub const DEFAULT_DELTA: f64 = 0.05;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn grid_counts_5cm_paper_area() {
        let grid = make_grid(RenderingArea::default_area(), 0.05).unwrap();
        assert_eq!(grid.nx, 41);
        assert_eq!(grid.ny, 31);
        assert_eq!(grid.len(), 1271);
    }

    #[test]
    fn grid_unit_square_coarse() {
        let area = RenderingArea::new(0.0, 1.0, 0.0, 1.0).unwrap();
        let grid = make_grid(area, 1.0).unwrap();
        assert_eq!(grid.len(), 4);
        assert_eq!(grid.point(0), (0.0, 0.0));
        assert_eq!(grid.point(3), (1.0, 1.0));
    }

    #[test]
    fn grid_rejects_non_divisible_resolution() {
        let err = make_grid(RenderingArea::default_area(), 0.07).unwrap_err();
        assert!(matches!(err, PszError::Config(_)));
    }

    #[test]
    fn control_points_13_at_grid_center() {
        let grid = make_grid(RenderingArea::default_area(), 0.05).unwrap();
        // (0.0, 1.0) is a lattice point; offsets with norm*0.05 <= 0.1
        // are (0,0), 4 axis at 1, 4 diagonal, 4 axis at 2 -> 13.
        let zone = Zone::new((0.0, 1.0), 0.1);
        let ids = select_control_points(&grid, &zone).unwrap();
        assert_eq!(ids.len(), 13);
    }

    #[test]
    fn control_points_zero_radius_on_lattice() {
        let grid = make_grid(RenderingArea::default_area(), 0.05).unwrap();
        let zone = Zone::new((0.0, 1.0), 0.0);
        let ids = select_control_points(&grid, &zone).unwrap();
        assert_eq!(ids.len(), 1);
        assert_eq!(grid.point(ids[0]), (0.0, 1.0));
    }

    #[test]
    fn control_points_outside_grid_is_degenerate() {
        let grid = make_grid(RenderingArea::default_area(), 0.05).unwrap();
        let zone = Zone::new((5.0, 5.0), 0.1);
        assert!(matches!(
            select_control_points(&grid, &zone),
            Err(PszError::DegenerateZone(_))
        ));
    }

    #[test]
    fn overlap_cases() {
        let mk = |d: f64| ZonePair {
            bz: Zone::new((0.0, 1.0), 0.1),
            dz: Zone::new((d, 1.0), 0.1),
        };
        assert!(!zones_overlap(&mk(0.3)));
        assert!(zones_overlap(&mk(0.15)));
        assert!(zones_overlap(&mk(0.0)));
    }

    #[test]
    fn normalize_midpoint_and_boundary() {
        let area = RenderingArea::default_area();
        let pair = ZonePair {
            bz: Zone::new((area.x_min, 1.25), 0.1),
            dz: Zone::new((0.0, 1.25), 0.1),
        };
        let v = normalize_coords(&pair, &area, 0.05).unwrap();
        assert_abs_diff_eq!(v[0], -0.95, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn normalize_example_value() {
        // x in [-1,1], delta 0.05, x = 0.5 -> 0.475
        let area = RenderingArea::default_area();
        let pair = ZonePair {
            bz: Zone::new((0.5, 1.0), 0.1),
            dz: Zone::new((0.0, 1.0), 0.1),
        };
        let v = normalize_coords(&pair, &area, 0.05).unwrap();
        assert_abs_diff_eq!(v[0], 0.475, epsilon = 1e-12);
    }

    #[test]
    fn normalize_rejects_outside_center() {
        let area = RenderingArea::default_area();
        let pair = ZonePair {
            bz: Zone::new((2.0, 1.0), 0.1),
            dz: Zone::new((0.0, 1.0), 0.1),
        };
        assert!(matches!(
            normalize_coords(&pair, &area, 0.05),
            Err(PszError::OutOfRange(_))
        ));
    }

    proptest! {
        #[test]
        fn normalize_round_trip(bx in -1.0f64..1.0, by in 0.5f64..2.0,
                                dx in -1.0f64..1.0, dy in 0.5f64..2.0) {
            let area = RenderingArea::default_area();
            let pair = ZonePair {
                bz: Zone::new((bx, by), 0.1),
                dz: Zone::new((dx, dy), 0.1),
            };
            let v = normalize_coords(&pair, &area, 0.05).unwrap();
            let back = denormalize_coords(&v, &area, 0.05);
            prop_assert!((back[0] - bx).abs() < 1e-12);
            prop_assert!((back[1] - by).abs() < 1e-12);
            prop_assert!((back[2] - dx).abs() < 1e-12);
            prop_assert!((back[3] - dy).abs() < 1e-12);
        }

        #[test]
        fn overlap_symmetric(x1 in -1.0f64..1.0, y1 in 0.5f64..2.0,
                             x2 in -1.0f64..1.0, y2 in 0.5f64..2.0) {
            let a = ZonePair { bz: Zone::new((x1, y1), 0.1), dz: Zone::new((x2, y2), 0.1) };
            let b = ZonePair { bz: Zone::new((x2, y2), 0.1), dz: Zone::new((x1, y1), 0.1) };
            prop_assert_eq!(zones_overlap(&a), zones_overlap(&b));
        }

        #[test]
        fn control_points_translation_invariant(shift_x in -3i32..3, shift_y in -3i32..3) {
            // translate both grid and zone by a lattice vector
            let res = 0.05;
            let area = RenderingArea::default_area();
            let grid = make_grid(area, res).unwrap();
            let zone = Zone::new((0.12, 1.03), 0.1);
            let base = select_control_points(&grid, &zone).unwrap();

            let (sx, sy) = (shift_x as f64 * res, shift_y as f64 * res);
            let shifted_area = RenderingArea::new(
                area.x_min + sx, area.x_max + sx,
                area.y_min + sy, area.y_max + sy,
            ).unwrap();
            let shifted_grid = make_grid(shifted_area, res).unwrap();
            let shifted_zone = Zone::new((zone.center.0 + sx, zone.center.1 + sy), 0.1);
            let shifted = select_control_points(&shifted_grid, &shifted_zone).unwrap();
            prop_assert_eq!(base, shifted);
        }
    }
}
