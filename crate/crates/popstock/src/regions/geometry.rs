//! Planar lon/lat polygon geometry: bounding boxes and boundary-inclusive
//! even-odd containment.
//!
//! Coordinates are WGS84 degrees treated as a flat plane. Containment is
//! even-odd ray casting with an explicit on-edge test, so points on any ring
//! boundary (outer or hole) count as contained.

/// Axis-aligned bounding box in lon/lat degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bbox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Bbox {
    fn of_points(points: &[(f64, f64)]) -> Bbox {
        let mut bbox = Bbox {
            min_x: f64::INFINITY,
            min_y: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            max_y: f64::NEG_INFINITY,
        };
        for &(x, y) in points {
            bbox.min_x = bbox.min_x.min(x);
            bbox.min_y = bbox.min_y.min(y);
            bbox.max_x = bbox.max_x.max(x);
            bbox.max_y = bbox.max_y.max(y);
        }
        bbox
    }

    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }
}

/// A closed linear ring. The closing vertex (equal to the first) is kept, so
/// edges run over consecutive vertex pairs.
#[derive(Debug, Clone)]
pub struct Ring {
    points: Vec<(f64, f64)>,
    bbox: Bbox,
}

impl Ring {
    /// Requires at least 4 vertices with the last equal to the first.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Ring, &'static str> {
        if points.len() < 4 {
            return Err("ring has fewer than 4 vertices");
        }
        if points.first() != points.last() {
            return Err("ring is not closed");
        }
        let bbox = Bbox::of_points(&points);
        Ok(Ring { points, bbox })
    }

    pub fn bbox(&self) -> Bbox {
        self.bbox
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    fn edges(&self) -> impl Iterator<Item = ((f64, f64), (f64, f64))> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }
}

/// One polygon: an outer ring followed by any number of hole rings. Even-odd
/// containment does not distinguish the two.
#[derive(Debug, Clone)]
pub struct Polygon {
    rings: Vec<Ring>,
}

impl Polygon {
    pub fn new(rings: Vec<Ring>) -> Result<Polygon, &'static str> {
        if rings.is_empty() {
            return Err("polygon has no rings");
        }
        Ok(Polygon { rings })
    }

    pub fn rings(&self) -> &[Ring] {
        &self.rings
    }

    /// Boundary-inclusive even-odd containment over all rings.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let mut inside = false;
        for ring in &self.rings {
            for (a, b) in ring.edges() {
                if point_on_segment((x, y), a, b) {
                    return true;
                }
                // Half-open crossing rule; boundary cases are already out.
                if (a.1 > y) != (b.1 > y) {
                    let x_cross = a.0 + (y - a.1) * (b.0 - a.0) / (b.1 - a.1);
                    if x < x_cross {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }
}

/// A set of polygons treated as one region geometry.
#[derive(Debug, Clone)]
pub struct MultiPolygon {
    polygons: Vec<Polygon>,
}

impl MultiPolygon {
    pub fn new(polygons: Vec<Polygon>) -> Result<MultiPolygon, &'static str> {
        if polygons.is_empty() {
            return Err("geometry has no polygons");
        }
        Ok(MultiPolygon { polygons })
    }

    pub fn polygons(&self) -> &[Polygon] {
        &self.polygons
    }

    pub fn rings(&self) -> impl Iterator<Item = &Ring> {
        self.polygons.iter().flat_map(|p| p.rings().iter())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.polygons.iter().any(|p| p.contains(x, y))
    }
}

/// Exact collinearity-and-bounds test; no epsilon, so the rule stays
/// re-implementable bit-for-bit by an oracle.
#[inline]
fn point_on_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> bool {
    let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    if cross != 0.0 {
        return false;
    }
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: f64, y0: f64, size: f64) -> Polygon {
        let ring = Ring::new(vec![
            (x0, y0),
            (x0 + size, y0),
            (x0 + size, y0 + size),
            (x0, y0 + size),
            (x0, y0),
        ])
        .unwrap();
        Polygon::new(vec![ring]).unwrap()
    }

    #[test]
    fn interior_and_exterior() {
        let p = square(0.0, 0.0, 1.0);
        assert!(p.contains(0.5, 0.5));
        assert!(!p.contains(2.0, 2.0));
        assert!(!p.contains(-0.5, 0.5));
    }

    #[test]
    fn boundary_is_contained() {
        let p = square(0.0, 0.0, 1.0);
        assert!(p.contains(0.0, 0.0)); // vertex
        assert!(p.contains(1.0, 0.5)); // right edge
        assert!(p.contains(0.5, 1.0)); // top edge
        assert!(p.contains(0.5, 0.0)); // bottom edge
    }

    #[test]
    fn hole_excluded_but_hole_boundary_contained() {
        let outer = Ring::new(vec![
            (0.0, 0.0),
            (4.0, 0.0),
            (4.0, 4.0),
            (0.0, 4.0),
            (0.0, 0.0),
        ])
        .unwrap();
        let hole = Ring::new(vec![
            (1.0, 1.0),
            (3.0, 1.0),
            (3.0, 3.0),
            (1.0, 3.0),
            (1.0, 1.0),
        ])
        .unwrap();
        let p = Polygon::new(vec![outer, hole]).unwrap();
        assert!(p.contains(0.5, 0.5));
        assert!(!p.contains(2.0, 2.0)); // inside the hole
        assert!(p.contains(1.0, 2.0)); // on the hole boundary
    }

    #[test]
    fn ring_validation() {
        assert!(Ring::new(vec![(0.0, 0.0), (1.0, 0.0), (0.0, 0.0)]).is_err());
        assert!(Ring::new(vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]).is_err());
    }

    #[test]
    fn concave_polygon() {
        // L-shape: the notch is outside.
        let ring = Ring::new(vec![
            (0.0, 0.0),
            (2.0, 0.0),
            (2.0, 1.0),
            (1.0, 1.0),
            (1.0, 2.0),
            (0.0, 2.0),
            (0.0, 0.0),
        ])
        .unwrap();
        let p = Polygon::new(vec![ring]).unwrap();
        assert!(p.contains(0.5, 1.5));
        assert!(p.contains(1.5, 0.5));
        assert!(!p.contains(1.5, 1.5));
    }
}
