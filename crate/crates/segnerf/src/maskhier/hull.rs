//! Convex hulls of mask pixels (monotone chain) and inclusive overlap
//! tests between convex polygons (separating axes, with point and segment
//! degeneracies handled).
//!
//! All coordinates here are pixel centers, i.e. half-integers; the
//! orientation products below are exact in f64 at raster sizes.

use crate::math::Grid2;

pub type Point = [f64; 2];

#[inline]
fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Monotone-chain hull, counter-clockwise, no three collinear vertices.
/// Degenerate inputs yield a point (1 vertex) or a segment (2 vertices).
pub fn convex_hull(points: &mut Vec<Point>) -> Vec<Point> {
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup();
    let n = points.len();
    if n <= 2 {
        return points.clone();
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * n);
    for &p in points.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in points.iter().rev() {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    if hull.len() == 2 && hull[0] == hull[1] {
        hull.pop();
    }
    // fully collinear inputs leave duplicated chain walks
    if hull.len() > 2 && hull.iter().all(|p| cross(hull[0], hull[1], *p) == 0.0) {
        let mut v = hull.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        return vec![v[0], v[v.len() - 1]];
    }
    hull
}

/// Hull of the centers of all on-pixels.
pub fn hull_of_raster(raster: &Grid2<bool>) -> Vec<Point> {
    let mut pts = Vec::new();
    for y in 0..raster.height {
        for x in 0..raster.width {
            if *raster.get(x, y) {
                pts.push([x as f64 + 0.5, y as f64 + 0.5]);
            }
        }
    }
    convex_hull(&mut pts)
}

fn project(poly: &[Point], axis: [f64; 2]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in poly {
        let d = p[0] * axis[0] + p[1] * axis[1];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}

fn push_axes(poly: &[Point], axes: &mut Vec<[f64; 2]>) {
    match poly.len() {
        0 | 1 => {}
        2 => {
            let e = [poly[1][0] - poly[0][0], poly[1][1] - poly[0][1]];
            axes.push([-e[1], e[0]]);
            axes.push(e); // collinear segments need the direction itself
        }
        n => {
            for i in 0..n {
                let j = (i + 1) % n;
                let e = [poly[j][0] - poly[i][0], poly[j][1] - poly[i][1]];
                axes.push([-e[1], e[0]]);
            }
        }
    }
}

/// True iff the convex polygons intersect; touching at a single boundary
/// point counts as overlap. Points and segments are valid degenerate hulls.
pub fn hulls_overlap(a: &[Point], b: &[Point]) -> bool {
    if a.is_empty() || b.is_empty() {
        return false;
    }
    let mut axes = Vec::with_capacity(a.len() + b.len() + 4);
    push_axes(a, &mut axes);
    push_axes(b, &mut axes);
    if axes.is_empty() {
        // both are single points
        return a[0] == b[0];
    }
    for axis in axes {
        if axis[0] == 0.0 && axis[1] == 0.0 {
            continue;
        }
        let (a_lo, a_hi) = project(a, axis);
        let (b_lo, b_hi) = project(b, axis);
        if a_hi < b_lo || b_hi < a_lo {
            return false;
        }
    }
    true
}

/// Inclusive point-in-convex-polygon (boundary counts as inside).
pub fn point_in_hull(p: Point, hull: &[Point]) -> bool {
    match hull.len() {
        0 => false,
        1 => p == hull[0],
        2 => {
            // on the segment, inclusively
            if cross(hull[0], hull[1], p) != 0.0 {
                return false;
            }
            let within = |lo: f64, hi: f64, v: f64| v >= lo.min(hi) && v <= lo.max(hi);
            within(hull[0][0], hull[1][0], p[0]) && within(hull[0][1], hull[1][1], p[1])
        }
        n => {
            for i in 0..n {
                let j = (i + 1) % n;
                if cross(hull[i], hull[j], p) < 0.0 {
                    return false;
                }
            }
            true
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(x0: f64, y0: f64, side: f64) -> Vec<Point> {
        vec![[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side]]
    }

    /// Brute-force extreme-point hull: p is a vertex iff it is neither a
    /// strict convex combination witnessed by a triangle nor strictly
    /// between two other points on a segment.
    fn brute_force_hull(points: &[Point]) -> Vec<Point> {
        let mut verts: Vec<Point> = Vec::new();
        'outer: for &p in points {
            for &a in points {
                if a == p {
                    continue;
                }
                for &b in points {
                    if b == p || b == a {
                        continue;
                    }
                    if between_strict(p, a, b) {
                        continue 'outer;
                    }
                    for &c in points {
                        if c == a || c == b || c == p {
                            continue;
                        }
                        if inside_triangle_strict(p, a, b, c) {
                            continue 'outer;
                        }
                    }
                }
            }
            if !verts.contains(&p) {
                verts.push(p);
            }
        }
        verts
    }

    fn inside_triangle_strict(p: Point, a: Point, b: Point, c: Point) -> bool {
        let d1 = cross(a, b, p);
        let d2 = cross(b, c, p);
        let d3 = cross(c, a, p);
        (d1 > 0.0 && d2 > 0.0 && d3 > 0.0) || (d1 < 0.0 && d2 < 0.0 && d3 < 0.0)
    }

    fn between_strict(p: Point, a: Point, b: Point) -> bool {
        if cross(a, b, p) != 0.0 {
            return false;
        }
        let dot = (p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1]);
        let len2 = (b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2);
        dot > 0.0 && dot < len2
    }

    #[test]
    fn single_pixel_gives_point_hull() {
        let mut g = Grid2::filled(8, 8, false);
        g.set(3, 4, true);
        let hull = hull_of_raster(&g);
        assert_eq!(hull, vec![[3.5, 4.5]]);
    }

    #[test]
    fn filled_rectangle_gives_four_corners() {
        let mut g = Grid2::filled(16, 16, false);
        for y in 2..7 {
            for x in 3..11 {
                g.set(x, y, true);
            }
        }
        let hull = hull_of_raster(&g);
        assert_eq!(hull.len(), 4);
        for corner in [[3.5, 2.5], [10.5, 2.5], [10.5, 6.5], [3.5, 6.5]] {
            assert!(hull.contains(&corner), "missing {corner:?} in {hull:?}");
        }
    }

    #[test]
    fn pixel_row_gives_segment() {
        let mut g = Grid2::filled(16, 4, false);
        for x in 2..9 {
            g.set(x, 1, true);
        }
        let hull = hull_of_raster(&g);
        assert_eq!(hull, vec![[2.5, 1.5], [8.5, 1.5]]);
    }

    #[test]
    fn random_blobs_match_brute_force_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let mut g = Grid2::filled(24, 24, false);
            for _ in 0..50 {
                g.set(rng.gen_range(0..24), rng.gen_range(0..24), true);
            }
            let hull = hull_of_raster(&g);
            let mut pts = Vec::new();
            for y in 0..24 {
                for x in 0..24 {
                    if *g.get(x, y) {
                        pts.push([x as f64 + 0.5, y as f64 + 0.5]);
                    }
                }
            }
            let mut want = brute_force_hull(&pts);
            let mut got = hull.clone();
            want.sort_by(|a, b| a.partial_cmp(b).unwrap());
            got.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(got, want, "hull vertex set mismatch");
            // every on-pixel center is inside the hull
            for p in pts {
                assert!(point_in_hull(p, &hull));
            }
            // no three collinear hull vertices
            let n = hull.len();
            if n >= 3 {
                for i in 0..n {
                    let c = cross(hull[i], hull[(i + 1) % n], hull[(i + 2) % n]);
                    assert!(c > 0.0, "collinear or clockwise hull vertices");
                }
            }
        }
    }

    #[test]
    fn disjoint_squares_do_not_overlap() {
        assert!(!hulls_overlap(&square(0.0, 0.0, 1.0), &square(5.0, 5.0, 1.0)));
    }

    #[test]
    fn contained_square_overlaps() {
        assert!(hulls_overlap(&square(0.0, 0.0, 10.0), &square(4.0, 4.0, 1.0)));
    }

    #[test]
    fn touching_at_boundary_counts_as_overlap() {
        // shared edge
        assert!(hulls_overlap(&square(0.0, 0.0, 2.0), &square(2.0, 0.0, 2.0)));
        // shared single corner
        assert!(hulls_overlap(&square(0.0, 0.0, 2.0), &square(2.0, 2.0, 2.0)));
        // point on an edge
        assert!(hulls_overlap(&vec![[1.0, 0.0]], &square(0.0, 0.0, 2.0)));
        // identical points
        assert!(hulls_overlap(&vec![[1.0, 1.0]], &vec![[1.0, 1.0]]));
        assert!(!hulls_overlap(&vec![[1.0, 1.0]], &vec![[1.0, 1.5]]));
    }

    #[test]
    fn collinear_segments_respect_gaps() {
        let a = vec![[0.0, 0.0], [2.0, 0.0]];
        let b = vec![[3.0, 0.0], [5.0, 0.0]];
        let c = vec![[2.0, 0.0], [4.0, 0.0]];
        assert!(!hulls_overlap(&a, &b));
        assert!(hulls_overlap(&a, &c)); // touching endpoints
        assert!(hulls_overlap(&b, &c));
    }

    /// Dense rasterized intersection oracle on a 512^2 grid over the joint
    /// bounding box.
    fn raster_overlap_oracle(a: &[Point], b: &[Point]) -> bool {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in a.iter().chain(b.iter()) {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let n = 512;
        for iy in 0..n {
            for ix in 0..n {
                let p = [
                    lo[0] + (hi[0] - lo[0]) * (ix as f64 + 0.5) / n as f64,
                    lo[1] + (hi[1] - lo[1]) * (iy as f64 + 0.5) / n as f64,
                ];
                if point_in_hull(p, a) && point_in_hull(p, b) {
                    return true;
                }
            }
        }
        false
    }

    #[test]
    fn overlap_matches_rasterization_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let mut agreements = 0;
        for _ in 0..300 {
            let mut pa: Vec<Point> = (0..rng.gen_range(3..9))
                .map(|_| [rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)])
                .collect();
            let mut pb: Vec<Point> = (0..rng.gen_range(3..9))
                .map(|_| {
                    [rng.gen_range(30.0..130.0), rng.gen_range(30.0..130.0)]
                })
                .collect();
            let a = convex_hull(&mut pa);
            let b = convex_hull(&mut pb);
            let got = hulls_overlap(&a, &b);
            let want = raster_overlap_oracle(&a, &b);
            assert_eq!(got, want, "SAT {got} vs raster {want} for {a:?} / {b:?}");
            agreements += 1;
        }
        assert_eq!(agreements, 300);
    }
}
