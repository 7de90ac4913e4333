//! Mesh elements (intervals, axis-aligned rectangles, triangles) and the
//! split operations the refinement strategies are built from.
//!
//! All triangles are stored counterclockwise (positive signed area) and every
//! split preserves that orientation. Splits are pure functions returning the
//! child elements; tree bookkeeping lives in [`crate::refine`].

/// A point in the plane. One-dimensional code uses the x coordinate only.
pub type Point = [f64; 2];

/// Identifies a dyadic interval: level `j` and offset `n`, covering
/// `[n 2^-j, (n+1) 2^-j]` relative to the root interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DyadicId {
    pub level: u32,
    pub index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval1D {
    pub lo: f64,
    pub hi: f64,
    /// Present on intervals produced by dyadic splitting of a root interval.
    pub dyadic: Option<DyadicId>,
}

impl Interval1D {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval1D { lo, hi, dyadic: None }
    }

    /// A root interval carrying dyadic id (0, 0).
    pub fn root(lo: f64, hi: f64) -> Self {
        Interval1D { lo, hi, dyadic: Some(DyadicId { level: 0, index: 0 }) }
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Halves the interval. Children of a dyadic interval at (j, n) carry
    /// ids (j+1, 2n) and (j+1, 2n+1).
    pub fn split(&self) -> [Interval1D; 2] {
        let mid = self.midpoint();
        let child = |lo, hi, k| Interval1D {
            lo,
            hi,
            dyadic: self.dyadic.map(|d| DyadicId { level: d.level + 1, index: 2 * d.index + k }),
        };
        [child(self.lo, mid, 0), child(mid, self.hi, 1)]
    }
}

/// Axis-aligned rectangle `ix × iy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectElement {
    pub ix: Interval1D,
    pub iy: Interval1D,
}

/// Which side of a rectangle a split halves.
///
/// `HalveY` cuts along a horizontal line (a "horizontal split"): it leaves
/// `ix` intact and produces the lower and upper children. `HalveX` cuts along
/// a vertical line and produces the left and right children.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitAxis {
    HalveX,
    HalveY,
}

impl RectElement {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        RectElement { ix: Interval1D::new(x0, x1), iy: Interval1D::new(y0, y1) }
    }

    pub fn width(&self) -> f64 {
        self.ix.length()
    }

    pub fn height(&self) -> f64 {
        self.iy.length()
    }

    /// Children ordered left/right for `HalveX`, down/up for `HalveY`.
    pub fn split(&self, axis: SplitAxis) -> [RectElement; 2] {
        match axis {
            SplitAxis::HalveX => {
                let [l, r] = self.ix.split();
                [RectElement { ix: l, iy: self.iy }, RectElement { ix: r, iy: self.iy }]
            }
            SplitAxis::HalveY => {
                let [d, u] = self.iy.split();
                [RectElement { ix: self.ix, iy: d }, RectElement { ix: self.ix, iy: u }]
            }
        }
    }

    /// Quad-split into four congruent children, ordered
    /// down-left, down-right, up-left, up-right.
    pub fn quad_split(&self) -> [RectElement; 4] {
        let [l, r] = self.ix.split();
        let [d, u] = self.iy.split();
        [
            RectElement { ix: l, iy: d },
            RectElement { ix: r, iy: d },
            RectElement { ix: l, iy: u },
            RectElement { ix: r, iy: u },
        ]
    }
}

/// Triangle with counterclockwise vertices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriElement {
    pub vertices: [Point; 3],
    /// Index of the vertex created by the split that produced this triangle.
    /// Unset on root triangles.
    pub newest_vertex: Option<u8>,
    /// Number of splits separating this triangle from its root.
    pub generation: u32,
}

impl TriElement {
    pub fn new(vertices: [Point; 3]) -> Self {
        TriElement { vertices, newest_vertex: None, generation: 0 }
    }

    pub fn signed_area(&self) -> f64 {
        let [a, b, c] = self.vertices;
        0.5 * cross(a, b, c)
    }

    pub fn centroid(&self) -> Point {
        let [a, b, c] = self.vertices;
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn edge_lengths(&self) -> [f64; 3] {
        let [a, b, c] = self.vertices;
        // Edge i is opposite vertex i.
        [dist(b, c), dist(c, a), dist(a, b)]
    }

    /// Bisects from vertex `i` to the midpoint of the opposite edge.
    /// Children keep orientation; both record the midpoint as newest vertex
    /// and increment the generation.
    pub fn bisect(&self, i: usize) -> [TriElement; 2] {
        assert!(i < 3, "bisection vertex index out of range");
        let v = self.vertices;
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        let b = midpoint(v[j], v[k]);
        let gen = self.generation + 1;
        [
            TriElement { vertices: [v[i], v[j], b], newest_vertex: Some(2), generation: gen },
            TriElement { vertices: [v[i], b, v[k]], newest_vertex: Some(1), generation: gen },
        ]
    }

    /// Vertex opposite the longest edge; ties pick the smallest vertex index.
    pub fn longest_edge_vertex(&self) -> usize {
        let lens = self.edge_lengths();
        let mut best = 0;
        for i in 1..3 {
            if lens[i] > lens[best] {
                best = i;
            }
        }
        best
    }

    /// Splits into four similar children using the edge midpoints, ordered
    /// corner 0, corner 1, corner 2, center. Children have area `|T|/4`.
    pub fn quad_split(&self) -> [TriElement; 4] {
        let [a, b, c] = self.vertices;
        let (mab, mbc, mca) = (midpoint(a, b), midpoint(b, c), midpoint(c, a));
        let gen = self.generation + 1;
        let child = |vs| TriElement { vertices: vs, newest_vertex: None, generation: gen };
        [
            child([a, mab, mca]),
            child([mab, b, mbc]),
            child([mca, mbc, c]),
            child([mab, mbc, mca]),
        ]
    }
}

/// Isotropic split variants for triangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsoSplit {
    /// Four similar children (also available on rectangles).
    Quad,
    /// Bisection from the newest vertex; falls back to the longest edge on
    /// triangles that have none.
    NewestVertex,
    /// Bisection from the vertex opposite the longest edge.
    LongestEdge,
}

/// A mesh element of any supported kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Element {
    Interval(Interval1D),
    Rect(RectElement),
    Tri(TriElement),
}

impl Element {
    /// Lebesgue measure: length in 1D, area in 2D.
    pub fn area(&self) -> f64 {
        match self {
            Element::Interval(i) => i.length(),
            Element::Rect(r) => r.width() * r.height(),
            Element::Tri(t) => t.signed_area(),
        }
    }

    /// Diameter `h_T`.
    pub fn diameter(&self) -> f64 {
        match self {
            Element::Interval(i) => i.length(),
            Element::Rect(r) => r.width().hypot(r.height()),
            Element::Tri(t) => {
                let l = t.edge_lengths();
                l[0].max(l[1]).max(l[2])
            }
        }
    }

    /// Diameter `rho_T` of the largest inscribed ball: the length in 1D, the
    /// shorter side for rectangles, twice the inradius for triangles.
    pub fn inscribed(&self) -> f64 {
        match self {
            Element::Interval(i) => i.length(),
            Element::Rect(r) => r.width().min(r.height()),
            Element::Tri(t) => {
                let [a, b, c] = t.edge_lengths();
                4.0 * t.signed_area() / (a + b + c)
            }
        }
    }

    pub fn barycenter(&self) -> Point {
        match self {
            Element::Interval(i) => [i.midpoint(), 0.0],
            Element::Rect(r) => [r.ix.midpoint(), r.iy.midpoint()],
            Element::Tri(t) => t.centroid(),
        }
    }

    /// Closed membership test. Points on shared boundaries belong to every
    /// touching element; unique assignment is done by the pixel partitioning
    /// in [`crate::refine`], which gives ties to the lower/left (first) child.
    pub fn contains(&self, p: Point) -> bool {
        match self {
            Element::Interval(i) => i.lo <= p[0] && p[0] <= i.hi,
            Element::Rect(r) => {
                r.ix.lo <= p[0] && p[0] <= r.ix.hi && r.iy.lo <= p[1] && p[1] <= r.iy.hi
            }
            Element::Tri(t) => {
                let [a, b, c] = t.vertices;
                cross(a, b, p) >= 0.0 && cross(b, c, p) >= 0.0 && cross(c, a, p) >= 0.0
            }
        }
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        match self {
            Element::Interval(i) => ([i.lo, 0.0], [i.hi, 0.0]),
            Element::Rect(r) => ([r.ix.lo, r.iy.lo], [r.ix.hi, r.iy.hi]),
            Element::Tri(t) => {
                let mut lo = t.vertices[0];
                let mut hi = t.vertices[0];
                for v in &t.vertices[1..] {
                    lo = [lo[0].min(v[0]), lo[1].min(v[1])];
                    hi = [hi[0].max(v[0]), hi[1].max(v[1])];
                }
                (lo, hi)
            }
        }
    }

    /// Corner list, counterclockwise for 2D elements.
    pub fn corners(&self) -> Vec<Point> {
        match self {
            Element::Interval(i) => vec![[i.lo, 0.0], [i.hi, 0.0]],
            Element::Rect(r) => vec![
                [r.ix.lo, r.iy.lo],
                [r.ix.hi, r.iy.lo],
                [r.ix.hi, r.iy.hi],
                [r.ix.lo, r.iy.hi],
            ],
            Element::Tri(t) => t.vertices.to_vec(),
        }
    }

    pub fn generation(&self) -> u32 {
        match self {
            Element::Tri(t) => t.generation,
            Element::Interval(i) => i.dyadic.map_or(0, |d| d.level),
            Element::Rect(_) => 0,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Element::Interval(_) => "interval",
            Element::Rect(_) => "rect",
            Element::Tri(_) => "tri",
        }
    }
}

/// Applies an isotropic split to a triangle. Newest-vertex bisection on a
/// triangle without a newest vertex falls back to longest-edge bisection.
pub fn iso_split_tri(t: &TriElement, variant: IsoSplit) -> Vec<TriElement> {
    match variant {
        IsoSplit::Quad => t.quad_split().to_vec(),
        IsoSplit::NewestVertex => {
            let i = t.newest_vertex.map_or_else(|| t.longest_edge_vertex(), usize::from);
            t.bisect(i).to_vec()
        }
        IsoSplit::LongestEdge => t.bisect(t.longest_edge_vertex()).to_vec(),
    }
}

/// Initial partitions of a square domain into triangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RootTriangulation {
    /// Two triangles along the main diagonal (lower-right triangle first).
    Diagonal,
    /// Four triangles meeting at the center.
    CrissCross,
}

/// Triangulates the rectangle `r` by the chosen pattern.
pub fn triangulate_rect(r: &RectElement, pattern: RootTriangulation) -> Vec<TriElement> {
    let (x0, x1, y0, y1) = (r.ix.lo, r.ix.hi, r.iy.lo, r.iy.hi);
    match pattern {
        RootTriangulation::Diagonal => vec![
            TriElement::new([[x0, y0], [x1, y0], [x1, y1]]),
            TriElement::new([[x0, y0], [x1, y1], [x0, y1]]),
        ],
        RootTriangulation::CrissCross => {
            let c = [0.5 * (x0 + x1), 0.5 * (y0 + y1)];
            let v = [[x0, y0], [x1, y0], [x1, y1], [x0, y1]];
            (0..4).map(|i| TriElement::new([v[i], v[(i + 1) % 4], c])).collect()
        }
    }
}

/// Equilateral triangle of unit area centered at the origin.
pub fn unit_equilateral() -> TriElement {
    let side = 2.0 / 3f64.powf(0.25);
    let r_circ = side / 3f64.sqrt();
    TriElement::new([
        [0.0, r_circ],
        [-0.5 * side, -0.5 * r_circ],
        [0.5 * side, -0.5 * r_circ],
    ])
}

pub fn midpoint(a: Point, b: Point) -> Point {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Cross product of `b - a` and `p - a`; positive when `p` lies left of the
/// directed line `a -> b`.
pub fn cross(a: Point, b: Point, p: Point) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn interval_split_carries_dyadic_ids() {
        let root = Interval1D::root(0.0, 1.0);
        let [l, r] = root.split();
        assert_eq!(l.dyadic, Some(DyadicId { level: 1, index: 0 }));
        assert_eq!(r.dyadic, Some(DyadicId { level: 1, index: 1 }));
        let [_, rr] = r.split();
        assert_eq!(rr.dyadic, Some(DyadicId { level: 2, index: 3 }));
        assert_relative_eq!(rr.lo, 0.75);
        assert_relative_eq!(rr.hi, 1.0);
        // A dyadic interval at level j has length 2^-j of its root.
        assert_relative_eq!(rr.length(), 0.25);
    }

    #[test]
    fn unit_square_measures() {
        let sq = Element::Rect(RectElement::new(0.0, 1.0, 0.0, 1.0));
        assert_relative_eq!(sq.area(), 1.0);
        assert_relative_eq!(sq.diameter(), 2f64.sqrt());
        assert_relative_eq!(sq.inscribed(), 1.0);
    }

    #[test]
    fn unit_right_triangle_measures() {
        let t = Element::Tri(TriElement::new([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]));
        assert_relative_eq!(t.area(), 0.5);
        assert_relative_eq!(t.diameter(), 2f64.sqrt());
        assert_relative_eq!(t.inscribed(), 2.0 - 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn rect_split_children_tile_parent() {
        let r = RectElement::new(0.0, 2.0, 1.0, 2.0);
        for axis in [SplitAxis::HalveX, SplitAxis::HalveY] {
            let [a, b] = r.split(axis);
            let area = |r: RectElement| Element::Rect(r).area();
            assert_relative_eq!(area(a) + area(b), area(r));
            assert_relative_eq!(area(a), area(b));
        }
        let quads = r.quad_split();
        let total: f64 = quads.iter().map(|q| Element::Rect(*q).area()).sum();
        assert_relative_eq!(total, 2.0);
    }

    #[test]
    fn bisection_halves_area_and_keeps_orientation() {
        let t = TriElement::new([[0.0, 0.0], [3.0, 1.0], [1.0, 2.0]]);
        for i in 0..3 {
            let [c1, c2] = t.bisect(i);
            assert_relative_eq!(c1.signed_area(), 0.5 * t.signed_area(), epsilon = 1e-14);
            assert_relative_eq!(c2.signed_area(), 0.5 * t.signed_area(), epsilon = 1e-14);
            assert!(c1.signed_area() > 0.0 && c2.signed_area() > 0.0);
            assert_eq!(c1.generation, 1);
            // Newest vertex is the midpoint of the edge opposite vertex i.
            let b = midpoint(t.vertices[(i + 1) % 3], t.vertices[(i + 2) % 3]);
            assert_eq!(c1.vertices[usize::from(c1.newest_vertex.unwrap())], b);
            assert_eq!(c2.vertices[usize::from(c2.newest_vertex.unwrap())], b);
        }
    }

    #[test]
    fn quad_split_children_are_similar() {
        let t = TriElement::new([[0.0, 0.0], [4.0, 0.0], [1.0, 3.0]]);
        let children = t.quad_split();
        let parent_edges = {
            let mut e = t.edge_lengths();
            e.sort_by(f64::total_cmp);
            e
        };
        for c in &children {
            assert_relative_eq!(c.signed_area(), 0.25 * t.signed_area(), epsilon = 1e-13);
            assert!(c.signed_area() > 0.0);
            let mut e = c.edge_lengths();
            e.sort_by(f64::total_cmp);
            for (ce, pe) in e.iter().zip(parent_edges.iter()) {
                assert_relative_eq!(2.0 * ce, pe, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn longest_edge_bisection_of_unit_right_triangle() {
        let t = TriElement::new([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        // The hypotenuse is opposite vertex 0, so the cut runs from (0,0)
        // to (0.5, 0.5).
        assert_eq!(t.longest_edge_vertex(), 0);
        let [c1, _] = t.bisect(t.longest_edge_vertex());
        assert_eq!(c1.vertices[2], [0.5, 0.5]);
    }

    #[test]
    fn newest_vertex_falls_back_on_roots() {
        let t = TriElement::new([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let by_newest = iso_split_tri(&t, IsoSplit::NewestVertex);
        let by_longest = iso_split_tri(&t, IsoSplit::LongestEdge);
        assert_eq!(by_newest, by_longest);
    }

    #[test]
    fn root_triangulations_cover_the_square() {
        let r = RectElement::new(-2.0, 2.0, -2.0, 2.0);
        for pattern in [RootTriangulation::Diagonal, RootTriangulation::CrissCross] {
            let tris = triangulate_rect(&r, pattern);
            let total: f64 = tris.iter().map(|t| t.signed_area()).sum();
            assert_relative_eq!(total, 16.0);
            assert!(tris.iter().all(|t| t.signed_area() > 0.0));
            assert!(tris.iter().all(|t| t.newest_vertex.is_none()));
        }
    }

    #[test]
    fn unit_equilateral_has_unit_area() {
        let t = unit_equilateral();
        assert_relative_eq!(t.signed_area(), 1.0, epsilon = 1e-14);
        let e = t.edge_lengths();
        assert_relative_eq!(e[0], e[1], epsilon = 1e-14);
        assert_relative_eq!(e[1], e[2], epsilon = 1e-14);
    }

    #[test]
    fn closed_containment() {
        let t = Element::Tri(TriElement::new([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]));
        assert!(t.contains([0.5, 0.5])); // on the diagonal edge
        assert!(t.contains([0.9, 0.2]));
        assert!(!t.contains([0.2, 0.9]));
    }
}
