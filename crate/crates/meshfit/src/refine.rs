//! The greedy refinement engine: a partition tree over interval, rectangle
//! or triangle elements, a max-error priority queue, pluggable split
//! decision rules, and a compact bitstream codec for the tree structure.
//!
//! One refinement step selects the leaf with the largest local error,
//! decides how to split it (fixed for the isotropic strategies, by candidate
//! error comparison for the anisotropic ones), replaces it by its children
//! and enqueues their freshly fitted errors. Ties are deterministic
//! everywhere: the queue prefers the older leaf, rectangles fall back to a
//! horizontal cut and triangles to the smallest vertex index, so a run is
//! reproducible bit for bit.

use crate::geometry::{
    iso_split_tri, triangulate_rect, Element, Interval1D, IsoSplit, Point, RectElement,
    RootTriangulation, SplitAxis, TriElement,
};
use crate::localerr::{
    combine_errors, discrete_l2_project_subset, fit_lp, interpolate_linear, l2_project, lp_error,
    pixels_in, EstimatorConfig, LocalFit,
};
use crate::targets::TargetFunction;
use crate::{Error, Result};
use std::collections::BinaryHeap;

/// Which splits the greedy loop performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Dyadic interval halving.
    Greedy1d,
    /// Fixed four-way split of rectangles or triangles.
    IsoQuad,
    /// Triangle bisection from the most recently created vertex.
    IsoNewestVertex,
    /// Triangle bisection toward the longest edge.
    IsoLongestEdge,
    /// Rectangle halving along the axis chosen by candidate errors.
    AnisoRect,
    /// As [`Strategy::AnisoRect`] with the safety-split fallback.
    AnisoRectModified,
    /// Triangle bisection from the vertex chosen by candidate errors.
    AnisoTri,
    /// As [`Strategy::AnisoTri`] with the safety-split fallback.
    AnisoTriModified,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Greedy1d,
        Strategy::IsoQuad,
        Strategy::IsoNewestVertex,
        Strategy::IsoLongestEdge,
        Strategy::AnisoRect,
        Strategy::AnisoRectModified,
        Strategy::AnisoTri,
        Strategy::AnisoTriModified,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Greedy1d => "greedy_1d",
            Strategy::IsoQuad => "iso_quad",
            Strategy::IsoNewestVertex => "iso_newest_vertex",
            Strategy::IsoLongestEdge => "iso_longest_edge",
            Strategy::AnisoRect => "aniso_rect",
            Strategy::AnisoRectModified => "aniso_rect_modified",
            Strategy::AnisoTri => "aniso_tri",
            Strategy::AnisoTriModified => "aniso_tri_modified",
        }
    }

    pub fn parse(s: &str) -> Option<Strategy> {
        Strategy::ALL.into_iter().find(|k| k.name() == s)
    }

    fn code(&self) -> u8 {
        Strategy::ALL.iter().position(|k| k == self).unwrap() as u8
    }

    fn from_code(c: u8) -> Option<Strategy> {
        Strategy::ALL.get(c as usize).copied()
    }

    /// Element kind the strategy refines.
    pub fn element_kind(&self) -> &'static str {
        match self {
            Strategy::Greedy1d => "interval",
            Strategy::AnisoRect | Strategy::AnisoRectModified => "rectangle",
            Strategy::IsoQuad => "rectangle or triangle",
            _ => "triangle",
        }
    }

    fn accepts(&self, element: &Element) -> bool {
        match self {
            Strategy::Greedy1d => matches!(element, Element::Interval(_)),
            Strategy::AnisoRect | Strategy::AnisoRectModified => {
                matches!(element, Element::Rect(_))
            }
            Strategy::IsoQuad => matches!(element, Element::Rect(_) | Element::Tri(_)),
            _ => matches!(element, Element::Tri(_)),
        }
    }

    fn is_modified(&self) -> bool {
        matches!(self, Strategy::AnisoRectModified | Strategy::AnisoTriModified)
    }

    /// Split-code width in the bitstream: fixed splits need none, rectangle
    /// halvings one bit, triangle bisections two.
    fn split_code_bits(&self) -> u32 {
        match self {
            Strategy::Greedy1d
            | Strategy::IsoQuad
            | Strategy::IsoNewestVertex
            | Strategy::IsoLongestEdge => 0,
            Strategy::AnisoRect | Strategy::AnisoRectModified => 1,
            Strategy::AnisoTri | Strategy::AnisoTriModified => 2,
        }
    }
}

/// Quantity the anisotropic split decisions compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecisionNorm {
    /// The configured error norm itself (same estimator as the queue).
    Lp,
    /// The `L^2` projection error regardless of the run norm.
    L2Projection,
    /// Max residual of vertex interpolation (triangles, degree 2 only),
    /// combined across children by summation.
    LinfInterpolation,
}

impl DecisionNorm {
    pub fn name(&self) -> &'static str {
        match self {
            DecisionNorm::Lp => "lp",
            DecisionNorm::L2Projection => "l2_projection",
            DecisionNorm::LinfInterpolation => "linf_interpolation",
        }
    }

    pub fn parse(s: &str) -> Option<DecisionNorm> {
        [
            DecisionNorm::Lp,
            DecisionNorm::L2Projection,
            DecisionNorm::LinfInterpolation,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

/// Forced split used by the modified strategies when no candidate passes
/// the error-reduction test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SafetyKind {
    /// Bisect toward the longest edge (default; needs no lineage state).
    LongestEdge,
    /// Bisect from the most recently created vertex; roots fall back to the
    /// longest edge.
    NewestVertex,
}

impl SafetyKind {
    pub fn name(&self) -> &'static str {
        match self {
            SafetyKind::LongestEdge => "longest_edge",
            SafetyKind::NewestVertex => "newest_vertex",
        }
    }

    pub fn parse(s: &str) -> Option<SafetyKind> {
        [SafetyKind::LongestEdge, SafetyKind::NewestVertex]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

/// Full configuration of a refinement run.
#[derive(Debug, Clone)]
pub struct RefineConfig {
    /// Fits are polynomials of total degree `< m`.
    pub m: usize,
    /// Error norm exponent; `f64::INFINITY` for the sup norm.
    pub p: f64,
    pub strategy: Strategy,
    pub decision_norm: DecisionNorm,
    /// Error-reduction factor of the modified strategies, in (0,1).
    pub rho: f64,
    pub safety: SafetyKind,
    /// Pattern used to triangulate a rectangular domain for triangle roots.
    pub root_triangulation: RootTriangulation,
    pub estimator: EstimatorConfig,
    /// Refine until the leaf count reaches this.
    pub max_n: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            m: 2,
            p: 2.0,
            strategy: Strategy::IsoNewestVertex,
            decision_norm: DecisionNorm::Lp,
            rho: std::f64::consts::FRAC_1_SQRT_2,
            safety: SafetyKind::LongestEdge,
            root_triangulation: RootTriangulation::Diagonal,
            estimator: EstimatorConfig::default(),
            max_n: 256,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.m) {
            return Err(Error::Config(format!("degree bound m={} outside 1..=3", self.m)));
        }
        if !(self.p >= 1.0) {
            return Err(Error::Config(format!("norm exponent p={} below 1", self.p)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho={} outside (0,1)", self.rho)));
        }
        if self.decision_norm == DecisionNorm::LinfInterpolation {
            let tri = matches!(
                self.strategy,
                Strategy::AnisoTri
                    | Strategy::AnisoTriModified
                    | Strategy::IsoNewestVertex
                    | Strategy::IsoLongestEdge
            );
            if !tri || self.m != 2 {
                return Err(Error::Config(
                    "interpolation decisions need a triangle strategy and m=2".into(),
                ));
            }
        }
        if self.max_n == 0 {
            return Err(Error::Config("max_n must be positive".into()));
        }
        Ok(())
    }

    /// Estimator with the sharpness flag taken from the target.
    fn estimator_for(&self, f: &TargetFunction) -> EstimatorConfig {
        self.estimator.with_sharpness(f.sharpness_hint())
    }
}

/// How an internal node was split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitLabel {
    /// Interval halving.
    Halve,
    /// Four-way split.
    Quad,
    /// Rectangle halving along the given axis.
    Axis(SplitAxis),
    /// Triangle bisection from the given vertex.
    Vertex(u8),
}

/// One node of the partition tree.
#[derive(Debug, Clone)]
pub struct TreeNode {
    pub element: Element,
    pub parent: Option<usize>,
    /// Child ids in split order; empty for leaves.
    pub children: Vec<usize>,
    /// Set on internal nodes.
    pub split: Option<SplitLabel>,
    /// True when the split that created this node was a safety split.
    pub from_safety: bool,
    /// Cached fit and local error, computed when the node became a leaf.
    pub fit: LocalFit,
    pub creation_index: u64,
    /// Number of ancestors.
    pub generation: u32,
    /// Pixel indices owned by this node in raster runs.
    pub pixels: Option<Vec<u32>>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Priority-queue entry; larger error wins, ties go to the older leaf.
struct QueueEntry {
    error: f64,
    creation_index: u64,
    node: usize,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl Eq for QueueEntry {}
impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.creation_index.cmp(&self.creation_index))
    }
}

/// Arena-backed split tree whose leaves tile the root domain.
pub struct PartitionTree {
    nodes: Vec<TreeNode>,
    roots: Vec<usize>,
    queue: BinaryHeap<QueueEntry>,
    leaf_count: usize,
    next_creation: u64,
}

impl PartitionTree {
    /// Builds the tree over the given root elements, fitting each root.
    pub fn new(roots: Vec<Element>, f: &TargetFunction, cfg: &RefineConfig) -> Result<Self> {
        cfg.validate()?;
        if roots.is_empty() {
            return Err(Error::Config("at least one root element required".into()));
        }
        for r in &roots {
            if !cfg.strategy.accepts(r) {
                return Err(Error::Config(format!(
                    "strategy {} refines {}, got a {} root",
                    cfg.strategy.name(),
                    cfg.strategy.element_kind(),
                    r.kind_name()
                )));
            }
        }
        if f.raster().is_some() {
            if cfg.p != 2.0 {
                return Err(Error::Config("raster targets use the discrete l2 error; set p=2".into()));
            }
            if cfg.decision_norm == DecisionNorm::LinfInterpolation {
                return Err(Error::Config(
                    "interpolation decisions need an analytic target".into(),
                ));
            }
        }
        let est = cfg.estimator_for(f);
        let mut tree = PartitionTree {
            nodes: Vec::new(),
            roots: Vec::new(),
            queue: BinaryHeap::new(),
            leaf_count: 0,
            next_creation: 0,
        };
        for element in roots {
            // Pixels whose center no earlier root claimed (closed containment).
            let pixels = f.raster().map(|img| {
                let mut own = pixels_in(img, &element);
                own.retain(|&pix| {
                    !tree.nodes.iter().any(|n| n.pixels.as_ref().is_some_and(|ps| ps.binary_search(&pix).is_ok()))
                });
                own
            });
            let fit = leaf_fit(f, &element, pixels.as_deref(), cfg, &est);
            let id = tree.push_node(element, None, 0, false, fit, pixels);
            tree.roots.push(id);
        }
        Ok(tree)
    }

    fn push_node(
        &mut self,
        element: Element,
        parent: Option<usize>,
        generation: u32,
        from_safety: bool,
        fit: LocalFit,
        pixels: Option<Vec<u32>>,
    ) -> usize {
        let id = self.nodes.len();
        let creation_index = self.next_creation;
        self.next_creation += 1;
        self.queue.push(QueueEntry { error: fit.error_value, creation_index, node: id });
        self.nodes.push(TreeNode {
            element,
            parent,
            children: Vec::new(),
            split: None,
            from_safety,
            fit,
            creation_index,
            generation,
            pixels,
        });
        self.leaf_count += 1;
        id
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    /// Leaf ids in creation order.
    pub fn leaf_ids(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_leaf()).collect()
    }

    /// The leaf with the largest cached error; ties go to the oldest leaf.
    /// Discards queue entries of already-split nodes on the way.
    pub fn select_leaf(&mut self) -> Option<usize> {
        while let Some(top) = self.queue.peek() {
            if self.nodes[top.node].is_leaf() {
                return Some(top.node);
            }
            self.queue.pop();
        }
        None
    }

    /// Combined error over all leaves: `(sum e^p)^(1/p)`, max for `p = inf`.
    pub fn global_error(&self, p: f64) -> f64 {
        let errors: Vec<f64> = self
            .nodes
            .iter()
            .filter(|n| n.is_leaf())
            .map(|n| n.fit.error_value)
            .collect();
        combine_errors(&errors, p)
    }

    /// Largest leaf error (the queue head key).
    pub fn max_leaf_error(&self) -> f64 {
        self.nodes
            .iter()
            .filter(|n| n.is_leaf())
            .map(|n| n.fit.error_value)
            .fold(0.0, f64::max)
    }

    /// Fraction of internal nodes created by safety splits.
    pub fn safety_fraction(&self) -> f64 {
        let internal = self.nodes.iter().filter(|n| !n.is_leaf()).count();
        if internal == 0 {
            return 0.0;
        }
        let safety = self
            .nodes
            .iter()
            .filter(|n| !n.is_leaf() && matches!(n.split_was_safety(), true))
            .count();
        safety as f64 / internal as f64
    }
}

impl TreeNode {
    /// Whether this node's own split was a safety split (false for leaves).
    fn split_was_safety(&self) -> bool {
        self.split.is_some() && self.split_safety
    }
}

/// Outcome of one split decision on a rectangle.
#[derive(Debug, Clone, Copy)]
pub struct RectDecision {
    pub axis: SplitAxis,
    pub safety: bool,
    /// Candidate errors: after a horizontal cut (halved y) and after a
    /// vertical cut (halved x).
    pub candidates: [f64; 2],
}

/// Outcome of one split decision on a triangle.
#[derive(Debug, Clone, Copy)]
pub struct TriDecision {
    pub vertex: u8,
    pub safety: bool,
    /// Candidate quantities for bisection from each vertex.
    pub candidates: [f64; 3],
}

/// Decision quantity of a candidate child under the configured norm.
fn child_decision_error(
    f: &impl Fn(Point) -> f64,
    element: &Element,
    cfg: &RefineConfig,
) -> f64 {
    match cfg.decision_norm {
        DecisionNorm::Lp => lp_error(f, element, cfg.m, cfg.p, &cfg.estimator),
        DecisionNorm::L2Projection => l2_project(f, element, cfg.m, &cfg.estimator).error_value,
        DecisionNorm::LinfInterpolation => match element {
            Element::Tri(t) => interpolate_linear(f, t, &cfg.estimator).error_value,
            _ => unreachable!("validated: interpolation decisions are triangle-only"),
        },
    }
}

/// Combines child decision quantities: `l^p` (max for sup norm) for the
/// error norms, plain summation for the interpolation quantity.
fn combine_candidates(children: &[f64], cfg: &RefineConfig) -> f64 {
    match cfg.decision_norm {
        DecisionNorm::Lp => combine_errors(children, cfg.p),
        DecisionNorm::L2Projection => combine_errors(children, 2.0),
        DecisionNorm::LinfInterpolation => children.iter().sum(),
    }
}

/// The decision quantity of the element itself, for the error-reduction test
/// of the modified strategies.
pub fn parent_decision_error(
    f: &impl Fn(Point) -> f64,
    element: &Element,
    cfg: &RefineConfig,
) -> f64 {
    child_decision_error(f, element, cfg)
}

/// Axis choice for a rectangle. The plain rule cuts horizontally (halving y)
/// when that candidate error is no worse; the modified rule only follows it
/// when the better candidate improves on the parent by the factor `rho`, and
/// otherwise halves the longer side as a safety split.
pub fn decide_rect(
    f: impl Fn(Point) -> f64,
    rect: &RectElement,
    parent_error: f64,
    cfg: &RefineConfig,
) -> RectDecision {
    let [down, up] = rect.split(SplitAxis::HalveY);
    let [left, right] = rect.split(SplitAxis::HalveX);
    let e_h = combine_candidates(
        &[
            child_decision_error(&f, &Element::Rect(down), cfg),
            child_decision_error(&f, &Element::Rect(up), cfg),
        ],
        cfg,
    );
    let e_v = combine_candidates(
        &[
            child_decision_error(&f, &Element::Rect(left), cfg),
            child_decision_error(&f, &Element::Rect(right), cfg),
        ],
        cfg,
    );
    let greedy_axis = if e_h <= e_v { SplitAxis::HalveY } else { SplitAxis::HalveX };
    if cfg.strategy.is_modified() && e_h.min(e_v) > cfg.rho * parent_error {
        // No candidate reduces the error enough: halve the longer side.
        let axis = if rect.width() <= rect.height() { SplitAxis::HalveY } else { SplitAxis::HalveX };
        return RectDecision { axis, safety: true, candidates: [e_h, e_v] };
    }
    RectDecision { axis: greedy_axis, safety: false, candidates: [e_h, e_v] }
}

/// Bisection vertex for a triangle. The plain rule takes the candidate with
/// the smallest combined quantity (ties to the smallest vertex index); the
/// modified rule falls back to the configured safety split when no candidate
/// reaches `rho` times the parent quantity.
pub fn decide_tri(
    f: impl Fn(Point) -> f64,
    tri: &TriElement,
    parent_error: f64,
    cfg: &RefineConfig,
) -> TriDecision {
    let mut candidates = [0.0; 3];
    for i in 0..3 {
        let [a, b] = tri.bisect(i);
        candidates[i] = combine_candidates(
            &[
                child_decision_error(&f, &Element::Tri(a), cfg),
                child_decision_error(&f, &Element::Tri(b), cfg),
            ],
            cfg,
        );
    }
    let mut best = 0;
    for i in 1..3 {
        if candidates[i] < candidates[best] {
            best = i;
        }
    }
    if cfg.strategy.is_modified() && candidates[best] > cfg.rho * parent_error {
        let vertex = safety_vertex(tri, cfg.safety);
        return TriDecision { vertex, safety: true, candidates };
    }
    TriDecision { vertex: best as u8, safety: false, candidates }
}

fn safety_vertex(tri: &TriElement, kind: SafetyKind) -> u8 {
    match kind {
        SafetyKind::LongestEdge => tri.longest_edge_vertex() as u8,
        // Roots carry no lineage; fall back to the longest edge.
        SafetyKind::NewestVertex => {
            tri.newest_vertex.unwrap_or(tri.longest_edge_vertex() as u8)
        }
    }
}

/// What one refinement step did.
#[derive(Debug, Clone)]
pub struct SplitReport {
    pub node: usize,
    pub label: SplitLabel,
    pub safety: bool,
    pub parent_error: f64,
    pub child_errors: Vec<f64>,
}

/// Fit of a leaf for the queue: the configured norm for analytic targets,
/// the discrete projection over owned pixels for raster targets.
fn leaf_fit(
    f: &TargetFunction,
    element: &Element,
    pixels: Option<&[u32]>,
    cfg: &RefineConfig,
    est: &EstimatorConfig,
) -> LocalFit {
    match (f.raster(), pixels) {
        (Some(img), Some(pix)) => discrete_l2_project_subset(img, pix, element, cfg.m),
        _ => fit_lp(|q| f.eval(q), element, cfg.m, cfg.p, est),
    }
}

/// Candidate decision quantity for raster runs: discrete projection residual
/// over the pixels the child would own.
fn raster_child_error(
    img: &crate::targets::RasterImage,
    parent_pixels: &[u32],
    children: &[Element],
    child: usize,
    m: usize,
) -> f64 {
    let split = split_pixels(img, parent_pixels, children);
    discrete_l2_project_subset(img, &split[child], &children[child], m).error_value
}

/// Distributes pixels to children by first-match closed containment, in
/// child order; centers that miss every child (a float-rounding corner) go
/// to the first child so no pixel is lost.
fn split_pixels(
    img: &crate::targets::RasterImage,
    pixels: &[u32],
    children: &[Element],
) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = vec![Vec::new(); children.len()];
    for &pix in pixels {
        let col = (pix as usize) % img.width;
        let row = (pix as usize) / img.width;
        let center = img.pixel_center(col, row);
        let slot = children
            .iter()
            .position(|c| c.contains(center))
            .unwrap_or(0);
        out[slot].push(pix);
    }
    out
}

/// Splits the current worst leaf. Returns what was done; fails when the tree
/// is empty or misconfigured for its target.
pub fn refine_step(
    tree: &mut PartitionTree,
    f: &TargetFunction,
    cfg: &RefineConfig,
) -> Result<SplitReport> {
    let est = cfg.estimator_for(f);
    let node = tree
        .select_leaf()
        .ok_or_else(|| Error::Config("refinement on an empty tree".into()))?;
    let element = tree.nodes[node].element;
    let parent_error = tree.nodes[node].fit.error_value;
    let generation = tree.nodes[node].generation;
    let pixels = tree.nodes[node].pixels.take();

    // Decide the split.
    let eval = |q: Point| f.eval(q);
    let (children, label, safety): (Vec<Element>, SplitLabel, bool) = match (cfg.strategy, element)
    {
        (Strategy::Greedy1d, Element::Interval(iv)) => (
            iv.split().into_iter().map(Element::Interval).collect(),
            SplitLabel::Halve,
            false,
        ),
        (Strategy::IsoQuad, Element::Rect(r)) => (
            r.quad_split().into_iter().map(Element::Rect).collect(),
            SplitLabel::Quad,
            false,
        ),
        (Strategy::IsoQuad, Element::Tri(t)) => (
            t.quad_split().into_iter().map(Element::Tri).collect(),
            SplitLabel::Quad,
            false,
        ),
        (Strategy::IsoNewestVertex, Element::Tri(t)) => {
            let v = safety_vertex(&t, SafetyKind::NewestVertex);
            (
                t.bisect(v as usize).into_iter().map(Element::Tri).collect(),
                SplitLabel::Vertex(v),
                false,
            )
        }
        (Strategy::IsoLongestEdge, Element::Tri(t)) => {
            let v = t.longest_edge_vertex() as u8;
            (
                t.bisect(v as usize).into_iter().map(Element::Tri).collect(),
                SplitLabel::Vertex(v),
                false,
            )
        }
        (Strategy::AnisoRect | Strategy::AnisoRectModified, Element::Rect(r)) => {
            let decision = match (f.raster(), &pixels) {
                (Some(img), Some(pix)) => decide_rect_raster(img, pix, &r, parent_error, cfg),
                _ => {
                    let dcfg = RefineConfig { estimator: est, ..cfg.clone() };
                    let parent_q = decision_parent_quantity(&eval, &Element::Rect(r), parent_error, &dcfg);
                    decide_rect(eval, &r, parent_q, &dcfg)
                }
            };
            (
                r.split(decision.axis).into_iter().map(Element::Rect).collect(),
                SplitLabel::Axis(decision.axis),
                decision.safety,
            )
        }
        (Strategy::AnisoTri | Strategy::AnisoTriModified, Element::Tri(t)) => {
            let decision = match (f.raster(), &pixels) {
                (Some(img), Some(pix)) => decide_tri_raster(img, pix, &t, parent_error, cfg),
                _ => {
                    let dcfg = RefineConfig { estimator: est, ..cfg.clone() };
                    let parent_q = decision_parent_quantity(&eval, &Element::Tri(t), parent_error, &dcfg);
                    decide_tri(eval, &t, parent_q, &dcfg)
                }
            };
            (
                t.bisect(decision.vertex as usize)
                    .into_iter()
                    .map(Element::Tri)
                    .collect(),
                SplitLabel::Vertex(decision.vertex),
                decision.safety,
            )
        }
        (s, e) => {
            return Err(Error::Config(format!(
                "strategy {} cannot split a {}",
                s.name(),
                e.kind_name()
            )))
        }
    };

    // Attach the children with fresh fits.
    let child_pixels: Vec<Option<Vec<u32>>> = match (f.raster(), pixels) {
        (Some(img), Some(pix)) => split_pixels(img, &pix, &children).into_iter().map(Some).collect(),
        _ => children.iter().map(|_| None).collect(),
    };
    let mut child_ids = Vec::with_capacity(children.len());
    let mut child_errors = Vec::with_capacity(children.len());
    for (child, pix) in children.into_iter().zip(child_pixels) {
        let fit = leaf_fit(f, &child, pix.as_deref(), cfg, &est);
        child_errors.push(fit.error_value);
        let id = tree.push_node(child, Some(node), generation + 1, safety, fit, pix);
        child_ids.push(id);
    }
    // The parent stops being a leaf: its queue entry is discarded lazily.
    let n_children = child_ids.len();
    tree.nodes[node].children = child_ids;
    tree.nodes[node].split = Some(label);
    tree.leaf_count -= 1;
    debug_assert!(n_children >= 2);
    Ok(SplitReport { node, label, safety, parent_error, child_errors })
}

/// Parent quantity for the modified rule's test, matching the decision norm:
/// the cached queue error when the decision norm is the run norm, otherwise
/// recomputed in the decision quantity.
fn decision_parent_quantity(
    f: &impl Fn(Point) -> f64,
    element: &Element,
    cached: f64,
    cfg: &RefineConfig,
) -> f64 {
    match cfg.decision_norm {
        DecisionNorm::Lp => cached,
        _ => parent_decision_error(f, element, cfg),
    }
}

fn decide_rect_raster(
    img: &crate::targets::RasterImage,
    pixels: &[u32],
    rect: &RectElement,
    parent_error: f64,
    cfg: &RefineConfig,
) -> RectDecision {
    let h: Vec<Element> = rect.split(SplitAxis::HalveY).into_iter().map(Element::Rect).collect();
    let v: Vec<Element> = rect.split(SplitAxis::HalveX).into_iter().map(Element::Rect).collect();
    let e_h = combine_errors(
        &[
            raster_child_error(img, pixels, &h, 0, cfg.m),
            raster_child_error(img, pixels, &h, 1, cfg.m),
        ],
        2.0,
    );
    let e_v = combine_errors(
        &[
            raster_child_error(img, pixels, &v, 0, cfg.m),
            raster_child_error(img, pixels, &v, 1, cfg.m),
        ],
        2.0,
    );
    let greedy_axis = if e_h <= e_v { SplitAxis::HalveY } else { SplitAxis::HalveX };
    if cfg.strategy.is_modified() && e_h.min(e_v) > cfg.rho * parent_error {
        let axis = if rect.width() <= rect.height() { SplitAxis::HalveY } else { SplitAxis::HalveX };
        return RectDecision { axis, safety: true, candidates: [e_h, e_v] };
    }
    RectDecision { axis: greedy_axis, safety: false, candidates: [e_h, e_v] }
}

fn decide_tri_raster(
    img: &crate::targets::RasterImage,
    pixels: &[u32],
    tri: &TriElement,
    parent_error: f64,
    cfg: &RefineConfig,
) -> TriDecision {
    let mut candidates = [0.0; 3];
    for i in 0..3 {
        let pair: Vec<Element> = tri.bisect(i).into_iter().map(Element::Tri).collect();
        candidates[i] = combine_errors(
            &[
                raster_child_error(img, pixels, &pair, 0, cfg.m),
                raster_child_error(img, pixels, &pair, 1, cfg.m),
            ],
            2.0,
        );
    }
    let mut best = 0;
    for i in 1..3 {
        if candidates[i] < candidates[best] {
            best = i;
        }
    }
    if cfg.strategy.is_modified() && candidates[best] > cfg.rho * parent_error {
        let vertex = safety_vertex(tri, cfg.safety);
        return TriDecision { vertex, safety: true, candidates };
    }
    TriDecision { vertex: best as u8, safety: false, candidates }
}

/// One sample of the run trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    /// Leaf count.
    pub n: usize,
    /// Global error in the run norm.
    pub error: f64,
    /// Largest leaf error.
    pub eta: f64,
}

/// A finished refinement run.
pub struct RunOutcome {
    pub tree: PartitionTree,
    pub trace: Vec<TraceEntry>,
    pub safety_splits: usize,
    pub total_splits: usize,
}

/// Default root partition of the target's domain for a strategy.
pub fn initial_partition(f: &TargetFunction, cfg: &RefineConfig) -> Result<Vec<Element>> {
    let domain = f.domain();
    Ok(match (cfg.strategy, domain) {
        (Strategy::Greedy1d, Element::Interval(iv)) => {
            vec![Element::Interval(Interval1D::root(iv.lo, iv.hi))]
        }
        (Strategy::Greedy1d, _) => {
            return Err(Error::Config("greedy_1d needs an interval target".into()))
        }
        (Strategy::AnisoRect | Strategy::AnisoRectModified, Element::Rect(r)) => {
            vec![Element::Rect(r)]
        }
        (Strategy::IsoQuad, Element::Rect(r)) => vec![Element::Rect(r)],
        (_, Element::Rect(r)) => triangulate_rect(&r, cfg.root_triangulation)
            .into_iter()
            .map(Element::Tri)
            .collect(),
        (s, d) => {
            return Err(Error::Config(format!(
                "no default partition of a {} domain for {}",
                d.kind_name(),
                s.name()
            )))
        }
    })
}

/// Greedy refinement until `cfg.max_n` leaves, from the default root
/// partition of the target's domain.
pub fn run_to_n(f: &TargetFunction, cfg: &RefineConfig) -> Result<RunOutcome> {
    let roots = initial_partition(f, cfg)?;
    run_to_n_with_roots(f, cfg, roots)
}

/// Greedy refinement from explicit roots. The trace records every step up
/// to 1024 leaves, then geometric checkpoints at ratio 2^(1/4) (hitting the
/// powers of two exactly), and always the final state.
pub fn run_to_n_with_roots(
    f: &TargetFunction,
    cfg: &RefineConfig,
    roots: Vec<Element>,
) -> Result<RunOutcome> {
    let mut tree = PartitionTree::new(roots, f, cfg)?;
    if cfg.max_n < tree.leaf_count() {
        return Err(Error::Config(format!(
            "max_n={} below the initial leaf count {}",
            cfg.max_n,
            tree.leaf_count()
        )));
    }
    let mut trace = Vec::new();
    let mut record = |tree: &PartitionTree, trace: &mut Vec<TraceEntry>| {
        trace.push(TraceEntry {
            n: tree.leaf_count(),
            error: tree.global_error(cfg.p),
            eta: tree.max_leaf_error(),
        });
    };
    record(&tree, &mut trace);
    let mut checkpoint_exp = 0u32;
    let mut safety_splits = 0;
    let mut total_splits = 0;
    while tree.leaf_count() < cfg.max_n {
        let report = refine_step(&mut tree, f, cfg)?;
        total_splits += 1;
        safety_splits += report.safety as usize;
        let n = tree.leaf_count();
        if n < 1024 {
            record(&tree, &mut trace);
        } else {
            // Checkpoints at round(1024 * 2^(k/4)): every 4th is a power of 2.
            let mut cp = (1024.0 * 2f64.powf(checkpoint_exp as f64 / 4.0)).round() as usize;
            if n >= cp || n >= cfg.max_n {
                record(&tree, &mut trace);
                while n >= cp {
                    checkpoint_exp += 1;
                    cp = (1024.0 * 2f64.powf(checkpoint_exp as f64 / 4.0)).round() as usize;
                }
            }
        }
    }
    if trace.last().map(|t| t.n) != Some(tree.leaf_count()) {
        record(&tree, &mut trace);
    }
    Ok(RunOutcome { tree, trace, safety_splits, total_splits })
}

const STREAM_MAGIC: &[u8; 4] = b"MFT1";

struct BitWriter {
    bytes: Vec<u8>,
    used: u32,
}

impl BitWriter {
    fn new() -> Self {
        BitWriter { bytes: Vec::new(), used: 0 }
    }

    fn push(&mut self, bit: bool) {
        if self.used % 8 == 0 {
            self.bytes.push(0);
        }
        if bit {
            let i = self.bytes.len() - 1;
            self.bytes[i] |= 0x80 >> (self.used % 8);
        }
        self.used += 1;
    }

    fn push_code(&mut self, value: u8, bits: u32) {
        for k in (0..bits).rev() {
            self.push(value >> k & 1 == 1);
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u32,
    limit: u32,
}

impl<'a> BitReader<'a> {
    fn read(&mut self) -> Result<bool> {
        if self.pos >= self.limit {
            return Err(Error::Decode {
                bit: self.pos as usize,
                reason: "stream ends inside the tree structure".into(),
            });
        }
        let byte = self.bytes[(self.pos / 8) as usize];
        let bit = byte & (0x80 >> (self.pos % 8)) != 0;
        self.pos += 1;
        Ok(bit)
    }

    fn read_code(&mut self, bits: u32) -> Result<u8> {
        let mut v = 0;
        for _ in 0..bits {
            v = v << 1 | self.read()? as u8;
        }
        Ok(v)
    }
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_bits().to_be_bytes());
}

fn read_f64(bytes: &[u8], at: &mut usize) -> Result<f64> {
    let end = *at + 8;
    if end > bytes.len() {
        return Err(Error::Decode { bit: *at * 8, reason: "truncated header float".into() });
    }
    let v = f64::from_bits(u64::from_be_bytes(bytes[*at..end].try_into().unwrap()));
    *at = end;
    Ok(v)
}

fn read_u8(bytes: &[u8], at: &mut usize, what: &str) -> Result<u8> {
    if *at >= bytes.len() {
        return Err(Error::Decode { bit: *at * 8, reason: format!("truncated header: {what}") });
    }
    let v = bytes[*at];
    *at += 1;
    Ok(v)
}

/// Serializes the tree: a header with strategy, degree and full root
/// geometry, then the structure as a depth-first preorder bitstream with one
/// leaf/internal bit per node and a per-strategy split code (none for fixed
/// splits, one bit for the rectangle axis, two for the bisection vertex).
/// An N-leaf binary tree costs 2N-1 structure bits, so 1D trees stay within
/// 2N bits, rectangle trees within 3N and triangle trees within 4N.
pub fn encode_tree(tree: &PartitionTree, strategy: Strategy, m: usize) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(STREAM_MAGIC);
    out.push(strategy.code());
    out.push(m as u8);
    out.push(tree.roots.len() as u8);
    for &root in &tree.roots {
        match &tree.nodes[root].element {
            Element::Interval(iv) => {
                out.push(0);
                push_f64(&mut out, iv.lo);
                push_f64(&mut out, iv.hi);
            }
            Element::Rect(r) => {
                out.push(1);
                for v in [r.ix.lo, r.ix.hi, r.iy.lo, r.iy.hi] {
                    push_f64(&mut out, v);
                }
            }
            Element::Tri(t) => {
                out.push(2);
                for v in t.vertices {
                    push_f64(&mut out, v[0]);
                    push_f64(&mut out, v[1]);
                }
                out.push(t.newest_vertex.map_or(255, |v| v));
            }
        }
    }
    let mut bits = BitWriter::new();
    let code_bits = strategy.split_code_bits();
    // Depth-first preorder; children pushed in reverse so they pop in order.
    let mut stack: Vec<usize> = tree.roots.iter().rev().copied().collect();
    while let Some(id) = stack.pop() {
        let node = &tree.nodes[id];
        bits.push(!node.is_leaf());
        if let Some(label) = node.split {
            match label {
                SplitLabel::Halve | SplitLabel::Quad => {}
                SplitLabel::Axis(a) => bits.push(a == SplitAxis::HalveY),
                SplitLabel::Vertex(v) => bits.push_code(v, code_bits.max(2)),
            }
            stack.extend(node.children.iter().rev());
        }
    }
    out.extend_from_slice(&bits.used.to_be_bytes());
    out.extend_from_slice(&bits.bytes);
    out
}

/// A tree reconstructed from a bitstream: geometry and structure only, with
/// zeroed fits (errors are not part of the stream).
pub struct DecodedTree {
    pub tree: PartitionTree,
    pub strategy: Strategy,
    pub m: usize,
}

/// Parses [`encode_tree`]'s output. Errors carry the bit offset within the
/// structure payload (header errors count bytes as bits from the start).
pub fn decode_tree(bytes: &[u8]) -> Result<DecodedTree> {
    if bytes.len() < 4 || &bytes[..4] != STREAM_MAGIC {
        return Err(Error::Decode { bit: 0, reason: "bad magic; not a tree stream".into() });
    }
    let mut at = 4usize;
    let strategy = Strategy::from_code(read_u8(bytes, &mut at, "strategy")?)
        .ok_or(Error::Decode { bit: 32, reason: "unknown strategy code".into() })?;
    let m = read_u8(bytes, &mut at, "degree")? as usize;
    if !(1..=3).contains(&m) {
        return Err(Error::Decode { bit: 40, reason: format!("degree {m} outside 1..=3") });
    }
    let root_count = read_u8(bytes, &mut at, "root count")? as usize;
    if root_count == 0 {
        return Err(Error::Decode { bit: 48, reason: "zero roots".into() });
    }
    let mut roots = Vec::with_capacity(root_count);
    for _ in 0..root_count {
        let kind = read_u8(bytes, &mut at, "element kind")?;
        let element = match kind {
            0 => {
                let lo = read_f64(bytes, &mut at)?;
                let hi = read_f64(bytes, &mut at)?;
                Element::Interval(Interval1D::root(lo, hi))
            }
            1 => {
                let x0 = read_f64(bytes, &mut at)?;
                let x1 = read_f64(bytes, &mut at)?;
                let y0 = read_f64(bytes, &mut at)?;
                let y1 = read_f64(bytes, &mut at)?;
                Element::Rect(RectElement::new(x0, x1, y0, y1))
            }
            2 => {
                let mut vs = [[0.0; 2]; 3];
                for v in vs.iter_mut() {
                    v[0] = read_f64(bytes, &mut at)?;
                    v[1] = read_f64(bytes, &mut at)?;
                }
                let newest = read_u8(bytes, &mut at, "newest vertex")?;
                let mut tri = TriElement::new(vs);
                tri.newest_vertex = match newest {
                    255 => None,
                    v @ 0..=2 => Some(v),
                    v => {
                        return Err(Error::Decode {
                            bit: (at - 1) * 8,
                            reason: format!("newest vertex {v} outside 0..=2"),
                        })
                    }
                };
                Element::Tri(tri)
            }
            k => {
                return Err(Error::Decode {
                    bit: (at - 1) * 8,
                    reason: format!("unknown element kind {k}"),
                })
            }
        };
        if !strategy.accepts(&element) {
            return Err(Error::Decode {
                bit: (at - 1) * 8,
                reason: format!("{} root in a {} stream", element.kind_name(), strategy.name()),
            });
        }
        roots.push(element);
    }
    if at + 4 > bytes.len() {
        return Err(Error::Decode { bit: at * 8, reason: "truncated payload length".into() });
    }
    let payload_bits = u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap());
    at += 4;
    let payload = &bytes[at..];
    if (payload.len() as u64) * 8 < payload_bits as u64 {
        return Err(Error::Decode {
            bit: payload.len() * 8,
            reason: format!(
                "payload holds {} bits but the header declares {payload_bits}",
                payload.len() * 8
            ),
        });
    }

    let mut tree = PartitionTree {
        nodes: Vec::new(),
        roots: Vec::new(),
        queue: BinaryHeap::new(),
        leaf_count: 0,
        next_creation: 0,
    };
    let mut reader = BitReader { bytes: payload, pos: 0, limit: payload_bits };
    // Rebuild in the same preorder the encoder wrote.
    let mut stack: Vec<(Element, Option<usize>, u32)> = Vec::new();
    for element in roots.into_iter().rev() {
        stack.push((element, None, 0));
    }
    while let Some((element, parent, generation)) = stack.pop() {
        let fit = LocalFit::zero(&element, m, 2.0);
        let id = tree.push_node(element, parent, generation, false, fit, None);
        if let Some(p) = parent {
            tree.nodes[p].children.push(id);
            tree.leaf_count -= 1;
            std::mem::swap(&mut tree.leaf_count, &mut { let lc = tree.leaf_count; lc });
        }
        if !reader.read()? {
            continue;
        }
        let (children, label) = decode_split(&tree.nodes[id].element, strategy, &mut reader)?;
        tree.nodes[id].split = Some(label);
        tree.leaf_count -= 1;
        for child in children.into_iter().rev() {
            stack.push((child, Some(id), generation + 1));
        }
    }
    if reader.pos != payload_bits {
        return Err(Error::Decode {
            bit: reader.pos as usize,
            reason: format!("structure ended early; header declares {payload_bits} bits"),
        });
    }
    Ok(DecodedTree { tree, strategy, m })
}

fn decode_split(
    element: &Element,
    strategy: Strategy,
    reader: &mut BitReader,
) -> Result<(Vec<Element>, SplitLabel)> {
    Ok(match (strategy, element) {
        (Strategy::Greedy1d, Element::Interval(iv)) => (
            iv.split().into_iter().map(Element::Interval).collect(),
            SplitLabel::Halve,
        ),
        (Strategy::IsoQuad, Element::Rect(r)) => (
            r.quad_split().into_iter().map(Element::Rect).collect(),
            SplitLabel::Quad,
        ),
        (Strategy::IsoQuad, Element::Tri(t)) => (
            t.quad_split().into_iter().map(Element::Tri).collect(),
            SplitLabel::Quad,
        ),
        (Strategy::IsoNewestVertex, Element::Tri(t)) => {
            let v = safety_vertex(t, SafetyKind::NewestVertex);
            (
                t.bisect(v as usize).into_iter().map(Element::Tri).collect(),
                SplitLabel::Vertex(v),
            )
        }
        (Strategy::IsoLongestEdge, Element::Tri(t)) => {
            let v = t.longest_edge_vertex() as u8;
            (
                t.bisect(v as usize).into_iter().map(Element::Tri).collect(),
                SplitLabel::Vertex(v),
            )
        }
        (Strategy::AnisoRect | Strategy::AnisoRectModified, Element::Rect(r)) => {
            let axis = if reader.read()? { SplitAxis::HalveY } else { SplitAxis::HalveX };
            (
                r.split(axis).into_iter().map(Element::Rect).collect(),
                SplitLabel::Axis(axis),
            )
        }
        (Strategy::AnisoTri | Strategy::AnisoTriModified, Element::Tri(t)) => {
            let v = reader.read_code(2)?;
            if v > 2 {
                return Err(Error::Decode {
                    bit: reader.pos as usize,
                    reason: format!("bisection vertex {v} outside 0..=2"),
                });
            }
            (
                t.bisect(v as usize).into_iter().map(Element::Tri).collect(),
                SplitLabel::Vertex(v),
            )
        }
        (s, e) => {
            return Err(Error::Decode {
                bit: reader.pos as usize,
                reason: format!("{} node in a {} stream", e.kind_name(), s.name()),
            })
        }
    })
}
