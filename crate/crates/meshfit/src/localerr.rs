//! Local polynomial fits and approximation errors on single elements.
//!
//! The local error of degree `m` on an element `T` is the distance, in the
//! chosen norm, between the target and its best polynomial of total degree
//! `m - 1` on `T`. Exact minimization is only done where it is cheap: the
//! min-max constant for `p = inf, m = 1`, and the `L^2` projection for
//! `p = 2`. Every other norm reuses the `L^2` projection as surrogate and
//! measures its residual, which stays within a fixed factor of the best
//! error; decision rules only ever compare values produced by the same
//! estimator, so the factor cancels.
//!
//! Polynomials are stored in a monomial basis centered at the element
//! barycenter and scaled by the element diameter, which keeps the normal
//! equations well conditioned on stretched elements.

use crate::geometry::{cross, Element, Point};
use crate::targets::RasterImage;
use nalgebra::{DMatrix, DVector};

/// Knobs for the error estimators. The defaults match the documented
/// behavior of the refinement strategies; tests tighten them where an
/// invariant needs exact sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    /// Sample points per axis for min-max and max-residual lattices.
    pub lattice_n: usize,
    /// Gauss-Legendre points per axis on intervals and rectangles.
    pub gauss_points: usize,
    /// Uniform 4-way subdivision depth of the triangle quadrature.
    pub tri_subdivision: usize,
    /// Doubles quadrature density; set from the target's sharpness hint.
    pub sharp: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig { lattice_n: 33, gauss_points: 5, tri_subdivision: 0, sharp: false }
    }
}

impl EstimatorConfig {
    pub fn with_sharpness(mut self, sharp: bool) -> Self {
        self.sharp = sharp;
        self
    }

    fn effective_gauss(&self, m: usize) -> usize {
        let base = self.gauss_points.max(m + 1);
        if self.sharp {
            2 * base
        } else {
            base
        }
    }

    fn effective_tri_depth(&self) -> usize {
        if self.sharp {
            self.tri_subdivision.max(2)
        } else {
            self.tri_subdivision
        }
    }
}

/// Nodes and weights of a quadrature rule on a concrete element. Weights sum
/// to the element measure.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub nodes: Vec<Point>,
    pub weights: Vec<f64>,
    /// Largest total degree integrated exactly.
    pub exact_degree: u32,
}

impl Quadrature {
    /// Rule used by the degree-`m` estimators on `element`.
    pub fn for_element(element: &Element, m: usize, cfg: &EstimatorConfig) -> Quadrature {
        Quadrature::build(element, cfg.effective_gauss(m), 1, cfg.effective_tri_depth())
    }

    /// Rule with explicit axis cell count (intervals, rectangles) and
    /// triangle subdivision depth.
    pub fn build(element: &Element, gauss_n: usize, axis_cells: usize, tri_depth: usize) -> Quadrature {
        let gl = gauss_legendre(gauss_n);
        match element {
            Element::Interval(iv) => {
                let mut nodes = Vec::new();
                let mut weights = Vec::new();
                let step = iv.length() / axis_cells as f64;
                for c in 0..axis_cells {
                    let (lo, hi) = (iv.lo + c as f64 * step, iv.lo + (c + 1) as f64 * step);
                    for &(x, w) in &gl {
                        nodes.push([map_to(lo, hi, x), 0.0]);
                        weights.push(0.5 * (hi - lo) * w);
                    }
                }
                Quadrature { nodes, weights, exact_degree: (2 * gauss_n - 1) as u32 }
            }
            Element::Rect(r) => {
                let mut nodes = Vec::new();
                let mut weights = Vec::new();
                let (sx, sy) = (r.width() / axis_cells as f64, r.height() / axis_cells as f64);
                for cx in 0..axis_cells {
                    let (x0, x1) = (r.ix.lo + cx as f64 * sx, r.ix.lo + (cx + 1) as f64 * sx);
                    for cy in 0..axis_cells {
                        let (y0, y1) = (r.iy.lo + cy as f64 * sy, r.iy.lo + (cy + 1) as f64 * sy);
                        for &(gx, wx) in &gl {
                            for &(gy, wy) in &gl {
                                nodes.push([map_to(x0, x1, gx), map_to(y0, y1, gy)]);
                                weights.push(0.25 * (x1 - x0) * (y1 - y0) * wx * wy);
                            }
                        }
                    }
                }
                Quadrature { nodes, weights, exact_degree: (2 * gauss_n - 1) as u32 }
            }
            Element::Tri(t) => {
                let mut nodes = Vec::new();
                let mut weights = Vec::new();
                let mut stack = vec![(*t, tri_depth)];
                while let Some((tri, depth)) = stack.pop() {
                    if depth == 0 {
                        push_tri_rule(&tri.vertices, &mut nodes, &mut weights);
                    } else {
                        for child in tri.quad_split() {
                            stack.push((child, depth - 1));
                        }
                    }
                }
                Quadrature { nodes, weights, exact_degree: 5 }
            }
        }
    }

    pub fn integrate(&self, f: impl Fn(Point) -> f64) -> f64 {
        // Fixed summation order keeps results bitwise reproducible.
        let mut sum = 0.0;
        for (node, w) in self.nodes.iter().zip(self.weights.iter()) {
            sum += w * f(*node);
        }
        sum
    }
}

fn map_to(lo: f64, hi: f64, x_ref: f64) -> f64 {
    0.5 * (lo + hi) + 0.5 * (hi - lo) * x_ref
}

/// Symmetric 7-point rule, exact through total degree 5.
fn push_tri_rule(v: &[Point; 3], nodes: &mut Vec<Point>, weights: &mut Vec<f64>) {
    let area = 0.5 * cross(v[0], v[1], v[2]);
    let s15 = 15f64.sqrt();
    let groups: [(f64, f64); 3] = [
        (1.0 / 3.0, 9.0 / 40.0),
        ((6.0 - s15) / 21.0, (155.0 - s15) / 1200.0),
        ((6.0 + s15) / 21.0, (155.0 + s15) / 1200.0),
    ];
    let mut push = |l: [f64; 3], w: f64| {
        nodes.push([
            l[0] * v[0][0] + l[1] * v[1][0] + l[2] * v[2][0],
            l[0] * v[0][1] + l[1] * v[1][1] + l[2] * v[2][1],
        ]);
        weights.push(w * area);
    };
    push([groups[0].0; 3], groups[0].1);
    for &(a, w) in &groups[1..] {
        let b = 1.0 - 2.0 * a;
        push([a, a, b], w);
        push([a, b, a], w);
        push([b, a, a], w);
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, by Newton iteration on the
/// Legendre polynomial.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        out.push((-x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Number of monomials of total degree below `m` in `dim` variables.
pub fn basis_size(m: usize, dim: usize) -> usize {
    match dim {
        1 => m,
        2 => m * (m + 1) / 2,
        _ => unreachable!("only 1D and 2D elements exist"),
    }
}

fn element_dim(element: &Element) -> usize {
    match element {
        Element::Interval(_) => 1,
        _ => 2,
    }
}

fn eval_basis(k: usize, xi: f64, eta: f64, dim: usize) -> f64 {
    if dim == 1 {
        match k {
            0 => 1.0,
            1 => xi,
            2 => xi * xi,
            _ => unreachable!(),
        }
    } else {
        // Total-degree order: 1, xi, eta, xi^2, xi eta, eta^2.
        match k {
            0 => 1.0,
            1 => xi,
            2 => eta,
            3 => xi * xi,
            4 => xi * eta,
            5 => eta * eta,
            _ => unreachable!(),
        }
    }
}

/// A polynomial fit on one element together with its error.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    /// Degree bound: the fit is a polynomial of total degree `< degree`.
    pub degree: u8,
    /// 1 for intervals, 2 for planar elements.
    pub dim: u8,
    /// Barycenter the basis is centered at.
    pub center: Point,
    /// Diameter the basis is scaled by.
    pub scale: f64,
    /// Coefficients in the centered, scaled monomial basis.
    pub coefficients: Vec<f64>,
    /// Distance from the target in the norm `p`.
    pub error_value: f64,
    /// Norm exponent; `f64::INFINITY` for the sup norm.
    pub p: f64,
    /// Set when the fit fell back to a constant on a degenerate element.
    pub degenerate: bool,
}

impl LocalFit {
    pub fn eval(&self, p: Point) -> f64 {
        let xi = (p[0] - self.center[0]) / self.scale;
        let eta = (p[1] - self.center[1]) / self.scale;
        let mut v = 0.0;
        for (k, c) in self.coefficients.iter().enumerate() {
            v += c * eval_basis(k, xi, eta, self.dim as usize);
        }
        v
    }

    /// Fit of an identically zero target (used for empty pixel sets).
    pub fn zero(element: &Element, m: usize, p: f64) -> LocalFit {
        let dim = element_dim(element);
        LocalFit {
            degree: m as u8,
            dim: dim as u8,
            center: element.barycenter(),
            scale: element.diameter(),
            coefficients: vec![0.0; basis_size(m, dim)],
            error_value: 0.0,
            p,
            degenerate: true,
        }
    }
}

/// `L^2(T)` projection onto polynomials of total degree `m - 1` by weighted
/// least squares on the quadrature nodes. A numerically singular system
/// (reciprocal condition below 1e-12, possible only on degenerate elements)
/// falls back to the mean-value constant and sets the degeneracy flag.
pub fn l2_project(
    f: impl Fn(Point) -> f64,
    element: &Element,
    m: usize,
    cfg: &EstimatorConfig,
) -> LocalFit {
    assert!((1..=3).contains(&m), "degree bound must be 1, 2 or 3");
    let quad = Quadrature::for_element(element, m, cfg);
    projection_on_nodes(&f, element, m, &quad.nodes, Some(&quad.weights))
}

fn projection_on_nodes(
    f: &impl Fn(Point) -> f64,
    element: &Element,
    m: usize,
    nodes: &[Point],
    weights: Option<&[f64]>,
) -> LocalFit {
    let dim = element_dim(element);
    let nb = basis_size(m, dim);
    let center = element.barycenter();
    let scale = element.diameter();
    let values: Vec<f64> = nodes.iter().map(|&q| f(q)).collect();

    let sqrt_w: Vec<f64> = match weights {
        Some(w) => w.iter().map(|w| w.max(0.0).sqrt()).collect(),
        None => vec![1.0; nodes.len()],
    };
    let a = DMatrix::from_fn(nodes.len(), nb, |r, c| {
        let xi = (nodes[r][0] - center[0]) / scale;
        let eta = (nodes[r][1] - center[1]) / scale;
        sqrt_w[r] * eval_basis(c, xi, eta, dim)
    });
    let y = DVector::from_fn(nodes.len(), |r, _| sqrt_w[r] * values[r]);

    let svd = a.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let eps = 1e-12 * sigma_max;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();

    let (coefficients, degenerate) = if rank < nb || sigma_max == 0.0 {
        // Mean-value constant; exact when weights sum to the measure.
        let wsum: f64 = sqrt_w.iter().map(|s| s * s).sum();
        let mean = if wsum > 0.0 {
            sqrt_w.iter().zip(values.iter()).map(|(s, v)| s * s * v).sum::<f64>() / wsum
        } else {
            0.0
        };
        let mut c = vec![0.0; nb];
        c[0] = mean;
        (c, true)
    } else {
        let sol = svd.solve(&y, eps).expect("svd vectors requested");
        (sol.iter().copied().collect(), false)
    };

    let mut fit = LocalFit {
        degree: m as u8,
        dim: dim as u8,
        center,
        scale,
        coefficients,
        error_value: 0.0,
        p: 2.0,
        degenerate,
    };
    let mut err2 = 0.0;
    for ((node, v), s) in nodes.iter().zip(values.iter()).zip(sqrt_w.iter()) {
        let r = s * (v - fit.eval(*node));
        err2 += r * r;
    }
    fit.error_value = err2.sqrt();
    fit
}

/// Uniform sample lattice: `n` points on an interval, an `n x n` tensor grid
/// on a rectangle, the barycentric lattice of the same resolution on a
/// triangle. Corners and edge midpoints are always included.
pub fn sample_lattice(element: &Element, n: usize) -> Vec<Point> {
    assert!(n >= 2);
    let k = (n - 1) as f64;
    match element {
        Element::Interval(iv) => (0..n)
            .map(|i| [iv.lo + iv.length() * i as f64 / k, 0.0])
            .collect(),
        Element::Rect(r) => {
            let mut pts = Vec::with_capacity(n * n);
            for i in 0..n {
                let x = r.ix.lo + r.width() * i as f64 / k;
                for j in 0..n {
                    pts.push([x, r.iy.lo + r.height() * j as f64 / k]);
                }
            }
            pts
        }
        Element::Tri(t) => {
            let [a, b, c] = t.vertices;
            let mut pts = Vec::with_capacity(n * (n + 1) / 2);
            for i in 0..n {
                for j in 0..(n - i) {
                    let (l1, l2) = (i as f64 / k, j as f64 / k);
                    let l0 = 1.0 - l1 - l2;
                    pts.push([
                        l0 * a[0] + l1 * b[0] + l2 * c[0],
                        l0 * a[1] + l1 * b[1] + l2 * c[1],
                    ]);
                }
            }
            pts
        }
    }
}

/// Best constant approximation in the sup norm, from a sample lattice:
/// the constant is the midrange and the error half the oscillation.
pub fn linf_best_constant(
    f: impl Fn(Point) -> f64,
    element: &Element,
    cfg: &EstimatorConfig,
) -> LocalFit {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for q in sample_lattice(element, cfg.lattice_n) {
        let v = f(q);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let dim = element_dim(element);
    LocalFit {
        degree: 1,
        dim: dim as u8,
        center: element.barycenter(),
        scale: element.diameter(),
        coefficients: vec![0.5 * (hi + lo)],
        error_value: 0.5 * (hi - lo),
        p: f64::INFINITY,
        degenerate: false,
    }
}

/// Min-max polynomial fit on the sample lattice by Lawson's iteratively
/// reweighted least squares. Each weighted projection yields a rigorous
/// lower bound (its weighted rms) and upper bound (its max residual) on the
/// discrete Chebyshev error; iteration stops once they agree to 1e-9 and
/// the best upper bound seen is returned.
fn chebyshev_fit(
    f: &impl Fn(Point) -> f64,
    element: &Element,
    m: usize,
    cfg: &EstimatorConfig,
) -> LocalFit {
    let nodes = sample_lattice(element, cfg.lattice_n);
    let dim = element_dim(element);
    let nb = basis_size(m, dim);
    let center = element.barycenter();
    let scale = element.diameter();
    let values: Vec<f64> = nodes.iter().map(|&q| f(q)).collect();
    let vmax = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let basis: Vec<f64> = nodes
        .iter()
        .flat_map(|&q| {
            let xi = (q[0] - center[0]) / scale;
            let eta = (q[1] - center[1]) / scale;
            (0..nb).map(move |k| eval_basis(k, xi, eta, dim))
        })
        .collect();

    let n = nodes.len();
    let mut w = vec![1.0 / n as f64; n];
    let mut residuals = vec![0.0; n];
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..250 {
        let mut gram = DMatrix::zeros(nb, nb);
        let mut rhs = DVector::zeros(nb);
        for i in 0..n {
            let (wi, row) = (w[i], &basis[i * nb..(i + 1) * nb]);
            if wi == 0.0 {
                continue;
            }
            for r in 0..nb {
                rhs[r] += wi * row[r] * values[i];
                for c in r..nb {
                    gram[(r, c)] += wi * row[r] * row[c];
                }
            }
        }
        for r in 0..nb {
            for c in 0..r {
                gram[(r, c)] = gram[(c, r)];
            }
        }
        let coeffs: Vec<f64> = match gram.cholesky() {
            Some(ch) => ch.solve(&rhs).iter().copied().collect(),
            None => {
                // Degenerate geometry: rank-lenient projection, max residual.
                let mut fit = projection_on_nodes(f, element, m, &nodes, Some(&w));
                let max_r = nodes
                    .iter()
                    .zip(values.iter())
                    .fold(0.0f64, |acc, (&q, &v)| acc.max((v - fit.eval(q)).abs()));
                fit.error_value = max_r;
                fit.p = f64::INFINITY;
                return fit;
            }
        };
        let mut max_r = 0.0f64;
        let mut wrms = 0.0;
        for i in 0..n {
            let row = &basis[i * nb..(i + 1) * nb];
            let pred: f64 = row.iter().zip(coeffs.iter()).map(|(b, c)| b * c).sum();
            let r = (values[i] - pred).abs();
            residuals[i] = r;
            max_r = max_r.max(r);
            wrms += w[i] * r * r;
        }
        let lower = wrms.sqrt();
        if best.as_ref().map_or(true, |(_, b)| max_r < *b) {
            best = Some((coeffs, max_r));
        }
        if max_r <= lower * (1.0 + 1e-9) + 1e-14 * vmax {
            break;
        }
        let mut total = 0.0;
        for i in 0..n {
            w[i] *= residuals[i];
            total += w[i];
        }
        if total <= 0.0 {
            break;
        }
        for wi in w.iter_mut() {
            *wi /= total;
        }
    }
    let (coefficients, error_value) = best.expect("at least one projection");
    LocalFit {
        degree: m as u8,
        dim: dim as u8,
        center,
        scale,
        coefficients,
        error_value,
        p: f64::INFINITY,
        degenerate: false,
    }
}

/// Degree-`m` fit measured in `L^p`. Dispatch:
/// `p = inf` takes the exact min-max constant for `m = 1` and the Lawson
/// min-max fit on the sample lattice for `m >= 2`; `p = 2` is the `L^2`
/// projection; all other `p >= 1` integrate the projection residual with a
/// composite rule (the integrand has kinks where the residual changes sign).
pub fn fit_lp(
    f: impl Fn(Point) -> f64,
    element: &Element,
    m: usize,
    p: f64,
    cfg: &EstimatorConfig,
) -> LocalFit {
    assert!(p >= 1.0, "norm exponent must be >= 1");
    if p.is_infinite() {
        if m == 1 {
            return linf_best_constant(f, element, cfg);
        }
        return chebyshev_fit(&f, element, m, cfg);
    }
    if p == 2.0 {
        return l2_project(&f, element, m, cfg);
    }
    let mut fit = l2_project(&f, element, m, cfg);
    let quad = Quadrature::build(
        element,
        cfg.effective_gauss(m),
        4,
        cfg.effective_tri_depth().max(2),
    );
    let integral = quad.integrate(|q| (f(q) - fit.eval(q)).abs().powf(p));
    fit.error_value = integral.max(0.0).powf(1.0 / p);
    fit.p = p;
    fit
}

/// Convenience wrapper returning only the error value of [`fit_lp`].
pub fn lp_error(
    f: impl Fn(Point) -> f64,
    element: &Element,
    m: usize,
    p: f64,
    cfg: &EstimatorConfig,
) -> f64 {
    fit_lp(f, element, m, p, cfg).error_value
}

/// Affine interpolation at the triangle vertices, with the max lattice
/// residual as error. This is the decision quantity of the interpolation
/// based refinement rule.
pub fn interpolate_linear(
    f: impl Fn(Point) -> f64,
    tri: &crate::geometry::TriElement,
    cfg: &EstimatorConfig,
) -> LocalFit {
    let [a, b, c] = tri.vertices;
    let (fa, fb, fc) = (f(a), f(b), f(c));
    let inv2a = 1.0 / (2.0 * tri.signed_area());
    // Gradient of the affine interpolant.
    let gx = (fa * (b[1] - c[1]) + fb * (c[1] - a[1]) + fc * (a[1] - b[1])) * inv2a;
    let gy = (fa * (c[0] - b[0]) + fb * (a[0] - c[0]) + fc * (b[0] - a[0])) * inv2a;
    let element = Element::Tri(*tri);
    let center = element.barycenter();
    let scale = element.diameter();
    let at_center = (fa + fb + fc) / 3.0;
    let fit = LocalFit {
        degree: 2,
        dim: 2,
        center,
        scale,
        coefficients: vec![at_center, gx * scale, gy * scale],
        error_value: 0.0,
        p: f64::INFINITY,
        degenerate: false,
    };
    let mut max_r: f64 = 0.0;
    for q in sample_lattice(&element, cfg.lattice_n) {
        max_r = max_r.max((f(q) - fit.eval(q)).abs());
    }
    LocalFit { error_value: max_r, ..fit }
}

/// Indices of the pixels whose centers lie in `element`, by closed
/// membership. Pixels exactly on a shared cut belong to every touching
/// element here; the refinement tree resolves those ties by descent order.
pub fn pixels_in(img: &RasterImage, element: &Element) -> Vec<u32> {
    let (lo, hi) = element.bounding_box();
    let (w, h) = (img.width as f64, img.height as f64);
    // Row range from the y bounds (row 0 is the top), clamped to the image.
    let row0 = (((1.0 - hi[1]) * h - 0.5).ceil().max(0.0)) as usize;
    let row1 = ((1.0 - lo[1]) * h - 0.5).floor().min(h - 1.0);
    let col0 = ((lo[0] * w - 0.5).ceil().max(0.0)) as usize;
    let col1 = ((hi[0] * w - 0.5).floor()).min(w - 1.0);
    let mut out = Vec::new();
    if row1 < 0.0 || col1 < 0.0 {
        return out;
    }
    for row in row0..=(row1 as usize) {
        for col in col0..=(col1 as usize) {
            if element.contains(img.pixel_center(col, row)) {
                out.push((row * img.width + col) as u32);
            }
        }
    }
    out
}

/// Unweighted least squares over the pixel centers inside `element`.
pub fn discrete_l2_project(img: &RasterImage, element: &Element, m: usize) -> LocalFit {
    discrete_l2_project_subset(img, &pixels_in(img, element), element, m)
}

/// Same as [`discrete_l2_project`] with an explicit pixel set; the error is
/// the unnormalized `l^2` residual over those pixels. Empty sets give a zero
/// fit; rank-deficient sets fall back to the constant fit.
pub fn discrete_l2_project_subset(
    img: &RasterImage,
    pixels: &[u32],
    element: &Element,
    m: usize,
) -> LocalFit {
    assert!((1..=3).contains(&m));
    if pixels.is_empty() {
        return LocalFit::zero(element, m, 2.0);
    }
    let nodes: Vec<Point> = pixels
        .iter()
        .map(|&idx| {
            let (row, col) = (idx as usize / img.width, idx as usize % img.width);
            img.pixel_center(col, row)
        })
        .collect();
    let f = |q: Point| img.nearest_value(q);
    projection_on_nodes(&f, element, m, &nodes, None)
}

/// Combines child errors into the parent quantity: the `l^p` sum for finite
/// `p`, the max for `p = inf`.
pub fn combine_errors(errors: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        errors.iter().copied().fold(0.0, f64::max)
    } else {
        errors.iter().map(|e| e.powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Interval1D, RectElement, TriElement};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_interval() -> Element {
        Element::Interval(Interval1D::new(0.0, 1.0))
    }

    fn unit_square() -> Element {
        Element::Rect(RectElement::new(0.0, 1.0, 0.0, 1.0))
    }

    #[test]
    fn gauss_rules_integrate_monomials() {
        for n in 1..=12 {
            let rule = gauss_legendre(n);
            let wsum: f64 = rule.iter().map(|&(_, w)| w).sum();
            assert_relative_eq!(wsum, 2.0, max_relative = 1e-13);
            for d in 0..(2 * n) {
                let got: f64 = rule.iter().map(|&(x, w)| w * x.powi(d as i32)).sum();
                let want = if d % 2 == 0 { 2.0 / (d as f64 + 1.0) } else { 0.0 };
                assert!((got - want).abs() < 1e-12, "n={n} degree {d}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn rect_rule_is_exact_for_tensor_monomials() {
        let r = Element::Rect(RectElement::new(0.0, 2.0, -1.0, 1.0));
        let q = Quadrature::for_element(&r, 3, &EstimatorConfig::default());
        let wsum: f64 = q.weights.iter().sum();
        assert_relative_eq!(wsum, 4.0, max_relative = 1e-12);
        for a in 0..=4u32 {
            for b in 0..=4u32 {
                let got = q.integrate(|p| p[0].powi(a as i32) * p[1].powi(b as i32));
                let ix = 2f64.powi(a as i32 + 1) / (a as f64 + 1.0);
                let iy = (1.0 - (-1.0f64).powi(b as i32 + 1)) / (b as f64 + 1.0);
                assert_relative_eq!(got, ix * iy, max_relative = 1e-12, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn triangle_rule_is_exact_through_degree_five() {
        let t = Element::Tri(TriElement::new([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]));
        for depth in [0, 1, 2] {
            let q = Quadrature::build(&t, 5, 1, depth);
            let wsum: f64 = q.weights.iter().sum();
            assert_relative_eq!(wsum, 0.5, max_relative = 1e-12);
            for a in 0..=5u32 {
                for b in 0..=(5 - a) {
                    let got = q.integrate(|p| p[0].powi(a as i32) * p[1].powi(b as i32));
                    // int_{x+y<=1} x^a y^b = a! b! / (a+b+2)!.
                    let fact = |k: u32| (1..=k).map(f64::from).product::<f64>().max(1.0);
                    let want = fact(a) * fact(b) / fact(a + b + 2);
                    assert_relative_eq!(got, want, max_relative = 1e-12, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn projection_of_x_squared_on_unit_interval() {
        let cfg = EstimatorConfig::default();
        let fit = l2_project(|p| p[0] * p[0], &unit_interval(), 1, &cfg);
        assert_relative_eq!(fit.coefficients[0], 1.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(fit.error_value, (4.0f64 / 45.0).sqrt(), max_relative = 1e-12);
        assert!(!fit.degenerate);
    }

    #[test]
    fn projection_of_x_plus_y_on_unit_square() {
        let cfg = EstimatorConfig::default();
        let fit = l2_project(|p| p[0] + p[1], &unit_square(), 1, &cfg);
        assert_relative_eq!(fit.coefficients[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(fit.error_value, 1.0 / 6f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn min_max_constants() {
        let cfg = EstimatorConfig::default();
        let fit = linf_best_constant(|p| p[0] * p[0], &unit_interval(), &cfg);
        assert_relative_eq!(fit.error_value, 0.5, max_relative = 1e-12);
        assert_relative_eq!(fit.coefficients[0], 0.5, max_relative = 1e-12);
        let pi = std::f64::consts::PI;
        let fit = linf_best_constant(|p| (pi * p[0]).sin(), &unit_interval(), &cfg);
        assert_relative_eq!(fit.error_value, 0.5, max_relative = 1e-12);
    }

    /// Polynomials of degree below m are reproduced with zero error in every
    /// norm, on every element kind.
    #[test]
    fn polynomial_reproduction() {
        let cfg = EstimatorConfig::default();
        let elements = [
            unit_interval(),
            Element::Rect(RectElement::new(-1.0, 2.0, 0.5, 0.75)),
            Element::Tri(TriElement::new([[0.1, 0.2], [2.0, 0.3], [0.7, 1.9]])),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for element in &elements {
            for m in 1..=3usize {
                let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let scale: f64 = c.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
                let poly = move |p: Point| {
                    let (x, y) = (p[0], p[1]);
                    match m {
                        1 => c[0],
                        2 => c[0] + c[1] * x + c[2] * y,
                        _ => c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y,
                    }
                };
                for p in [1.0, 2.0, f64::INFINITY] {
                    let err = lp_error(&poly, element, m, p, &cfg);
                    assert!(err < 1e-10 * scale, "{element:?} m={m} p={p}: residual {err}");
                }
            }
        }
    }

    #[test]
    fn translation_invariance() {
        let cfg = EstimatorConfig::default();
        let f = |p: Point| (p[0] * 1.3).sin() * (p[1] - 0.4).cos();
        let t0 = Element::Tri(TriElement::new([[0.0, 0.0], [1.0, 0.1], [0.3, 0.8]]));
        let shift = [7.25, -3.5];
        let t1 = Element::Tri(TriElement::new([
            [0.0 + shift[0], 0.0 + shift[1]],
            [1.0 + shift[0], 0.1 + shift[1]],
            [0.3 + shift[0], 0.8 + shift[1]],
        ]));
        let g = move |p: Point| f([p[0] - shift[0], p[1] - shift[1]]);
        for p in [2.0, f64::INFINITY] {
            for m in 1..=3 {
                let e0 = lp_error(f, &t0, m, p, &cfg);
                let e1 = lp_error(g, &t1, m, p, &cfg);
                assert_relative_eq!(e0, e1, max_relative = 1e-8);
            }
        }
    }

    /// For a homogeneous target of degree m, scaling the element by h scales
    /// the error by exactly h^(d/p + m).
    #[test]
    fn scaling_law() {
        let cfg = EstimatorConfig::default();
        let q = |p: Point| p[0] * p[0] + 0.5 * p[0] * p[1] + 3.0 * p[1] * p[1];
        let base = TriElement::new([[0.2, 0.1], [1.1, 0.4], [0.5, 1.2]]);
        for h in [0.5, 2.0, 3.7] {
            let scaled = Element::Tri(TriElement::new(
                base.vertices.map(|v| [h * v[0], h * v[1]]),
            ));
            for p in [1.0, 2.0, f64::INFINITY] {
                let e0 = lp_error(q, &Element::Tri(base), 2, p, &cfg);
                let e1 = lp_error(q, &scaled, 2, p, &cfg);
                let d_over_p = if p.is_infinite() { 0.0 } else { 2.0 / p };
                assert_relative_eq!(e1, e0 * h.powf(d_over_p + 2.0), max_relative = 1e-6);
            }
        }
    }

    /// Children cannot beat the parent by more than the estimator headroom:
    /// exact for p = 2 (nested least squares), factor 3 otherwise. For the
    /// sup norm the parent is sampled on a lattice refining the children's.
    #[test]
    fn split_monotonicity() {
        let f = |p: Point| (3.0 * p[0]).sin() + (2.0 * p[1]).cos() * p[0];
        let parent = RectElement::new(0.0, 1.0, 0.0, 1.0);
        for m in 1..=2usize {
            for p in [1.0, 2.0] {
                let cfg = EstimatorConfig::default();
                let ep = lp_error(f, &Element::Rect(parent), m, p, &cfg);
                for axis in [crate::geometry::SplitAxis::HalveX, crate::geometry::SplitAxis::HalveY] {
                    let children = parent.split(axis);
                    let ec = combine_errors(
                        &children.map(|c| lp_error(f, &Element::Rect(c), m, p, &cfg)),
                        p,
                    );
                    let headroom = if p == 2.0 { 1.0 + 1e-12 } else { 3.0 };
                    assert!(ec <= headroom * ep, "m={m} p={p}: {ec} vs parent {ep}");
                }
            }
            // Sup norm: children sampled at 33 points per axis sit inside the
            // parent's 65-point lattice, so the bound is forced.
            let coarse = EstimatorConfig::default();
            let fine = EstimatorConfig { lattice_n: 65, ..coarse };
            let ep = lp_error(f, &Element::Rect(parent), 1, f64::INFINITY, &fine);
            for axis in [crate::geometry::SplitAxis::HalveX, crate::geometry::SplitAxis::HalveY] {
                let children = parent.split(axis);
                let ec = combine_errors(
                    &children.map(|c| lp_error(f, &Element::Rect(c), 1, f64::INFINITY, &coarse)),
                    f64::INFINITY,
                );
                assert!(ec <= ep + 1e-15);
            }
        }
    }

    #[test]
    fn linear_interpolation_on_unit_right_triangle() {
        let t = TriElement::new([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let fit = interpolate_linear(
            |p| p[0] * p[0] + p[1] * p[1],
            &t,
            &EstimatorConfig::default(),
        );
        // Interpolant is x + y; the residual peaks at the edge midpoint.
        assert_relative_eq!(fit.eval([0.5, 0.5]), 1.0, max_relative = 1e-12);
        assert_relative_eq!(fit.error_value, 0.5, max_relative = 1e-12);
        // Quadratic scaling in the element size.
        let small = TriElement::new([[0.0, 0.0], [0.5, 0.0], [0.0, 0.5]]);
        let fit2 = interpolate_linear(
            |p| p[0] * p[0] + p[1] * p[1],
            &small,
            &EstimatorConfig::default(),
        );
        assert_relative_eq!(fit2.error_value, 0.125, max_relative = 1e-12);
    }

    #[test]
    fn degenerate_element_falls_back_to_constant() {
        // Vertices are collinear to machine precision.
        let t = Element::Tri(TriElement::new([
            [0.0, 0.0],
            [1.0, 1.0],
            [0.5, 0.5 + 1e-15],
        ]));
        let fit = l2_project(|p| p[0], &t, 3, &EstimatorConfig::default());
        assert!(fit.degenerate);
        assert!(fit.coefficients[1..].iter().all(|&c| c == 0.0));
    }

    #[test]
    fn discrete_projection_on_pixel_subsets() {
        // 4x4 image, constant 0.5: any element fits exactly.
        let img = RasterImage::new(4, 4, vec![0.5; 16]);
        let whole = unit_square();
        let fit = discrete_l2_project(&img, &whole, 2);
        assert_relative_eq!(fit.coefficients[0], 0.5, max_relative = 1e-12);
        assert!(fit.error_value < 1e-12);

        // Empty element away from all pixel centers.
        let empty = Element::Rect(RectElement::new(0.0, 0.05, 0.0, 0.05));
        let fit = discrete_l2_project(&img, &empty, 1);
        assert_eq!(fit.error_value, 0.0);
        assert!(fit.degenerate);

        // Single pixel: interpolation, zero residual.
        let img2 = RasterImage::new(4, 4, (0..16).map(|i| i as f64 / 15.0).collect());
        let one = Element::Rect(RectElement::new(0.0, 0.26, 0.0, 0.26));
        let pix = pixels_in(&img2, &one);
        assert_eq!(pix.len(), 1);
        let fit = discrete_l2_project(&img2, &one, 1);
        assert!(fit.error_value < 1e-12);
    }

    #[test]
    fn discrete_error_is_unnormalized() {
        // Two pixels valued 0 and 1: best constant 0.5, residual sqrt(0.5).
        let img = RasterImage::new(2, 1, vec![0.0, 1.0]);
        let strip = Element::Rect(RectElement::new(0.0, 1.0, 0.0, 1.0));
        let fit = discrete_l2_project(&img, &strip, 1);
        assert_relative_eq!(fit.coefficients[0], 0.5, max_relative = 1e-12);
        assert_relative_eq!(fit.error_value, 0.5f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn combine_errors_matches_norms() {
        assert_relative_eq!(combine_errors(&[3.0, 4.0], 2.0), 5.0);
        assert_relative_eq!(combine_errors(&[3.0, 4.0], f64::INFINITY), 4.0);
        assert_relative_eq!(combine_errors(&[1.0, 1.0], 1.0), 2.0);
    }
}
