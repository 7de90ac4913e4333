//! Target functions: analytic built-ins and raster images.
//!
//! A [`TargetFunction`] bundles a domain, point evaluation, optional first
//! and second derivatives, and a sharpness hint that tells the error
//! estimators to spend more quadrature points. Built-ins are constructed by
//! name through [`TargetFunction::builtin`]; raster targets wrap a
//! [`RasterImage`] whose pixel centers live on the unit square.

use crate::geometry::{Element, Interval1D, Point, RectElement};
use crate::{Error, Result};

/// Grayscale image with values in `[0, 1]`, row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub samples: Vec<f64>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, samples: Vec<f64>) -> Self {
        assert_eq!(samples.len(), width * height, "sample count mismatch");
        RasterImage { width, height, samples }
    }

    /// Samples `f` at every pixel center, clamping values into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(Point) -> f64) -> Self {
        let mut samples = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                let v = f(Self::center_of(width, height, col, row));
                samples.push(v.clamp(0.0, 1.0));
            }
        }
        RasterImage { width, height, samples }
    }

    pub fn sample(&self, col: usize, row: usize) -> f64 {
        self.samples[row * self.width + col]
    }

    /// Center of pixel `(col, row)` on the unit square. Row 0 maps to the
    /// top of the square: `y = 1 - (row + 0.5)/height`.
    pub fn pixel_center(&self, col: usize, row: usize) -> Point {
        Self::center_of(self.width, self.height, col, row)
    }

    fn center_of(width: usize, height: usize, col: usize, row: usize) -> Point {
        [
            (col as f64 + 0.5) / width as f64,
            1.0 - (row as f64 + 0.5) / height as f64,
        ]
    }

    /// Value of the pixel whose center is nearest to `p` (clamped to the
    /// image); this makes a raster behave like a piecewise constant function.
    pub fn nearest_value(&self, p: Point) -> f64 {
        let col = ((p[0] * self.width as f64).floor() as isize).clamp(0, self.width as isize - 1);
        let row = (((1.0 - p[1]) * self.height as f64).floor() as isize)
            .clamp(0, self.height as isize - 1);
        self.sample(col as usize, row as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    /// `x^alpha` on `[0, 1]`.
    PowerAlpha(f64),
    /// `sin(k pi x)` on `[0, 1]`.
    Sin1D(f64),
    /// `a + b x + c y`.
    Affine2(f64, f64, f64),
    /// `a x^2 + 2 b x y + c y^2`.
    QuadraticForm(f64, f64, f64),
    /// `a x^3 + b x^2 y + c x y^2 + d y^3`.
    CubicForm(f64, f64, f64, f64),
    /// Radial profile `g(r)` that drops from 1 to -1 across a C^2 blend of
    /// width `delta` at radius 1; see [`ring_profile`].
    SharpRing { delta: f64, blend: [f64; 6] },
    /// `phi(4x) - phi(4x - 1)` with the smooth bump [`bump_phi`]; constant in
    /// `y`, mean zero on the unit square and on its four half rectangles.
    Oscillatory,
    /// Indicator of a disk, contrast 1.
    CartoonDisk { cx: f64, cy: f64, r: f64 },
    /// `sin(a pi x) sin(b pi y)`.
    ProductSine(f64, f64),
    /// `sin(a x + b y)`.
    SinLinear(f64, f64),
    Raster(RasterImage),
}

/// A function to approximate, with its domain and optional derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetFunction {
    domain: Element,
    kind: Kind,
    sharpness_hint: bool,
}

impl TargetFunction {
    /// Builds a catalog target. Parameter counts are checked; omitted
    /// parameters take the documented defaults.
    ///
    /// Known names: `power_alpha(alpha)`, `sin_1d(k=1)`, `affine2(a,b,c)`,
    /// `quadratic_form(a,b,c)`, `cubic_form(a,b,c,d)`, `sharp_ring(delta)`,
    /// `oscillatory_counterexample`, `cartoon_disk(cx=0.5,cy=0.5,r=0.3)`,
    /// `product_sine(a=1,b=1)` and `sin_linear(a,b)`.
    pub fn builtin(name: &str, params: &[f64]) -> Result<TargetFunction> {
        let unit_interval = Element::Interval(Interval1D::root(0.0, 1.0));
        let unit_square = Element::Rect(RectElement::new(0.0, 1.0, 0.0, 1.0));
        let bad = |reason: &str| Error::TargetParams {
            name: name.to_string(),
            reason: reason.to_string(),
        };
        let take = |k: usize| -> Result<f64> {
            params.get(k).copied().ok_or_else(|| bad(&format!("needs at least {} parameters", k + 1)))
        };
        let target = match name {
            "power_alpha" => {
                let alpha = take(0)?;
                if alpha <= 0.0 {
                    return Err(bad("exponent must be positive"));
                }
                TargetFunction {
                    domain: unit_interval,
                    kind: Kind::PowerAlpha(alpha),
                    sharpness_hint: alpha < 1.0,
                }
            }
            "sin_1d" => {
                let k = params.first().copied().unwrap_or(1.0);
                TargetFunction { domain: unit_interval, kind: Kind::Sin1D(k), sharpness_hint: false }
            }
            "affine2" => TargetFunction {
                domain: unit_square,
                kind: Kind::Affine2(take(0)?, take(1)?, take(2)?),
                sharpness_hint: false,
            },
            "quadratic_form" => TargetFunction {
                domain: unit_square,
                kind: Kind::QuadraticForm(take(0)?, take(1)?, take(2)?),
                sharpness_hint: false,
            },
            "cubic_form" => TargetFunction {
                domain: unit_square,
                kind: Kind::CubicForm(take(0)?, take(1)?, take(2)?, take(3)?),
                sharpness_hint: false,
            },
            "sharp_ring" => {
                let delta = take(0)?;
                if delta <= 0.0 || delta > 0.2 {
                    return Err(bad("blend width must lie in (0, 0.2]"));
                }
                TargetFunction {
                    // Fixed square holding the full ring for every allowed width.
                    domain: Element::Rect(RectElement::new(-2.0, 2.0, -2.0, 2.0)),
                    kind: Kind::SharpRing { delta, blend: blend_coefficients(delta) },
                    sharpness_hint: true,
                }
            }
            "oscillatory_counterexample" => TargetFunction {
                domain: unit_square,
                kind: Kind::Oscillatory,
                sharpness_hint: true,
            },
            "cartoon_disk" => {
                let cx = params.first().copied().unwrap_or(0.5);
                let cy = params.get(1).copied().unwrap_or(0.5);
                let r = params.get(2).copied().unwrap_or(0.3);
                if r <= 0.0 {
                    return Err(bad("radius must be positive"));
                }
                TargetFunction {
                    domain: unit_square,
                    kind: Kind::CartoonDisk { cx, cy, r },
                    sharpness_hint: true,
                }
            }
            "product_sine" => {
                let a = params.first().copied().unwrap_or(1.0);
                let b = params.get(1).copied().unwrap_or(1.0);
                TargetFunction { domain: unit_square, kind: Kind::ProductSine(a, b), sharpness_hint: false }
            }
            "sin_linear" => TargetFunction {
                domain: unit_square,
                kind: Kind::SinLinear(take(0)?, take(1)?),
                sharpness_hint: false,
            },
            _ => return Err(Error::UnknownTarget(name.to_string())),
        };
        Ok(target)
    }

    /// Wraps a raster image as a piecewise constant target on the unit square.
    pub fn from_raster(image: RasterImage) -> TargetFunction {
        TargetFunction {
            domain: Element::Rect(RectElement::new(0.0, 1.0, 0.0, 1.0)),
            kind: Kind::Raster(image),
            sharpness_hint: true,
        }
    }

    pub fn domain(&self) -> Element {
        self.domain
    }

    /// True for targets with features the default quadrature would miss.
    pub fn sharpness_hint(&self) -> bool {
        self.sharpness_hint
    }

    pub fn raster(&self) -> Option<&RasterImage> {
        match &self.kind {
            Kind::Raster(img) => Some(img),
            _ => None,
        }
    }

    pub fn eval(&self, p: Point) -> f64 {
        let [x, y] = p;
        match &self.kind {
            Kind::PowerAlpha(a) => x.powf(*a),
            Kind::Sin1D(k) => (k * std::f64::consts::PI * x).sin(),
            Kind::Affine2(a, b, c) => a + b * x + c * y,
            Kind::QuadraticForm(a, b, c) => a * x * x + 2.0 * b * x * y + c * y * y,
            Kind::CubicForm(a, b, c, d) => {
                ((a * x + b * y) * x + c * y * y) * x + d * y * y * y
            }
            Kind::SharpRing { delta, blend } => {
                ring_eval(*delta, blend, x.hypot(y)).0
            }
            Kind::Oscillatory => bump_phi(4.0 * x) - bump_phi(4.0 * x - 1.0),
            Kind::CartoonDisk { cx, cy, r } => {
                if (x - cx).hypot(y - cy) <= *r {
                    1.0
                } else {
                    0.0
                }
            }
            Kind::ProductSine(a, b) => {
                let pi = std::f64::consts::PI;
                (a * pi * x).sin() * (b * pi * y).sin()
            }
            Kind::SinLinear(a, b) => (a * x + b * y).sin(),
            Kind::Raster(img) => img.nearest_value(p),
        }
    }

    /// Analytic gradient, `None` for targets without one (raster, disk).
    pub fn grad(&self, p: Point) -> Option<[f64; 2]> {
        let [x, y] = p;
        let pi = std::f64::consts::PI;
        Some(match &self.kind {
            Kind::PowerAlpha(a) => [a * x.powf(a - 1.0), 0.0],
            Kind::Sin1D(k) => [k * pi * (k * pi * x).cos(), 0.0],
            Kind::Affine2(_, b, c) => [*b, *c],
            Kind::QuadraticForm(a, b, c) => {
                [2.0 * (a * x + b * y), 2.0 * (b * x + c * y)]
            }
            Kind::CubicForm(a, b, c, d) => [
                3.0 * a * x * x + 2.0 * b * x * y + c * y * y,
                b * x * x + 2.0 * c * x * y + 3.0 * d * y * y,
            ],
            Kind::SharpRing { delta, blend } => {
                let r = x.hypot(y);
                if r < 1.0 {
                    // Inside the ring the profile is the exact paraboloid.
                    [-0.5 * x, -0.5 * y]
                } else {
                    let (_, g1, _) = ring_eval(*delta, blend, r);
                    [g1 * x / r, g1 * y / r]
                }
            }
            Kind::Oscillatory => [4.0 * (bump_phi_d1(4.0 * x) - bump_phi_d1(4.0 * x - 1.0)), 0.0],
            Kind::CartoonDisk { .. } | Kind::Raster(_) => return None,
            Kind::ProductSine(a, b) => [
                a * pi * (a * pi * x).cos() * (b * pi * y).sin(),
                b * pi * (a * pi * x).sin() * (b * pi * y).cos(),
            ],
            Kind::SinLinear(a, b) => {
                let c = (a * x + b * y).cos();
                [a * c, b * c]
            }
        })
    }

    /// Analytic Hessian `[f_xx, f_xy, f_yy]`, `None` where unavailable.
    pub fn hess(&self, p: Point) -> Option<[f64; 3]> {
        let [x, y] = p;
        let pi = std::f64::consts::PI;
        Some(match &self.kind {
            Kind::PowerAlpha(a) => [a * (a - 1.0) * x.powf(a - 2.0), 0.0, 0.0],
            Kind::Sin1D(k) => {
                let w = k * pi;
                [-w * w * (w * x).sin(), 0.0, 0.0]
            }
            Kind::Affine2(..) => [0.0, 0.0, 0.0],
            Kind::QuadraticForm(a, b, c) => [2.0 * a, 2.0 * b, 2.0 * c],
            Kind::CubicForm(a, b, c, d) => [
                6.0 * a * x + 2.0 * b * y,
                2.0 * b * x + 2.0 * c * y,
                2.0 * c * x + 6.0 * d * y,
            ],
            Kind::SharpRing { delta, blend } => {
                let r = x.hypot(y);
                if r < 1.0 {
                    [-0.5, 0.0, -0.5]
                } else {
                    let (_, g1, g2) = ring_eval(*delta, blend, r);
                    let (cx, cy) = (x / r, y / r);
                    let radial = g1 / r;
                    [
                        g2 * cx * cx + radial * cy * cy,
                        (g2 - radial) * cx * cy,
                        g2 * cy * cy + radial * cx * cx,
                    ]
                }
            }
            Kind::Oscillatory => {
                [16.0 * (bump_phi_d2(4.0 * x) - bump_phi_d2(4.0 * x - 1.0)), 0.0, 0.0]
            }
            Kind::CartoonDisk { .. } | Kind::Raster(_) => return None,
            Kind::ProductSine(a, b) => {
                let (sa, ca) = (a * pi * x).sin_cos();
                let (sb, cb) = (b * pi * y).sin_cos();
                let (wa, wb) = (a * pi, b * pi);
                [-wa * wa * sa * sb, wa * wb * ca * cb, -wb * wb * sa * sb]
            }
            Kind::SinLinear(a, b) => {
                let s = -(a * x + b * y).sin();
                [a * a * s, a * b * s, b * b * s]
            }
        })
    }

    pub fn has_derivatives(&self) -> bool {
        !matches!(self.kind, Kind::CartoonDisk { .. } | Kind::Raster(_))
    }

    /// Canonical `name:params` string, e.g. `sharp_ring:0.2`.
    pub fn spec_string(&self) -> String {
        let join = |vals: &[f64]| {
            vals.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
        };
        match &self.kind {
            Kind::PowerAlpha(a) => format!("power_alpha:{a}"),
            Kind::Sin1D(k) => format!("sin_1d:{k}"),
            Kind::Affine2(a, b, c) => format!("affine2:{}", join(&[*a, *b, *c])),
            Kind::QuadraticForm(a, b, c) => format!("quadratic_form:{}", join(&[*a, *b, *c])),
            Kind::CubicForm(a, b, c, d) => format!("cubic_form:{}", join(&[*a, *b, *c, *d])),
            Kind::SharpRing { delta, .. } => format!("sharp_ring:{delta}"),
            Kind::Oscillatory => "oscillatory_counterexample".to_string(),
            Kind::CartoonDisk { cx, cy, r } => format!("cartoon_disk:{}", join(&[*cx, *cy, *r])),
            Kind::ProductSine(a, b) => format!("product_sine:{}", join(&[*a, *b])),
            Kind::SinLinear(a, b) => format!("sin_linear:{}", join(&[*a, *b])),
            Kind::Raster(img) => format!("raster:{}x{}", img.width, img.height),
        }
    }
}

/// Smooth bump `exp(-1 / (t (1 - t)))` on `(0, 1)`, zero elsewhere.
/// Not normalized; the maximum is `exp(-4)` at `t = 1/2`.
pub fn bump_phi(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        (-1.0 / (t * (1.0 - t))).exp()
    }
}

/// First derivative of [`bump_phi`].
pub fn bump_phi_d1(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        let u = t * (1.0 - t);
        bump_phi(t) * (1.0 - 2.0 * t) / (u * u)
    }
}

/// Second derivative of [`bump_phi`].
pub fn bump_phi_d2(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        let u = t * (1.0 - t);
        let w = 1.0 - 2.0 * t;
        bump_phi(t) * ((w * w) / (u * u * u * u) - 2.0 / (u * u) - 2.0 * (w * w) / (u * u * u))
    }
}

/// Radial profile of the sharp ring: value, first and second derivative at
/// radius `r` for blend width `delta`.
///
/// The profile is `(5 - r^2)/4` for `r <= 1`, `((2 + delta - r)^2 - 5)/4` for
/// `r >= 1 + delta`, and the unique quintic on `[1, 1 + delta]` matching
/// value and two derivatives at both ends, which makes it globally C^2.
pub fn ring_profile(delta: f64, r: f64) -> (f64, f64, f64) {
    assert!(delta > 0.0, "blend width must be positive");
    ring_eval(delta, &blend_coefficients(delta), r)
}

fn ring_eval(delta: f64, blend: &[f64; 6], r: f64) -> (f64, f64, f64) {
    if r <= 1.0 {
        (0.25 * (5.0 - r * r), -0.5 * r, -0.5)
    } else if r >= 1.0 + delta {
        let w = 2.0 + delta - r;
        (0.25 * (w * w - 5.0), -0.5 * w, 0.5)
    } else {
        let s = (r - 1.0) / delta;
        let mut v = 0.0;
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        // Horner evaluation of the blend and its two derivatives in s.
        for k in (0..6).rev() {
            let c = blend[k];
            v = v * s + c;
            if k >= 1 {
                d1 = d1 * s + c * k as f64;
            }
            if k >= 2 {
                d2 = d2 * s + c * (k * (k - 1)) as f64;
            }
        }
        (v, d1 / delta, d2 / (delta * delta))
    }
}

/// Power-basis coefficients of the quintic blend in `s = (r - 1)/delta`.
fn blend_coefficients(delta: f64) -> [f64; 6] {
    // Two-point quintic Hermite basis in power form; rows are the value,
    // first- and second-derivative cardinal functions at s = 0 and s = 1.
    const H: [[f64; 6]; 6] = [
        [1.0, 0.0, 0.0, -10.0, 15.0, -6.0],
        [0.0, 1.0, 0.0, -6.0, 8.0, -3.0],
        [0.0, 0.0, 0.5, -1.5, 1.5, -0.5],
        [0.0, 0.0, 0.0, 10.0, -15.0, 6.0],
        [0.0, 0.0, 0.0, -4.0, 7.0, -3.0],
        [0.0, 0.0, 0.0, 0.5, -1.0, 0.5],
    ];
    // Endpoint data of the outer branches, scaled to s-space.
    let data = [
        1.0,
        -0.5 * delta,
        -0.5 * delta * delta,
        -1.0,
        -0.5 * delta,
        0.5 * delta * delta,
    ];
    let mut coeffs = [0.0; 6];
    for (basis, d) in H.iter().zip(data.iter()) {
        for (c, b) in coeffs.iter_mut().zip(basis.iter()) {
            *c += d * b;
        }
    }
    coeffs
}
