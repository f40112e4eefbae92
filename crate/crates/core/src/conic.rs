//! Ellipses in pixel coordinates: fitting, the coefficient and geometric
//! parameterizations, and conversions between them.
//!
//! The public coefficient form is `a x² + 2b xy + c y² + 2d x + 2e y + 1 = 0`.
//! Internally conics are carried as symmetric 3×3 homogeneous matrices and only
//! normalized to a unit constant term at the boundary, since that form cannot
//! represent a conic through the pixel origin.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::camera::PixelPoint;
use crate::error::{Error, Result};

/// Relative magnitude below which the constant term counts as zero.
pub const NORMALIZATION_EPS: f64 = 1e-12;
/// Largest accepted condition number of the (column-equilibrated) design matrix.
pub const MAX_FIT_CONDITION: f64 = 1e12;
const SQRT_ARG_TOLERANCE: f64 = 1e-12;

/// Coefficients of `a x² + 2b xy + c y² + 2d x + 2e y + 1 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
}

impl EllipseCoefficients {
    pub const fn new(a: f64, b: f64, c: f64, d: f64, e: f64) -> Self {
        Self { a, b, c, d, e }
    }

    /// `b² − ac`; negative for an ellipse.
    pub fn discriminant(&self) -> f64 {
        self.b * self.b - self.a * self.c
    }

    pub fn is_ellipse(&self) -> bool {
        self.discriminant() < 0.0
    }

    pub fn to_homogeneous(&self) -> HomogeneousConic {
        HomogeneousConic(Matrix3::new(
            self.a, self.b, self.d, self.b, self.c, self.e, self.d, self.e, 1.0,
        ))
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.a, self.b, self.c, self.d, self.e]
    }

    /// Half the gradient of the conic polynomial at `p`: `(a x + b y + d, b x + c y + e)`.
    pub fn half_gradient(&self, p: &PixelPoint) -> (f64, f64) {
        (
            self.a * p.x + self.b * p.y + self.d,
            self.b * p.x + self.c * p.y + self.e,
        )
    }
}

/// Symmetric 3×3 matrix `C` with `[x y 1] C [x y 1]ᵀ = 0`, defined up to scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneousConic(pub Matrix3<f64>);

impl HomogeneousConic {
    /// Rescales to a unit constant term.
    pub fn normalize(&self) -> Result<EllipseCoefficients> {
        let m = &self.0;
        let f = m[(2, 2)];
        let scale = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if !(scale.is_finite()) || scale == 0.0 || f.abs() < NORMALIZATION_EPS * scale {
            return Err(Error::DegenerateNormalization);
        }
        Ok(EllipseCoefficients {
            a: m[(0, 0)] / f,
            b: 0.5 * (m[(0, 1)] + m[(1, 0)]) / f,
            c: m[(1, 1)] / f,
            d: 0.5 * (m[(0, 2)] + m[(2, 0)]) / f,
            e: 0.5 * (m[(1, 2)] + m[(2, 1)]) / f,
        })
    }

    pub fn evaluate(&self, p: &PixelPoint) -> f64 {
        let v = Vector3::new(p.x, p.y, 1.0);
        v.dot(&(self.0 * v))
    }
}

/// Geometric ellipse: center, semi-axis lengths and rotation of the `width` axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseParams {
    pub center: PixelPoint,
    pub width: f64,
    pub height: f64,
    pub rotation: f64,
}

impl EllipseParams {
    pub fn new(center: PixelPoint, width: f64, height: f64, rotation: f64) -> Self {
        Self {
            center,
            width,
            height,
            rotation,
        }
    }

    /// Canonical form: `width ≥ height`, rotation in `[−π/2, π/2)`.
    pub fn canonical(&self) -> Self {
        let (width, height, rotation) = if self.width < self.height {
            (self.height, self.width, self.rotation + FRAC_PI_2)
        } else {
            (self.width, self.height, self.rotation)
        };
        Self {
            center: self.center,
            width,
            height,
            rotation: wrap_half_turn(rotation),
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [
            self.center.x,
            self.center.y,
            self.width,
            self.height,
            self.rotation,
        ]
    }
}

/// Wraps an axis orientation (period π) into `[−π/2, π/2)`.
pub fn wrap_half_turn(angle: f64) -> f64 {
    let wrapped = (angle + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    // rem_euclid can round up to exactly π for tiny negative inputs
    if wrapped >= FRAC_PI_2 {
        wrapped - PI
    } else {
        wrapped
    }
}

/// Value of the conic polynomial at `p`.
pub fn conic_residual(coeffs: &EllipseCoefficients, p: &PixelPoint) -> f64 {
    let EllipseCoefficients { a, b, c, d, e } = *coeffs;
    a * p.x * p.x + 2.0 * b * p.x * p.y + c * p.y * p.y + 2.0 * d * p.x + 2.0 * e * p.y + 1.0
}

/// Fits `D θ = −1` over at least five points.
///
/// The residual of a point is the conic polynomial's value there, which does
/// not depend on the coordinate frame. The problem is solved in centred,
/// RMS-scaled coordinates as `min ‖M φ‖` subject to the pixel-frame constant
/// term being 1, and mapped back. Five points give the exact interpolant,
/// more points the least-squares fit.
pub fn fit_ellipse(points: &[PixelPoint]) -> Result<EllipseCoefficients> {
    if points.len() < 5 {
        return Err(Error::Precondition(format!(
            "ellipse fit needs at least 5 points, got {}",
            points.len()
        )));
    }
    if let Some(p) = points.iter().find(|p| !p.is_finite()) {
        return Err(Error::Precondition(format!(
            "non-finite point ({}, {})",
            p.x, p.y
        )));
    }
    let n = points.len();
    let (mx, my) = (
        points.iter().map(|p| p.x).sum::<f64>() / n as f64,
        points.iter().map(|p| p.y).sum::<f64>() / n as f64,
    );
    let spread = (points
        .iter()
        .map(|p| (p.x - mx).powi(2) + (p.y - my).powi(2))
        .sum::<f64>()
        / (2 * n) as f64)
        .sqrt();
    if !(spread > 0.0) {
        return Err(Error::DegenerateConfiguration("all points coincide".into()));
    }

    // Pad to a square matrix so the SVD exposes the full right singular basis.
    let mut design = DMatrix::<f64>::zeros(n.max(6), 6);
    for (i, p) in points.iter().enumerate() {
        let (x, y) = ((p.x - mx) / spread, (p.y - my) / spread);
        design
            .row_mut(i)
            .copy_from_slice(&[x * x, 2.0 * x * y, y * y, 2.0 * x, 2.0 * y, 1.0]);
    }
    let svd = design.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::NumericalFailure("SVD without V".into()))?;
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    // A second (near) null direction means the points lie on a pencil of conics.
    if !(sv[4] > 0.0) || sv[0] / sv[4] > MAX_FIT_CONDITION {
        return Err(Error::DegenerateConfiguration(format!(
            "design matrix condition number {:e} exceeds {:e}",
            sv[0] / sv[4],
            MAX_FIT_CONDITION
        )));
    }

    // Pixel origin in normalized coordinates; the constraint is its conic value.
    let (ox, oy) = (-mx / spread, -my / spread);
    let g = Vector6::new(ox * ox, 2.0 * ox * oy, oy * oy, 2.0 * ox, 2.0 * oy, 1.0);
    let mut phi = Vector6::zeros();
    for (rank, &k) in order.iter().enumerate() {
        let v = Vector6::from_iterator(v_t.row(k).iter().copied());
        let w = if rank == 5 {
            1.0
        } else {
            (sv[5] / sv[rank]).powi(2)
        };
        phi += v * (w * v.dot(&g));
    }

    let normalized = Matrix3::new(
        phi[0], phi[1], phi[3], phi[1], phi[2], phi[4], phi[3], phi[4], phi[5],
    );
    let to_normalized = Matrix3::new(
        1.0 / spread,
        0.0,
        -mx / spread,
        0.0,
        1.0 / spread,
        -my / spread,
        0.0,
        0.0,
        1.0,
    );
    let coeffs =
        HomogeneousConic(to_normalized.transpose() * normalized * to_normalized).normalize()?;
    if !coeffs.is_ellipse() {
        return Err(Error::NotAnEllipse {
            discriminant: coeffs.discriminant(),
        });
    }
    Ok(coeffs)
}

fn checked_sqrt(arg: f64, what: &str) -> Result<f64> {
    if arg.is_nan() {
        return Err(Error::NumericalFailure(format!("{what}: NaN")));
    }
    if arg < -SQRT_ARG_TOLERANCE {
        return Err(Error::NumericalFailure(format!(
            "{what}: negative square-root argument {arg:e}"
        )));
    }
    Ok(arg.max(0.0).sqrt())
}

/// Center, semi-axes and rotation from coefficients, in canonical form.
pub fn coeffs_to_params(coeffs: &EllipseCoefficients) -> Result<EllipseParams> {
    let EllipseCoefficients { a, b, c, d, e } = *coeffs;
    let disc = coeffs.discriminant();
    if !(disc < 0.0) {
        return Err(Error::NotAnEllipse { discriminant: disc });
    }
    let center = PixelPoint::new((c * d - b * e) / disc, (a * e - b * d) / disc);

    let numerator = 2.0 * (a * e * e + c * d * d + b * b - 2.0 * b * d * e - a * c);
    let root = ((a - c) * (a - c) + 4.0 * b * b).sqrt();
    let first = checked_sqrt(numerator / (disc * (-root - (a + c))), "first semi-axis")?;
    let second = checked_sqrt(numerator / (disc * (root - (a + c))), "second semi-axis")?;
    if !(first.is_finite() && second.is_finite()) || first.max(second) == 0.0 {
        return Err(Error::NumericalFailure(
            "semi-axis is not finite or ellipse is a point".into(),
        ));
    }
    let (width, height) = if first >= second {
        (first, second)
    } else {
        (second, first)
    };

    // Axis direction from the tangent half-angle; decide whether it is the
    // major axis by comparing the quadratic form along it and across it.
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    let along = quadratic_form(a, b, c, theta);
    let across = quadratic_form(a, b, c, theta + FRAC_PI_2);
    let rotation = if along.abs() <= across.abs() {
        theta
    } else {
        theta + FRAC_PI_2
    };

    Ok(EllipseParams {
        center,
        width,
        height,
        rotation: wrap_half_turn(rotation),
    })
}

fn quadratic_form(a: f64, b: f64, c: f64, angle: f64) -> f64 {
    let (s, co) = angle.sin_cos();
    a * co * co + 2.0 * b * s * co + c * s * s
}

/// Homogeneous conic of a geometric ellipse.
pub fn params_to_homogeneous(params: &EllipseParams) -> Result<HomogeneousConic> {
    let EllipseParams {
        center,
        width,
        height,
        rotation,
    } = *params;
    if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "semi-axes must be positive, got ({width}, {height})"
        )));
    }
    if !(center.is_finite() && rotation.is_finite()) {
        return Err(Error::InvalidParams("non-finite center or rotation".into()));
    }
    let (s, co) = rotation.sin_cos();
    let iw = 1.0 / (width * width);
    let ih = 1.0 / (height * height);
    let qa = co * co * iw + s * s * ih;
    let qb = s * co * (iw - ih);
    let qc = s * s * iw + co * co * ih;
    let (x0, y0) = (center.x, center.y);
    let qd = -(qa * x0 + qb * y0);
    let qe = -(qb * x0 + qc * y0);
    let qf = qa * x0 * x0 + 2.0 * qb * x0 * y0 + qc * y0 * y0 - 1.0;
    Ok(HomogeneousConic(Matrix3::new(
        qa, qb, qd, qb, qc, qe, qd, qe, qf,
    )))
}

pub fn params_to_coeffs(params: &EllipseParams) -> Result<EllipseCoefficients> {
    params_to_homogeneous(params)?.normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn circle10() -> EllipseCoefficients {
        EllipseCoefficients::new(-0.01, 0.0, -0.01, 0.0, 0.0)
    }

    #[test]
    fn fits_origin_circle_exactly() {
        let s = 50.0_f64.sqrt();
        let pts = [
            PixelPoint::new(10.0, 0.0),
            PixelPoint::new(-10.0, 0.0),
            PixelPoint::new(0.0, 10.0),
            PixelPoint::new(0.0, -10.0),
            PixelPoint::new(s, s),
        ];
        let c = fit_ellipse(&pts).unwrap();
        for (got, want) in c.as_array().iter().zip(circle10().as_array()) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn fits_circle_from_five_parametric_samples() {
        let pts: Vec<_> = [0.0_f64, 50.0, 110.0, 200.0, 300.0]
            .iter()
            .map(|deg| {
                let t = deg.to_radians();
                PixelPoint::new(128.0 + 40.0 * t.cos(), 128.0 + 40.0 * t.sin())
            })
            .collect();
        let c = fit_ellipse(&pts).unwrap();
        assert_relative_eq!(c.a, c.c, max_relative = 1e-9);
        assert!(c.b.abs() < 1e-9 * c.a.abs());
        let p = coeffs_to_params(&c).unwrap();
        assert!((p.center.x - 128.0).abs() < 1e-9);
        assert!((p.center.y - 128.0).abs() < 1e-9);
        assert!((p.width - 40.0).abs() < 1e-9);
        assert!((p.height - 40.0).abs() < 1e-9);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts: Vec<_> = (0..5)
            .map(|i| PixelPoint::new(10.0 + i as f64, 20.0 + 2.0 * i as f64))
            .collect();
        assert!(matches!(
            fit_ellipse(&pts),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn fewer_than_five_points_is_a_precondition_error() {
        let pts = [PixelPoint::new(1.0, 2.0); 4];
        assert!(matches!(fit_ellipse(&pts), Err(Error::Precondition(_))));
    }

    #[test]
    fn hyperbola_fit_is_rejected() {
        // x² − y² = −1 normalized: −x² + y² + ... ; points on y² − x² = 1 shifted
        let pts: Vec<_> = [-2.0_f64, -1.0, 0.5, 1.5, 3.0]
            .iter()
            .map(|&x| PixelPoint::new(x, (1.0 + x * x).sqrt()))
            .collect();
        assert!(matches!(fit_ellipse(&pts), Err(Error::NotAnEllipse { .. })));
    }

    #[test]
    fn residual_values() {
        let c = circle10();
        assert_eq!(conic_residual(&c, &PixelPoint::new(10.0, 0.0)), 0.0);
        assert!((conic_residual(&c, &PixelPoint::new(11.0, 0.0)) + 0.21).abs() < 1e-12);
        assert_eq!(conic_residual(&c, &PixelPoint::new(0.0, 0.0)), 1.0);
    }

    #[test]
    fn circle_coefficients_to_params() {
        let p = coeffs_to_params(&circle10()).unwrap();
        assert_eq!(p.center, PixelPoint::new(0.0, 0.0));
        assert!((p.width - 10.0).abs() < 1e-12);
        assert!((p.height - 10.0).abs() < 1e-12);
        assert_eq!(p.rotation, 0.0);
    }

    #[test]
    fn rotated_ellipse_round_trip() {
        let truth = EllipseParams::new(
            PixelPoint::new(128.0, 128.0),
            40.0,
            20.0,
            30f64.to_radians(),
        );
        let p = coeffs_to_params(&params_to_coeffs(&truth).unwrap()).unwrap();
        assert!((p.center.x - 128.0).abs() < 1e-9);
        assert!((p.center.y - 128.0).abs() < 1e-9);
        assert!((p.width - 40.0).abs() < 1e-9);
        assert!((p.height - 20.0).abs() < 1e-9);
        assert!((p.rotation - 30f64.to_radians()).abs() < 1e-9);
    }

    #[test]
    fn swapped_axes_canonicalize_to_the_same_ellipse() {
        let p = EllipseParams::new(PixelPoint::new(100.0, 90.0), 15.0, 30.0, 0.2).canonical();
        assert_eq!(p.width, 30.0);
        assert_eq!(p.height, 15.0);
        assert!((p.rotation - (0.2 + FRAC_PI_2 - PI)).abs() < 1e-12);
    }

    #[test]
    fn hyperbola_coefficients_rejected() {
        let h = EllipseCoefficients::new(0.01, 0.0, -0.01, 0.0, 0.0);
        assert!(matches!(
            coeffs_to_params(&h),
            Err(Error::NotAnEllipse { .. })
        ));
    }

    #[test]
    fn params_to_coeffs_circle_and_invalid() {
        let c = params_to_coeffs(&EllipseParams::new(
            PixelPoint::new(0.0, 0.0),
            10.0,
            10.0,
            0.0,
        ))
        .unwrap();
        for (got, want) in c.as_array().iter().zip(circle10().as_array()) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!(matches!(
            params_to_coeffs(&EllipseParams::new(
                PixelPoint::new(0.0, 0.0),
                0.0,
                0.0,
                0.0
            )),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn ellipse_through_origin_cannot_be_normalized() {
        let p = EllipseParams::new(PixelPoint::new(10.0, 0.0), 10.0, 5.0, 0.0);
        assert_eq!(params_to_coeffs(&p), Err(Error::DegenerateNormalization));
    }

    #[test]
    fn wrap_half_turn_range() {
        for k in -20..20 {
            let a = wrap_half_turn(0.3 + k as f64 * 0.7);
            assert!((-FRAC_PI_2..FRAC_PI_2).contains(&a));
        }
        assert_eq!(wrap_half_turn(FRAC_PI_2), -FRAC_PI_2);
    }

    fn ellipse_strategy() -> impl Strategy<Value = EllipseParams> {
        (
            0.0..256.0f64,
            0.0..256.0f64,
            5.5..100.0f64,
            0.0..1.0f64,
            -FRAC_PI_2..FRAC_PI_2,
        )
            .prop_map(|(x, y, w, frac, rot)| {
                let h = 5.0 + frac * (0.95 * w - 5.0);
                EllipseParams::new(PixelPoint::new(x, y), w, h, rot)
            })
            .prop_filter("ellipse must not pass near the pixel origin", |p| {
                p.center.x.hypot(p.center.y) > p.width + 1.0
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn params_round_trip(p in ellipse_strategy()) {
            let back = coeffs_to_params(&params_to_coeffs(&p).unwrap()).unwrap();
            prop_assert!((back.center.x - p.center.x).abs() < 1e-9 * p.center.x.abs().max(1.0));
            prop_assert!((back.center.y - p.center.y).abs() < 1e-9 * p.center.y.abs().max(1.0));
            prop_assert!((back.width - p.width).abs() < 1e-9 * p.width);
            prop_assert!((back.height - p.height).abs() < 1e-9 * p.width);
            prop_assert!((back.rotation - p.rotation).abs() < 1e-9);
        }

        #[test]
        fn params_invariant_under_conic_scaling(p in ellipse_strategy(), k in 1e-6..1e6f64) {
            let h = params_to_homogeneous(&p).unwrap();
            let scaled = HomogeneousConic(h.0 * k);
            let a = coeffs_to_params(&h.normalize().unwrap()).unwrap();
            let b = coeffs_to_params(&scaled.normalize().unwrap()).unwrap();
            for (x, y) in a.as_array().iter().zip(b.as_array()) {
                prop_assert!((x - y).abs() < 1e-9 * x.abs().max(1.0));
            }
        }

        #[test]
        fn fit_recovers_noiseless_ellipse(p in ellipse_strategy(), extra in 0usize..6, phase in 0.0..std::f64::consts::TAU) {
            let n = 5 + extra;
            let pts: Vec<_> = (0..n).map(|i| {
                let t = phase + i as f64 * 2.0 * PI / n as f64;
                let (s, c) = p.rotation.sin_cos();
                let (u, v) = (p.width * t.cos(), p.height * t.sin());
                PixelPoint::new(p.center.x + c * u - s * v, p.center.y + s * u + c * v)
            }).collect();
            let fitted = fit_ellipse(&pts).unwrap();
            let truth = params_to_coeffs(&p).unwrap();
            for (x, y) in fitted.as_array().iter().zip(truth.as_array()) {
                let scale = truth.as_array().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                prop_assert!((x - y).abs() < 1e-9 * scale, "{} vs {}", x, y);
            }
        }
    }
}
