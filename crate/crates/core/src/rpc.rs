//! Rational polynomial camera model with a constant image-space bias.
//!
//! Ground coordinates are geodetic latitude/longitude in degrees and height in
//! meters above the ellipsoid. Image coordinates are continuous pixel
//! coordinates with the center of pixel `(i, j)` at `(i, j)`.
//!
//! The bias model is a pure translation: [`RpcModel::project`] subtracts the
//! bias from the uncorrected projection, so the residual
//! `observed - project(g)` equals `observed + bias - predicted`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::kv::{fmt_f64, KeyValues};

/// Smallest admissible magnitude of a denominator polynomial.
pub const DENOMINATOR_EPS: f64 = 1e-10;
/// Half-width of the normalized cube on which a model is considered valid.
pub const VALIDITY_CUBE: f64 = 1.2;
/// Newton tolerance in pixels for [`RpcModel::inverse_project`].
pub const INVERSE_TOL_PX: f64 = 1e-6;
pub const MAX_NEWTON_ITERS: usize = 20;
/// Triangulation stops when the update falls below this (normalized units).
pub const TRIANGULATION_TOL: f64 = 1e-9;
pub const TRIANGULATION_MAX_COND: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroundPoint {
    pub lat: f64,
    pub lon: f64,
    pub hei: f64,
}

impl GroundPoint {
    pub const fn new(lat: f64, lon: f64, hei: f64) -> Self {
        Self { lat, lon, hei }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon) && self.hei.is_finite()
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.lat, self.lon, self.hei)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImagePoint {
    pub row: f64,
    pub col: f64,
}

impl ImagePoint {
    pub const fn new(row: f64, col: f64) -> Self {
        Self { row, col }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.row, self.col)
    }

    pub fn from_vector(v: &Vector2<f64>) -> Self {
        Self::new(v[0], v[1])
    }

    pub fn distance(&self, other: &ImagePoint) -> f64 {
        (self.row - other.row).hypot(self.col - other.col)
    }
}

/// Constant translation `(d_row, d_col)` in level-2 image space.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BiasCorrection {
    pub d_row: f64,
    pub d_col: f64,
}

impl BiasCorrection {
    pub const ZERO: BiasCorrection = BiasCorrection { d_row: 0.0, d_col: 0.0 };

    pub const fn new(d_row: f64, d_col: f64) -> Self {
        Self { d_row, d_col }
    }
}

/// Partial derivatives of the bias-modeled residual `f = observed + bias - predicted`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jacobians {
    /// `d(f_row, f_col) / d(d_row, d_col)`; identity for the constant-bias model.
    pub a_block: Matrix2<f64>,
    /// `d(f_row, f_col) / d(lat, lon, hei)`, pixels per degree / meter.
    pub b_block: Matrix2x3<f64>,
}

/// Normalized ground coordinates `(P, L, H)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedGround {
    pub p: f64,
    pub l: f64,
    pub h: f64,
}

/// The 20 cubic monomials in the RPC00B order:
/// `1, L, P, H, LP, LH, PH, L², P², H², PLH, L³, LP², LH², L²P, P³, PH², L²H, P²H, H³`.
pub fn poly_terms(p: f64, l: f64, h: f64) -> [f64; 20] {
    [
        1.0,
        l,
        p,
        h,
        l * p,
        l * h,
        p * h,
        l * l,
        p * p,
        h * h,
        p * l * h,
        l * l * l,
        l * p * p,
        l * h * h,
        l * l * p,
        p * p * p,
        p * h * h,
        l * l * h,
        p * p * h,
        h * h * h,
    ]
}

/// Derivatives of [`poly_terms`] with respect to `P`, `L` and `H`.
pub fn poly_term_gradients(p: f64, l: f64, h: f64) -> [[f64; 20]; 3] {
    let dp = [
        0.0,
        0.0,
        1.0,
        0.0,
        l,
        0.0,
        h,
        0.0,
        2.0 * p,
        0.0,
        l * h,
        0.0,
        2.0 * l * p,
        0.0,
        l * l,
        3.0 * p * p,
        h * h,
        0.0,
        2.0 * p * h,
        0.0,
    ];
    let dl = [
        0.0,
        1.0,
        0.0,
        0.0,
        p,
        h,
        0.0,
        2.0 * l,
        0.0,
        0.0,
        p * h,
        3.0 * l * l,
        p * p,
        h * h,
        2.0 * l * p,
        0.0,
        0.0,
        2.0 * l * h,
        0.0,
        0.0,
    ];
    let dh = [
        0.0,
        0.0,
        0.0,
        1.0,
        0.0,
        l,
        p,
        0.0,
        0.0,
        2.0 * h,
        p * l,
        0.0,
        0.0,
        2.0 * l * h,
        0.0,
        0.0,
        2.0 * p * h,
        l * l,
        p * p,
        3.0 * h * h,
    ];
    [dp, dl, dh]
}

fn dot20(a: &[f64; 20], b: &[f64; 20]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpcModel {
    pub line_off: f64,
    pub line_scale: f64,
    pub samp_off: f64,
    pub samp_scale: f64,
    pub lat_off: f64,
    pub lat_scale: f64,
    pub lon_off: f64,
    pub lon_scale: f64,
    pub hei_off: f64,
    pub hei_scale: f64,
    pub line_num: [f64; 20],
    pub line_den: [f64; 20],
    pub samp_num: [f64; 20],
    pub samp_den: [f64; 20],
}

/// Uncorrected projection together with its ground gradient.
struct Evaluation {
    row: f64,
    col: f64,
    /// `d(row, col) / d(lat, lon, hei)`.
    gradient: Matrix2x3<f64>,
}

const RPC_SCALAR_KEYS: [&str; 10] = [
    "LINE_OFF",
    "SAMP_OFF",
    "LAT_OFF",
    "LONG_OFF",
    "HEIGHT_OFF",
    "LINE_SCALE",
    "SAMP_SCALE",
    "LAT_SCALE",
    "LONG_SCALE",
    "HEIGHT_SCALE",
];
const RPC_COEF_GROUPS: [&str; 4] = ["LINE_NUM_COEFF", "LINE_DEN_COEFF", "SAMP_NUM_COEFF", "SAMP_DEN_COEFF"];

impl RpcModel {
    /// Normalizes the denominators so their constant terms are one and checks
    /// the model invariants.
    pub fn validated(mut self) -> Result<Self> {
        let scales = [
            ("LINE_SCALE", self.line_scale),
            ("SAMP_SCALE", self.samp_scale),
            ("LAT_SCALE", self.lat_scale),
            ("LONG_SCALE", self.lon_scale),
            ("HEIGHT_SCALE", self.hei_scale),
        ];
        for (name, s) in scales {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidModel(format!("{name} must be positive, got {s}")));
            }
        }
        let offsets = [self.line_off, self.samp_off, self.lat_off, self.lon_off, self.hei_off];
        let all_coefs = self.line_num.iter().chain(&self.line_den).chain(&self.samp_num).chain(&self.samp_den);
        if offsets.iter().chain(all_coefs).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite offset or coefficient".into()));
        }
        for (num, den) in [(&mut self.line_num, &mut self.line_den), (&mut self.samp_num, &mut self.samp_den)] {
            let d0 = den[0];
            if d0.abs() <= DENOMINATOR_EPS {
                return Err(Error::InvalidModel("denominator constant term is zero".into()));
            }
            if d0 != 1.0 {
                num.iter_mut().for_each(|c| *c /= d0);
                den.iter_mut().for_each(|c| *c /= d0);
            }
        }
        self.check_denominators()?;
        Ok(self)
    }

    fn check_denominators(&self) -> Result<()> {
        const STEPS: usize = 7;
        let at = |k: usize| -VALIDITY_CUBE + 2.0 * VALIDITY_CUBE * k as f64 / (STEPS - 1) as f64;
        for i in 0..STEPS {
            for j in 0..STEPS {
                for k in 0..STEPS {
                    let t = poly_terms(at(i), at(j), at(k));
                    for den in [&self.line_den, &self.samp_den] {
                        // den(0) = 1 after normalization, so a sign change means a zero crossing
                        let v = dot20(den, &t);
                        if v <= DENOMINATOR_EPS {
                            return Err(Error::InvalidModel(format!(
                                "denominator vanishes inside the validity cube (|den| = {:e})",
                                v.abs()
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn normalize_ground(&self, g: &GroundPoint) -> NormalizedGround {
        NormalizedGround {
            p: (g.lat - self.lat_off) / self.lat_scale,
            l: (g.lon - self.lon_off) / self.lon_scale,
            h: (g.hei - self.hei_off) / self.hei_scale,
        }
    }

    pub fn denormalize_ground(&self, n: &NormalizedGround) -> GroundPoint {
        GroundPoint {
            lat: n.p * self.lat_scale + self.lat_off,
            lon: n.l * self.lon_scale + self.lon_off,
            hei: n.h * self.hei_scale + self.hei_off,
        }
    }

    /// Ground scales as a diagonal, mapping normalized steps to degrees/meters.
    pub fn ground_scales(&self) -> Vector3<f64> {
        Vector3::new(self.lat_scale, self.lon_scale, self.hei_scale)
    }

    pub fn center(&self) -> GroundPoint {
        GroundPoint::new(self.lat_off, self.lon_off, self.hei_off)
    }

    fn evaluate(&self, g: &GroundPoint, with_gradient: bool) -> Result<Evaluation> {
        let n = self.normalize_ground(g);
        let t = poly_terms(n.p, n.l, n.h);
        let ln = dot20(&self.line_num, &t);
        let ld = dot20(&self.line_den, &t);
        let sn = dot20(&self.samp_num, &t);
        let sd = dot20(&self.samp_den, &t);
        for d in [ld, sd] {
            if !(d.abs() > DENOMINATOR_EPS) {
                return Err(Error::DegenerateDenominator { value: d.abs() });
            }
        }
        let row = ln / ld * self.line_scale + self.line_off;
        let col = sn / sd * self.samp_scale + self.samp_off;
        let mut gradient = Matrix2x3::zeros();
        if with_gradient {
            let grads = poly_term_gradients(n.p, n.l, n.h);
            let ground_scale = [self.lat_scale, self.lon_scale, self.hei_scale];
            for (axis, dt) in grads.iter().enumerate() {
                let dr = (dot20(&self.line_num, dt) * ld - ln * dot20(&self.line_den, dt)) / (ld * ld);
                let dc = (dot20(&self.samp_num, dt) * sd - sn * dot20(&self.samp_den, dt)) / (sd * sd);
                gradient[(0, axis)] = dr * self.line_scale / ground_scale[axis];
                gradient[(1, axis)] = dc * self.samp_scale / ground_scale[axis];
            }
        }
        Ok(Evaluation { row, col, gradient })
    }

    /// Bias-corrected projection of a ground point into the image.
    pub fn project(&self, bias: &BiasCorrection, g: &GroundPoint) -> Result<ImagePoint> {
        let e = self.evaluate(g, false)?;
        Ok(ImagePoint::new(e.row - bias.d_row, e.col - bias.d_col))
    }

    /// `observed - project(bias, g)`, componentwise.
    pub fn residual(&self, bias: &BiasCorrection, g: &GroundPoint, observed: &ImagePoint) -> Result<Vector2<f64>> {
        let p = self.project(bias, g)?;
        Ok(Vector2::new(observed.row - p.row, observed.col - p.col))
    }

    /// `d(row, col) / d(lat, lon, hei)` of the projection.
    pub fn ground_gradient(&self, g: &GroundPoint) -> Result<Matrix2x3<f64>> {
        Ok(self.evaluate(g, true)?.gradient)
    }

    /// Linearization of the residual at `(bias0, g0)`. The bias does not enter
    /// the ground partials, so `bias0` only matters through the caller's residual.
    pub fn jacobian(&self, _bias0: &BiasCorrection, g0: &GroundPoint) -> Result<Jacobians> {
        let e = self.evaluate(g0, true)?;
        Ok(Jacobians { a_block: Matrix2::identity(), b_block: -e.gradient })
    }

    /// Projection and residual Jacobians in one evaluation.
    pub(crate) fn linearize(
        &self,
        bias: &BiasCorrection,
        g: &GroundPoint,
        observed: &ImagePoint,
    ) -> Result<(Vector2<f64>, Matrix2x3<f64>)> {
        let e = self.evaluate(g, true)?;
        let v = Vector2::new(observed.row - (e.row - bias.d_row), observed.col - (e.col - bias.d_col));
        Ok((v, -e.gradient))
    }

    /// Ground point at height `hei` that projects onto `p`.
    pub fn inverse_project(&self, bias: &BiasCorrection, p: &ImagePoint, hei: f64) -> Result<GroundPoint> {
        // Iterates beyond this normalized radius are treated as divergence.
        const DIVERGENCE_RADIUS: f64 = 2.0;
        let mut g = GroundPoint::new(self.lat_off, self.lon_off, hei);
        let mut last = f64::INFINITY;
        for _ in 0..=MAX_NEWTON_ITERS {
            let e = self.evaluate(&g, true)?;
            let dr = p.row - (e.row - bias.d_row);
            let dc = p.col - (e.col - bias.d_col);
            last = dr.hypot(dc);
            if last <= INVERSE_TOL_PX {
                return Ok(g);
            }
            let j = Matrix2::new(e.gradient[(0, 0)], e.gradient[(0, 1)], e.gradient[(1, 0)], e.gradient[(1, 1)]);
            let Some(inv) = j.try_inverse() else {
                return Err(Error::NoConvergence("singular planimetric Jacobian".into()));
            };
            let step = inv * Vector2::new(dr, dc);
            g.lat += step[0];
            g.lon += step[1];
            let n = self.normalize_ground(&g);
            if !(n.p.abs() <= DIVERGENCE_RADIUS && n.l.abs() <= DIVERGENCE_RADIUS) {
                return Err(Error::NoConvergence(format!(
                    "image point ({:.3}, {:.3}) lies outside the model footprint",
                    p.row, p.col
                )));
            }
        }
        Err(Error::NoConvergence(format!(
            "inverse projection residual {last:e} px after {MAX_NEWTON_ITERS} iterations"
        )))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let kv = KeyValues::read(path)?;
        Self::from_key_values(&kv)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_key_values(&KeyValues::parse(text, "<rpc>")?)
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut coefs = [[0.0; 20]; 4];
        for (group, out) in RPC_COEF_GROUPS.iter().zip(coefs.iter_mut()) {
            for (i, c) in out.iter_mut().enumerate() {
                *c = kv.number(&format!("{group}_{}", i + 1))?;
            }
        }
        let [line_num, line_den, samp_num, samp_den] = coefs;
        RpcModel {
            line_off: kv.number("LINE_OFF")?,
            samp_off: kv.number("SAMP_OFF")?,
            lat_off: kv.number("LAT_OFF")?,
            lon_off: kv.number("LONG_OFF")?,
            hei_off: kv.number("HEIGHT_OFF")?,
            line_scale: kv.number("LINE_SCALE")?,
            samp_scale: kv.number("SAMP_SCALE")?,
            lat_scale: kv.number("LAT_SCALE")?,
            lon_scale: kv.number("LONG_SCALE")?,
            hei_scale: kv.number("HEIGHT_SCALE")?,
            line_num,
            line_den,
            samp_num,
            samp_den,
        }
        .validated()
        .map_err(|e| match e {
            Error::InvalidModel(m) => Error::parse(kv.path(), m),
            other => other,
        })
    }

    /// RPC text representation; values round-trip exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let scalars = [
            self.line_off,
            self.samp_off,
            self.lat_off,
            self.lon_off,
            self.hei_off,
            self.line_scale,
            self.samp_scale,
            self.lat_scale,
            self.lon_scale,
            self.hei_scale,
        ];
        for (k, v) in RPC_SCALAR_KEYS.iter().zip(scalars) {
            let _ = writeln!(out, "{k}: {}", fmt_f64(v));
        }
        for (group, coefs) in
            RPC_COEF_GROUPS.iter().zip([&self.line_num, &self.line_den, &self.samp_num, &self.samp_den])
        {
            for (i, c) in coefs.iter().enumerate() {
                let _ = writeln!(out, "{group}_{}: {}", i + 1, fmt_f64(*c));
            }
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Least-squares intersection of two or more image rays.
///
/// Gauss-Newton in the normalized ground frame of the first observation's
/// model, started from the first ray at that model's height offset.
pub fn triangulate(observations: &[(&RpcModel, BiasCorrection, ImagePoint)]) -> Result<GroundPoint> {
    if observations.len() < 2 {
        return Err(Error::IllConditioned { condition: f64::INFINITY, limit: TRIANGULATION_MAX_COND });
    }
    let (first, first_bias, first_obs) = &observations[0];
    let mut g = first.inverse_project(first_bias, first_obs, first.hei_off)?;
    triangulate_from(observations, g).or_else(|err| {
        // Fall back to the plain model center when the first ray was used up.
        if matches!(err, Error::NoConvergence(_)) {
            g = first.center();
            triangulate_from(observations, g)
        } else {
            Err(err)
        }
    })
}

/// Gauss-Newton triangulation from a caller-supplied starting point.
pub fn triangulate_from(
    observations: &[(&RpcModel, BiasCorrection, ImagePoint)],
    start: GroundPoint,
) -> Result<GroundPoint> {
    if observations.len() < 2 {
        return Err(Error::IllConditioned { condition: f64::INFINITY, limit: TRIANGULATION_MAX_COND });
    }
    let scale = Matrix3::from_diagonal(&observations[0].0.ground_scales());
    let mut g = start;
    for _ in 0..MAX_NEWTON_ITERS {
        let mut normal = Matrix3::<f64>::zeros();
        let mut rhs = Vector3::<f64>::zeros();
        for (rpc, bias, obs) in observations {
            let (v, b) = rpc.linearize(bias, &g, obs)?;
            // d(residual)/d(normalized ground)
            let j = b * scale;
            normal += j.transpose() * j;
            rhs -= j.transpose() * v;
        }
        let cond = symmetric_condition(&normal);
        if !(cond <= TRIANGULATION_MAX_COND) {
            return Err(Error::IllConditioned { condition: cond, limit: TRIANGULATION_MAX_COND });
        }
        let Some(step) = normal.cholesky().map(|c| c.solve(&rhs)) else {
            return Err(Error::IllConditioned { condition: f64::INFINITY, limit: TRIANGULATION_MAX_COND });
        };
        g = GroundPoint::from_vector(&(g.to_vector() + scale * step));
        if step.amax() < TRIANGULATION_TOL {
            return Ok(g);
        }
    }
    Err(Error::NoConvergence(format!("triangulation did not settle within {MAX_NEWTON_ITERS} iterations")))
}

/// Ratio of extreme eigenvalues of a symmetric positive semidefinite matrix.
pub fn symmetric_condition(m: &Matrix3<f64>) -> f64 {
    let eig = m.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if !(min > 0.0) {
        return f64::INFINITY;
    }
    max / min
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn affine_rpc() -> RpcModel {
        let mut line_num = [0.0; 20];
        let mut samp_num = [0.0; 20];
        let mut den = [0.0; 20];
        den[0] = 1.0;
        line_num[1] = 1.0; // L
        samp_num[2] = 1.0; // P
        RpcModel {
            line_off: 500.0,
            line_scale: 500.0,
            samp_off: 400.0,
            samp_scale: 400.0,
            lat_off: 32.7,
            lat_scale: 0.05,
            lon_off: -117.1,
            lon_scale: 0.06,
            hei_off: 100.0,
            hei_scale: 200.0,
            line_num,
            line_den: den,
            samp_num,
            samp_den: den,
        }
        .validated()
        .unwrap()
    }

    fn curved_rpc() -> RpcModel {
        let mut m = affine_rpc();
        m.line_num[2] = 0.05;
        m.line_num[3] = 0.08;
        m.line_num[7] = 0.01;
        m.line_num[10] = 0.004;
        m.samp_num[1] = -0.03;
        m.samp_num[3] = -0.06;
        m.samp_num[8] = 0.02;
        m.line_den[1] = 0.01;
        m.line_den[9] = 0.002;
        m.samp_den[2] = -0.015;
        m.validated().unwrap()
    }

    #[test]
    fn normalize_offsets_cancel() {
        let m = affine_rpc();
        let n = m.normalize_ground(&m.center());
        assert_eq!((n.p, n.l, n.h), (0.0, 0.0, 0.0));
    }

    #[test]
    fn normalize_unit_scale() {
        let mut m = affine_rpc();
        m.lat_scale = 1.0;
        let n = m.normalize_ground(&GroundPoint::new(m.lat_off + 0.5, m.lon_off, m.hei_off));
        assert_eq!(n.p, 0.5);
    }

    #[test]
    fn normalize_direct_arithmetic() {
        let mut m = affine_rpc();
        m.lat_off = 32.7;
        m.lat_scale = 0.05;
        let n = m.normalize_ground(&GroundPoint::new(32.75, m.lon_off, m.hei_off));
        assert!((n.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn poly_terms_examples() {
        let t0 = poly_terms(0.0, 0.0, 0.0);
        assert_eq!(t0[0], 1.0);
        assert_eq!(t0.iter().filter(|v| **v != 0.0).count(), 1);
        assert!(poly_terms(1.0, 1.0, 1.0).iter().all(|v| *v == 1.0));
        let t = poly_terms(2.0, 3.0, 5.0);
        assert_eq!(t[10], 30.0); // PLH
        assert_eq!(t[11], 27.0); // L^3
    }

    #[test]
    fn poly_term_gradients_match_differences() {
        let (p, l, h) = (0.3, -0.7, 0.45);
        let g = poly_term_gradients(p, l, h);
        let eps = 1e-6;
        for axis in 0..3 {
            let mut hi = [p, l, h];
            let mut lo = [p, l, h];
            hi[axis] += eps;
            lo[axis] -= eps;
            let th = poly_terms(hi[0], hi[1], hi[2]);
            let tl = poly_terms(lo[0], lo[1], lo[2]);
            for k in 0..20 {
                let fd = (th[k] - tl[k]) / (2.0 * eps);
                assert!((fd - g[axis][k]).abs() < 1e-8, "axis {axis} term {k}");
            }
        }
    }

    #[test]
    fn linear_model_is_affine() {
        let m = affine_rpc();
        let g = GroundPoint::new(32.71, -117.08, 150.0);
        let p = m.project(&BiasCorrection::ZERO, &g).unwrap();
        let l = (g.lon - m.lon_off) / m.lon_scale;
        assert!((p.row - (l * m.line_scale + m.line_off)).abs() < 1e-9);
    }

    #[test]
    fn bias_is_pure_translation() {
        let m = curved_rpc();
        let g = GroundPoint::new(32.72, -117.11, 80.0);
        let p0 = m.project(&BiasCorrection::ZERO, &g).unwrap();
        let p1 = m.project(&BiasCorrection::new(2.0, -3.0), &g).unwrap();
        assert_eq!(p1.row - p0.row, -2.0);
        assert_eq!(p1.col - p0.col, 3.0);
    }

    #[test]
    fn residual_examples() {
        let m = curved_rpc();
        let bias = BiasCorrection::new(0.7, -1.1);
        let g = GroundPoint::new(32.69, -117.12, 40.0);
        let obs = m.project(&bias, &g).unwrap();
        assert_eq!(m.residual(&bias, &g, &obs).unwrap(), Vector2::zeros());
        let shifted = ImagePoint::new(obs.row + 1.0, obs.col);
        let v = m.residual(&bias, &g, &shifted).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-9 && v[1].abs() < 1e-9);
        // residual = observed + bias - predicted, so d(v_row)/d(d_row) = +1
        let delta = 0.25;
        let moved = BiasCorrection::new(bias.d_row + delta, bias.d_col);
        let v2 = m.residual(&moved, &g, &obs).unwrap();
        assert!((v2[0] - delta).abs() < 1e-9);
    }

    #[test]
    fn degenerate_denominator_is_reported() {
        let mut m = affine_rpc();
        // den = 1 + 2 H vanishes at H = -0.5, inside the cube
        m.line_den[3] = 2.0;
        assert!(matches!(m.clone().validated(), Err(Error::InvalidModel(_))));
        let g = m.denormalize_ground(&NormalizedGround { p: 0.0, l: 0.0, h: -0.5 });
        assert!(matches!(m.project(&BiasCorrection::ZERO, &g), Err(Error::DegenerateDenominator { .. })));
    }

    #[test]
    fn jacobian_of_linear_model() {
        let m = affine_rpc();
        let j = m.jacobian(&BiasCorrection::ZERO, &m.center()).unwrap();
        assert_eq!(j.a_block, Matrix2::identity());
        let grad = m.ground_gradient(&m.center()).unwrap();
        assert!((grad[(0, 1)] - m.line_scale / m.lon_scale).abs() < 1e-9);
        assert_eq!(grad[(0, 0)], 0.0);
        assert_eq!(grad[(0, 2)], 0.0);
        assert_eq!(j.b_block, -grad);
    }

    #[test]
    fn inverse_round_trip() {
        let m = curved_rpc();
        let bias = BiasCorrection::new(1.5, -0.5);
        let g = GroundPoint::new(32.73, -117.09, 210.0);
        let p = m.project(&bias, &g).unwrap();
        let back = m.inverse_project(&bias, &p, g.hei).unwrap();
        assert!((back.lat - g.lat).abs() < 1e-9);
        assert!((back.lon - g.lon).abs() < 1e-9);
        assert_eq!(back.hei, g.hei);
    }

    #[test]
    fn inverse_of_linear_model_matches_closed_form() {
        let m = affine_rpc();
        let p = ImagePoint::new(620.0, 310.0);
        let g = m.inverse_project(&BiasCorrection::ZERO, &p, 0.0).unwrap();
        let lon = (p.row - m.line_off) / m.line_scale * m.lon_scale + m.lon_off;
        let lat = (p.col - m.samp_off) / m.samp_scale * m.lat_scale + m.lat_off;
        assert!((g.lat - lat).abs() < 1e-12 && (g.lon - lon).abs() < 1e-12);
    }

    #[test]
    fn inverse_far_outside_footprint_fails() {
        let m = curved_rpc();
        let p = ImagePoint::new(1e6, -1e6);
        assert!(matches!(m.inverse_project(&BiasCorrection::ZERO, &p, 0.0), Err(Error::NoConvergence(_))));
    }

    #[test]
    fn single_image_cannot_triangulate() {
        let m = curved_rpc();
        let g = GroundPoint::new(32.71, -117.1, 120.0);
        let p = m.project(&BiasCorrection::ZERO, &g).unwrap();
        let obs = [(&m, BiasCorrection::ZERO, p), (&m, BiasCorrection::ZERO, p)];
        assert!(matches!(triangulate(&obs), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn rpc_text_round_trip() {
        let m = curved_rpc();
        let back = RpcModel::parse(&m.to_text()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rpc_text_is_whitespace_tolerant() {
        let text =
            curved_rpc().to_text().lines().map(|l| l.replacen(": ", " :   ", 1) + "  ").collect::<Vec<_>>().join("\n");
        assert_eq!(RpcModel::parse(&text).unwrap(), curved_rpc());
    }

    #[test]
    fn rpc_missing_key_is_named() {
        let text: String = affine_rpc()
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("SAMP_DEN_COEFF_7:"))
            .map(|l| format!("{l}\n"))
            .collect();
        let err = RpcModel::parse(&text).unwrap_err().to_string();
        assert!(err.contains("SAMP_DEN_COEFF_7"), "{err}");
    }

    #[test]
    fn denominators_are_normalized_on_load() {
        let mut m = curved_rpc();
        m.line_num.iter_mut().for_each(|c| *c *= 4.0);
        m.line_den.iter_mut().for_each(|c| *c *= 4.0);
        let v = m.clone().validated().unwrap();
        assert_eq!(v.line_den[0], 1.0);
        let g = GroundPoint::new(32.71, -117.1, 120.0);
        let a = m.project(&BiasCorrection::ZERO, &g).unwrap();
        let b = v.project(&BiasCorrection::ZERO, &g).unwrap();
        assert!(a.distance(&b) < 1e-9);
    }
}
