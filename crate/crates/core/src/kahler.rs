//! The deformed metric `G` on the slit cotangent bundle, the almost complex
//! structure `J`, the 2-form `θ`, the Nijenhuis tensor, and Lie brackets of
//! adapted-frame fields computed from their coordinate components.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::berwald::BaseGeometry;
use crate::cartan::CartanStructure;
use crate::error::{EngineError, Result};
use crate::expr::Expression;
use crate::jets::{sum_jets, ChartPoint, Jet, SquareMatrix};
use crate::tensor::{DTensor, Slot};

use Slot::{Down, Up};

fn jsum(terms: Vec<Jet>) -> Jet {
    sum_jets(terms.iter()).expect("non-empty sum")
}

/// A deformation law `v(τ)`.
pub trait Deformation: Send + Sync + fmt::Debug {
    fn describe(&self) -> String;
    fn v(&self, tau: &Jet, alpha: f64, beta: f64) -> Result<Jet>;
    /// `c` when the law is `v = -cαβ²`.
    fn integrable_curvature(&self) -> Option<f64> {
        None
    }
}

/// `v = -cαβ²`
#[derive(Debug, Clone)]
pub struct ConstantCurvatureLaw {
    pub c: f64,
}

impl Deformation for ConstantCurvatureLaw {
    fn describe(&self) -> String {
        format!("v = -c alpha beta^2, c = {}", self.c)
    }
    fn v(&self, tau: &Jet, alpha: f64, beta: f64) -> Result<Jet> {
        Ok(tau.scale(0.0).add_scalar(-self.c * alpha * beta * beta))
    }
    fn integrable_curvature(&self) -> Option<f64> {
        Some(self.c)
    }
}

/// `v` given as an expression in `tau`.
#[derive(Debug, Clone)]
pub struct ExpressionLaw {
    expr: Expression,
}

impl ExpressionLaw {
    pub fn parse(source: &str) -> Result<Self> {
        Ok(Self {
            expr: Expression::parse(source, &["tau"])?,
        })
    }
}

impl Deformation for ExpressionLaw {
    fn describe(&self) -> String {
        format!("v(tau) = {}", self.expr.source())
    }
    fn v(&self, tau: &Jet, _alpha: f64, _beta: f64) -> Result<Jet> {
        self.expr.eval_jet(std::slice::from_ref(tau))
    }
}

/// `v + shift`
#[derive(Debug, Clone)]
pub struct ShiftedLaw {
    pub inner: Arc<dyn Deformation>,
    pub shift: f64,
}

impl Deformation for ShiftedLaw {
    fn describe(&self) -> String {
        format!("{} shifted by {}", self.inner.describe(), self.shift)
    }
    fn v(&self, tau: &Jet, alpha: f64, beta: f64) -> Result<Jet> {
        Ok(self.inner.v(tau, alpha, beta)?.add_scalar(self.shift))
    }
}

#[derive(Debug, Clone)]
pub struct DeformationParams {
    pub label: String,
    pub alpha: f64,
    pub beta: f64,
    pub law: Arc<dyn Deformation>,
}

impl DeformationParams {
    pub fn new(label: &str, alpha: f64, beta: f64, law: Arc<dyn Deformation>) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(EngineError::Definition(format!(
                "alpha = {alpha} and beta = {beta} must be positive"
            )));
        }
        Ok(Self {
            label: label.to_string(),
            alpha,
            beta,
            law,
        })
    }

    /// The integrable specialization `v = -cαβ²`.
    pub fn integrable(label: &str, alpha: f64, beta: f64, c: f64) -> Result<Self> {
        Self::new(label, alpha, beta, Arc::new(ConstantCurvatureLaw { c }))
    }

    pub fn with_v(label: &str, alpha: f64, beta: f64, v_source: &str) -> Result<Self> {
        Self::new(
            label,
            alpha,
            beta,
            Arc::new(ExpressionLaw::parse(v_source)?),
        )
    }

    pub fn shifted(&self, shift: f64) -> Self {
        Self {
            label: format!("{}+{shift}", self.label),
            alpha: self.alpha,
            beta: self.beta,
            law: Arc::new(ShiftedLaw {
                inner: self.law.clone(),
                shift,
            }),
        }
    }

    pub fn c(&self) -> Option<f64> {
        self.law.integrable_curvature()
    }

    /// `v(τ)` at a scalar `τ`.
    pub fn v_at(&self, tau: f64) -> Result<f64> {
        let space = crate::jets::JetSpace::get(1, 0);
        Ok(self
            .law
            .v(&Jet::constant(&space, tau), self.alpha, self.beta)?
            .value())
    }

    /// `α + 2τv(τ)`
    pub fn positivity(&self, tau: f64) -> Result<f64> {
        Ok(self.alpha + 2.0 * tau * self.v_at(tau)?)
    }

    /// `-v/(αβ²)` at `τ`; equals `c` for the integrable law.
    pub fn effective_c(&self, tau: f64) -> Result<f64> {
        Ok(-self.v_at(tau)? / (self.alpha * self.beta * self.beta))
    }
}

/// Jets of `G_ij` and `G^ij` at a point.
#[derive(Debug, Clone)]
pub struct BundleJets<'g> {
    pub geo: &'g BaseGeometry,
    pub params: DeformationParams,
    pub v: Jet,
    /// `G_ij`
    pub gl: DTensor<Jet>,
    /// `G^ij`
    pub gu: DTensor<Jet>,
    pub positivity: f64,
}

impl<'g> BundleJets<'g> {
    pub fn new(geo: &'g BaseGeometry, params: &DeformationParams) -> Result<Self> {
        let f = &geo.f;
        let n = f.n;
        let (alpha, beta) = (params.alpha, params.beta);
        let v = params.law.v(&f.tau, alpha, beta)?;
        let pos = (&f.tau * &v).scale(2.0).add_scalar(alpha);
        if !(pos.value() > 0.0) {
            return Err(EngineError::Positivity { value: pos.value() });
        }
        let w = v.scale(1.0 / (alpha * beta));
        let gl = DTensor::from_fn(n, &[Down, Down], |ix| {
            &f.g_down.get(ix).scale(1.0 / beta) + &(&w * &(f.p(ix[0]) * f.p(ix[1])))
        });
        let coef = (&v * &pos.recip()?).scale(-beta);
        let gu = DTensor::from_fn(n, &[Up, Up], |ix| {
            &f.g_up.get(ix).scale(beta) + &(&coef * &(&f.p_up[ix[0]] * &f.p_up[ix[1]]))
        });
        Ok(Self {
            geo,
            params: params.clone(),
            v,
            gl,
            gu,
            positivity: pos.value(),
        })
    }

    pub fn n(&self) -> usize {
        self.geo.n()
    }

    /// `G(e_a, e_b)` on the adapted frame `(δ_1..δ_n, ∂̇^1..∂̇^n)`.
    pub fn frame_gram(&self, a: usize, b: usize) -> Jet {
        let n = self.n();
        match (a < n, b < n) {
            (true, true) => self.gl.get(&[a, b]).clone(),
            (false, false) => self.gu.get(&[a - n, b - n]).clone(),
            _ => self.gl.get(&[0, 0]).scale(0.0),
        }
    }

    pub fn metric(&self) -> BundleMetric {
        BundleMetric {
            at: self.geo.at().clone(),
            params: self.params.clone(),
            g_down: self.gl.values(),
            g_up: self.gu.values(),
            positivity: self.positivity,
        }
    }

    /// `J` on frame components given as jets.
    pub fn apply_j(&self, h: &[Jet], v: &[Jet]) -> (Vec<Jet>, Vec<Jet>) {
        let n = self.n();
        let h2 = (0..n)
            .map(|k| -jsum((0..n).map(|i| self.gu.get(&[i, k]) * &v[i]).collect()))
            .collect();
        let v2 = (0..n)
            .map(|k| jsum((0..n).map(|i| self.gl.get(&[i, k]) * &h[i]).collect()))
            .collect();
        (h2, v2)
    }
}

/// A tangent vector `X = h^i δ_i + v_i ∂̇^i` in adapted-frame components.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameVector {
    pub h: Vec<f64>,
    pub v: Vec<f64>,
}

impl FrameVector {
    pub fn zero(n: usize) -> Self {
        Self {
            h: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn horizontal(n: usize, i: usize) -> Self {
        let mut x = Self::zero(n);
        x.h[i] = 1.0;
        x
    }

    pub fn vertical(n: usize, i: usize) -> Self {
        let mut x = Self::zero(n);
        x.v[i] = 1.0;
        x
    }

    /// `e_a` with `a < n` horizontal and `a ≥ n` vertical.
    pub fn frame(n: usize, a: usize) -> Self {
        if a < n {
            Self::horizontal(n, a)
        } else {
            Self::vertical(n, a - n)
        }
    }

    pub fn from_components(n: usize, comps: &[f64]) -> Self {
        Self {
            h: comps[..n].to_vec(),
            v: comps[n..2 * n].to_vec(),
        }
    }

    /// The Liouville field `C* = p_i ∂̇^i`.
    pub fn liouville(at: &ChartPoint) -> Self {
        Self {
            h: vec![0.0; at.dim()],
            v: at.p.clone(),
        }
    }

    /// The geodesic spray `S = p^i δ_i`.
    pub fn spray(p_up: &[f64]) -> Self {
        Self {
            h: p_up.to_vec(),
            v: vec![0.0; p_up.len()],
        }
    }

    pub fn components(&self) -> Vec<f64> {
        self.h.iter().chain(&self.v).copied().collect()
    }

    pub fn sub(&self, other: &FrameVector) -> FrameVector {
        FrameVector {
            h: self.h.iter().zip(&other.h).map(|(a, b)| a - b).collect(),
            v: self.v.iter().zip(&other.v).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> FrameVector {
        FrameVector {
            h: self.h.iter().map(|a| a * s).collect(),
            v: self.v.iter().map(|a| a * s).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.h
            .iter()
            .chain(&self.v)
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Point values of `G_ij`, `G^ij`.
#[derive(Debug, Clone)]
pub struct BundleMetric {
    pub at: ChartPoint,
    pub params: DeformationParams,
    pub g_down: DTensor<f64>,
    pub g_up: DTensor<f64>,
    /// `α + 2τv`
    pub positivity: f64,
}

impl BundleMetric {
    pub fn n(&self) -> usize {
        self.at.dim()
    }

    /// `G(X, Y) = G_ij X^i Y^j + G^ij X̄_i Ȳ_j`
    pub fn inner(&self, x: &FrameVector, y: &FrameVector) -> f64 {
        let n = self.n();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += self.g_down.get(&[i, j]) * x.h[i] * y.h[j];
                s += self.g_up.get(&[i, j]) * x.v[i] * y.v[j];
            }
        }
        s
    }

    pub fn g_down_matrix(&self) -> SquareMatrix {
        SquareMatrix::new(self.n(), self.g_down.data().to_vec())
    }

    pub fn g_up_matrix(&self) -> SquareMatrix {
        SquareMatrix::new(self.n(), self.g_up.data().to_vec())
    }

    /// Gram matrix of the adapted frame.
    pub fn frame_gram(&self) -> SquareMatrix {
        let n = self.n();
        SquareMatrix::from_fn(2 * n, |a, b| match (a < n, b < n) {
            (true, true) => *self.g_down.get(&[a, b]),
            (false, false) => *self.g_up.get(&[a - n, b - n]),
            _ => 0.0,
        })
    }
}

pub fn bundle_metric(
    s: &dyn CartanStructure,
    at: &ChartPoint,
    params: &DeformationParams,
) -> Result<BundleMetric> {
    let geo = BaseGeometry::new(s, at, 4)?;
    Ok(BundleJets::new(&geo, params)?.metric())
}

/// `J(δ_i) = G_ik ∂̇^k`, `J(∂̇^i) = -G^ik δ_k`.
pub fn almost_complex(m: &BundleMetric, x: &FrameVector) -> FrameVector {
    let n = m.n();
    let mut out = FrameVector::zero(n);
    for k in 0..n {
        for i in 0..n {
            out.h[k] -= m.g_up.get(&[i, k]) * x.v[i];
            out.v[k] += m.g_down.get(&[i, k]) * x.h[i];
        }
    }
    out
}

/// `θ(X, Y) = G(X, JY)`
pub fn fundamental_form(m: &BundleMetric, x: &FrameVector, y: &FrameVector) -> f64 {
    m.inner(x, &almost_complex(m, y))
}

/// `θ(e_a, e_b)` over the adapted frame.
pub fn theta_matrix(m: &BundleMetric) -> SquareMatrix {
    let n = m.n();
    SquareMatrix::from_fn(2 * n, |a, b| {
        fundamental_form(m, &FrameVector::frame(n, a), &FrameVector::frame(n, b))
    })
}

/// The canonical form: `θ(∂̇^i, δ_j) = δ^i_j`, `θ(δ_j, ∂̇^i) = -δ^i_j`, zero otherwise.
pub fn canonical_theta(n: usize) -> SquareMatrix {
    SquareMatrix::from_fn(2 * n, |a, b| {
        if a >= n && b < n && a - n == b {
            1.0
        } else if a < n && b >= n && b - n == a {
            -1.0
        } else {
            0.0
        }
    })
}

/// Coordinate components `(∂_x part, ∂_p part)` of the frame field `e_a`.
pub fn frame_field_coords(geo: &BaseGeometry, a: usize) -> Vec<Jet> {
    let n = geo.n();
    let zero = geo.n_conn.get(&[0, 0]).scale(0.0);
    let mut out = vec![zero.clone(); 2 * n];
    if a < n {
        out[a] = zero.add_scalar(1.0);
        for j in 0..n {
            out[n + j] = geo.n_conn.get(&[a, j]).clone();
        }
    } else {
        out[a] = zero.add_scalar(1.0);
    }
    out
}

/// Coordinate components of `h^i δ_i + v_i ∂̇^i`.
pub fn frame_to_coords(geo: &BaseGeometry, h: &[Jet], v: &[Jet]) -> Vec<Jet> {
    let n = geo.n();
    let mut out: Vec<Jet> = h.to_vec();
    for j in 0..n {
        let mut terms = vec![v[j].clone()];
        for i in 0..n {
            terms.push(&h[i] * geo.n_conn.get(&[i, j]));
        }
        out.push(jsum(terms));
    }
    out
}

/// Adapted-frame components of a coordinate vector field.
pub fn coords_to_frame(geo: &BaseGeometry, u: &[Jet]) -> (Vec<Jet>, Vec<Jet>) {
    let n = geo.n();
    let h = u[..n].to_vec();
    let v = (0..n)
        .map(|j| {
            let mut terms = vec![u[n + j].clone()];
            for i in 0..n {
                terms.push(-(&h[i] * geo.n_conn.get(&[i, j])));
            }
            jsum(terms)
        })
        .collect();
    (h, v)
}

/// `[U, W]^μ = U^ν ∂_ν W^μ - W^ν ∂_ν U^μ` over all `2n` chart variables.
pub fn lie_bracket(u: &[Jet], w: &[Jet]) -> Vec<Jet> {
    let m = u.len();
    (0..m)
        .map(|mu| {
            let mut terms = Vec::with_capacity(2 * m);
            for nu in 0..m {
                terms.push(&u[nu] * &w[mu].d(nu));
                terms.push(-(&w[nu] * &u[mu].d(nu)));
            }
            jsum(terms)
        })
        .collect()
}

/// Frame components `Ω^d_ab` of `[e_a, e_b]`, as a flat `(2n)³` table in
/// `[a][b][d]` order.
pub fn frame_brackets(geo: &BaseGeometry) -> Vec<Jet> {
    let m = 2 * geo.n();
    let fields: Vec<Vec<Jet>> = (0..m).map(|a| frame_field_coords(geo, a)).collect();
    let mut out = Vec::with_capacity(m * m * m);
    for a in 0..m {
        for b in 0..m {
            let br = lie_bracket(&fields[a], &fields[b]);
            let (h, v) = coords_to_frame(geo, &br);
            out.extend(h);
            out.extend(v);
        }
    }
    out
}

impl BundleJets<'_> {
    /// `N_J(e_a, e_b) = [JX,JY] - J[JX,Y] - J[X,JY] - [X,Y]`, with every bracket
    /// taken from coordinate components.
    pub fn nijenhuis(&self, a: usize, b: usize) -> FrameVector {
        let geo = self.geo;
        let n = self.n();
        let x = frame_field_coords(geo, a);
        let y = frame_field_coords(geo, b);
        let j_of = |u: &[Jet]| {
            let (h, v) = coords_to_frame(geo, u);
            let (h2, v2) = self.apply_j(&h, &v);
            frame_to_coords(geo, &h2, &v2)
        };
        let jx = j_of(&x);
        let jy = j_of(&y);
        let t1 = lie_bracket(&jx, &jy);
        let t2 = j_of(&lie_bracket(&jx, &y));
        let t3 = j_of(&lie_bracket(&x, &jy));
        let t4 = lie_bracket(&x, &y);
        let total: Vec<Jet> = (0..2 * n)
            .map(|mu| &(&(&t1[mu] - &t2[mu]) - &t3[mu]) - &t4[mu])
            .collect();
        let (h, v) = coords_to_frame(geo, &total);
        FrameVector {
            h: h.iter().map(Jet::value).collect(),
            v: v.iter().map(Jet::value).collect(),
        }
    }

    /// Largest Nijenhuis component over all adapted-frame pairs.
    pub fn nijenhuis_max(&self) -> f64 {
        let m = 2 * self.n();
        let mut worst: f64 = 0.0;
        for a in 0..m {
            for b in (a + 1)..m {
                worst = worst.max(self.nijenhuis(a, b).max_abs());
            }
        }
        worst
    }
}

pub fn nijenhuis(
    s: &dyn CartanStructure,
    at: &ChartPoint,
    params: &DeformationParams,
    pair: (usize, usize),
) -> Result<FrameVector> {
    let geo = BaseGeometry::new(s, at, 4)?;
    let bj = BundleJets::new(&geo, params)?;
    let m = 2 * geo.n();
    if pair.0 >= m || pair.1 >= m {
        return Err(EngineError::Valence(format!(
            "frame index out of range 0..{m}"
        )));
    }
    Ok(bj.nijenhuis(pair.0, pair.1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegrabilityDefect {
    /// `max |A_kij|` with `A` built from `G_ij`.
    pub a_res_bundle: f64,
    /// `max |A_kij|` with `A` built from `g_ij`.
    pub a_res_base: f64,
    /// `max |R_kij - c(g_jk p_i - g_ik p_j)|`, `c = -v/(αβ²)`.
    pub r_res: f64,
    pub c: f64,
}

impl BundleJets<'_> {
    pub fn integrability_defect(&self) -> IntegrabilityDefect {
        let geo = self.geo;
        let f = &geo.f;
        let n = self.n();
        let a_res = |m: &DTensor<Jet>| {
            let mut worst: f64 = 0.0;
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        let mut v = geo.delta(m.get(&[j, k]), i).value()
                            - geo.delta(m.get(&[i, k]), j).value();
                        for r in 0..n {
                            v += m.get(&[i, r]).value() * geo.b.get(&[r, j, k]).value();
                            v -= m.get(&[j, r]).value() * geo.b.get(&[r, i, k]).value();
                        }
                        worst = worst.max(v.abs());
                    }
                }
            }
            worst
        };
        let p = &self.params;
        let c = -self.v.value() / (p.alpha * p.beta * p.beta);
        let g = f.g_down.values();
        let mut r_res: f64 = 0.0;
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let model =
                        c * (g.get(&[j, k]) * f.p(i).value() - g.get(&[i, k]) * f.p(j).value());
                    r_res = r_res.max((geo.r.get(&[k, i, j]).value() - model).abs());
                }
            }
        }
        IntegrabilityDefect {
            a_res_bundle: a_res(&self.gl),
            a_res_base: a_res(&f.g_down),
            r_res,
            c,
        }
    }
}

pub fn integrability_defect(
    s: &dyn CartanStructure,
    at: &ChartPoint,
    params: &DeformationParams,
) -> Result<IntegrabilityDefect> {
    let geo = BaseGeometry::new(s, at, 4)?;
    Ok(BundleJets::new(&geo, params)?.integrability_defect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cartan::{conformal, flat};
    use crate::jets::invert;

    fn pt(x: &[f64], p: &[f64]) -> ChartPoint {
        ChartPoint::new(x.to_vec(), p.to_vec()).unwrap()
    }

    #[test]
    fn undeformed_metric_is_scaled_fundamental() {
        let params = DeformationParams::integrable("p", 1.0, 2.0, 0.0).unwrap();
        let m = bundle_metric(&flat("f", 2), &pt(&[0.1, 0.2], &[0.3, 0.9]), &params).unwrap();
        assert_eq!(*m.g_down.get(&[0, 0]), 0.5);
        assert_eq!(*m.g_down.get(&[0, 1]), 0.0);
        assert_eq!(*m.g_up.get(&[1, 1]), 2.0);
    }

    #[test]
    fn flat_hyperbolic_deformation_by_hand() {
        let params = DeformationParams::integrable("p", 1.0, 1.0, -1.0).unwrap();
        let m = bundle_metric(&flat("f", 2), &pt(&[0.0, 0.0], &[1.0, 0.0]), &params).unwrap();
        // G_ij = δ_ij + p_i p_j; G^11 = 1 + c/(1 - 2cτ) = 1 - 1/2
        assert!((m.g_down.get(&[0, 0]) - 2.0).abs() < 1e-15);
        assert!((m.g_down.get(&[1, 1]) - 1.0).abs() < 1e-15);
        assert!((m.g_up.get(&[0, 0]) - 0.5).abs() < 1e-15);
        let inv = invert(&m.g_down_matrix()).unwrap();
        assert!(inv
            .entries()
            .iter()
            .zip(m.g_up.data())
            .all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn tube_boundary_is_a_positivity_error() {
        let params = DeformationParams::integrable("p", 1.0, 1.0, 1.0).unwrap();
        let s = flat("f", 2);
        assert!(bundle_metric(&s, &pt(&[0.0, 0.0], &[0.99, 0.0]), &params).is_ok());
        for p in [1.0, 1.2] {
            let err = bundle_metric(&s, &pt(&[0.0, 0.0], &[p, 0.0]), &params).unwrap_err();
            assert!(matches!(err, EngineError::Positivity { .. }));
        }
    }

    #[test]
    fn j_and_theta() {
        let params = DeformationParams::integrable("p", 1.3, 0.7, -1.0).unwrap();
        let s = conformal("h", 2, -1.0);
        let m = bundle_metric(&s, &pt(&[0.3, -0.4], &[0.8, 0.6]), &params).unwrap();
        let jd = almost_complex(&m, &FrameVector::horizontal(2, 0));
        assert_eq!(jd.h, vec![0.0, 0.0]);
        assert_eq!(jd.v, vec![*m.g_down.get(&[0, 0]), *m.g_down.get(&[0, 1])]);
        let x = FrameVector::vertical(2, 1);
        let jjx = almost_complex(&m, &almost_complex(&m, &x));
        assert!(jjx.sub(&x.scale(-1.0)).max_abs() < 1e-12);
        assert!(
            (fundamental_form(
                &m,
                &FrameVector::vertical(2, 0),
                &FrameVector::horizontal(2, 0)
            ) - 1.0)
                .abs()
                < 1e-14
        );
        assert_eq!(
            fundamental_form(
                &m,
                &FrameVector::horizontal(2, 0),
                &FrameVector::horizontal(2, 1)
            ),
            0.0
        );
    }

    #[test]
    fn theta_does_not_depend_on_params() {
        let s = conformal("s", 2, 1.0);
        let at = pt(&[0.3, -0.4], &[0.5, 0.2]);
        let a = theta_matrix(
            &bundle_metric(
                &s,
                &at,
                &DeformationParams::integrable("a", 1.0, 1.0, 0.0).unwrap(),
            )
            .unwrap(),
        );
        let b = theta_matrix(
            &bundle_metric(
                &s,
                &at,
                &DeformationParams::integrable("b", 1.0, 1.0, -1.0).unwrap(),
            )
            .unwrap(),
        );
        let canon = canonical_theta(2);
        for k in 0..16 {
            assert!((a.entries()[k] - b.entries()[k]).abs() < 1e-14);
            assert!((a.entries()[k] - canon.entries()[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn vertical_pairs_follow_horizontal_pairs() {
        let s = conformal("s", 2, 1.0);
        let at = pt(&[0.2, 0.1], &[0.4, 0.3]);
        let matched = DeformationParams::integrable("p", 1.0, 1.0, 1.0).unwrap();
        assert!(nijenhuis(&s, &at, &matched, (2, 3)).unwrap().max_abs() < 1e-10);
        assert!(nijenhuis(&s, &at, &matched, (0, 3)).unwrap().max_abs() < 1e-10);
        // N_J(JX, JY) = -N_J(X, Y) ties the vertical pair to the horizontal one
        let wrong = DeformationParams::integrable("q", 1.0, 1.0, 2.0).unwrap();
        let hh = nijenhuis(&s, &at, &wrong, (0, 1)).unwrap();
        let vv = nijenhuis(&s, &at, &wrong, (2, 3)).unwrap();
        assert!(hh.max_abs() > 1e-3 && vv.max_abs() > 1e-3);
    }

    #[test]
    fn integrable_sphere_and_mismatch() {
        let s = conformal("s", 2, 1.0);
        let at = pt(&[0.3, -0.1], &[0.5, 0.4]);
        let matched = DeformationParams::integrable("p", 1.0, 1.0, 1.0).unwrap();
        assert!(nijenhuis(&s, &at, &matched, (0, 1)).unwrap().max_abs() < 1e-10);
        let d = integrability_defect(&s, &at, &matched).unwrap();
        assert!(d.r_res < 1e-10 && d.a_res_bundle < 1e-10 && d.a_res_base < 1e-10);
        let wrong = DeformationParams::integrable("q", 1.0, 1.0, 2.0).unwrap();
        let d = integrability_defect(&s, &at, &wrong).unwrap();
        assert!(d.r_res > 1e-2);
        let geo = BaseGeometry::full(&s, &at).unwrap();
        assert!(BundleJets::new(&geo, &wrong).unwrap().nijenhuis_max() > 1e-2);
    }

    #[test]
    fn expression_law_matches_constant_law() {
        let s = conformal("s", 2, -1.0);
        let at = pt(&[0.3, -0.1], &[0.5, 0.4]);
        let a = bundle_metric(
            &s,
            &at,
            &DeformationParams::integrable("a", 2.0, 0.5, -1.0).unwrap(),
        )
        .unwrap();
        let b = bundle_metric(
            &s,
            &at,
            &DeformationParams::with_v("b", 2.0, 0.5, "0.5 + 0*tau").unwrap(),
        )
        .unwrap();
        assert!(a.g_down.max_diff(&b.g_down) < 1e-15);
        assert!(a.g_up.max_diff(&b.g_up) < 1e-15);
    }
}
