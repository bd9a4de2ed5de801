//! Divergence, gradient and Laplacian of the deformed metric, with the
//! mean-Landsberg characterizations.
//!
//! Frame fields carry components as jets. `frame` divergence treats them as
//! constants, `X^a div(e_a)`; `full` divergence adds `e_a(X^a)`.

use serde::Serialize;

use crate::berwald::{BaseGeometry, FULL_ORDER};
use crate::cartan::{CartanStructure, K2Field};
use crate::error::Result;
use crate::expr::Expression;
use crate::jets::{det_jets, ChartPoint, Jet, ScalarField};
use crate::kahler::{BundleJets, DeformationParams, FrameVector};
use crate::levicivita::{
    closed_form_c, closed_form_jets, frame_derivative, koszul_jets, ConnectionSource, LCConnection,
};

/// Cached data for operator evaluation at one point.
pub struct OperatorContext {
    pub geo: BaseGeometry,
    pub params: DeformationParams,
    pub conn: LCConnection,
    pub sqrt_g: f64,
    /// `δ_i(ln √g)`
    pub h_trace: Vec<f64>,
    /// `J_i`
    pub j: Vec<f64>,
}

impl OperatorContext {
    /// Uses the closed-form connection when the structure's curvature matches
    /// the deformation, the Koszul oracle otherwise.
    pub fn new(
        s: &dyn CartanStructure,
        at: &ChartPoint,
        params: &DeformationParams,
    ) -> Result<Self> {
        let geo = BaseGeometry::new(s, at, FULL_ORDER)?;
        let conn = {
            let bj = BundleJets::new(&geo, params)?;
            let matched = matches!((s.constant_curvature(), params.c()), (Some(a), Some(b)) if (a - b).abs() < 1e-12);
            if matched {
                closed_form_jets(&bj, closed_form_c(&bj)?).values(ConnectionSource::ClosedForm)
            } else {
                koszul_jets(&bj)?.values(ConnectionSource::Koszul)
            }
        };
        let n = geo.n();
        let det = det_jets(geo.f.g_down.data(), n);
        let ln_sqrt = det.ln()?.scale(0.5);
        let h_trace = (0..n).map(|i| geo.delta(&ln_sqrt, i).value()).collect();
        let j = geo.j_down().iter().map(Jet::value).collect();
        Ok(Self {
            sqrt_g: det.value().sqrt(),
            geo,
            params: params.clone(),
            conn,
            h_trace,
            j,
        })
    }

    pub fn n(&self) -> usize {
        self.geo.n()
    }

    pub fn bundle(&self) -> Result<BundleJets<'_>> {
        BundleJets::new(&self.geo, &self.params)
    }

    /// `div(e_a)` for every frame index.
    pub fn frame_divergences(&self) -> Vec<f64> {
        (0..2 * self.n())
            .map(|a| self.conn.frame_divergence(a))
            .collect()
    }
}

/// A vector field given by adapted-frame components.
pub trait FrameField: Send + Sync {
    fn name(&self) -> String;
    /// Components along `(δ_0..δ_{n-1}, ∂̇^0..∂̇^{n-1})` as jets.
    fn components(&self, ctx: &OperatorContext) -> Result<Vec<Jet>>;
}

/// Constant frame combination.
pub struct ConstantFrame(pub Vec<f64>);

impl FrameField for ConstantFrame {
    fn name(&self) -> String {
        format!("constant{:?}", self.0)
    }

    fn components(&self, ctx: &OperatorContext) -> Result<Vec<Jet>> {
        let zero = ctx.geo.f.k2.scale(0.0);
        Ok(self.0.iter().map(|&c| zero.add_scalar(c)).collect())
    }
}

/// `C* = p_i ∂̇^i`
pub struct Liouville;

impl FrameField for Liouville {
    fn name(&self) -> String {
        "liouville".into()
    }

    fn components(&self, ctx: &OperatorContext) -> Result<Vec<Jet>> {
        let n = ctx.n();
        let zero = ctx.geo.f.k2.scale(0.0);
        Ok((0..n)
            .map(|_| zero.clone())
            .chain((0..n).map(|i| ctx.geo.f.p(i).clone()))
            .collect())
    }
}

/// `S = p^i δ_i`
pub struct Spray;

impl FrameField for Spray {
    fn name(&self) -> String {
        "spray".into()
    }

    fn components(&self, ctx: &OperatorContext) -> Result<Vec<Jet>> {
        let n = ctx.n();
        let zero = ctx.geo.f.k2.scale(0.0);
        Ok(ctx
            .geo
            .f
            .p_up
            .iter()
            .cloned()
            .chain((0..n).map(|_| zero.clone()))
            .collect())
    }
}

/// `grad f`
pub struct GradientOf<'f>(pub &'f dyn ScalarField);

impl FrameField for GradientOf<'_> {
    fn name(&self) -> String {
        "gradient".into()
    }

    fn components(&self, ctx: &OperatorContext) -> Result<Vec<Jet>> {
        gradient_jets(ctx, self.0)
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Divergence {
    pub frame: f64,
    pub full: f64,
}

pub fn divergence(ctx: &OperatorContext, x: &dyn FrameField) -> Result<Divergence> {
    let comps = x.components(ctx)?;
    let divs = ctx.frame_divergences();
    let frame: f64 = comps.iter().zip(&divs).map(|(c, d)| c.value() * d).sum();
    let spread: f64 = comps
        .iter()
        .enumerate()
        .map(|(a, c)| {
            if c.order() == 0 {
                0.0
            } else {
                frame_derivative(&ctx.geo, c, a).value()
            }
        })
        .sum();
    Ok(Divergence {
        frame,
        full: frame + spread,
    })
}

/// `(G^ih δ_h f, G_ih ∂̇^h f)` as jets.
pub fn gradient_jets(ctx: &OperatorContext, f: &dyn ScalarField) -> Result<Vec<Jet>> {
    let n = ctx.n();
    let bj = ctx.bundle()?;
    let fj = f.eval(&ctx.geo.f.vars)?;
    let df_h: Vec<Jet> = (0..n).map(|h| ctx.geo.delta(&fj, h)).collect();
    let df_v: Vec<Jet> = (0..n).map(|h| ctx.geo.f.dv(&fj, h)).collect();
    let contract = |m: &crate::tensor::DTensor<Jet>, d: &[Jet], i: usize| {
        crate::jets::sum_jets(
            (0..n)
                .map(|h| m.get(&[i, h]) * &d[h])
                .collect::<Vec<_>>()
                .iter(),
        )
        .expect("n ≥ 2")
    };
    Ok((0..n)
        .map(|i| contract(&bj.gu, &df_h, i))
        .chain((0..n).map(|i| contract(&bj.gl, &df_v, i)))
        .collect())
}

pub fn gradient(ctx: &OperatorContext, f: &dyn ScalarField) -> Result<FrameVector> {
    let comps: Vec<f64> = gradient_jets(ctx, f)?.iter().map(Jet::value).collect();
    Ok(FrameVector::from_components(ctx.n(), &comps))
}

/// `max |G(grad f, X) - X f|` over the given frame vectors.
pub fn gradient_duality(
    ctx: &OperatorContext,
    f: &dyn ScalarField,
    xs: &[FrameVector],
) -> Result<f64> {
    let n = ctx.n();
    let grad = gradient(ctx, f)?;
    let metric = ctx.bundle()?.metric();
    let fj = f.eval(&ctx.geo.f.vars)?;
    let df: Vec<f64> = (0..n)
        .map(|h| ctx.geo.delta(&fj, h).value())
        .chain((0..n).map(|h| ctx.geo.f.dv(&fj, h).value()))
        .collect();
    Ok(xs.iter().fold(0.0f64, |w, x| {
        let xf: f64 = x.components().iter().zip(&df).map(|(a, b)| a * b).sum();
        w.max((metric.inner(&grad, x) - xf).abs())
    }))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Laplacian {
    /// Frame divergence of the gradient through the connection coefficients.
    pub direct: f64,
    /// `G^ih δ_h f (δ_i ln√g - J_i)`
    pub closed: f64,
    /// Full divergence of the gradient.
    pub full: f64,
    pub difference: f64,
}

pub fn laplacian(ctx: &OperatorContext, f: &dyn ScalarField) -> Result<Laplacian> {
    let n = ctx.n();
    let div = divergence(ctx, &GradientOf(f))?;
    let grad = gradient(ctx, f)?;
    let closed: f64 = (0..n)
        .map(|i| grad.h[i] * (ctx.h_trace[i] - ctx.j[i]))
        .sum();
    Ok(Laplacian {
        direct: div.frame,
        closed,
        full: div.full,
        difference: (div.frame - closed).abs(),
    })
}

/// Scalar fields used to cross-check the two Laplacian evaluations.
pub fn scalar_corpus<'s>(
    s: &'s dyn CartanStructure,
) -> Result<Vec<(String, Box<dyn ScalarField + 's>)>> {
    let n = s.dim();
    let mut out: Vec<(String, Box<dyn ScalarField + 's>)> =
        vec![("K2".into(), Box::new(K2Field(s)))];
    for src in [
        "x1",
        "x1*x2 + p1",
        "sin(x1)*p2^2",
        "exp(0.3*x2)*(p1^2 + p2^2)",
    ] {
        out.push((src.into(), Box::new(Expression::parse_chart(src, n)?)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct LandsbergReport {
    pub j: Vec<f64>,
    pub h_trace: Vec<f64>,
    /// `max |δ_i ln√g - J_i|`: zero iff horizontal lifts are divergence free.
    pub horizontal_defect: f64,
    pub div_spray: f64,
    pub mean_landsberg: bool,
    pub horizontal_div_free: bool,
    /// Pointwise consistency of the implications
    /// `δ_i ln√g = J_i ⇒ div S = 0` and `J = 0 ∧ δ ln√g = 0 ⇒ div S = 0`.
    pub consistent: bool,
}

pub fn landsberg_characterizations(ctx: &OperatorContext, tol: f64) -> Result<LandsbergReport> {
    let horizontal_defect = ctx
        .h_trace
        .iter()
        .zip(&ctx.j)
        .fold(0.0f64, |w, (h, j)| w.max((h - j).abs()));
    let div_spray = divergence(ctx, &Spray)?.frame;
    let mean_landsberg = ctx.j.iter().all(|j| j.abs() <= tol);
    let horizontal_div_free = horizontal_defect <= tol;
    let flat_volume = ctx.h_trace.iter().all(|h| h.abs() <= tol);
    let spray_free = div_spray.abs() <= tol;
    let consistent =
        (!horizontal_div_free || spray_free) && (!(mean_landsberg && flat_volume) || spray_free);
    Ok(LandsbergReport {
        j: ctx.j.clone(),
        h_trace: ctx.h_trace.clone(),
        horizontal_defect,
        div_spray,
        mean_landsberg,
        horizontal_div_free,
        consistent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cartan::{conformal, flat, randers_dual, ConstantMetric, ConstantVector};
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    fn pt(x: &[f64], p: &[f64]) -> ChartPoint {
        ChartPoint::new(x.to_vec(), p.to_vec()).unwrap()
    }

    fn randers() -> crate::cartan::RandersDual {
        randers_dual(
            "r",
            Arc::new(ConstantMetric::euclidean(2)),
            Arc::new(ConstantVector(vec![0.3, -0.1])),
            &pt(&[0.0, 0.0], &[1.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn vertical_fields_are_divergence_free() {
        let s = randers();
        let at = pt(&[0.2, 0.1], &[0.7, -0.4]);
        let params = DeformationParams::integrable("p", 1.0, 1.2, 0.0).unwrap();
        let ctx = OperatorContext::new(&s, &at, &params).unwrap();
        assert!(
            divergence(&ctx, &ConstantFrame(vec![0.0, 0.0, 1.0, 0.0]))
                .unwrap()
                .frame
                .abs()
                < 1e-6
        );
        assert!(
            divergence(&ctx, &ConstantFrame(vec![0.0, 0.0, 0.4, -2.0]))
                .unwrap()
                .frame
                .abs()
                < 1e-6
        );
        let l = divergence(&ctx, &Liouville).unwrap();
        assert!(l.frame.abs() < 1e-6);
        assert!((l.full - 2.0).abs() < 1e-9);
    }

    #[test]
    fn spray_divergence_is_volume_derivative() {
        let c = 1.0;
        let s = conformal("s", 2, c);
        let at = pt(&[0.4, -0.3], &[0.6, 0.5]);
        let params = DeformationParams::integrable("p", 1.0, 1.0, c).unwrap();
        let ctx = OperatorContext::new(&s, &at, &params).unwrap();
        // ln√g of the dual metric is -n ln φ with φ = 1 + c|x|²/4, independent of p
        let ln_sqrt = |q: &ChartPoint| -> Result<Vec<f64>> {
            let r2: f64 = q.x.iter().map(|v| v * v).sum();
            Ok(vec![-2.0 * (1.0 + c * r2 / 4.0).ln()])
        };
        let nc = crate::berwald::nonlinear_connection(&s, &at).unwrap();
        let mut expect = 0.0;
        for i in 0..2 {
            let mut dir = vec![0.0; 4];
            dir[i] = 1.0;
            for j in 0..2 {
                dir[2 + j] = *nc.n_downdown.get(&[i, j]);
            }
            let d =
                crate::jets::fd_directional(ln_sqrt, &at, &dir, crate::jets::FD_STEPS).unwrap()[0];
            expect += ctx.geo.f.p_up[i].value() * d;
        }
        let div = divergence(&ctx, &Spray).unwrap().frame;
        assert!((div - expect).abs() < 1e-5, "{div} vs {expect}");
        assert!(div.abs() > 1e-3);
    }

    #[test]
    fn gradient_examples_and_duality() {
        let s = flat("f", 2);
        let at = pt(&[0.4, -0.3], &[0.6, 0.5]);
        let params = DeformationParams::integrable("p", 1.0, 1.0, 0.0).unwrap();
        let ctx = OperatorContext::new(&s, &at, &params).unwrap();
        let x1 = Expression::parse_chart("x1", 2).unwrap();
        let g = gradient(&ctx, &x1).unwrap();
        assert!(g.sub(&FrameVector::horizontal(2, 0)).max_abs() < 1e-12);
        let one = Expression::parse_chart("3", 2).unwrap();
        assert!(gradient(&ctx, &one).unwrap().max_abs() < 1e-14);

        let r = randers();
        let ctx = OperatorContext::new(&r, &at, &params).unwrap();
        let k2 = K2Field(&r);
        let g = gradient(&ctx, &k2).unwrap();
        assert!(g.h.iter().all(|v| v.abs() < 1e-10));
        let bj = ctx.bundle().unwrap();
        for i in 0..2 {
            let expect: f64 = (0..2)
                .map(|h| bj.gl.get(&[i, h]).value() * 2.0 * ctx.geo.f.p_up[h].value())
                .sum();
            assert!((g.v[i] - expect).abs() < 1e-10);
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<FrameVector> = (0..20)
            .map(|_| {
                FrameVector::from_components(
                    2,
                    &(0..4).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>(),
                )
            })
            .collect();
        let f = Expression::parse_chart("sin(x1)*p2^2 + x2*p1", 2).unwrap();
        assert!(gradient_duality(&ctx, &f, &xs).unwrap() < 1e-8);
    }

    #[test]
    fn laplacian_of_k2_vanishes() {
        let r = randers();
        let at = pt(&[0.2, 0.1], &[0.7, -0.4]);
        let params = DeformationParams::with_v("p", 1.0, 1.0, "0.3*tau").unwrap();
        let ctx = OperatorContext::new(&r, &at, &params).unwrap();
        let l = laplacian(&ctx, &K2Field(&r)).unwrap();
        assert!(l.direct.abs() < 1e-6 && l.closed.abs() < 1e-6);
        let pure_p = Expression::parse_chart("p1^3 + p2", 2).unwrap();
        let ctx = OperatorContext::new(&flat("f", 2), &at, &params).unwrap();
        assert!(laplacian(&ctx, &pure_p).unwrap().direct.abs() < 1e-12);
    }

    #[test]
    fn laplacian_direct_matches_closed_on_corpus() {
        let structures: Vec<Box<dyn CartanStructure>> =
            vec![Box::new(conformal("s", 2, 1.0)), Box::new(randers())];
        let at = pt(&[0.3, -0.2], &[0.3, 0.4]);
        for s in &structures {
            let c = s.constant_curvature().unwrap_or(0.0);
            let params = DeformationParams::integrable("p", 1.0, 1.1, c).unwrap();
            let ctx = OperatorContext::new(s.as_ref(), &at, &params).unwrap();
            for (name, f) in scalar_corpus(s.as_ref()).unwrap() {
                let l = laplacian(&ctx, f.as_ref()).unwrap();
                assert!(l.difference < 1e-4, "{} {name}: {l:?}", s.label());
            }
        }
    }

    #[test]
    fn landsberg_reports() {
        let at = pt(&[0.3, -0.2], &[0.3, 0.4]);
        let params = DeformationParams::integrable("p", 1.0, 1.0, 0.0).unwrap();
        let ctx = OperatorContext::new(&flat("f", 2), &at, &params).unwrap();
        let rep = landsberg_characterizations(&ctx, 1e-8).unwrap();
        assert!(rep.mean_landsberg && rep.horizontal_div_free && rep.consistent);
        assert!(rep.div_spray.abs() < 1e-12);

        let r = randers();
        let ctx = OperatorContext::new(&r, &at, &params).unwrap();
        let rep = landsberg_characterizations(&ctx, 1e-8).unwrap();
        assert!(rep.mean_landsberg && rep.consistent);
        assert!(rep.h_trace.iter().all(|v| v.abs() < 1e-8));

        let s = conformal("s", 2, 1.0);
        let params = DeformationParams::integrable("p", 1.0, 1.0, 1.0).unwrap();
        let ctx = OperatorContext::new(&s, &at, &params).unwrap();
        let rep = landsberg_characterizations(&ctx, 1e-8).unwrap();
        assert!(rep.mean_landsberg && !rep.horizontal_div_free && rep.consistent);
        assert!(rep.div_spray.abs() > 1e-3);
    }
}
