//! The verification suite: per-point checks and their aggregation.

use std::collections::BTreeMap;

use cartan_core::berwald::{homogeneity_residual, BaseGeometry};
use cartan_core::cartan::{fundamental, CartanStructure, K2Field};
use cartan_core::jets::{fd_directional, Jet, FD_STEPS};
use cartan_core::kahler::{
    almost_complex, canonical_theta, frame_brackets, frame_field_coords, theta_matrix, BundleJets,
    DeformationParams, FrameVector,
};
use cartan_core::levicivita::{
    closed_form_c, closed_form_jets, curvature_closed, curvature_defn_fd, curvature_defn_jet,
    horizontal_normal_part, koszul_jets, metric_residual, obstruction_residual, ricci,
    torsion_residual, vertical_geodesic_defect, BlockKind, ConnectionSource,
};
use cartan_core::operators::{
    divergence, gradient_duality, landsberg_characterizations, laplacian, scalar_corpus,
    ConstantFrame, Liouville, OperatorContext, Spray,
};
use cartan_core::{ChartPoint, EngineError};
use rand::Rng;
use serde::Serialize;

use crate::manifest::Tolerances;

/// Points per (structure, params) pair that also get the finite-difference curvature oracle.
pub const FD_CURVATURE_POINTS: usize = 8;

/// Random frame vectors per point for the gradient duality check.
pub const DUALITY_VECTORS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Serialize)]
pub struct Coords {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Record {
    pub check: String,
    pub anchor: String,
    pub structure: String,
    pub params: Option<String>,
    pub point: Option<usize>,
    pub coords: Option<Coords>,
    pub residual: Option<f64>,
    pub tolerance: f64,
    pub bound: Bound,
    pub pass: bool,
    pub note: Option<String>,
}

impl Record {
    pub fn is_error(&self) -> bool {
        self.note
            .as_deref()
            .is_some_and(|n| n.starts_with("error:"))
    }
}

/// The mathematical statement each check verifies.
pub fn anchor(check: &str) -> &'static str {
    if let Some(id) = check
        .strip_prefix("lc.curvature_fd.")
        .or_else(|| check.strip_prefix("lc.curvature."))
    {
        return match id {
            "vvv" => "K(∂̇^i,∂̇^j)∂̇^k closed form = ∇_X∇_Y Z - ∇_Y∇_X Z - ∇_[X,Y] Z",
            "hvv" => "K(δ_i,∂̇^j)∂̇^k closed form = ∇_X∇_Y Z - ∇_Y∇_X Z - ∇_[X,Y] Z",
            "hhh" => "K(δ_i,δ_j)δ_k closed form = ∇_X∇_Y Z - ∇_Y∇_X Z - ∇_[X,Y] Z",
            "hhv" => "K(δ_i,δ_j)∂̇^k closed form = ∇_X∇_Y Z - ∇_Y∇_X Z - ∇_[X,Y] Z",
            "vvh" => "K(∂̇^i,∂̇^j)δ_k closed form = ∇_X∇_Y Z - ∇_Y∇_X Z - ∇_[X,Y] Z",
            "hvh" => "K(δ_i,∂̇^j)δ_k closed form = ∇_X∇_Y Z - ∇_Y∇_X Z - ∇_[X,Y] Z",
            _ => "curvature block",
        };
    }
    match check {
        "identity.euler_k2" => "p_j ∂̇^j K² = 2K²",
        "identity.g_pp_k2" => "g^ij p_i p_j = K²",
        "identity.cartan_p" => "C^ijk p_k = 0",
        "identity.p_hcov" => "p_i|j = 0",
        "identity.p_vcov" => "p_i|^j = δ^j_i",
        "identity.delta_k2" => "δ_i K² = 0",
        "identity.r_p" => "R_kij p^k = 0",
        "identity.g_hcov_landsberg" => "g^ij_|k = -2 L^ij_k",
        "identity.g_vcov_cartan" => "g^ij|^k = -2 C^ijk",
        "identity.n_symmetric" => "N_ij = N_ji",
        "identity.a_kij_base" => "g_jk|i - g_ik|j = 0",
        "identity.homogeneity" => "g^ij(x, λp) = g^ij(x, p)",
        "identity.metric_delta" => "δ_i g_jk = B^s_ji g_sk + B^s_ki g_js (Landsberg)",
        "kahler.j_squared" => "J² = -I",
        "kahler.isometry" => "G(JX, JY) = G(X, Y)",
        "kahler.theta" => "θ(∂̇^i, δ_j) = δ^i_j, θ(δ_i, δ_j) = θ(∂̇^i, ∂̇^j) = 0",
        "kahler.nijenhuis" => "N_J = 0 for v = -cαβ²",
        "kahler.nijenhuis_perturbed" => "N_J ≠ 0 for v = -cαβ² + 0.1",
        "lc.connection" => "closed-form ∇ = Koszul 2G(∇_X Y, Z)",
        "lc.torsion" => "∇_X Y - ∇_Y X - [X, Y] = 0",
        "lc.metric" => "X G(Y, Z) = G(∇_X Y, Z) + G(Y, ∇_X Z)",
        "lc.vertical_geodesic" => "H ∇_{∂̇^i} ∂̇^j = β² L^ijs δ_s = 0 (Landsberg)",
        "lc.horizontal_normal" => "p^j V∇_{δ_i} δ_j = c p_i p_s (1 - 2cβ²τ) ∂̇^s ≠ 0",
        "einstein.lambda" => "Ric = cnβ G",
        "einstein.defect" => "max |Ric - λ̂ G| = 0",
        "einstein.mixed" => "Ric(δ_j, ∂̇^k) = 0",
        "einstein.obstruction_defect" => "max |Ric - λ̂ G| > 0 for non-Riemannian K",
        "einstein.obstruction" => "p_k Ric(∂̇^j, ∂̇^k) - cnβ p_k G^jk = I^j",
        "operators.div_vertical" => "div(X^V) = 0",
        "operators.div_liouville" => "div(C*) = 0",
        "operators.div_spray" => "div(S) = p^i (δ_i ln√g - J_i)",
        "operators.duality" => "G(grad f, X) = X f",
        "operators.laplacian_k2" => "ΔK² = 0",
        "operators.laplacian_corpus" => "div(grad f) = G^ih δ_h f (δ_i ln√g - J_i)",
        "operators.landsberg" => "δ_i ln√g = J_i ⇒ div(S) = 0",
        "evaluation" => "all objects evaluate at the sampled point",
        _ => "",
    }
}

/// Builds records for one task, turning evaluation errors into failures.
pub struct Emitter<'a> {
    pub structure: &'a str,
    pub params: Option<&'a str>,
    pub point: Option<usize>,
    pub at: Option<&'a ChartPoint>,
    pub records: Vec<Record>,
}

impl<'a> Emitter<'a> {
    pub fn new(
        structure: &'a str,
        params: Option<&'a str>,
        point: Option<usize>,
        at: Option<&'a ChartPoint>,
    ) -> Self {
        Self {
            structure,
            params,
            point,
            at,
            records: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        check: &str,
        residual: f64,
        tolerance: f64,
        bound: Bound,
        note: Option<String>,
    ) {
        let pass = residual.is_finite()
            && match bound {
                Bound::Upper => residual <= tolerance,
                Bound::Lower => residual >= tolerance,
            };
        self.records.push(Record {
            check: check.to_string(),
            anchor: anchor(check).to_string(),
            structure: self.structure.to_string(),
            params: self.params.map(str::to_string),
            point: self.point,
            coords: self.at.map(|a| Coords {
                x: a.x.clone(),
                p: a.p.clone(),
            }),
            residual: residual.is_finite().then_some(residual),
            tolerance,
            bound,
            pass,
            note,
        });
    }

    pub fn upper(&mut self, check: &str, residual: f64, tolerance: f64) {
        self.push(check, residual, tolerance, Bound::Upper, None);
    }

    pub fn error(&mut self, check: &str, tolerance: f64, err: &EngineError) {
        self.records.push(Record {
            check: check.to_string(),
            anchor: anchor(check).to_string(),
            structure: self.structure.to_string(),
            params: self.params.map(str::to_string),
            point: self.point,
            coords: self.at.map(|a| Coords {
                x: a.x.clone(),
                p: a.p.clone(),
            }),
            residual: None,
            tolerance,
            bound: Bound::Upper,
            pass: false,
            note: Some(format!("error: {err}")),
        });
    }
}

/// True when the deformation constant equals the structure's curvature
/// constant, so the closed forms apply.
pub fn matched(s: &dyn CartanStructure, params: &DeformationParams) -> bool {
    matches!((s.constant_curvature(), params.c()), (Some(a), Some(b)) if (a - b).abs() < 1e-12)
}

/// Structure-only checks at one point.
pub fn base_checks(
    e: &mut Emitter<'_>,
    s: &dyn CartanStructure,
    at: &ChartPoint,
    tol: &Tolerances,
) {
    let geo = match BaseGeometry::full(s, at) {
        Ok(g) => g,
        Err(err) => return e.error("identity", tol.identities, &err),
    };
    for id in geo.structural_identities() {
        e.upper(&format!("identity.{}", id.id), id.residual, tol.identities);
    }
    match homogeneity_residual(s, at) {
        Ok(r) => e.upper("identity.homogeneity", r, tol.identities),
        Err(err) => e.error("identity.homogeneity", tol.identities, &err),
    }
    if s.known_landsberg() {
        e.upper(
            "identity.metric_delta",
            geo.metric_delta_identity(),
            tol.identities,
        );
    }
}

/// Values reduced over points into one record per (structure, params).
#[derive(Debug, Default, Clone)]
pub struct Aggregates {
    pub values: BTreeMap<&'static str, f64>,
}

impl Aggregates {
    fn max(&mut self, key: &'static str, v: f64) {
        let slot = self.values.entry(key).or_insert(f64::NEG_INFINITY);
        if v > *slot || v.is_nan() {
            *slot = v;
        }
    }
}

fn ln_sqrt_g(s: &dyn CartanStructure, q: &ChartPoint) -> cartan_core::Result<Vec<f64>> {
    let f = fundamental(s, q)?;
    let m = cartan_core::jets::SquareMatrix::from_fn(f.g_down.len(), |i, j| f.g_down[i][j]);
    let det: f64 = m.symmetric_eigenvalues().iter().product();
    Ok(vec![0.5 * det.ln()])
}

/// Checks of the deformed metric, its connection, curvature and operators at
/// one point.
#[allow(clippy::too_many_arguments)]
pub fn bundle_checks(
    e: &mut Emitter<'_>,
    agg: &mut Aggregates,
    s: &dyn CartanStructure,
    params: &DeformationParams,
    at: &ChartPoint,
    point_index: usize,
    rng: &mut impl Rng,
    tol: &Tolerances,
) {
    if let Err(err) = bundle_checks_inner(e, agg, s, params, at, point_index, rng, tol) {
        e.error("evaluation", 0.0, &err);
    }
}

#[allow(clippy::too_many_arguments)]
fn bundle_checks_inner(
    e: &mut Emitter<'_>,
    agg: &mut Aggregates,
    s: &dyn CartanStructure,
    params: &DeformationParams,
    at: &ChartPoint,
    point_index: usize,
    rng: &mut impl Rng,
    tol: &Tolerances,
) -> cartan_core::Result<()> {
    let n = s.dim();
    let m = 2 * n;
    let geo = BaseGeometry::full(s, at)?;
    let bj = BundleJets::new(&geo, params)?;
    let metric = bj.metric();

    // almost Kähler structure
    let mut j2: f64 = 0.0;
    let mut iso: f64 = 0.0;
    for a in 0..m {
        let ea = FrameVector::frame(n, a);
        let ja = almost_complex(&metric, &ea);
        j2 = j2.max(almost_complex(&metric, &ja).scale(-1.0).sub(&ea).max_abs());
        for b in 0..m {
            let eb = FrameVector::frame(n, b);
            let jb = almost_complex(&metric, &eb);
            iso = iso.max((metric.inner(&ja, &jb) - metric.inner(&ea, &eb)).abs());
        }
    }
    e.upper("kahler.j_squared", j2, tol.kahler);
    e.upper("kahler.isometry", iso, tol.kahler);
    let theta = theta_matrix(&metric);
    let canon = canonical_theta(n);
    let theta_res = theta
        .entries()
        .iter()
        .zip(canon.entries())
        .fold(0.0f64, |w, (a, b)| w.max((a - b).abs()));
    e.upper("kahler.theta", theta_res, tol.theta);

    let is_matched = matched(s, params);
    if is_matched {
        e.upper("kahler.nijenhuis", bj.nijenhuis_max(), tol.nijenhuis);
        let shifted = params.shifted(0.1);
        match BundleJets::new(&geo, &shifted) {
            Ok(b2) => agg.max("kahler.nijenhuis_perturbed", b2.nijenhuis_max()),
            Err(err) => e.error("kahler.nijenhuis_perturbed", tol.nijenhuis_perturbed, &err),
        }
    }

    // Levi-Civita connection
    let omega: Vec<f64> = frame_brackets(&geo).iter().map(Jet::value).collect();
    let kz_jets = koszul_jets(&bj)?;
    let kz = kz_jets.values(ConnectionSource::Koszul);
    e.upper("lc.torsion", torsion_residual(&kz, &omega), tol.connection);
    e.upper("lc.metric", metric_residual(&bj, &kz), tol.connection);

    if is_matched {
        let c = closed_form_c(&bj)?;
        let closed = closed_form_jets(&bj, c).values(ConnectionSource::ClosedForm);
        e.upper("lc.connection", closed.max_diff(&kz), tol.connection);
        if s.known_landsberg() {
            e.upper(
                "lc.vertical_geodesic",
                vertical_geodesic_defect(&closed),
                tol.connection,
            );
        }
        if c != 0.0 && s.is_riemannian() {
            let p_up: Vec<f64> = geo.f.p_up.iter().map(Jet::value).collect();
            agg.max(
                "lc.horizontal_normal",
                horizontal_normal_part(&closed, &p_up),
            );
        }

        let curv = curvature_closed(&bj, c)?;
        let defn = curvature_defn_jet(&geo, &kz_jets)?;
        for kind in BlockKind::ALL {
            let rel = curv.block(kind).relative_diff(&defn.block(kind));
            e.upper(&format!("lc.curvature.{}", kind.name()), rel, tol.curvature);
        }
        if point_index < FD_CURVATURE_POINTS {
            let fd = curvature_defn_fd(s, at, params, ConnectionSource::ClosedForm)?;
            for kind in BlockKind::ALL {
                let rel = curv.block(kind).relative_diff(&fd.block(kind));
                e.upper(
                    &format!("lc.curvature_fd.{}", kind.name()),
                    rel,
                    tol.curvature,
                );
            }
        }

        let ric = ricci(&curv, &metric.frame_gram());
        let expected = c * n as f64 * params.beta;
        if s.is_riemannian() {
            e.upper(
                "einstein.lambda",
                (ric.lambda_hat - expected).abs(),
                tol.einstein,
            );
            e.upper("einstein.defect", ric.defect, tol.einstein);
            e.upper("einstein.mixed", ric.mixed_max(), tol.connection);
        } else {
            e.push(
                "einstein.obstruction_defect",
                ric.defect,
                tol.einstein_obstruction_defect,
                Bound::Lower,
                Some("expected failure of the Einstein condition".into()),
            );
            let res = obstruction_residual(&ric, &bj, c);
            let i_up = geo.f.cartan_tensor().i_up;
            let diff = res
                .iter()
                .zip(&i_up)
                .fold(0.0f64, |w, (a, b)| w.max((a - b).abs()));
            e.upper("einstein.obstruction", diff, tol.obstruction);
        }
    }

    // operators
    let ctx = OperatorContext::new(s, at, params)?;
    let mut vdiv: f64 = 0.0;
    for i in 0..n {
        let mut comps = vec![0.0; m];
        comps[n + i] = 1.0;
        vdiv = vdiv.max(divergence(&ctx, &ConstantFrame(comps))?.frame.abs());
    }
    let mixed: Vec<f64> = (0..m)
        .map(|a| if a < n { 0.0 } else { rng.gen_range(-1.0..1.0) })
        .collect();
    vdiv = vdiv.max(divergence(&ctx, &ConstantFrame(mixed))?.frame.abs());
    e.upper("operators.div_vertical", vdiv, tol.divergence);
    e.upper(
        "operators.div_liouville",
        divergence(&ctx, &Liouville)?.frame.abs(),
        tol.divergence,
    );

    let k2 = K2Field(s);
    let lk = laplacian(&ctx, &k2)?;
    e.upper(
        "operators.laplacian_k2",
        lk.direct.abs().max(lk.closed.abs()),
        tol.divergence,
    );

    let div_s = divergence(&ctx, &Spray)?.frame;
    let mut expect = 0.0;
    for i in 0..n {
        let dir: Vec<f64> = frame_field_coords(&geo, i).iter().map(Jet::value).collect();
        let d = fd_directional(|q: &ChartPoint| ln_sqrt_g(s, q), at, &dir, FD_STEPS)?[0];
        expect += geo.f.p_up[i].value() * (d - ctx.j[i]);
    }
    e.upper("operators.div_spray", (div_s - expect).abs(), tol.spray);

    let xs: Vec<FrameVector> = (0..DUALITY_VECTORS)
        .map(|_| {
            let comps: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            FrameVector::from_components(n, &comps)
        })
        .collect();
    let mut dual: f64 = 0.0;
    let corpus = scalar_corpus(s)?;
    let mut lap: f64 = 0.0;
    for (_, f) in &corpus {
        dual = dual.max(gradient_duality(&ctx, f.as_ref(), &xs)?);
        lap = lap.max(laplacian(&ctx, f.as_ref())?.difference);
    }
    e.upper("operators.duality", dual, tol.duality);
    e.upper("operators.laplacian_corpus", lap, tol.laplacian);

    let lr = landsberg_characterizations(&ctx, tol.spray)?;
    e.push(
        "operators.landsberg",
        if lr.consistent { 0.0 } else { 1.0 },
        0.5,
        Bound::Upper,
        Some(format!(
            "mean_landsberg={} horizontal_div_free={} div_S={:.3e}",
            lr.mean_landsberg, lr.horizontal_div_free, lr.div_spray
        )),
    );
    Ok(())
}

/// Records for the aggregated lower-bound checks of one (structure, params) pair.
pub fn aggregate_records(e: &mut Emitter<'_>, agg: &Aggregates, tol: &Tolerances) {
    for (&key, &v) in &agg.values {
        let bound = match key {
            "kahler.nijenhuis_perturbed" => tol.nijenhuis_perturbed,
            "lc.horizontal_normal" => 1e-6,
            _ => continue,
        };
        e.push(
            key,
            v,
            bound,
            Bound::Lower,
            Some("maximum over sampled points".into()),
        );
    }
}
