//! Levi-Civita connection of the deformed metric on the adapted frame:
//! closed-form coefficients, a Koszul-formula oracle, curvature from the
//! definition and from closed-form blocks, Ricci and the Einstein defect.
//!
//! Frame indices run over `0..2n`: `a < n` is `δ_a`, `a ≥ n` is `∂̇^{a-n}`.
//! Connection tables store `Γ^d_ab` with `∇_{e_a} e_b = Γ^d_ab e_d` at flat
//! offset `(a·2n + b)·2n + d`.

use serde::Serialize;

use crate::berwald::BaseGeometry;
use crate::cartan::CartanStructure;
use crate::error::{EngineError, Result};
use crate::jets::{fd_directional, invert_jets, sum_jets, ChartPoint, Jet, SquareMatrix, FD_STEPS};
use crate::kahler::{
    frame_brackets, frame_field_coords, BundleJets, DeformationParams, FrameVector,
};
use crate::tensor::DTensor;

fn jsum(terms: Vec<Jet>) -> Jet {
    sum_jets(terms.iter()).expect("non-empty sum")
}

/// Which construction produced a connection table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectionSource {
    ClosedForm,
    Koszul,
}

/// Connection coefficients as jets (order ≥ 1 when curvature is needed).
#[derive(Debug, Clone)]
pub struct ConnectionJets {
    pub n: usize,
    pub gamma: Vec<Jet>,
}

/// Connection coefficients at a point.
#[derive(Debug, Clone, Serialize)]
pub struct LCConnection {
    pub n: usize,
    pub source: ConnectionSource,
    pub gamma: Vec<f64>,
}

impl ConnectionJets {
    fn m(&self) -> usize {
        2 * self.n
    }

    pub fn get(&self, a: usize, b: usize, d: usize) -> &Jet {
        let m = self.m();
        &self.gamma[(a * m + b) * m + d]
    }

    pub fn values(&self, source: ConnectionSource) -> LCConnection {
        LCConnection {
            n: self.n,
            source,
            gamma: self.gamma.iter().map(Jet::value).collect(),
        }
    }
}

impl LCConnection {
    fn m(&self) -> usize {
        2 * self.n
    }

    pub fn get(&self, a: usize, b: usize, d: usize) -> f64 {
        let m = self.m();
        self.gamma[(a * m + b) * m + d]
    }

    /// `∇_{e_a} e_b` in frame components.
    pub fn nabla(&self, a: usize, b: usize) -> FrameVector {
        let comps: Vec<f64> = (0..self.m()).map(|d| self.get(a, b, d)).collect();
        FrameVector::from_components(self.n, &comps)
    }

    /// `div(e_b) = Σ_a Γ^a_ab`
    pub fn frame_divergence(&self, b: usize) -> f64 {
        (0..self.m()).map(|a| self.get(a, b, a)).sum()
    }

    pub fn max_diff(&self, other: &LCConnection) -> f64 {
        self.gamma
            .iter()
            .zip(&other.gamma)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Block `∇_{A^i} B^j`, as `(horizontal, vertical)` arrays indexed `[i][j][s]`.
    pub fn block(&self, a_vertical: bool, b_vertical: bool) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let oa = if a_vertical { n } else { 0 };
        let ob = if b_vertical { n } else { 0 };
        let mut h = Vec::with_capacity(n * n * n);
        let mut v = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for s in 0..n {
                    h.push(self.get(oa + i, ob + j, s));
                    v.push(self.get(oa + i, ob + j, n + s));
                }
            }
        }
        (h, v)
    }
}

/// Precomputed ingredient tensors shared by the closed forms.
struct Ingredients {
    n: usize,
    beta: f64,
    p: Vec<Jet>,
    gl: DTensor<Jet>,
    gu: DTensor<Jet>,
    /// `C^ij_k`
    c_m: DTensor<Jet>,
    /// `C_ijk`
    c_d: DTensor<Jet>,
    /// `L^ijk`
    l_u: DTensor<Jet>,
    /// `L^i_jk`
    l_1: DTensor<Jet>,
    b: DTensor<Jet>,
}

impl Ingredients {
    fn new(bj: &BundleJets<'_>) -> Self {
        let geo = bj.geo;
        let f = &geo.f;
        let c_1 = f.lower(&geo.c_mixed, 1);
        Self {
            n: geo.n(),
            beta: bj.params.beta,
            p: (0..geo.n()).map(|i| f.p(i).clone()).collect(),
            gl: bj.gl.clone(),
            gu: bj.gu.clone(),
            c_m: geo.c_mixed.clone(),
            c_d: f.lower(&c_1, 0),
            l_u: geo.l_up(),
            l_1: geo.l_lower(),
            b: geo.b.clone(),
        }
    }
}

/// The closed-form coefficients, valid when `R_kij = c(g_jk p_i - g_ik p_j)`.
pub fn closed_form_jets(bj: &BundleJets<'_>, c: f64) -> ConnectionJets {
    let ing = Ingredients::new(bj);
    let n = ing.n;
    let m = 2 * n;
    let (beta, cb) = (ing.beta, c * ing.beta);
    let mut gamma = Vec::with_capacity(m * m * m);
    for a in 0..m {
        for b in 0..m {
            for d in 0..m {
                let s = d % n;
                let horizontal = d < n;
                let jet = match (a < n, b < n) {
                    (false, false) => {
                        let (i, j) = (a - n, b - n);
                        if horizontal {
                            ing.l_u.get(&[i, j, s]).scale(beta * beta)
                        } else {
                            &(ing.gu.get(&[i, j]) * &ing.p[s]).scale(cb) - ing.c_m.get(&[i, j, s])
                        }
                    }
                    (true, false) => {
                        let (i, j) = (a, b - n);
                        if horizontal {
                            ing.c_m.get(&[j, s, i]) - &(ing.gu.get(&[j, s]) * &ing.p[i]).scale(cb)
                        } else {
                            -(ing.l_1.get(&[j, i, s]) + ing.b.get(&[j, i, s]))
                        }
                    }
                    (false, true) => {
                        let (i, j) = (a - n, b);
                        if horizontal {
                            ing.c_m.get(&[i, s, j]) - &(ing.gu.get(&[i, s]) * &ing.p[j]).scale(cb)
                        } else {
                            -ing.l_1.get(&[i, j, s])
                        }
                    }
                    (true, true) => {
                        let (i, j) = (a, b);
                        if horizontal {
                            ing.l_1.get(&[s, i, j]) + ing.b.get(&[s, i, j])
                        } else {
                            &(ing.gl.get(&[j, s]) * &ing.p[i]).scale(cb)
                                - &ing.c_d.get(&[i, j, s]).scale(1.0 / (beta * beta))
                        }
                    }
                };
                gamma.push(jet);
            }
        }
    }
    ConnectionJets { n, gamma }
}

/// Applies the frame field `e_a` to a jet.
pub fn frame_derivative(geo: &BaseGeometry, f: &Jet, a: usize) -> Jet {
    let n = geo.n();
    if a < n {
        geo.delta(f, a)
    } else {
        f.d(n + (a - n))
    }
}

/// Connection from the Koszul formula on the adapted frame, with brackets
/// from coordinate components and the frame Gram matrix inverted with jets.
pub fn koszul_jets(bj: &BundleJets<'_>) -> Result<ConnectionJets> {
    let geo = bj.geo;
    let n = geo.n();
    let m = 2 * n;
    let gram: Vec<Jet> = (0..m * m).map(|k| bj.frame_gram(k / m, k % m)).collect();
    let gram_inv = invert_jets(&gram, m)?;
    let omega = frame_brackets(geo);
    let om = |a: usize, b: usize, d: usize| &omega[(a * m + b) * m + d];
    // G([e_a, e_b], e_c)
    let g_br = |a: usize, b: usize, c: usize| {
        jsum((0..m).map(|d| om(a, b, d) * &gram[d * m + c]).collect())
    };
    let eg: Vec<Jet> = (0..m * m * m)
        .map(|k| frame_derivative(geo, &gram[k % (m * m)], k / (m * m)))
        .collect();
    let e_g = |a: usize, b: usize, c: usize| &eg[(a * m + b) * m + c];
    let mut kz = Vec::with_capacity(m * m * m);
    for a in 0..m {
        for b in 0..m {
            for c in 0..m {
                let t = jsum(vec![
                    e_g(a, b, c).clone(),
                    e_g(b, a, c).clone(),
                    -e_g(c, a, b),
                    g_br(a, b, c),
                    -g_br(a, c, b),
                    -g_br(b, c, a),
                ]);
                kz.push(t);
            }
        }
    }
    let mut gamma = Vec::with_capacity(m * m * m);
    for a in 0..m {
        for b in 0..m {
            for d in 0..m {
                let t = jsum(
                    (0..m)
                        .map(|c| &gram_inv[d * m + c] * &kz[(a * m + b) * m + c])
                        .collect(),
                );
                gamma.push(t.scale(0.5));
            }
        }
    }
    Ok(ConnectionJets { n, gamma })
}

/// `max |∇_a e_b - ∇_b e_a - [e_a, e_b]|`
pub fn torsion_residual(conn: &LCConnection, omega: &[f64]) -> f64 {
    let m = 2 * conn.n;
    let mut worst: f64 = 0.0;
    for a in 0..m {
        for b in 0..m {
            for d in 0..m {
                let t = conn.get(a, b, d) - conn.get(b, a, d) - omega[(a * m + b) * m + d];
                worst = worst.max(t.abs());
            }
        }
    }
    worst
}

/// `max |e_a G(e_b, e_c) - G(∇_a e_b, e_c) - G(e_b, ∇_a e_c)|`
pub fn metric_residual(bj: &BundleJets<'_>, conn: &LCConnection) -> f64 {
    let geo = bj.geo;
    let m = 2 * geo.n();
    let gram: Vec<Jet> = (0..m * m).map(|k| bj.frame_gram(k / m, k % m)).collect();
    let mut worst: f64 = 0.0;
    for a in 0..m {
        for b in 0..m {
            for c in 0..m {
                let mut t = frame_derivative(geo, &gram[b * m + c], a).value();
                for d in 0..m {
                    t -= conn.get(a, b, d) * gram[d * m + c].value();
                    t -= conn.get(a, c, d) * gram[b * m + d].value();
                }
                worst = worst.max(t.abs());
            }
        }
    }
    worst
}

/// `max |H ∇_{∂̇^i} ∂̇^j|`: zero iff the vertical distribution is totally geodesic.
pub fn vertical_geodesic_defect(conn: &LCConnection) -> f64 {
    let (h, _) = conn.block(true, true);
    h.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `max_{i,s} |p^j Γ^{∂̇^s}_{δ_i δ_j}|`, the normal part of `∇_{δ_i} S`-type
/// contractions; for Riemannian duals it equals `|c p_i p_s (1 - 2cβ²τ)|`.
pub fn horizontal_normal_part(conn: &LCConnection, p_up: &[f64]) -> f64 {
    let n = conn.n;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for s in 0..n {
            let t: f64 = (0..n).map(|j| p_up[j] * conn.get(i, j, n + s)).sum();
            worst = worst.max(t.abs());
        }
    }
    worst
}

/// Full curvature tensor `K(e_a, e_b) e_c = K^f_abc e_f` at a point, stored at
/// `((a·2n + b)·2n + c)·2n + f`.
#[derive(Debug, Clone, Serialize)]
pub struct Curvature {
    pub n: usize,
    pub k: Vec<f64>,
}

impl Curvature {
    fn m(&self) -> usize {
        2 * self.n
    }

    pub fn get(&self, a: usize, b: usize, c: usize, f: usize) -> f64 {
        let m = self.m();
        self.k[((a * m + b) * m + c) * m + f]
    }

    pub fn apply(&self, a: usize, b: usize, c: usize) -> FrameVector {
        let comps: Vec<f64> = (0..self.m()).map(|f| self.get(a, b, c, f)).collect();
        FrameVector::from_components(self.n, &comps)
    }

    pub fn max_abs(&self) -> f64 {
        self.k.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |K(X,Y) + K(Y,X)|`
    pub fn antisymmetry_residual(&self) -> f64 {
        let m = self.m();
        let mut worst: f64 = 0.0;
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    for f in 0..m {
                        worst = worst.max((self.get(a, b, c, f) + self.get(b, a, c, f)).abs());
                    }
                }
            }
        }
        worst
    }

    pub fn block(&self, which: BlockKind) -> CurvatureBlock {
        let n = self.n;
        let (oa, ob, oc) = which.offsets(n);
        let len = n * n * n * n;
        let mut h = Vec::with_capacity(len);
        let mut v = Vec::with_capacity(len);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for s in 0..n {
                        h.push(self.get(oa + i, ob + j, oc + k, s));
                        v.push(self.get(oa + i, ob + j, oc + k, n + s));
                    }
                }
            }
        }
        CurvatureBlock {
            which,
            horizontal: h,
            vertical: v,
        }
    }
}

/// The six frame patterns `K(A^i, B^j) C^k` with independent closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// `K(∂̇^i, ∂̇^j) ∂̇^k`
    VVV,
    /// `K(δ_i, ∂̇^j) ∂̇^k`
    HVV,
    /// `K(δ_i, δ_j) δ_k`
    HHH,
    /// `K(δ_i, δ_j) ∂̇^k`
    HHV,
    /// `K(∂̇^i, ∂̇^j) δ_k`
    VVH,
    /// `K(δ_i, ∂̇^j) δ_k`
    HVH,
}

impl BlockKind {
    pub const ALL: [BlockKind; 6] = [
        BlockKind::VVV,
        BlockKind::HVV,
        BlockKind::HHH,
        BlockKind::HHV,
        BlockKind::VVH,
        BlockKind::HVH,
    ];

    fn offsets(self, n: usize) -> (usize, usize, usize) {
        let o = |vertical: bool| if vertical { n } else { 0 };
        let (a, b, c) = match self {
            BlockKind::VVV => (true, true, true),
            BlockKind::HVV => (false, true, true),
            BlockKind::HHH => (false, false, false),
            BlockKind::HHV => (false, false, true),
            BlockKind::VVH => (true, true, false),
            BlockKind::HVH => (false, true, false),
        };
        (o(a), o(b), o(c))
    }

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::VVV => "vvv",
            BlockKind::HVV => "hvv",
            BlockKind::HHH => "hhh",
            BlockKind::HHV => "hhv",
            BlockKind::VVH => "vvh",
            BlockKind::HVH => "hvh",
        }
    }

    pub fn formula(self) -> &'static str {
        match self {
            BlockKind::VVV => "K(∂̇^i,∂̇^j)∂̇^k",
            BlockKind::HVV => "K(δ_i,∂̇^j)∂̇^k",
            BlockKind::HHH => "K(δ_i,δ_j)δ_k",
            BlockKind::HHV => "K(δ_i,δ_j)∂̇^k",
            BlockKind::VVH => "K(∂̇^i,∂̇^j)δ_k",
            BlockKind::HVH => "K(δ_i,∂̇^j)δ_k",
        }
    }
}

/// One frame pattern of the curvature: coefficients along `δ_h` and `∂̇^h`,
/// both indexed `[i][j][k][h]`.
#[derive(Debug, Clone, Serialize)]
pub struct CurvatureBlock {
    pub which: BlockKind,
    pub horizontal: Vec<f64>,
    pub vertical: Vec<f64>,
}

impl CurvatureBlock {
    pub fn max_abs(&self) -> f64 {
        self.horizontal
            .iter()
            .chain(&self.vertical)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_diff(&self, other: &CurvatureBlock) -> f64 {
        self.horizontal
            .iter()
            .chain(&self.vertical)
            .zip(other.horizontal.iter().chain(&other.vertical))
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Max difference scaled by `max(1, ‖other‖∞)`.
    pub fn relative_diff(&self, other: &CurvatureBlock) -> f64 {
        self.max_diff(other) / other.max_abs().max(1.0)
    }
}

/// `K^f_abc = e_a(Γ^f_bc) - e_b(Γ^f_ac) + Γ^d_bc Γ^f_ad - Γ^d_ac Γ^f_bd - Ω^d_ab Γ^f_dc`
/// with the frame derivatives `e_a(Γ^f_bc)` supplied by `deriv(a, b, c, f)`.
fn curvature_from_parts(
    n: usize,
    gamma: &LCConnection,
    omega: &[f64],
    deriv: impl Fn(usize, usize, usize, usize) -> f64,
) -> Curvature {
    let m = 2 * n;
    let mut k = Vec::with_capacity(m * m * m * m);
    for a in 0..m {
        for b in 0..m {
            for c in 0..m {
                for f in 0..m {
                    let mut v = deriv(a, b, c, f) - deriv(b, a, c, f);
                    for d in 0..m {
                        v += gamma.get(b, c, d) * gamma.get(a, d, f);
                        v -= gamma.get(a, c, d) * gamma.get(b, d, f);
                        v -= omega[(a * m + b) * m + d] * gamma.get(d, c, f);
                    }
                    k.push(v);
                }
            }
        }
    }
    Curvature { n, k }
}

/// Curvature from the definition with exact (jet) frame derivatives of the
/// connection coefficients.
pub fn curvature_defn_jet(geo: &BaseGeometry, conn: &ConnectionJets) -> Result<Curvature> {
    if conn.gamma.iter().any(|g| g.order() < 1) {
        return Err(EngineError::InsufficientOrder {
            needed: 1,
            available: 0,
        });
    }
    let n = geo.n();
    let m = 2 * n;
    let omega: Vec<f64> = frame_brackets(geo).iter().map(Jet::value).collect();
    let values = conn.values(ConnectionSource::ClosedForm);
    let mut derivs = Vec::with_capacity(m * m * m * m);
    for a in 0..m {
        for g in &conn.gamma {
            derivs.push(frame_derivative(geo, g, a).value());
        }
    }
    let m3 = m * m * m;
    Ok(curvature_from_parts(n, &values, &omega, |a, b, c, f| {
        derivs[a * m3 + (b * m + c) * m + f]
    }))
}

/// Connection values at a point from the chosen construction.
pub fn connection_at(
    s: &dyn CartanStructure,
    at: &ChartPoint,
    params: &DeformationParams,
    source: ConnectionSource,
    order: usize,
) -> Result<(BaseGeometry, LCConnection)> {
    let geo = BaseGeometry::new(s, at, order)?;
    let conn = {
        let bj = BundleJets::new(&geo, params)?;
        match source {
            ConnectionSource::ClosedForm => {
                let c = closed_form_c(&bj)?;
                closed_form_jets(&bj, c).values(source)
            }
            ConnectionSource::Koszul => koszul_jets(&bj)?.values(source),
        }
    };
    Ok((geo, conn))
}

/// The `c` used by the closed forms: the law's own constant, or `-v/(αβ²)` at the point.
pub fn closed_form_c(bj: &BundleJets<'_>) -> Result<f64> {
    let p = &bj.params;
    match p.c() {
        Some(c) => Ok(c),
        None => Ok(-bj.v.value() / (p.alpha * p.beta * p.beta)),
    }
}

/// Curvature from the definition with frame derivatives of the connection
/// coefficients taken by Richardson-extrapolated central differences along
/// the frame directions.
pub fn curvature_defn_fd(
    s: &dyn CartanStructure,
    at: &ChartPoint,
    params: &DeformationParams,
    source: ConnectionSource,
) -> Result<Curvature> {
    let (geo, conn) = connection_at(s, at, params, source, 4)?;
    let n = geo.n();
    let m = 2 * n;
    let omega: Vec<f64> = frame_brackets(&geo).iter().map(Jet::value).collect();
    let gamma_at = |q: &ChartPoint| -> Result<Vec<f64>> {
        Ok(connection_at(s, q, params, source, 4)?.1.gamma)
    };
    let mut derivs = Vec::with_capacity(m);
    for a in 0..m {
        let dir: Vec<f64> = frame_field_coords(&geo, a).iter().map(Jet::value).collect();
        derivs.push(fd_directional(gamma_at, at, &dir, FD_STEPS)?);
    }
    Ok(curvature_from_parts(n, &conn, &omega, |a, b, c, f| {
        derivs[a][(b * m + c) * m + f]
    }))
}

/// Curvature assembled from the six closed-form blocks and antisymmetry in
/// the first two arguments.
pub fn curvature_closed(bj: &BundleJets<'_>, c: f64) -> Result<Curvature> {
    let geo = bj.geo;
    let f = &geo.f;
    let n = geo.n();
    let m = 2 * n;
    let beta = bj.params.beta;
    let (b2, ib2) = (beta * beta, 1.0 / (beta * beta));
    let cb = c * beta;

    let val = |t: &DTensor<Jet>| t.values();
    let dv = |t: &DTensor<Jet>| geo.v_cov(t).map(|x| x.values());
    let c_m_j = &geo.c_mixed;
    let c_1_j = f.lower(c_m_j, 1);
    let c_d_j = f.lower(&c_1_j, 0);
    let l_m_j = &geo.l_mixed;
    let l_u_j = geo.l_up();
    let l_1_j = geo.l_lower();

    let gl = val(&bj.gl);
    let gu = val(&bj.gu);
    let p: Vec<f64> = (0..n).map(|i| f.p(i).value()).collect();
    let cm = val(c_m_j);
    let c1 = val(&c_1_j);
    let cd = val(&c_d_j);
    let lm = val(l_m_j);
    let lu = val(&l_u_j);
    let l1 = val(&l_1_j);
    let rv = val(&geo.r);
    let rc = val(&geo.berwald_curvature());
    let d_cm = dv(c_m_j)?;
    let d_cd = dv(&c_d_j)?;
    let d_l1 = dv(&l_1_j)?;
    let d_b = dv(&geo.b)?;
    let h_cm = val(&geo.h_cov(c_m_j)?);
    let h_cd = val(&geo.h_cov(&c_d_j)?);
    let h_l1 = val(&geo.h_cov(&l_1_j)?);
    let h_lu = val(&geo.h_cov(&l_u_j)?);
    let v_lu = val(&geo.cartan_v_cov(&l_u_j));
    let v_l1 = val(&geo.cartan_v_cov(&l_1_j));

    let g = |t: &DTensor<f64>, ix: &[usize]| *t.get(ix);
    let kd = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let sum = |f: &dyn Fn(usize) -> f64| (0..n).map(f).sum::<f64>();

    let mut k = vec![0.0; m * m * m * m];
    let mut put = |a: usize, bb: usize, cc: usize, ff: usize, v: f64| {
        k[((a * m + bb) * m + cc) * m + ff] = v;
        k[((bb * m + a) * m + cc) * m + ff] = -v;
    };

    for i in 0..n {
        for j in 0..n {
            for kk in 0..n {
                for h in 0..n {
                    // K(∂̇^i, ∂̇^j) ∂̇^k
                    let hh = b2 * (g(&v_lu, &[j, kk, h, i]) - g(&v_lu, &[i, kk, h, j]));
                    let vv = g(&d_cm, &[i, kk, h, j]) - g(&d_cm, &[j, kk, h, i])
                        + cb * g(&gu, &[j, kk]) * kd(i, h)
                        - cb * g(&gu, &[i, kk]) * kd(j, h)
                        + sum(&|s| {
                            g(&cm, &[j, kk, s]) * g(&cm, &[i, s, h])
                                - g(&cm, &[i, kk, s]) * g(&cm, &[j, s, h])
                        })
                        + b2 * sum(&|s| {
                            g(&l1, &[j, s, h]) * g(&lu, &[s, i, kk])
                                - g(&l1, &[i, s, h]) * g(&lu, &[s, j, kk])
                        });
                    put(n + i, n + j, n + kk, h, hh);
                    put(n + i, n + j, n + kk, n + h, vv);

                    // K(δ_i, ∂̇^j) ∂̇^k
                    let hh = cb * g(&gu, &[kk, h]) * kd(j, i)
                        - g(&d_cm, &[kk, h, i, j])
                        - sum(&|s| {
                            g(&cm, &[j, h, s]) * g(&cm, &[kk, s, i])
                                + g(&cm, &[j, kk, s]) * g(&cm, &[h, s, i])
                        })
                        + b2 * (sum(&|s| {
                            g(&lu, &[s, j, kk]) * g(&l1, &[h, i, s])
                                + g(&l1, &[kk, s, i]) * g(&lu, &[h, j, s])
                        }) + g(&h_lu, &[h, j, kk, i]));
                    let vv = g(&d_b, &[kk, i, h, j])
                        - g(&h_cm, &[j, kk, h, i])
                        - c * b2 * g(&lm, &[j, kk, i]) * p[h]
                        + sum(&|s| {
                            -g(&cd, &[i, s, h]) * g(&lu, &[j, s, kk])
                                + g(&cm, &[j, kk, s]) * g(&l1, &[s, i, h])
                                + g(&cm, &[s, kk, i]) * g(&l1, &[j, s, h])
                                - g(&cm, &[j, s, h]) * g(&l1, &[kk, i, s])
                        })
                        + g(&d_l1, &[kk, h, i, j]);
                    put(i, n + j, n + kk, h, hh);
                    put(i, n + j, n + kk, n + h, vv);

                    // K(δ_i, δ_j) δ_k
                    let hh = g(&rc, &[h, kk, j, i])
                        + ib2
                            * sum(&|s| {
                                g(&cd, &[i, kk, s]) * g(&cm, &[h, s, j])
                                    - g(&cd, &[j, kk, s]) * g(&cm, &[h, s, i])
                            })
                        + c * c * b2 * (p[i] * kd(h, j) - p[j] * kd(h, i)) * p[kk]
                        + sum(&|s| {
                            g(&l1, &[s, kk, j]) * g(&l1, &[h, i, s])
                                - g(&l1, &[s, kk, i]) * g(&l1, &[h, j, s])
                        })
                        + g(&h_l1, &[h, kk, j, i])
                        - g(&h_l1, &[h, kk, i, j])
                        - sum(&|s| g(&rv, &[s, i, j]) * g(&cm, &[s, h, kk]));
                    let vv = ib2 * (g(&h_cd, &[i, kk, h, j]) - g(&h_cd, &[j, kk, h, i]))
                        + sum(&|s| g(&rv, &[s, i, j]) * g(&l1, &[s, kk, h]))
                        + ib2
                            * sum(&|s| {
                                g(&cd, &[j, kk, s]) * g(&l1, &[s, i, h])
                                    - g(&cd, &[i, kk, s]) * g(&l1, &[s, j, h])
                                    + g(&cd, &[j, h, s]) * g(&l1, &[s, kk, i])
                                    - g(&cd, &[i, h, s]) * g(&l1, &[s, j, kk])
                            });
                    put(i, j, kk, h, hh);
                    put(i, j, kk, n + h, vv);

                    // K(δ_i, δ_j) ∂̇^k
                    let hh = g(&h_cm, &[kk, h, j, i]) - g(&h_cm, &[kk, h, i, j])
                        + c * b2 * (p[j] * g(&lm, &[kk, h, i]) - p[i] * g(&lm, &[kk, h, j]))
                        + sum(&|s| {
                            g(&cm, &[kk, s, j]) * g(&l1, &[h, s, i])
                                - g(&cm, &[kk, s, i]) * g(&l1, &[h, s, j])
                                + g(&cm, &[s, h, j]) * g(&l1, &[kk, s, i])
                                - g(&cm, &[s, h, i]) * g(&l1, &[kk, s, j])
                        });
                    let vv = -g(&rc, &[kk, h, j, i])
                        + ib2
                            * sum(&|s| {
                                g(&cm, &[kk, s, i]) * g(&cd, &[j, h, s])
                                    - g(&cm, &[kk, s, j]) * g(&cd, &[i, h, s])
                            })
                        + c * c * b2 * p[h] * (p[j] * kd(kk, i) - p[i] * kd(kk, j))
                        + g(&h_l1, &[kk, h, i, j])
                        - g(&h_l1, &[kk, h, j, i])
                        + sum(&|s| {
                            g(&l1, &[kk, s, j]) * g(&l1, &[s, h, i])
                                - g(&l1, &[kk, s, i]) * g(&l1, &[s, h, j])
                        })
                        + sum(&|s| g(&rv, &[s, i, j]) * g(&cm, &[s, kk, h]));
                    put(i, j, n + kk, h, hh);
                    put(i, j, n + kk, n + h, vv);

                    // K(∂̇^i, ∂̇^j) δ_k
                    let hh = g(&d_cm, &[j, h, kk, i]) - g(&d_cm, &[i, h, kk, j])
                        + sum(&|s| {
                            g(&cm, &[j, s, kk]) * g(&cm, &[i, h, s])
                                - g(&cm, &[i, s, kk]) * g(&cm, &[j, h, s])
                        })
                        + cb * (g(&gu, &[i, h]) * kd(j, kk) - g(&gu, &[j, h]) * kd(i, kk))
                        + b2 * sum(&|s| {
                            g(&lu, &[j, s, h]) * g(&l1, &[i, s, kk])
                                - g(&lu, &[i, s, h]) * g(&l1, &[j, s, kk])
                        });
                    let vv = g(&v_l1, &[i, kk, h, j]) - g(&v_l1, &[j, kk, h, i]);
                    put(n + i, n + j, kk, h, hh);
                    put(n + i, n + j, kk, n + h, vv);

                    // K(δ_i, ∂̇^j) δ_k
                    let hh = g(&h_cm, &[j, h, kk, i]) + c * b2 * g(&lm, &[j, h, i]) * p[kk]
                        - g(&d_l1, &[h, kk, i, j])
                        - g(&d_b, &[h, i, kk, j])
                        + sum(&|s| {
                            g(&cm, &[j, s, kk]) * g(&l1, &[h, s, i])
                                - g(&cm, &[j, h, s]) * g(&l1, &[s, kk, i])
                                - g(&cm, &[s, h, i]) * g(&l1, &[j, s, kk])
                                + g(&cd, &[i, kk, s]) * g(&lu, &[h, j, s])
                        });
                    let vv = ib2
                        * (g(&d_cd, &[i, kk, h, j])
                            - sum(&|s| {
                                g(&cd, &[i, s, h]) * g(&cm, &[j, s, kk])
                                    + g(&cd, &[i, kk, s]) * g(&cm, &[j, s, h])
                            }))
                        + c * p[h] * g(&c1, &[j, i, kk])
                        + c * p[kk] * g(&c1, &[j, i, h])
                        - cb * g(&gl, &[kk, h]) * kd(j, i)
                        + sum(&|s| {
                            g(&l1, &[j, s, kk]) * g(&l1, &[s, h, i])
                                + g(&l1, &[j, s, h]) * g(&l1, &[s, kk, i])
                        })
                        - g(&h_l1, &[j, h, kk, i]);
                    put(i, n + j, kk, h, hh);
                    put(i, n + j, kk, n + h, vv);
                }
            }
        }
    }
    Ok(Curvature { n, k })
}

/// Ricci tensor by trace over the adapted frame and the Einstein fit.
#[derive(Debug, Clone, Serialize)]
pub struct RicciData {
    pub n: usize,
    /// `Ric(e_b, e_c)`, row-major `2n × 2n`.
    pub ric: Vec<f64>,
    pub lambda_hat: f64,
    /// `max |Ric - λ̂ G|`
    pub defect: f64,
    /// `max |Ric(e_b,e_c) - Ric(e_c,e_b)|`
    pub asymmetry: f64,
}

impl RicciData {
    pub fn get(&self, b: usize, c: usize) -> f64 {
        self.ric[b * 2 * self.n + c]
    }

    /// The `2n × 2n` matrix split into `(hh, hv, vh, vv)` blocks, each `n × n` row-major.
    pub fn blocks(&self) -> [Vec<f64>; 4] {
        let n = self.n;
        let pick = |ob: usize, oc: usize| {
            (0..n)
                .flat_map(|b| (0..n).map(move |c| (b, c)))
                .map(|(b, c)| self.get(ob + b, oc + c))
                .collect::<Vec<f64>>()
        };
        [pick(0, 0), pick(0, n), pick(n, 0), pick(n, n)]
    }

    /// `max |Ric(δ_j, ∂̇^k)|` over both mixed blocks.
    pub fn mixed_max(&self) -> f64 {
        let [_, hv, vh, _] = self.blocks();
        hv.iter().chain(&vh).fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn ricci(curv: &Curvature, gram: &SquareMatrix) -> RicciData {
    let n = curv.n;
    let m = 2 * n;
    let ric: Vec<f64> = (0..m * m)
        .map(|k| {
            let (b, c) = (k / m, k % m);
            (0..m).map(|a| curv.get(a, b, c, a)).sum()
        })
        .collect();
    let num: f64 = ric.iter().zip(gram.entries()).map(|(r, g)| r * g).sum();
    let den: f64 = gram.entries().iter().map(|g| g * g).sum();
    let lambda_hat = num / den;
    let defect = ric
        .iter()
        .zip(gram.entries())
        .fold(0.0f64, |w, (r, g)| w.max((r - lambda_hat * g).abs()));
    let mut asymmetry: f64 = 0.0;
    for b in 0..m {
        for c in 0..b {
            asymmetry = asymmetry.max((ric[b * m + c] - ric[c * m + b]).abs());
        }
    }
    RicciData {
        n,
        ric,
        lambda_hat,
        defect,
        asymmetry,
    }
}

/// `p_k Ric(∂̇^j, ∂̇^k) - cnβ p_k G^jk` for each `j`.
pub fn obstruction_residual(ric: &RicciData, bj: &BundleJets<'_>, c: f64) -> Vec<f64> {
    let n = ric.n;
    let f = &bj.geo.f;
    let beta = bj.params.beta;
    (0..n)
        .map(|j| {
            (0..n)
                .map(|k| {
                    let pk = f.p(k).value();
                    pk * (ric.get(n + j, n + k) - c * n as f64 * beta * bj.gu.get(&[j, k]).value())
                })
                .sum()
        })
        .collect()
}

/// Everything this module computes at one point.
#[derive(Debug, Clone)]
pub struct LeviCivitaReport {
    pub closed: Option<LCConnection>,
    pub koszul: LCConnection,
    pub omega: Vec<f64>,
    pub torsion: f64,
    pub metric: f64,
    pub curvature: Curvature,
    pub curvature_closed: Option<Curvature>,
    pub ricci: RicciData,
}

pub fn lc_closed_form(
    s: &dyn CartanStructure,
    at: &ChartPoint,
    params: &DeformationParams,
) -> Result<LCConnection> {
    Ok(connection_at(s, at, params, ConnectionSource::ClosedForm, 4)?.1)
}

pub fn koszul_oracle(
    s: &dyn CartanStructure,
    at: &ChartPoint,
    params: &DeformationParams,
) -> Result<LCConnection> {
    Ok(connection_at(s, at, params, ConnectionSource::Koszul, 4)?.1)
}
