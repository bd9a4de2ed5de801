//! Component dumps of named geometric objects at one point.

use serde::Serialize;
use serde_json::{json, Map, Value};

use cartan_core::berwald::BaseGeometry;
use cartan_core::cartan::K2Field;
use cartan_core::jets::{Jet, SquareMatrix};
use cartan_core::kahler::{theta_matrix, BundleJets};
use cartan_core::levicivita::{
    closed_form_c, closed_form_jets, curvature_closed, curvature_defn_jet, koszul_jets, ricci,
    BlockKind, ConnectionSource,
};
use cartan_core::operators::{divergence, gradient, laplacian, Liouville, OperatorContext, Spray};
use cartan_core::{ChartPoint, EngineError};

use crate::checks::matched;
use crate::manifest::Resolved;

pub const OBJECTS: [&str; 17] = [
    "g",
    "g_inv",
    "C",
    "I",
    "N",
    "B",
    "L",
    "J",
    "R",
    "G",
    "G_inv",
    "theta",
    "nabla",
    "curvature",
    "ricci",
    "lambda",
    "operators",
];

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("unknown object '{0}' (known: {known})", known = OBJECTS.join(", "))]
    UnknownObject(String),
    #[error("unknown {kind} '{label}'")]
    UnknownLabel { kind: &'static str, label: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Serialize)]
pub struct TensorReport {
    pub structure: String,
    pub params: String,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub connection_source: ConnectionSource,
    pub objects: Map<String, Value>,
}

fn obj(anchor: &str, value: Value) -> Value {
    json!({ "anchor": anchor, "value": value })
}

fn matrix(m: &SquareMatrix) -> Value {
    let n = m.dim();
    json!((0..n)
        .map(|i| (0..n).map(|j| m.get(i, j)).collect::<Vec<_>>())
        .collect::<Vec<_>>())
}

fn values(v: &[Jet]) -> Value {
    json!(v.iter().map(Jet::value).collect::<Vec<_>>())
}

/// Nested `[i][j][s]` array from a flat `n³` buffer.
fn cube(n: usize, data: &[f64]) -> Value {
    json!((0..n)
        .map(|i| (0..n)
            .map(|j| data[(i * n + j) * n..(i * n + j + 1) * n].to_vec())
            .collect::<Vec<_>>())
        .collect::<Vec<_>>())
}

fn quartic(n: usize, data: &[f64]) -> Value {
    let n3 = n * n * n;
    json!((0..n)
        .map(|i| cube(n, &data[i * n3..(i + 1) * n3]))
        .collect::<Vec<_>>())
}

pub fn run_tensor(
    resolved: &Resolved,
    structure: &str,
    params: &str,
    at: &ChartPoint,
    objects: &[String],
) -> Result<TensorReport, TensorError> {
    for o in objects {
        if !OBJECTS.contains(&o.as_str()) {
            return Err(TensorError::UnknownObject(o.clone()));
        }
    }
    let si = resolved
        .structure(structure)
        .ok_or_else(|| TensorError::UnknownLabel {
            kind: "structure",
            label: structure.into(),
        })?;
    let pi = resolved
        .params_index(params)
        .ok_or_else(|| TensorError::UnknownLabel {
            kind: "params",
            label: params.into(),
        })?;
    let s = resolved.structures[si].structure.as_ref();
    let params = &resolved.params[pi];
    s.check_admissible(at)?;
    let n = s.dim();

    let geo = BaseGeometry::full(s, at)?;
    let bj = BundleJets::new(&geo, params)?;
    let is_matched = matched(s, params);
    let (source, conn_jets) = if is_matched {
        (
            ConnectionSource::ClosedForm,
            closed_form_jets(&bj, closed_form_c(&bj)?),
        )
    } else {
        (ConnectionSource::Koszul, koszul_jets(&bj)?)
    };
    let conn = conn_jets.values(source);
    let metric = bj.metric();
    let curvature = || -> Result<_, EngineError> {
        if is_matched {
            curvature_closed(&bj, closed_form_c(&bj)?)
        } else {
            curvature_defn_jet(&geo, &conn_jets)
        }
    };

    let mut out = Map::new();
    for name in objects {
        let v = match name.as_str() {
            "g" => obj("g^ij = ½ ∂̇^i ∂̇^j K²", geo.f.g_up.values().to_json()),
            "g_inv" => obj("g_ij g^jk = δ^k_i", geo.f.g_down.values().to_json()),
            "C" => obj("C^ijk = -¼ ∂̇^i ∂̇^j ∂̇^k K²", geo.f.c_up.values().to_json()),
            "I" => obj("I^j = C^jh_h", json!(geo.f.cartan_tensor().i_up)),
            "N" => obj(
                "N_ij = γ°_ij - ½ γ°_h° ∂̇^h g_ij",
                geo.n_conn.values().to_json(),
            ),
            "B" => obj("B^i_jk = ∂̇^i N_jk", geo.b.values().to_json()),
            "L" => obj("L^ij_k = C^ij_k|h p^h", geo.l_mixed.values().to_json()),
            "J" => obj("J_i = L^s_is", values(&geo.j_down())),
            "R" => obj("R_kij = δ_i N_jk - δ_j N_ik", geo.r.values().to_json()),
            "G" => obj("G_ij = g_ij/β + v/(αβ) p_i p_j", bj.gl.values().to_json()),
            "G_inv" => obj(
                "G^kl = β g^kl - vβ/(α + 2τv) p^k p^l",
                bj.gu.values().to_json(),
            ),
            "theta" => obj("θ(X, Y) = G(X, JY)", matrix(&theta_matrix(&metric))),
            "nabla" => {
                let mut blocks = Map::new();
                for (key, av, bv) in [
                    ("vv", true, true),
                    ("hv", false, true),
                    ("vh", true, false),
                    ("hh", false, false),
                ] {
                    let (h, v) = conn.block(av, bv);
                    blocks.insert(
                        key.into(),
                        json!({ "horizontal": cube(n, &h), "vertical": cube(n, &v) }),
                    );
                }
                obj("∇_{e_a} e_b = Γ^d_ab e_d", Value::Object(blocks))
            }
            "curvature" => {
                let k = curvature()?;
                let mut blocks = Map::new();
                for kind in BlockKind::ALL {
                    let b = k.block(kind);
                    blocks.insert(
                        kind.name().into(),
                        json!({
                            "formula": kind.formula(),
                            "horizontal": quartic(n, &b.horizontal),
                            "vertical": quartic(n, &b.vertical),
                        }),
                    );
                }
                obj(
                    "K(X, Y)Z = ∇_X∇_Y Z - ∇_Y∇_X Z - ∇_[X,Y] Z",
                    Value::Object(blocks),
                )
            }
            "ricci" | "lambda" => {
                let r = ricci(&curvature()?, &metric.frame_gram());
                if name == "lambda" {
                    obj("λ̂ = ⟨Ric, G⟩ / ⟨G, G⟩", json!(r.lambda_hat))
                } else {
                    let [hh, hv, vh, vv] = r.blocks();
                    obj(
                        "Ric(Y, Z) = trace of X ↦ K(X, Y)Z",
                        json!({
                            "hh": hh, "hv": hv, "vh": vh, "vv": vv,
                            "lambda_hat": r.lambda_hat, "defect": r.defect,
                        }),
                    )
                }
            }
            "operators" => {
                let ctx = OperatorContext::new(s, at, params)?;
                let k2 = K2Field(s);
                let lap = laplacian(&ctx, &k2)?;
                obj(
                    "div X = Σ_a X^a div(e_a), grad f = (G^ih δ_h f, G_ih ∂̇^h f)",
                    json!({
                        "frame_divergence": ctx.frame_divergences(),
                        "div_liouville": divergence(&ctx, &Liouville)?,
                        "div_spray": divergence(&ctx, &Spray)?,
                        "grad_k2": gradient(&ctx, &k2)?,
                        "laplacian_k2": lap,
                        "h_trace": ctx.h_trace,
                        "sqrt_g": ctx.sqrt_g,
                    }),
                )
            }
            _ => unreachable!("validated above"),
        };
        out.insert(name.clone(), v);
    }
    Ok(TensorReport {
        structure: structure.into(),
        params: params.label.clone(),
        x: at.x.clone(),
        p: at.p.clone(),
        connection_source: source,
        objects: out,
    })
}
