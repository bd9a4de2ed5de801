//! Name → builder tables for structure families and deformation laws.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use cartan_core::cartan::{
    conformal, flat, randers_dual, CartanStructure, ConstantMetric, ConstantVector,
    ExpressionStructure,
};
use cartan_core::jets::SquareMatrix;
use cartan_core::kahler::{ConstantCurvatureLaw, DeformationParams, ExpressionLaw};
use cartan_core::ChartPoint;
use serde::Deserialize;
use serde_json::Value;

use crate::manifest::{ParamsSpec, StructureSpec};

/// Builds a structure of one family from its manifest parameters.
pub trait FamilyBuilder: Send + Sync {
    fn build(&self, spec: &StructureSpec) -> Result<Arc<dyn CartanStructure>, String>;
}

#[derive(Debug, Clone)]
pub struct BuiltStructure {
    pub spec: StructureSpec,
    pub structure: Arc<dyn CartanStructure>,
}

fn params_of<T: for<'de> Deserialize<'de>>(spec: &StructureSpec) -> Result<T, String> {
    let v = if spec.parameters.is_null() {
        Value::Object(Default::default())
    } else {
        spec.parameters.clone()
    };
    serde_json::from_value(v).map_err(|e| format!("parameters: {e}"))
}

struct Flat;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

impl FamilyBuilder for Flat {
    fn build(&self, spec: &StructureSpec) -> Result<Arc<dyn CartanStructure>, String> {
        let _: NoParams = params_of(spec)?;
        Ok(Arc::new(flat(&spec.label, spec.dim)))
    }
}

struct Conformal;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConformalParams {
    c: f64,
}

impl FamilyBuilder for Conformal {
    fn build(&self, spec: &StructureSpec) -> Result<Arc<dyn CartanStructure>, String> {
        let p: ConformalParams = params_of(spec)?;
        if p.c < 0.0 {
            let r2: f64 = spec
                .chart_box
                .iter()
                .map(|[a, b]| a.abs().max(b.abs()).powi(2))
                .sum();
            if r2 * p.c.abs() >= 4.0 {
                return Err(format!(
                    "chart_box leaves the model ball |x|² < 4/|c| = {}",
                    4.0 / p.c.abs()
                ));
            }
        }
        Ok(Arc::new(conformal(&spec.label, spec.dim, p.c)))
    }
}

struct Randers;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RandersParams {
    #[serde(default)]
    metric: Option<Vec<Vec<f64>>>,
    drift: Vec<f64>,
}

impl FamilyBuilder for Randers {
    fn build(&self, spec: &StructureSpec) -> Result<Arc<dyn CartanStructure>, String> {
        let p: RandersParams = params_of(spec)?;
        let n = spec.dim;
        if p.drift.len() != n {
            return Err(format!("drift needs {n} components"));
        }
        let metric = match p.metric {
            None => ConstantMetric::euclidean(n),
            Some(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(format!("metric must be {n}×{n}"));
                }
                ConstantMetric::new(SquareMatrix::from_fn(n, |i, j| rows[i][j]))
                    .map_err(|e| e.to_string())?
            }
        };
        let mut p_probe = vec![0.0; n];
        p_probe[0] = 1.0;
        let probe = ChartPoint::new(crate::sampling::box_center(spec), p_probe)
            .map_err(|e| e.to_string())?;
        let s = randers_dual(
            &spec.label,
            Arc::new(metric),
            Arc::new(ConstantVector(p.drift)),
            &probe,
        )
        .map_err(|e| e.to_string())?;
        Ok(Arc::new(s))
    }
}

struct Expr;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExprParams {
    k2: String,
}

impl FamilyBuilder for Expr {
    fn build(&self, spec: &StructureSpec) -> Result<Arc<dyn CartanStructure>, String> {
        let p: ExprParams = params_of(spec)?;
        Ok(Arc::new(
            ExpressionStructure::new(&spec.label, spec.dim, &p.k2).map_err(|e| e.to_string())?,
        ))
    }
}

pub fn families() -> &'static BTreeMap<&'static str, Box<dyn FamilyBuilder>> {
    static REG: OnceLock<BTreeMap<&'static str, Box<dyn FamilyBuilder>>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut m: BTreeMap<&'static str, Box<dyn FamilyBuilder>> = BTreeMap::new();
        m.insert("flat", Box::new(Flat));
        m.insert("riemannian_conformal", Box::new(Conformal));
        m.insert("randers", Box::new(Randers));
        m.insert("expression", Box::new(Expr));
        m
    })
}

pub fn build_structure(spec: &StructureSpec) -> Result<BuiltStructure, String> {
    let builder = families().get(spec.family.as_str()).ok_or_else(|| {
        let known: Vec<&str> = families().keys().copied().collect();
        format!(
            "unknown family '{}' (known: {})",
            spec.family,
            known.join(", ")
        )
    })?;
    Ok(BuiltStructure {
        spec: spec.clone(),
        structure: builder.build(spec)?,
    })
}

pub fn build_params(label: &str, spec: &ParamsSpec) -> Result<DeformationParams, String> {
    let law: Arc<dyn cartan_core::kahler::Deformation> = match (spec.c, &spec.v) {
        (Some(c), None) => Arc::new(ConstantCurvatureLaw { c }),
        (None, Some(src)) => Arc::new(ExpressionLaw::parse(src).map_err(|e| e.to_string())?),
        _ => return Err("exactly one of 'c' or 'v' is required".into()),
    };
    DeformationParams::new(label, spec.alpha, spec.beta, law).map_err(|e| e.to_string())
}
