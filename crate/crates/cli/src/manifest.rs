//! Manifest schema, defaults and validation.

use std::collections::BTreeSet;

use cartan_core::kahler::DeformationParams;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::registry::{self, BuiltStructure};

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("manifest parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: impl Into<String>, message: impl Into<String>) -> ManifestError {
    ManifestError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub structures: Vec<StructureSpec>,
    pub params: Vec<ParamsSpec>,
    pub sampling: Sampling,
    #[serde(default)]
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSpec {
    pub label: String,
    pub family: String,
    pub dim: usize,
    #[serde(default)]
    pub parameters: Value,
    /// `[lo, hi]` per base coordinate.
    pub chart_box: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    #[serde(default)]
    pub label: Option<String>,
    pub alpha: f64,
    pub beta: f64,
    /// Integrable law `v = -cαβ²`.
    #[serde(default)]
    pub c: Option<f64>,
    /// General law `v(τ)` as an expression in `tau`.
    #[serde(default)]
    pub v: Option<String>,
    /// Structure labels this set applies to; all structures when absent.
    #[serde(default)]
    pub structures: Option<Vec<String>>,
}

impl ParamsSpec {
    pub fn label(&self, index: usize) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| format!("params{index}"))
    }

    pub fn applies_to(&self, structure: &str) -> bool {
        self.structures
            .as_ref()
            .is_none_or(|list| list.iter().any(|s| s == structure))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    pub seed: u64,
    #[serde(default = "default_points")]
    pub point_count: usize,
    #[serde(default = "default_p_range")]
    pub p_norm_range: [f64; 2],
}

fn default_points() -> usize {
    100
}

fn default_p_range() -> [f64; 2] {
    [0.5, 2.0]
}

/// Tolerances per check category.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Jet-exact structural identities of the base geometry.
    pub identities: f64,
    /// `J² = -I` and `G(JX, JY) = G(X, Y)`.
    pub kahler: f64,
    /// `θ` against the canonical matrix.
    pub theta: f64,
    /// Nijenhuis frame evaluations under the integrable law.
    pub nijenhuis: f64,
    /// Lower bound on the largest Nijenhuis evaluation after perturbing `v`.
    pub nijenhuis_perturbed: f64,
    /// Closed-form connection against the Koszul oracle, torsion and `∇G`.
    pub connection: f64,
    /// Relative agreement of curvature blocks with the definition.
    pub curvature: f64,
    /// `λ̂ - cnβ` and the Einstein defect on Riemannian duals.
    pub einstein: f64,
    /// Lower bound on the Einstein defect of non-Riemannian structures.
    pub einstein_obstruction_defect: f64,
    /// `p_k Ric(∂̇^j, ∂̇^k) - cnβ p_k G^jk` against `I^j`.
    pub obstruction: f64,
    /// Divergence of vertical fields, of `C*`, and `ΔK²`.
    pub divergence: f64,
    /// `div S` against a finite-difference derivative of `ln √g`.
    pub spray: f64,
    /// `G(grad f, X) = X f`.
    pub duality: f64,
    /// Direct against closed-form Laplacian.
    pub laplacian: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            identities: 1e-7,
            kahler: 1e-10,
            theta: 1e-12,
            nijenhuis: 1e-5,
            nijenhuis_perturbed: 1e-2,
            connection: 1e-4,
            curvature: 1e-3,
            einstein: 1e-3,
            einstein_obstruction_defect: 1e-2,
            obstruction: 1e-3,
            divergence: 1e-6,
            spray: 1e-5,
            duality: 1e-8,
            laplacian: 1e-4,
        }
    }
}

impl Tolerances {
    fn entries(&self) -> [(&'static str, f64); 14] {
        [
            ("identities", self.identities),
            ("kahler", self.kahler),
            ("theta", self.theta),
            ("nijenhuis", self.nijenhuis),
            ("nijenhuis_perturbed", self.nijenhuis_perturbed),
            ("connection", self.connection),
            ("curvature", self.curvature),
            ("einstein", self.einstein),
            (
                "einstein_obstruction_defect",
                self.einstein_obstruction_defect,
            ),
            ("obstruction", self.obstruction),
            ("divergence", self.divergence),
            ("spray", self.spray),
            ("duality", self.duality),
            ("laplacian", self.laplacian),
        ]
    }

    /// Scales the upper-bound tolerances; lower bounds are left alone.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            identities: self.identities * k,
            kahler: self.kahler * k,
            theta: self.theta * k,
            nijenhuis: self.nijenhuis * k,
            nijenhuis_perturbed: self.nijenhuis_perturbed,
            connection: self.connection * k,
            curvature: self.curvature * k,
            einstein: self.einstein * k,
            einstein_obstruction_defect: self.einstein_obstruction_defect,
            obstruction: self.obstruction * k,
            divergence: self.divergence * k,
            spray: self.spray * k,
            duality: self.duality * k,
            laplacian: self.laplacian * k,
        }
    }
}

/// Fraction of the tube `2τ < 1/(cβ²)` that sampling may reach.
pub const TUBE_MARGIN: f64 = 0.8;

/// A validated manifest with its structures and deformation parameters built.
#[derive(Debug)]
pub struct Resolved {
    pub manifest: Manifest,
    pub structures: Vec<BuiltStructure>,
    pub params: Vec<DeformationParams>,
}

impl Resolved {
    /// `(structure index, params index)` pairs, in manifest order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (si, s) in self.structures.iter().enumerate() {
            for (pi, spec) in self.manifest.params.iter().enumerate() {
                if spec.applies_to(&s.spec.label) {
                    out.push((si, pi));
                }
            }
        }
        out
    }

    pub fn structure(&self, label: &str) -> Option<usize> {
        self.structures.iter().position(|s| s.spec.label == label)
    }

    pub fn params_index(&self, label: &str) -> Option<usize> {
        self.params.iter().position(|p| p.label == label)
    }
}

pub fn parse_manifest(text: &str) -> Result<Manifest, ManifestError> {
    serde_json::from_str(text).map_err(|e| ManifestError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn validate(manifest: Manifest) -> Result<Resolved, ManifestError> {
    if manifest.structures.is_empty() {
        return Err(invalid("structures", "at least one structure is required"));
    }
    if manifest.params.is_empty() {
        return Err(invalid("params", "at least one parameter set is required"));
    }
    let s = &manifest.sampling;
    if s.point_count == 0 {
        return Err(invalid("sampling.point_count", "must be positive"));
    }
    let [lo, hi] = s.p_norm_range;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(invalid(
            "sampling.p_norm_range",
            format!("need 0 < lo ≤ hi, got [{lo}, {hi}]"),
        ));
    }
    for (name, tol) in manifest.tolerances.entries() {
        if !(tol >= f64::EPSILON) || !tol.is_finite() {
            return Err(invalid(
                format!("tolerances.{name}"),
                format!("{tol} is below machine epsilon"),
            ));
        }
    }

    let mut seen = BTreeSet::new();
    let mut structures = Vec::new();
    for (i, spec) in manifest.structures.iter().enumerate() {
        let key = format!("structures[{i}]");
        if !seen.insert(spec.label.clone()) {
            return Err(invalid(
                format!("{key}.label"),
                format!("duplicate structure label '{}'", spec.label),
            ));
        }
        if spec.dim < 2 {
            return Err(invalid(
                format!("{key}.dim"),
                "dimension must be at least 2",
            ));
        }
        if spec.chart_box.len() != spec.dim {
            return Err(invalid(
                format!("{key}.chart_box"),
                format!(
                    "expected {} intervals, got {}",
                    spec.dim,
                    spec.chart_box.len()
                ),
            ));
        }
        if spec
            .chart_box
            .iter()
            .any(|[a, b]| !(a <= b) || !a.is_finite() || !b.is_finite())
        {
            return Err(invalid(
                format!("{key}.chart_box"),
                "each interval needs finite lo ≤ hi",
            ));
        }
        let built = registry::build_structure(spec).map_err(|m| invalid(key.clone(), m))?;
        structures.push(built);
    }

    let mut seen = BTreeSet::new();
    let mut params = Vec::new();
    for (i, spec) in manifest.params.iter().enumerate() {
        let key = format!("params[{i}]");
        let label = spec.label(i);
        if !seen.insert(label.clone()) {
            return Err(invalid(
                format!("{key}.label"),
                format!("duplicate params label '{label}'"),
            ));
        }
        if let Some(list) = &spec.structures {
            if let Some(bad) = list
                .iter()
                .find(|l| !structures.iter().any(|s| &s.spec.label == *l))
            {
                return Err(invalid(
                    format!("{key}.structures"),
                    format!("unknown structure '{bad}'"),
                ));
            }
        }
        let built = registry::build_params(&label, spec).map_err(|m| invalid(key.clone(), m))?;
        params.push(built);
    }

    let resolved = Resolved {
        manifest,
        structures,
        params,
    };
    for (si, pi) in resolved.pairs() {
        check_tube(&resolved, si, pi)?;
    }
    Ok(resolved)
}

/// For `c > 0` the sampling region must stay inside `2τ ≤ margin/(cβ²)`; the
/// largest `τ` is bounded by the top eigenvalue of `g^ij` at the box corners
/// and centre times the largest momentum norm.
fn check_tube(r: &Resolved, si: usize, pi: usize) -> Result<(), ManifestError> {
    let params = &r.params[pi];
    let Some(c) = params.c() else { return Ok(()) };
    if c <= 0.0 {
        return Ok(());
    }
    let s = &r.structures[si];
    let p_max = r.manifest.sampling.p_norm_range[1];
    let bound = TUBE_MARGIN / (c * params.beta * params.beta);
    let tau_max = crate::sampling::probe_points(&s.spec)
        .into_iter()
        .filter_map(|at| cartan_core::cartan::fundamental(s.structure.as_ref(), &at).ok())
        .map(|f| {
            let m = cartan_core::jets::SquareMatrix::from_fn(f.g_up.len(), |i, j| f.g_up[i][j]);
            let top = m.symmetric_eigenvalues().into_iter().fold(0.0, f64::max);
            0.5 * top * p_max * p_max
        })
        .fold(0.0, f64::max);
    if 2.0 * tau_max > bound {
        return Err(invalid(
            format!("params[{pi}]"),
            format!(
                "sampling for structure '{}' leaves the tube 2τ < 1/(cβ²): max 2τ ≈ {:.4} exceeds {TUBE_MARGIN}/(cβ²) = {:.4} (c = {c}, β = {})",
                s.spec.label,
                2.0 * tau_max,
                bound,
                params.beta
            ),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat() -> &'static str {
        r#"{
            "structures": [{"label": "e2", "family": "flat", "dim": 2, "chart_box": [[-1, 1], [-1, 1]]}],
            "params": [{"alpha": 1.0, "beta": 1.0, "c": 0.0}],
            "sampling": {"seed": 1}
        }"#
    }

    #[test]
    fn minimal_manifest_gets_defaults() {
        let m = parse_manifest(flat()).unwrap();
        assert_eq!(m.sampling.point_count, 100);
        assert_eq!(m.sampling.p_norm_range, [0.5, 2.0]);
        let r = validate(m).unwrap();
        assert_eq!(r.structures.len(), 1);
        assert_eq!(r.params[0].label, "params0");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = flat().replace("\"seed\": 1", "\"seed\": 1, \"sed\": 2");
        let err = parse_manifest(&text).unwrap_err();
        assert!(matches!(err, ManifestError::Parse { line: 4, .. }), "{err}");
    }

    #[test]
    fn seed_is_required() {
        let text = flat().replace("{\"seed\": 1}", "{}");
        assert!(parse_manifest(&text)
            .unwrap_err()
            .to_string()
            .contains("seed"));
    }

    #[test]
    fn duplicate_labels_are_rejected() {
        let text = flat().replace(
            "\"structures\": [",
            "\"structures\": [{\"label\": \"e2\", \"family\": \"flat\", \"dim\": 2, \"chart_box\": [[0, 1], [0, 1]]},",
        );
        let err = validate(parse_manifest(&text).unwrap()).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn tube_violation_is_reported() {
        let text = r#"{
            "structures": [{"label": "s2", "family": "riemannian_conformal", "dim": 2,
                            "parameters": {"c": 1.0}, "chart_box": [[-0.5, 0.5], [-0.5, 0.5]]}],
            "params": [{"alpha": 1.0, "beta": 2.0, "c": 1.0}],
            "sampling": {"seed": 1}
        }"#;
        let err = validate(parse_manifest(text).unwrap()).unwrap_err();
        assert!(err.to_string().contains("2τ < 1/(cβ²)"), "{err}");
    }

    #[test]
    fn exactly_one_law() {
        let both = flat().replace("\"c\": 0.0", "\"c\": 0.0, \"v\": \"tau\"");
        assert!(validate(parse_manifest(&both).unwrap()).is_err());
        let none = flat().replace(", \"c\": 0.0", "");
        assert!(validate(parse_manifest(&none).unwrap()).is_err());
    }
}
