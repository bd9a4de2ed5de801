//! Cartan structures `K(x, p)` and their zero-order tensors: the fundamental
//! tensor `g^ij`, its inverse `g_ij`, `p^i`, `τ = K²/2` and the Cartan tensor.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{EngineError, Result};
use crate::expr::Expression;
use crate::jets::{coordinate_jets, invert_jets, ChartPoint, Jet, ScalarField, SquareMatrix};
use crate::tensor::{DTensor, Slot};

use Slot::{Down, Up};

/// A Hamiltonian on the slit cotangent bundle of a single chart.
pub trait CartanStructure: Send + Sync + fmt::Debug {
    fn label(&self) -> &str;
    fn family(&self) -> &'static str;
    fn dim(&self) -> usize;

    /// `K²` evaluated on coordinate jets `(x^1..x^n, p_1..p_n)`.
    fn k2(&self, vars: &[Jet]) -> Result<Jet>;

    /// Rejects points outside the smooth, regular domain of `K`.
    fn check_admissible(&self, at: &ChartPoint) -> Result<()> {
        if at.dim() != self.dim() {
            return Err(EngineError::Domain(format!(
                "point has dimension {}, structure '{}' has {}",
                at.dim(),
                self.label(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// The constant `c` with `R_kij = c(g_jk p_i - g_ik p_j)`, when known.
    fn constant_curvature(&self) -> Option<f64> {
        None
    }

    fn is_riemannian(&self) -> bool {
        false
    }

    /// True when the Landsberg tensor is known to vanish identically.
    fn known_landsberg(&self) -> bool {
        self.is_riemannian()
    }
}

/// Adapter exposing `K²` as a [`ScalarField`].
pub struct K2Field<'a>(pub &'a dyn CartanStructure);

impl ScalarField for K2Field<'_> {
    fn eval(&self, vars: &[Jet]) -> Result<Jet> {
        self.0.k2(vars)
    }
}

/// A Riemannian metric `a_ij(x)` on the base chart.
pub trait MetricField: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    /// `a_ij` row-major, as jets of the base coordinates.
    fn a_down(&self, x: &[Jet]) -> Result<Vec<Jet>>;
    /// `a^ij`; the default inverts `a_down` with jets.
    fn a_up(&self, x: &[Jet]) -> Result<Vec<Jet>> {
        invert_jets(&self.a_down(x)?, self.dim())
    }
    fn is_constant(&self) -> bool {
        false
    }
    /// Sectional curvature, if the metric is known to have constant curvature.
    fn sectional_curvature(&self) -> Option<f64> {
        None
    }
}

/// A vector field `b^i(x)` on the base chart.
pub trait VectorField: Send + Sync + fmt::Debug {
    fn b_up(&self, x: &[Jet]) -> Result<Vec<Jet>>;
    fn is_constant(&self) -> bool {
        false
    }
}

fn constant_jet(like: &Jet, v: f64) -> Jet {
    Jet::constant(like.space(), v).truncate(like.order())
}

#[derive(Debug, Clone)]
pub struct ConstantMetric {
    pub a: SquareMatrix,
    a_inv: SquareMatrix,
}

impl ConstantMetric {
    pub fn new(a: SquareMatrix) -> Result<Self> {
        let a_inv = crate::jets::invert(&a)?;
        if a.symmetric_eigenvalues()[0] <= 0.0 {
            return Err(EngineError::Definition(
                "base metric is not positive definite".into(),
            ));
        }
        Ok(Self { a, a_inv })
    }

    pub fn euclidean(n: usize) -> Self {
        Self {
            a: SquareMatrix::identity(n),
            a_inv: SquareMatrix::identity(n),
        }
    }
}

impl MetricField for ConstantMetric {
    fn dim(&self) -> usize {
        self.a.dim()
    }
    fn a_down(&self, x: &[Jet]) -> Result<Vec<Jet>> {
        Ok(self
            .a
            .entries()
            .iter()
            .map(|&v| constant_jet(&x[0], v))
            .collect())
    }
    fn a_up(&self, x: &[Jet]) -> Result<Vec<Jet>> {
        Ok(self
            .a_inv
            .entries()
            .iter()
            .map(|&v| constant_jet(&x[0], v))
            .collect())
    }
    fn is_constant(&self) -> bool {
        true
    }
    fn sectional_curvature(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// `a_ij = δ_ij / (1 + c|x|²/4)²`, the conformal model of constant curvature `c`.
#[derive(Debug, Clone)]
pub struct ConformalMetric {
    pub n: usize,
    pub c: f64,
}

impl ConformalMetric {
    fn factor(&self, x: &[Jet]) -> Result<Jet> {
        let mut r2 = &x[0] * &x[0];
        for xi in &x[1..self.n] {
            r2 = &r2 + &(xi * xi);
        }
        let f = r2.scale(self.c / 4.0).add_scalar(1.0);
        if f.value() <= 0.0 {
            return Err(EngineError::Domain(format!(
                "conformal factor 1 + c|x|²/4 = {} is not positive",
                f.value()
            )));
        }
        Ok(f.powi(2))
    }
}

impl MetricField for ConformalMetric {
    fn dim(&self) -> usize {
        self.n
    }
    fn a_down(&self, x: &[Jet]) -> Result<Vec<Jet>> {
        let inv = self.factor(x)?.recip()?;
        Ok((0..self.n * self.n)
            .map(|k| {
                if k / self.n == k % self.n {
                    inv.clone()
                } else {
                    inv.scale(0.0)
                }
            })
            .collect())
    }
    fn a_up(&self, x: &[Jet]) -> Result<Vec<Jet>> {
        let f = self.factor(x)?;
        Ok((0..self.n * self.n)
            .map(|k| {
                if k / self.n == k % self.n {
                    f.clone()
                } else {
                    f.scale(0.0)
                }
            })
            .collect())
    }
    fn is_constant(&self) -> bool {
        self.c == 0.0
    }
    fn sectional_curvature(&self) -> Option<f64> {
        Some(self.c)
    }
}

#[derive(Debug, Clone)]
pub struct ConstantVector(pub Vec<f64>);

impl VectorField for ConstantVector {
    fn b_up(&self, x: &[Jet]) -> Result<Vec<Jet>> {
        Ok(self.0.iter().map(|&v| constant_jet(&x[0], v)).collect())
    }
    fn is_constant(&self) -> bool {
        true
    }
}

fn quadratic_form(a_up: &[Jet], p: &[Jet]) -> Jet {
    let n = p.len();
    let mut acc: Option<Jet> = None;
    for i in 0..n {
        for j in 0..n {
            let t = &(&a_up[i * n + j] * &p[i]) * &p[j];
            acc = Some(match acc {
                None => t,
                Some(a) => &a + &t,
            });
        }
    }
    acc.expect("n >= 1")
}

/// `K² = a^ij(x) p_i p_j`.
#[derive(Debug, Clone)]
pub struct RiemannianDual {
    label: String,
    family: &'static str,
    metric: Arc<dyn MetricField>,
}

impl CartanStructure for RiemannianDual {
    fn label(&self) -> &str {
        &self.label
    }
    fn family(&self) -> &'static str {
        self.family
    }
    fn dim(&self) -> usize {
        self.metric.dim()
    }
    fn k2(&self, vars: &[Jet]) -> Result<Jet> {
        let n = self.dim();
        let a_up = self.metric.a_up(&vars[..n])?;
        Ok(quadratic_form(&a_up, &vars[n..]))
    }
    fn check_admissible(&self, at: &ChartPoint) -> Result<()> {
        if at.dim() != self.dim() {
            return Err(EngineError::Domain(format!(
                "point has dimension {}, structure has {}",
                at.dim(),
                self.dim()
            )));
        }
        self.metric
            .a_up(&coordinate_jets(at, 0)[..self.dim()])
            .map(|_| ())
    }
    fn constant_curvature(&self) -> Option<f64> {
        self.metric.sectional_curvature()
    }
    fn is_riemannian(&self) -> bool {
        true
    }
}

/// The dual of a base Riemannian metric `a`.
pub fn riemannian_dual(label: &str, metric: Arc<dyn MetricField>) -> RiemannianDual {
    RiemannianDual {
        label: label.to_string(),
        family: "riemannian",
        metric,
    }
}

pub fn flat(label: &str, n: usize) -> RiemannianDual {
    RiemannianDual {
        label: label.to_string(),
        family: "flat",
        metric: Arc::new(ConstantMetric::euclidean(n)),
    }
}

pub fn conformal(label: &str, n: usize, c: f64) -> RiemannianDual {
    RiemannianDual {
        label: label.to_string(),
        family: "riemannian_conformal",
        metric: Arc::new(ConformalMetric { n, c }),
    }
}

/// `K = √(a^ij p_i p_j) + b^i p_i`.
#[derive(Debug, Clone)]
pub struct RandersDual {
    label: String,
    metric: Arc<dyn MetricField>,
    drift: Arc<dyn VectorField>,
}

impl RandersDual {
    /// `‖b‖_a` at the base point of `at`.
    pub fn drift_norm(&self, at: &ChartPoint) -> Result<f64> {
        let n = self.dim();
        let x = &coordinate_jets(at, 0)[..n];
        let a = self.metric.a_down(x)?;
        let b = self.drift.b_up(x)?;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += a[i * n + j].value() * b[i].value() * b[j].value();
            }
        }
        Ok(s.sqrt())
    }
}

impl CartanStructure for RandersDual {
    fn label(&self) -> &str {
        &self.label
    }
    fn family(&self) -> &'static str {
        "randers"
    }
    fn dim(&self) -> usize {
        self.metric.dim()
    }
    fn k2(&self, vars: &[Jet]) -> Result<Jet> {
        let n = self.dim();
        let x = &vars[..n];
        let p = &vars[n..];
        let alpha = quadratic_form(&self.metric.a_up(x)?, p).sqrt()?;
        let b = self.drift.b_up(x)?;
        let mut beta = &b[0] * &p[0];
        for i in 1..n {
            beta = &beta + &(&b[i] * &p[i]);
        }
        let k = &alpha + &beta;
        Ok(&k * &k)
    }
    fn check_admissible(&self, at: &ChartPoint) -> Result<()> {
        if at.dim() != self.dim() {
            return Err(EngineError::Domain(format!(
                "point has dimension {}, structure has {}",
                at.dim(),
                self.dim()
            )));
        }
        let norm = self.drift_norm(at)?;
        if norm >= 1.0 {
            return Err(EngineError::Regularity(format!(
                "drift norm ‖b‖_a = {norm} ≥ 1"
            )));
        }
        Ok(())
    }
    fn constant_curvature(&self) -> Option<f64> {
        (self.metric.is_constant() && self.drift.is_constant()).then_some(0.0)
    }
    fn known_landsberg(&self) -> bool {
        self.metric.is_constant() && self.drift.is_constant()
    }
}

/// Randers-type structure built from a base metric and a drift field; the
/// drift must satisfy `‖b‖_a < 1` at `probe`.
pub fn randers_dual(
    label: &str,
    metric: Arc<dyn MetricField>,
    drift: Arc<dyn VectorField>,
    probe: &ChartPoint,
) -> Result<RandersDual> {
    let s = RandersDual {
        label: label.to_string(),
        metric,
        drift,
    };
    let norm = s.drift_norm(probe)?;
    if norm >= 1.0 {
        return Err(EngineError::Regularity(format!(
            "drift norm ‖b‖_a = {norm} ≥ 1"
        )));
    }
    Ok(s)
}

/// `K²` given as an expression over `x1..xn, p1..pn`.
#[derive(Debug, Clone)]
pub struct ExpressionStructure {
    label: String,
    n: usize,
    k2: Expression,
}

impl ExpressionStructure {
    pub fn new(label: &str, n: usize, k2_source: &str) -> Result<Self> {
        Ok(Self {
            label: label.to_string(),
            n,
            k2: Expression::parse_chart(k2_source, n)?,
        })
    }
}

impl CartanStructure for ExpressionStructure {
    fn label(&self) -> &str {
        &self.label
    }
    fn family(&self) -> &'static str {
        "expression"
    }
    fn dim(&self) -> usize {
        self.n
    }
    fn k2(&self, vars: &[Jet]) -> Result<Jet> {
        self.k2.eval_jet(vars)
    }
    fn check_admissible(&self, at: &ChartPoint) -> Result<()> {
        if at.dim() != self.n {
            return Err(EngineError::Domain(format!(
                "point has dimension {}, structure has {}",
                at.dim(),
                self.n
            )));
        }
        let v = self.k2.eval_f64(&at.coords())?;
        if v <= 0.0 {
            return Err(EngineError::Regularity(format!("K² = {v} is not positive")));
        }
        Ok(())
    }
}

/// Jets of the zero-order objects at a point.
#[derive(Debug, Clone)]
pub struct FundamentalJets {
    pub n: usize,
    pub at: ChartPoint,
    /// Coordinate jets `(x, p)`.
    pub vars: Vec<Jet>,
    pub k2: Jet,
    pub tau: Jet,
    /// `p^i = ½ ∂̇^i K²`
    pub p_up: Vec<Jet>,
    pub g_up: DTensor<Jet>,
    pub g_down: DTensor<Jet>,
    /// `C^ijk`
    pub c_up: DTensor<Jet>,
}

impl FundamentalJets {
    /// Expands `K²` to `order` (at least 3) and derives `g`, `p^i`, `C`.
    pub fn new(s: &dyn CartanStructure, at: &ChartPoint, order: usize) -> Result<Self> {
        let order = order.max(3);
        s.check_admissible(at)?;
        let n = s.dim();
        let vars = coordinate_jets(at, order);
        let k2 = s.k2(&vars)?;
        if !k2.is_finite() {
            return Err(EngineError::Domain("K² jet is not finite".into()));
        }
        if k2.value() <= 0.0 {
            return Err(EngineError::Regularity(format!(
                "K² = {} is not positive",
                k2.value()
            )));
        }
        let dk: Vec<Jet> = (0..n).map(|i| k2.d(n + i)).collect();
        let p_up: Vec<Jet> = dk.iter().map(|j| j.scale(0.5)).collect();
        let g_up =
            DTensor::from_fn(n, &[Up, Up], |ix| dk[ix[0]].d(n + ix[1]).scale(0.5)).with_degree(0);
        let gv = SquareMatrix::from_fn(n, |i, j| g_up.get(&[i, j]).value());
        let ev = gv.symmetric_eigenvalues();
        if ev[0] <= 0.0 {
            return Err(EngineError::Regularity(format!(
                "g^ij is not positive definite: eigenvalue {:e}",
                ev[0]
            )));
        }
        let g_inv = invert_jets(g_up.data(), n)?;
        let g_down = DTensor::from_fn(n, &[Down, Down], |ix| g_inv[ix[0] * n + ix[1]].clone())
            .with_degree(0);
        let c_up = DTensor::from_fn(n, &[Up, Up, Up], |ix| {
            g_up.get(&[ix[0], ix[1]]).d(n + ix[2]).scale(-0.5)
        })
        .with_degree(-1);
        Ok(Self {
            n,
            at: at.clone(),
            tau: k2.scale(0.5),
            vars,
            k2,
            p_up,
            g_up,
            g_down,
            c_up,
        })
    }

    /// `p_i` as a jet.
    pub fn p(&self, i: usize) -> &Jet {
        &self.vars[self.n + i]
    }

    /// `∂̇^i` of a jet.
    pub fn dv(&self, f: &Jet, i: usize) -> Jet {
        f.d(self.n + i)
    }

    /// `∂_i` of a jet.
    pub fn dx(&self, f: &Jet, i: usize) -> Jet {
        f.d(i)
    }

    /// Lowers slot `slot` of `t` (which must be `Up`) with `g_ij`.
    pub fn lower(&self, t: &DTensor<Jet>, slot: usize) -> DTensor<Jet> {
        contract_metric(t, slot, &self.g_down, Down)
    }

    /// Raises slot `slot` of `t` (which must be `Down`) with `g^ij`.
    pub fn raise(&self, t: &DTensor<Jet>, slot: usize) -> DTensor<Jet> {
        contract_metric(t, slot, &self.g_up, Up)
    }
}

fn contract_metric(t: &DTensor<Jet>, slot: usize, metric: &DTensor<Jet>, to: Slot) -> DTensor<Jet> {
    let n = t.dim();
    let mut slots = t.slots().to_vec();
    assert_ne!(slots[slot], to, "slot already has the requested valence");
    slots[slot] = to;
    let mut out = DTensor::from_fn(n, &slots, |ix| {
        let mut src = ix.to_vec();
        let mut acc: Option<Jet> = None;
        for s in 0..n {
            src[slot] = s;
            let term = metric.get(&[ix[slot], s]) * t.get(&src);
            acc = Some(match acc {
                None => term,
                Some(a) => &a + &term,
            });
        }
        acc.expect("n >= 1")
    });
    out.degree = t.degree;
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct FundamentalTensors {
    pub at: ChartPoint,
    pub g_up: Vec<Vec<f64>>,
    pub g_down: Vec<Vec<f64>>,
    pub p_up: Vec<f64>,
    pub tau: f64,
}

#[derive(Debug, Clone)]
pub struct CartanTensor {
    /// `C^ijk`
    pub c_upupup: DTensor<f64>,
    /// `C^r_jk = g_jl g_sk C^rls`
    pub c_mixed: DTensor<f64>,
    /// `C_ijk`
    pub c_down: DTensor<f64>,
    /// `I^j = C^jh_h`
    pub i_up: Vec<f64>,
}

fn rows(t: &DTensor<f64>) -> Vec<Vec<f64>> {
    let n = t.dim();
    (0..n)
        .map(|i| (0..n).map(|j| *t.get(&[i, j])).collect())
        .collect()
}

pub fn fundamental(s: &dyn CartanStructure, at: &ChartPoint) -> Result<FundamentalTensors> {
    let f = FundamentalJets::new(s, at, 3)?;
    Ok(FundamentalTensors {
        at: at.clone(),
        g_up: rows(&f.g_up.values()),
        g_down: rows(&f.g_down.values()),
        p_up: f.p_up.iter().map(Jet::value).collect(),
        tau: f.tau.value(),
    })
}

impl FundamentalJets {
    pub fn cartan_tensor(&self) -> CartanTensor {
        let c_mixed = self.lower(&self.lower(&self.c_up, 1), 2);
        let c_down = self.lower(&c_mixed, 0);
        let n = self.n;
        let c_mixed_up2 = self.lower(&self.c_up, 2);
        let i_up = (0..n)
            .map(|j| (0..n).map(|h| c_mixed_up2.get(&[j, h, h]).value()).sum())
            .collect();
        CartanTensor {
            c_upupup: self.c_up.values(),
            c_mixed: c_mixed.values(),
            c_down: c_down.values(),
            i_up,
        }
    }
}

pub fn cartan_tensor(s: &dyn CartanStructure, at: &ChartPoint) -> Result<CartanTensor> {
    Ok(FundamentalJets::new(s, at, 3)?.cartan_tensor())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: &[f64], p: &[f64]) -> ChartPoint {
        ChartPoint::new(x.to_vec(), p.to_vec()).unwrap()
    }

    fn randers(b: [f64; 2]) -> RandersDual {
        randers_dual(
            "r",
            Arc::new(ConstantMetric::euclidean(2)),
            Arc::new(ConstantVector(b.to_vec())),
            &pt(&[0.0, 0.0], &[1.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn flat_fundamental_is_identity() {
        let f = fundamental(&flat("f", 2), &pt(&[0.3, 0.1], &[0.6, -0.8])).unwrap();
        assert_eq!(f.g_up, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(f.p_up, vec![0.6, -0.8]);
        assert!((f.tau - 0.5).abs() < 1e-15);
    }

    #[test]
    fn conformal_g_up_is_factor_times_identity() {
        let s = conformal("s", 2, 1.0);
        let f = fundamental(&s, &pt(&[1.0, 0.0], &[1.0, 0.4])).unwrap();
        assert!((f.g_up[0][0] - 1.5625).abs() < 1e-14);
        assert!(f.g_up[0][1].abs() < 1e-15);
        assert!((f.g_down[1][1] - 0.64).abs() < 1e-14);
        let c = cartan_tensor(&s, &pt(&[1.0, 0.0], &[1.0, 0.4])).unwrap();
        assert!(c.c_upupup.max_abs() < 1e-14);
        assert!(c.i_up.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn negative_curvature_chart_boundary() {
        let s = conformal("h", 2, -1.0);
        assert!(s.check_admissible(&pt(&[1.0, 1.0], &[1.0, 0.0])).is_ok());
        assert!(s.check_admissible(&pt(&[1.5, 1.5], &[1.0, 0.0])).is_err());
    }

    #[test]
    fn randers_is_non_riemannian() {
        let s = randers([0.3, 0.0]);
        let at = pt(&[0.2, -0.1], &[1.0, 0.2]);
        let f = FundamentalJets::new(&s, &at, 3).unwrap();
        let k2 = f.k2.value();
        let gpp: f64 = (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| f.g_up.get(&[i, j]).value() * at.p[i] * at.p[j])
            .sum();
        assert!((gpp - k2).abs() < 1e-9 * k2);
        let c = f.cartan_tensor();
        assert!(c.c_upupup.max_abs() > 1e-3);
        assert!(c.i_up.iter().any(|v| v.abs() > 1e-3));
        for i in 0..2 {
            for j in 0..2 {
                let cp: f64 = (0..2).map(|k| c.c_upupup.get(&[i, j, k]) * at.p[k]).sum();
                assert!(cp.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn randers_with_zero_drift_is_riemannian_dual() {
        let at = pt(&[0.4, 0.3], &[0.7, -1.2]);
        let a = fundamental(&randers([0.0, 0.0]), &at).unwrap();
        let b = fundamental(&flat("f", 2), &at).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((a.g_up[i][j] - b.g_up[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn randers_rejects_strong_drift() {
        let err = randers_dual(
            "r",
            Arc::new(ConstantMetric::euclidean(2)),
            Arc::new(ConstantVector(vec![1.0, 0.1])),
            &pt(&[0.0, 0.0], &[1.0, 0.0]),
        )
        .unwrap_err();
        assert!(matches!(err, EngineError::Regularity(_)));
    }

    #[test]
    fn vertical_derivative_of_lowered_metric_is_twice_mixed_cartan() {
        let s = randers([0.25, -0.1]);
        let at = pt(&[0.1, 0.2], &[0.9, 0.5]);
        let f = FundamentalJets::new(&s, &at, 4).unwrap();
        let c = f.cartan_tensor();
        for r in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let d = f.dv(f.g_down.get(&[j, k]), r).value();
                    assert!((d - 2.0 * c.c_mixed.get(&[r, j, k])).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn expression_structure_matches_flat() {
        let e = ExpressionStructure::new("e", 2, "p1^2 + p2^2").unwrap();
        let at = pt(&[0.5, 0.5], &[0.3, 0.4]);
        let a = fundamental(&e, &at).unwrap();
        assert_eq!(a.g_up, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn indefinite_hessian_is_regularity_error() {
        let e = ExpressionStructure::new("e", 2, "p1^2 - 0.5*p2^2").unwrap();
        let err = fundamental(&e, &pt(&[0.0, 0.0], &[1.0, 0.1])).unwrap_err();
        assert!(matches!(err, EngineError::Regularity(_)));
    }
}
