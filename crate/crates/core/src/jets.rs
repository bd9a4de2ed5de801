//! Truncated multivariate Taylor expansions ("jets") over the chart variables
//! `(x^1..x^n, p_1..p_n)`, a central-difference oracle, and small dense
//! linear algebra.
//!
//! A [`Jet`] stores Taylor coefficients `f_α = ∂^α f / α!` for every
//! multi-index `|α| ≤ order`, laid out in graded order so that a jet of lower
//! order is a prefix of one of higher order. Differentiation lowers the order
//! by one; products truncate to the smaller order of the two operands.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{EngineError, Result};

/// Highest total derivative order the engine supports.
pub const MAX_ORDER: usize = 8;

/// Condition number above which [`invert`] refuses to proceed.
pub const CONDITION_BOUND: f64 = 1e12;

/// A point `(x, p)` of the slit cotangent bundle in a single chart.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChartPoint {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

impl ChartPoint {
    pub fn new(x: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if x.len() != p.len() {
            return Err(EngineError::Domain(format!(
                "base has {} coordinates but momentum has {}",
                x.len(),
                p.len()
            )));
        }
        if x.len() < 2 {
            return Err(EngineError::Domain("dimension must be at least 2".into()));
        }
        if x.iter().chain(p.iter()).any(|v| !v.is_finite()) {
            return Err(EngineError::Domain("non-finite coordinate".into()));
        }
        if p.iter().all(|&v| v == 0.0) {
            return Err(EngineError::Domain("p = 0 lies on the zero section".into()));
        }
        Ok(Self { x, p })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Coordinate `v` of the combined list `(x^1..x^n, p_1..p_n)`.
    pub fn coord(&self, v: usize) -> f64 {
        let n = self.dim();
        if v < n {
            self.x[v]
        } else {
            self.p[v - n]
        }
    }

    pub fn coords(&self) -> Vec<f64> {
        self.x.iter().chain(self.p.iter()).copied().collect()
    }

    pub fn from_coords(coords: &[f64]) -> Result<Self> {
        let n = coords.len() / 2;
        Self::new(coords[..n].to_vec(), coords[n..].to_vec())
    }

    /// The point displaced by `t * dir` in the combined coordinates.
    pub fn displaced(&self, dir: &[f64], t: f64) -> Result<Self> {
        let c: Vec<f64> = self
            .coords()
            .iter()
            .zip(dir)
            .map(|(a, d)| a + t * d)
            .collect();
        Self::from_coords(&c)
    }

    pub fn scaled_momentum(&self, lambda: f64) -> Result<Self> {
        Self::new(self.x.clone(), self.p.iter().map(|v| v * lambda).collect())
    }

    pub fn p_norm(&self) -> f64 {
        self.p.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Monomial tables shared by every jet with the same variable count and
/// maximal order.
pub struct JetSpace {
    nvars: usize,
    order: usize,
    exps: Vec<Vec<u8>>,
    /// `len_at[d]` = number of monomials of degree `≤ d`.
    len_at: Vec<usize>,
    lookup: HashMap<Vec<u8>, usize>,
    /// Product table `(a, b, a+b)`, sorted by the degree of `a+b`.
    mul: Vec<(u32, u32, u32)>,
    mul_end: Vec<usize>,
    /// Per variable: `(src, dst, exponent)` with `dst = src - e_v`, sorted by `src`.
    deriv: Vec<Vec<(u32, u32, f64)>>,
    /// `α!` per monomial.
    factorial: Vec<f64>,
}

impl fmt::Debug for JetSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JetSpace")
            .field("nvars", &self.nvars)
            .field("order", &self.order)
            .field("monomials", &self.exps.len())
            .finish()
    }
}

fn graded_monomials(nvars: usize, order: usize) -> Vec<Vec<u8>> {
    fn rec(nvars: usize, remaining: usize, prefix: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if prefix.len() == nvars - 1 {
            prefix.push(remaining as u8);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e as u8);
            rec(nvars, remaining - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for d in 0..=order {
        rec(nvars, d, &mut Vec::with_capacity(nvars), &mut out);
    }
    out
}

impl JetSpace {
    fn build(nvars: usize, order: usize) -> Self {
        assert!(nvars >= 1);
        let exps = graded_monomials(nvars, order);
        let degree: Vec<usize> = exps
            .iter()
            .map(|e| e.iter().map(|&v| v as usize).sum())
            .collect();
        let mut len_at = vec![0; order + 1];
        for d in 0..=order {
            len_at[d] = degree.iter().filter(|&&g| g <= d).count();
        }
        let lookup: HashMap<Vec<u8>, usize> = exps
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();

        let mut mul = Vec::new();
        for a in 0..exps.len() {
            for b in 0..exps.len() {
                if degree[a] + degree[b] > order {
                    continue;
                }
                let sum: Vec<u8> = exps[a].iter().zip(&exps[b]).map(|(x, y)| x + y).collect();
                mul.push((a as u32, b as u32, lookup[&sum] as u32));
            }
        }
        mul.sort_by_key(|&(_, _, c)| (degree[c as usize], c));
        let mut mul_end = vec![0; order + 1];
        for d in 0..=order {
            mul_end[d] = mul
                .iter()
                .take_while(|&&(_, _, c)| degree[c as usize] <= d)
                .count();
        }

        let mut deriv = vec![Vec::new(); nvars];
        for (v, table) in deriv.iter_mut().enumerate() {
            for (src, e) in exps.iter().enumerate() {
                if e[v] == 0 {
                    continue;
                }
                let mut d = e.clone();
                d[v] -= 1;
                table.push((src as u32, lookup[&d] as u32, e[v] as f64));
            }
        }

        let factorial = exps
            .iter()
            .map(|e| {
                e.iter()
                    .map(|&k| (1..=k as u64).product::<u64>() as f64)
                    .product()
            })
            .collect();

        Self {
            nvars,
            order,
            exps,
            len_at,
            lookup,
            mul,
            mul_end,
            deriv,
            factorial,
        }
    }

    /// Shared space for `nvars` variables truncated at `order`.
    pub fn get(nvars: usize, order: usize) -> Arc<JetSpace> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<JetSpace>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("jet space cache poisoned");
        guard
            .entry((nvars, order))
            .or_insert_with(|| Arc::new(JetSpace::build(nvars, order)))
            .clone()
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of monomials of total degree `≤ d`.
    pub fn len_at(&self, d: usize) -> usize {
        self.len_at[d]
    }

    pub fn monomial(&self, index: usize) -> &[u8] {
        &self.exps[index]
    }

    pub fn index_of(&self, exps: &[u8]) -> Option<usize> {
        self.lookup.get(exps).copied()
    }
}

/// Truncated Taylor expansion of a scalar function at a chart point.
#[derive(Clone)]
pub struct Jet {
    space: Arc<JetSpace>,
    order: usize,
    coeffs: Vec<f64>,
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jet")
            .field("order", &self.order)
            .field("value", &self.value())
            .finish()
    }
}

impl Jet {
    pub fn constant(space: &Arc<JetSpace>, value: f64) -> Self {
        let order = space.order;
        let mut coeffs = vec![0.0; space.len_at(order)];
        coeffs[0] = value;
        Self {
            space: space.clone(),
            order,
            coeffs,
        }
    }

    /// The coordinate function `var`, expanded around `value`.
    pub fn variable(space: &Arc<JetSpace>, var: usize, value: f64) -> Self {
        let mut jet = Self::constant(space, value);
        if space.order >= 1 {
            let mut e = vec![0u8; space.nvars];
            e[var] = 1;
            jet.coeffs[space.index_of(&e).expect("linear monomial")] = 1.0;
        }
        jet
    }

    /// Builds a jet from Taylor coefficients in graded order.
    pub fn from_coeffs(space: &Arc<JetSpace>, order: usize, coeffs: Vec<f64>) -> Self {
        assert!(order <= space.order);
        assert_eq!(coeffs.len(), space.len_at(order));
        Self {
            space: space.clone(),
            order,
            coeffs,
        }
    }

    pub fn space(&self) -> &Arc<JetSpace> {
        &self.space
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// The mixed partial derivative `∂^α f` at the expansion point.
    pub fn partial(&self, exps: &[u8]) -> Option<f64> {
        let i = self.space.index_of(exps)?;
        (i < self.coeffs.len()).then(|| self.coeffs[i] * self.space.factorial[i])
    }

    /// Partial derivative along a list of variable indices (repetition allowed).
    pub fn partial_along(&self, dirs: &[usize]) -> Option<f64> {
        let mut e = vec![0u8; self.space.nvars];
        for &d in dirs {
            e[d] += 1;
        }
        self.partial(&e)
    }

    pub fn truncate(&self, order: usize) -> Self {
        let order = order.min(self.order);
        Self {
            space: self.space.clone(),
            order,
            coeffs: self.coeffs[..self.space.len_at(order)].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// Partial derivative with respect to variable `var`; the result has one
    /// order less.
    pub fn d(&self, var: usize) -> Self {
        assert!(self.order >= 1, "cannot differentiate an order-0 jet");
        let order = self.order - 1;
        let len = self.space.len_at(self.order);
        let mut coeffs = vec![0.0; self.space.len_at(order)];
        for &(src, dst, f) in &self.space.deriv[var] {
            if src as usize >= len {
                break;
            }
            coeffs[dst as usize] += f * self.coeffs[src as usize];
        }
        Self {
            space: self.space.clone(),
            order,
            coeffs,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            space: self.space.clone(),
            order: self.order,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn add_scalar(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.coeffs[0] += s;
        out
    }

    fn zip(&self, other: &Jet, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(Arc::ptr_eq(&self.space, &other.space));
        let order = self.order.min(other.order);
        let len = self.space.len_at(order);
        let coeffs = (0..len)
            .map(|i| f(self.coeffs[i], other.coeffs[i]))
            .collect();
        Self {
            space: self.space.clone(),
            order,
            coeffs,
        }
    }

    pub fn mul_jet(&self, other: &Jet) -> Self {
        debug_assert!(Arc::ptr_eq(&self.space, &other.space));
        let order = self.order.min(other.order);
        let mut coeffs = vec![0.0; self.space.len_at(order)];
        for &(a, b, c) in &self.space.mul[..self.space.mul_end[order]] {
            coeffs[c as usize] += self.coeffs[a as usize] * other.coeffs[b as usize];
        }
        Self {
            space: self.space.clone(),
            order,
            coeffs,
        }
    }

    /// `Σ_k series[k] (self - self(0))^k`: composition with a univariate
    /// function whose scaled Taylor coefficients at `self(0)` are `series`.
    fn compose(&self, series: &[f64]) -> Self {
        let mut h = self.clone();
        h.coeffs[0] = 0.0;
        let mut out = Jet::constant(&self.space, series[0]).truncate(self.order);
        let mut power = h.clone();
        for (k, &s) in series.iter().enumerate().skip(1) {
            if k > self.order {
                break;
            }
            if s != 0.0 {
                out = &out + &power.scale(s);
            }
            if k < self.order {
                power = power.mul_jet(&h);
            }
        }
        out
    }

    pub fn recip(&self) -> Result<Self> {
        let u = self.value();
        if u == 0.0 || !u.is_finite() {
            return Err(EngineError::Domain(format!("reciprocal of {u}")));
        }
        let series: Vec<f64> = (0..=self.order)
            .map(|k| (-1f64).powi(k as i32) / u.powi(k as i32 + 1))
            .collect();
        Ok(self.compose(&series))
    }

    pub fn div_jet(&self, other: &Jet) -> Result<Self> {
        Ok(self.mul_jet(&other.recip()?))
    }

    pub fn powf(&self, a: f64) -> Result<Self> {
        let u = self.value();
        if u <= 0.0 {
            if u == 0.0 && a == 0.0 {
                return Ok(Jet::constant(&self.space, 1.0).truncate(self.order));
            }
            return Err(EngineError::Domain(format!(
                "pow({u}, {a}) outside the smooth domain"
            )));
        }
        let mut series = Vec::with_capacity(self.order + 1);
        let mut binom = 1.0;
        for k in 0..=self.order {
            if k > 0 {
                binom *= (a - (k as f64 - 1.0)) / k as f64;
            }
            series.push(binom * u.powf(a - k as f64));
        }
        Ok(self.compose(&series))
    }

    /// Integer power by repeated multiplication (valid for any sign of the base).
    pub fn powi(&self, k: u32) -> Self {
        let mut out = Jet::constant(&self.space, 1.0).truncate(self.order);
        for _ in 0..k {
            out = out.mul_jet(self);
        }
        out
    }

    pub fn sqrt(&self) -> Result<Self> {
        self.powf(0.5)
    }

    pub fn exp(&self) -> Self {
        let e = self.value().exp();
        let mut series = Vec::with_capacity(self.order + 1);
        let mut fact = 1.0;
        for k in 0..=self.order {
            if k > 0 {
                fact *= k as f64;
            }
            series.push(e / fact);
        }
        self.compose(&series)
    }

    pub fn ln(&self) -> Result<Self> {
        let u = self.value();
        if u <= 0.0 {
            return Err(EngineError::Domain(format!("log of {u}")));
        }
        let mut series = vec![u.ln()];
        for k in 1..=self.order {
            series.push((-1f64).powi(k as i32 + 1) / (k as f64 * u.powi(k as i32)));
        }
        Ok(self.compose(&series))
    }

    pub fn sin(&self) -> Self {
        let (s, c) = self.value().sin_cos();
        self.compose(&trig_series(s, c, self.order))
    }

    pub fn cos(&self) -> Self {
        let (s, c) = self.value().sin_cos();
        // cos(u0 + h) = cos u0 cos h - sin u0 sin h
        self.compose(&trig_series(c, -s, self.order))
    }
}

/// Scaled Taylor coefficients of `a cos h + b sin h`.
fn trig_series(a: f64, b: f64, order: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(order + 1);
    let mut fact = 1.0;
    for k in 0..=order {
        if k > 0 {
            fact *= k as f64;
        }
        let v = match k % 4 {
            0 => a,
            1 => b,
            2 => -a,
            _ => -b,
        };
        out.push(v / fact);
    }
    out
}

impl<'a> Add<&'a Jet> for &'a Jet {
    type Output = Jet;
    fn add(self, rhs: &'a Jet) -> Jet {
        self.zip(rhs, |a, b| a + b)
    }
}

impl<'a> Sub<&'a Jet> for &'a Jet {
    type Output = Jet;
    fn sub(self, rhs: &'a Jet) -> Jet {
        self.zip(rhs, |a, b| a - b)
    }
}

impl<'a> Mul<&'a Jet> for &'a Jet {
    type Output = Jet;
    fn mul(self, rhs: &'a Jet) -> Jet {
        self.mul_jet(rhs)
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        &self + &rhs
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        &self - &rhs
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        self.mul_jet(&rhs)
    }
}

impl Mul<f64> for &Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.scale(rhs)
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.scale(rhs)
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

/// Sum of jets, truncated to the lowest order among them.
pub fn sum_jets<'a>(terms: impl IntoIterator<Item = &'a Jet>) -> Option<Jet> {
    let mut it = terms.into_iter();
    let first = it.next()?.clone();
    Some(it.fold(first, |acc, t| &acc + t))
}

/// A smooth scalar field on the chart, evaluated on jets of the coordinates
/// `(x^1..x^n, p_1..p_n)`.
pub trait ScalarField: Send + Sync {
    fn eval(&self, vars: &[Jet]) -> Result<Jet>;
}

impl<F> ScalarField for F
where
    F: Fn(&[Jet]) -> Result<Jet> + Send + Sync,
{
    fn eval(&self, vars: &[Jet]) -> Result<Jet> {
        self(vars)
    }
}

/// Coordinate jets `(x^1..x^n, p_1..p_n)` at `at`.
pub fn coordinate_jets(at: &ChartPoint, order: usize) -> Vec<Jet> {
    let space = JetSpace::get(2 * at.dim(), order);
    (0..2 * at.dim())
        .map(|v| Jet::variable(&space, v, at.coord(v)))
        .collect()
}

/// All mixed partials of `f` at `at` through total order `order`.
pub fn jet_eval(f: &dyn ScalarField, at: &ChartPoint, order: usize) -> Result<Jet> {
    if order > MAX_ORDER {
        return Err(EngineError::InsufficientOrder {
            needed: order,
            available: MAX_ORDER,
        });
    }
    let jet = f.eval(&coordinate_jets(at, order))?;
    if !jet.is_finite() {
        return Err(EngineError::Domain("non-finite jet coefficient".into()));
    }
    Ok(jet)
}

/// Scalar value of `f` at `at`.
pub fn field_value(f: &dyn ScalarField, at: &ChartPoint) -> Result<f64> {
    jet_eval(f, at, 0).map(|j| j.value())
}

/// Default step pair for the central-difference oracle.
pub const FD_STEPS: [f64; 2] = [1e-3, 5e-4];

/// Richardson-extrapolated finite-difference estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdEstimate {
    pub value: f64,
    pub error: f64,
}

/// Iterated central differences along `dirs` (variable indices into the
/// combined coordinates), extrapolated across the two relative step sizes.
pub fn fd_derivative<F>(
    f: F,
    at: &ChartPoint,
    dirs: &[usize],
    steps: [f64; 2],
) -> Result<FdEstimate>
where
    F: Fn(&ChartPoint) -> Result<f64>,
{
    let coords = at.coords();
    let nested = |base: f64| -> Result<f64> {
        let hs: Vec<f64> = dirs
            .iter()
            .map(|&d| base * coords[d].abs().max(1.0))
            .collect();
        for (&d, &h) in dirs.iter().zip(&hs) {
            if h == 0.0 || coords[d] + h == coords[d] {
                return Err(EngineError::StepUnderflow { var: d });
            }
        }
        let m = dirs.len();
        let mut acc = 0.0;
        for mask in 0..(1usize << m) {
            let mut c = coords.clone();
            let mut sign = 1.0;
            for (bit, (&d, &h)) in dirs.iter().zip(&hs).enumerate() {
                if mask & (1 << bit) != 0 {
                    c[d] -= h;
                    sign = -sign;
                } else {
                    c[d] += h;
                }
            }
            acc += sign * f(&ChartPoint::from_coords(&c)?)?;
        }
        let denom: f64 = hs.iter().map(|h| 2.0 * h).product();
        Ok(acc / denom)
    };
    let coarse = nested(steps[0])?;
    let fine = nested(steps[1])?;
    let r2 = (steps[0] / steps[1]).powi(2);
    Ok(FdEstimate {
        value: (r2 * fine - coarse) / (r2 - 1.0),
        error: (fine - coarse).abs() / (r2 - 1.0),
    })
}

/// Central-difference derivative of a vector-valued function along an
/// arbitrary direction in the combined coordinates, Richardson-extrapolated.
pub fn fd_directional<F>(f: F, at: &ChartPoint, dir: &[f64], steps: [f64; 2]) -> Result<Vec<f64>>
where
    F: Fn(&ChartPoint) -> Result<Vec<f64>>,
{
    let central = |h: f64| -> Result<Vec<f64>> {
        let plus = f(&at.displaced(dir, h)?)?;
        let minus = f(&at.displaced(dir, -h)?)?;
        Ok(plus
            .iter()
            .zip(&minus)
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect())
    };
    let coarse = central(steps[0])?;
    let fine = central(steps[1])?;
    let r2 = (steps[0] / steps[1]).powi(2);
    Ok(fine
        .iter()
        .zip(&coarse)
        .map(|(f, c)| (r2 * f - c) / (r2 - 1.0))
        .collect())
}

/// Dense square matrix in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl SquareMatrix {
    pub fn new(dim: usize, entries: Vec<f64>) -> Self {
        assert_eq!(entries.len(), dim * dim);
        Self { dim, entries }
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let entries = (0..dim * dim).map(|k| f(k / dim, k % dim)).collect();
        Self { dim, entries }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_fn(dim, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn mul(&self, other: &SquareMatrix) -> SquareMatrix {
        let n = self.dim;
        SquareMatrix::from_fn(n, |i, j| {
            (0..n).map(|k| self.get(i, k) * other.get(k, j)).sum()
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.entries)
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn symmetric_eigenvalues(&self) -> Vec<f64> {
        let m = self.to_nalgebra();
        let sym = (&m + m.transpose()) * 0.5;
        let mut ev: Vec<f64> = SymmetricEigen::new(sym)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    /// Largest relative asymmetry `|m_ij - m_ji| / max|m|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let n = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs() / scale);
            }
        }
        worst
    }
}

/// Inverse of a symmetric matrix with a conditioning guard.
pub fn invert(m: &SquareMatrix) -> Result<SquareMatrix> {
    if m.asymmetry() > 1e-10 {
        return Err(EngineError::Valence(format!(
            "matrix is not symmetric (relative asymmetry {:e})",
            m.asymmetry()
        )));
    }
    let ev = m.symmetric_eigenvalues();
    let (pivot, largest) = ev.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
        let a = v.abs();
        (if a < lo.abs() { v } else { lo }, hi.max(a))
    });
    let condition = if pivot == 0.0 {
        f64::INFINITY
    } else {
        largest / pivot.abs()
    };
    if !(condition <= CONDITION_BOUND) {
        return Err(EngineError::Conditioning { pivot, condition });
    }
    let inv = m
        .to_nalgebra()
        .try_inverse()
        .ok_or(EngineError::Conditioning { pivot, condition })?;
    let n = m.dim;
    let out = SquareMatrix::from_fn(n, |i, j| inv[(i, j)]);
    let residual = m
        .mul(&out)
        .entries
        .iter()
        .enumerate()
        .fold(0.0f64, |acc, (k, v)| {
            let target = if k / n == k % n { 1.0 } else { 0.0 };
            acc.max((v - target).abs())
        });
    if residual > 1e-10 * condition.max(1.0) {
        return Err(EngineError::Conditioning { pivot, condition });
    }
    Ok(out)
}

/// Inverse of a square matrix of jets, exact through the jets' order.
///
/// Writes `M = M0 + H` with `H` free of constant terms, so the Neumann series
/// `Σ (-M0⁻¹ H)^k M0⁻¹` terminates after `order` terms.
pub fn invert_jets(m: &[Jet], dim: usize) -> Result<Vec<Jet>> {
    assert_eq!(m.len(), dim * dim);
    let space = m[0].space().clone();
    let order = m.iter().map(Jet::order).min().unwrap_or(0);
    let m0 = SquareMatrix::from_fn(dim, |i, j| m[i * dim + j].value());
    let inv0 = invert(&m0)?;
    let inv0_jets: Vec<Jet> = inv0
        .entries()
        .iter()
        .map(|&v| Jet::constant(&space, v).truncate(order))
        .collect();
    let mut h: Vec<Jet> = m.iter().map(|j| j.truncate(order)).collect();
    for j in h.iter_mut() {
        *j = j.add_scalar(-j.value());
    }
    let matmul = |a: &[Jet], b: &[Jet]| -> Vec<Jet> {
        let mut out = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                let mut acc = &a[i * dim] * &b[j];
                for k in 1..dim {
                    acc = &acc + &(&a[i * dim + k] * &b[k * dim + j]);
                }
                out.push(acc);
            }
        }
        out
    };
    // step = -M0⁻¹ H
    let step: Vec<Jet> = matmul(&inv0_jets, &h).iter().map(|j| -j).collect();
    let mut term = inv0_jets.clone();
    let mut total = inv0_jets;
    for _ in 0..order {
        term = matmul(&step, &term);
        total = total.iter().zip(&term).map(|(a, b)| a + b).collect();
    }
    Ok(total)
}

/// Determinant of a small square matrix of jets by cofactor expansion.
pub fn det_jets(m: &[Jet], dim: usize) -> Jet {
    match dim {
        1 => m[0].clone(),
        2 => &(&m[0] * &m[3]) - &(&m[1] * &m[2]),
        _ => {
            let mut acc: Option<Jet> = None;
            for col in 0..dim {
                let minor: Vec<Jet> = (1..dim)
                    .flat_map(|i| {
                        (0..dim)
                            .filter(move |&j| j != col)
                            .map(move |j| m[i * dim + j].clone())
                    })
                    .collect();
                let term = &m[col] * &det_jets(&minor, dim - 1);
                let term = if col % 2 == 0 { term } else { -term };
                acc = Some(match acc {
                    None => term,
                    Some(a) => &a + &term,
                });
            }
            acc.expect("dim >= 1")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: &[f64], p: &[f64]) -> ChartPoint {
        ChartPoint::new(x.to_vec(), p.to_vec()).unwrap()
    }

    #[test]
    fn monomial_counts_are_binomial() {
        let s = JetSpace::get(4, 5);
        assert_eq!(s.len_at(5), 126);
        assert_eq!(s.len_at(0), 1);
        assert_eq!(s.len_at(1), 5);
        let s = JetSpace::get(6, 5);
        assert_eq!(s.len_at(5), 462);
    }

    #[test]
    fn momentum_square_second_derivative() {
        let f = |v: &[Jet]| Ok(&v[2] * &v[2]);
        let at = pt(&[0.3, -0.2], &[0.7, 1.1]);
        let j = jet_eval(&f, &at, 2).unwrap();
        assert_eq!(j.partial_along(&[2, 2]), Some(2.0));
        assert_eq!(j.partial_along(&[0]), Some(0.0));
        assert_eq!(j.partial_along(&[0, 1]), Some(0.0));
        assert!((j.partial_along(&[2]).unwrap() - 1.4).abs() < 1e-15);
    }

    #[test]
    fn flat_hamiltonian_hessian_is_twice_identity() {
        let f = |v: &[Jet]| Ok(&(&v[2] * &v[2]) + &(&v[3] * &v[3]));
        let j = jet_eval(&f, &pt(&[1.0, 2.0], &[0.3, 0.4]), 2).unwrap();
        for a in 2..4 {
            for b in 2..4 {
                let expect = if a == b { 2.0 } else { 0.0 };
                assert_eq!(j.partial_along(&[a, b]), Some(expect));
            }
        }
    }

    #[test]
    fn fd_simple_cases() {
        let f = |c: &ChartPoint| Ok(c.x[0] * c.p[0]);
        let at = pt(&[0.4, 0.1], &[1.3, -0.2]);
        let e = fd_derivative(f, &at, &[0, 2], FD_STEPS).unwrap();
        assert!((e.value - 1.0).abs() < 1e-8);
        let k2 = |c: &ChartPoint| Ok(c.p[0] * c.p[0] + c.p[1] * c.p[1]);
        let e = fd_derivative(k2, &at, &[2, 2], FD_STEPS).unwrap();
        assert!((e.value - 2.0).abs() < 1e-6);
    }

    #[test]
    fn fd_reports_domain_error_across_zero_section() {
        let f = |c: &ChartPoint| Ok(c.p[0]);
        let at = pt(&[0.0, 0.0], &[5e-4, 0.0]);
        let err = fd_derivative(f, &at, &[2], FD_STEPS).unwrap_err();
        assert!(matches!(err, EngineError::Domain(_)));
    }

    #[test]
    fn fd_rejects_zero_step() {
        let f = |c: &ChartPoint| Ok(c.p[0]);
        let at = pt(&[0.0, 0.0], &[1.0, 0.0]);
        let err = fd_derivative(f, &at, &[2], [0.0, 0.0]).unwrap_err();
        assert!(matches!(err, EngineError::StepUnderflow { .. }));
    }

    #[test]
    fn conformal_mixed_partial_matches_fd() {
        // (1 + |x|²/4)² Σ p_i², ∂_{x¹} ∂̇¹ at x = (1, 0), p = (1, 0)
        let field = |v: &[Jet]| {
            let r2 = &(&v[0] * &v[0]) + &(&v[1] * &v[1]);
            let conf = r2.scale(0.25).add_scalar(1.0).powi(2);
            Ok(&conf * &(&(&v[2] * &v[2]) + &(&v[3] * &v[3])))
        };
        let at = pt(&[1.0, 0.0], &[1.0, 0.0]);
        let jet = jet_eval(&field, &at, 2)
            .unwrap()
            .partial_along(&[0, 2])
            .unwrap();
        let fd = fd_derivative(|c| field_value(&field, c), &at, &[0, 2], FD_STEPS).unwrap();
        assert!((jet - fd.value).abs() <= 1e-6 * jet.abs());
        // closed form: 2·(1 + x²/4)·(x/2)·2p = 2.5
        assert!((jet - 2.5).abs() < 1e-14);
    }

    #[test]
    fn smooth_primitives_match_closed_derivatives() {
        let at = pt(&[0.7, 0.0], &[1.0, 0.0]);
        let space = JetSpace::get(4, 4);
        let u = Jet::variable(&space, 0, at.x[0]);
        let x: f64 = 0.7;
        let e = u.exp();
        let l = u.ln().unwrap();
        let s = u.sqrt().unwrap();
        let r = u.recip().unwrap();
        let sn = u.sin();
        let cs = u.cos();
        for k in 0..=4u8 {
            let ek = [k, 0, 0, 0];
            assert!((e.partial(&ek).unwrap() - x.exp()).abs() < 1e-13);
            let dsin = [x.sin(), x.cos(), -x.sin(), -x.cos()][k as usize % 4];
            let dcos = [x.cos(), -x.sin(), -x.cos(), x.sin()][k as usize % 4];
            assert!((sn.partial(&ek).unwrap() - dsin).abs() < 1e-13);
            assert!((cs.partial(&ek).unwrap() - dcos).abs() < 1e-13);
        }
        // d^3/dx^3 ln x = 2/x^3 ; d^2 sqrt = -1/4 x^{-3/2} ; d^2 (1/x) = 2/x^3
        assert!((l.partial(&[3, 0, 0, 0]).unwrap() - 2.0 / x.powi(3)).abs() < 1e-12);
        assert!((s.partial(&[2, 0, 0, 0]).unwrap() + 0.25 * x.powf(-1.5)).abs() < 1e-12);
        assert!((r.partial(&[2, 0, 0, 0]).unwrap() - 2.0 / x.powi(3)).abs() < 1e-12);
        assert!(Jet::constant(&space, -1.0).ln().is_err());
    }

    #[test]
    fn invert_identity_and_diagonal() {
        let id = SquareMatrix::identity(3);
        assert_eq!(invert(&id).unwrap(), id);
        let beta = 2.5;
        let d = SquareMatrix::from_fn(2, |i, j| if i == j { 1.0 / beta } else { 0.0 });
        let inv = invert(&d).unwrap();
        assert!((inv.get(0, 0) - beta).abs() < 1e-14);
        assert!((inv.get(1, 1) - beta).abs() < 1e-14);
        assert_eq!(inv.get(0, 1), 0.0);
    }

    #[test]
    fn invert_rejects_singular() {
        let m = SquareMatrix::new(2, vec![1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(invert(&m), Err(EngineError::Conditioning { .. })));
        let m = SquareMatrix::new(2, vec![1.0, 0.0, 0.0, 1e-14]);
        assert!(matches!(invert(&m), Err(EngineError::Conditioning { .. })));
    }

    #[test]
    fn jet_inverse_matches_pointwise_inverse_derivatives() {
        // M(t) = [[2 + t, t²], [t², 1 + 3t]] in one variable, compare d/dt M⁻¹ with FD.
        let space = JetSpace::get(2, 4);
        let t = Jet::variable(&space, 0, 0.3);
        let m = vec![
            t.add_scalar(2.0),
            t.powi(2),
            t.powi(2),
            t.scale(3.0).add_scalar(1.0),
        ];
        let inv = invert_jets(&m, 2).unwrap();
        let direct = |tv: f64| {
            let a = [2.0 + tv, tv * tv, tv * tv, 1.0 + 3.0 * tv];
            let det = a[0] * a[3] - a[1] * a[2];
            [a[3] / det, -a[1] / det, -a[2] / det, a[0] / det]
        };
        let h = 1e-4;
        for k in 0..4 {
            let fd = (direct(0.3 + h)[k] - direct(0.3 - h)[k]) / (2.0 * h);
            assert!((inv[k].partial(&[1, 0]).unwrap() - fd).abs() < 1e-7);
            assert!((inv[k].value() - direct(0.3)[k]).abs() < 1e-14);
        }
    }
}
