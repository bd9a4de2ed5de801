//! Nonlinear connection, adapted frame, Berwald connection, Landsberg tensor
//! and the curvature d-tensors of the base geometry.

use crate::cartan::{CartanStructure, FundamentalJets};
use crate::error::{EngineError, Result};
use crate::jets::{sum_jets, ChartPoint, Jet, ScalarField};
use crate::tensor::{DTensor, Slot};

use Slot::{Down, Up};

/// Order of the `K²` expansion needed for every object in this module.
pub const FULL_ORDER: usize = 5;

fn jsum(terms: Vec<Jet>) -> Jet {
    sum_jets(terms.iter()).expect("non-empty sum")
}

/// Jets of every base-geometry object at one point.
///
/// With `K²` expanded to order `k`: `g`, `g^{-1}` have order `k-2`; `C`, `γ`,
/// `N` order `k-3`; `B`, `L`, `R_kij` order `k-4`.
#[derive(Debug, Clone)]
pub struct BaseGeometry {
    pub f: FundamentalJets,
    /// `γ^i_jk`
    pub gamma: DTensor<Jet>,
    /// `γ°_jk = γ^i_jk p_i`
    pub gamma0: DTensor<Jet>,
    /// `γ°_j° = γ^i_jk p_i p^k`
    pub gamma00: Vec<Jet>,
    /// `N_ij`
    pub n_conn: DTensor<Jet>,
    /// `B^i_jk = ∂̇^i N_jk`
    pub b: DTensor<Jet>,
    /// `C^ij_k`
    pub c_mixed: DTensor<Jet>,
    /// `L^ij_k = C^ij_{k|h} p^h`
    pub l_mixed: DTensor<Jet>,
    /// `R_kij = δ_i N_jk - δ_j N_ik`
    pub r: DTensor<Jet>,
}

impl BaseGeometry {
    pub fn new(s: &dyn CartanStructure, at: &ChartPoint, order: usize) -> Result<Self> {
        if order < 4 {
            return Err(EngineError::InsufficientOrder {
                needed: 4,
                available: order,
            });
        }
        let f = FundamentalJets::new(s, at, order)?;
        let n = f.n;
        let dg = DTensor::from_fn(n, &[Down, Down, Down], |ix| {
            f.dx(f.g_down.get(&[ix[0], ix[1]]), ix[2])
        });
        // γ^i_jk = ½ g^is (∂_k g_js + ∂_j g_sk - ∂_s g_jk)
        let gamma = DTensor::from_fn(n, &[Up, Down, Down], |ix| {
            let (i, j, k) = (ix[0], ix[1], ix[2]);
            jsum(
                (0..n)
                    .map(|s| {
                        let bracket =
                            &(dg.get(&[j, s, k]) + dg.get(&[s, k, j])) - dg.get(&[j, k, s]);
                        f.g_up.get(&[i, s]) * &bracket
                    })
                    .collect(),
            )
            .scale(0.5)
        });
        let gamma0 = DTensor::from_fn(n, &[Down, Down], |ix| {
            jsum(
                (0..n)
                    .map(|i| gamma.get(&[i, ix[0], ix[1]]) * f.p(i))
                    .collect(),
            )
        });
        let gamma00: Vec<Jet> = (0..n)
            .map(|j| jsum((0..n).map(|k| gamma0.get(&[j, k]) * &f.p_up[k]).collect()))
            .collect();
        // N_ij = γ°_ij - ½ γ°_h° ∂̇^h g_ij
        let n_conn = DTensor::from_fn(n, &[Down, Down], |ix| {
            let corr = jsum(
                (0..n)
                    .map(|h| &gamma00[h] * &f.dv(f.g_down.get(&[ix[0], ix[1]]), h))
                    .collect(),
            );
            gamma0.get(ix) - &corr.scale(0.5)
        })
        .with_degree(1);
        let b = DTensor::from_fn(n, &[Up, Down, Down], |ix| {
            f.dv(n_conn.get(&[ix[1], ix[2]]), ix[0])
        })
        .with_degree(0);
        let c_mixed = f.lower(&f.c_up, 2);
        let mut geo = Self {
            gamma,
            gamma0,
            gamma00,
            n_conn: n_conn.clone(),
            b,
            c_mixed: c_mixed.clone(),
            l_mixed: c_mixed.clone(),
            r: c_mixed.clone(),
            f,
        };
        let c_cov = geo.h_cov(&c_mixed)?;
        geo.l_mixed = geo.contract_last_with_p_up(&c_cov).with_degree(0);
        geo.r = DTensor::from_fn(n, &[Down, Down, Down], |ix| {
            let (k, i, j) = (ix[0], ix[1], ix[2]);
            &geo.delta(n_conn.get(&[j, k]), i) - &geo.delta(n_conn.get(&[i, k]), j)
        })
        .with_degree(1);
        Ok(geo)
    }

    pub fn full(s: &dyn CartanStructure, at: &ChartPoint) -> Result<Self> {
        Self::new(s, at, FULL_ORDER)
    }

    pub fn n(&self) -> usize {
        self.f.n
    }

    pub fn at(&self) -> &ChartPoint {
        &self.f.at
    }

    /// `δ_k f = ∂_k f + N_kj ∂̇^j f`
    pub fn delta(&self, f: &Jet, k: usize) -> Jet {
        let n = self.n();
        let mut acc = self.f.dx(f, k);
        for j in 0..n {
            acc = &acc + &(self.n_conn.get(&[k, j]) * &self.f.dv(f, j));
        }
        acc
    }

    fn contract_last_with_p_up(&self, t: &DTensor<Jet>) -> DTensor<Jet> {
        let n = self.n();
        let r = t.rank();
        let slots = &t.slots()[..r - 1];
        DTensor::from_fn(n, slots, |ix| {
            let mut src = ix.to_vec();
            src.push(0);
            jsum(
                (0..n)
                    .map(|h| {
                        src[r - 1] = h;
                        t.get(&src) * &self.f.p_up[h]
                    })
                    .collect(),
            )
        })
    }

    /// Berwald h-covariant derivative; appends a `Down` slot `k`:
    /// `T_{|k} = δ_k T + Σ_up B^a_sk T^{..s..} - Σ_down B^s_bk T_{..s..}`.
    pub fn h_cov(&self, t: &DTensor<Jet>) -> Result<DTensor<Jet>> {
        let n = self.n();
        if t.dim() != n {
            return Err(EngineError::Valence(format!(
                "tensor dimension {} does not match structure dimension {n}",
                t.dim()
            )));
        }
        let r = t.rank();
        let mut slots = t.slots().to_vec();
        slots.push(Down);
        let out = DTensor::from_fn(n, &slots, |ix| {
            let k = ix[r];
            let base = &ix[..r];
            let mut terms = vec![self.delta(t.get(base), k)];
            let mut src = base.to_vec();
            for (pos, slot) in t.slots().iter().enumerate() {
                for s in 0..n {
                    src[pos] = s;
                    match slot {
                        Up => terms.push(self.b.get(&[base[pos], s, k]) * t.get(&src)),
                        Down => terms.push(-(self.b.get(&[s, base[pos], k]) * t.get(&src))),
                    }
                }
                src[pos] = base[pos];
            }
            jsum(terms)
        });
        Ok(out)
    }

    /// Berwald v-covariant derivative (`V = 0`): plain `∂̇^k`, appended as an `Up` slot.
    pub fn v_cov(&self, t: &DTensor<Jet>) -> Result<DTensor<Jet>> {
        let n = self.n();
        if t.dim() != n {
            return Err(EngineError::Valence(format!(
                "tensor dimension {} does not match structure dimension {n}",
                t.dim()
            )));
        }
        let r = t.rank();
        let mut slots = t.slots().to_vec();
        slots.push(Up);
        Ok(DTensor::from_fn(n, &slots, |ix| {
            self.f.dv(t.get(&ix[..r]), ix[r])
        }))
    }

    /// Cartan-type v-covariant derivative, appended as an `Up` slot `j`:
    /// `T|^j = ∂̇^j T + Σ_up C^{aj}_s T^{..s..} - Σ_down C^{sj}_b T_{..s..}`.
    pub fn cartan_v_cov(&self, t: &DTensor<Jet>) -> DTensor<Jet> {
        let n = self.n();
        let r = t.rank();
        let mut slots = t.slots().to_vec();
        slots.push(Up);
        DTensor::from_fn(n, &slots, |ix| {
            let j = ix[r];
            let base = &ix[..r];
            let mut terms = vec![self.f.dv(t.get(base), j)];
            let mut src = base.to_vec();
            for (pos, slot) in t.slots().iter().enumerate() {
                for s in 0..n {
                    src[pos] = s;
                    match slot {
                        Up => terms.push(self.c_mixed.get(&[base[pos], j, s]) * t.get(&src)),
                        Down => terms.push(-(self.c_mixed.get(&[s, j, base[pos]]) * t.get(&src))),
                    }
                }
                src[pos] = base[pos];
            }
            jsum(terms)
        })
    }

    /// `L^i_jk = g_js L^is_k`
    pub fn l_lower(&self) -> DTensor<Jet> {
        self.f.lower(&self.l_mixed, 1)
    }

    /// `L^ijk`
    pub fn l_up(&self) -> DTensor<Jet> {
        self.f.raise(&self.l_mixed, 2)
    }

    /// `J_i = L^s_is`
    pub fn j_down(&self) -> Vec<Jet> {
        let l = self.l_lower();
        (0..self.n())
            .map(|i| jsum((0..self.n()).map(|s| l.get(&[s, i, s]).clone()).collect()))
            .collect()
    }

    /// `J^s = g_ij L^ijs`
    pub fn j_up(&self) -> Vec<Jet> {
        let n = self.n();
        let l = self.l_up();
        (0..n)
            .map(|s| {
                jsum(
                    (0..n)
                        .flat_map(|i| (0..n).map(move |j| (i, j)))
                        .map(|(i, j)| self.f.g_down.get(&[i, j]) * l.get(&[i, j, s]))
                        .collect(),
                )
            })
            .collect()
    }

    /// `R^i_jkh = δ_h B^i_jk - δ_k B^i_jh + B^s_jk B^i_sh - B^s_jh B^i_sk`
    pub fn berwald_curvature(&self) -> DTensor<Jet> {
        let n = self.n();
        let b = &self.b;
        DTensor::from_fn(n, &[Up, Down, Down, Down], |ix| {
            let (i, j, k, h) = (ix[0], ix[1], ix[2], ix[3]);
            let mut terms = vec![
                self.delta(b.get(&[i, j, k]), h),
                -self.delta(b.get(&[i, j, h]), k),
            ];
            for s in 0..n {
                terms.push(b.get(&[s, j, k]) * b.get(&[i, s, h]));
                terms.push(-(b.get(&[s, j, h]) * b.get(&[i, s, k])));
            }
            jsum(terms)
        })
    }

    /// `P^{ih}_jk = ∂̇^h B^i_jk`
    pub fn p_curvature(&self) -> DTensor<Jet> {
        let n = self.n();
        DTensor::from_fn(n, &[Up, Up, Down, Down], |ix| {
            self.f.dv(self.b.get(&[ix[0], ix[2], ix[3]]), ix[1])
        })
    }

    /// Max over `i,j,k` of `|δ_i g_jk - B^s_ji g_sk - B^s_ki g_js|`.
    pub fn metric_delta_identity(&self) -> f64 {
        let n = self.n();
        let g = &self.f.g_down;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut v = self.delta(g.get(&[j, k]), i).value();
                    for s in 0..n {
                        v -= self.b.get(&[s, j, i]).value() * g.get(&[s, k]).value();
                        v -= self.b.get(&[s, k, i]).value() * g.get(&[j, s]).value();
                    }
                    worst = worst.max(v.abs());
                }
            }
        }
        worst
    }

    /// `δ_i f` for all `i`, `f` evaluated on this point's coordinate jets.
    pub fn delta_apply(&self, f: &dyn ScalarField) -> Result<Vec<f64>> {
        let fj = f.eval(&self.f.vars)?;
        Ok((0..self.n()).map(|i| self.delta(&fj, i).value()).collect())
    }
}

/// Point values of the nonlinear connection and formal Christoffel symbols.
#[derive(Debug, Clone)]
pub struct NonlinearConnection {
    pub n_downdown: DTensor<f64>,
    pub gamma: DTensor<f64>,
    pub gamma0: DTensor<f64>,
    pub gamma00: Vec<f64>,
}

pub fn nonlinear_connection(
    s: &dyn CartanStructure,
    at: &ChartPoint,
) -> Result<NonlinearConnection> {
    let geo = BaseGeometry::new(s, at, 4)?;
    Ok(NonlinearConnection {
        n_downdown: geo.n_conn.values(),
        gamma: geo.gamma.values(),
        gamma0: geo.gamma0.values(),
        gamma00: geo.gamma00.iter().map(Jet::value).collect(),
    })
}

pub fn delta_apply(
    s: &dyn CartanStructure,
    at: &ChartPoint,
    f: &dyn ScalarField,
) -> Result<Vec<f64>> {
    BaseGeometry::new(s, at, 4)?.delta_apply(f)
}

/// Point values of the Berwald-connection objects.
#[derive(Debug, Clone)]
pub struct BerwaldData {
    pub b: DTensor<f64>,
    /// `L^ij_k`
    pub l_mixed: DTensor<f64>,
    /// `L^i_jk`
    pub l_lower: DTensor<f64>,
    pub j_up: Vec<f64>,
    pub j_down: Vec<f64>,
    /// `R_kij`
    pub r_vv: DTensor<f64>,
    /// `R^i_jkh`
    pub r_hcurv: DTensor<f64>,
    /// `P^{ih}_jk`
    pub p_curv: DTensor<f64>,
}

impl BaseGeometry {
    pub fn berwald_data(&self) -> BerwaldData {
        BerwaldData {
            b: self.b.values(),
            l_mixed: self.l_mixed.values(),
            l_lower: self.l_lower().values(),
            j_up: self.j_up().iter().map(Jet::value).collect(),
            j_down: self.j_down().iter().map(Jet::value).collect(),
            r_vv: self.r.values(),
            r_hcurv: self.berwald_curvature().values(),
            p_curv: self.p_curvature().values(),
        }
    }
}

pub fn berwald_data(s: &dyn CartanStructure, at: &ChartPoint) -> Result<BerwaldData> {
    Ok(BaseGeometry::full(s, at)?.berwald_data())
}

pub fn h_cov(s: &dyn CartanStructure, at: &ChartPoint, t: &DTensor<Jet>) -> Result<DTensor<Jet>> {
    BaseGeometry::new(s, at, 4)?.h_cov(t)
}

pub fn v_cov(s: &dyn CartanStructure, at: &ChartPoint, t: &DTensor<Jet>) -> Result<DTensor<Jet>> {
    BaseGeometry::new(s, at, 4)?.v_cov(t)
}

pub fn metric_delta_identity(s: &dyn CartanStructure, at: &ChartPoint) -> Result<f64> {
    Ok(BaseGeometry::new(s, at, 4)?.metric_delta_identity())
}

/// Named residuals of the structural identities of the base geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityResidual {
    pub id: &'static str,
    pub anchor: &'static str,
    pub residual: f64,
}

impl BaseGeometry {
    /// Residuals of the pointwise identities that hold for every Cartan
    /// structure. Homogeneity of `g^ij` needs a second point and is handled
    /// by [`homogeneity_residual`].
    pub fn structural_identities(&self) -> Vec<IdentityResidual> {
        let n = self.n();
        let f = &self.f;
        let k2 = f.k2.value();
        let scale = k2.max(1.0);
        let mut out = Vec::new();
        let mut push = |id, anchor, residual: f64| {
            out.push(IdentityResidual {
                id,
                anchor,
                residual,
            })
        };

        let euler: f64 = (0..n)
            .map(|j| f.p(j).value() * f.dv(&f.k2, j).value())
            .sum();
        push(
            "euler_k2",
            "p_j ∂̇^j K² = 2K²",
            (euler - 2.0 * k2).abs() / scale,
        );

        let mut gpp = 0.0;
        for i in 0..n {
            for j in 0..n {
                gpp += f.g_up.get(&[i, j]).value() * f.p(i).value() * f.p(j).value();
            }
        }
        push("g_pp_k2", "g^ij p_i p_j = K²", (gpp - k2).abs() / scale);

        let mut cp: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let v: f64 = (0..n)
                    .map(|k| f.c_up.get(&[i, j, k]).value() * f.p(k).value())
                    .sum();
                cp = cp.max(v.abs());
            }
        }
        push("cartan_p", "C^ijk p_k = 0", cp);

        let p_field = DTensor::from_fn(n, &[Down], |ix| f.p(ix[0]).clone());
        let p_cov = self.h_cov(&p_field).expect("dimension matches").values();
        push("p_hcov", "p_i|j = 0", p_cov.max_abs());
        let p_v = self.v_cov(&p_field).expect("dimension matches").values();
        let p_v_res = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (p_v.get(&[i, j]) - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max);
        push("p_vcov", "p_i|^j = δ^j_i", p_v_res);

        let dk2 = (0..n)
            .map(|i| self.delta(&f.k2, i).value().abs())
            .fold(0.0, f64::max);
        push("delta_k2", "δ_i K² = 0", dk2 / scale);

        let mut rp: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let v: f64 = (0..n)
                    .map(|k| self.r.get(&[k, i, j]).value() * f.p_up[k].value())
                    .sum();
                rp = rp.max(v.abs());
            }
        }
        push("r_p", "R_kij p^k = 0", rp / scale);

        let g_h = self.h_cov(&f.g_up).expect("dimension matches").values();
        let lm = self.l_mixed.values();
        let g_v = self.v_cov(&f.g_up).expect("dimension matches").values();
        let cu = f.c_up.values();
        let mut hres: f64 = 0.0;
        let mut vres: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    hres = hres.max((g_h.get(&[i, j, k]) + 2.0 * lm.get(&[i, j, k])).abs());
                    vres = vres.max((g_v.get(&[i, j, k]) + 2.0 * cu.get(&[i, j, k])).abs());
                }
            }
        }
        push("g_hcov_landsberg", "g^ij_|k = -2 L^ij_k", hres);
        push("g_vcov_cartan", "g^ij|^k = -2 C^ijk", vres);

        let nv = self.n_conn.values();
        let mut nsym: f64 = 0.0;
        for i in 0..n {
            for j in 0..i {
                nsym = nsym.max((nv.get(&[i, j]) - nv.get(&[j, i])).abs());
            }
        }
        push("n_symmetric", "N_ij = N_ji", nsym);

        // A_kij = g_jk|i - g_ik|j, the base-metric form of the integrability condition
        let g_low_h = self.h_cov(&f.g_down).expect("dimension matches").values();
        let mut ares: f64 = 0.0;
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    ares = ares.max((g_low_h.get(&[j, k, i]) - g_low_h.get(&[i, k, j])).abs());
                }
            }
        }
        push("a_kij_base", "g_jk|i - g_ik|j = 2L_jki - 2L_ikj = 0", ares);
        out
    }
}

/// Max relative change of `g^ij` under `p → 2p` (zero for a 0-homogeneous tensor).
pub fn homogeneity_residual(s: &dyn CartanStructure, at: &ChartPoint) -> Result<f64> {
    let a = FundamentalJets::new(s, at, 3)?.g_up.values();
    let b = FundamentalJets::new(s, &at.scaled_momentum(2.0)?, 3)?
        .g_up
        .values();
    Ok(a.max_diff(&b) / a.max_abs().max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cartan::{conformal, flat, randers_dual, ConstantMetric, ConstantVector};
    use std::sync::Arc;

    fn pt(x: &[f64], p: &[f64]) -> ChartPoint {
        ChartPoint::new(x.to_vec(), p.to_vec()).unwrap()
    }

    fn randers() -> crate::cartan::RandersDual {
        randers_dual(
            "r",
            Arc::new(ConstantMetric::euclidean(2)),
            Arc::new(ConstantVector(vec![0.3, 0.0])),
            &pt(&[0.0, 0.0], &[1.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn flat_connection_vanishes() {
        let d = berwald_data(&flat("f", 2), &pt(&[0.2, 0.7], &[1.0, -0.5])).unwrap();
        assert_eq!(d.b.max_abs(), 0.0);
        assert_eq!(d.l_mixed.max_abs(), 0.0);
        assert_eq!(d.r_vv.max_abs(), 0.0);
        assert_eq!(d.r_hcurv.max_abs(), 0.0);
    }

    #[test]
    fn locally_minkowski_randers_has_no_connection() {
        let at = pt(&[0.4, -0.3], &[1.0, 0.2]);
        let nc = nonlinear_connection(&randers(), &at).unwrap();
        assert!(nc.n_downdown.max_abs() < 1e-14);
        assert!(metric_delta_identity(&randers(), &at).unwrap() < 1e-12);
    }

    #[test]
    fn riemannian_b_is_levi_civita_of_base() {
        // Christoffel symbols of a_ij = δ_ij / φ², φ = 1 + c|x|²/4:
        // Γ^i_jk = -(δ_ij ∂_kφ + δ_ik ∂_jφ - δ_jk ∂_iφ)/φ with ∂_iφ = c x^i / 2
        let c = 1.0;
        let x = [0.3, -0.5];
        let at = pt(&x, &[0.8, 1.1]);
        let d = berwald_data(&conformal("s", 2, c), &at).unwrap();
        let phi = 1.0 + c * (x[0] * x[0] + x[1] * x[1]) / 4.0;
        let dphi = [c * x[0] / 2.0, c * x[1] / 2.0];
        let kd = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let christoffel =
                        -(kd(i, j) * dphi[k] + kd(i, k) * dphi[j] - kd(j, k) * dphi[i]) / phi;
                    // N_jk = Γ^i_jk p_i, so B^i_jk = Γ^i_jk
                    assert!((d.b.get(&[i, j, k]) - christoffel).abs() < 1e-12);
                }
            }
        }
        assert!(d.l_mixed.max_abs() < 1e-12);
        assert!(d.j_down.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn delta_of_momentum_is_connection() {
        let s = conformal("s", 2, 1.0);
        let at = pt(&[0.3, 0.0], &[1.0, 0.4]);
        let geo = BaseGeometry::new(&s, &at, 4).unwrap();
        for k in 0..2 {
            let pk = |v: &[Jet]| Ok(v[2 + k].clone());
            let d = geo.delta_apply(&pk).unwrap();
            for i in 0..2 {
                assert!((d[i] - geo.n_conn.get(&[i, k]).value()).abs() < 1e-14);
            }
        }
        let base_only = |v: &[Jet]| Ok(&v[0] * &v[1]);
        let d = geo.delta_apply(&base_only).unwrap();
        assert!((d[0] - 0.0).abs() < 1e-15 && (d[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn constant_curvature_r_identity() {
        let c = 1.0;
        let s = conformal("s", 2, c);
        let at = pt(&[0.3, -0.2], &[0.7, 0.4]);
        let geo = BaseGeometry::full(&s, &at).unwrap();
        let f = &geo.f;
        let k2 = f.k2.value();
        for h in 0..2 {
            for k in 0..2 {
                let lhs: f64 = (0..2)
                    .map(|j| geo.r.get(&[h, j, k]).value() * f.p_up[j].value())
                    .sum();
                let rhs =
                    c * (k2 * f.g_down.get(&[h, k]).value() - f.p(h).value() * f.p(k).value());
                assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn structural_identities_hold() {
        let at = pt(&[0.3, -0.2], &[0.7, 0.4]);
        for s in [
            Box::new(conformal("s", 2, 1.0)) as Box<dyn CartanStructure>,
            Box::new(randers()),
            Box::new(flat("f", 2)),
        ] {
            let geo = BaseGeometry::full(s.as_ref(), &at).unwrap();
            for r in geo.structural_identities() {
                assert!(r.residual < 1e-9, "{} {} {}", s.label(), r.id, r.residual);
            }
            assert!(homogeneity_residual(s.as_ref(), &at).unwrap() < 1e-12);
        }
    }

    #[test]
    fn valence_mismatch_is_reported() {
        let geo = BaseGeometry::new(&flat("f", 2), &pt(&[0.0, 0.0], &[1.0, 0.0]), 4).unwrap();
        let bad = DTensor::from_fn(3, &[Up], |_| geo.f.k2.clone());
        assert!(matches!(geo.h_cov(&bad), Err(EngineError::Valence(_))));
    }
}
