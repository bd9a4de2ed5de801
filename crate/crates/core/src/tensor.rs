//! Component arrays of distinguished tensors.
//!
//! Every slot is either `Up` (a momentum-type index, carried by `∂̇^i`) or
//! `Down` (a base-type index, carried by `dx^i` or `δ_i`). Storage is dense and
//! row-major in slot order.

use serde::Serialize;

use crate::jets::Jet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Up,
    Down,
}

#[derive(Debug, Clone)]
pub struct DTensor<T> {
    dim: usize,
    slots: Vec<Slot>,
    data: Vec<T>,
    /// Declared degree of homogeneity in `p`, when known.
    pub degree: Option<i32>,
}

impl<T> DTensor<T> {
    pub fn from_fn(dim: usize, slots: &[Slot], mut f: impl FnMut(&[usize]) -> T) -> Self {
        let rank = slots.len();
        let len = dim.pow(rank as u32);
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; rank];
        for _ in 0..len {
            data.push(f(&idx));
            for s in (0..rank).rev() {
                idx[s] += 1;
                if idx[s] < dim {
                    break;
                }
                idx[s] = 0;
            }
        }
        Self {
            dim,
            slots: slots.to_vec(),
            data,
            degree: None,
        }
    }

    pub fn try_from_fn<E>(
        dim: usize,
        slots: &[Slot],
        mut f: impl FnMut(&[usize]) -> Result<T, E>,
    ) -> Result<Self, E> {
        let mut err = None;
        let t = DTensor::from_fn(dim, slots, |idx| match f(idx) {
            Ok(v) => Some(v),
            Err(e) => {
                err.get_or_insert(e);
                None
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(DTensor {
                dim: t.dim,
                slots: t.slots,
                data: t.data.into_iter().map(|v| v.expect("checked")).collect(),
                degree: None,
            }),
        }
    }

    pub fn with_degree(mut self, degree: i32) -> Self {
        self.degree = Some(degree);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.slots.len());
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    pub fn get(&self, idx: &[usize]) -> &T {
        &self.data[self.offset(idx)]
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> DTensor<U> {
        DTensor {
            dim: self.dim,
            slots: self.slots.clone(),
            data: self.data.iter().map(f).collect(),
            degree: self.degree,
        }
    }
}

impl<T: Clone> DTensor<T> {
    pub fn scalar(value: T) -> Self {
        Self {
            dim: 0,
            slots: Vec::new(),
            data: vec![value],
            degree: None,
        }
    }
}

impl DTensor<Jet> {
    pub fn values(&self) -> DTensor<f64> {
        self.map(Jet::value)
    }

    pub fn order(&self) -> usize {
        self.data.iter().map(Jet::order).min().unwrap_or(0)
    }
}

impl DTensor<f64> {
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest componentwise difference; panics on shape mismatch.
    pub fn max_diff(&self, other: &DTensor<f64>) -> f64 {
        assert_eq!(self.slots, other.slots);
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Nested rows for serialization (rank ≤ 4).
    pub fn to_json(&self) -> serde_json::Value {
        fn rec(data: &[f64], dim: usize, rank: usize) -> serde_json::Value {
            if rank == 0 {
                return serde_json::json!(data[0]);
            }
            let stride = data.len() / dim.max(1);
            serde_json::Value::Array(
                (0..dim)
                    .map(|i| rec(&data[i * stride..(i + 1) * stride], dim, rank - 1))
                    .collect(),
            )
        }
        rec(&self.data, self.dim, self.rank())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_layout() {
        let t = DTensor::from_fn(3, &[Slot::Up, Slot::Down], |ix| (10 * ix[0] + ix[1]) as f64);
        assert_eq!(*t.get(&[2, 1]), 21.0);
        assert_eq!(t.data()[5], 12.0);
        assert_eq!(t.rank(), 2);
    }

    #[test]
    fn json_nesting() {
        let t = DTensor::from_fn(2, &[Slot::Down, Slot::Down], |ix| {
            (ix[0] * 2 + ix[1]) as f64
        });
        assert_eq!(t.to_json(), serde_json::json!([[0.0, 1.0], [2.0, 3.0]]));
    }

    #[test]
    fn try_from_fn_reports_first_error() {
        let r: Result<DTensor<f64>, String> = DTensor::try_from_fn(2, &[Slot::Up], |ix| {
            if ix[0] == 1 {
                Err("bad".to_string())
            } else {
                Ok(1.0)
            }
        });
        assert_eq!(r.unwrap_err(), "bad");
    }
}
