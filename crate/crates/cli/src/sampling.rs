//! Seeded point sampling inside a structure's chart box.

use cartan_core::ChartPoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::manifest::{Sampling, StructureSpec};

/// 64-bit FNV-1a over the given byte strings, each followed by a separator.
pub fn fnv(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in part.iter().chain(std::iter::once(&0xffu8)) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

pub fn rng_for(seed: u64, labels: &[&str]) -> ChaCha8Rng {
    let seed_bytes = seed.to_le_bytes();
    let mut parts: Vec<&[u8]> = vec![&seed_bytes];
    parts.extend(labels.iter().map(|l| l.as_bytes()));
    ChaCha8Rng::seed_from_u64(fnv(&parts))
}

pub fn box_center(spec: &StructureSpec) -> Vec<f64> {
    spec.chart_box.iter().map(|[a, b]| 0.5 * (a + b)).collect()
}

/// Box centre and corners, each with momentum `e_1`.
pub fn probe_points(spec: &StructureSpec) -> Vec<ChartPoint> {
    let n = spec.dim;
    let mut p = vec![0.0; n];
    p[0] = 1.0;
    let mut xs = vec![box_center(spec)];
    for mask in 0..(1usize << n) {
        xs.push((0..n).map(|i| spec.chart_box[i][(mask >> i) & 1]).collect());
    }
    xs.into_iter()
        .filter_map(|x| ChartPoint::new(x, p.clone()).ok())
        .collect()
}

/// A unit vector drawn uniformly from the sphere by rejection from the cube.
fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if (0.1..=1.0).contains(&r) {
            return v.into_iter().map(|a| a / r).collect();
        }
    }
}

/// `x` uniform in the box, `p` with uniform direction and Euclidean norm
/// uniform in the momentum range.
pub fn sample_points(spec: &StructureSpec, sampling: &Sampling, seed: u64) -> Vec<ChartPoint> {
    let mut rng = rng_for(seed, &[&spec.label]);
    let [lo, hi] = sampling.p_norm_range;
    let mut out = Vec::with_capacity(sampling.point_count);
    while out.len() < sampling.point_count {
        let x: Vec<f64> = spec
            .chart_box
            .iter()
            .map(|&[a, b]| if a == b { a } else { rng.gen_range(a..b) })
            .collect();
        let r = if lo == hi { lo } else { rng.gen_range(lo..hi) };
        let p: Vec<f64> = unit_vector(&mut rng, spec.dim)
            .into_iter()
            .map(|u| u * r)
            .collect();
        if let Ok(pt) = ChartPoint::new(x, p) {
            out.push(pt);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> StructureSpec {
        StructureSpec {
            label: "a".into(),
            family: "flat".into(),
            dim: 3,
            parameters: serde_json::Value::Null,
            chart_box: vec![[-1.0, 1.0], [0.0, 0.5], [2.0, 2.0]],
        }
    }

    #[test]
    fn samples_are_reproducible_and_in_range() {
        let s = Sampling {
            seed: 9,
            point_count: 40,
            p_norm_range: [0.5, 2.0],
        };
        let a = sample_points(&spec(), &s, 9);
        let b = sample_points(&spec(), &s, 9);
        assert_eq!(a.len(), 40);
        for (u, v) in a.iter().zip(&b) {
            assert_eq!(u.coords(), v.coords());
            assert!(u.x[0].abs() <= 1.0 && (0.0..=0.5).contains(&u.x[1]) && u.x[2] == 2.0);
            let r = u.p_norm();
            assert!((0.5 - 1e-12..=2.0 + 1e-12).contains(&r));
        }
        assert_ne!(sample_points(&spec(), &s, 10)[0].coords(), a[0].coords());
    }

    #[test]
    fn probes_cover_corners() {
        assert_eq!(probe_points(&spec()).len(), 9);
    }
}
