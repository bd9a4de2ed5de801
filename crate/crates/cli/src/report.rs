//! Running the suite and assembling the report.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::checks::{aggregate_records, base_checks, bundle_checks, Aggregates, Emitter, Record};
use crate::manifest::{Manifest, Resolved, Tolerances};
use crate::sampling::{rng_for, sample_points};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Command-line overrides applied on top of the manifest.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub points: Option<usize>,
    pub tol_scale: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Tally {
    pub passed: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub errors: usize,
    pub by_check: BTreeMap<String, Tally>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub engine: &'static str,
    pub engine_version: &'static str,
    pub seed: u64,
    pub point_count: usize,
    pub tol_scale: f64,
    pub tolerances: Tolerances,
    pub manifest: Manifest,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub summary: Summary,
    pub checks: Vec<Record>,
    pub meta: Meta,
}

impl VerificationReport {
    pub fn all_pass(&self) -> bool {
        self.summary.failed == 0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn run_verify(resolved: &Resolved, opts: &RunOptions) -> VerificationReport {
    let m = &resolved.manifest;
    let seed = opts.seed.unwrap_or(m.sampling.seed);
    let mut sampling = m.sampling.clone();
    if let Some(p) = opts.points {
        sampling.point_count = p;
    }
    let tol_scale = opts.tol_scale.unwrap_or(1.0);
    let tol = m.tolerances.scaled(tol_scale);

    let points: Vec<_> = resolved
        .structures
        .iter()
        .map(|s| sample_points(&s.spec, &sampling, seed))
        .collect();

    let base_tasks: Vec<(usize, usize)> = (0..resolved.structures.len())
        .flat_map(|si| (0..points[si].len()).map(move |k| (si, k)))
        .collect();
    let mut records: Vec<Record> = base_tasks
        .par_iter()
        .flat_map_iter(|&(si, k)| {
            let s = &resolved.structures[si];
            let at = &points[si][k];
            let mut e = Emitter::new(&s.spec.label, None, Some(k), Some(at));
            base_checks(&mut e, s.structure.as_ref(), at, &tol);
            e.records
        })
        .collect();

    let pair_tasks: Vec<(usize, usize, usize)> = resolved
        .pairs()
        .into_iter()
        .flat_map(|(si, pi)| (0..points[si].len()).map(move |k| (si, pi, k)))
        .collect();
    let results: Vec<((usize, usize), Vec<Record>, Aggregates)> = pair_tasks
        .par_iter()
        .map(|&(si, pi, k)| {
            let s = &resolved.structures[si];
            let params = &resolved.params[pi];
            let at = &points[si][k];
            let mut rng = rng_for(seed, &[&s.spec.label, &params.label, &k.to_string()]);
            let mut e = Emitter::new(&s.spec.label, Some(&params.label), Some(k), Some(at));
            let mut agg = Aggregates::default();
            bundle_checks(
                &mut e,
                &mut agg,
                s.structure.as_ref(),
                params,
                at,
                k,
                &mut rng,
                &tol,
            );
            ((si, pi), e.records, agg)
        })
        .collect();

    let mut merged: BTreeMap<(usize, usize), Aggregates> = BTreeMap::new();
    for (key, recs, agg) in results {
        records.extend(recs);
        let slot = merged.entry(key).or_default();
        for (k, v) in agg.values {
            let cur = slot.values.entry(k).or_insert(f64::NEG_INFINITY);
            if v > *cur || v.is_nan() {
                *cur = v;
            }
        }
    }
    for ((si, pi), agg) in &merged {
        let s = &resolved.structures[*si];
        let params = &resolved.params[*pi];
        let mut e = Emitter::new(&s.spec.label, Some(&params.label), None, None);
        aggregate_records(&mut e, agg, &tol);
        records.extend(e.records);
    }

    records.sort_by(|a, b| {
        (
            a.check.as_str(),
            a.point,
            a.structure.as_str(),
            a.params.as_deref(),
        )
            .cmp(&(
                b.check.as_str(),
                b.point,
                b.structure.as_str(),
                b.params.as_deref(),
            ))
    });

    let mut by_check: BTreeMap<String, Tally> = BTreeMap::new();
    for r in &records {
        let t = by_check.entry(r.check.clone()).or_default();
        if r.pass {
            t.passed += 1;
        } else {
            t.failed += 1;
        }
    }
    let passed = records.iter().filter(|r| r.pass).count();
    VerificationReport {
        summary: Summary {
            total: records.len(),
            passed,
            failed: records.len() - passed,
            errors: records.iter().filter(|r| r.is_error()).count(),
            by_check,
        },
        checks: records,
        meta: Meta {
            engine: "cartanlab",
            engine_version: ENGINE_VERSION,
            seed,
            point_count: sampling.point_count,
            tol_scale,
            tolerances: tol,
            manifest: m.clone(),
        },
    }
}
