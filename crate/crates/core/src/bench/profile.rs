//! Performance profiles over objective ratios.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::experiment::best_objectives;
use super::{Method, RunRecord};
use crate::error::{Error, Result};

/// Breakpoints `(x, y)` of a nondecreasing step function: `y` is the share
/// of problems whose ratio is at most `x`, for `x` between this breakpoint
/// and the next.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileCurve {
    pub method: String,
    pub points: Vec<(f64, f64)>,
}

/// Step curves from per-method ratio lists. Every list covers the same
/// problems; infinite ratios (infeasible runs) are never reached.
pub fn profile_from_ratios(ratios: &BTreeMap<String, Vec<f64>>) -> Result<Vec<ProfileCurve>> {
    let Some(problems) = ratios.values().next().map(Vec::len) else {
        return Err(Error::usage("no methods to profile"));
    };
    if problems == 0 || ratios.values().any(|r| r.len() != problems) {
        return Err(Error::usage("every method needs one ratio per problem"));
    }
    let total = problems as f64;
    Ok(ratios
        .iter()
        .map(|(method, rs)| {
            let mut finite: Vec<f64> = rs.iter().copied().filter(|r| r.is_finite()).collect();
            finite.sort_by(f64::total_cmp);
            let mut points: Vec<(f64, f64)> = Vec::new();
            for (k, &r) in finite.iter().enumerate() {
                let y = (k + 1) as f64 / total;
                match points.last_mut() {
                    Some(last) if last.0 == r => last.1 = y,
                    _ => points.push((r, y)),
                }
            }
            ProfileCurve {
                method: method.clone(),
                points,
            }
        })
        .collect())
}

/// Profiles every method appearing in `records`. A problem is one
/// (instance, measure, β) triple; its ratio is `1 + gap`, which equals
/// `f/f_best` whenever `f_best > 0`. Infeasible or missing runs count as
/// infinite ratios.
pub fn performance_profile(records: &[RunRecord]) -> Result<Vec<ProfileCurve>> {
    if records.is_empty() {
        return Err(Error::usage("no records to profile"));
    }
    let best = best_objectives(records);
    let problems: BTreeSet<_> = records
        .iter()
        .map(|r| (r.instance_id.clone(), r.measure, r.beta.to_bits()))
        .collect();
    if let Some(p) = problems.iter().find(|p| !best.contains_key(*p)) {
        return Err(Error::usage(format!(
            "problem {} ({}, {}) has no feasible run",
            p.0,
            p.1,
            f64::from_bits(p.2)
        )));
    }
    let index: BTreeMap<_, usize> = problems
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, p)| (p, i))
        .collect();
    let methods: BTreeSet<Method> = records.iter().map(|r| r.method).collect();
    let mut ratios: BTreeMap<String, Vec<f64>> = methods
        .iter()
        .map(|m| (m.to_string(), vec![f64::INFINITY; problems.len()]))
        .collect();
    for r in records.iter().filter(|r| r.feasible) {
        let key = (r.instance_id.clone(), r.measure, r.beta.to_bits());
        let fb = best[&key];
        let ratio = if fb == 0.0 {
            if r.objective == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            1.0 + (r.objective - fb) / fb.abs()
        };
        let slot = &mut ratios
            .get_mut(&r.method.to_string())
            .expect("collected above")[index[&key]];
        *slot = slot.min(ratio);
    }
    profile_from_ratios(&ratios)
}

/// Writes curves as `method,x,y` rows.
pub fn write_profile<W: Write>(out: W, curves: &[ProfileCurve]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "x", "y"])
        .map_err(|e| Error::Parse(e.to_string()))?;
    for c in curves {
        for (x, y) in &c.points {
            w.write_record([c.method.clone(), x.to_string(), y.to_string()])
                .map_err(|e| Error::Parse(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homotopy::StartY;
    use crate::model::RiskKind;

    fn ratios(entries: &[(&str, &[f64])]) -> BTreeMap<String, Vec<f64>> {
        entries
            .iter()
            .map(|(m, r)| (m.to_string(), r.to_vec()))
            .collect()
    }

    #[test]
    fn hand_fixture() {
        let curves = profile_from_ratios(&ratios(&[
            ("A", &[1.0, 1.0, 2.0]),
            ("B", &[1.0, 1.5, f64::INFINITY]),
        ]))
        .unwrap();
        assert_eq!(curves[0].points, vec![(1.0, 2.0 / 3.0), (2.0, 1.0)]);
        assert_eq!(curves[1].points, vec![(1.0, 1.0 / 3.0), (1.5, 2.0 / 3.0)]);
        assert!(curves[1].points.iter().all(|p| p.1 < 1.0));
    }

    #[test]
    fn all_best_jumps_to_one() {
        let curves = profile_from_ratios(&ratios(&[("A", &[1.0, 1.0])])).unwrap();
        assert_eq!(curves[0].points, vec![(1.0, 1.0)]);
    }

    #[test]
    fn empty_input_is_usage_error() {
        assert!(matches!(
            profile_from_ratios(&BTreeMap::new()),
            Err(Error::Usage(_))
        ));
        assert!(matches!(performance_profile(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn records_reproduce_fixture() {
        let rec = |id: &str, method: Method, objective: f64, feasible: bool| RunRecord {
            instance_id: id.into(),
            method,
            measure: RiskKind::Cvar,
            beta: 0.95,
            objective,
            time_ms: 0.0,
            cardinality: 1,
            feasible,
            gap: None,
            stationarity: None,
            status: String::new(),
        };
        let a = Method::Scholtes(StartY::Ones);
        let b = Method::Direct(StartY::Ones);
        let records = vec![
            rec("p1", a, 2.0, true),
            rec("p1", b, 2.0, true),
            rec("p2", a, 4.0, true),
            rec("p2", b, 6.0, true),
            rec("p3", a, 3.0, true),
            rec("p3", b, 1.0, false),
            rec("p3", Method::Oracle, 1.5, true),
        ];
        let curves = performance_profile(&records).unwrap();
        let get = |m: Method| {
            curves
                .iter()
                .find(|c| c.method == m.to_string())
                .unwrap()
                .points
                .clone()
        };
        assert_eq!(get(a), vec![(1.0, 2.0 / 3.0), (2.0, 1.0)]);
        assert_eq!(get(b), vec![(1.0, 1.0 / 3.0), (1.5, 2.0 / 3.0)]);
    }
}
