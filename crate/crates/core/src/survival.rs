//! Kaplan-Meier curves, median survival and the multi-group log-rank test.

use std::collections::BTreeMap;

use log::warn;

use crate::dataset::SurvivalRecord;
use crate::error::{Error, Result};
use crate::special::chi_square_sf;

/// Product-limit estimate at each distinct death time.
#[derive(Clone, Debug, PartialEq)]
pub struct KmCurve {
    pub times: Vec<f64>,
    /// `Ŝ` just after each time in `times`.
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub deaths: Vec<usize>,
}

impl KmCurve {
    /// Right-continuous step function; 1 before the first death.
    pub fn survival_at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&x| x <= t) {
            0 => 1.0,
            i => self.survival[i - 1],
        }
    }
}

fn check_record(time: f64) -> Result<()> {
    if !(time >= 0.0 && time.is_finite()) {
        return Err(Error::Input(format!("survival time {time} must be finite and non-negative")));
    }
    Ok(())
}

/// `(time, event)` pairs sorted by time, deaths before censorings at ties.
fn sorted(subjects: impl Iterator<Item = (f64, bool)>) -> Result<Vec<(f64, bool)>> {
    let mut v: Vec<(f64, bool)> = subjects.collect();
    for &(t, _) in &v {
        check_record(t)?;
    }
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
    Ok(v)
}

pub fn km_curve(records: &[SurvivalRecord]) -> Result<KmCurve> {
    km_from_pairs(records.iter().map(|r| (r.time, r.event)))
}

pub fn km_from_pairs(subjects: impl Iterator<Item = (f64, bool)>) -> Result<KmCurve> {
    let subjects = sorted(subjects)?;
    if subjects.is_empty() {
        return Err(Error::Input("Kaplan-Meier curve of an empty group".into()));
    }
    let mut curve = KmCurve {
        times: vec![],
        survival: vec![],
        at_risk: vec![],
        deaths: vec![],
    };
    let mut at_risk = subjects.len();
    let mut s = 1.0;
    let mut i = 0;
    while i < subjects.len() {
        let t = subjects[i].0;
        let mut deaths = 0;
        let mut leaving = 0;
        while i < subjects.len() && subjects[i].0 == t {
            deaths += subjects[i].1 as usize;
            leaving += 1;
            i += 1;
        }
        if deaths > 0 {
            s *= (at_risk - deaths) as f64 / at_risk as f64;
            curve.times.push(t);
            curve.survival.push(s);
            curve.at_risk.push(at_risk);
            curve.deaths.push(deaths);
        }
        at_risk -= leaving;
    }
    Ok(curve)
}

/// Earliest death time with `Ŝ ≤ 0.5`; `None` if the curve stays above.
pub fn median_survival(curve: &KmCurve) -> Option<f64> {
    curve
        .times
        .iter()
        .zip(&curve.survival)
        .find(|(_, &s)| s <= 0.5)
        .map(|(&t, _)| t)
}

/// Records split by group label, in ascending label order.
pub fn by_group(records: &[SurvivalRecord]) -> BTreeMap<usize, Vec<SurvivalRecord>> {
    let mut out: BTreeMap<usize, Vec<SurvivalRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.group).or_default().push(r.clone());
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRankResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub observed: Vec<f64>,
    pub expected: Vec<f64>,
    /// The covariance was singular and a pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

/// Log-rank test across the groups present in `records`.
pub fn logrank_test(records: &[SurvivalRecord]) -> Result<LogRankResult> {
    let groups: Vec<Vec<(f64, bool)>> = by_group(records)
        .into_values()
        .map(|g| g.iter().map(|r| (r.time, r.event)).collect())
        .collect();
    logrank_groups(&groups)
}

/// Log-rank test on explicit `(time, event)` groups.
pub fn logrank_groups(groups: &[Vec<(f64, bool)>]) -> Result<LogRankResult> {
    let g = groups.len();
    if g < 2 {
        return Err(Error::Input(format!("log-rank test needs at least two groups, got {g}")));
    }
    if let Some(i) = groups.iter().position(|grp| grp.is_empty()) {
        return Err(Error::Input(format!("log-rank group {i} has no subjects")));
    }
    for &(t, _) in groups.iter().flatten() {
        check_record(t)?;
    }
    let mut subjects: Vec<(f64, bool, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(gi, grp)| grp.iter().map(move |&(t, e)| (t, e, gi)))
        .collect();
    subjects.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));

    let mut at_risk: Vec<f64> = groups.iter().map(|grp| grp.len() as f64).collect();
    let mut observed = vec![0.0; g];
    let mut expected = vec![0.0; g];
    let mut cov = nalgebra::DMatrix::<f64>::zeros(g - 1, g - 1);
    let mut i = 0;
    while i < subjects.len() {
        let t = subjects[i].0;
        let mut deaths = vec![0.0; g];
        let mut leaving = vec![0.0; g];
        while i < subjects.len() && subjects[i].0 == t {
            let (_, e, gi) = subjects[i];
            if e {
                deaths[gi] += 1.0;
            }
            leaving[gi] += 1.0;
            i += 1;
        }
        let d: f64 = deaths.iter().sum();
        let n: f64 = at_risk.iter().sum();
        if d > 0.0 {
            for k in 0..g {
                observed[k] += deaths[k];
                expected[k] += d * at_risk[k] / n;
            }
            if n > 1.0 {
                let f = d * (n - d) / (n - 1.0);
                for a in 0..g - 1 {
                    for b in 0..g - 1 {
                        let delta = if a == b { 1.0 } else { 0.0 };
                        cov[(a, b)] += f * at_risk[a] / n * (delta - at_risk[b] / n);
                    }
                }
            }
        }
        for k in 0..g {
            at_risk[k] -= leaving[k];
        }
    }

    let diff = nalgebra::DVector::from_iterator(g - 1, (0..g - 1).map(|k| observed[k] - expected[k]));
    let mut pseudo_inverse = false;
    let statistic = if cov.iter().all(|&v| v == 0.0) {
        0.0
    } else {
        let inv = match cov.clone().cholesky() {
            Some(ch) => ch.inverse(),
            None => {
                warn!("log-rank covariance is singular; using a pseudo-inverse");
                pseudo_inverse = true;
                cov.clone()
                    .pseudo_inverse(1e-10)
                    .map_err(|e| Error::Numeric(format!("log-rank pseudo-inverse failed: {e}")))?
            }
        };
        (diff.transpose() * inv * &diff)[(0, 0)].max(0.0)
    };
    let df = g - 1;
    Ok(LogRankResult {
        statistic,
        df,
        p_value: chi_square_sf(statistic, df as f64)?,
        observed,
        expected,
        pseudo_inverse,
    })
}
