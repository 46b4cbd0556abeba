//! Agreement and cohesion scores for clusterings.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{euclidean_distance, Matrix};

/// How mutual information is normalized by the two label entropies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NmiNormalization {
    #[default]
    Arithmetic,
    Geometric,
    Min,
    Max,
}

/// Counts of co-occurring labels, rows and columns in ascending label order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowTable {
    pub row_labels: Vec<usize>,
    pub col_labels: Vec<usize>,
    pub counts: Vec<Vec<usize>>,
}

impl FlowTable {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<usize> {
        (0..self.col_labels.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }
}

fn check_lengths(a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Input(format!(
            "labelings have different lengths ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Contingency table of two labelings.
pub fn label_flow(a: &[usize], b: &[usize]) -> Result<FlowTable> {
    check_lengths(a, b)?;
    let index = |labels: &[usize]| -> BTreeMap<usize, usize> {
        let mut m: BTreeMap<usize, usize> = labels.iter().map(|&l| (l, 0)).collect();
        for (i, v) in m.values_mut().enumerate() {
            *v = i;
        }
        m
    };
    let (ra, rb) = (index(a), index(b));
    let mut counts = vec![vec![0; rb.len()]; ra.len()];
    for (x, y) in a.iter().zip(b) {
        counts[ra[x]][rb[y]] += 1;
    }
    Ok(FlowTable {
        row_labels: ra.into_keys().collect(),
        col_labels: rb.into_keys().collect(),
        counts,
    })
}

fn entropy_of_counts(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

pub fn mutual_information(a: &[usize], b: &[usize]) -> Result<f64> {
    let t = label_flow(a, b)?;
    let n = a.len() as f64;
    let (rs, cs) = (t.row_sums(), t.col_sums());
    let mut mi = 0.0;
    for (i, row) in t.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (rs[i] as f64 * cs[j] as f64)).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    nmi_with(a, b, NmiNormalization::Arithmetic)
}

/// Normalized mutual information with natural logs; `0/0` is 0.
pub fn nmi_with(a: &[usize], b: &[usize], norm: NmiNormalization) -> Result<f64> {
    check_lengths(a, b)?;
    if a.is_empty() {
        return Err(Error::Input("labelings are empty".into()));
    }
    let t = label_flow(a, b)?;
    let n = a.len() as f64;
    let ha = entropy_of_counts(t.row_sums().into_iter(), n);
    let hb = entropy_of_counts(t.col_sums().into_iter(), n);
    let denom = match norm {
        NmiNormalization::Arithmetic => 0.5 * (ha + hb),
        NmiNormalization::Geometric => (ha * hb).sqrt(),
        NmiNormalization::Min => ha.min(hb),
        NmiNormalization::Max => ha.max(hb),
    };
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((mutual_information(a, b)? / denom).clamp(0.0, 1.0))
}

/// Mean silhouette with Euclidean distances. Samples in singleton clusters
/// score 0, as do samples whose intra- and nearest-cluster distances are
/// both 0.
pub fn silhouette(x: &Matrix, labels: &[usize]) -> Result<f64> {
    Ok(silhouette_samples(x, labels)?.iter().sum::<f64>() / labels.len() as f64)
}

pub fn silhouette_samples(x: &Matrix, labels: &[usize]) -> Result<Vec<f64>> {
    if x.rows() != labels.len() {
        return Err(Error::Input(format!(
            "{} samples but {} labels",
            x.rows(),
            labels.len()
        )));
    }
    let mut clusters: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *clusters.entry(l).or_insert(0) += 1;
    }
    if clusters.len() < 2 {
        return Err(Error::UndefinedMetric(
            "silhouette needs at least two clusters".into(),
        ));
    }
    let slot: BTreeMap<usize, usize> = clusters.keys().enumerate().map(|(i, &l)| (l, i)).collect();
    let sizes: Vec<usize> = clusters.values().copied().collect();
    let n = labels.len();
    let mut out = Vec::with_capacity(n);
    let mut sums = vec![0.0; sizes.len()];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[slot[&labels[j]]] += euclidean_distance(x.row(i), x.row(j));
            }
        }
        let own = slot[&labels[i]];
        if sizes[own] == 1 {
            out.push(0.0);
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = sums
            .iter()
            .zip(&sizes)
            .enumerate()
            .filter(|&(c, _)| c != own)
            .map(|(_, (s, &size))| s / size as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        out.push(if m > 0.0 { (b - a) / m } else { 0.0 });
    }
    Ok(out)
}

/// Renumbers labels `0..K` in order of first appearance.
pub fn relabel(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nmi_examples() {
        assert!((nmi(&[0, 0, 1, 1, 2], &[5, 5, 3, 3, 9]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&[0, 0, 0, 0], &[0, 1, 0, 1]).unwrap(), 0.0);
        assert_eq!(nmi(&[0, 0], &[1, 1]).unwrap(), 0.0);
        // H(a) = ln 2, H(b) = −(¼ ln ¼ + ¾ ln ¾), I = ¼ ln 2 + ¼ ln ⅔ + ½ ln 4/3
        let ha = 2f64.ln();
        let hb = -(0.25 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        let mi = 0.25 * 2f64.ln() + 0.25 * (2.0f64 / 3.0).ln() + 0.5 * (4.0f64 / 3.0).ln();
        let v = nmi(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
        assert!((v - mi / (0.5 * (ha + hb))).abs() < 1e-12);
        assert!((v - 0.3436).abs() < 1e-3);
        assert!(nmi(&[0, 1], &[0]).is_err());
        assert!(nmi(&[], &[]).is_err());
    }

    #[test]
    fn normalizations_are_ordered() {
        let (a, b) = ([0, 0, 1, 1, 2, 2, 2], [0, 1, 1, 1, 2, 2, 0]);
        let v = |n| nmi_with(&a, &b, n).unwrap();
        assert!(v(NmiNormalization::Max) <= v(NmiNormalization::Arithmetic));
        assert!(v(NmiNormalization::Arithmetic) <= v(NmiNormalization::Min));
        assert!(v(NmiNormalization::Geometric) <= v(NmiNormalization::Min));
    }

    #[test]
    fn silhouette_examples() {
        let x = Matrix::from_rows(&[[0.0], [0.1], [10.0], [10.1]]).unwrap();
        let s = silhouette(&x, &[0, 0, 1, 1]).unwrap();
        // a = 0.1; b = 10.05 or 9.95 depending on the point
        let expected = (2.0 * (10.05 - 0.1) / 10.05 + 2.0 * (9.95 - 0.1) / 9.95) / 4.0;
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 0.990).abs() < 1e-3);
        let same = Matrix::filled(4, 2, 3.0);
        assert_eq!(silhouette(&same, &[0, 0, 1, 1]).unwrap(), 0.0);
        assert!((silhouette(&x.scale(2.0), &[0, 0, 1, 1]).unwrap() - s).abs() < 1e-12);
        assert!(matches!(silhouette(&x, &[1, 1, 1, 1]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn singleton_scores_zero() {
        let x = Matrix::from_rows(&[[0.0], [0.2], [5.0]]).unwrap();
        let s = silhouette_samples(&x, &[0, 0, 1]).unwrap();
        assert_eq!(s[2], 0.0);
    }

    #[test]
    fn flow_table_examples() {
        let t = label_flow(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
        assert_eq!(t.counts, vec![vec![1, 1], vec![0, 2]]);
        assert_eq!(t.total(), 4);
        assert_eq!(t.row_sums(), vec![2, 2]);
        let d = label_flow(&[2, 0, 1, 0], &[2, 0, 1, 0]).unwrap();
        assert_eq!(d.counts, vec![vec![2, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
    }
}
