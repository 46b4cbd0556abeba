//! CSV and SVG artifacts: assignments, Kaplan-Meier curves, PCA scores,
//! label-flow tables and the two plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::{ExpressionDataset, SurvivalRecord};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::FlowTable;
use crate::survival::{median_survival, KmCurve};

/// `v` rounded to `digits` significant digits, printed like C's `%g`.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        return format!("{m}e{exp}");
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_owned()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, col: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Input(format!("{}: line {line}, column {col}: cannot parse `{v}`", path.display())))
}

/// Contents of an assignments file.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentTable {
    pub sample_ids: Vec<String>,
    pub labels: Vec<usize>,
    /// `N × K̃`; `None` when the method produced hard labels only.
    pub probs: Option<Matrix>,
}

impl AssignmentTable {
    /// Probabilities rounded as they would be written.
    pub fn rounded(&self) -> Self {
        let probs = self.probs.as_ref().map(|p| {
            p.map(|v| format_sig(v, 6).parse().expect("formatted float parses"))
        });
        Self {
            probs,
            ..self.clone()
        }
    }
}

/// Header `sample_id,label,p_0,…,p_{K̃−1}`; probabilities to 6 significant
/// digits.
pub fn write_assignments(path: impl AsRef<Path>, table: &AssignmentTable) -> Result<()> {
    let path = path.as_ref();
    let n = table.sample_ids.len();
    if table.labels.len() != n || table.probs.as_ref().is_some_and(|p| p.rows() != n) {
        return Err(Error::Shape("assignment columns have different lengths".into()));
    }
    let k = table.probs.as_ref().map_or(0, Matrix::cols);
    let mut w = csv_writer(path)?;
    let mut header = vec!["sample_id".to_owned(), "label".to_owned()];
    header.extend((0..k).map(|j| format!("p_{j}")));
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for i in 0..n {
        let mut rec = vec![table.sample_ids[i].clone(), table.labels[i].to_string()];
        if let Some(p) = &table.probs {
            rec.extend(p.row(i).iter().map(|&v| format_sig(v, 6)));
        }
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_assignments(path: impl AsRef<Path>) -> Result<AssignmentTable> {
    let path = path.as_ref();
    let mut r = csv_reader(path)?;
    let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    if header.len() < 2 || &header[0] != "sample_id" || &header[1] != "label" {
        return Err(Error::Input(format!("{}: expected header `sample_id,label,…`", path.display())));
    }
    let k = header.len() - 2;
    let mut table = AssignmentTable {
        sample_ids: vec![],
        labels: vec![],
        probs: None,
    };
    let mut probs = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = i + 2;
        table.sample_ids.push(rec[0].to_owned());
        table.labels.push(field(path, line, "label", &rec[1])?);
        for j in 0..k {
            probs.push(field(path, line, &header[j + 2], &rec[j + 2])?);
        }
    }
    if k > 0 {
        table.probs = Some(Matrix::from_vec(table.sample_ids.len(), k, probs)?);
    }
    Ok(table)
}

/// Rows `group,time,survival,at_risk,deaths`, one per death time.
pub fn write_km_curves(path: impl AsRef<Path>, curves: &BTreeMap<usize, KmCurve>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(["group", "time", "survival", "at_risk", "deaths"])
        .map_err(|e| Error::csv(path, e))?;
    for (g, c) in curves {
        for i in 0..c.times.len() {
            w.write_record([
                g.to_string(),
                c.times[i].to_string(),
                c.survival[i].to_string(),
                c.at_risk[i].to_string(),
                c.deaths[i].to_string(),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Groups without deaths have no rows and are absent from the result.
pub fn read_km_curves(path: impl AsRef<Path>) -> Result<BTreeMap<usize, KmCurve>> {
    let path = path.as_ref();
    let mut r = csv_reader(path)?;
    let mut out: BTreeMap<usize, KmCurve> = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = i + 2;
        if rec.len() != 5 {
            return Err(Error::Input(format!("{}: line {line} has {} fields, expected 5", path.display(), rec.len())));
        }
        let g = field(path, line, "group", &rec[0])?;
        let c = out.entry(g).or_insert_with(|| KmCurve {
            times: vec![],
            survival: vec![],
            at_risk: vec![],
            deaths: vec![],
        });
        c.times.push(field(path, line, "time", &rec[1])?);
        c.survival.push(field(path, line, "survival", &rec[2])?);
        c.at_risk.push(field(path, line, "at_risk", &rec[3])?);
        c.deaths.push(field(path, line, "deaths", &rec[4])?);
    }
    Ok(out)
}

/// Rows `sample_id,label,pc_1,…`.
pub fn write_pca(path: impl AsRef<Path>, sample_ids: &[String], labels: &[usize], scores: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    let mut header = vec!["sample_id".to_owned(), "label".to_owned()];
    header.extend((1..=scores.cols()).map(|j| format!("pc_{j}")));
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (i, id) in sample_ids.iter().enumerate() {
        let mut rec = vec![id.clone(), labels[i].to_string()];
        rec.extend(scores.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Rows `reference,cluster,count` for every non-empty cell.
pub fn write_flow(path: impl AsRef<Path>, flow: &FlowTable) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(["reference", "cluster", "count"])
        .map_err(|e| Error::csv(path, e))?;
    for (i, a) in flow.row_labels.iter().enumerate() {
        for (j, b) in flow.col_labels.iter().enumerate() {
            if flow.counts[i][j] > 0 {
                w.write_record([a.to_string(), b.to_string(), flow.counts[i][j].to_string()])
                    .map_err(|e| Error::csv(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Header `sample_id,<feature ids>`, then one row per sample.
pub fn write_expression_csv(path: impl AsRef<Path>, data: &ExpressionDataset) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    let mut header = vec!["sample_id".to_owned()];
    header.extend(data.feature_ids.iter().cloned());
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (i, id) in data.sample_ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(data.values.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Rows `sample_id,time,event`.
pub fn write_survival_csv(path: impl AsRef<Path>, records: &[SurvivalRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(["sample_id", "time", "event"])
        .map_err(|e| Error::csv(path, e))?;
    for r in records {
        w.write_record([r.sample_id.clone(), r.time.to_string(), (r.event as u8).to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Rows `sample_id,label`.
pub fn write_labels_csv(path: impl AsRef<Path>, sample_ids: &[String], labels: &[String]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(["sample_id", "label"])
        .map_err(|e| Error::csv(path, e))?;
    for (id, l) in sample_ids.iter().zip(labels) {
        w.write_record([id, l]).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 50.0;

fn svg_open(title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        s,
        r#"<path d="M{PAD},{PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
        H / 2.0,
        H / 2.0
    );
    s
}

fn legend(s: &mut String, i: usize, label: &str) {
    let y = PAD + 16.0 * i as f64;
    let color = PALETTE[i % PALETTE.len()];
    let _ = writeln!(s, r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/>"#, W - PAD - 90.0, y - 9.0);
    let _ = writeln!(s, r#"<text x="{}" y="{y}">{label}</text>"#, W - PAD - 75.0);
}

/// Step plot of each curve with a dashed vertical at its median survival.
pub fn km_svg(curves: &BTreeMap<usize, KmCurve>, title: &str) -> String {
    let t_max = curves
        .values()
        .flat_map(|c| c.times.last())
        .copied()
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let sx = |t: f64| PAD + t / t_max * (W - 2.0 * PAD);
    let sy = |p: f64| H - PAD - p * (H - 2.0 * PAD);
    let mut s = svg_open(title, "time", "survival probability");
    for (i, (g, c)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut d = format!("M{:.2},{:.2}", sx(0.0), sy(1.0));
        let mut prev = 1.0;
        for (&t, &p) in c.times.iter().zip(&c.survival) {
            let _ = write!(d, " H{:.2} V{:.2}", sx(t), sy(p));
            prev = p;
        }
        let _ = write!(d, " H{:.2} V{:.2}", sx(t_max), sy(prev));
        let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
        if let Some(m) = median_survival(c) {
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}" stroke-dasharray="4 3"/>"#,
                sy(0.0),
                sy(0.5),
                x = sx(m)
            );
        }
        legend(&mut s, i, &format!("cluster {g}"));
    }
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="gray" stroke-dasharray="2 4"/>"#,
        W - PAD,
        y = sy(0.5)
    );
    s.push_str("</svg>\n");
    s
}

/// Scatter of the first two columns of `scores`, colored by label.
pub fn pca_svg(scores: &Matrix, labels: &[usize], title: &str) -> String {
    let col = |j: usize| -> (f64, f64) {
        let v: Vec<f64> = (0..scores.rows()).map(|i| scores[(i, j)]).collect();
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, if hi > lo { hi - lo } else { 1.0 })
    };
    let (x0, xw) = col(0);
    let (y0, yw) = if scores.cols() > 1 { col(1) } else { (0.0, 1.0) };
    let mut s = svg_open(title, "PC 1", "PC 2");
    let mut seen: Vec<usize> = labels.to_vec();
    seen.sort_unstable();
    seen.dedup();
    for i in 0..scores.rows() {
        let x = PAD + (scores[(i, 0)] - x0) / xw * (W - 2.0 * PAD);
        let yv = if scores.cols() > 1 { scores[(i, 1)] } else { 0.0 };
        let y = H - PAD - (yv - y0) / yw * (H - 2.0 * PAD);
        let rank = seen.binary_search(&labels[i]).expect("label present");
        let color = PALETTE[rank % PALETTE.len()];
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{color}" fill-opacity="0.7"/>"#);
    }
    for (i, l) in seen.iter().enumerate() {
        legend(&mut s, i, &format!("cluster {l}"));
    }
    s.push_str("</svg>\n");
    s
}
