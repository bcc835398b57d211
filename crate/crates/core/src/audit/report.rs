use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::AttackKind;
use crate::encoders::Family;
use crate::error::{Error, Result};

/// Metrics of one (dataset, family, attack) combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub dataset: String,
    pub family: Family,
    pub attack: AttackKind,
    pub auc: f64,
    pub tpr_at_alpha: f64,
    /// Test-split false-positive rate at `threshold`.
    pub fpr: f64,
    pub adv: f64,
    pub threshold: f64,
    pub cal_fpr: f64,
    pub config_fingerprint: String,
}

/// Learned minus score-only AUC for one (dataset, family).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaAuc {
    pub dataset: String,
    pub family: Family,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub config_fingerprint: String,
    pub cells: Vec<ReportCell>,
    pub delta_auc: Vec<DeltaAuc>,
}

pub const CELLS_CSV_HEADER: &str = "dataset,family,attack,auc,tpr_at_alpha,fpr,adv,threshold,cal_fpr,config_fingerprint";

impl AuditReport {
    pub fn new(config_fingerprint: String, cells: Vec<ReportCell>) -> Self {
        let mut report = Self {
            config_fingerprint,
            cells,
            delta_auc: Vec::new(),
        };
        report.recompute_delta_auc();
        report
    }

    /// Fills `delta_auc` for every (dataset, family) that has both a score
    /// and a learned cell.
    pub fn recompute_delta_auc(&mut self) {
        let mut out = Vec::new();
        for c in self.cells.iter().filter(|c| c.attack == AttackKind::Learned) {
            if let Some(s) = self.cell(&c.dataset, c.family, AttackKind::Score) {
                out.push(DeltaAuc {
                    dataset: c.dataset.clone(),
                    family: c.family,
                    value: c.auc - s.auc,
                });
            }
        }
        self.delta_auc = out;
    }

    pub fn cell(&self, dataset: &str, family: Family, attack: AttackKind) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.dataset == dataset && c.family == family && c.attack == attack)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(path, format!("not an audit report: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn cells_csv(&self) -> String {
        let mut out = String::from(CELLS_CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{}",
                c.dataset, c.family, c.attack, c.auc, c.tpr_at_alpha, c.fpr, c.adv, c.threshold, c.cal_fpr, c.config_fingerprint
            );
        }
        out
    }

    /// `[AUC|TPR|Adv]` table, one row per (dataset, family, attack);
    /// negative advantages are shown as 0 when `clip_negative_adv` is set.
    pub fn triples_table(&self, clip_negative_adv: bool) -> String {
        let mut out = String::from("dataset,family,attack,triple\n");
        for c in &self.cells {
            let adv = if clip_negative_adv { c.adv.max(0.0) } else { c.adv };
            let _ = writeln!(
                out,
                "{},{},{},[{:.3}|{:.3}|{:.3}]",
                c.dataset, c.family, c.attack, c.auc, c.tpr_at_alpha, adv
            );
        }
        out
    }

    pub fn datasets(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for c in &self.cells {
            if !seen.contains(&c.dataset) {
                seen.push(c.dataset.clone());
            }
        }
        seen
    }

    pub fn families(&self) -> Vec<Family> {
        self.cells.iter().map(|c| c.family).collect::<BTreeSet<_>>().into_iter().collect()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Red for negative, blue for positive, white at zero; `scale` is the
/// magnitude mapped to full saturation.
fn signed_color(value: f64, scale: f64) -> String {
    let t = if scale > 0.0 { (value / scale).clamp(-1.0, 1.0) } else { 0.0 };
    let fade = |t: f64| (255.0 * (1.0 - t.abs())).round() as u8;
    if t >= 0.0 {
        format!("#{:02x}{:02x}ff", fade(t), fade(t))
    } else {
        format!("#ff{:02x}{:02x}", fade(t), fade(t))
    }
}

/// Datasets x families grid of learned-minus-score AUC.
pub fn render_delta_heatmap(report: &AuditReport) -> String {
    let datasets = report.datasets();
    let families = report.families();
    let (cw, ch, left, top) = (110.0, 36.0, 140.0, 60.0);
    let width = left + cw * families.len() as f64 + 20.0;
    let height = top + ch * datasets.len() as f64 + 50.0;
    let scale = report
        .delta_auc
        .iter()
        .map(|d| d.value.abs())
        .fold(0.0, f64::max)
        .max(1e-9);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">AUC(learned) - AUC(score)</text>"#,
        width / 2.0
    );
    for (j, f) in families.iter().enumerate() {
        let x = left + cw * (j as f64 + 0.5);
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, top - 8.0, escape(f.as_str()));
    }
    for (i, d) in datasets.iter().enumerate() {
        let y = top + ch * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            left - 8.0,
            y + ch / 2.0 + 4.0,
            escape(d)
        );
        for (j, f) in families.iter().enumerate() {
            let x = left + cw * j as f64;
            let delta = report.delta_auc.iter().find(|e| &e.dataset == d && e.family == *f);
            let (fill, label) = match delta {
                Some(e) => (signed_color(e.value, scale), format!("{:+.3}", e.value)),
                None => ("#dddddd".to_string(), "n/a".to_string()),
            };
            let _ = writeln!(
                s,
                r##"<rect class="cell" x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{fill}" stroke="#555555"/>"##
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#,
                x + cw / 2.0,
                y + ch / 2.0 + 4.0
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="{}">blue: learned stronger, red: score-only stronger (full colour at {scale:.3})</text>"#,
        top + ch * datasets.len() as f64 + 30.0
    );
    s.push_str("</svg>\n");
    s
}

/// AUC of every cell by dataset, with a dashed chance line at 0.5.
pub fn render_auc_scatter(report: &AuditReport) -> String {
    let datasets = report.datasets();
    let (left, top, pw, ph) = (60.0, 40.0, 120.0 * datasets.len().max(1) as f64, 300.0);
    let width = left + pw + 160.0;
    let height = top + ph + 60.0;
    let y_of = |auc: f64| top + ph * (1.0 - auc.clamp(0.0, 1.0));
    let colors = [("score", "#1f77b4"), ("learned", "#d62728"), ("embedding", "#2ca02c")];
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333333"/>"##
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = y_of(tick);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{tick:.2}</text>"#, left - 6.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        r##"<line class="chance" x1="{left}" y1="{y}" x2="{}" y2="{y}" stroke="#777777" stroke-dasharray="6,4"/>"##,
        left + pw,
        y = y_of(0.5)
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{}" transform="rotate(-90 20 {})" text-anchor="middle">subject-level AUC</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    let slot = pw / datasets.len().max(1) as f64;
    for (i, d) in datasets.iter().enumerate() {
        let cx = left + slot * (i as f64 + 0.5);
        let _ = writeln!(s, r#"<text x="{cx}" y="{}" text-anchor="middle">{}</text>"#, top + ph + 18.0, escape(d));
        let cells: Vec<_> = report.cells.iter().filter(|c| &c.dataset == d).collect();
        let spread = slot * 0.6;
        for (k, c) in cells.iter().enumerate() {
            let x = if cells.len() > 1 {
                cx - spread / 2.0 + spread * k as f64 / (cells.len() - 1) as f64
            } else {
                cx
            };
            let color = colors.iter().find(|(a, _)| *a == c.attack.as_str()).map_or("#000000", |(_, col)| col);
            let _ = writeln!(
                s,
                r#"<circle class="point" cx="{x:.2}" cy="{:.2}" r="4" fill="{color}"><title>{} {} {}: {:.3}</title></circle>"#,
                y_of(c.auc),
                escape(d),
                c.family,
                c.attack,
                c.auc
            );
        }
    }
    for (k, (name, color)) in colors.iter().enumerate() {
        let y = top + 10.0 + 18.0 * k as f64;
        let _ = writeln!(s, r#"<circle cx="{}" cy="{y}" r="4" fill="{color}"/>"#, left + pw + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{name}</text>"#, left + pw + 30.0, y + 4.0);
    }
    s.push_str("</svg>\n");
    s
}
