//! Consolidated run report: one JSON object and one CSV table assembled
//! from a run directory's artifacts.
//!
//! The report is a pure function of the artifacts, which are themselves a
//! pure function of the configuration, so identical configs produce
//! byte-identical reports.

use std::fs;
use std::path::Path;

use grasp_core::inversion::{inversion_result_from_json, inversion_score, InversionResult};
use grasp_core::metrics::MetricsReport;
use grasp_core::robustness::RobustnessReport;
use grasp_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::pipeline::{fmt_real, read_json, LipschitzProbe, PoisonSummary, RunManifest, Stage};

/// Inversion facts the report keeps; the full result stays in its own file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InversionSummary {
    pub l0_binarized: usize,
    pub l1_mask: f64,
    pub asr_recovered: f64,
    pub selected_restart: usize,
    /// Detection score used by zoo ranking; larger means more suspicious.
    pub score: f64,
}

impl InversionSummary {
    fn from_result(r: &InversionResult) -> Self {
        InversionSummary {
            l0_binarized: r.l0_binarized,
            l1_mask: r.l1_mask,
            asr_recovered: r.asr_recovered,
            selected_restart: r.selected_restart,
            score: inversion_score(r),
        }
    }
}

/// Everything a completed run has to say, in one document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub tool_version: String,
    pub target: Stage,
    pub completed: bool,
    pub poison: Option<PoisonSummary>,
    pub robustness: Option<RobustnessReport>,
    pub lipschitz: Option<LipschitzProbe>,
    pub inversion: Option<InversionSummary>,
    pub inversion_clean: Option<InversionSummary>,
    pub metrics: Option<MetricsReport>,
}

/// Assembles the report from whatever stages the run reached, then writes
/// `report.json` and `report.csv` back into the run directory.
pub fn build_report(dir: &Path) -> Result<RunReport> {
    let manifest = RunManifest::load(dir).map_err(|e| {
        Error::Config(format!("not a run directory {}: {e}", dir.display()))
    })?;
    let ran = |stage: Stage| manifest.stages.iter().any(|s| s.stage == stage);

    let poison = if ran(Stage::Poison) {
        Some(read_json::<PoisonSummary>(dir, "poison.json")?)
    } else {
        None
    };
    let robustness = if ran(Stage::Robustness) {
        Some(read_json::<RobustnessReport>(dir, "robustness.json")?)
    } else {
        None
    };
    let lipschitz = if ran(Stage::Robustness) {
        Some(read_json::<LipschitzProbe>(dir, "lipschitz.json")?)
    } else {
        None
    };
    let (inversion, inversion_clean) = if ran(Stage::Inversion) {
        let main = load_inversion(dir, "inversion.json")?;
        let twin = load_inversion(dir, "inversion_clean.json")?;
        (
            Some(InversionSummary::from_result(&main)),
            Some(InversionSummary::from_result(&twin)),
        )
    } else {
        (None, None)
    };
    let metrics = if ran(Stage::Metrics) {
        Some(read_json::<MetricsReport>(dir, "metrics.json")?)
    } else {
        None
    };

    let report = RunReport {
        config_hash: manifest.config_hash,
        tool_version: manifest.tool_version,
        target: manifest.target,
        completed: manifest.completed,
        poison,
        robustness,
        lipschitz,
        inversion,
        inversion_clean,
        metrics,
    };

    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(dir.join("report.json"), text)?;
    fs::write(dir.join("report.csv"), report_csv(&report))?;
    Ok(report)
}

fn load_inversion(dir: &Path, name: &str) -> Result<InversionResult> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(|e| {
        Error::Config(format!("missing artifact {}: {e}", path.display()))
    })?;
    inversion_result_from_json(&text)
}

/// Flat `metric,value` table with a fixed row order. Reals carry 9
/// significant digits; counts stay integral.
fn report_csv(report: &RunReport) -> String {
    let mut rows: Vec<(String, String)> = vec![(
        "config_hash".into(),
        report.config_hash.clone(),
    )];
    if let Some(p) = &report.poison {
        rows.push(("poison_clean".into(), p.counts.clean.to_string()));
        rows.push(("poison_trigger_target".into(), p.counts.trigger_target.to_string()));
        rows.push(("poison_noisy_source".into(), p.counts.noisy_source.to_string()));
        rows.push(("poison_total".into(), p.total.to_string()));
    }
    if let Some(r) = &report.robustness {
        if let Some(v) = r.trigger_mean {
            rows.push(("robustness_trigger_mean".into(), fmt_real(v)));
        }
        if let Some(v) = r.obstructed_mean {
            rows.push(("robustness_obstructed_mean".into(), fmt_real(v)));
        }
        if let Some(v) = r.ratio {
            rows.push(("robustness_ratio".into(), fmt_real(v)));
        }
        rows.push(("robustness_not_astute".into(), r.not_astute.to_string()));
    }
    if let Some(l) = &report.lipschitz {
        rows.push(("lipschitz_mean".into(), fmt_real(l.mean)));
    }
    if let Some(i) = &report.inversion {
        rows.push(("inversion_l0".into(), i.l0_binarized.to_string()));
        rows.push(("inversion_l1".into(), fmt_real(i.l1_mask)));
        rows.push(("inversion_asr".into(), fmt_real(i.asr_recovered)));
        rows.push(("inversion_score".into(), fmt_real(i.score)));
    }
    if let Some(m) = &report.metrics {
        rows.push(("asr_before".into(), fmt_real(m.asr_before)));
        rows.push(("asr_after_unlearn".into(), fmt_real(m.asr_after_unlearn)));
        rows.push(("epsilon1".into(), fmt_real(m.epsilon1)));
        rows.push(("epsilon2".into(), fmt_real(m.epsilon2)));
        rows.push(("epsilon3".into(), fmt_real(m.epsilon3)));
        rows.push(("clean_accuracy".into(), fmt_real(m.clean_accuracy)));
        rows.push((
            "clean_accuracy_after_unlearn".into(),
            fmt_real(m.clean_accuracy_after_unlearn),
        ));
    }
    let mut csv = String::from("metric,value\n");
    for (k, v) in rows {
        csv.push_str(&k);
        csv.push(',');
        csv.push_str(&v);
        csv.push('\n');
    }
    csv
}

/// One-screen text rendering for the terminal.
pub fn render_text(report: &RunReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "run {} (tool {}, target {}, {})\n",
        report.config_hash,
        report.tool_version,
        report.target.name(),
        if report.completed { "completed" } else { "partial" }
    ));
    if let Some(p) = &report.poison {
        out.push_str(&format!(
            "  poison: {} clean, {} trigger-target, {} noisy-source ({} total)\n",
            p.counts.clean, p.counts.trigger_target, p.counts.noisy_source, p.total
        ));
    }
    if let Some(r) = &report.robustness {
        let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        out.push_str(&format!(
            "  robustness: r_t {} r_b {} ratio {} (not astute {})\n",
            show(r.trigger_mean),
            show(r.obstructed_mean),
            show(r.ratio),
            r.not_astute
        ));
    }
    if let Some(l) = &report.lipschitz {
        out.push_str(&format!(
            "  lipschitz: mean {:.4} at radius {}\n",
            l.mean, l.radius
        ));
    }
    if let Some(i) = &report.inversion {
        out.push_str(&format!(
            "  inversion: l0 {} l1 {:.3} recovered asr {:.4} score {:.1}\n",
            i.l0_binarized, i.l1_mask, i.asr_recovered, i.score
        ));
    }
    if let Some(m) = &report.metrics {
        out.push_str(&format!(
            "  metrics: asr {:.4} -> {:.4} (eps1 {:.4}) eps2 {:.4} eps3 {:.4} acc {:.4} -> {:.4}\n",
            m.asr_before,
            m.asr_after_unlearn,
            m.epsilon1,
            m.epsilon2,
            m.epsilon3,
            m.clean_accuracy,
            m.clean_accuracy_after_unlearn
        ));
    }
    out
}
