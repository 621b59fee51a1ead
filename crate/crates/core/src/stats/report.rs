use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{cohens_d, GroupSummary, StatReport, StatResult};

/// Cohen's d recomputed from a published final-alignment summary, next to
/// the effect size printed alongside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCheck {
    pub factual: GroupSummary,
    pub halluc: GroupSummary,
    pub computed_d: f64,
    pub printed_d: f64,
    pub note: String,
}

pub fn reference_effect_check() -> ReferenceCheck {
    let factual = GroupSummary { n: 0, mean: 0.855, std: 0.089 };
    let halluc = GroupSummary { n: 0, mean: -0.285, std: 0.312 };
    let (computed_d, _) = cohens_d(&factual, &halluc).expect("reference spread is positive");
    let printed_d = 2.868;
    ReferenceCheck {
        factual,
        halluc,
        computed_d,
        printed_d,
        note: format!(
            "(m_f - m_h) / sqrt((s_f^2 + s_h^2) / 2) on the reference summary gives d = {computed_d:.3}; \
             the reference table prints d = {printed_d}. The two are inconsistent; this tool reports the formula value."
        ),
    }
}

fn fmt_p(p: f64) -> String {
    if p == 0.0 {
        "0".into()
    } else if p < 1e-3 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.3}")
    } else if x > 0.0 {
        "inf".into()
    } else if x < 0.0 {
        "-inf".into()
    } else {
        "nan".into()
    }
}

fn table(out: &mut String, rows: &[StatResult]) {
    out.push_str("| Metric | Factual mean ± std | Hallucinated mean ± std | t | dof | p | p (Bonferroni) | Cohen's d |\n");
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {:.3} ± {:.3} | {:.3} ± {:.3} | {} | {:.1} | {} | {} | {} |",
            r.metric_name,
            r.group_factual.mean,
            r.group_factual.std,
            r.group_halluc.mean,
            r.group_halluc.std,
            fmt_num(r.t_stat),
            r.dof,
            fmt_p(r.p_value),
            fmt_p(r.p_bonferroni),
            fmt_num(r.cohens_d),
        );
    }
}

pub fn render_markdown(report: &StatReport, check: &ReferenceCheck) -> String {
    let mut out = String::new();
    let (nf, nh) = report.metrics.first().map_or((0, 0), |r| (r.group_factual.n, r.group_halluc.n));
    let _ = writeln!(out, "# Trajectory statistics\n");
    let _ = writeln!(out, "Test: {:?}. Factual n = {nf}, hallucinated n = {nh}.\n", report.mode);
    let _ = writeln!(out, "## Scalar metrics (Bonferroni m = {})\n", report.metrics.len());
    table(&mut out, &report.metrics);
    out.push_str(
        "\nStability is the population std of alignment over the last third of layers. \
         Oscillation counts sign changes of the layer-to-layer alignment change. \
         Smoothness is 1 minus a quarter of the mean second-difference norm. \
         These three follow this tool's own definitions.\n",
    );
    let _ = writeln!(out, "\n## Alignment per layer (Bonferroni m = {})\n", report.layers.len());
    table(&mut out, &report.layers);
    let _ = writeln!(out, "\n## Reference summary check\n");
    let _ = writeln!(
        out,
        "Factual {:.3} ± {:.3} vs hallucinated {:.3} ± {:.3}: d = {:.2} (printed: {}).\n",
        check.factual.mean,
        check.factual.std,
        check.halluc.mean,
        check.halluc.std,
        check.computed_d,
        check.printed_d
    );
    let _ = writeln!(out, "{}", check.note);
    out
}
