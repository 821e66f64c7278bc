//! Render a [`MetricsReport`] as markdown tables, CSV, or JSON. Markdown
//! rounds to two decimals and prints "-" for metrics a category does not
//! measure; CSV and JSON keep full precision.

use std::fmt;
use std::str::FromStr;

use crate::corpus::IssueCategory;
use crate::eval::{GroupRow, MetricsReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown format {other:?}, expected markdown, csv, or json")),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Markdown => "markdown",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        })
    }
}

/// Human display for a strategy label: `cot` → `CoT`, `dfsdt+awn` →
/// `DFSDT + AwN`.
pub fn strategy_display(label: &str) -> String {
    let (core, awn) = match label.strip_suffix("+awn") {
        Some(core) => (core, true),
        None => (label, false),
    };
    let core = match core {
        "cot" => "CoT".to_string(),
        "dfsdt" => "DFSDT".to_string(),
        other => other.to_string(),
    };
    if awn {
        format!("{core} + AwN")
    } else {
        core
    }
}

/// Two-decimal cell, "-" when the metric was not measured.
fn cell(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.2}"),
        None => "-".to_string(),
    }
}

/// The (model, strategy) lanes present, in report order.
fn lanes(report: &MetricsReport) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for row in &report.rows {
        let key = (row.model.clone(), row.strategy.clone());
        if !out.contains(&key) {
            out.push(key);
        }
    }
    out
}

fn lane_row<'a>(
    report: &'a MetricsReport,
    model: &str,
    strategy: &str,
    category: IssueCategory,
) -> Option<&'a GroupRow> {
    report.row(model, strategy, category)
}

/// Markdown report: an accuracy table (per-category A1/A2/A3, refusal-only
/// for IBTC), an efficiency table (Re and Steps), and the any-matched A1
/// variant.
pub fn render_markdown(report: &MetricsReport) -> String {
    use IssueCategory::*;
    let mut out = String::from("# Results\n\n## Accuracy\n\n");
    out.push_str(
        "| Model | Framework | IMKI A1 | IMKI A2 | IMKI A3 | IMR A1 | IMR A2 | IMR A3 \
         | IwE A1 | IwE A2 | IwE A3 | IBTC A1 |\n",
    );
    out.push_str(
        "|---|---|---|---|---|---|---|---|---|---|---|---|\n",
    );
    for (model, strategy) in lanes(report) {
        let mut cells: Vec<String> = vec![model.clone(), strategy_display(&strategy)];
        for category in [Imki, Imr, Iwe] {
            let row = lane_row(report, &model, &strategy, category);
            cells.push(cell(row.map(|r| r.a1)));
            cells.push(cell(row.and_then(|r| r.a2)));
            cells.push(cell(row.and_then(|r| r.a3)));
        }
        let ibtc = lane_row(report, &model, &strategy, Ibtc);
        cells.push(cell(ibtc.map(|r| r.a1)));
        out.push_str(&format!("| {} |\n", cells.join(" | ")));
    }

    out.push_str("\n## Efficiency\n\n");
    out.push_str(
        "| Model | Framework | IMKI Re | IMKI Steps | IMR Re | IMR Steps | IwE Re | IwE Steps \
         | IBTC Re | IBTC Steps |\n",
    );
    out.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for (model, strategy) in lanes(report) {
        let mut cells: Vec<String> = vec![model.clone(), strategy_display(&strategy)];
        for category in IssueCategory::ALL {
            let row = lane_row(report, &model, &strategy, category);
            cells.push(cell(row.and_then(|r| r.redundancy)));
            cells.push(cell(row.map(|r| r.steps)));
        }
        out.push_str(&format!("| {} |\n", cells.join(" | ")));
    }

    out.push_str("\n## Asking accuracy, any-matched variant\n\n");
    out.push_str("| Model | Framework | IMKI A1 (any) | IMR A1 (any) | IwE A1 (any) | IBTC A1 (any) |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    for (model, strategy) in lanes(report) {
        let mut cells: Vec<String> = vec![model.clone(), strategy_display(&strategy)];
        for category in IssueCategory::ALL {
            let row = lane_row(report, &model, &strategy, category);
            cells.push(cell(row.map(|r| r.a1_any)));
        }
        out.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_num(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// CSV report: one line per (model, strategy, category) group, full
/// precision, empty cells for unmeasured metrics.
pub fn render_csv(report: &MetricsReport) -> String {
    let mut out =
        String::from("model,strategy,category,episodes,a1,a1_any,a2,a3,redundancy,steps\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            csv_field(&row.model),
            csv_field(&row.strategy),
            row.category,
            row.episodes,
            row.a1,
            row.a1_any,
            csv_num(row.a2),
            csv_num(row.a3),
            csv_num(row.redundancy),
            row.steps,
        ));
    }
    out
}

/// JSON report: the aggregate rows verbatim, full precision.
pub fn render_json(report: &MetricsReport) -> String {
    let mut out = serde_json::to_string_pretty(report).expect("reports serialize");
    out.push('\n');
    out
}

/// Render in the requested format.
pub fn render_report(report: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => render_markdown(report),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Json => render_json(report),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(
        model: &str,
        strategy: &str,
        category: IssueCategory,
        a1: f64,
        a2: Option<f64>,
        a3: Option<f64>,
        redundancy: Option<f64>,
        steps: f64,
    ) -> GroupRow {
        GroupRow {
            model: model.into(),
            strategy: strategy.into(),
            category,
            episodes: 2,
            a1,
            a1_any: a1,
            a2,
            a3,
            redundancy,
            steps,
        }
    }

    #[test]
    fn strategy_display_names() {
        assert_eq!(strategy_display("cot"), "CoT");
        assert_eq!(strategy_display("cot+awn"), "CoT + AwN");
        assert_eq!(strategy_display("dfsdt"), "DFSDT");
        assert_eq!(strategy_display("dfsdt+awn"), "DFSDT + AwN");
        assert_eq!(strategy_display("custom"), "custom");
    }

    #[test]
    fn markdown_single_group_renders_one_row_with_dashes_elsewhere() {
        let report = MetricsReport {
            rows: vec![row(
                "m",
                "cot",
                IssueCategory::Imki,
                0.5,
                Some(1.0),
                Some(0.0),
                Some(1.5),
                4.0,
            )],
        };
        let md = render_markdown(&report);
        let accuracy_row = md.lines().find(|l| l.starts_with("| m |")).unwrap();
        assert_eq!(
            accuracy_row,
            "| m | CoT | 0.50 | 1.00 | 0.00 | - | - | - | - | - | - | - |"
        );
    }

    #[test]
    fn markdown_ibtc_group_shows_dashes_for_unmeasured_metrics() {
        let report = MetricsReport {
            rows: vec![row("m", "dfsdt+awn", IssueCategory::Ibtc, 1.0, None, None, None, 1.5)],
        };
        let md = render_markdown(&report);
        let accuracy_row = md.lines().find(|l| l.starts_with("| m |")).unwrap();
        // All nine of the non-IBTC accuracy cells are dashes; IBTC A1 is 1.00.
        assert_eq!(
            accuracy_row,
            "| m | DFSDT + AwN | - | - | - | - | - | - | - | - | - | 1.00 |"
        );
        let efficiency_row =
            md.lines().filter(|l| l.starts_with("| m |")).nth(1).unwrap();
        assert_eq!(
            efficiency_row,
            "| m | DFSDT + AwN | - | - | - | - | - | - | - | 1.50 |"
        );
    }

    #[test]
    fn markdown_reference_lane_renders_published_cells() {
        let report = MetricsReport {
            rows: vec![row(
                "gpt-4o",
                "cot",
                IssueCategory::Imki,
                0.52,
                Some(0.48),
                Some(0.34),
                Some(0.1),
                5.0,
            )],
        };
        let md = render_markdown(&report);
        assert!(md.contains("| gpt-4o | CoT | 0.52 | 0.48 | 0.34 |"), "{md}");
    }

    #[test]
    fn csv_keeps_full_precision_and_empty_unmeasured_cells() {
        let third = 1.0 / 3.0;
        let report = MetricsReport {
            rows: vec![
                row("m", "cot", IssueCategory::Imki, third, Some(third), None, Some(0.5), 4.25),
                row("m", "cot", IssueCategory::Ibtc, 1.0, None, None, None, 2.0),
            ],
        };
        let csv = render_csv(&report);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "model,strategy,category,episodes,a1,a1_any,a2,a3,redundancy,steps"
        );
        let imki = lines.next().unwrap();
        assert!(imki.starts_with("m,cot,IMKI,2,0.3333333333333333,"), "{imki}");
        let ibtc = lines.next().unwrap();
        assert_eq!(ibtc, "m,cot,IBTC,2,1,1,,,,2");
    }

    #[test]
    fn json_round_trips_the_report() {
        let report = MetricsReport {
            rows: vec![row("m", "cot", IssueCategory::Imr, 0.5, Some(0.25), Some(1.0), Some(0.0), 3.5)],
        };
        let text = render_json(&report);
        let back: MetricsReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn formats_parse_from_strings() {
        assert_eq!("markdown".parse::<ReportFormat>().unwrap(), ReportFormat::Markdown);
        assert_eq!("md".parse::<ReportFormat>().unwrap(), ReportFormat::Markdown);
        assert_eq!("CSV".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert_eq!("json".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
        assert!("yaml".parse::<ReportFormat>().is_err());
    }
}
