//! Rendered views of a [`MetricsReport`]: a sectioned CSV, a Markdown
//! document with the same numbers, radar-chart JSON, and sweep grids.
//!
//! Both textual renderers format through the same helpers, so a value always
//! prints identically (2 decimals, `-` for missing) in CSV and Markdown.

use serde::Serialize;

use crate::corpus::{DimensionName, ModifierCategory};
use crate::error::{Error, Result};
use crate::metrics::{CbsColumn, CellReport, DemographicFrequency, MetricsReport};

fn fmt_value(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.2}"),
        None => "-".to_string(),
    }
}

fn fmt_axis_value(value: f64) -> String {
    format!("{value}")
}

fn cell_for(
    report: &MetricsReport,
    dimension: DimensionName,
    category: ModifierCategory,
) -> Option<&CellReport> {
    report
        .cells
        .iter()
        .find(|c| c.dimension == dimension && c.category == category)
}

/// Dimensions that actually appear in the report, in canonical order.
fn dimensions_present(report: &MetricsReport) -> Vec<DimensionName> {
    DimensionName::ALL
        .into_iter()
        .filter(|d| report.cells.iter().any(|c| c.dimension == *d))
        .collect()
}

/// Single CSV file with `#`-labeled sections: cbs, ufs, sd, frequencies,
/// and pass@k (the last only when pass@k rows exist).
pub fn render_csv(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str("# cbs\n");
    out.push_str("group,records,biased,percent\n");
    for column in &report.cbs {
        out.push_str(&format!(
            "{},{},{},{}\n",
            column.group.header(),
            column.records,
            column.biased,
            fmt_value(column.percent)
        ));
    }

    for (section, value_of) in [
        ("ufs", (|cell: &CellReport| cell.ufs) as fn(&CellReport) -> Option<f64>),
        ("sd", |cell: &CellReport| cell.sd),
    ] {
        out.push_str(&format!("\n# {section}\n"));
        out.push_str("dimension");
        for category in ModifierCategory::ALL {
            out.push(',');
            out.push_str(category.token());
        }
        out.push('\n');
        for dimension in dimensions_present(report) {
            out.push_str(dimension.token());
            for category in ModifierCategory::ALL {
                out.push(',');
                let value = cell_for(report, dimension, category).and_then(value_of);
                out.push_str(&fmt_value(value));
            }
            out.push('\n');
        }
    }

    out.push_str("\n# frequencies\n");
    out.push_str("dimension,category,demographic,count,percent,sample_ratio\n");
    for cell in &report.cells {
        for entry in &cell.frequencies {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                cell.dimension.token(),
                cell.category.token(),
                entry.demographic,
                entry.count,
                fmt_value(Some(entry.percent)),
                fmt_value(Some(entry.sample_ratio)),
            ));
        }
    }

    if !report.pass_at_k.is_empty() {
        out.push_str("\n# pass@k\n");
        out.push_str("k,value\n");
        for row in &report.pass_at_k {
            out.push_str(&format!("{},{}\n", row.k, fmt_value(Some(row.value))));
        }
    }
    out
}

/// Markdown document carrying exactly the numbers of [`render_csv`].
pub fn render_markdown(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str("# Bias audit report\n\n");

    out.push_str("## Code bias score\n\n");
    out.push_str("| Group | Records | Biased | CBS |\n");
    out.push_str("| --- | ---: | ---: | ---: |\n");
    for column in &report.cbs {
        out.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            column.group.header(),
            column.records,
            column.biased,
            fmt_value(column.percent)
        ));
    }

    for (title, value_of) in [
        (
            "Unfairness score",
            (|cell: &CellReport| cell.ufs) as fn(&CellReport) -> Option<f64>,
        ),
        ("Demographic spread", |cell: &CellReport| cell.sd),
    ] {
        out.push_str(&format!("\n## {title}\n\n"));
        out.push_str("| Dimension |");
        for category in ModifierCategory::ALL {
            out.push_str(&format!(" {} |", category.token()));
        }
        out.push_str("\n| --- |");
        for _ in ModifierCategory::ALL {
            out.push_str(" ---: |");
        }
        out.push('\n');
        for dimension in dimensions_present(report) {
            out.push_str(&format!("| {} |", dimension.token()));
            for category in ModifierCategory::ALL {
                let value = cell_for(report, dimension, category).and_then(value_of);
                out.push_str(&format!(" {} |", fmt_value(value)));
            }
            out.push('\n');
        }
    }

    out.push_str("\n## Demographic frequencies\n\n");
    out.push_str("| Dimension | Category | Demographic | Count | % of biased | % of records |\n");
    out.push_str("| --- | --- | --- | ---: | ---: | ---: |\n");
    for cell in &report.cells {
        for entry in &cell.frequencies {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} |\n",
                cell.dimension.token(),
                cell.category.token(),
                entry.demographic,
                entry.count,
                fmt_value(Some(entry.percent)),
                fmt_value(Some(entry.sample_ratio)),
            ));
        }
    }

    if !report.pass_at_k.is_empty() {
        out.push_str("\n## Functional correctness\n\n");
        out.push_str("| k | pass@k |\n");
        out.push_str("| ---: | ---: |\n");
        for row in &report.pass_at_k {
            out.push_str(&format!("| {} | {} |\n", row.k, fmt_value(Some(row.value))));
        }
    }
    out
}

/// Full-precision JSON of the report itself.
pub fn render_json(report: &MetricsReport) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| Error::json("metrics report", e))
}

/// Per-cell demographic proportions, shaped for radar-style charts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadarCell {
    pub dimension: DimensionName,
    pub category: ModifierCategory,
    pub entries: Vec<DemographicFrequency>,
}

pub fn radar_data(report: &MetricsReport) -> Vec<RadarCell> {
    report
        .cells
        .iter()
        .map(|cell| RadarCell {
            dimension: cell.dimension,
            category: cell.category,
            entries: cell.frequencies.clone(),
        })
        .collect()
}

pub fn render_radar_json(report: &MetricsReport) -> Result<String> {
    serde_json::to_string_pretty(&radar_data(report)).map_err(|e| Error::json("radar data", e))
}

/// One sweep grid row: the swept parameter value plus that run's CBS columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub columns: Vec<CbsColumn>,
}

/// CSV grid over sweep runs: `value,RobNeg,RandNeg,RandPos,Comp,Tot`.
pub fn render_sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("value");
    for group in crate::metrics::CbsGroup::ALL {
        out.push(',');
        out.push_str(group.header());
    }
    out.push('\n');
    for row in rows {
        out.push_str(&fmt_axis_value(row.value));
        for column in &row.columns {
            out.push(',');
            out.push_str(&fmt_value(column.percent));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{CbsGroup, PassAtKRow};

    fn sample_report() -> MetricsReport {
        MetricsReport {
            cbs: CbsGroup::ALL
                .into_iter()
                .enumerate()
                .map(|(i, group)| CbsColumn {
                    group,
                    records: 100,
                    biased: 10 + i as u64,
                    percent: if group == CbsGroup::RandomPos {
                        None
                    } else {
                        Some(10.0 + i as f64)
                    },
                })
                .collect(),
            cells: vec![
                CellReport {
                    dimension: DimensionName::Ethnicity,
                    category: ModifierCategory::RobertaNeg,
                    records: 100,
                    n_bias: 5,
                    frequencies: vec![
                        DemographicFrequency {
                            demographic: "white".into(),
                            count: 3,
                            percent: 60.0,
                            sample_ratio: 3.0,
                        },
                        DemographicFrequency {
                            demographic: "black".into(),
                            count: 2,
                            percent: 40.0,
                            sample_ratio: 2.0,
                        },
                    ],
                    ufs: Some(1.0 / 3.0),
                    sd: Some(10.0),
                },
                CellReport {
                    dimension: DimensionName::Religion,
                    category: ModifierCategory::ComparativePos,
                    records: 50,
                    n_bias: 0,
                    frequencies: vec![],
                    ufs: None,
                    sd: None,
                },
            ],
            pass_at_k: vec![PassAtKRow {
                k: 1,
                value: 21.556,
            }],
        }
    }

    #[test]
    fn csv_has_all_sections_and_formatting() {
        let csv = render_csv(&sample_report());
        assert!(csv.starts_with("# cbs\ngroup,records,biased,percent\n"));
        assert!(csv.contains("RobNeg,100,10,10.00\n"));
        assert!(csv.contains("RandPos,100,12,-\n"));
        assert!(csv.contains("\n# ufs\n"));
        assert!(csv.contains("dimension,roberta-neg,random-neg,random-pos,comparative-neg,comparative-pos\n"));
        assert!(csv.contains("ethnicity,0.33,-,-,-,-\n"));
        assert!(csv.contains("religion,-,-,-,-,-\n"));
        assert!(csv.contains("\n# sd\n"));
        assert!(csv.contains("ethnicity,10.00,-,-,-,-\n"));
        assert!(csv.contains("\n# frequencies\n"));
        assert!(csv.contains("ethnicity,roberta-neg,white,3,60.00,3.00\n"));
        assert!(csv.contains("\n# pass@k\nk,value\n1,21.56\n"));
    }

    #[test]
    fn markdown_carries_the_same_numbers() {
        let report = sample_report();
        let md = render_markdown(&report);
        for cell in ["10.00", "0.33", "10.00", "60.00", "40.00", "21.56", "| - |"] {
            assert!(md.contains(cell), "missing {cell} in markdown");
        }
        assert!(md.contains("| RobNeg | 100 | 10 | 10.00 |"));
        assert!(md.contains("| RandPos | 100 | 12 | - |"));
        assert!(md.contains("| ethnicity | 0.33 | - | - | - | - |"));
    }

    #[test]
    fn negative_ufs_renders_with_sign_in_both_views() {
        let mut report = sample_report();
        report.cells[0].ufs = Some(-0.24);
        let csv = render_csv(&report);
        let md = render_markdown(&report);
        assert!(csv.contains("ethnicity,-0.24,"));
        assert!(md.contains("| ethnicity | -0.24 |"));
    }

    #[test]
    fn radar_mirrors_cell_frequencies() {
        let report = sample_report();
        let radar = radar_data(&report);
        assert_eq!(radar.len(), 2);
        assert_eq!(radar[0].entries.len(), 2);
        assert_eq!(radar[0].entries[0].demographic, "white");
        let json = render_radar_json(&report).unwrap();
        assert!(json.contains("\"sample_ratio\": 3.0"));
    }

    #[test]
    fn json_round_trips_full_precision() {
        let report = sample_report();
        let json = render_json(&report).unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.cells[0].ufs, Some(1.0 / 3.0));
    }

    #[test]
    fn sweep_grid_layout() {
        let report = sample_report();
        let rows = vec![
            SweepRow {
                value: 0.1,
                columns: report.cbs.clone(),
            },
            SweepRow {
                value: 0.2,
                columns: report.cbs.clone(),
            },
        ];
        let csv = render_sweep_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("value,RobNeg,RandNeg,RandPos,Comp,Tot"));
        assert_eq!(lines.next(), Some("0.1,10.00,11.00,-,13.00,14.00"));
        assert_eq!(lines.next(), Some("0.2,10.00,11.00,-,13.00,14.00"));
    }
}
