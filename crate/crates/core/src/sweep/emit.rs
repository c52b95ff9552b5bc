//! Artifact emission: tables, heatmaps, summaries, curves, timelines.
//!
//! Every emitter writes deterministically: equal results produce byte-equal
//! artifacts, so reproducibility checks can diff files directly.

use super::{SweepCell, SweepError, SweepResult, CELL_VALUE_FIELDS};
use crate::pipeline::StageSpan;
use crate::rollout::OccupancySample;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    AlignedText,
}

/// Three significant digits: "1.35", "12.7", "123", "0.0525".
fn fmt_sig3(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0.00".to_string();
    }
    let decimals = (2 - v.abs().log10().floor() as i64).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Seconds print with one decimal. Below 0.1 s that collapses everything to
/// "0.0"/"0.1", so short durations fall back to three significant digits.
fn fmt_seconds(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0.0".to_string();
    }
    if v.abs() >= 0.1 {
        return format!("{v:.1}");
    }
    fmt_sig3(v)
}

fn fmt_field(name: &str, value: f64) -> String {
    if name.ends_with("_s") {
        fmt_seconds(value)
    } else {
        fmt_sig3(value)
    }
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

fn table_header(result: &SweepResult) -> Vec<String> {
    let mut header = result.input_columns.clone();
    header.push("feasible".to_string());
    header.extend(CELL_VALUE_FIELDS.iter().map(|f| f.to_string()));
    header.push("reason".to_string());
    header
}

fn table_row(result: &SweepResult, cell: &SweepCell) -> Vec<String> {
    let mut row: Vec<String> = result
        .input_columns
        .iter()
        .map(|column| cell.inputs.get(column).cloned().unwrap_or_default())
        .collect();
    row.push(cell.feasible.to_string());
    for field in CELL_VALUE_FIELDS {
        row.push(cell.value(field).map(|v| fmt_field(field, v)).unwrap_or_default());
    }
    row.push(cell.reason.clone().unwrap_or_default());
    row
}

/// Writes the cell table in the requested format. Column order is the input
/// columns followed by the metric fields; formatting is fixed, so equal
/// results serialize byte-identically.
pub fn emit_table(
    result: &SweepResult,
    format: TableFormat,
    writer: &mut dyn Write,
) -> Result<(), SweepError> {
    let header = table_header(result);
    let rows: Vec<Vec<String>> = result.cells.iter().map(|c| table_row(result, c)).collect();
    match format {
        TableFormat::Csv => {
            let mut csv_writer = csv::Writer::from_writer(writer);
            csv_writer.write_record(&header)?;
            for row in &rows {
                csv_writer.write_record(row)?;
            }
            csv_writer.flush()?;
        }
        TableFormat::AlignedText => {
            let mut widths: Vec<usize> = header.iter().map(String::len).collect();
            for row in &rows {
                for (width, value) in widths.iter_mut().zip(row) {
                    *width = (*width).max(value.len());
                }
            }
            // Inputs and text columns read left-aligned; numbers right-align.
            let inputs = result.input_columns.len();
            let numeric =
                |index: usize| index > inputs && index < header.len() - 1;
            let mut render = |row: &[String]| -> Result<(), SweepError> {
                let mut line = String::new();
                for (index, (value, width)) in row.iter().zip(&widths).enumerate() {
                    if index > 0 {
                        line.push_str("  ");
                    }
                    if numeric(index) {
                        let _ = write!(line, "{value:>width$}");
                    } else {
                        let _ = write!(line, "{value:<width$}");
                    }
                }
                writeln!(writer, "{}", line.trim_end())?;
                Ok(())
            };
            render(&header)?;
            for row in &rows {
                render(row)?;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Heatmaps
// ---------------------------------------------------------------------------

/// Color for a normalized value in [0, 1]: a single-hue blue ramp from
/// near-white to deep navy. Componentwise linear, so darkness (and perceived
/// luminance) is monotone in the value.
pub fn speedup_color(norm: f64) -> (u8, u8, u8) {
    let t = if norm.is_finite() { norm.clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    (lerp(247.0, 8.0), lerp(251.0, 48.0), lerp(255.0, 107.0))
}

const INFEASIBLE_FILL: &str = "#9e9e9e";
const CELL_W: i64 = 84;
const CELL_H: i64 = 44;
const MARGIN_LEFT: i64 = 150;
const MARGIN_TOP: i64 = 64;
const MARGIN_RIGHT: i64 = 30;
const MARGIN_BOTTOM: i64 = 84;

/// XML comments cannot contain "--"; arbitrary config text might.
fn comment_safe(text: &str) -> String {
    text.replace("--", "- -")
}

fn svg_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders one value field over two swept axes as an SVG grid.
///
/// The two axes must factor the result exactly: every (x, y) combination
/// present exactly once. Infeasible cells (and cells without the field) are
/// gray and labeled "n/a"; the color ramp and value range are recorded as
/// metadata comments in the file.
pub fn emit_heatmap(
    result: &SweepResult,
    x_axis: &str,
    y_axis: &str,
    value_field: &str,
    writer: &mut dyn Write,
) -> Result<(), SweepError> {
    if !CELL_VALUE_FIELDS.contains(&value_field) {
        return Err(SweepError::UnknownValueField(value_field.to_string()));
    }
    if result.cells.is_empty() {
        return Err(SweepError::NonFactorableGrid("result has no cells".into()));
    }
    let mut xs: Vec<&str> = Vec::new();
    let mut ys: Vec<&str> = Vec::new();
    let mut grid: BTreeMap<(usize, usize), &SweepCell> = BTreeMap::new();
    for cell in &result.cells {
        let (x, y) = match (cell.inputs.get(x_axis), cell.inputs.get(y_axis)) {
            (Some(x), Some(y)) => (x.as_str(), y.as_str()),
            _ => {
                return Err(SweepError::NonFactorableGrid(format!(
                    "a cell lacks coordinates {x_axis:?} x {y_axis:?}"
                )))
            }
        };
        let xi = match xs.iter().position(|&v| v == x) {
            Some(index) => index,
            None => {
                xs.push(x);
                xs.len() - 1
            }
        };
        let yi = match ys.iter().position(|&v| v == y) {
            Some(index) => index,
            None => {
                ys.push(y);
                ys.len() - 1
            }
        };
        if grid.insert((xi, yi), cell).is_some() {
            return Err(SweepError::NonFactorableGrid(format!(
                "({x_axis}={x}, {y_axis}={y}) appears more than once"
            )));
        }
    }
    if grid.len() != xs.len() * ys.len() {
        return Err(SweepError::NonFactorableGrid(format!(
            "{} cells cannot fill a {} x {} grid",
            grid.len(),
            xs.len(),
            ys.len()
        )));
    }

    let values: Vec<f64> = grid
        .values()
        .filter(|c| c.feasible)
        .filter_map(|c| c.value(value_field))
        .collect();
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let norm = |v: f64| -> f64 {
        if values.is_empty() || max == min {
            0.5
        } else {
            (v - min) / (max - min)
        }
    };

    let grid_w = xs.len() as i64 * CELL_W;
    let grid_h = ys.len() as i64 * CELL_H;
    let width = MARGIN_LEFT + grid_w + MARGIN_RIGHT;
    let height = MARGIN_TOP + grid_h + MARGIN_BOTTOM;

    writeln!(
        writer,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\">"
    )?;
    writeln!(writer, "<!-- scenario: {} -->", comment_safe(&result.scenario_name))?;
    writeln!(writer, "<!-- value field: {} -->", comment_safe(value_field))?;
    writeln!(writer, "<!-- config sha256: {} -->", result.provenance.config_sha256)?;
    writeln!(writer, "<!-- seed: {} -->", result.provenance.seed)?;
    writeln!(
        writer,
        "<!-- color ramp: componentwise linear rgb(247,251,255) to rgb(8,48,107); \
         higher value is always darker; infeasible cells {INFEASIBLE_FILL} -->"
    )?;
    if values.is_empty() {
        writeln!(writer, "<!-- value range: no feasible values -->")?;
    } else {
        writeln!(writer, "<!-- value range: {min} to {max} -->")?;
    }
    writeln!(
        writer,
        "<rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>"
    )?;
    writeln!(
        writer,
        "<text x=\"{}\" y=\"36\" text-anchor=\"middle\" font-size=\"16\">{}: {}</text>",
        MARGIN_LEFT + grid_w / 2,
        svg_escape(&result.scenario_name),
        svg_escape(value_field)
    )?;

    for ((xi, yi), cell) in &grid {
        let x = MARGIN_LEFT + *xi as i64 * CELL_W;
        let y = MARGIN_TOP + *yi as i64 * CELL_H;
        let (fill, label, text_fill) = match (cell.feasible, cell.value(value_field)) {
            (true, Some(v)) => {
                let n = norm(v);
                let (r, g, b) = speedup_color(n);
                let text = if n > 0.55 { "#ffffff" } else { "#1a1a1a" };
                (format!("#{r:02x}{g:02x}{b:02x}"), fmt_field(value_field, v), text)
            }
            _ => (INFEASIBLE_FILL.to_string(), "n/a".to_string(), "#1a1a1a"),
        };
        writeln!(
            writer,
            "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL_W}\" height=\"{CELL_H}\" \
             fill=\"{fill}\" stroke=\"#ffffff\"/>"
        )?;
        writeln!(
            writer,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" dominant-baseline=\"central\" \
             font-size=\"12\" fill=\"{text_fill}\">{}</text>",
            x + CELL_W / 2,
            y + CELL_H / 2,
            svg_escape(&label)
        )?;
    }

    for (xi, x_value) in xs.iter().enumerate() {
        writeln!(
            writer,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{}</text>",
            MARGIN_LEFT + xi as i64 * CELL_W + CELL_W / 2,
            MARGIN_TOP + grid_h + 20,
            svg_escape(x_value)
        )?;
    }
    for (yi, y_value) in ys.iter().enumerate() {
        writeln!(
            writer,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" dominant-baseline=\"central\" \
             font-size=\"12\">{}</text>",
            MARGIN_LEFT - 8,
            MARGIN_TOP + yi as i64 * CELL_H + CELL_H / 2,
            svg_escape(y_value)
        )?;
    }
    writeln!(
        writer,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">{}</text>",
        MARGIN_LEFT + grid_w / 2,
        MARGIN_TOP + grid_h + 48,
        svg_escape(x_axis)
    )?;
    writeln!(
        writer,
        "<text x=\"20\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" \
         transform=\"rotate(-90 20 {})\">{}</text>",
        MARGIN_TOP + grid_h / 2,
        MARGIN_TOP + grid_h / 2,
        svg_escape(y_axis)
    )?;
    writeln!(writer, "</svg>")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// JSON summary and CSV curves
// ---------------------------------------------------------------------------

/// Full result record as pretty JSON with stable key order (struct order,
/// sorted maps).
pub fn emit_summary_json(result: &SweepResult, writer: &mut dyn Write) -> Result<(), SweepError> {
    serde_json::to_writer_pretty(&mut *writer, result)
        .map_err(|e| SweepError::Scenario(format!("summary serialization failed: {e}")))?;
    writeln!(writer)?;
    Ok(())
}

/// Live-sequence step function as `time_s,live_sequences` rows.
pub fn emit_occupancy_csv(
    samples: &[OccupancySample],
    writer: &mut dyn Write,
) -> Result<(), SweepError> {
    let mut csv_writer = csv::Writer::from_writer(writer);
    csv_writer.write_record(["time_s", "live_sequences"])?;
    for sample in samples {
        csv_writer
            .write_record([sample.time_s.to_string(), sample.live_sequences.to_string()])?;
    }
    csv_writer.flush()?;
    Ok(())
}

/// Stage spans as Gantt-ready `step,stage,pool,start_s,end_s,policy_version`
/// rows.
pub fn emit_timeline_csv(spans: &[StageSpan], writer: &mut dyn Write) -> Result<(), SweepError> {
    let mut csv_writer = csv::Writer::from_writer(writer);
    csv_writer.write_record(["step", "stage", "pool", "start_s", "end_s", "policy_version"])?;
    for span in spans {
        csv_writer.write_record([
            span.step.to_string(),
            span.stage.label().to_string(),
            span.pool.label().to_string(),
            span.start_s.to_string(),
            span.end_s.to_string(),
            span.policy_version.to_string(),
        ])?;
    }
    csv_writer.flush()?;
    Ok(())
}
