use crate::config::RunConfig;
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub const SCHEMA_VERSION: &str = "moire-results/1";

/// A CSV table of numbers.
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Plot data: one x column and any number of y columns.
pub struct Figure {
    pub name: String,
    pub xlabel: String,
    pub ylabel: String,
    pub series: Vec<String>,
    pub x: Vec<f64>,
    /// `ys[i][s]` is series `s` at `x[i]`.
    pub ys: Vec<Vec<f64>>,
    pub loglog: bool,
}

#[derive(Default)]
pub struct Report {
    pub results: Value,
    pub tables: Vec<Table>,
    /// Preformatted CSV, written verbatim.
    pub raw_csv: Vec<(String, String)>,
    pub figures: Vec<Figure>,
    pub warnings: Vec<String>,
}

/// Removes per-result timestamps so that only the top-level one varies
/// between identical runs.
pub fn strip_timestamps(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.remove("timestamp");
            m.values_mut().for_each(strip_timestamps);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_timestamps),
        _ => {}
    }
}

fn now_secs() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn document(command: &str, cfg: &RunConfig, config_text: &str, seed: u64, report: &Report) -> Value {
    let mut results = report.results.clone();
    strip_timestamps(&mut results);
    json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "seed": seed,
        "config_text": config_text,
        "config": cfg,
        "results": results,
        "warnings": report.warnings,
        "timestamp": now_secs(),
    })
}

fn table_csv(t: &Table) -> String {
    let mut s = t.header.join(",");
    s.push('\n');
    for r in &t.rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:.16e}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

fn figure_data(f: &Figure) -> String {
    let mut s = format!("# {} {}\n", f.xlabel, f.series.join(" "));
    for (x, ys) in f.x.iter().zip(&f.ys) {
        let _ = write!(s, "{x:.16e}");
        for y in ys {
            let _ = write!(s, " {y:.16e}");
        }
        s.push('\n');
    }
    s
}

/// A gnuplot script rendering every figure of the run to PNG.
fn plot_script(command: &str, figures: &[Figure]) -> String {
    let mut s = String::from("set terminal pngcairo size 900,600\nset key outside\n");
    for f in figures {
        let data = format!("{command}_{}.dat", f.name);
        let _ = writeln!(s, "\nset output '{command}_{}.png'", f.name);
        let _ = writeln!(s, "set xlabel '{}'\nset ylabel '{}'", f.xlabel, f.ylabel);
        s.push_str(if f.loglog { "set logscale xy\n" } else { "unset logscale\n" });
        let parts: Vec<String> =
            f.series.iter().enumerate().map(|(i, name)| format!("'{data}' using 1:{} with linespoints title '{name}'", i + 2)).collect();
        let _ = writeln!(s, "plot {}", parts.join(", \\\n     "));
    }
    s
}

pub fn write_all(dir: &Path, command: &str, cfg: &RunConfig, doc: &Value, report: &Report) -> std::io::Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let stem = command.replace('-', "_");
    let mut written = Vec::new();
    let mut put = |name: String, body: &str| -> std::io::Result<()> {
        fs::write(dir.join(&name), body)?;
        written.push(name);
        Ok(())
    };
    if cfg.output.wants("json") {
        put(format!("{stem}.json"), &(serde_json::to_string_pretty(doc).expect("serializable") + "\n"))?;
    }
    if cfg.output.wants("csv") {
        for t in &report.tables {
            put(format!("{stem}_{}.csv", t.name), &table_csv(t))?;
        }
        for (name, body) in &report.raw_csv {
            put(format!("{stem}_{name}.csv"), body)?;
        }
    }
    if cfg.output.wants("plot") && !report.figures.is_empty() {
        for f in &report.figures {
            put(format!("{stem}_{}.dat", f.name), &figure_data(f))?;
        }
        put(format!("{stem}_plot.gp"), &plot_script(&stem, &report.figures))?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_timestamps_are_removed() {
        let mut v = json!({"a": {"timestamp": 3, "b": [ {"timestamp": 1, "c": 2} ]}, "timestamp": 5});
        strip_timestamps(&mut v);
        assert_eq!(v, json!({"a": {"b": [ {"c": 2} ]}}));
    }

    #[test]
    fn plot_data_has_one_row_per_x() {
        let f = Figure {
            name: "t".into(),
            xlabel: "x".into(),
            ylabel: "y".into(),
            series: vec!["a".into(), "b".into()],
            x: vec![1.0, 2.0],
            ys: vec![vec![3.0, 4.0], vec![5.0, 6.0]],
            loglog: false,
        };
        let d = figure_data(&f);
        assert_eq!(d.lines().count(), 3);
        assert!(plot_script("cmd", &[f]).contains("'cmd_t.dat' using 1:3"));
    }
}
