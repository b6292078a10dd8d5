//! Long-format `(series, x, y)` plot data derived from earlier artifacts.

use std::fs;

use crate::artifacts::{hash_from_header, num, Artifacts};
use crate::manifest::Params;
use crate::{CliError, CliResult};

pub const KINDS: [&str; 5] = ["convergence", "decay", "density", "gf", "sweep"];

/// A numeric CSV artifact: comment lines skipped, header kept.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub config_hash: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> CliResult<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| CliError::Usage(format!("artifact has no `{name}` column")))
    }
}

/// Parse an artifact written by this tool. Empty cells read as NaN.
pub fn read_table(text: &str) -> CliResult<Table> {
    let hash = hash_from_header(text)
        .ok_or_else(|| CliError::Usage("artifact lacks the config-hash header".into()))?
        .to_string();
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(text.as_bytes());
    let bad = |e: csv::Error| CliError::Usage(format!("artifact: {e}"));
    let columns: Vec<String> = r.headers().map_err(bad)?.iter().map(str::to_string).collect();
    if columns.is_empty() || columns.iter().all(String::is_empty) {
        return Err(CliError::Usage("artifact has no columns".into()));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(bad)?;
        let row = rec
            .iter()
            .map(|c| match c {
                "" => Ok(f64::NAN),
                "true" => Ok(1.0),
                "false" => Ok(0.0),
                _ => c.parse::<f64>(),
            })
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| CliError::Usage(format!("artifact line {}: {e}", rows.len() + 2)))?;
        rows.push(row);
    }
    Ok(Table {
        config_hash: hash,
        columns,
        rows,
    })
}

fn load(params: &Params) -> CliResult<(String, Table)> {
    let kind = params
        .kind
        .clone()
        .ok_or_else(|| CliError::Usage("plot needs --kind".into()))?;
    if !KINDS.contains(&kind.as_str()) {
        return Err(CliError::Usage(format!(
            "unknown plot kind `{kind}`; expected one of {}",
            KINDS.join(", ")
        )));
    }
    let path = params
        .artifact
        .as_ref()
        .ok_or_else(|| CliError::Usage("plot needs --artifact".into()))?;
    Ok((kind, read_table(&fs::read_to_string(path)?)?))
}

/// Config hash carried over from the source artifact.
pub fn source_hash(params: &Params) -> CliResult<String> {
    Ok(load(params)?.1.config_hash)
}

type Points = Vec<(String, f64, f64)>;

fn series(t: &Table, x: &str, ys: &[&str]) -> CliResult<Points> {
    let xi = t.column(x)?;
    let mut out = Vec::new();
    for y in ys {
        let yi = t.column(y)?;
        out.extend(t.rows.iter().map(|r| (y.to_string(), r[xi], r[yi])));
    }
    Ok(out)
}

/// One curve per time (or a single curve) along the first axis; in higher
/// dimensions only the slice through the other axes' origin is kept.
fn density(t: &Table) -> CliResult<Points> {
    let value = t
        .columns
        .iter()
        .position(|c| c == "theta" || c == "density")
        .ok_or_else(|| CliError::Usage("density plots need a `theta` or `density` column".into()))?;
    let x1 = t.column("x1")?;
    let rest: Vec<usize> = (0..t.columns.len())
        .filter(|&i| i != x1 && t.columns[i].starts_with('x'))
        .collect();
    let time = t.columns.iter().position(|c| c == "t");
    let on_axis = |r: &[f64]| rest.iter().all(|&i| r[i].abs() < 1e-9);
    Ok(t
        .rows
        .iter()
        .filter(|r| on_axis(r))
        .map(|r| {
            let name = time.map_or_else(|| t.columns[value].clone(), |i| format!("t={}", r[i]));
            (name, r[x1], r[value])
        })
        .collect())
}

pub fn run(params: &Params, art: &mut Artifacts) -> CliResult<()> {
    let (kind, table) = load(params)?;
    let points = match kind.as_str() {
        "convergence" => series(&table, "index", &["sup_change", "value_at_origin"])?,
        "decay" => series(&table, "t", &["mass"])?,
        "density" => density(&table)?,
        "gf" => series(&table, "lambda", &["estimate", "ci"])?,
        "sweep" => series(&table, "omega", &["epr", "hdr"])?,
        _ => unreachable!("kind checked in load"),
    };
    let rows: Vec<Vec<String>> = points.into_iter().map(|(s, x, y)| vec![s, num(x), num(y)]).collect();
    let cols = ["series", "x", "y"].map(String::from);
    let name = format!("plot_{kind}.csv");
    art.csv(&name, &format!("{kind} plot data"), &cols, &rows)?;
    println!("wrote {} ({} points)", art.dir().join(&name).display(), rows.len());
    Ok(())
}
