//! Observation input and self-describing CSV output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use demf::params::Model;
use demf::solver::ObservationSet;
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Deserialize)]
struct ObservationRow {
    x: f64,
    y: f64,
    t: f64,
    value: f64,
}

/// Parse `x, y, t, value` rows. `#` lines are comments; errors carry the
/// 1-based line number of the offending row.
pub fn parse_observations(text: &str, noise_variance: f64) -> demf::Result<ObservationSet> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let line_of = |e: &csv::Error| e.position().map_or(0, |p| record_line(text, p.byte() as usize));
    let headers = reader.headers().map_err(|e| demf::Error::Parse { line: line_of(&e), message: e.to_string() })?.clone();
    for col in ["x", "y", "t", "value"] {
        if !headers.iter().any(|h| h == col) {
            return Err(demf::Error::Parse { line: 1, message: format!("missing column {col:?}") });
        }
    }
    let (mut locations, mut times, mut values) = (Vec::new(), Vec::new(), Vec::new());
    for row in reader.deserialize::<ObservationRow>() {
        let row = row.map_err(|e| demf::Error::Parse { line: line_of(&e), message: parse_message(&e) })?;
        locations.push([row.x, row.y]);
        times.push(row.t);
        values.push(row.value);
    }
    ObservationSet::new(locations, times, values, noise_variance)
}

/// 1-based line of the record starting at or after byte `at`. The reader's
/// own line counter ignores blank lines, so it is recomputed from the text.
fn record_line(text: &str, at: usize) -> usize {
    let mut at = at.min(text.len());
    let bytes = text.as_bytes();
    loop {
        let rest = &text[at..];
        let line_end = rest.find('\n').map_or(text.len(), |i| at + i + 1);
        let line = text[at..line_end].trim();
        if !(line.is_empty() || line.starts_with('#')) || line_end >= text.len() {
            break;
        }
        at = line_end;
    }
    bytes[..at].iter().filter(|&&b| b == b'\n').count() + 1
}

fn parse_message(e: &csv::Error) -> String {
    match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        _ => e.to_string(),
    }
}

pub fn read_observations(path: &Path, noise_variance: f64) -> Result<ObservationSet> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::File { path: path.to_path_buf(), source: e.into() })?;
    parse_observations(&text, noise_variance).map_err(|e| CliError::File { path: path.to_path_buf(), source: e })
}

/// `#`-prefixed `key = value` lines followed by a CSV table.
#[derive(Debug, Clone, Default)]
pub struct Metadata(pub Vec<(String, String)>);

impl Metadata {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.0.push((key.into(), value.to_string()));
    }

    /// Exponents, raw scales and interpretable scales of a model.
    pub fn model(&mut self, prefix: &str, model: &Model) -> Result<()> {
        let sp = model.smoothness;
        let sc = model.scales;
        let ip = model.interpretable()?;
        for (k, v) in [
            ("alpha_t", sp.alpha_t),
            ("alpha_s", sp.alpha_s),
            ("alpha_e", sp.alpha_e),
            ("gamma_t", sc.gamma_t),
            ("gamma_s", sc.gamma_s),
            ("gamma_e", sc.gamma_e),
            ("sigma", ip.sigma),
            ("r_s", ip.r_s),
            ("r_t", ip.r_t),
        ] {
            self.push(format!("{prefix}{k}"), v);
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for (k, v) in &self.0 {
            writeln!(w, "# {k} = {v}")?;
        }
        Ok(())
    }
}

/// Where a subcommand's main output goes.
pub enum Sink {
    Stdout,
    File(PathBuf),
}

impl Sink {
    pub fn from_config(output: Option<&crate::config::OutputConfig>) -> Self {
        match output {
            Some(o) => Sink::File(o.path.clone()),
            None => Sink::Stdout,
        }
    }

    pub fn open(&self) -> Result<Box<dyn Write>> {
        match self {
            Sink::Stdout => Ok(Box::new(BufWriter::new(std::io::stdout().lock()))),
            Sink::File(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir)?;
                }
                Ok(Box::new(BufWriter::new(File::create(p)?)))
            }
        }
    }
}

/// Write metadata, a header row and data rows.
pub fn write_table<W: Write, I, R>(w: W, meta: &Metadata, columns: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = w;
    meta.write(&mut w)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(columns).map_err(csv_io)?;
    for r in rows {
        out.write_record(r).map_err(csv_io)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> CliError {
    CliError::Output(std::io::Error::other(e.to_string()))
}

/// Shortest representation that round-trips.
pub fn num(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_comments_and_any_column_order() {
        let obs = parse_observations("# data\nvalue,t,x,y\n1.5,0.0,0.1,0.2\n-2,1,0.3,0.4\n", 0.1).unwrap();
        assert_eq!(obs.values, vec![1.5, -2.0]);
        assert_eq!(obs.locations[1], [0.3, 0.4]);
        assert_eq!(obs.times, vec![0.0, 1.0]);
    }

    #[test]
    fn errors_name_the_line() {
        let err = parse_observations("x,y,t,value\n0,0,0,1\n0,0,zero,1\n", 0.1).unwrap_err();
        assert!(matches!(err, demf::Error::Parse { line: 3, .. }), "{err}");
        let err = parse_observations("x,y,t,value\n0,0,0,1\n\n0,0,0\n", 0.1).unwrap_err();
        assert!(matches!(err, demf::Error::Parse { line: 4, .. }), "{err}");
        let err = parse_observations("x,y,value\n0,0,1\n", 0.1).unwrap_err();
        assert!(matches!(err, demf::Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn empty_file_is_no_observations() {
        assert!(parse_observations("x,y,t,value\n", 0.1).unwrap().is_empty());
    }

    #[test]
    fn table_layout() {
        let mut meta = Metadata::default();
        meta.push("seed", 3);
        let mut buf = Vec::new();
        write_table(&mut buf, &meta, &["a", "b"], [[num(1.0), num(0.1)]]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "# seed = 3\na,b\n1,0.1\n");
    }
}
