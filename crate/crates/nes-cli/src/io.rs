//! Input parsing, CSV/JSON output and the run manifest.

use crate::CliError;
use nes_core::{MarketEnv, NesParams, OptionKind, OptionQuote};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Reads a JSON argument given inline (starting with `{`) or as a file path.
pub fn read_json_arg<T: for<'de> Deserialize<'de>>(arg: &str, what: &str) -> Result<(T, serde_json::Value), CliError> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).map_err(|e| CliError::Validation(format!("cannot read {what} file {arg}: {e}")))?
    };
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("invalid {what} JSON: {e}")))?;
    let v = serde_json::from_value(raw.clone()).map_err(|e| CliError::Validation(format!("invalid {what}: {e}")))?;
    Ok((v, raw))
}

/// Parameters as the full seven-field form or the single-`mu` form.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ParamsInput {
    Full(NesParams),
    Symmetric {
        mu: f64,
        sigma1: f64,
        sigma2: f64,
        a: f64,
        h: f64,
        #[serde(rename = "T")]
        t: f64,
    },
}

impl ParamsInput {
    pub fn resolve(self) -> Result<NesParams, CliError> {
        let p = match self {
            ParamsInput::Full(p) => NesParams::new(p.mu1, p.mu2, p.sigma1, p.sigma2, p.a, p.h, p.t),
            ParamsInput::Symmetric { mu, sigma1, sigma2, a, h, t } => NesParams::symmetric(mu, sigma1, sigma2, a, h, t),
        };
        p.map_err(CliError::from)
    }
}

pub fn read_params(arg: &str) -> Result<(NesParams, serde_json::Value), CliError> {
    let (p, raw): (ParamsInput, _) = read_json_arg(arg, "params")?;
    Ok((p.resolve()?, raw))
}

/// Market file `{spot, r_f, q_div, y0}`; `y0` defaults to 0.
#[derive(Debug, Clone, Copy, Deserialize)]
pub struct MarketInput {
    pub spot: f64,
    pub r_f: f64,
    pub q_div: f64,
    #[serde(default)]
    pub y0: f64,
}

pub fn read_market(arg: &str) -> Result<(MarketEnv, f64, serde_json::Value), CliError> {
    let (m, raw): (MarketInput, _) = read_json_arg(arg, "market")?;
    let env = MarketEnv { spot: m.spot, r_f: m.r_f, q_div: m.q_div };
    env.validate()?;
    if !m.y0.is_finite() {
        return Err(CliError::Validation("market y0 must be finite".into()));
    }
    Ok((env, m.y0, raw))
}

#[derive(Debug, Deserialize)]
struct QuoteRow {
    #[serde(rename = "expiry_T")]
    expiry_t: f64,
    strike: f64,
    kind: String,
    mid: f64,
    #[serde(default)]
    implied_vol: Option<f64>,
}

/// Reads a quote file with header `expiry_T,strike,kind,mid[,implied_vol]`.
pub fn read_quotes(path: &Path) -> Result<Vec<OptionQuote>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::Validation(format!("cannot read quotes {}: {e}", path.display())))?;
    let mut out = vec![];
    for (i, row) in rdr.deserialize::<QuoteRow>().enumerate() {
        let r = row.map_err(|e| CliError::Validation(format!("quotes row {}: {e}", i + 1)))?;
        let kind: OptionKind = r.kind.parse().map_err(|e: nes_core::NesError| CliError::Validation(e.to_string()))?;
        let q = OptionQuote { strike: r.strike, expiry_t: r.expiry_t, kind, mid: r.mid, implied_vol: r.implied_vol };
        q.validate()?;
        out.push(q);
    }
    if out.is_empty() {
        return Err(CliError::Validation(format!("no quotes in {}", path.display())));
    }
    Ok(out)
}

/// Inclusive grid `lo:hi:n`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || CliError::Validation(format!("grid must be lo:hi:n with n >= 2 and lo < hi, got {s}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n < 2 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(bad());
    }
    Ok((0..n).map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect())
}

pub fn parse_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| CliError::Validation(format!("not a number: {t}"))))
        .collect()
}

/// Float formatting shared by every CSV: 17 significant digits, which
/// round-trips any `f64` exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A CSV table of floats with a header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|x| fmt_f64(*x)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, CliError> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = rdr
            .headers()
            .map_err(|e| CliError::Validation(format!("bad CSV header: {e}")))?
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut rows = vec![];
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CliError::Validation(format!("bad CSV row: {e}")))?;
            let row = rec
                .iter()
                .map(|c| c.parse::<f64>().map_err(|_| CliError::Validation(format!("not a number: {c}"))))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        Ok(Table { header, rows })
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub inputs: serde_json::Value,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
}

/// Collects outputs, writing them to a directory or the primary one to stdout.
pub struct Sink {
    dir: Option<PathBuf>,
    written: Vec<String>,
}

impl Sink {
    pub fn new(dir: Option<PathBuf>) -> Result<Self, CliError> {
        if let Some(d) = &dir {
            fs::create_dir_all(d).map_err(|e| CliError::Io(format!("cannot create {}: {e}", d.display())))?;
        }
        Ok(Sink { dir, written: vec![] })
    }

    /// Writes `name`; without an output directory only `primary` outputs are printed.
    pub fn emit(&mut self, name: &str, contents: &str, primary: bool) -> Result<(), CliError> {
        match &self.dir {
            Some(d) => {
                let path = d.join(name);
                fs::write(&path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
                self.written.push(name.to_string());
            }
            None if primary => {
                let mut out = std::io::stdout().lock();
                out.write_all(contents.as_bytes()).map_err(|e| CliError::Io(e.to_string()))?;
            }
            None => {}
        }
        Ok(())
    }

    pub fn emit_json<T: Serialize>(&mut self, name: &str, value: &T, primary: bool) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        self.emit(name, &s, primary)
    }

    /// Writes the manifest last, through a temporary file and a rename.
    pub fn finish(self, command: &str, inputs: serde_json::Value, seed: Option<u64>) -> Result<(), CliError> {
        let Some(d) = self.dir else { return Ok(()) };
        let m = Manifest {
            command: command.to_string(),
            inputs,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            outputs: self.written,
        };
        let text = serde_json::to_string_pretty(&m).map_err(|e| CliError::Io(e.to_string()))? + "\n";
        let tmp = d.join(".manifest.json.tmp");
        fs::write(&tmp, text).map_err(|e| CliError::Io(e.to_string()))?;
        fs::rename(&tmp, d.join("manifest.json")).map_err(|e| CliError::Io(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g = parse_grid("-1:1:5").unwrap();
        assert_eq!(g, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(parse_grid("1:0:5").is_err());
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("0:1:1").is_err());
    }

    #[test]
    fn csv_round_trip_is_byte_identical() {
        let mut t = Table::new(&["x", "y"]);
        for i in 0..50 {
            let x = -1.0 + i as f64 / 7.0;
            t.push(vec![x, (x * 3.1).exp() * 1e-7]);
        }
        t.push(vec![f64::MIN_POSITIVE, -0.0]);
        let text = t.to_csv();
        let back = Table::from_csv(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_csv(), text);
    }

    #[test]
    fn params_forms() {
        let (a, _) = read_params(r#"{"mu": 0.3, "sigma1": 0.2, "sigma2": 0.3, "a": 0.4, "h": 0.1, "T": 1.0}"#).unwrap();
        let (b, _) =
            read_params(r#"{"mu1": 0.3, "mu2": -0.3, "sigma1": 0.2, "sigma2": 0.3, "a": 0.4, "h": 0.1, "T": 1.0}"#).unwrap();
        assert_eq!(a, b);
        assert!(matches!(read_params(r#"{"mu": 0.3, "sigma1": -0.2, "sigma2": 0.3, "a": 0.4, "h": 0.1, "T": 1.0}"#), Err(CliError::Validation(_))));
    }
}
