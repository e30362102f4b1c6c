//! Text formats: `TOMOSET v1` training sets, CSV tables and PGM (P2) images.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::datagen::TrainingSet;
use crate::tomo::{Grid, Image};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// C's `printf("%.17g", x)`: 17 significant digits, trailing zeros removed,
/// exponent form when the decimal exponent is below -4 or at least 17.
pub fn format_g17(x: f64) -> String {
    const P: i32 = 17;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let strip = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -4 || exp >= P {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", strip(mant), sign, exp.abs())
    } else {
        strip(&format!("{:.*}", (P - 1 - exp) as usize, x))
    }
}

/// Shortest round-trip decimal, with an exponent for very small or large
/// magnitudes.
pub fn format_short(x: f64) -> String {
    let a = x.abs();
    if x != 0.0 && x.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

/// Serializes a training set:
/// line 1 `TOMOSET 1 <count> <height> <width>`, then each image as `height`
/// lines of `width` space-separated `%.17g` values.
pub fn tomoset_to_string(ts: &TrainingSet) -> String {
    let g = ts.grid();
    let mut out = format!("TOMOSET 1 {} {} {}\n", ts.len(), g.height(), g.width());
    for im in ts.images() {
        for row in im.values().chunks(g.width()) {
            let line: Vec<String> = row.iter().map(|&v| format_g17(v)).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn write_tomoset(path: &Path, ts: &TrainingSet) -> Result<(), FormatError> {
    fs::write(path, tomoset_to_string(ts)).map_err(io_err(path))
}

pub fn parse_tomoset(text: &str, name: &str) -> Result<TrainingSet, FormatError> {
    let mut lines = text.lines().enumerate();
    let parse_err = |line: usize, message: String| FormatError::Parse { line: line + 1, message };
    let (_, header) = lines.next().ok_or_else(|| parse_err(0, "empty file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != "TOMOSET" || fields[1] != "1" {
        return Err(parse_err(0, format!("expected `TOMOSET 1 <count> <height> <width>`, got `{header}`")));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| parse_err(0, format!("invalid integer `{s}`")));
    let (count, height, width) = (num(fields[2])?, num(fields[3])?, num(fields[4])?);
    let grid = Grid::new(width, height).map_err(|e| parse_err(0, e.to_string()))?;
    let mut images = Vec::with_capacity(count);
    for _ in 0..count {
        let mut values = Vec::with_capacity(grid.n());
        for _ in 0..height {
            let (ln, line) = lines.next().ok_or_else(|| parse_err(usize::MAX - 1, "truncated file".into()))?;
            let before = values.len();
            for tok in line.split_whitespace() {
                values.push(
                    tok.parse::<f64>()
                        .map_err(|_| parse_err(ln, format!("invalid number `{tok}`")))?,
                );
            }
            if values.len() - before != width {
                return Err(parse_err(ln, format!("expected {width} values, found {}", values.len() - before)));
            }
        }
        images.push(Image::new(grid, values).map_err(|e| parse_err(0, e.to_string()))?);
    }
    if let Some((ln, line)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(parse_err(ln, format!("unexpected trailing content `{line}`")));
    }
    TrainingSet::new(name, 0, grid, images).map_err(|e| parse_err(0, e.to_string()))
}

pub fn read_tomoset(path: &Path) -> Result<TrainingSet, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    parse_tomoset(&text, name)
}

/// A CSV table with a header row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    fn quote(field: &str) -> String {
        if field.contains([',', '"', '\n']) {
            format!("\"{}\"", field.replace('"', "\"\""))
        } else {
            field.to_string()
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for row in std::iter::once(&self.header).chain(&self.rows) {
            let line: Vec<String> = row.iter().map(|f| Self::quote(f)).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        fs::write(path, self.to_csv_string()).map_err(io_err(path))
    }
}

/// P2 PGM with values linearly scaled from `[min, max]` to `0..=255`.
pub fn pgm_to_string(width: usize, height: usize, values: &[f64]) -> (String, f64, f64) {
    assert_eq!(values.len(), width * height);
    let finite = values.iter().filter(|v| v.is_finite());
    let lo = finite.clone().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
    let span = hi - lo;
    let mut out = format!("P2\n{width} {height}\n255\n");
    for row in values.chunks(width) {
        let line: Vec<String> = row
            .iter()
            .map(|&v| {
                let t = if span > 0.0 && v.is_finite() { (v - lo) / span } else { 0.0 };
                ((t * 255.0).round() as i64).clamp(0, 255).to_string()
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    (out, lo, hi)
}

/// Writes `path` and a sidecar `path.meta` recording the value range.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<(), FormatError> {
    let (body, lo, hi) = pgm_to_string(width, height, values);
    fs::write(path, body).map_err(io_err(path))?;
    let mut meta_path = path.as_os_str().to_owned();
    meta_path.push(".meta");
    let meta_path = PathBuf::from(meta_path);
    let meta = format!("min = {}\nmax = {}\n", format_g17(lo), format_g17(hi));
    fs::write(&meta_path, meta).map_err(io_err(&meta_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_matches_c_printf() {
        // Reference strings from C printf("%.17g").
        let cases = [
            (0.5, "0.5"),
            (1.0, "1"),
            (0.1, "0.10000000000000001"),
            (1e-5, "1.0000000000000001e-05"),
            (123456.0, "123456"),
            (1e17, "1e+17"),
            (1e16, "10000000000000000"),
            (-2.5e-300, "-2.5e-300"),
            (0.0001, "0.0001"),
            (1.0 / 3.0, "0.33333333333333331"),
        ];
        for (x, want) in cases {
            assert_eq!(format_g17(x), want, "formatting {x:e}");
        }
    }

    #[test]
    fn csv_quotes_fields() {
        let mut t = CsvTable::new(&["a", "b"]);
        t.push(vec!["1,2".into(), "x\"y".into()]);
        assert_eq!(t.to_csv_string(), "a,b\n\"1,2\",\"x\"\"y\"\n");
    }
}
