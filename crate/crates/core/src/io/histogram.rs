//! Histogram tables: `#`-prefixed `key = value` metadata lines, a column
//! header and one `tau_ns,value,sigma` row per bin, numbers written with
//! nine significant digits.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{CorrelationTrace, Normalization, TraceMetadata};

const COLUMNS: &str = "tau_ns,value,sigma";

/// Shortest decimal that reads back as `x` rounded to nine significant
/// digits.
pub fn format_significant(x: f64) -> String {
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    let text = format!("{rounded}");
    if text == "-0" {
        "0".to_string()
    } else {
        text
    }
}

pub fn write_histogram(mut w: impl Write, trace: &CorrelationTrace) -> Result<()> {
    let width = trace.uniform_bin_width().ok_or_else(|| Error::Format {
        what: "histogram",
        message: "only uniform bins can be written as a table".into(),
    })?;
    writeln!(w, "# tpqi correlation histogram")?;
    writeln!(w, "# scenario_hash = {}", trace.metadata.scenario_hash)?;
    writeln!(w, "# seed = {}", trace.metadata.seed)?;
    writeln!(w, "# normalization = {}", trace.normalization().as_str())?;
    writeln!(w, "# total_events = {}", trace.metadata.total_events)?;
    writeln!(w, "# bin_width_ns = {}", format_significant(width * 1e9))?;
    writeln!(w, "{COLUMNS}")?;
    for ((tau, value), sigma) in trace.bin_centers().iter().zip(trace.counts()).zip(trace.sigma()) {
        writeln!(
            w,
            "{},{},{}",
            format_significant(tau * 1e9),
            format_significant(*value),
            format_significant(*sigma)
        )?;
    }
    Ok(())
}

pub fn write_histogram_file(path: &Path, trace: &CorrelationTrace) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_histogram(&mut w, trace)?;
    w.flush()?;
    Ok(())
}

fn malformed(line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        what: "histogram",
        message: format!("line {line}: {}", message.into()),
    }
}

pub fn read_histogram(r: impl BufRead) -> Result<CorrelationTrace> {
    let mut metadata = TraceMetadata::default();
    let mut normalization = None;
    let mut width_ns = None;
    let mut seen_columns = false;
    let (mut centers, mut values, mut sigma) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if let Some(comment) = text.strip_prefix('#') {
            let Some((key, value)) = comment.split_once('=') else {
                continue;
            };
            let value = value.trim();
            let number = |v: &str| v.parse::<u64>().map_err(|e| malformed(n, format!("{}: {e}", key.trim())));
            match key.trim() {
                "scenario_hash" => metadata.scenario_hash = value.to_string(),
                "seed" => metadata.seed = number(value)?,
                "total_events" => metadata.total_events = number(value)?,
                "normalization" => {
                    normalization = Some(
                        Normalization::parse(value)
                            .ok_or_else(|| malformed(n, format!("unknown normalization {value:?}")))?,
                    )
                }
                "bin_width_ns" => {
                    width_ns = Some(value.parse::<f64>().map_err(|e| malformed(n, format!("bin_width_ns: {e}")))?)
                }
                _ => {}
            }
            continue;
        }
        if !seen_columns {
            let header: Vec<&str> = text.split(',').map(str::trim).collect();
            if header != ["tau_ns", "value", "sigma"] {
                return Err(malformed(n, format!("expected column header {COLUMNS:?}")));
            }
            seen_columns = true;
            continue;
        }
        let fields: Vec<&str> = text.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(malformed(n, "expected three comma-separated values"));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| malformed(n, format!("{s:?}: {e}")));
        centers.push(parse(fields[0])?);
        values.push(parse(fields[1])?);
        sigma.push(parse(fields[2])?);
    }
    let width_ns = width_ns.ok_or_else(|| malformed(0, "missing bin_width_ns header"))?;
    let normalization = normalization.ok_or_else(|| malformed(0, "missing normalization header"))?;
    if centers.is_empty() {
        return Err(malformed(0, "no rows"));
    }
    let mut edges: Vec<f64> = centers.iter().map(|c| (c - 0.5 * width_ns) * 1e-9).collect();
    edges.push((centers[centers.len() - 1] + 0.5 * width_ns) * 1e-9);
    CorrelationTrace::new(edges, values, sigma, normalization, metadata)
}

pub fn read_histogram_file(path: &Path) -> Result<CorrelationTrace> {
    read_histogram(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CorrelationTrace {
        let edges: Vec<f64> = (0..=21).map(|k| (k as f64 - 10.5) * 0.1e-9).collect();
        let counts: Vec<f64> = (0..21).map(|k| 1.0 / 3.0 + k as f64 * 1e-3).collect();
        let sigma = vec![0.012_345_678_912; 21];
        let meta = TraceMetadata {
            scenario_hash: "abc123".into(),
            seed: 42,
            total_events: 99,
        };
        CorrelationTrace::new(edges, counts, sigma, Normalization::PlateauNormalized, meta).unwrap()
    }

    #[test]
    fn significant_digits() {
        assert_eq!(format_significant(0.1), "0.1");
        assert_eq!(format_significant(1.0 / 3.0), "0.333333333");
        assert_eq!(format_significant(-59.95), "-59.95");
        assert_eq!(format_significant(-0.0), "0");
        assert_eq!(format_significant(123_456_789_012.0), "123456789000");
    }

    #[test]
    fn round_trip_at_nine_digits() {
        let t = sample();
        let mut text = Vec::new();
        write_histogram(&mut text, &t).unwrap();
        let back = read_histogram(text.as_slice()).unwrap();
        assert_eq!(back.metadata, t.metadata);
        assert_eq!(back.normalization(), t.normalization());
        for (a, b) in back.counts().iter().zip(t.counts()) {
            assert!((a - b).abs() <= 5e-9 * b.abs());
        }
        for (a, b) in back.bin_edges().iter().zip(t.bin_edges()) {
            assert!((a - b).abs() <= 1e-21);
        }
        let mut again = Vec::new();
        write_histogram(&mut again, &back).unwrap();
        assert_eq!(text, again);
    }

    #[test]
    fn rejects_malformed_tables() {
        assert!(read_histogram("tau_ns,value,sigma\n0,1,1\n".as_bytes()).is_err());
        assert!(read_histogram("# bin_width_ns = 1\n# normalization = raw_counts\nx,y\n".as_bytes()).is_err());
        assert!(read_histogram("# bin_width_ns = 1\n# normalization = raw_counts\ntau_ns,value,sigma\n0,1\n".as_bytes()).is_err());
        assert!(read_histogram("# bin_width_ns = 1\n# normalization = raw_counts\ntau_ns,value,sigma\n0,-1,1\n".as_bytes()).is_err());
        assert!(read_histogram("# bin_width_ns = 1\n# normalization = raw_counts\ntau_ns, value, sigma\n0, 1, 1\n".as_bytes()).is_ok());
    }
}
