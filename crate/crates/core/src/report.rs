//! Shared formatting for report CSVs.

use std::io::{self, Write};

/// Formats `x` with six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    if (-4..6).contains(&magnitude) {
        format!("{:.*}", (5 - magnitude).max(0) as usize, x)
    } else {
        format!("{x:.5e}")
    }
}

/// Formats an optional value, leaving the cell empty when absent.
pub fn sig6_opt(x: Option<f64>) -> String {
    x.map(sig6).unwrap_or_default()
}

/// Provenance comment written as the first line of every report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn write_header<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "# config_sha256={} seed={}", self.config_hash, self.seed)
    }
}

/// Writes the optional provenance line followed by `rows` as CSV.
pub fn write_csv<W: Write>(
    mut out: W,
    provenance: Option<&Provenance>,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> io::Result<()> {
    if let Some(p) = provenance {
        p.write_header(&mut out)?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()
}

/// CSV reader that skips `#` provenance lines.
pub fn reader<R: io::Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(input)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.1), "0.100000");
        assert_eq!(sig6(3.3258345), "3.32583");
        assert_eq!(sig6(-0.086), "-0.0860000");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(1234567.0), "1.23457e6");
        assert_eq!(sig6(0.0005), "0.000500000");
        assert_eq!(sig6(12.0), "12.0000");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(-0.0), "0");
    }

    #[test]
    fn provenance_line_is_skipped_on_read() {
        let mut buf = Vec::new();
        let p = Provenance { config_hash: "ab".into(), seed: 7 };
        write_csv(&mut buf, Some(&p), &["a", "b"], vec![vec!["1".into(), "2".into()]]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# config_sha256=ab seed=7\na,b\n"));
        let mut r = reader(buf.as_slice());
        assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(r.records().count(), 1);
    }
}
