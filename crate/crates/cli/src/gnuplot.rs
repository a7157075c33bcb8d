//! Converts any emitted CSV into gnuplot's whitespace-separated layout and
//! writes a matching plot script. Nothing here plots.

use std::io::{Read, Write};

/// Header becomes a `#` comment line; fields containing whitespace are
/// quoted. Returns the column names.
pub fn csv_to_dat<R: Read, W: Write>(input: R, mut out: W) -> csv::Result<Vec<String>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    writeln!(out, "# {}", header.join(" "))?;
    for rec in r.records() {
        let rec = rec?;
        let fields: Vec<String> =
            rec.iter().map(|f| if f.is_empty() { "NaN".to_string() } else if f.contains(char::is_whitespace) { format!("\"{f}\"") } else { f.to_string() }).collect();
        writeln!(out, "{}", fields.join(" "))?;
    }
    Ok(header)
}

/// A script plotting every column after the first against the first.
pub fn script(dat_file: &str, columns: &[String]) -> String {
    let mut s = String::new();
    s.push_str("set key outside\n");
    if let Some(x) = columns.first() {
        s.push_str(&format!("set xlabel \"{x}\"\n"));
    }
    let series: Vec<String> = (1..columns.len())
        .map(|i| format!("\"{dat_file}\" using 1:{} with linespoints title \"{}\"", i + 1, columns[i]))
        .collect();
    if !series.is_empty() {
        s.push_str("plot ");
        s.push_str(&series.join(", \\\n     "));
        s.push('\n');
    }
    s
}
