//! Plain CSV output with full round-trip float precision.

use std::io::{self, Write};

/// `x` with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a header line and rows of already-formatted cells.
pub fn write_csv<W, I>(out: &mut W, header: &[&str], rows: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = Vec<String>>,
{
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// CSV with columns `t, {prefix}0, …, {prefix}K`, one row per grid time.
pub fn write_series<W, R>(
    out: &mut W,
    times: impl IntoIterator<Item = f64>,
    prefix: &str,
    rows: &[R],
) -> io::Result<()>
where
    W: Write,
    R: AsRef<[f64]>,
{
    let width = rows.first().map_or(0, |r| r.as_ref().len());
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((0..width).map(|k| format!("{prefix}{k}")))
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let body = times.into_iter().zip(rows).map(|(t, r)| {
        std::iter::once(fmt_f64(t))
            .chain(r.as_ref().iter().map(|&x| fmt_f64(x)))
            .collect()
    });
    write_csv(out, &header, body)
}
