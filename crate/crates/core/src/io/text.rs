//! Fingerprint TSV and prediction CSV.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::{Result, VmsError};
use crate::model::{Fingerprint, Prediction};

pub const PREDICTION_HEADER: &str = "molecule_id,protein_idx,mean,std";

fn check_id(id: &str) -> std::result::Result<(), String> {
    if id.is_empty() {
        return Err("empty molecule id".into());
    }
    if let Some(c) = id.chars().find(|c| c.is_whitespace() || *c == ',' || *c == '"' || *c == '#') {
        return Err(format!("molecule id {id:?} contains {c:?}"));
    }
    Ok(())
}

/// One line per molecule: id, TAB, comma-separated ascending indices.
pub fn write_fingerprints(fps: &[Fingerprint]) -> String {
    let mut out = String::new();
    for fp in fps {
        out.push_str(&fp.molecule_id);
        out.push('\t');
        for (i, a) in fp.active.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{a}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parses fingerprint text. Blank lines and lines starting with `#` are
/// skipped. With `n_features`, indices are also checked against F.
pub fn parse_fingerprints(text: &str, file: &str, n_features: Option<usize>) -> Result<Vec<Fingerprint>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |m: String| VmsError::parse(file, line_no, m);
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, list) = line
            .split_once('\t')
            .ok_or_else(|| err("expected <molecule_id><TAB><indices>".into()))?;
        check_id(id).map_err(err)?;
        let mut active = Vec::new();
        if !list.is_empty() {
            for tok in list.split(',') {
                let v: u32 = tok
                    .parse()
                    .map_err(|_| err(format!("bad feature index {tok:?}")))?;
                if active.last().is_some_and(|&prev| prev >= v) {
                    return Err(err(format!("feature indices not strictly ascending at {v}")));
                }
                if n_features.is_some_and(|f| v as usize >= f) {
                    return Err(err(format!("feature index {v} >= F={}", n_features.unwrap())));
                }
                active.push(v);
            }
        }
        if !seen.insert(id.to_owned()) {
            return Err(err(format!("duplicate molecule id {id}")));
        }
        out.push(Fingerprint::new(id, active));
    }
    Ok(out)
}

/// Formats like C's `%.9g`.
pub fn format_g9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{x:.8e}");
    let (mant, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-4..9).contains(&exp) {
        let s = format!("{x:.*}", (8 - exp) as usize);
        trim_zeros(&s).to_owned()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mant), exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_predictions(rows: &[Prediction]) -> String {
    let mut out = String::with_capacity(32 * (rows.len() + 1));
    out.push_str(PREDICTION_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.molecule_id,
            r.protein_idx,
            format_g9(r.mean),
            format_g9(r.std)
        )
        .unwrap();
    }
    out
}

pub fn parse_predictions(text: &str, file: &str) -> Result<Vec<Prediction>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.strip_suffix('\r').unwrap_or(h) == PREDICTION_HEADER => {}
        _ => return Err(VmsError::parse(file, 1, format!("expected header {PREDICTION_HEADER:?}"))),
    }
    let mut out = Vec::new();
    for (i, raw) in lines {
        let err = |m: String| VmsError::parse(file, i + 1, m);
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(err(format!("expected 4 fields, got {}", f.len())));
        }
        check_id(f[0]).map_err(err)?;
        let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| err(format!("bad {what} {s:?}")));
        out.push(Prediction {
            molecule_id: f[0].to_owned(),
            protein_idx: f[1].parse().map_err(|_| err(format!("bad protein index {:?}", f[1])))?,
            mean: num(f[2], "mean")?,
            std: num(f[3], "std")?,
        });
    }
    Ok(out)
}
