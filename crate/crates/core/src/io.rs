//! CSV and JSON writers. Floats are written with 12 significant digits.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::geometry::{ScalarField, VectorField};

pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.11e}")
    }
}

/// Quotes a text cell when it contains a separator or quote.
pub fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Interior nodes in id (lexicographic) order: `x,y,value`.
pub fn scalar_field_csv(f: &ScalarField) -> String {
    let mut s = String::from("x,y,value\n");
    for &id in f.grid.interior_nodes() {
        let p = f.grid.coords(id);
        s.push_str(&format!("{},{},{}\n", fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(f.values[id])));
    }
    s
}

/// Interior nodes in id order: `x,y,value_x,value_y,valid`.
pub fn vector_field_csv(f: &VectorField) -> String {
    let mut s = String::from("x,y,value_x,value_y,valid\n");
    for &id in f.grid.interior_nodes() {
        let p = f.grid.coords(id);
        let v = f.values[id];
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_f64(p[0]),
            fmt_f64(p[1]),
            fmt_f64(v[0]),
            fmt_f64(v[1]),
            u8::from(f.is_valid(id))
        ));
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_text(path, &(text + "\n"))
}
