//! Two-file cube container: a `key=value` text header (`.hsih`) next to a raw
//! little-endian `f32` payload in pixel-interleaved order (`.hsib`), plus
//! `u16` little-endian row-major labels (`.lblb`).

use std::fs;
use std::path::{Path, PathBuf};

use super::{HsiCube, LabelMap};
use crate::error::{DataError, Error, Result};

pub const HEADER_EXT: &str = "hsih";
pub const PAYLOAD_EXT: &str = "hsib";
pub const LABELS_EXT: &str = "lblb";

const KEYS: [&str; 8] = [
    "name",
    "height",
    "width",
    "bands",
    "dtype",
    "order",
    "class_count",
    "wavelengths",
];

/// Paths of the three container files for a header path or bare stem.
pub fn container_paths(path: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let stem = if path.extension().is_some_and(|e| e == HEADER_EXT) {
        path.with_extension("")
    } else {
        path.to_path_buf()
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (with(HEADER_EXT), with(PAYLOAD_EXT), with(LABELS_EXT))
}

pub fn header_text(cube: &HsiCube, labels: &LabelMap) -> String {
    let mut h = format!(
        "name={}\nheight={}\nwidth={}\nbands={}\ndtype=f32\norder=bip\nclass_count={}\n",
        cube.name, cube.height, cube.width, cube.bands, labels.classes
    );
    if let Some(w) = &cube.wavelengths {
        let list: Vec<String> = w.iter().map(|v| v.to_string()).collect();
        h.push_str(&format!("wavelengths={}\n", list.join(",")));
    }
    h
}

/// Writes `<stem>.hsih`, `<stem>.hsib` and `<stem>.lblb`; returns the header path.
pub fn write_cube(stem: &Path, cube: &HsiCube, labels: &LabelMap) -> Result<PathBuf> {
    if (labels.height, labels.width) != (cube.height, cube.width) {
        return Err(DataError::ShapeMismatch(format!(
            "labels {}x{} for a {}x{} cube",
            labels.height, labels.width, cube.height, cube.width
        ))
        .into());
    }
    let (hp, bp, lp) = container_paths(stem);
    if let Some(dir) = hp.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&hp, header_text(cube, labels)).map_err(|e| Error::io(&hp, e))?;
    let payload: Vec<u8> = cube.values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    fs::write(&bp, payload).map_err(|e| Error::io(&bp, e))?;
    let lab: Vec<u8> = labels.labels.iter().flat_map(|&v| v.to_le_bytes()).collect();
    fs::write(&lp, lab).map_err(|e| Error::io(&lp, e))?;
    Ok(hp)
}

struct Header {
    name: String,
    height: usize,
    width: usize,
    bands: usize,
    classes: usize,
    wavelengths: Option<Vec<f64>>,
}

fn parse_header(path: &Path, text: &str) -> Result<Header> {
    let bad = |detail: String| -> Error {
        DataError::MalformedHeader {
            path: path.to_path_buf(),
            detail,
        }
        .into()
    };
    let mut fields: Vec<(String, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line {} is not key=value", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(bad(format!("unknown key {k:?}")));
        }
        if fields.iter().any(|(key, _)| key == k) {
            return Err(bad(format!("duplicate key {k:?}")));
        }
        fields.push((k.to_string(), v.to_string()));
    }
    let get = |k: &str| fields.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
    let need = |k: &str| get(k).ok_or_else(|| bad(format!("missing key {k:?}")));
    let positive = |k: &str| -> Result<usize> {
        match need(k)?.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(bad(format!("{k} must be a positive integer"))),
        }
    };
    if need("dtype")? != "f32" {
        return Err(bad("dtype must be f32".into()));
    }
    if need("order")? != "bip" {
        return Err(bad("order must be bip".into()));
    }
    let bands = positive("bands")?;
    let wavelengths = match get("wavelengths") {
        None => None,
        Some(s) => {
            let w = s
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("wavelengths must be numbers".into()))?;
            if w.len() != bands {
                return Err(bad(format!("{} wavelengths for {bands} bands", w.len())));
            }
            Some(w)
        }
    };
    Ok(Header {
        name: get("name").unwrap_or("").to_string(),
        height: positive("height")?,
        width: positive("width")?,
        bands,
        classes: positive("class_count")?,
        wavelengths,
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads a cube and its labels from a header path (or stem).
pub fn load_cube(path: &Path) -> Result<(HsiCube, LabelMap)> {
    let (hp, bp, lp) = container_paths(path);
    let text = read(&hp)?;
    let text = String::from_utf8(text).map_err(|_| DataError::MalformedHeader {
        path: hp.clone(),
        detail: "not UTF-8".into(),
    })?;
    let h = parse_header(&hp, &text)?;

    let pixels = h.height * h.width;
    let payload = read(&bp)?;
    let expected = (pixels * h.bands * 4) as u64;
    if payload.len() as u64 != expected {
        return Err(DataError::SizeMismatch {
            path: bp,
            expected,
            found: payload.len() as u64,
        }
        .into());
    }
    let mut values = Vec::with_capacity(pixels * h.bands);
    for (index, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(DataError::NonFiniteValue { path: bp, index }.into());
        }
        values.push(v as f64);
    }

    let raw = read(&lp)?;
    let expected = (pixels * 2) as u64;
    if raw.len() as u64 != expected {
        return Err(DataError::SizeMismatch {
            path: lp,
            expected,
            found: raw.len() as u64,
        }
        .into());
    }
    let labels: Vec<u16> = raw
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    if let Some(&m) = labels.iter().max().filter(|&&m| m as usize > h.classes) {
        return Err(DataError::InvalidLabels {
            path: lp,
            detail: format!("label {m} exceeds class_count {}", h.classes),
        }
        .into());
    }
    let cube = HsiCube {
        name: h.name,
        height: h.height,
        width: h.width,
        bands: h.bands,
        values,
        wavelengths: h.wavelengths,
    };
    let labels = LabelMap {
        height: h.height,
        width: h.width,
        classes: h.classes,
        labels,
    };
    Ok((cube, labels))
}
