//! Binary little-endian PLY export/import of Gaussian sets.
//!
//! Scales are stored as natural logs, opacities as logits and rotations as
//! `rot_0..3 = (w, x, y, z)`. The native layout keeps all 25 SH bases per
//! channel: `f_dc_c = sh[c*25]`, `f_rest_{c*24 + k-1} = sh[c*25 + k]`.
//! [`PlyLayout::Viewer`] truncates to degree 3 and shifts the DC term for
//! viewers that compute `0.5 + Y00 * f_dc`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::sh::{Y00, SH_BASIS, SH_COEFFS};
use super::GaussianSet;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyLayout {
    /// Degree 4, 72 `f_rest` values, round-trips exactly.
    Native,
    /// Degree 3, 45 `f_rest` values.
    Viewer,
}

impl PlyLayout {
    fn bases(self) -> usize {
        match self {
            PlyLayout::Native => SH_BASIS,
            PlyLayout::Viewer => 16,
        }
    }

    fn dc_offset(self) -> f64 {
        match self {
            PlyLayout::Native => 0.0,
            PlyLayout::Viewer => 0.5 / Y00,
        }
    }
}

fn property_names(layout: PlyLayout) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    if layout == PlyLayout::Viewer {
        names.extend(["nx", "ny", "nz"].iter().map(|s| s.to_string()));
    }
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..3 * (layout.bases() - 1)).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

pub fn encode<T: Real>(g: &GaussianSet<T>, layout: PlyLayout) -> Vec<u8> {
    let names = property_names(layout);
    let mut out = Vec::new();
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", g.len());
    for n in &names {
        header.push_str(&format!("property float {n}\n"));
    }
    header.push_str("end_header\n");
    out.extend_from_slice(header.as_bytes());
    let bases = layout.bases();
    let mut push = |v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
    for i in 0..g.len() {
        for v in g.position(i) {
            push(v.as_f64());
        }
        if layout == PlyLayout::Viewer {
            (0..3).for_each(|_| push(0.0));
        }
        let sh = g.sh_of(i);
        for c in 0..3 {
            push(sh[c * SH_BASIS].as_f64() - layout.dc_offset());
        }
        for c in 0..3 {
            for k in 1..bases {
                push(sh[c * SH_BASIS + k].as_f64());
            }
        }
        let o = g.opacities[i].as_f64();
        push((o / (1.0 - o)).ln());
        for k in 0..3 {
            push(g.scales[3 * i + k].as_f64().ln());
        }
        for k in 0..4 {
            push(g.rotations[4 * i + k].as_f64());
        }
    }
    out
}

pub fn write<T: Real>(path: &Path, g: &GaussianSet<T>, layout: PlyLayout) -> Result<()> {
    std::fs::write(path, encode(g, layout)).map_err(|e| Error::io(path, e))
}

/// Parses a PLY written by [`encode`] in either layout. Missing higher SH
/// bands are zero-filled; the viewer DC shift is undone.
pub fn decode(bytes: &[u8], path: &Path) -> Result<GaussianSet<f32>> {
    let fmt = |msg: String| Error::format(path, msg);
    let mut reader = BufReader::new(bytes);
    let mut count = None;
    let mut props = Vec::new();
    let mut line = String::new();
    let mut first = true;
    loop {
        line.clear();
        if reader.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
            return Err(fmt("header not terminated".into()));
        }
        let l = line.trim_end();
        if first {
            if l != "ply" {
                return Err(fmt("missing ply magic".into()));
            }
            first = false;
            continue;
        }
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["end_header"] => break,
            ["format", f, _] if *f != "binary_little_endian" => return Err(fmt(format!("unsupported format {f}"))),
            ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| fmt(format!("bad vertex count {n}")))?),
            ["property", ty, name] => {
                if *ty != "float" {
                    return Err(fmt(format!("property {name} has type {ty}, expected float")));
                }
                props.push(name.to_string());
            }
            _ => {}
        }
    }
    let count = count.ok_or_else(|| fmt("no vertex element".into()))?;
    let index = |name: &str| props.iter().position(|p| p == name);
    let require = |name: &str| index(name).ok_or_else(|| Error::format(path, format!("missing property {name}")));
    let rest = props.iter().filter(|p| p.starts_with("f_rest_")).count();
    if rest % 3 != 0 {
        return Err(fmt(format!("{rest} f_rest properties")));
    }
    let bases = rest / 3 + 1;
    let layout = match bases {
        SH_BASIS => PlyLayout::Native,
        16 => PlyLayout::Viewer,
        _ => return Err(fmt(format!("unsupported SH basis count {bases}"))),
    };
    let lookup = |names: &[&str]| -> Result<Vec<usize>> { names.iter().map(|n| require(n)).collect() };
    let pos = lookup(&["x", "y", "z"])?;
    let dc = lookup(&["f_dc_0", "f_dc_1", "f_dc_2"])?;
    let scale = lookup(&["scale_0", "scale_1", "scale_2"])?;
    let rot = lookup(&["rot_0", "rot_1", "rot_2", "rot_3"])?;
    let opacity = require("opacity")?;
    let rest_idx: Vec<usize> = (0..rest).map(|i| require(&format!("f_rest_{i}"))).collect::<Result<_>>()?;

    let stride = props.len() * 4;
    let mut body = Vec::new();
    reader.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    if body.len() < count * stride {
        return Err(fmt(format!("expected {} body bytes, found {}", count * stride, body.len())));
    }
    let mut g = GaussianSet::with_capacity(count);
    for row in body.chunks_exact(stride).take(count) {
        let v = |k: usize| f32::from_le_bytes(row[4 * k..4 * k + 4].try_into().unwrap());
        let mut sh = [0f32; SH_COEFFS];
        for c in 0..3 {
            sh[c * SH_BASIS] = (v(dc[c]) as f64 + layout.dc_offset()) as f32;
            for k in 1..bases {
                sh[c * SH_BASIS + k] = v(rest_idx[c * (bases - 1) + k - 1]);
            }
        }
        let o = 1.0 / (1.0 + (-(v(opacity) as f64)).exp());
        g.push(
            [v(pos[0]), v(pos[1]), v(pos[2])],
            [0, 1, 2].map(|k| (v(scale[k]) as f64).exp() as f32),
            [v(rot[0]), v(rot[1]), v(rot[2]), v(rot[3])],
            o as f32,
            &sh,
        );
    }
    Ok(g)
}

pub fn read(path: &Path) -> Result<GaussianSet<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Writes a human-readable dump of property names, for debugging exports.
pub fn describe(layout: PlyLayout, mut w: impl Write) -> std::io::Result<()> {
    for n in property_names(layout) {
        writeln!(w, "{n}")?;
    }
    Ok(())
}
