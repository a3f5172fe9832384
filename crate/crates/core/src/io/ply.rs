//! Binary little-endian PLY in the common 3DGS export layout, plus the feature sidecar.
//!
//! Vertex properties read: `x y z opacity rot_0..3 scale_0..2 f_dc_0..2 [f_rest_*]`.
//! Opacity and scales are stored pre-activation (logit / log). `f_rest_*` is channel-major;
//! files above SH degree 1 are truncated to degree 1.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::primitives::{normalize_quat, Features, PrimitiveSet};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Scalar)>,
}

impl Element {
    fn stride(&self) -> usize {
        self.props.iter().map(|(_, t)| t.size()).sum()
    }
}

fn read_header<R: BufRead>(r: &mut R) -> Result<Vec<Element>> {
    let mut line = String::new();
    let mut next = |line: &mut String| -> Result<()> {
        line.clear();
        let n = r
            .read_line(line)
            .map_err(|e| Error::Format(format!("ply header: {e}")))?;
        if n == 0 {
            return Err(Error::Format("ply header: unexpected end of file".into()));
        }
        Ok(())
    };
    next(&mut line)?;
    if line.trim_end() != "ply" {
        return Err(Error::Format("not a ply file (missing magic)".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut format_ok = false;
    loop {
        next(&mut line)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _ver] => {
                if *fmt != "binary_little_endian" {
                    return Err(Error::Format(format!(
                        "unsupported ply format {fmt}; expected binary_little_endian"
                    )));
                }
                format_ok = true;
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::Format(format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", ..] => {
                return Err(Error::Format("list properties are not supported".into()))
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| Error::Format(format!("unknown property type {ty}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| Error::Format("property before element".into()))?
                    .props
                    .push((name.to_string(), ty));
            }
            _ => return Err(Error::Format(format!("bad ply header line: {}", line.trim_end()))),
        }
    }
    if !format_ok {
        return Err(Error::Format("ply header lacks a format line".into()));
    }
    Ok(elements)
}

/// Parses PLY bytes into a [`PrimitiveSet`] without features.
pub fn parse_ply(bytes: &[u8]) -> Result<PrimitiveSet> {
    let mut cursor = BufReader::new(bytes);
    let elements = read_header(&mut cursor)?;
    let mut body = Vec::new();
    cursor
        .read_to_end(&mut body)
        .map_err(|e| Error::Format(format!("ply body: {e}")))?;

    let mut offset = 0usize;
    for el in &elements {
        if el.name == "vertex" {
            return parse_vertices(el, &body[offset..]);
        }
        offset += el.count * el.stride();
    }
    Err(Error::Format("ply has no vertex element".into()))
}

fn parse_vertices(el: &Element, body: &[u8]) -> Result<PrimitiveSet> {
    let find = |name: &str| -> Result<(usize, Scalar)> {
        let mut off = 0;
        for (n, t) in &el.props {
            if n == name {
                return Ok((off, *t));
            }
            off += t.size();
        }
        Err(Error::Format(format!("ply vertex property missing: {name}")))
    };
    let mut required = Vec::new();
    for name in [
        "x", "y", "z", "opacity", "rot_0", "rot_1", "rot_2", "rot_3", "scale_0", "scale_1",
        "scale_2", "f_dc_0", "f_dc_1", "f_dc_2",
    ] {
        required.push(find(name)?);
    }
    let n_rest = el
        .props
        .iter()
        .filter(|(n, _)| n.starts_with("f_rest_"))
        .count();
    if n_rest % 3 != 0 {
        return Err(Error::Format(format!("f_rest count {n_rest} is not a multiple of 3")));
    }
    let rest_per_channel = n_rest / 3;
    let degree: u8 = if rest_per_channel >= 3 { 1 } else { 0 };
    if ![0, 3, 8, 15].contains(&rest_per_channel) {
        return Err(Error::Format(format!("unexpected f_rest count {n_rest}")));
    }
    let mut rest = Vec::new();
    if degree == 1 {
        for c in 0..3 {
            for k in 0..3 {
                rest.push(find(&format!("f_rest_{}", c * rest_per_channel + k))?);
            }
        }
    }

    let stride = el.stride();
    if body.len() < el.count * stride {
        return Err(Error::Format(format!(
            "ply truncated: {} vertices need {} bytes, found {}",
            el.count,
            el.count * stride,
            body.len()
        )));
    }
    let mut set = PrimitiveSet::new(degree, None);
    let s = set.sh_per_channel();
    for i in 0..el.count {
        let rec = &body[i * stride..(i + 1) * stride];
        let get = |(off, t): (usize, Scalar)| t.read(&rec[off..]);
        let v: Vec<f64> = required.iter().map(|&p| get(p)).collect();
        let q = normalize_quat([v[4], v[5], v[6], v[7]])
            .map_err(|_| Error::Format(format!("zero-norm quaternion at vertex {i}")))?;
        set.positions.push(Vector3::new(v[0], v[1], v[2]));
        set.opacities.push(v[3]);
        set.rotations.push(q);
        set.log_scales.push(Vector3::new(v[8], v[9], v[10]));
        for c in 0..3 {
            set.sh.push(v[11 + c]);
            for k in 0..s - 1 {
                set.sh.push(get(rest[c * 3 + k]));
            }
        }
    }
    Ok(set)
}

/// Serializes without features (those go in the sidecar).
pub fn ply_bytes(set: &PrimitiveSet) -> Vec<u8> {
    let s = set.sh_per_channel();
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", set.len()));
    let mut names: Vec<String> = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for k in 0..3 * (s - 1) {
        names.push(format!("f_rest_{k}"));
    }
    names.push("opacity".into());
    names.extend(["scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"].map(String::from));
    for n in &names {
        header.push_str(&format!("property float {n}\n"));
    }
    header.push_str("end_header\n");

    let mut out = header.into_bytes();
    out.reserve(set.len() * names.len() * 4);
    for i in 0..set.len() {
        let p = set.positions[i];
        let sh = set.sh_coeffs(i);
        let mut rec: Vec<f64> = vec![p.x, p.y, p.z, sh[0], sh[s], sh[2 * s]];
        for c in 0..3 {
            rec.extend_from_slice(&sh[c * s + 1..(c + 1) * s]);
        }
        rec.push(set.opacities[i]);
        rec.extend(set.log_scales[i].iter());
        rec.extend_from_slice(&set.rotations[i]);
        for v in rec {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Raw sidecar: `u64 count, u64 dim, count*dim f32`, all little-endian.
pub fn parse_sidecar(bytes: &[u8]) -> Result<Features> {
    if bytes.len() < 16 {
        return Err(Error::Format("feature sidecar shorter than its header".into()));
    }
    let count = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let dim = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let need = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("feature sidecar size overflow".into()))?;
    if bytes.len() - 16 != need {
        return Err(Error::Format(format!(
            "feature sidecar holds {} data bytes, header implies {need}",
            bytes.len() - 16
        )));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(Features { dim, data })
}

pub fn sidecar_bytes(f: &Features) -> Vec<u8> {
    let count = if f.dim == 0 { 0 } else { f.data.len() / f.dim };
    let mut out = Vec::with_capacity(16 + f.data.len() * 4);
    out.extend_from_slice(&(count as u64).to_le_bytes());
    out.extend_from_slice(&(f.dim as u64).to_le_bytes());
    for v in &f.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Loads a PLY and, optionally, its feature sidecar.
pub fn load_primitives(path: impl AsRef<Path>, sidecar: Option<&Path>) -> Result<PrimitiveSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut set = parse_ply(&bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if let Some(sc) = sidecar {
        let bytes = std::fs::read(sc).map_err(|e| Error::io(sc, e))?;
        let feats = parse_sidecar(&bytes)?;
        attach_features(&mut set, feats)?;
    }
    Ok(set)
}

pub fn attach_features(set: &mut PrimitiveSet, feats: Features) -> Result<()> {
    let count = if feats.dim == 0 { 0 } else { feats.data.len() / feats.dim };
    if count != set.len() {
        return Err(Error::Format(format!(
            "feature count mismatch: sidecar has {count}, ply has {}",
            set.len()
        )));
    }
    set.features = Some(feats);
    Ok(())
}

/// Writes the PLY and, when the set carries features, a sidecar at `sidecar`.
pub fn save_primitives(path: impl AsRef<Path>, set: &PrimitiveSet, sidecar: Option<&Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&ply_bytes(set)).map_err(|e| Error::io(path, e))?;
    if let (Some(sc), Some(feats)) = (sidecar, &set.features) {
        std::fs::write(sc, sidecar_bytes(feats)).map_err(|e| Error::io(sc, e))?;
    }
    Ok(())
}
