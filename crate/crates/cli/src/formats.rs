//! On-disk formats. All binary payloads are little-endian; every writer and
//! reader pair round-trips bit-exactly on data the format can represent.
//!
//! - Point clouds: binary PLY with float32 x, y, z.
//! - Depth maps: grayscale PFM (`Pf`), scale -1.0 (little-endian), rows
//!   bottom to top, +infinity for invalid pixels.
//! - Masks: binary PGM (`P5`), maxval 255, probabilities quantized
//!   round-to-nearest.
//! - Poses: 12 whitespace-separated decimal floats, rotation rows then
//!   translation, printed with shortest round-trip formatting.
//! - Fit checkpoints: magic `PFCK0001`, then maps, optimizer state, and the
//!   iteration counter.

use std::fs;
use std::path::Path;

use pointfit_core::fit::{AdamState, LossRecord};
use pointfit_core::geometry::ViewMaps;
use pointfit_core::math::{Mat3, Vec3};
use pointfit_core::render::{DepthImage, MaskImage};
use pointfit_core::{PointCloud, RigidTransform};

use crate::error::{io_err, CliError, CliResult};

/// Whitespace-token scanner that remembers byte offsets for error messages.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], path: &Path) -> Self {
        Cursor {
            bytes,
            pos: 0,
            path: path.display().to_string(),
        }
    }

    fn err(&self, offset: usize, what: &str) -> CliError {
        CliError::Parse(format!("{}: {what} at byte {offset}", self.path))
    }

    fn token(&mut self) -> CliResult<(usize, &'a str)> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(start, "unexpected end of header"));
        }
        core::str::from_utf8(&self.bytes[start..self.pos])
            .map(|s| (start, s))
            .map_err(|_| self.err(start, "non-ascii header token"))
    }

    fn parse<T: core::str::FromStr>(&mut self, what: &str) -> CliResult<(usize, T)> {
        let (off, tok) = self.token()?;
        tok.parse::<T>()
            .map(|v| (off, v))
            .map_err(|_| self.err(off, &format!("bad {what} `{tok}`")))
    }

    /// Consumes the single whitespace byte that separates a header from
    /// binary data.
    fn expect_separator(&mut self) -> CliResult<()> {
        if self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(self.pos, "missing whitespace before binary data"))
        }
    }

    fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

// ---- PLY ----

pub fn write_ply(path: &Path, cloud: &PointCloud) -> CliResult<()> {
    let mut buf = Vec::with_capacity(128 + cloud.len() * 12);
    buf.extend_from_slice(
        format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
             property float x\nproperty float y\nproperty float z\nend_header\n",
            cloud.len()
        )
        .as_bytes(),
    );
    for p in &cloud.points {
        buf.extend_from_slice(&(p.x as f32).to_le_bytes());
        buf.extend_from_slice(&(p.y as f32).to_le_bytes());
        buf.extend_from_slice(&(p.z as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

pub fn read_ply(path: &Path) -> CliResult<PointCloud> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut cur = Cursor::new(&bytes, path);

    let (off, magic) = cur.token()?;
    if magic != "ply" {
        return Err(cur.err(off, "missing `ply` magic"));
    }
    let mut count: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    loop {
        let (off, word) = cur.token()?;
        match word {
            "format" => {
                let (foff, f) = cur.token()?;
                let (_, v) = cur.token()?;
                if f != "binary_little_endian" || v != "1.0" {
                    return Err(cur.err(foff, &format!("unsupported format `{f} {v}`")));
                }
            }
            "comment" => {
                // Skip to end of line.
                while cur.pos < cur.bytes.len() && cur.bytes[cur.pos] != b'\n' {
                    cur.pos += 1;
                }
            }
            "element" => {
                let (eoff, kind) = cur.token()?;
                if kind != "vertex" {
                    return Err(cur.err(eoff, &format!("unsupported element `{kind}`")));
                }
                let (_, n) = cur.parse::<usize>("vertex count")?;
                count = Some(n);
            }
            "property" => {
                let (toff, ty) = cur.token()?;
                if ty != "float" {
                    return Err(cur.err(toff, &format!("unsupported property type `{ty}`")));
                }
                let (_, name) = cur.token()?;
                properties.push(name.to_string());
            }
            "end_header" => break,
            _ => return Err(cur.err(off, &format!("unknown header keyword `{word}`"))),
        }
    }
    if properties != ["x", "y", "z"] {
        return Err(cur.err(
            0,
            &format!("expected properties x, y, z; found {properties:?}"),
        ));
    }
    let count = count.ok_or_else(|| cur.err(0, "missing `element vertex` line"))?;
    cur.expect_separator()?;
    let data = cur.rest();
    let need = count * 12;
    if data.len() != need {
        return Err(cur.err(
            cur.pos,
            &format!("vertex payload is {} bytes, expected {need}", data.len()),
        ));
    }
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let at = i * 12;
        let x = f32::from_le_bytes(data[at..at + 4].try_into().unwrap());
        let y = f32::from_le_bytes(data[at + 4..at + 8].try_into().unwrap());
        let z = f32::from_le_bytes(data[at + 8..at + 12].try_into().unwrap());
        points.push(Vec3::new(x as f64, y as f64, z as f64));
    }
    Ok(PointCloud::new(points))
}

// ---- PFM ----

pub fn write_pfm(path: &Path, d: &DepthImage) -> CliResult<()> {
    let mut buf = Vec::with_capacity(32 + d.depth.len() * 4);
    buf.extend_from_slice(format!("Pf\n{} {}\n-1.0\n", d.width, d.height).as_bytes());
    for row in (0..d.height).rev() {
        for col in 0..d.width {
            let i = row * d.width + col;
            let v = if d.valid[i] {
                d.depth[i] as f32
            } else {
                f32::INFINITY
            };
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

pub fn read_pfm(path: &Path) -> CliResult<DepthImage> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut cur = Cursor::new(&bytes, path);
    let (moff, magic) = cur.token()?;
    if magic != "Pf" {
        return Err(cur.err(
            moff,
            &format!("expected grayscale PFM magic `Pf`, found `{magic}`"),
        ));
    }
    let (_, width) = cur.parse::<usize>("width")?;
    let (_, height) = cur.parse::<usize>("height")?;
    let (soff, scale) = cur.parse::<f32>("scale")?;
    if scale >= 0.0 {
        return Err(cur.err(
            soff,
            &format!("unsupported endianness: scale {scale} is not negative"),
        ));
    }
    cur.expect_separator()?;
    let data = cur.rest();
    let need = height * width * 4;
    if data.len() != need {
        return Err(cur.err(
            cur.pos,
            &format!("pixel payload is {} bytes, expected {need}", data.len()),
        ));
    }
    let mut img = DepthImage::new_invalid(height, width);
    for stored_row in 0..height {
        let row = height - 1 - stored_row; // bottom-up storage
        for col in 0..width {
            let at = (stored_row * width + col) * 4;
            let v = f32::from_le_bytes(data[at..at + 4].try_into().unwrap());
            if v != f32::INFINITY {
                let i = img.idx(row, col);
                img.depth[i] = v as f64;
                img.valid[i] = true;
            }
        }
    }
    Ok(img)
}

// ---- PGM ----

pub fn write_pgm(path: &Path, m: &MaskImage) -> CliResult<()> {
    let mut buf = Vec::with_capacity(32 + m.probability.len());
    buf.extend_from_slice(format!("P5\n{} {}\n255\n", m.width, m.height).as_bytes());
    for &p in &m.probability {
        buf.push((p * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

pub fn read_pgm(path: &Path) -> CliResult<MaskImage> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut cur = Cursor::new(&bytes, path);
    let (moff, magic) = cur.token()?;
    if magic != "P5" {
        return Err(cur.err(
            moff,
            &format!("expected binary PGM magic `P5`, found `{magic}`"),
        ));
    }
    let (_, width) = cur.parse::<usize>("width")?;
    let (_, height) = cur.parse::<usize>("height")?;
    let (voff, maxval) = cur.parse::<u32>("maxval")?;
    if maxval != 255 {
        return Err(cur.err(voff, &format!("unsupported maxval {maxval}, expected 255")));
    }
    cur.expect_separator()?;
    let data = cur.rest();
    let need = height * width;
    if data.len() != need {
        return Err(cur.err(
            cur.pos,
            &format!("pixel payload is {} bytes, expected {need}", data.len()),
        ));
    }
    let mut img = MaskImage::new_zero(height, width);
    for (i, &b) in data.iter().enumerate() {
        img.probability[i] = b as f64 / 255.0;
    }
    Ok(img)
}

// ---- Poses ----

pub fn write_pose(path: &Path, t: &RigidTransform) -> CliResult<()> {
    let r = &t.rotation;
    let text = format!(
        "{} {} {}\n{} {} {}\n{} {} {}\n{} {} {}\n",
        r.row(0).x,
        r.row(0).y,
        r.row(0).z,
        r.row(1).x,
        r.row(1).y,
        r.row(1).z,
        r.row(2).x,
        r.row(2).y,
        r.row(2).z,
        t.translation.x,
        t.translation.y,
        t.translation.z,
    );
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_pose(path: &Path) -> CliResult<RigidTransform> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut vals = [0.0f64; 12];
    let mut n = 0;
    for tok in text.split_whitespace() {
        if n >= 12 {
            return Err(CliError::Parse(format!(
                "{}: pose file has more than 12 numbers",
                path.display()
            )));
        }
        vals[n] = tok
            .parse::<f64>()
            .map_err(|_| CliError::Parse(format!("{}: bad pose number `{tok}`", path.display())))?;
        n += 1;
    }
    if n != 12 {
        return Err(CliError::Parse(format!(
            "{}: pose file has {n} numbers, expected 12",
            path.display()
        )));
    }
    let rotation = Mat3::from_rows(
        Vec3::new(vals[0], vals[1], vals[2]),
        Vec3::new(vals[3], vals[4], vals[5]),
        Vec3::new(vals[6], vals[7], vals[8]),
    );
    let t = RigidTransform::new(rotation, Vec3::new(vals[9], vals[10], vals[11]));
    t.validate()?;
    Ok(t)
}

// ---- Checkpoints ----

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PFCK0001";

fn push_f64s(buf: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct BinCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> BinCursor<'a> {
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CliError::Parse(format!(
                "{}: checkpoint truncated at byte {}",
                self.path, self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> CliResult<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> CliResult<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn write_checkpoint(
    path: &Path,
    maps: &ViewMaps,
    adam: &AdamState,
    iteration: u64,
) -> CliResult<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(maps.n_views as u32).to_le_bytes());
    buf.extend_from_slice(&(maps.height as u32).to_le_bytes());
    buf.extend_from_slice(&(maps.width as u32).to_le_bytes());
    for t in &maps.transforms {
        let r = &t.rotation;
        push_f64s(
            &mut buf,
            &[
                r.row(0).x,
                r.row(0).y,
                r.row(0).z,
                r.row(1).x,
                r.row(1).y,
                r.row(1).z,
                r.row(2).x,
                r.row(2).y,
                r.row(2).z,
                t.translation.x,
                t.translation.y,
                t.translation.z,
            ],
        );
    }
    buf.extend_from_slice(&(maps.data.len() as u64).to_le_bytes());
    push_f64s(&mut buf, &maps.data);
    buf.extend_from_slice(&(adam.m.len() as u64).to_le_bytes());
    push_f64s(&mut buf, &adam.m);
    push_f64s(&mut buf, &adam.v);
    buf.extend_from_slice(&adam.step.to_le_bytes());
    push_f64s(&mut buf, &[adam.beta1, adam.beta2, adam.eps]);
    buf.extend_from_slice(&iteration.to_le_bytes());
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

pub fn read_checkpoint(path: &Path) -> CliResult<(ViewMaps, AdamState, u64)> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut cur = BinCursor {
        bytes: &bytes,
        pos: 0,
        path: path.display().to_string(),
    };
    let magic = cur.take(8)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CliError::Parse(format!(
            "{}: bad checkpoint magic {:?} at byte 0",
            path.display(),
            magic
        )));
    }
    let n_views = cur.u32()? as usize;
    let height = cur.u32()? as usize;
    let width = cur.u32()? as usize;
    let mut transforms = Vec::with_capacity(n_views);
    for _ in 0..n_views {
        let v = cur.f64s(12)?;
        transforms.push(RigidTransform::new(
            Mat3::from_rows(
                Vec3::new(v[0], v[1], v[2]),
                Vec3::new(v[3], v[4], v[5]),
                Vec3::new(v[6], v[7], v[8]),
            ),
            Vec3::new(v[9], v[10], v[11]),
        ));
    }
    let data_len = cur.u64()? as usize;
    let mut maps = ViewMaps::zeros(transforms, height, width);
    if data_len != maps.data.len() {
        return Err(CliError::Parse(format!(
            "{}: map payload holds {data_len} values, expected {}",
            path.display(),
            maps.data.len()
        )));
    }
    maps.data = cur.f64s(data_len)?;
    let adam_len = cur.u64()? as usize;
    let m = cur.f64s(adam_len)?;
    let v = cur.f64s(adam_len)?;
    let step = cur.u64()?;
    let beta1 = cur.f64()?;
    let beta2 = cur.f64()?;
    let eps = cur.f64()?;
    let iteration = cur.u64()?;
    if cur.pos != bytes.len() {
        return Err(CliError::Parse(format!(
            "{}: {} trailing bytes after checkpoint payload",
            path.display(),
            bytes.len() - cur.pos
        )));
    }
    let adam = AdamState {
        m,
        v,
        step,
        beta1,
        beta2,
        eps,
    };
    Ok((maps, adam, iteration))
}

// ---- Loss log ----

pub fn write_losses_csv(path: &Path, records: &[LossRecord]) -> CliResult<()> {
    let mut text = String::from("iter,L_mask,L_depth,L_total\n");
    for r in records {
        text.push_str(&format!("{},{},{},{}\n", r.iter, r.mask, r.depth, r.total));
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}
