//! Triangle meshes: OBJ ingestion, surface area, and uniform surface
//! densification into point sets.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::math::{self, Vec3};
use crate::rng::{streams, Pcg32};

/// Indexed triangle set. Triangles may be zero-area (slivers occur in real
/// CAD data) but never repeat a vertex index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

/// Points densified onto a mesh surface, tagged with the mesh content hash
/// and the seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSamples {
    pub points: PointCloud,
    pub mesh_digest: u64,
    pub seed: u64,
}

/// Samples are drawn in independent chunks of this many points; chunk `c`
/// uses sub-seed `seed ^ c`, so output never depends on worker count.
pub const DENSIFY_CHUNK: usize = 4096;

impl TriangleMesh {
    pub fn corner_positions(&self, tri: [u32; 3]) -> (Vec3, Vec3, Vec3) {
        (
            self.vertices[tri[0] as usize],
            self.vertices[tri[1] as usize],
            self.vertices[tri[2] as usize],
        )
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        for t in &self.triangles {
            if t[0] >= n || t[1] >= n || t[2] >= n {
                return Err(Error::InvalidInput("triangle index exceeds vertex count"));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::InvalidInput("triangle repeats a vertex index"));
            }
        }
        if self.vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("mesh contains non-finite vertices"));
        }
        Ok(())
    }

    /// FNV-1a over vertex coordinate bits and triangle indices; identifies
    /// mesh content independent of provenance.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for v in &self.vertices {
            eat(&v.x.to_bits().to_le_bytes());
            eat(&v.y.to_bits().to_le_bytes());
            eat(&v.z.to_bits().to_le_bytes());
        }
        for t in &self.triangles {
            eat(&t[0].to_le_bytes());
            eat(&t[1].to_le_bytes());
            eat(&t[2].to_le_bytes());
        }
        h
    }
}

pub fn triangle_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    (b - a).cross(c - a).norm() * 0.5
}

pub fn surface_area(mesh: &TriangleMesh) -> f64 {
    mesh.triangles
        .iter()
        .map(|&t| {
            let (a, b, c) = mesh.corner_positions(t);
            triangle_area(a, b, c)
        })
        .sum()
}

/// Parses the OBJ subset used for CAD ground truth: `v x y z` vertices and
/// `f` faces with 1-based indices in any of the forms `i`, `i/j`, `i//k`,
/// `i/j/k`. Faces with more than three corners are fan-triangulated from the
/// first corner. All other lines (comments, normals, groups, materials) are
/// ignored. Vertex and face order is preserved.
pub fn load_obj(text: &str) -> Result<TriangleMesh> {
    let mut mesh = TriangleMesh::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [0.0; 3];
                for coord in &mut coords {
                    let tok = tokens.next().ok_or_else(|| Error::Parse {
                        line: line_no,
                        message: "vertex line has fewer than 3 coordinates".into(),
                    })?;
                    *coord = tok.parse::<f64>().map_err(|_| Error::Parse {
                        line: line_no,
                        message: format!("bad vertex coordinate `{tok}`"),
                    })?;
                }
                mesh.vertices
                    .push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut corners = Vec::new();
                for tok in tokens {
                    let vertex_field = tok.split('/').next().unwrap_or("");
                    let index: i64 = vertex_field.parse().map_err(|_| Error::Parse {
                        line: line_no,
                        message: format!("bad face index `{tok}`"),
                    })?;
                    if index < 1 || index as usize > mesh.vertices.len() {
                        return Err(Error::IndexOutOfRange {
                            line: line_no,
                            index,
                            vertex_count: mesh.vertices.len(),
                        });
                    }
                    corners.push((index - 1) as u32);
                }
                if corners.len() < 3 {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "face has fewer than 3 corners".into(),
                    });
                }
                for i in 1..corners.len() - 1 {
                    let tri = [corners[0], corners[i], corners[i + 1]];
                    if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                        return Err(Error::Parse {
                            line: line_no,
                            message: "face repeats a vertex index".into(),
                        });
                    }
                    mesh.triangles.push(tri);
                }
            }
            _ => {}
        }
    }
    Ok(mesh)
}

/// Draws `count` points uniformly over the mesh surface: triangles are
/// chosen with probability proportional to area (cumulative table, binary
/// search, boundary ties to the lower index) and placed with folded-uniform
/// barycentric coordinates (`u + v > 1` maps to `(1-u, 1-v)`).
pub fn densify(mesh: &TriangleMesh, count: usize, seed: u64) -> Result<SurfaceSamples> {
    mesh.validate()?;
    if count == 0 {
        return Err(Error::InvalidInput("densify requires count > 0"));
    }
    // Compact cumulative-area table over positive-area triangles only, so
    // slivers get exactly zero probability.
    let mut cumulative = Vec::new();
    let mut tri_of = Vec::new();
    let mut total = 0.0;
    for (i, &t) in mesh.triangles.iter().enumerate() {
        let (a, b, c) = mesh.corner_positions(t);
        let area = triangle_area(a, b, c);
        if area > 0.0 {
            total += area;
            cumulative.push(total);
            tri_of.push(i);
        }
    }
    if !(total > 0.0) {
        return Err(Error::DegenerateMesh);
    }

    let mut points = Vec::with_capacity(count);
    let chunks = count.div_ceil(DENSIFY_CHUNK);
    for chunk in 0..chunks {
        let start = chunk * DENSIFY_CHUNK;
        let len = DENSIFY_CHUNK.min(count - start);
        let mut rng = Pcg32::new(seed ^ chunk as u64, streams::DENSIFY);
        for _ in 0..len {
            let x = rng.uniform() * total;
            let slot = cumulative
                .partition_point(|&c| c < x)
                .min(cumulative.len() - 1);
            let (a, b, c) = mesh.corner_positions(mesh.triangles[tri_of[slot]]);
            let mut u = rng.uniform();
            let mut v = rng.uniform();
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            points.push(a + (b - a) * u + (c - a) * v);
        }
    }
    Ok(SurfaceSamples {
        points: PointCloud::new(points),
        mesh_digest: mesh.digest(),
        seed,
    })
}

/// Axis-aligned cube of side 1 centered at the origin, as 12 triangles.
pub fn unit_cube() -> TriangleMesh {
    let h = 0.5;
    let mut vertices = Vec::with_capacity(8);
    for i in 0..8u32 {
        let sign = |bit: u32| if i >> bit & 1 == 1 { h } else { -h };
        vertices.push(Vec3::new(sign(0), sign(1), sign(2)));
    }
    // Two triangles per face; corner indices follow the bit layout above.
    let triangles = alloc::vec![
        [0, 1, 3],
        [0, 3, 2], // z = -h
        [4, 6, 7],
        [4, 7, 5], // z = +h
        [0, 4, 5],
        [0, 5, 1], // y = -h
        [2, 3, 7],
        [2, 7, 6], // y = +h
        [0, 2, 6],
        [0, 6, 4], // x = -h
        [1, 5, 7],
        [1, 7, 3], // x = +h
    ];
    TriangleMesh {
        vertices,
        triangles,
    }
}

/// Sphere approximated by subdividing an icosahedron `subdivisions` times
/// and projecting vertices to `radius`. Subdivision 3 gives 1280 triangles.
pub fn icosphere(radius: f64, subdivisions: usize) -> TriangleMesh {
    let phi = (1.0 + math::sqrt(5.0)) / 2.0;
    let raw = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ];
    let mut vertices: Vec<Vec3> = raw
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z).normalized().unwrap() * radius)
        .collect();
    let mut triangles: Vec<[u32; 3]> = alloc::vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for &[a, b, c] in &triangles {
            let mut mid = |i: u32, j: u32, vertices: &mut Vec<Vec3>| -> u32 {
                let key = (i.min(j), i.max(j));
                *midpoint.entry(key).or_insert_with(|| {
                    let m = (vertices[i as usize] + vertices[j as usize]) * 0.5;
                    let idx = vertices.len() as u32;
                    vertices.push(m.normalized().unwrap() * radius);
                    idx
                })
            };
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        triangles = next;
    }
    TriangleMesh {
        vertices,
        triangles,
    }
}
