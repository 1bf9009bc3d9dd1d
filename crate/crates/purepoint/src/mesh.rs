//! Triangle meshes: OFF input/output, area-weighted surface sampling, and the
//! parametric primitives behind the synthetic dataset.
//!
//! The OFF reader is deliberately forgiving about the quirks found in public
//! CAD dumps: `#` comments and blank lines are skipped, the header may carry
//! the counts on the same line, and polygons with more than three vertices are
//! fan-triangulated. The writer always emits canonical triangles, and float
//! formatting uses the shortest round-trip representation so
//! `parse(serialize(m)) == m` holds bit-exactly.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::PointCloud;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Array2<f64>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Array2<f64>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let v = vertices.nrows();
        if vertices.ncols() != 3 {
            return Err(Error::InvalidArgument("mesh vertices must be V x 3".into()));
        }
        for (fi, f) in faces.iter().enumerate() {
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidArgument(format!(
                    "face {fi} repeats a vertex index"
                )));
            }
            for &ix in f {
                if ix >= v {
                    return Err(Error::InvalidArgument(format!(
                        "face {fi} references vertex {ix} but mesh has {v}"
                    )));
                }
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.nrows()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    /// Area of face `fi` (half cross-product magnitude).
    pub fn face_area(&self, fi: usize) -> f64 {
        let [a, b, c] = self.faces[fi];
        let va = self.vertices.row(a);
        let vb = self.vertices.row(b);
        let vc = self.vertices.row(c);
        let u = [vb[0] - va[0], vb[1] - va[1], vb[2] - va[2]];
        let w = [vc[0] - va[0], vc[1] - va[1], vc[2] - va[2]];
        let cx = u[1] * w[2] - u[2] * w[1];
        let cy = u[2] * w[0] - u[0] * w[2];
        let cz = u[0] * w[1] - u[1] * w[0];
        0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Apply a per-axis scale followed by a rotation about z.
    pub fn scaled_rotated(&self, scale: [f64; 3], z_angle: f64) -> Mesh {
        let (s, c) = z_angle.sin_cos();
        let mut v = self.vertices.clone();
        for mut row in v.rows_mut() {
            let x = row[0] * scale[0];
            let y = row[1] * scale[1];
            let z = row[2] * scale[2];
            row[0] = c * x - s * y;
            row[1] = s * x + c * y;
            row[2] = z;
        }
        Mesh {
            vertices: v,
            faces: self.faces.clone(),
        }
    }
}

/// Parse OFF text into a triangle mesh.
pub fn parse_off(bytes: &[u8]) -> Result<Mesh> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::parse(1, "OFF input is not valid UTF-8"))?;

    // (1-based line number, significant tokens)
    let mut lines = text.lines().enumerate().filter_map(|(i, raw)| {
        let stripped = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let toks: Vec<&str> = stripped.split_whitespace().collect();
        if toks.is_empty() {
            None
        } else {
            Some((i + 1, toks))
        }
    });

    let (hline, htoks) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty OFF input"))?;
    let counts: Vec<&str> = if htoks[0] == "OFF" {
        if htoks.len() == 1 {
            let (cline, ctoks) = lines
                .next()
                .ok_or_else(|| Error::parse(hline, "missing counts line after OFF header"))?;
            if ctoks.len() < 3 {
                return Err(Error::parse(cline, "counts line must be 'V F E'"));
            }
            ctoks.into_iter().take(3).map(|s| s).collect()
        } else if htoks.len() >= 4 {
            htoks[1..4].to_vec()
        } else {
            return Err(Error::parse(hline, "header must be 'OFF' or 'OFF V F E'"));
        }
    } else if let Some(rest) = htoks[0].strip_prefix("OFF") {
        // Header glued to the first count: "OFF123 4 0"
        let mut toks = vec![rest];
        toks.extend(htoks[1..].iter().copied());
        if toks.len() < 3 {
            return Err(Error::parse(hline, "header must be 'OFF' or 'OFF V F E'"));
        }
        toks.into_iter().take(3).collect()
    } else {
        return Err(Error::parse(hline, "missing OFF header"));
    };

    let nv: usize = counts[0]
        .parse()
        .map_err(|_| Error::parse(hline, format!("bad vertex count '{}'", counts[0])))?;
    let nf: usize = counts[1]
        .parse()
        .map_err(|_| Error::parse(hline, format!("bad face count '{}'", counts[1])))?;

    let mut vertices = Array2::zeros((nv, 3));
    for i in 0..nv {
        let (line, toks) = lines
            .next()
            .ok_or_else(|| Error::parse(hline, format!("expected {nv} vertex lines, got {i}")))?;
        if toks.len() < 3 {
            return Err(Error::parse(line, "vertex line needs 3 coordinates"));
        }
        for d in 0..3 {
            let v: f64 = toks[d]
                .parse()
                .map_err(|_| Error::parse(line, format!("bad coordinate '{}'", toks[d])))?;
            if !v.is_finite() {
                return Err(Error::parse(line, "non-finite vertex coordinate"));
            }
            vertices[[i, d]] = v;
        }
    }

    let mut faces = Vec::with_capacity(nf);
    for i in 0..nf {
        let (line, toks) = lines
            .next()
            .ok_or_else(|| Error::parse(hline, format!("expected {nf} face lines, got {i}")))?;
        let arity: usize = toks[0]
            .parse()
            .map_err(|_| Error::parse(line, format!("bad face arity '{}'", toks[0])))?;
        if arity < 3 {
            return Err(Error::parse(line, format!("face arity {arity} < 3")));
        }
        if toks.len() < 1 + arity {
            return Err(Error::parse(
                line,
                format!("face declares {arity} vertices but lists {}", toks.len() - 1),
            ));
        }
        let mut poly = Vec::with_capacity(arity);
        for t in &toks[1..1 + arity] {
            let ix: usize = t
                .parse()
                .map_err(|_| Error::parse(line, format!("bad vertex index '{t}'")))?;
            if ix >= nv {
                return Err(Error::parse(
                    line,
                    format!("vertex index {ix} out of range (V={nv})"),
                ));
            }
            poly.push(ix);
        }
        // fan triangulation: (v0, v_i, v_{i+1})
        for w in 1..arity - 1 {
            let tri = [poly[0], poly[w], poly[w + 1]];
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::parse(line, "face repeats a vertex index"));
            }
            faces.push(tri);
        }
    }

    Mesh::new(vertices, faces)
}

/// Canonical OFF serialization: triangles only, shortest round-trip floats.
pub fn serialize_off(mesh: &Mesh) -> String {
    let mut out = String::new();
    out.push_str("OFF\n");
    out.push_str(&format!("{} {} 0\n", mesh.n_vertices(), mesh.n_faces()));
    for row in mesh.vertices.rows() {
        out.push_str(&format!("{} {} {}\n", row[0], row[1], row[2]));
    }
    for f in &mesh.faces {
        out.push_str(&format!("3 {} {} {}\n", f[0], f[1], f[2]));
    }
    out
}

/// Draw `n` points uniformly over the mesh surface: faces are chosen with
/// probability proportional to area, then a point is placed by uniform
/// barycentric sampling. Deterministic for a fixed seed.
pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let nf = mesh.n_faces();
    if nf == 0 {
        return Err(Error::InvalidArgument("mesh has no faces".into()));
    }
    let mut cum = Vec::with_capacity(nf);
    let mut total = 0.0;
    for f in 0..nf {
        total += mesh.face_area(f);
        cum.push(total);
    }
    if total <= 0.0 {
        return Err(Error::DegenerateCloud("mesh has zero surface area".into()));
    }

    let mut rng = crate::rng::named_stream(seed, "surface", &[]);
    let mut pts = Array2::zeros((n, 3));
    for i in 0..n {
        let target = rng.random_range(0.0..total);
        let fi = cum.partition_point(|&c| c <= target).min(nf - 1);
        let [a, b, c] = mesh.faces[fi];
        let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let va = mesh.vertices.row(a);
        let vb = mesh.vertices.row(b);
        let vc = mesh.vertices.row(c);
        for d in 0..3 {
            pts[[i, d]] = va[d] + u * (vb[d] - va[d]) + v * (vc[d] - va[d]);
        }
    }
    PointCloud::new(pts)
}

/// The eight primitive shape classes of the synthetic dataset, in label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Pyramid,
    Capsule,
    Plane,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 8] = [
        ShapeClass::Sphere,
        ShapeClass::Cube,
        ShapeClass::Cylinder,
        ShapeClass::Cone,
        ShapeClass::Torus,
        ShapeClass::Pyramid,
        ShapeClass::Capsule,
        ShapeClass::Plane,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cube => "cube",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Cone => "cone",
            ShapeClass::Torus => "torus",
            ShapeClass::Pyramid => "pyramid",
            ShapeClass::Capsule => "capsule",
            ShapeClass::Plane => "plane",
        }
    }

    /// Reference triangle mesh for this class, roughly unit-sized and centered.
    pub fn mesh(self) -> Mesh {
        match self {
            ShapeClass::Sphere => uv_sphere(1.0, 12, 18),
            ShapeClass::Cube => cuboid(1.0, 1.0, 1.0),
            ShapeClass::Cylinder => lathe(&[(0.55, -0.8), (0.55, 0.8)], 20, true),
            ShapeClass::Cone => lathe(&[(0.75, -0.7), (0.015, 0.7)], 20, true),
            ShapeClass::Torus => torus(0.7, 0.28, 16, 12),
            ShapeClass::Pyramid => pyramid(1.4, 1.2),
            ShapeClass::Capsule => capsule(0.45, 1.0, 10, 16),
            ShapeClass::Plane => cuboid(1.6, 1.6, 0.02),
        }
    }
}

fn push_quad(faces: &mut Vec<[usize; 3]>, a: usize, b: usize, c: usize, d: usize) {
    faces.push([a, b, c]);
    faces.push([a, c, d]);
}

fn cuboid(sx: f64, sy: f64, sz: f64) -> Mesh {
    let (hx, hy, hz) = (sx / 2.0, sy / 2.0, sz / 2.0);
    let mut verts = Vec::new();
    for &z in &[-hz, hz] {
        for &y in &[-hy, hy] {
            for &x in &[-hx, hx] {
                verts.push([x, y, z]);
            }
        }
    }
    let v = Array2::from_shape_vec((8, 3), verts.into_iter().flatten().collect()).unwrap();
    let mut faces = Vec::new();
    push_quad(&mut faces, 0, 1, 3, 2); // bottom
    push_quad(&mut faces, 4, 6, 7, 5); // top
    push_quad(&mut faces, 0, 4, 5, 1); // front
    push_quad(&mut faces, 2, 3, 7, 6); // back
    push_quad(&mut faces, 0, 2, 6, 4); // left
    push_quad(&mut faces, 1, 5, 7, 3); // right
    Mesh::new(v, faces).unwrap()
}

fn uv_sphere(r: f64, rings: usize, segs: usize) -> Mesh {
    let mut verts: Vec<[f64; 3]> = vec![[0.0, 0.0, -r]];
    for ri in 1..rings {
        let phi = std::f64::consts::PI * (ri as f64 / rings as f64) - std::f64::consts::FRAC_PI_2;
        for si in 0..segs {
            let theta = std::f64::consts::TAU * si as f64 / segs as f64;
            verts.push([
                r * phi.cos() * theta.cos(),
                r * phi.cos() * theta.sin(),
                r * phi.sin(),
            ]);
        }
    }
    let top = verts.len();
    verts.push([0.0, 0.0, r]);
    let ring = |ri: usize, si: usize| 1 + (ri - 1) * segs + (si % segs);

    let mut faces = Vec::new();
    for si in 0..segs {
        faces.push([0, ring(1, si + 1), ring(1, si)]);
        faces.push([top, ring(rings - 1, si), ring(rings - 1, si + 1)]);
    }
    for ri in 1..rings - 1 {
        for si in 0..segs {
            push_quad(
                &mut faces,
                ring(ri, si),
                ring(ri, si + 1),
                ring(ri + 1, si + 1),
                ring(ri + 1, si),
            );
        }
    }
    let n = verts.len();
    Mesh::new(
        Array2::from_shape_vec((n, 3), verts.into_iter().flatten().collect()).unwrap(),
        faces,
    )
    .unwrap()
}

/// Surface of revolution around z through the given (radius, z) profile knots,
/// optionally closed with top/bottom center fans.
fn lathe(profile: &[(f64, f64)], segs: usize, capped: bool) -> Mesh {
    let mut verts: Vec<[f64; 3]> = Vec::new();
    for &(r, z) in profile {
        for si in 0..segs {
            let theta = std::f64::consts::TAU * si as f64 / segs as f64;
            verts.push([r * theta.cos(), r * theta.sin(), z]);
        }
    }
    let at = |pi: usize, si: usize| pi * segs + (si % segs);
    let mut faces = Vec::new();
    for pi in 0..profile.len() - 1 {
        for si in 0..segs {
            push_quad(
                &mut faces,
                at(pi, si),
                at(pi, si + 1),
                at(pi + 1, si + 1),
                at(pi + 1, si),
            );
        }
    }
    if capped {
        let bottom = verts.len();
        verts.push([0.0, 0.0, profile[0].1]);
        let topc = verts.len();
        verts.push([0.0, 0.0, profile[profile.len() - 1].1]);
        let last = profile.len() - 1;
        for si in 0..segs {
            faces.push([bottom, at(0, si + 1), at(0, si)]);
            faces.push([topc, at(last, si), at(last, si + 1)]);
        }
    }
    let n = verts.len();
    Mesh::new(
        Array2::from_shape_vec((n, 3), verts.into_iter().flatten().collect()).unwrap(),
        faces,
    )
    .unwrap()
}

fn torus(major: f64, minor: f64, rings: usize, segs: usize) -> Mesh {
    let mut verts: Vec<[f64; 3]> = Vec::new();
    for ri in 0..rings {
        let u = std::f64::consts::TAU * ri as f64 / rings as f64;
        for si in 0..segs {
            let v = std::f64::consts::TAU * si as f64 / segs as f64;
            let rad = major + minor * v.cos();
            verts.push([rad * u.cos(), rad * u.sin(), minor * v.sin()]);
        }
    }
    let at = |ri: usize, si: usize| (ri % rings) * segs + (si % segs);
    let mut faces = Vec::new();
    for ri in 0..rings {
        for si in 0..segs {
            push_quad(
                &mut faces,
                at(ri, si),
                at(ri + 1, si),
                at(ri + 1, si + 1),
                at(ri, si + 1),
            );
        }
    }
    let n = verts.len();
    Mesh::new(
        Array2::from_shape_vec((n, 3), verts.into_iter().flatten().collect()).unwrap(),
        faces,
    )
    .unwrap()
}

fn pyramid(base: f64, height: f64) -> Mesh {
    let h = base / 2.0;
    let verts = vec![
        [-h, -h, -height / 2.0],
        [h, -h, -height / 2.0],
        [h, h, -height / 2.0],
        [-h, h, -height / 2.0],
        [0.0, 0.0, height / 2.0],
    ];
    let mut faces = Vec::new();
    push_quad(&mut faces, 0, 1, 2, 3);
    for i in 0..4 {
        faces.push([i, 4, (i + 1) % 4]);
    }
    Mesh::new(
        Array2::from_shape_vec((5, 3), verts.into_iter().flatten().collect()).unwrap(),
        faces,
    )
    .unwrap()
}

fn capsule(r: f64, cyl_h: f64, rings: usize, segs: usize) -> Mesh {
    // profile: lower hemisphere, straight side, upper hemisphere
    let mut profile = Vec::new();
    for i in 0..=rings {
        let phi = -std::f64::consts::FRAC_PI_2 + std::f64::consts::FRAC_PI_2 * i as f64 / rings as f64;
        profile.push((r * phi.cos(), -cyl_h / 2.0 + r * phi.sin()));
    }
    for i in 0..=rings {
        let phi = std::f64::consts::FRAC_PI_2 * i as f64 / rings as f64;
        profile.push((r * phi.cos(), cyl_h / 2.0 + r * phi.sin()));
    }
    // endpoints have near-zero radius; fan caps close the poles
    profile[0].0 = 1e-3;
    let last = profile.len() - 1;
    profile[last].0 = 1e-3;
    lathe(&profile, segs, true)
}
