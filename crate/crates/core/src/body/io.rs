//! Binary model file.
//!
//! Layout: 8-byte magic `FLSHBODY`, `u32` version, then sections. Each
//! section is a `u16` name length, the ASCII name, a `u64` payload length
//! and the payload. All numbers are little endian. Unknown tags are skipped.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::{Bone, BodyTemplate, MaterialFields, MaterialMap};
use crate::error::{Error, Result};
use crate::kinematics::RigidTransform;
use crate::math::{Mat3, Quat, Vec3};

pub const MAGIC: &[u8; 8] = b"FLSHBODY";
pub const VERSION: u32 = 1;

pub fn save_body(path: impl AsRef<Path>, body: &BodyTemplate) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_body(&mut f, body)?;
    f.flush()?;
    Ok(())
}

pub fn load_body(path: impl AsRef<Path>) -> Result<BodyTemplate> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    read_body(&bytes)
}

#[derive(Default)]
struct Buf(Vec<u8>);

impl Buf {
    fn u64(&mut self, x: usize) {
        self.0.extend_from_slice(&(x as u64).to_le_bytes());
    }
    fn i64(&mut self, x: i64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64s(&mut self, xs: &[f64]) {
        for &x in xs {
            self.f64(x);
        }
    }
    fn vec3(&mut self, v: &Vec3) {
        self.f64s(v.as_slice());
    }
    fn string(&mut self, s: &str) {
        self.u64(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn field(&mut self, xs: &[f64]) {
        self.u64(xs.len());
        self.f64s(xs);
    }
}

fn section(out: &mut impl Write, tag: &str, payload: Buf) -> Result<()> {
    out.write_all(&(tag.len() as u16).to_le_bytes())?;
    out.write_all(tag.as_bytes())?;
    out.write_all(&(payload.0.len() as u64).to_le_bytes())?;
    out.write_all(&payload.0)?;
    Ok(())
}

pub fn write_body(out: &mut impl Write, body: &BodyTemplate) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;

    let mut b = Buf::default();
    b.u64(body.tet_vertices.len());
    for p in &body.tet_vertices {
        b.vec3(p);
    }
    b.u64(body.surface_to_tet.len());
    for &i in &body.surface_to_tet {
        b.u64(i);
    }
    section(out, "VERTS", b)?;

    let mut b = Buf::default();
    b.u64(body.tets.len());
    for t in &body.tets {
        for &i in t {
            b.u64(i);
        }
    }
    section(out, "TETS", b)?;

    let mut b = Buf::default();
    b.u64(body.surface_triangles.len());
    for t in &body.surface_triangles {
        for &i in t {
            b.u64(i);
        }
    }
    section(out, "TRIS", b)?;

    let mut b = Buf::default();
    b.u64(body.bones.len());
    for bone in &body.bones {
        b.string(&bone.name);
        b.i64(bone.parent.map_or(-1, |p| p as i64));
        b.vec3(&bone.head);
        b.vec3(&bone.tail);
        let q = bone.rest_transform.rotation.quaternion();
        b.f64s(&[q.w, q.i, q.j, q.k]);
        b.vec3(&bone.rest_transform.translation);
        b.f64(bone.mass);
        b.vec3(&bone.center_of_mass);
        b.f64s(bone.inertia_tensor.as_slice());
    }
    section(out, "BONES", b)?;

    let mut b = Buf::default();
    b.u64(body.skinning_weights.len());
    for w in &body.skinning_weights {
        b.u64(w.len());
        for &(i, x) in w {
            b.u64(i);
            b.f64(x);
        }
    }
    section(out, "WEIGHTS", b)?;

    section(out, "SHAPEBASIS", matrix_payload(&body.shape_basis))?;
    if let Some(pc) = &body.pose_correctives {
        section(out, "POSECORR", matrix_payload(pc))?;
    }

    let m = &body.material_baseline;
    let map = &body.material_map;
    let mut b = Buf::default();
    for f in [&m.young, &m.poisson, &m.density, &m.fung_a, &m.fung_b] {
        b.field(f);
    }
    b.field(&body.thickness_baseline);
    b.field(&map.corpulence_weights);
    b.f64s(&[
        map.modulus_gain,
        map.thickness_gain,
        map.modulus_floor,
        map.thickness_floor,
        map.normal_stiffness_ratio,
    ]);
    section(out, "MATERIAL", b)?;
    Ok(())
}

fn matrix_payload(m: &DMatrix<f64>) -> Buf {
    let mut b = Buf::default();
    b.u64(m.nrows());
    b.u64(m.ncols());
    b.f64s(m.as_slice());
    b
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::Truncated(format!("{} ends at byte {}", self.what, self.data.len())));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    /// A count or index, bounded so a corrupt length cannot request a huge
    /// allocation: `elem_size` bytes per element must still fit.
    fn count(&mut self, elem_size: usize) -> Result<usize> {
        let n = self.u64()?;
        let left = (self.data.len() - self.pos) as u64;
        if n.saturating_mul(elem_size as u64) > left {
            return Err(Error::Truncated(format!("{} declares {n} entries past end of data", self.what)));
        }
        Ok(n as usize)
    }
    fn index(&mut self) -> Result<usize> {
        Ok(self.u64()? as usize)
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn vec3(&mut self) -> Result<Vec3> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }
    fn field(&mut self) -> Result<Vec<f64>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn string(&mut self) -> Result<String> {
        let n = self.count(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("bone name is not UTF-8".into()))
    }
    fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let r = self.index()?;
        let c = self.index()?;
        let n = r.checked_mul(c).ok_or_else(|| Error::Format("matrix size overflows".into()))?;
        if n.saturating_mul(8) > self.data.len() - self.pos {
            return Err(Error::Truncated(format!("{} matrix past end of data", self.what)));
        }
        let vals: Result<Vec<f64>> = (0..n).map(|_| self.f64()).collect();
        Ok(DMatrix::from_vec(r, c, vals?))
    }
}

pub fn read_body(bytes: &[u8]) -> Result<BodyTemplate> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("missing model file magic".into()));
    }
    let mut cur = Cursor {
        data: bytes,
        pos: MAGIC.len(),
        what: "header",
    };
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: VERSION,
        });
    }

    let mut verts = None;
    let mut tets = None;
    let mut tris = None;
    let mut bones = None;
    let mut weights = None;
    let mut shapes = None;
    let mut posecorr = None;
    let mut material = None;
    while cur.pos < bytes.len() {
        cur.what = "section header";
        let name_len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
        let tag = String::from_utf8_lossy(cur.take(name_len)?).to_string();
        let len = cur.u64()? as usize;
        let payload = if bytes.len() - cur.pos < len {
            return Err(Error::Truncated(format!("section {tag} declares {len} bytes")));
        } else {
            cur.take(len)?
        };
        let mut c = Cursor {
            data: payload,
            pos: 0,
            what: "section",
        };
        match tag.as_str() {
            "VERTS" => {
                c.what = "VERTS";
                let n = c.count(24)?;
                let v: Vec<Vec3> = (0..n).map(|_| c.vec3()).collect::<Result<_>>()?;
                let ns = c.count(8)?;
                let s: Vec<usize> = (0..ns).map(|_| c.index()).collect::<Result<_>>()?;
                verts = Some((v, s));
            }
            "TETS" => {
                c.what = "TETS";
                let n = c.count(32)?;
                tets = Some(
                    (0..n)
                        .map(|_| Ok([c.index()?, c.index()?, c.index()?, c.index()?]))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            "TRIS" => {
                c.what = "TRIS";
                let n = c.count(24)?;
                tris = Some(
                    (0..n)
                        .map(|_| Ok([c.index()?, c.index()?, c.index()?]))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            "BONES" => {
                c.what = "BONES";
                let n = c.count(1)?;
                let mut out = Vec::with_capacity(n);
                for _ in 0..n {
                    let name = c.string()?;
                    let parent = c.i64()?;
                    let head = c.vec3()?;
                    let tail = c.vec3()?;
                    let (w, i, j, k) = (c.f64()?, c.f64()?, c.f64()?, c.f64()?);
                    let translation = c.vec3()?;
                    let mass = c.f64()?;
                    let com = c.vec3()?;
                    let inertia: Vec<f64> = (0..9).map(|_| c.f64()).collect::<Result<_>>()?;
                    let q = nalgebra::Quaternion::new(w, i, j, k);
                    if (q.norm() - 1.0).abs() > 1e-9 {
                        return Err(Error::InvariantViolation(format!("bone {name} rest rotation not unit")));
                    }
                    out.push(Bone {
                        name,
                        parent: if parent < 0 { None } else { Some(parent as usize) },
                        head,
                        tail,
                        rest_transform: RigidTransform::new(Quat::new_unchecked(q), translation),
                        mass,
                        center_of_mass: com,
                        inertia_tensor: Mat3::from_column_slice(&inertia),
                    });
                }
                bones = Some(out);
            }
            "WEIGHTS" => {
                c.what = "WEIGHTS";
                let n = c.count(8)?;
                let mut out = Vec::with_capacity(n);
                for _ in 0..n {
                    let k = c.count(16)?;
                    out.push((0..k).map(|_| Ok((c.index()?, c.f64()?))).collect::<Result<Vec<_>>>()?);
                }
                weights = Some(out);
            }
            "SHAPEBASIS" => {
                c.what = "SHAPEBASIS";
                shapes = Some(c.matrix()?);
            }
            "POSECORR" => {
                c.what = "POSECORR";
                posecorr = Some(c.matrix()?);
            }
            "MATERIAL" => {
                c.what = "MATERIAL";
                let fields = MaterialFields {
                    young: c.field()?,
                    poisson: c.field()?,
                    density: c.field()?,
                    fung_a: c.field()?,
                    fung_b: c.field()?,
                };
                let thickness = c.field()?;
                let map = MaterialMap {
                    corpulence_weights: c.field()?,
                    modulus_gain: c.f64()?,
                    thickness_gain: c.f64()?,
                    modulus_floor: c.f64()?,
                    thickness_floor: c.f64()?,
                    normal_stiffness_ratio: c.f64()?,
                };
                material = Some((fields, thickness, map));
            }
            _ => {}
        }
    }

    let missing = |name: &str| Error::Format(format!("model file has no {name} section"));
    let (tet_vertices, surface_to_tet) = verts.ok_or_else(|| missing("VERTS"))?;
    let (material_baseline, thickness_baseline, material_map) = material.ok_or_else(|| missing("MATERIAL"))?;
    let surface_vertices = surface_to_tet
        .iter()
        .map(|&i| {
            tet_vertices
                .get(i)
                .copied()
                .ok_or_else(|| Error::InvariantViolation(format!("surface map index {i} out of range")))
        })
        .collect::<Result<Vec<_>>>()?;
    let body = BodyTemplate {
        surface_vertices,
        surface_to_tet,
        surface_triangles: tris.ok_or_else(|| missing("TRIS"))?,
        tet_vertices,
        tets: tets.ok_or_else(|| missing("TETS"))?,
        bones: bones.ok_or_else(|| missing("BONES"))?,
        skinning_weights: weights.ok_or_else(|| missing("WEIGHTS"))?,
        shape_basis: shapes.ok_or_else(|| missing("SHAPEBASIS"))?,
        pose_correctives: posecorr,
        material_baseline,
        thickness_baseline,
        material_map,
    };
    body.validate()?;
    Ok(body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{generate_synthetic_body, BodyConfig};

    fn encoded() -> (BodyTemplate, Vec<u8>) {
        let body = generate_synthetic_body(&BodyConfig::arm(), 1).unwrap();
        let mut bytes = Vec::new();
        write_body(&mut bytes, &body).unwrap();
        (body, bytes)
    }

    #[test]
    fn round_trip_is_exact() {
        let (body, bytes) = encoded();
        assert_eq!(read_body(&bytes).unwrap(), body);
    }

    #[test]
    fn file_round_trip_with_pose_correctives() {
        let (mut body, _) = encoded();
        let dim = crate::kinematics::Pose::dimension(body.n_bones());
        body.pose_correctives = Some(DMatrix::from_fn(3 * body.n_tet_vertices(), dim, |r, c| {
            ((r * 7 + c) % 13) as f64 * 1e-4
        }));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("arm.body");
        save_body(&path, &body).unwrap();
        assert_eq!(load_body(&path).unwrap(), body);
    }

    #[test]
    fn malformed_files() {
        assert!(matches!(read_body(&[]), Err(Error::Format(_))));
        assert!(matches!(read_body(b"NOTABODY\x01\0\0\0"), Err(Error::Format(_))));

        let (_, bytes) = encoded();
        let mut v2 = bytes.clone();
        v2[8] = 99;
        assert!(matches!(read_body(&v2), Err(Error::UnsupportedVersion { found: 99, .. })));

        for cut in [10, 20, 100, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(read_body(&bytes[..cut]), Err(Error::Truncated(_))), "cut at {cut}");
        }
    }

    #[test]
    fn bad_weights_name_the_vertex() {
        let (mut body, _) = encoded();
        body.skinning_weights[5][0].1 += 0.01;
        let mut bytes = Vec::new();
        write_body(&mut bytes, &body).unwrap();
        match read_body(&bytes) {
            Err(Error::InvariantViolation(m)) => assert!(m.contains("vertex 5"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
