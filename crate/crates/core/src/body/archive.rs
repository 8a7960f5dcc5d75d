//! Body archive: magic `SKLF-BODY v1`, little-endian u64 header
//! `(N, K, F, S, P)`, f32 arrays (template, shape dirs, pose dirs, joint
//! regressor, skinning weights), then u32 faces and parents.

use std::path::Path;

use super::{ArticulatedBody, BodyData, BodyError};

pub const BODY_MAGIC: &[u8; 12] = b"SKLF-BODY v1";

pub fn encode_body(body: &ArticulatedBody) -> Vec<u8> {
    encode_body_data(body.data())
}

/// Encodes raw arrays without validating them.
pub fn encode_body_data(d: &BodyData) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BODY_MAGIC);
    for count in [d.template.len(), d.parents.len(), d.faces.len(), d.num_shape, d.num_pose_features] {
        out.extend_from_slice(&(count as u64).to_le_bytes());
    }
    let mut put_f32 = |xs: &mut dyn Iterator<Item = f32>| {
        for x in xs {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    put_f32(&mut d.template.iter().flatten().copied());
    put_f32(&mut d.shape_dirs.iter().copied());
    put_f32(&mut d.pose_dirs.iter().copied());
    put_f32(&mut d.joint_regressor.iter().copied());
    put_f32(&mut d.skinning_weights.iter().copied());
    for idx in d.faces.iter().flatten().chain(d.parents.iter()) {
        out.extend_from_slice(&idx.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], BodyError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| BodyError::Parse(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<usize, BodyError> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| BodyError::Parse(format!("{what} too large")))
    }

    fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f32>, BodyError> {
        let n = count.checked_mul(4).ok_or_else(|| BodyError::Parse(format!("{what} too large")))?;
        Ok(self
            .take(n, what)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn u32s(&mut self, count: usize, what: &str) -> Result<Vec<u32>, BodyError> {
        let n = count.checked_mul(4).ok_or_else(|| BodyError::Parse(format!("{what} too large")))?;
        Ok(self
            .take(n, what)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_body(bytes: &[u8]) -> Result<ArticulatedBody, BodyError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(BODY_MAGIC.len(), "magic")? != BODY_MAGIC {
        return Err(BodyError::Parse("bad magic".into()));
    }
    let n = r.u64("vertex count")?;
    let k = r.u64("joint count")?;
    let f = r.u64("face count")?;
    let s = r.u64("shape count")?;
    let p = r.u64("pose feature count")?;
    let mul = |a: usize, b: usize| a.checked_mul(b).ok_or_else(|| BodyError::Parse("header counts overflow".into()));
    let template = r.f32s(mul(n, 3)?, "template")?;
    let shape_dirs = r.f32s(mul(mul(n, 3)?, s)?, "shape_dirs")?;
    let pose_dirs = r.f32s(mul(mul(n, 3)?, p)?, "pose_dirs")?;
    let joint_regressor = r.f32s(mul(k, n)?, "joint_regressor")?;
    let skinning_weights = r.f32s(mul(n, k)?, "skinning_weights")?;
    let faces = r.u32s(mul(f, 3)?, "faces")?;
    let parents = r.u32s(k, "parents")?;
    if r.pos != bytes.len() {
        return Err(BodyError::Parse(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    ArticulatedBody::new(BodyData {
        template: template.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        faces: faces.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        shape_dirs,
        num_shape: s,
        pose_dirs,
        num_pose_features: p,
        joint_regressor,
        skinning_weights,
        parents,
    })
}

pub fn load_body_archive(path: &Path) -> Result<ArticulatedBody, BodyError> {
    decode_body(&std::fs::read(path)?)
}

pub fn save_body_archive(body: &ArticulatedBody, path: &Path) -> Result<(), BodyError> {
    std::fs::write(path, encode_body(body))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{make_synthetic_body, SyntheticBodyConfig};

    #[test]
    fn synthetic_round_trip_is_byte_exact() {
        let body = make_synthetic_body(&SyntheticBodyConfig { tessellation: 1, ..Default::default() });
        let bytes = encode_body(&body);
        let back = decode_body(&bytes).unwrap();
        assert_eq!(back, body);
        assert_eq!(encode_body(&back), bytes);
    }

    #[test]
    fn rejects_truncation_and_magic() {
        let body = make_synthetic_body(&SyntheticBodyConfig { tessellation: 1, ..Default::default() });
        let bytes = encode_body(&body);
        assert!(matches!(decode_body(&bytes[..bytes.len() - 2]), Err(BodyError::Parse(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_body(&bad), Err(BodyError::Parse(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(decode_body(&extra), Err(BodyError::Parse(_))));
    }

    #[test]
    fn smpl_sized_archive_loads() {
        // SMPL dimensions: 6890 vertices, 24 joints, full pose blendshapes.
        let (n, k) = (6890usize, 24usize);
        let mut parents = vec![super::super::ROOT_PARENT];
        parents.extend((1..k as u32).map(|j| (j - 1) / 2));
        let mut weights = vec![0.0f32; n * k];
        for i in 0..n {
            weights[i * k + i % k] = 1.0;
        }
        let mut regressor = vec![0.0f32; k * n];
        for j in 0..k {
            regressor[j * n + j] = 1.0;
        }
        let data = BodyData {
            template: (0..n).map(|i| [i as f32 * 1e-3, 0.0, 0.0]).collect(),
            faces: vec![[0, 1, 2]],
            shape_dirs: vec![0.0; n * 3 * 10],
            num_shape: 10,
            pose_dirs: vec![0.0; n * 3 * 207],
            num_pose_features: 207,
            joint_regressor: regressor,
            skinning_weights: weights,
            parents,
        };
        let body = ArticulatedBody::new(data).unwrap();
        let back = decode_body(&encode_body(&body)).unwrap();
        assert_eq!(back.vertex_count(), 6890);
        assert_eq!(back.joint_count(), 24);
    }

    #[test]
    fn invariant_violation_reports_row() {
        let body = make_synthetic_body(&SyntheticBodyConfig { tessellation: 1, ..Default::default() });
        let mut data = body.data().clone();
        let k = data.parents.len();
        data.skinning_weights[5 * k] = -0.25;
        let bytes = encode_body_data(&data);
        match decode_body(&bytes) {
            Err(BodyError::SkinningWeights { row, .. }) => assert_eq!(row, 5),
            other => panic!("unexpected {other:?}"),
        }
    }
}
