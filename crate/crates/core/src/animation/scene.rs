//! Scene description and the shared-ray compositor.
//!
//! ```text
//! scene v1
//! channels 4
//! avatar checkpoint=a.ckpt body=body.sklf motion=walk.motion translation=0.8,0,0
//! mesh path=box.obj tau=40 band=0.02 features=0.8,0.2,0.2,1 rotation=0,0.5,0 scale=0.5
//! ```
//!
//! Placements map item-local points to the world as `x = s R(r) p + t` with
//! `r` an axis-angle vector. Relative paths resolve against the scene file.
//! Samples along each ray are evaluated in every item's local frame; local
//! densities are divided by the item scale, densities add, and features are
//! averaged with density weights.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use rayon::prelude::*;

use super::{AnimationError, Avatar, Frame, MotionClip, RenderSettings};
use crate::articulation::{build_vertex_index, render_bounds, ArticulatedDeformation, DrnEval, VertexIndex};
use crate::body::{rodrigues, skin, BodyParams, PosedMesh};
use crate::camera::Camera;
use crate::field::render::sample_positions;
use crate::field::{generate_rays, Deformation, FieldEval, FieldScratch, Sampling};
use crate::geometry::{closest_point_on_triangle, Aabb, Ray, Sphere, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    /// Axis-angle, radians.
    pub rotation: Vec3,
    pub translation: Vec3,
    pub scale: f64,
}

impl Default for Placement {
    fn default() -> Self {
        Self { rotation: Vec3::zeros(), translation: Vec3::zeros(), scale: 1.0 }
    }
}

impl Placement {
    pub fn matrix(&self) -> Matrix3<f64> {
        rodrigues(&self.rotation)
    }

    pub fn validate(&self) -> Result<(), AnimationError> {
        if !(self.scale > 0.0 && self.scale.is_finite()) || !self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite()) {
            return Err(AnimationError::Mesh(format!("invalid placement {self:?}")));
        }
        Ok(())
    }
}

/// Item-local to world transform with cached rotation.
#[derive(Debug, Clone, Copy)]
struct Frame3 {
    r: Matrix3<f64>,
    rt: Matrix3<f64>,
    t: Vec3,
    s: f64,
}

impl Frame3 {
    fn new(p: &Placement) -> Self {
        let r = p.matrix();
        Self { r, rt: r.transpose(), t: p.translation, s: p.scale }
    }

    fn to_local(&self, x: &Vec3) -> Vec3 {
        self.rt * (x - self.t) / self.s
    }

    fn sphere_to_world(&self, s: &Sphere) -> Sphere {
        Sphere { center: self.r * s.center * self.s + self.t, radius: s.radius * self.s }
    }
}

/// Static triangle mesh rendered as a constant-density shell.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshAsset {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    /// Density inside the shell, in local units.
    pub tau: f64,
    /// Shell half-width: points within this distance of the surface are inside.
    pub band: f64,
    pub features: Vec<f64>,
}

impl MeshAsset {
    fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.vertices).expanded(self.band)
    }

    fn distance(&self, p: &Vec3) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i as usize]);
                (closest_point_on_triangle(p, &a, &b, &c) - p).norm_squared()
            })
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }
}

/// Loads all models of an OBJ file as one triangulated mesh.
pub fn load_obj(path: &Path) -> Result<(Vec<Vec3>, Vec<[u32; 3]>), AnimationError> {
    let opts = tobj::LoadOptions { triangulate: true, single_index: true, ..Default::default() };
    let (models, _) = tobj::load_obj(path, &opts).map_err(|e| AnimationError::Mesh(format!("{}: {e}", path.display())))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for m in models {
        let base = vertices.len() as u32;
        vertices.extend(m.mesh.positions.chunks_exact(3).map(|p| Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64)));
        faces.extend(m.mesh.indices.chunks_exact(3).map(|f| [base + f[0], base + f[1], base + f[2]]));
    }
    if faces.is_empty() {
        return Err(AnimationError::Mesh(format!("{} has no triangles", path.display())));
    }
    Ok((vertices, faces))
}

#[derive(Debug, Clone)]
pub enum SceneItemKind {
    Avatar(Box<Avatar>),
    Mesh(MeshAsset),
}

#[derive(Debug, Clone)]
pub struct SceneItem {
    pub kind: SceneItemKind,
    pub placement: Placement,
    /// Avatar motion; without one the avatar stays in the canonical pose.
    pub motion: Option<MotionClip>,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub channels: usize,
    pub items: Vec<SceneItem>,
}

impl Scene {
    pub fn new(channels: usize, items: Vec<SceneItem>) -> Result<Self, AnimationError> {
        if items.is_empty() {
            return Err(AnimationError::Mesh("a scene needs at least one item".into()));
        }
        for (i, item) in items.iter().enumerate() {
            item.placement.validate()?;
            let c = match &item.kind {
                SceneItemKind::Avatar(a) => {
                    if let Some(clip) = &item.motion {
                        clip.check_joints(a.body.joint_count())?;
                    }
                    a.field.config().channels
                }
                SceneItemKind::Mesh(m) => {
                    if !(m.tau >= 0.0 && m.band > 0.0) {
                        return Err(AnimationError::Mesh(format!("item {i}: need tau >= 0 and band > 0")));
                    }
                    m.features.len()
                }
            };
            if c != channels {
                return Err(AnimationError::Mismatch(format!("item {i} has {c} channels, scene has {channels}")));
            }
        }
        Ok(Self { channels, items })
    }

    /// Longest motion clip, at least one frame.
    pub fn frame_count(&self) -> usize {
        self.items.iter().filter_map(|i| i.motion.as_ref().map(|m| m.len())).max().unwrap_or(1).max(1)
    }

    /// World-space box around every item in its rest configuration.
    pub fn rest_bounds(&self) -> Aabb {
        let mut b = Aabb::empty();
        for item in &self.items {
            let f = Frame3::new(&item.placement);
            let local = match &item.kind {
                SceneItemKind::Avatar(a) => a.body.template_bounds(),
                SceneItemKind::Mesh(m) => m.bounds(),
            };
            for k in 0..8 {
                let c = Vec3::from_fn(|a, _| if k >> a & 1 == 1 { local.max[a] } else { local.min[a] });
                b.grow(&(f.r * c * f.s + f.t));
            }
        }
        b
    }

    pub fn load(path: &Path) -> Result<Self, AnimationError> {
        let spec = SceneSpec::parse(&std::fs::read_to_string(path)?)?;
        spec.instantiate(path.parent().unwrap_or(Path::new(".")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ItemSpec {
    Avatar { checkpoint: PathBuf, body: PathBuf, motion: Option<PathBuf>, placement: Placement },
    Mesh { path: PathBuf, tau: f64, band: f64, features: Option<Vec<f64>>, placement: Placement },
}

/// Parsed scene file; paths are kept as written.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub channels: Option<usize>,
    pub items: Vec<ItemSpec>,
}

fn fmt_vec(v: &Vec3) -> String {
    format!("{},{},{}", v.x, v.y, v.z)
}

fn parse_floats(s: &str) -> Option<Vec<f64>> {
    s.split(',').map(|t| t.trim().parse::<f64>().ok()).collect()
}

impl SceneSpec {
    pub fn parse(text: &str) -> Result<Self, AnimationError> {
        let mut spec = SceneSpec { channels: None, items: Vec::new() };
        let mut seen_header = false;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| AnimationError::Parse { line: n + 1, msg };
            let mut words = line.split_whitespace();
            let head = words.next().unwrap_or_default();
            if !seen_header {
                if line != "scene v1" {
                    return Err(err(format!("expected 'scene v1', got '{line}'")));
                }
                seen_header = true;
                continue;
            }
            if head == "channels" {
                let c = words.next().and_then(|w| w.parse().ok()).filter(|&c| c > 0);
                spec.channels = Some(c.ok_or_else(|| err("bad channel count".into()))?);
                continue;
            }
            let mut placement = Placement::default();
            let mut keys: Vec<(&str, &str)> = Vec::new();
            for w in words {
                let (k, v) = w.split_once('=').ok_or_else(|| err(format!("expected key=value, got '{w}'")))?;
                let vec3 = || match parse_floats(v).as_deref() {
                    Some([x, y, z]) => Ok(Vec3::new(*x, *y, *z)),
                    _ => Err(err(format!("{k} needs three numbers"))),
                };
                match k {
                    "rotation" => placement.rotation = vec3()?,
                    "translation" => placement.translation = vec3()?,
                    "scale" => placement.scale = v.parse().map_err(|_| err(format!("bad scale '{v}'")))?,
                    _ => keys.push((k, v)),
                }
            }
            let take = |name: &str| keys.iter().find(|(k, _)| *k == name).map(|(_, v)| *v);
            let known: &[&str] = match head {
                "avatar" => &["checkpoint", "body", "motion"],
                "mesh" => &["path", "tau", "band", "features"],
                _ => return Err(err(format!("unknown item kind '{head}'"))),
            };
            if let Some((k, _)) = keys.iter().find(|(k, _)| !known.contains(k)) {
                return Err(err(format!("unknown key '{k}' for {head}")));
            }
            let num = |name: &str, default: f64| -> Result<f64, AnimationError> {
                take(name).map_or(Ok(default), |v| v.parse().map_err(|_| err(format!("bad {name} '{v}'"))))
            };
            let item = if head == "avatar" {
                ItemSpec::Avatar {
                    checkpoint: take("checkpoint").ok_or_else(|| err("avatar needs checkpoint=".into()))?.into(),
                    body: take("body").ok_or_else(|| err("avatar needs body=".into()))?.into(),
                    motion: take("motion").map(PathBuf::from),
                    placement,
                }
            } else {
                ItemSpec::Mesh {
                    path: take("path").ok_or_else(|| err("mesh needs path=".into()))?.into(),
                    tau: num("tau", 50.0)?,
                    band: num("band", 0.01)?,
                    features: take("features").map(|v| parse_floats(v).ok_or_else(|| err("bad features".into()))).transpose()?,
                    placement,
                }
            };
            spec.items.push(item);
        }
        if !seen_header {
            return Err(AnimationError::Parse { line: 0, msg: "missing 'scene v1' header".into() });
        }
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("scene v1\n");
        if let Some(c) = self.channels {
            let _ = writeln!(s, "channels {c}");
        }
        let place = |p: &Placement| {
            format!("rotation={} translation={} scale={}", fmt_vec(&p.rotation), fmt_vec(&p.translation), p.scale)
        };
        for item in &self.items {
            match item {
                ItemSpec::Avatar { checkpoint, body, motion, placement } => {
                    let _ = write!(s, "avatar checkpoint={} body={}", checkpoint.display(), body.display());
                    if let Some(m) = motion {
                        let _ = write!(s, " motion={}", m.display());
                    }
                    let _ = writeln!(s, " {}", place(placement));
                }
                ItemSpec::Mesh { path, tau, band, features, placement } => {
                    let _ = write!(s, "mesh path={} tau={tau} band={band}", path.display());
                    if let Some(f) = features {
                        let f: Vec<String> = f.iter().map(|v| v.to_string()).collect();
                        let _ = write!(s, " features={}", f.join(","));
                    }
                    let _ = writeln!(s, " {}", place(placement));
                }
            }
        }
        s
    }

    /// Loads every referenced file relative to `base`.
    pub fn instantiate(&self, base: &Path) -> Result<Scene, AnimationError> {
        let mut items = Vec::with_capacity(self.items.len());
        for item in &self.items {
            items.push(match item {
                ItemSpec::Avatar { checkpoint, body, motion, placement } => {
                    let avatar = Avatar::load(&base.join(checkpoint), &base.join(body))?;
                    let motion = motion.as_ref().map(|m| super::load_motion(&base.join(m), &avatar.body)).transpose()?;
                    SceneItem { kind: SceneItemKind::Avatar(Box::new(avatar)), placement: placement.clone(), motion }
                }
                ItemSpec::Mesh { .. } => continue,
            });
        }
        let channels = self
            .channels
            .or_else(|| {
                items.iter().find_map(|i| match &i.kind {
                    SceneItemKind::Avatar(a) => Some(a.field.config().channels),
                    SceneItemKind::Mesh(_) => None,
                })
            })
            .ok_or_else(|| AnimationError::Mesh("scene without avatars needs a 'channels' line".into()))?;
        let mut all = Vec::with_capacity(self.items.len());
        let mut avatars = items.into_iter();
        for item in &self.items {
            match item {
                ItemSpec::Avatar { .. } => all.push(avatars.next().expect("one loaded avatar per spec")),
                ItemSpec::Mesh { path, tau, band, features, placement } => {
                    let (vertices, faces) = load_obj(&base.join(path))?;
                    let features = features.clone().unwrap_or_else(|| vec![1.0; channels]);
                    let asset = MeshAsset { vertices, faces, tau: *tau, band: *band, features };
                    all.push(SceneItem { kind: SceneItemKind::Mesh(asset), placement: placement.clone(), motion: None });
                }
            }
        }
        Scene::new(channels, all)
    }
}

struct PosedAvatar {
    mesh: PosedMesh,
    index: VertexIndex,
    field: FieldEval,
    drn: DrnEval,
    canonical_bounds: Aabb,
}

enum Prepared<'a> {
    Avatar(ArticulatedDeformation<'a>, &'a FieldEval),
    Mesh(&'a MeshAsset, Aabb),
}

/// Renders all items at clip frame `frame` through one set of camera rays.
pub fn render_composed(scene: &Scene, frame: usize, camera: &Camera, settings: &RenderSettings) -> Result<Frame, AnimationError> {
    let c = scene.channels;
    let bg = settings.background(c);
    if bg.len() != c {
        return Err(AnimationError::Mismatch(format!("background has {} values, scene has {c} channels", bg.len())));
    }
    let mut posed = Vec::new();
    for item in &scene.items {
        if let SceneItemKind::Avatar(a) = &item.kind {
            let params = match &item.motion {
                Some(clip) => clip.params(frame, &a.betas),
                None => BodyParams { betas: a.betas.clone(), ..BodyParams::zero(&a.body) },
            };
            let mesh = skin(&a.body, &params)?;
            let index = build_vertex_index(&mesh);
            posed.push(PosedAvatar {
                mesh,
                index,
                field: a.field.evaluator(),
                drn: a.drn.evaluator(),
                canonical_bounds: a.field.config().bounds(),
            });
        }
    }
    let mut prepared = Vec::with_capacity(scene.items.len());
    let mut spheres = Vec::with_capacity(scene.items.len());
    let mut next = posed.iter();
    for item in &scene.items {
        let f = Frame3::new(&item.placement);
        match &item.kind {
            SceneItemKind::Avatar(_) => {
                let p = next.next().expect("one posed avatar per avatar item");
                spheres.push(f.sphere_to_world(&render_bounds(&p.mesh, settings.margin)));
                let hook = ArticulatedDeformation { mesh: &p.mesh, index: &p.index, drn: &p.drn, canonical_bounds: Some(p.canonical_bounds) };
                prepared.push((f, Prepared::Avatar(hook, &p.field)));
            }
            SceneItemKind::Mesh(m) => {
                let b = m.bounds();
                spheres.push(f.sphere_to_world(&Sphere { center: b.center(), radius: 0.5 * b.extent().norm() }));
                prepared.push((f, Prepared::Mesh(m, b)));
            }
        }
    }
    let rays = generate_rays(camera, None);
    let per_ray: Vec<(Vec<f64>, f64)> = (0..rays.len())
        .into_par_iter()
        .map_init(
            || (FieldScratch::default(), vec![0.0; c], Vec::new()),
            |(scratch, cval, ts), r| {
                let ray = Ray { origin: rays.origins[r], dir: rays.dirs[r] };
                let mut spans: Vec<(f64, f64, usize)> = spheres
                    .iter()
                    .filter_map(|s| s.intersect(&ray))
                    .map(|(a, b)| (rays.near[r].max(a), rays.far[r].min(b), 1))
                    .filter(|(a, b, _)| b > a)
                    .collect();
                spans.sort_by(|x, y| x.0.total_cmp(&y.0));
                let mut groups: Vec<(f64, f64, usize)> = Vec::new();
                for s in spans {
                    match groups.last_mut() {
                        Some(g) if s.0 < g.1 => {
                            g.1 = g.1.max(s.1);
                            g.2 += 1;
                        }
                        _ => groups.push(s),
                    }
                }
                let mut omega = 1.0;
                let mut acc = vec![0.0; c];
                let mut mix = vec![0.0; c];
                for (lo, hi, n) in groups {
                    let sampling = Sampling { samples: settings.sampling.samples * n, ..settings.sampling };
                    sample_positions(lo, hi, rays.pixels[r], &sampling, ts);
                    for &(t, delta) in ts.iter() {
                        let obs = rays.origins[r] + rays.dirs[r] * t;
                        let mut sigma = 0.0;
                        let mut contributors = 0;
                        for (f, item) in &prepared {
                            let local = f.to_local(&obs);
                            let (s_k, feat): (f64, &[f64]) = match item {
                                Prepared::Avatar(hook, field) => {
                                    let w = hook.warp(&local);
                                    if w.weight == 0.0 {
                                        continue;
                                    }
                                    let tau = field.query(&w.canonical, cval, scratch);
                                    (tau * w.weight / f.s, cval)
                                }
                                Prepared::Mesh(m, b) => {
                                    if !b.contains(&local) || m.distance(&local) > m.band {
                                        continue;
                                    }
                                    (m.tau / f.s, &m.features)
                                }
                            };
                            if s_k == 0.0 {
                                continue;
                            }
                            contributors += 1;
                            if contributors == 1 {
                                mix.copy_from_slice(feat);
                            } else {
                                for (m, v) in mix.iter_mut().zip(feat) {
                                    *m = (*m * sigma + v * s_k) / (sigma + s_k);
                                }
                            }
                            sigma += s_k;
                        }
                        if sigma == 0.0 {
                            continue;
                        }
                        let trans = (-sigma * delta).exp();
                        let w = omega * (1.0 - trans);
                        for (a, v) in acc.iter_mut().zip(&mix) {
                            *a += w * v;
                        }
                        omega *= trans;
                    }
                }
                let feats = acc.iter().zip(&bg).map(|(a, b)| a + omega * b).collect();
                (feats, 1.0 - omega)
            },
        )
        .collect();
    let mut features = Vec::with_capacity(rays.len() * c);
    let mut opacity = Vec::with_capacity(rays.len());
    for (f, o) in per_ray {
        features.extend(f);
        opacity.push(o);
    }
    let image = settings.preview(c).decode(&features, camera.width, camera.height);
    Ok(Frame { width: camera.width, height: camera.height, channels: c, features, opacity, image })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_round_trip() {
        let text = "scene v1\nchannels 4\n\
            avatar checkpoint=a.ckpt body=b.sklf motion=m.motion rotation=0,1.5,0 translation=1,0,-0.5 scale=2\n\
            mesh path=box.obj tau=30 band=0.05 features=1,0,0,1 scale=0.5\n";
        let spec = SceneSpec::parse(text).unwrap();
        assert_eq!(spec.items.len(), 2);
        assert_eq!(SceneSpec::parse(&spec.to_text()).unwrap(), spec);
        match &spec.items[0] {
            ItemSpec::Avatar { placement, motion, .. } => {
                assert_eq!(placement.scale, 2.0);
                assert_eq!(motion.as_deref(), Some(Path::new("m.motion")));
            }
            _ => panic!("expected avatar"),
        }
    }

    #[test]
    fn spec_errors() {
        assert!(SceneSpec::parse("avatar checkpoint=a body=b\n").is_err());
        assert!(SceneSpec::parse("scene v1\nlight x=1\n").is_err());
        assert!(SceneSpec::parse("scene v1\navatar body=b\n").is_err());
        assert!(SceneSpec::parse("scene v1\nmesh path=a.obj color=1\n").is_err());
        assert!(SceneSpec::parse("scene v1\nmesh path=a.obj rotation=1,2\n").is_err());
    }

    #[test]
    fn placement_local_frame() {
        let p = Placement { rotation: Vec3::new(0.0, std::f64::consts::FRAC_PI_2, 0.0), translation: Vec3::new(1.0, 2.0, 3.0), scale: 2.0 };
        let f = Frame3::new(&p);
        let local = Vec3::new(0.3, -0.2, 0.1);
        let world = f.r * local * 2.0 + p.translation;
        assert!((f.to_local(&world) - local).norm() < 1e-12);
        assert!((p.matrix().determinant() - 1.0).abs() < 1e-12);
        let id = Frame3::new(&Placement::default());
        let x = Vec3::new(0.1, 0.7, -0.3);
        assert_eq!(id.to_local(&x), x);
    }

    #[test]
    fn mesh_shell_distance() {
        let m = MeshAsset {
            vertices: vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            faces: vec![[0, 1, 2]],
            tau: 10.0,
            band: 0.1,
            features: vec![1.0],
        };
        assert!((m.distance(&Vec3::new(0.2, 0.2, 0.05)) - 0.05).abs() < 1e-12);
        assert!(m.bounds().contains(&Vec3::new(0.0, 0.0, -0.1)));
    }
}
