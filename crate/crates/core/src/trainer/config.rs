//! Training configuration: TOML sections, dotted-key overrides and validation.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::guidance::{
    EchoPredictor, MockPredictor, NoisePredictor, NoiseSchedule, RemotePredictor, TimestepRange, WeightMode,
};
use crate::image::FeatureImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    /// Iterations between log lines.
    pub log_every: usize,
    pub render: RenderConfig,
    pub camera: CameraRanges,
    pub optimizer: AdamConfig,
    pub pretrain: StageConfig,
    #[serde(rename = "static")]
    pub static_stage: StageConfig,
    pub animate: AnimateConfig,
    pub guidance: GuidanceConfig,
    pub pose_prior: PosePriorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            log_every: 50,
            render: RenderConfig::default(),
            camera: CameraRanges::default(),
            optimizer: AdamConfig::default(),
            pretrain: StageConfig { iterations: 1000 },
            static_stage: StageConfig { iterations: 2000 },
            animate: AnimateConfig::default(),
            guidance: GuidanceConfig::default(),
            pose_prior: PosePriorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub width: u32,
    pub height: u32,
    /// Samples per ray.
    pub samples: usize,
    /// Stratified jitter during training; evaluation renders use midpoints.
    pub jitter: bool,
    /// Per-channel background feature; empty means zeros.
    pub background: Vec<f64>,
    /// Padding around the body for the field box and the ray bounding sphere.
    pub margin: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { width: 64, height: 64, samples: 32, jitter: true, background: Vec::new(), margin: 0.1 }
    }
}

impl RenderConfig {
    pub fn background(&self, channels: usize) -> Vec<f64> {
        if self.background.is_empty() {
            vec![0.0; channels]
        } else {
            self.background.clone()
        }
    }
}

/// Spherical camera ranges; angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraRanges {
    pub radius: [f64; 2],
    pub elevation: [f64; 2],
    pub azimuth: [f64; 2],
    pub fov: [f64; 2],
    /// Look-at point; defaults to the center of the body's bounding box.
    pub center: Option<[f64; 3]>,
}

impl Default for CameraRanges {
    fn default() -> Self {
        Self { radius: [2.2, 2.8], elevation: [-10.0, 30.0], azimuth: [-180.0, 180.0], fov: [40.0, 40.0], center: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-2, beta1: 0.9, beta2: 0.99, eps: 1e-15 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnimateConfig {
    pub iterations: usize,
    /// Keep the field fixed and train only the weighting network.
    pub freeze_field: bool,
    /// Probability of drawing the canonical pose instead of a prior sample.
    pub canonical_probability: f64,
    /// Learning rate of the weighting network; defaults to the field's.
    pub drn_lr: Option<f64>,
}

impl Default for AnimateConfig {
    fn default() -> Self {
        Self { iterations: 3000, freeze_field: false, canonical_probability: 0.2, drn_lr: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    /// Analytic oracle; one target feature image per pose (the first is used
    /// for the canonical pose and for static training).
    Mock { targets: Vec<PathBuf> },
    /// Returns the injected noise.
    Echo,
    Remote { endpoint: String, prompt: String, guidance_scale: f32, timeout_ms: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub backend: BackendConfig,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Inclusive timestep range; defaults to `[0.02 T, 0.98 T]`.
    pub t_min: Option<usize>,
    pub t_max: Option<usize>,
    pub weight: WeightMode,
    /// Include `dz_t/dx = sqrt(abar_t)` in the pixel gradient.
    pub sqrt_alpha_bar: bool,
    /// Extra attempts after a connection failure or timeout.
    pub retries: u32,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            backend: BackendConfig::Echo,
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
            t_min: None,
            t_max: None,
            weight: WeightMode::Constant,
            sqrt_alpha_bar: true,
            retries: 2,
        }
    }
}

impl GuidanceConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule, TrainError> {
        Ok(NoiseSchedule::new(self.steps, self.beta_start, self.beta_end)?)
    }

    pub fn timestep_range(&self) -> Result<TimestepRange, TrainError> {
        let d = TimestepRange::default_for(self.steps);
        let r = TimestepRange { min: self.t_min.unwrap_or(d.min), max: self.t_max.unwrap_or(d.max) };
        if r.min < 1 || r.min > r.max || r.max > self.steps {
            return Err(TrainError::Config(format!("timestep range [{}, {}] outside [1, {}]", r.min, r.max, self.steps)));
        }
        Ok(r)
    }

    /// Instantiates the backend. Relative target paths resolve against `base`;
    /// targets must match the render shape.
    pub fn build_predictor(
        &self,
        base: &Path,
        (width, height, channels): (u32, u32, usize),
    ) -> Result<Box<dyn NoisePredictor>, TrainError> {
        Ok(match &self.backend {
            BackendConfig::Echo => Box::new(EchoPredictor),
            BackendConfig::Remote { endpoint, prompt, guidance_scale, timeout_ms } => Box::new(RemotePredictor {
                endpoint: endpoint.clone(),
                prompt: prompt.clone(),
                guidance_scale: *guidance_scale,
                timeout: Duration::from_millis(*timeout_ms),
            }),
            BackendConfig::Mock { targets } => {
                let mut images = Vec::with_capacity(targets.len());
                for t in targets {
                    let path = base.join(t);
                    let img = FeatureImage::load(&path).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
                    if (img.width, img.height, img.channels) != (width, height, channels) {
                        return Err(TrainError::Config(format!(
                            "{} is {}x{}x{}, render is {width}x{height}x{channels}",
                            path.display(),
                            img.width,
                            img.height,
                            img.channels
                        )));
                    }
                    images.push(img.to_f64());
                }
                Box::new(MockPredictor::new(self.schedule()?, images)?)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseMode {
    Canonical,
    BoundedRandom,
    Library,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosePriorConfig {
    pub mode: PoseMode,
    /// Symmetric bound in radians for every non-root joint axis when
    /// `bounds` is empty.
    pub max_angle: f64,
    /// Explicit `[lo, hi]` per joint axis (`3K` entries, joint-major).
    pub bounds: Vec<[f64; 2]>,
    /// Motion clip whose frames form the library.
    pub library: Option<PathBuf>,
}

impl Default for PosePriorConfig {
    fn default() -> Self {
        Self { mode: PoseMode::BoundedRandom, max_angle: 0.4, bounds: Vec::new(), library: None }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<(), TrainError> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(TrainError::Config(format!("{name}: need lo <= hi, got [{}, {}]", r[0], r[1])));
    }
    Ok(())
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: String| Err(TrainError::Config(m));
        if self.render.width == 0 || self.render.height == 0 || self.render.samples == 0 {
            return err("render resolution and samples must be positive".into());
        }
        if !(self.render.margin >= 0.0 && self.render.margin.is_finite()) {
            return err("render margin must be non-negative".into());
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return err(format!("learning rate must be positive, got {}", o.lr));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return err("adam betas must lie in [0, 1) and eps be positive".into());
        }
        if let Some(lr) = self.animate.drn_lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return err(format!("drn learning rate must be positive, got {lr}"));
            }
        }
        if !(0.0..=1.0).contains(&self.animate.canonical_probability) {
            return err("canonical_probability must lie in [0, 1]".into());
        }
        let c = &self.camera;
        check_range("camera.radius", c.radius)?;
        check_range("camera.elevation", c.elevation)?;
        check_range("camera.azimuth", c.azimuth)?;
        check_range("camera.fov", c.fov)?;
        if c.radius[0] <= 0.0 || c.elevation[0] <= -89.0 || c.elevation[1] >= 89.0 || c.fov[0] <= 0.0 || c.fov[1] >= 180.0 {
            return err("camera ranges need radius > 0, |elevation| < 89 and fov in (0, 180)".into());
        }
        for (i, b) in self.pose_prior.bounds.iter().enumerate() {
            check_range(&format!("pose_prior.bounds[{i}]"), *b)?;
        }
        if self.pose_prior.mode == PoseMode::Library && self.pose_prior.library.is_none() {
            return err("pose_prior.library is required in library mode".into());
        }
        if let BackendConfig::Mock { targets } = &self.guidance.backend {
            if targets.is_empty() {
                return err("mock backend needs at least one target".into());
            }
        }
        self.guidance.schedule()?;
        self.guidance.timestep_range()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `text` (may be empty), applies `key.path=value` overrides and
    /// validates. Values are TOML literals; anything that does not parse as one
    /// is taken as a string.
    pub fn with_overrides(text: &str, overrides: &[String]) -> Result<Self, TrainError> {
        let mut root: toml::Table = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("override '{o}' is not key=value")))?;
            let value = parse_literal(value.trim());
            let path: Vec<&str> = key.trim().split('.').collect();
            set_path(&mut root, &path, value).map_err(|m| TrainError::Config(format!("override '{o}': {m}")))?;
        }
        let cfg: Self = root.try_into().map_err(|e: toml::de::Error| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn parse_literal(s: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {s}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(s.to_string()))
}

fn set_path(table: &mut toml::Table, path: &[&str], value: toml::Value) -> Result<(), String> {
    match path {
        [] => Err("empty key".into()),
        [last] => {
            table.insert(last.to_string(), value);
            Ok(())
        }
        [head, rest @ ..] => {
            let entry = table.entry(head.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            match entry {
                toml::Value::Table(t) => set_path(t, rest, value),
                _ => Err(format!("'{head}' is not a section")),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = TrainConfig::default();
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn overrides_apply() {
        let text = "seed = 3\n[render]\nwidth = 16\n";
        let cfg = TrainConfig::with_overrides(
            text,
            &["render.height=8".into(), "optimizer.lr=0.5".into(), "guidance.backend.kind=echo".into(), "seed=9".into()],
        )
        .unwrap();
        assert_eq!((cfg.seed, cfg.render.width, cfg.render.height, cfg.optimizer.lr), (9, 16, 8, 0.5));
        let cfg = TrainConfig::with_overrides("", &["guidance.backend={kind=\"mock\", targets=[\"a.feat\"]}".into()]).unwrap();
        assert_eq!(cfg.guidance.backend, BackendConfig::Mock { targets: vec!["a.feat".into()] });
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(TrainConfig::with_overrides("", &["optimizer.lr=0".into()]).is_err());
        assert!(TrainConfig::with_overrides("", &["camera.radius=[3.0, 2.0]".into()]).is_err());
        assert!(TrainConfig::with_overrides("", &["nonsense=1".into()]).is_err());
        assert!(TrainConfig::with_overrides("", &["render".into()]).is_err());
        assert!(TrainConfig::with_overrides("", &["pose_prior.mode=library".into()]).is_err());
        assert!(TrainConfig::with_overrides("", &["guidance.t_min=0".into()]).is_err());
        assert!(TrainConfig::with_overrides("", &["seed.x=1".into()]).is_err());
    }

    #[test]
    fn timestep_range_default() {
        let r = TrainConfig::default().guidance.timestep_range().unwrap();
        assert_eq!((r.min, r.max), (20, 980));
    }
}
