use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use skelfield_core::animation::{render_composed, render_posed, render_sequence, Avatar, CameraPath, RenderSettings, Scene};
use skelfield_core::articulation::{DensityWeightNet, DrnConfig};
use skelfield_core::body::{load_body_archive, make_synthetic_body, save_body_archive, skin, ArticulatedBody, SyntheticBodyConfig};
use skelfield_core::field::{load_checkpoint, save_checkpoint, Checkpoint, FieldConfig, RadianceField, Sampling};
use skelfield_core::geometry::Bvh;
use skelfield_core::image::FeatureImage;
use skelfield_core::skeleton::{conditioning_map, render_silhouette_bvh, RasterStyle, SkeletonTopology};
use skelfield_core::trainer::{
    field_bounds, pretrain_init, silhouette_target, train_animatable, train_static, IterationSummary, PosePrior, TrainConfig,
};

use crate::inputs::{camera, camera_lines, load_params};
use crate::{Cli, Command, ConfigArgs, Quality, TrainArgs};

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("thread pool")?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::MakeBody { out, shape } => {
            let cfg = SyntheticBodyConfig {
                scale: shape.scale,
                arm_length: shape.arm_length,
                leg_length: shape.leg_length,
                girth: shape.girth,
                tessellation: shape.tessellation,
                ..SyntheticBodyConfig::default()
            };
            let body = make_synthetic_body(&cfg);
            save_body_archive(&body, &out).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} ({} vertices, {} joints)", out.display(), body.vertex_count(), body.joint_count());
        }
        Command::RenderSkeleton { body, pose, view, topology, out } => {
            let body = load_body(&body)?;
            let topology = load_topology(topology.as_deref())?;
            let mesh = skin(&body, &load_params(&body, &pose)?)?;
            let cam = camera(&view, body.template_bounds().center())?;
            let bvh = Bvh::build(&mesh.vertices, &mesh.faces);
            let map = conditioning_map(&topology, &mesh, &bvh, &cam, RasterStyle::for_resolution(cam.width, cam.height))?;
            map.image.save_ppm(&out).with_context(|| format!("writing {}", out.display()))?;
            let visible = map.keypoints.iter().filter(|k| k.visible).count();
            println!("wrote {} ({visible}/{} keypoints visible)", out.display(), map.keypoints.len());
        }
        Command::MakeTarget { body, pose, view, channels, value, out } => {
            let body = load_body(&body)?;
            let mesh = skin(&body, &load_params(&body, &pose)?)?;
            let cam = camera(&view, body.template_bounds().center())?;
            let mask = render_silhouette_bvh(&Bvh::build(&mesh.vertices, &mesh.faces), &cam);
            let mut data = silhouette_target(&mask, channels, &vec![0.0; channels]);
            data.iter_mut().for_each(|v| *v *= value);
            let img = FeatureImage::from_f64(cam.width, cam.height, channels, &data)?;
            img.save(&out).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} ({} foreground pixels)", out.display(), mask.count());
        }
        Command::Init { body, field_config, out, config } => {
            let body_data = load_body(&body)?;
            let (cfg, _) = load_config(&config, seed)?;
            let bounds = field_bounds(&body_data, cfg.render.margin);
            let field_cfg = match &field_config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    let fc: FieldConfig = toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
                    FieldConfig { seed: seed.unwrap_or(fc.seed), ..fc }.with_bounds(&bounds)
                }
                None => FieldConfig::desk_grid(&bounds, cfg.seed),
            };
            let mut field = RadianceField::new(field_cfg)?;
            let mut run = RunDir::open(&config, &out, &cfg)?;
            let result = pretrain_init(&mut field, &body_data, &cfg, &mut |s| run.log(s));
            finish_stage(&mut run, result)?;
            save(&Checkpoint { field, extra: None }, &out)?;
        }
        Command::TrainStatic(args) => {
            let (body, cfg, base, mut ckpt, topology) = train_inputs(&args, seed)?;
            let c = ckpt.field.config().channels;
            let mut predictor = cfg.guidance.build_predictor(&base, (cfg.render.width, cfg.render.height, c))?;
            let mut run = RunDir::open(&args.config, &args.out, &cfg)?;
            let result = train_static(&mut ckpt.field, predictor.as_mut(), &body, &topology, &cfg, &mut |s| run.log(s));
            finish_stage(&mut run, result)?;
            save(&ckpt, &args.out)?;
        }
        Command::TrainAnim(args) => {
            let (body, cfg, base, ckpt, topology) = train_inputs(&args, seed)?;
            let Checkpoint { mut field, extra } = ckpt;
            let mut drn = match &extra {
                Some(block) => DensityWeightNet::from_block(block)?,
                None => DensityWeightNet::new(DrnConfig::for_body_height(body.height()))?,
            };
            let prior = PosePrior::from_config(&cfg.pose_prior, &body, &base)?;
            let c = field.config().channels;
            let mut predictor = cfg.guidance.build_predictor(&base, (cfg.render.width, cfg.render.height, c))?;
            let mut run = RunDir::open(&args.config, &args.out, &cfg)?;
            let result =
                train_animatable(&mut field, &mut drn, predictor.as_mut(), &body, &topology, &prior, &cfg, &mut |s| run.log(s));
            finish_stage(&mut run, result)?;
            save(&Checkpoint { field, extra: Some(drn.to_block()) }, &args.out)?;
        }
        Command::Render { body, checkpoint, pose, view, quality, features, out } => {
            let avatar = Avatar::load(&checkpoint, &body).context("loading avatar")?;
            let params = load_params(&avatar.body, &pose)?;
            let cam = camera(&view, avatar.body.template_bounds().center())?;
            let frame = render_posed(&avatar, &params, &cam, &settings(&quality))?;
            frame.image.save_ppm(&out).with_context(|| format!("writing {}", out.display()))?;
            if let Some(path) = features {
                let img = FeatureImage::from_f64(frame.width, frame.height, frame.channels, &frame.features)?;
                img.save(&path).with_context(|| format!("writing {}", path.display()))?;
            }
            println!("wrote {}", out.display());
        }
        Command::Animate { scene, camera_path, orbit, frame, elevation, view, quality, out } => {
            let scene = Scene::load(&scene).with_context(|| format!("loading scene {}", scene.display()))?;
            let target = scene.rest_bounds().center();
            let path = if let Some(p) = camera_path {
                CameraPath::PerFrame(camera_lines(&p)?)
            } else if let Some(n) = orbit {
                CameraPath::orbit(
                    frame,
                    n,
                    target,
                    view.radius,
                    0.0,
                    elevation.to_radians(),
                    view.fov.to_radians(),
                    (view.width, view.height),
                )?
            } else {
                CameraPath::PerFrame(vec![camera(&view, target)?; scene.frame_count()])
            };
            let files = render_sequence(&scene, &path, &out, &settings(&quality))?;
            println!("wrote {} frames to {}", files.len(), out.display());
        }
        Command::Compose { scene, frame, view, quality, out } => {
            let scene = Scene::load(&scene).with_context(|| format!("loading scene {}", scene.display()))?;
            let cam = camera(&view, scene.rest_bounds().center())?;
            let f = render_composed(&scene, frame, &cam, &settings(&quality))?;
            f.image.save_ppm(&out).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {}", out.display());
        }
        Command::Check => {
            let results = skelfield_core::selfcheck::run_all();
            for r in &results {
                println!("{} {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            let failed = results.iter().filter(|r| !r.pass).count();
            if failed > 0 {
                bail!("{failed} self-check(s) failed");
            }
        }
    }
    Ok(())
}

fn settings(q: &Quality) -> RenderSettings {
    RenderSettings { sampling: Sampling { samples: q.samples, jitter_seed: None }, margin: q.margin, ..RenderSettings::default() }
}

fn load_body(path: &Path) -> Result<ArticulatedBody> {
    load_body_archive(path).with_context(|| format!("loading body {}", path.display()))
}

fn load_topology(path: Option<&Path>) -> Result<SkeletonTopology> {
    match path {
        Some(p) => SkeletonTopology::load(p).with_context(|| format!("loading topology {}", p.display())),
        None => Ok(SkeletonTopology::default_openpose()),
    }
}

/// Effective config plus the directory relative paths resolve against.
fn load_config(args: &ConfigArgs, seed: Option<u64>) -> Result<(TrainConfig, PathBuf)> {
    let (text, base) = match &args.config {
        Some(p) => (
            std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (String::new(), PathBuf::new()),
    };
    let mut overrides = args.overrides.clone();
    if let Some(s) = seed {
        overrides.push(format!("seed={s}"));
    }
    Ok((TrainConfig::with_overrides(&text, &overrides)?, base))
}

type TrainInputs = (ArticulatedBody, TrainConfig, PathBuf, Checkpoint, SkeletonTopology);

fn train_inputs(args: &TrainArgs, seed: Option<u64>) -> Result<TrainInputs> {
    let body = load_body(&args.body)?;
    let (cfg, base) = load_config(&args.config, seed)?;
    let ckpt = load_checkpoint(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let topology = load_topology(args.config.topology.as_deref())?;
    Ok((body, cfg, base, ckpt, topology))
}

fn save(ckpt: &Checkpoint, out: &Path) -> Result<()> {
    save_checkpoint(ckpt, out).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Run directory holding `config.toml` (the effective config) and `train.log`.
struct RunDir {
    log: BufWriter<File>,
    error: Option<std::io::Error>,
}

impl RunDir {
    fn open(args: &ConfigArgs, out: &Path, cfg: &TrainConfig) -> Result<Self> {
        let dir = args.run_dir.clone().unwrap_or_else(|| {
            let mut s = out.as_os_str().to_owned();
            s.push(".run");
            PathBuf::from(s)
        });
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("config.toml"), cfg.to_toml()).context("writing effective config")?;
        let log = File::create(dir.join("train.log")).context("creating train.log")?;
        Ok(Self { log: BufWriter::new(log), error: None })
    }

    fn log(&mut self, s: &IterationSummary) {
        if self.error.is_none() {
            if let Err(e) = writeln!(self.log, "{s}") {
                self.error = Some(e);
            }
        }
    }
}

fn finish_stage<T>(run: &mut RunDir, result: Result<T, skelfield_core::trainer::TrainError>) -> Result<T> {
    if let Err(e) = &result {
        let _ = writeln!(run.log, "error: {e}");
    }
    run.log.flush().context("writing train.log")?;
    if let Some(e) = run.error.take() {
        return Err(e).context("writing train.log");
    }
    Ok(result?)
}
