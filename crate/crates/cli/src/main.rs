//! `skelfield`: synthetic bodies, skeleton conditioning, avatar training and
//! rendering from the command line.

mod commands;
mod inputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "skelfield", version, about = "Skeleton-conditioned radiance field avatars")]
struct Cli {
    /// Seed for every stochastic step; overrides `seed` in training configs
    /// and the field initialization seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for rendering (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct BodyShape {
    /// Uniform scale (1.0 gives a body about 1.63 m tall).
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Arm length multiplier.
    #[arg(long, default_value_t = 1.0)]
    arm_length: f64,
    /// Leg length multiplier.
    #[arg(long, default_value_t = 1.0)]
    leg_length: f64,
    /// Limb radius multiplier.
    #[arg(long, default_value_t = 1.0)]
    girth: f64,
    /// Mesh tessellation level (>= 1).
    #[arg(long, default_value_t = 2)]
    tessellation: u32,
}

#[derive(Debug, Args)]
struct View {
    /// Camera: `front`, `back`, `left`, `right`, or a full spec
    /// `pos=x,y,z look=x,y,z up=x,y,z fov=F res=WxH near=N far=F`.
    #[arg(long, default_value = "front")]
    camera: String,
    /// Image width for named cameras.
    #[arg(long, default_value_t = 512)]
    width: u32,
    /// Image height for named cameras.
    #[arg(long, default_value_t = 512)]
    height: u32,
    /// Distance of named cameras from the subject center.
    #[arg(long, default_value_t = 2.5)]
    radius: f64,
    /// Vertical field of view of named cameras, degrees.
    #[arg(long, default_value_t = 40.0)]
    fov: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Body archive.
    #[arg(long)]
    body: PathBuf,
    /// Input checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output checkpoint (written atomically).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Training config (TOML); relative paths inside resolve against its directory.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set render.width=32`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory receiving the effective config and the training log
    /// (default: `<out>.run`).
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Skeleton topology file (default: built-in 18-keypoint layout).
    #[arg(long)]
    topology: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Quality {
    /// Samples per ray.
    #[arg(long, default_value_t = 64)]
    samples: usize,
    /// Ray sphere padding around the posed body.
    #[arg(long, default_value_t = 0.1)]
    margin: f64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic articulated body archive.
    MakeBody {
        /// Output archive.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        shape: BodyShape,
    },
    /// Render the skeleton conditioning image of a posed body.
    RenderSkeleton {
        /// Body archive.
        #[arg(long)]
        body: PathBuf,
        /// `zero` or a pose JSON file.
        #[arg(long, default_value = "zero")]
        pose: String,
        #[command(flatten)]
        view: View,
        /// Skeleton topology file (default: built-in 18-keypoint layout).
        #[arg(long)]
        topology: Option<PathBuf>,
        /// Output PPM.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a posed silhouette as a feature image (mock guidance target).
    MakeTarget {
        /// Body archive.
        #[arg(long)]
        body: PathBuf,
        /// `zero` or a pose JSON file.
        #[arg(long, default_value = "zero")]
        pose: String,
        #[command(flatten)]
        view: View,
        /// Feature channels.
        #[arg(long, default_value_t = 4)]
        channels: usize,
        /// Feature value inside the silhouette.
        #[arg(long, default_value_t = 0.7)]
        value: f64,
        /// Output feature image.
        #[arg(long)]
        out: PathBuf,
    },
    /// Create a field around the body and fit it to the body silhouette.
    Init {
        /// Body archive.
        #[arg(long)]
        body: PathBuf,
        /// Field architecture (TOML); bounds are always taken from the body.
        #[arg(long)]
        field_config: Option<PathBuf>,
        /// Output checkpoint.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score-distillation training in the canonical pose.
    TrainStatic(TrainArgs),
    /// Joint training of the field and the density weighting network over poses.
    TrainAnim(TrainArgs),
    /// Render one posed frame of an avatar.
    Render {
        /// Body archive.
        #[arg(long)]
        body: PathBuf,
        /// Avatar checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// `zero` or a pose JSON file.
        #[arg(long, default_value = "zero")]
        pose: String,
        #[command(flatten)]
        view: View,
        #[command(flatten)]
        quality: Quality,
        /// Also write the raw feature image here.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Output PPM.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a scene's motion as numbered frames plus a manifest.
    Animate {
        /// Scene file.
        #[arg(long)]
        scene: PathBuf,
        /// File with one camera spec per line, one line per frame.
        #[arg(long, conflicts_with_all = ["orbit"])]
        camera_path: Option<PathBuf>,
        /// Render this many cameras on a circle around a single frame.
        #[arg(long)]
        orbit: Option<usize>,
        /// Clip frame for `--orbit`.
        #[arg(long, default_value_t = 0, requires = "orbit")]
        frame: usize,
        /// Camera elevation for `--orbit`, degrees.
        #[arg(long, default_value_t = 10.0)]
        elevation: f64,
        #[command(flatten)]
        view: View,
        #[command(flatten)]
        quality: Quality,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one frame of a scene with several items.
    Compose {
        /// Scene file.
        #[arg(long)]
        scene: PathBuf,
        /// Clip frame.
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[command(flatten)]
        view: View,
        #[command(flatten)]
        quality: Quality,
        /// Output PPM.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run quick invariant self-tests.
    Check,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " | ");
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    fn undocumented(cmd: &clap::Command, path: &str, out: &mut Vec<String>) {
        for a in cmd.get_arguments() {
            if a.get_help().is_none() {
                out.push(format!("{path} --{}", a.get_id()));
            }
        }
        for s in cmd.get_subcommands() {
            if s.get_about().is_none() {
                out.push(format!("{path} {}", s.get_name()));
            }
            undocumented(s, &format!("{path} {}", s.get_name()), out);
        }
    }

    #[test]
    fn every_flag_has_help() {
        let cmd = super::Cli::command();
        cmd.clone().debug_assert();
        let mut missing = Vec::new();
        undocumented(&cmd, "skelfield", &mut missing);
        assert!(missing.is_empty(), "{missing:?}");
    }
}
