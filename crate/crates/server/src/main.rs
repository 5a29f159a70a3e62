use std::fs;
use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use drivesim_core::align::{align_all, AlignmentFrame, PoseFileRecord};
use drivesim_core::bundle::Bundle;
use drivesim_core::compositor::render_camera_view;
use drivesim_core::demo::{blob_grid, ring_views};
use drivesim_core::field::{psnr, render_image, ExposureStats, TrainConfig, DEFAULT_EPSILON, DEFAULT_SAMPLES};
use drivesim_core::io::encode_png;
use drivesim_core::maps::suite;
use drivesim_core::motion::{plan_motion, Action, AdjustParams, Anchor, MovementAttributes, FRAME_RATE};
use drivesim_core::orchestrator::backend::backend_from_env;
use drivesim_core::orchestrator::execute_round;
use drivesim_core::raster::render_topdown;
use drivesim_core::Exec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "drivesim", version, about = "Language-driven driving scene editing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Write the synthetic demo bundle to a directory.
    DemoBundle { dir: PathBuf },
    /// Plan one vehicle trajectory on a bundled map and print it as JSON.
    Plan {
        #[arg(long, default_value = "crossroad")]
        map: String,
        #[arg(long, value_enum, default_value_t = ActionArg::Straight)]
        action: ActionArg,
        /// m/s.
        #[arg(long, default_value_t = 8.0)]
        speed: f64,
        /// Index of the start lane node.
        #[arg(long, default_value_t = 0)]
        node: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a radiance field on synthetic multi-exposure views of the blob scene.
    Train {
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 16)]
        resolution: usize,
        /// Train the ablation with the exposure factor fixed at 1.
        #[arg(long)]
        no_exposure: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply commands to a bundle and write one rendered frame as PNG.
    Render {
        /// Bundle directory; the demo content when absent.
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Command to apply; repeat for several rounds.
        #[arg(long = "command", short)]
        commands: Vec<String>,
        #[arg(long, value_enum, default_value_t = KindArg::Topdown)]
        kind: KindArg,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long, default_value_t = 0)]
        camera: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Express every M-space pose of a pose file in the vehicle frame.
    Align {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ActionArg {
    Straight,
    TurnLeft,
    TurnRight,
    Park,
    Backward,
}

impl From<ActionArg> for Action {
    fn from(a: ActionArg) -> Self {
        match a {
            ActionArg::Straight => Action::Straight,
            ActionArg::TurnLeft => Action::TurnLeft,
            ActionArg::TurnRight => Action::TurnRight,
            ActionArg::Park => Action::Park,
            ActionArg::Backward => Action::Backward,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Topdown,
    Camera,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Serve { addr } => serve(addr),
        Command::DemoBundle { dir } => {
            Bundle::demo().write(&dir)?;
            println!("wrote demo bundle to {}", dir.display());
            Ok(())
        }
        Command::Plan { map, action, speed, node, seed } => plan(&map, action.into(), speed, node, seed),
        Command::Train { steps, resolution, no_exposure, out } => train(steps, resolution, !no_exposure, out),
        Command::Render { bundle, commands, kind, frame, camera, seed, out } => render(bundle, &commands, kind, frame, camera, seed, out),
        Command::Align { input, out } => {
            let records: Vec<PoseFileRecord> = serde_json::from_str(&fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?)?;
            let aligned = align_all(&AlignmentFrame::from_records(&records)?)?;
            let text = serde_json::to_string_pretty(&aligned)?;
            match out {
                Some(path) => fs::write(path, text)?,
                None => println!("{text}"),
            }
            Ok(())
        }
    }
}

fn serve(addr: SocketAddr) -> Result<()> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        let app = drivesim_server::router(drivesim_server::AppState::default());
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn plan(map_name: &str, action: Action, speed: f64, node: usize, seed: u64) -> Result<()> {
    let maps = suite();
    let Some((_, map)) = maps.iter().find(|(n, _)| *n == map_name) else {
        let names: Vec<_> = maps.iter().map(|(n, _)| *n).collect();
        bail!("unknown map {map_name:?}; available: {}", names.join(", "));
    };
    let nodes: Vec<_> = map.centerlines().collect();
    let start = nodes.get(node).with_context(|| format!("map has {} centerline nodes", nodes.len()))?;
    let anchor = Anchor { position: start.midpoint(), heading: start.heading() };
    let m = MovementAttributes { speed, action, ..Default::default() };
    let planned = plan_motion(map, anchor, &m, false, AdjustParams::default(), &mut ChaCha8Rng::seed_from_u64(seed))?;
    println!("{}", serde_json::to_string_pretty(&planned.trajectory)?);
    Ok(())
}

fn train(steps: usize, resolution: usize, exposure_aware: bool, out: Option<PathBuf>) -> Result<()> {
    let truth = blob_grid(resolution);
    let exposures = [0.005, 0.01, 0.02];
    let stats = ExposureStats::from_exposures(&exposures, DEFAULT_EPSILON)?;
    let views = ring_views(&truth, 24, &exposures, &stats, 32, Exec::default());
    let held_out = ring_views(&truth, 5, &[0.01], &stats, 32, Exec::default());
    let config = TrainConfig { resolution: [resolution; 3], steps, exposure_aware, ..Default::default() };
    let report = drivesim_core::field::train(&views, &config)?;
    let scores: Vec<f64> = held_out
        .iter()
        .map(|v| psnr(&render_image(&report.grid, &v.camera, &report.stats, DEFAULT_SAMPLES, Exec::default()).to_ldr(), &v.pixels))
        .collect();
    println!("final loss {:.3e}, held-out PSNR {:.2} dB", report.final_loss, scores.iter().sum::<f64>() / scores.len() as f64);
    if let Some(path) = out {
        fs::write(&path, report.grid.to_bytes())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn render(bundle: Option<PathBuf>, commands: &[String], kind: KindArg, frame: usize, camera: usize, seed: u64, out: PathBuf) -> Result<()> {
    let bundle = match bundle {
        Some(dir) => Bundle::load(&dir)?,
        None => Bundle::demo(),
    };
    let backend = backend_from_env()?;
    let mut scene = bundle.scene(seed);
    for c in commands {
        let result = execute_round(c, &scene, backend.as_ref()).with_context(|| format!("command {c:?}"))?;
        for e in &result.executed {
            eprintln!("round {} {:?}: {}", e.round, e.instruction.agent, e.instruction.text);
        }
        scene = result.scene;
    }
    if frame >= scene.horizon() {
        bail!("frame {frame} is outside 0..{}", scene.horizon());
    }
    let png = match kind {
        KindArg::Topdown => {
            let img = render_topdown(&scene, frame);
            encode_png(img.width, img.height, &img.pixels)?
        }
        KindArg::Camera => {
            let cam = scene.rig.get(camera).with_context(|| format!("rig has {} cameras", scene.rig.len()))?;
            let (w, h) = (cam.width, cam.height);
            let px = render_camera_view(&scene, &bundle.grid, &bundle.rig.exposure, camera, frame, FRAME_RATE, Exec::default())?;
            encode_png(w, h, &px)?
        }
    };
    fs::write(&out, png)?;
    println!("wrote {}", out.display());
    Ok(())
}
