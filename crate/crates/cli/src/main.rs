//! `unbend`: batch front end for skeleton extraction, straightening and synthetic tests.
//!
//! Exit status is 0 on success, 2 on a usage error and 1 when the command itself fails.
//! `UNBEND_THREADS` caps the worker threads.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use unbend_core::{
    bend, build_rig, export_volume, extract_skeleton, load_volume, make_bent_cylinder, normalized_l2, CylinderSpec,
    Endpoints, PipelineParams, Rig, Sess, SkeletonParams, StraightVolumeSpec, Vec3, Volume, VolumeGrid, VolumeRef,
};
use unbend_service::ServiceState;

const THREADS_VAR: &str = "UNBEND_THREADS";

#[derive(Parser)]
#[command(name = "unbend", version, about = "Straighten bent tubular specimens in scalar volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract the rig and write the straightened volume plus a session file.
    Straighten {
        data: PathBuf,
        meta: PathBuf,
        /// JSON list of world points, two per component (head, tail).
        endpoints: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Prism radius in voxel widths.
        #[arg(long, default_value_t = unbend_core::DEFAULT_PRISM_RADIUS_VOXELS)]
        r: f64,
        /// Isotropic output spacing; defaults to the finest input spacing.
        #[arg(long)]
        out_spacing: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print (or write) the framed skeleton as JSON.
    Skeleton {
        data: PathBuf,
        meta: PathBuf,
        endpoints: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a sine-bent cylinder, its straight counterpart and the true rig.
    Synth {
        /// Grid size: one value for a cube or `nx,ny,nz`.
        #[arg(long, default_value = "128", value_parser = parse_dims)]
        dims: [usize; 3],
        #[arg(long, default_value_t = 8.0)]
        radius: f64,
        #[arg(long, default_value_t = 20.0)]
        amplitude: f64,
        #[arg(long, default_value_t = 1.5)]
        periods: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalized L2 distance of volume A from ground truth B.
    Eval {
        a_data: PathBuf,
        a_meta: PathBuf,
        b_data: PathBuf,
        b_meta: PathBuf,
    },
    /// Serve a session over HTTP for interactive refinement.
    Serve {
        session: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// Warp a straight volume back along a rig.
    Bend {
        data: PathBuf,
        meta: PathBuf,
        /// Rig JSON (`{"keyframes": [...]}`).
        rig: PathBuf,
        /// Sidecar whose grid the output should use; defaults to a box around the rig cage.
        #[arg(long)]
        like: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PipelineArgs {
    /// Occupancy threshold.
    #[arg(long, default_value_t = unbend_core::DEFAULT_TAU)]
    tau: f64,
    /// Level sets sampled from the harmonic field.
    #[arg(long, default_value_t = unbend_core::DEFAULT_LEVEL_SETS)]
    k: usize,
    /// Smoothing iterations.
    #[arg(long, default_value_t = unbend_core::DEFAULT_SMOOTHING_ITERATIONS)]
    s: usize,
    /// Tetrahedral mesh vertex budget.
    #[arg(long, default_value_t = unbend_core::DEFAULT_VERTEX_BUDGET)]
    budget: usize,
}

impl PipelineArgs {
    fn params(&self, r: f64) -> PipelineParams {
        PipelineParams {
            tau: self.tau,
            skeleton: SkeletonParams {
                level_sets: self.k,
                smoothing: self.s,
            },
            prism_radius_voxels: r,
            vertex_budget: self.budget,
        }
    }
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [n] if n > 0 => Ok([n; 3]),
        [x, y, z] if x > 0 && y > 0 && z > 0 => Ok([x, y, z]),
        _ => Err("expected one positive size or three comma-separated sizes".into()),
    }
}

/// `[[x, y, z], ...]` or `{"points": [[x, y, z], ...]}`.
#[derive(Deserialize)]
#[serde(untagged)]
enum EndpointsFile {
    Bare(Vec<[f64; 3]>),
    Wrapped { points: Vec<[f64; 3]> },
}

fn read_endpoints(path: &Path) -> Result<Endpoints> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let points = match serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))? {
        EndpointsFile::Bare(p) | EndpointsFile::Wrapped { points: p } => p,
    };
    Ok(Endpoints::new(points.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect())?)
}

fn read_volume(data: &Path, meta: &Path) -> Result<Volume> {
    load_volume(data, meta).with_context(|| format!("loading {}", data.display()))
}

/// Parameters of a generated cylinder, written next to its volumes.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct SynthRecord {
    dims: [usize; 3],
    radius: f64,
    amplitude: f64,
    periods: f64,
    length: f64,
    keyframes: usize,
    axial_length: f64,
}

fn print_json(value: &serde_json::Value) {
    println!("{value}");
}

fn run_straighten(
    data: &Path,
    meta: &Path,
    endpoints: &Path,
    params: PipelineParams,
    out_spacing: Option<f64>,
    out: &Path,
) -> Result<()> {
    let vol = read_volume(data, meta)?;
    let ends = read_endpoints(endpoints)?;
    let (rig, run) = build_rig(&vol, &ends, &params)?;
    let s = out_spacing.unwrap_or(vol.min_spacing());
    if !(s > 0.0) {
        bail!("--out-spacing must be positive");
    }
    let spec = StraightVolumeSpec::from_rig(&rig, Vec3::new(s, s, s));
    let straight = unbend_core::straighten(&rig, &vol, &spec);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (sd, sm) = (out.join("straight.raw"), out.join("straight.json"));
    export_volume(&straight, &sd, &sm)?;
    let vref = VolumeRef::from_paths(fs::canonicalize(data)?, fs::canonicalize(meta)?)?;
    let session_path = out.join("session.json");
    Sess::new(vref, ends, rig.clone()).save(&session_path)?;
    print_json(&json!({
        "keyframes": rig.len(),
        "arclength": rig.total_length(),
        "skeleton_vertices": run.skeleton.len(),
        "pooling_factor": run.pooling_factor,
        "dilation_steps": run.dilation_steps,
        "dims": straight.dims,
        "data": sd,
        "meta": sm,
        "session": session_path,
    }));
    Ok(())
}

fn run_synth(dims: [usize; 3], radius: f64, amplitude: f64, periods: f64, out: &Path) -> Result<()> {
    if !(radius > 0.0 && amplitude >= 0.0 && periods > 0.0) {
        bail!("radius and periods must be positive and amplitude non-negative");
    }
    let spec = CylinderSpec::fitted(dims, radius, amplitude, periods)?;
    let gt = make_bent_cylinder::<f64>(&spec)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    export_volume(&gt.bent, out.join("bent.raw"), out.join("bent.json"))?;
    export_volume(&gt.straight, out.join("straight.raw"), out.join("straight.json"))?;
    fs::write(out.join("rig.json"), serde_json::to_string_pretty(&gt.true_rig)?)?;
    let ends: Vec<[f64; 3]> = unbend_core::rig_endpoints(&gt.true_rig)?
        .points
        .iter()
        .map(|p| [p.x, p.y, p.z])
        .collect();
    fs::write(out.join("endpoints.json"), serde_json::to_string_pretty(&json!({ "points": ends }))?)?;
    let record = SynthRecord {
        dims: spec.dims,
        radius: spec.radius,
        amplitude: spec.amplitude,
        periods: spec.periods,
        length: spec.length,
        keyframes: spec.keyframes,
        axial_length: gt.true_rig.total_length(),
    };
    fs::write(out.join("spec.json"), serde_json::to_string_pretty(&record)?)?;
    print_json(&serde_json::to_value(&record)?);
    Ok(())
}

/// Box around every keyframe cage, padded by two voxels.
fn cage_grid(rig: &Rig, spacing: f64) -> VolumeGrid<f64> {
    let [rx, ry] = rig.max_extent();
    let reach = rx.hypot(ry) + 2.0 * spacing;
    let (mut lo, mut hi) = (Vec3::new(f64::MAX, f64::MAX, f64::MAX), Vec3::new(f64::MIN, f64::MIN, f64::MIN));
    for p in rig.positions() {
        lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }
    let origin = Vec3::new(lo.x - reach, lo.y - reach, lo.z - reach);
    let n = |a: f64, b: f64| ((b - a + 2.0 * reach) / spacing).ceil() as usize + 1;
    VolumeGrid {
        dims: [n(lo.x, hi.x), n(lo.y, hi.y), n(lo.z, hi.z)],
        spacing: Vec3::new(spacing, spacing, spacing),
        origin,
    }
}

fn run_bend(data: &Path, meta: &Path, rig_path: &Path, like: Option<&Path>, out: &Path) -> Result<()> {
    let straight = read_volume(data, meta)?;
    let text = fs::read_to_string(rig_path).with_context(|| format!("reading {}", rig_path.display()))?;
    let rig: Rig = serde_json::from_str(&text).with_context(|| format!("parsing {}", rig_path.display()))?;
    let target = match like {
        Some(m) => {
            let text = fs::read_to_string(m).with_context(|| format!("reading {}", m.display()))?;
            let meta: unbend_core::VolumeMeta = serde_json::from_str(&text).with_context(|| format!("parsing {}", m.display()))?;
            let v = |a: [f64; 3]| Vec3::new(a[0], a[1], a[2]);
            VolumeGrid {
                dims: meta.dims,
                spacing: v(meta.spacing),
                origin: v(meta.origin),
            }
        }
        None => cage_grid(&rig, straight.min_spacing()),
    };
    let bent = bend(&rig, &straight, &target);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (bd, bm) = (out.join("bent.raw"), out.join("bent.json"));
    export_volume(&bent, &bd, &bm)?;
    print_json(&json!({ "dims": bent.dims, "data": bd, "meta": bm }));
    Ok(())
}

fn run_serve(session: &Path, params: PipelineParams, bind: SocketAddr) -> Result<()> {
    let state = ServiceState::open(session, params).with_context(|| format!("opening {}", session.display()))?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(unbend_service::serve(Arc::new(state), bind))?;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Straighten {
            data,
            meta,
            endpoints,
            pipeline,
            r,
            out_spacing,
            out,
        } => run_straighten(&data, &meta, &endpoints, pipeline.params(r), out_spacing, &out),
        Command::Skeleton {
            data,
            meta,
            endpoints,
            pipeline,
            out,
        } => {
            let vol = read_volume(&data, &meta)?;
            let params = pipeline.params(unbend_core::DEFAULT_PRISM_RADIUS_VOXELS);
            let run = extract_skeleton(&vol, &read_endpoints(&endpoints)?, &params)?;
            match out {
                Some(path) => fs::write(&path, run.skeleton.to_json()).with_context(|| format!("writing {}", path.display()))?,
                None => println!("{}", run.skeleton.to_json()),
            }
            Ok(())
        }
        Command::Synth {
            dims,
            radius,
            amplitude,
            periods,
            out,
        } => run_synth(dims, radius, amplitude, periods, &out),
        Command::Eval {
            a_data,
            a_meta,
            b_data,
            b_meta,
        } => {
            let (a, b) = (read_volume(&a_data, &a_meta)?, read_volume(&b_data, &b_meta)?);
            print_json(&json!({ "normalized_l2": normalized_l2(&a, &b)? }));
            Ok(())
        }
        Command::Serve { session, pipeline, bind } => {
            run_serve(&session, pipeline.params(unbend_core::DEFAULT_PRISM_RADIUS_VOXELS), bind)
        }
        Command::Bend {
            data,
            meta,
            rig,
            like,
            out,
        } => run_bend(&data, &meta, &rig, like.as_deref(), &out),
    }
}

fn threads_from_env() -> Result<Option<usize>, String> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("{THREADS_VAR} must be a positive integer, got `{v}`")),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match threads_from_env() {
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        }
        Ok(None) => {}
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    }
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
