//! `hera`: render, animate, fit and compare hybrid mesh + splat scenes.
//!
//! Exit codes: 0 success, 2 input/asset error, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use glam::Vec3;

use hera_core::io::{
    load_cameras, load_obj, load_png_linear, load_png_raw, load_scene, save_png_srgb, save_scene,
    CameraSet,
};
use hera_core::optim::{fit_resumable, psnr, ssim, FitConfig, FitSession};
use hera_core::{
    render, Camera, Error, Image, OpacityMap, OpacityMode, PrimitiveMask, RenderOptions, Scene,
    ShMap, SortMode, Splats, ViewDirMode,
};

#[derive(Parser)]
#[command(name = "hera", version, about = "Hybrid mesh + Gaussian-splat renderer")]
struct Cli {
    /// Worker threads for rasterization and fitting (default: logical cores,
    /// or the HERA_THREADS environment variable).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene bundle from every camera in a set.
    Render(RenderArgs),
    /// Re-pose a rigged scene over a mesh sequence and render every frame.
    Animate(AnimateArgs),
    /// Optimize a scene against captured target images.
    Fit(FitArgs),
    /// Per-image and mean PSNR/SSIM between two image directories.
    Metrics(MetricsArgs),
    /// Summarize a scene bundle.
    Info(InfoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    Both,
    Mesh,
    Splats,
}

#[derive(Clone, Copy, ValueEnum)]
enum SortArg {
    Stable,
    Legacy,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    /// 8-bit sRGB PNG.
    Png,
    /// Raw float planes in the HERAMAP1 container.
    Heramap,
}

#[derive(Args)]
struct RenderOpts {
    /// Which primitives to draw.
    #[arg(long, value_enum, default_value = "both")]
    mask: MaskArg,
    /// Depth sorting strategy (legacy = direct per-pixel comparison).
    #[arg(long, value_enum, default_value = "stable")]
    sort: SortArg,
    /// Override margin in meters: splats classified in front are still
    /// placed behind the mesh where the mesh is closer by more than this.
    #[arg(long, default_value_t = hera_core::DEFAULT_LAMBDA)]
    lambda: f32,
    /// Background color as R,G,B in `[0, 1]`.
    #[arg(long, value_parser = parse_rgb, default_value = "0,0,0")]
    background: Vec3,
    /// Output image format.
    #[arg(long, value_enum, default_value = "png")]
    format: FormatArg,
}

impl RenderOpts {
    fn save(&self, dir: &Path, name: &str, image: &Image) -> Result<(), Error> {
        match self.format {
            FormatArg::Png => save_png_srgb(&dir.join(format!("{name}.png")), image),
            FormatArg::Heramap => {
                hera_core::io::save_image_heramap(&dir.join(format!("{name}.heramap")), image)
            }
        }
    }
}

impl RenderOpts {
    fn to_options(&self) -> RenderOptions {
        RenderOptions {
            lambda: self.lambda,
            sort: match self.sort {
                SortArg::Stable => SortMode::Stable,
                SortArg::Legacy => SortMode::Legacy,
            },
            mask: match self.mask {
                MaskArg::Both => PrimitiveMask::Both,
                MaskArg::Mesh => PrimitiveMask::MeshOnly,
                MaskArg::Splats => PrimitiveMask::SplatsOnly,
            },
            view_dir: ViewDirMode::CameraRay,
            ..RenderOptions::default()
        }
    }
}

#[derive(Args)]
struct RenderArgs {
    /// Scene bundle directory (mesh.obj, texture.heramap, opacity.heramap,
    /// splats.ply, rig.bin).
    #[arg(long)]
    scene: PathBuf,
    /// Camera set JSON.
    #[arg(long)]
    cameras: PathBuf,
    /// Output directory; one PNG per camera.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: RenderOpts,
}

#[derive(Args)]
struct AnimateArgs {
    /// Canonical scene bundle.
    #[arg(long)]
    canonical: PathBuf,
    /// Directory of OBJ frames sharing the canonical topology, ordered
    /// lexicographically.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    cameras: PathBuf,
    /// Output directory; one subdirectory per frame.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: RenderOpts,
}

#[derive(Args)]
struct FitArgs {
    /// Fit configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Dataset directory: cameras.json, one `NAME.png` per camera, and the
    /// initial scene bundle (maps default to zero when absent).
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for checkpoints, metrics.csv and the final bundle.
    #[arg(long)]
    out: PathBuf,
    /// Continue from the latest checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
}

#[derive(Args)]
struct InfoArgs {
    #[arg(long)]
    scene: PathBuf,
}

fn parse_rgb(s: &str) -> Result<Vec3, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected R,G,B".into());
    }
    let mut rgb = [0.0f32; 3];
    for (v, p) in rgb.iter_mut().zip(&parts) {
        *v = p
            .trim()
            .parse()
            .map_err(|_| format!("bad component {p:?}"))?;
    }
    Ok(Vec3::from_array(rgb))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("HERA_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
        {
            eprintln!("hera: failed to configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Render(args) => cmd_render(args),
        Command::Animate(args) => cmd_animate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Metrics(args) => cmd_metrics(args),
        Command::Info(args) => cmd_info(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hera: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}

fn cmd_render(args: RenderArgs) -> Result<(), Error> {
    let scene = load_scene(&args.scene, args.opts.background)?;
    let cameras = load_cameras(&args.cameras)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let opts = args.opts.to_options();
    for (name, camera) in &cameras.cameras {
        let image = render(&scene, camera, &opts)?;
        args.opts.save(&args.out, name, &image)?;
    }
    Ok(())
}

fn cmd_animate(args: AnimateArgs) -> Result<(), Error> {
    let scene = load_scene(&args.canonical, args.opts.background)?;
    let cameras = load_cameras(&args.cameras)?;
    let opts = args.opts.to_options();

    let mut frames: Vec<PathBuf> = std::fs::read_dir(&args.frames)
        .map_err(|e| Error::io(&args.frames, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "obj"))
        .collect();
    frames.sort();
    if frames.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no OBJ frames in {}",
            args.frames.display()
        )));
    }

    for frame_path in &frames {
        let frame_name = frame_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let skeleton = load_obj(frame_path)?;
        if skeleton.facets != scene.mesh.facets
            || skeleton.uv != scene.mesh.uv
            || skeleton.vertices.len() != scene.mesh.vertices.len()
        {
            return Err(Error::TopologyMismatch {
                frame: frame_path.display().to_string(),
            });
        }
        let posed = scene.pose(&skeleton.vertices)?;
        let frame_dir = args.out.join(&frame_name);
        std::fs::create_dir_all(&frame_dir).map_err(|e| Error::io(&frame_dir, e))?;
        for (name, camera) in &cameras.cameras {
            let image = render(&posed, camera, &opts)?;
            args.opts.save(&frame_dir, name, &image)?;
        }
    }
    Ok(())
}

/// Builds the fit dataset: every camera must have a matching PNG target.
fn load_fit_dataset(dir: &Path, cameras: &CameraSet) -> Result<Vec<(Camera, Image)>, Error> {
    let mut dataset = Vec::with_capacity(cameras.cameras.len());
    for (name, camera) in &cameras.cameras {
        let path = dir.join(format!("{name}.png"));
        let image = load_png_linear(&path)?;
        dataset.push((*camera, image));
    }
    Ok(dataset)
}

/// Initial scene for fitting: the bundle in the dataset directory; texture
/// and opacity maps initialize to zero when the bundle has none.
fn load_fit_scene(dir: &Path, cfg: &FitConfig) -> Result<Scene, Error> {
    let mesh_path = dir.join("mesh.obj");
    if mesh_path.exists() && !dir.join("texture.heramap").exists() {
        let skeleton = load_obj(&mesh_path)?;
        let size = cfg.map_size;
        let mesh = hera_core::TexturedMesh {
            vertices: skeleton.vertices,
            facets: skeleton.facets,
            uv: skeleton.uv,
            texture: ShMap::new(size, size, cfg.texture_degree),
            opacity: OpacityMap::new(size, size, OpacityMode::Logit),
        };
        let splats_path = dir.join("splats.ply");
        let splats = if splats_path.exists() {
            Splats::Free(hera_core::io::load_splats(&splats_path)?.splats)
        } else {
            Splats::Free(Vec::new())
        };
        let scene = Scene::new(mesh, splats, Vec3::from_array(cfg.background));
        scene.validate()?;
        return Ok(scene);
    }
    load_scene(dir, Vec3::from_array(cfg.background))
}

fn latest_checkpoint(out: &Path) -> Option<(u32, PathBuf)> {
    let mut best: Option<(u32, PathBuf)> = None;
    for entry in std::fs::read_dir(out).ok()?.flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(iter) = name
            .strip_prefix("checkpoint_")
            .and_then(|s| s.parse::<u32>().ok())
        {
            if best.as_ref().is_none_or(|(b, _)| iter > *b) {
                best = Some((iter, entry.path()));
            }
        }
    }
    best
}

fn cmd_fit(args: FitArgs) -> Result<(), Error> {
    let cfg = FitConfig::load(&args.config)?;
    let cameras = load_cameras(&args.dataset.join("cameras.json"))?;
    let dataset = load_fit_dataset(&args.dataset, &cameras)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let (scene_init, start_iter) = if args.resume {
        match latest_checkpoint(&args.out) {
            Some((iter, path)) => (
                load_scene(&path, Vec3::from_array(cfg.background))?,
                iter,
            ),
            None => (load_fit_scene(&args.dataset, &cfg)?, 0),
        }
    } else {
        (load_fit_scene(&args.dataset, &cfg)?, 0)
    };

    let session = FitSession {
        checkpoint_dir: Some(args.out.clone()),
        start_iter,
    };
    let output = fit_resumable(&scene_init, &dataset, &cfg, &session)?;

    let metrics_path = args.out.join("metrics.csv");
    let append = args.resume && metrics_path.exists();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    if append {
        use std::io::Write;
        for r in &output.report.rows {
            match r.psnr_holdout {
                Some(p) => writeln!(file, "{},{},{},{}", r.iter, r.loss, p, r.num_splats),
                None => writeln!(file, "{},{},,{}", r.iter, r.loss, r.num_splats),
            }
            .map_err(|e| Error::io(&metrics_path, e))?;
        }
    } else {
        output
            .report
            .write_csv(&mut file)
            .map_err(|e| Error::io(&metrics_path, e))?;
    }

    save_scene(&args.out.join("final"), &output.scene)?;
    if let Some(p) = output.report.final_psnr_holdout {
        println!("final holdout PSNR: {p:.3} dB");
    }
    Ok(())
}

fn cmd_metrics(args: MetricsArgs) -> Result<(), Error> {
    let list = |dir: &Path| -> Result<Vec<String>, Error> {
        let mut names: Vec<String> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|entry| entry.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                name.ends_with(".png").then_some(name)
            })
            .collect();
        names.sort();
        Ok(names)
    };
    let names_a = list(&args.a)?;
    let names_b = list(&args.b)?;
    if names_a != names_b {
        return Err(Error::SizeMismatch(format!(
            "directories hold different image sets ({} vs {} files)",
            names_a.len(),
            names_b.len()
        )));
    }
    if names_a.is_empty() {
        return Err(Error::InvalidParameter("no PNG files to compare".into()));
    }
    println!("name,psnr,ssim");
    let mut psnr_sum = 0.0f64;
    let mut ssim_sum = 0.0f64;
    let mut finite = true;
    for name in &names_a {
        let ia = load_png_raw(&args.a.join(name))?;
        let ib = load_png_raw(&args.b.join(name))?;
        let p = psnr(&ia, &ib)?;
        let s = ssim(&ia, &ib)?;
        if p.is_finite() {
            psnr_sum += p as f64;
        } else {
            finite = false;
        }
        ssim_sum += s as f64;
        println!("{name},{},{s}", format_psnr(p));
    }
    let n = names_a.len() as f64;
    let mean_psnr = if finite {
        format_psnr((psnr_sum / n) as f32)
    } else {
        "inf".into()
    };
    println!("mean,{mean_psnr},{}", ssim_sum / n);
    Ok(())
}

fn format_psnr(p: f32) -> String {
    if p.is_finite() {
        format!("{p}")
    } else {
        "inf".into()
    }
}

fn cmd_info(args: InfoArgs) -> Result<(), Error> {
    let scene = load_scene(&args.scene, Vec3::ZERO)?;
    println!("scene: {}", args.scene.display());
    println!(
        "mesh: {} vertices, {} facets",
        scene.mesh.vertices.len(),
        scene.mesh.facets.len()
    );
    println!(
        "texture: {}x{} degree {}",
        scene.mesh.texture.width, scene.mesh.texture.height, scene.mesh.texture.degree
    );
    println!(
        "opacity: {}x{} ({:?})",
        scene.mesh.opacity.width, scene.mesh.opacity.height, scene.mesh.opacity.mode
    );
    match &scene.splats {
        Splats::Free(v) => println!("splats: {} (free)", v.len()),
        Splats::Rigged(v) => println!("splats: {} (rigged)", v.len()),
    }
    Ok(())
}
