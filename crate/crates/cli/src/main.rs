use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pointfit::commands::{self, GlobalOpts};
use pointfit::config::{resolve, FileConfig};
use pointfit::error::CliResult;
use pointfit::threads::make_pool;
use pointfit_core::fit::FitConfig;

#[derive(Parser)]
#[command(
    name = "pointfit",
    version,
    about = "Dense point cloud generation: multi-view fusion, differentiable pseudo-rendering, fitting, and evaluation"
)]
struct Cli {
    /// Random seed shared by all stochastic steps.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread count; outputs never depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// key=value config file consulted after flags, before defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Suppress informational output.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

/// Flags shared by `fit` and `view-config`, all optional so file config and
/// defaults can fill them.
#[derive(Args, Debug, Default)]
struct FitFlags {
    /// Fixed prediction viewpoints (cube corners, at most 8).
    #[arg(long)]
    n_views: Option<usize>,
    /// Novel supervision views per iteration.
    #[arg(long)]
    k_views: Option<usize>,
    /// Depth-loss weight in the joint objective.
    #[arg(long)]
    lambda: Option<f64>,
    /// Pseudo-rendering upsampling factor.
    #[arg(long)]
    upsample: Option<usize>,
    /// Square image side for maps and renders.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    stage1_lr: Option<f64>,
    #[arg(long)]
    stage2_lr: Option<f64>,
    #[arg(long)]
    stage1_iters: Option<usize>,
    #[arg(long)]
    stage2_iters: Option<usize>,
    /// Distance of fixed-view cube corners from the origin.
    #[arg(long)]
    cube_distance: Option<f64>,
    /// Retention probability below which fused points are discarded.
    #[arg(long)]
    mask_threshold: Option<f64>,
    /// World extent of the camera field of view.
    #[arg(long)]
    extent: Option<f64>,
    /// Mask sharpness of the pseudo-renderer.
    #[arg(long)]
    beta: Option<f64>,
    /// Pre-render this many ground-truth views and sample from them with
    /// replacement instead of rendering per iteration.
    #[arg(long)]
    pregen: Option<usize>,
    /// Surface samples for the final shape-error report.
    #[arg(long)]
    densify: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a ground-truth depth/mask dataset at random viewpoints.
    GenData {
        mesh: PathBuf,
        out_dir: PathBuf,
        /// Number of viewpoints.
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        extent: Option<f64>,
    },
    /// Pseudo-render a point cloud from one pose.
    PseudoRender {
        cloud: PathBuf,
        pose: PathBuf,
        /// Output files are `<prefix>depth.pfm`, `<prefix>mask.pgm`,
        /// `<prefix>stats.txt`.
        out_prefix: String,
        #[arg(long)]
        upsample: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        extent: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Fit a point cloud to a mesh by two-stage optimization.
    Fit {
        mesh: PathBuf,
        out_dir: PathBuf,
        #[command(flatten)]
        flags: FitFlags,
    },
    /// Compare a predicted cloud against densified mesh samples.
    Eval {
        pred: PathBuf,
        mesh: PathBuf,
        #[arg(long)]
        densify: Option<usize>,
        /// Use the O(nm) scan instead of the spatial index.
        #[arg(long)]
        exact_scan: bool,
        /// Append one result row to this CSV file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print the effective configuration after flag/file/default resolution.
    ViewConfig {
        #[command(flatten)]
        flags: FitFlags,
        /// gen-data viewpoint count to report.
        #[arg(long)]
        views: Option<usize>,
    },
}

fn resolve_fit_config(flags: &FitFlags, file: &FileConfig, seed: u64) -> CliResult<FitConfig> {
    let d = FitConfig::default();
    Ok(FitConfig {
        n_views: resolve(flags.n_views, file, "n-views", d.n_views)?,
        k_views: resolve(flags.k_views, file, "k-views", d.k_views)?,
        lambda: resolve(flags.lambda, file, "lambda", d.lambda)?,
        upsample: resolve(flags.upsample, file, "upsample", d.upsample)?,
        image_size: resolve(flags.size, file, "size", d.image_size)?,
        stage1_lr: resolve(flags.stage1_lr, file, "stage1-lr", d.stage1_lr)?,
        stage2_lr: resolve(flags.stage2_lr, file, "stage2-lr", d.stage2_lr)?,
        stage1_iters: resolve(flags.stage1_iters, file, "stage1-iters", d.stage1_iters)?,
        stage2_iters: resolve(flags.stage2_iters, file, "stage2-iters", d.stage2_iters)?,
        seed,
        cube_distance: resolve(flags.cube_distance, file, "cube-distance", d.cube_distance)?,
        mask_threshold: resolve(
            flags.mask_threshold,
            file,
            "mask-threshold",
            d.mask_threshold,
        )?,
        extent: resolve(flags.extent, file, "extent", d.extent)?,
        beta: resolve(flags.beta, file, "beta", d.beta)?,
        epsilon: d.epsilon,
        z_near: d.z_near,
        pregen: match flags.pregen {
            Some(n) => Some(n),
            None => file.get::<usize>("pregen")?,
        },
        densify_count: resolve(flags.densify, file, "densify", d.densify_count)?,
    })
}

fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::empty(),
    };
    let seed = resolve(cli.seed, &file, "seed", 0u64)?;
    let workers = resolve(cli.workers, &file, "workers", 1usize)?;
    let g = GlobalOpts {
        seed,
        workers,
        quiet: cli.quiet,
    };
    let pool = make_pool(workers);

    match cli.command {
        Command::GenData {
            mesh,
            out_dir,
            views,
            size,
            extent,
        } => {
            let views = resolve(views, &file, "views", 100usize)?;
            let size = resolve(size, &file, "size", 128usize)?;
            let extent = resolve(extent, &file, "extent", 2.5f64)?;
            commands::cmd_gen_data(&mesh, &out_dir, views, size, extent, &g, pool.as_ref())
        }
        Command::PseudoRender {
            cloud,
            pose,
            out_prefix,
            upsample,
            size,
            extent,
            beta,
        } => {
            let upsample = resolve(upsample, &file, "upsample", 5usize)?;
            let size = resolve(size, &file, "size", 128usize)?;
            let extent = resolve(extent, &file, "extent", 2.5f64)?;
            let beta = resolve(beta, &file, "beta", 2.0f64)?;
            commands::cmd_pseudo_render(
                &cloud,
                &pose,
                &out_prefix,
                size,
                upsample,
                extent,
                beta,
                &g,
                pool.as_ref(),
            )
        }
        Command::Fit {
            mesh,
            out_dir,
            flags,
        } => {
            let cfg = resolve_fit_config(&flags, &file, seed)?;
            commands::cmd_fit(&mesh, &out_dir, &cfg, &g, pool.as_ref())
        }
        Command::Eval {
            pred,
            mesh,
            densify,
            exact_scan,
            csv,
        } => {
            let densify = resolve(densify, &file, "densify", 100_000usize)?;
            commands::cmd_eval(
                &pred,
                &mesh,
                densify,
                exact_scan,
                csv.as_deref(),
                &g,
                pool.as_ref(),
            )
            .map(|_| ())
        }
        Command::ViewConfig { flags, views } => {
            let cfg = resolve_fit_config(&flags, &file, seed)?;
            let gen_views = resolve(views, &file, "views", 100usize)?;
            print!("{}", commands::view_config_report(&cfg, gen_views, &g));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap exits 0 for --help/--version and 2 for usage errors.
            e.exit();
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
