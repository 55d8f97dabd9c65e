//! Command implementations. Each takes fully resolved options, so argument
//! parsing, config-file merging, and exit-code mapping stay in `main`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use pointfit_core::fit::{fit_shape, FitConfig};
use pointfit_core::geometry::CameraIntrinsics;
use pointfit_core::mesh::{densify, load_obj, TriangleMesh};
use pointfit_core::metrics::{brute_force_nearest, shape_error, ShapeError};
use pointfit_core::pool::{chunked_sum, TaskPool};
use pointfit_core::splat::SplatConfig;
use pointfit_core::{PointCloud, SurfaceSamples};

use crate::error::{io_err, CliError, CliResult};
use crate::formats;

/// Reported shape errors are raw metric values multiplied by 100; the raw
/// values are small fractions of the unit-scale shapes and scale poorly in
/// tables.
pub const METRIC_DISPLAY_SCALE: f64 = 100.0;

pub struct GlobalOpts {
    pub seed: u64,
    pub workers: usize,
    pub quiet: bool,
}

impl GlobalOpts {
    fn say(&self, msg: &str) {
        if !self.quiet {
            println!("{msg}");
        }
    }
}

pub fn load_mesh(path: &Path) -> CliResult<TriangleMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mesh = load_obj(&text)?;
    mesh.validate()?;
    Ok(mesh)
}

pub fn cmd_gen_data(
    mesh_path: &Path,
    out_dir: &Path,
    views: usize,
    size: usize,
    extent: f64,
    g: &GlobalOpts,
    pool: &dyn TaskPool,
) -> CliResult<()> {
    let mesh = load_mesh(mesh_path)?;
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let k = CameraIntrinsics::orthographic_centered(size, size, extent);
    let rendered =
        pointfit_core::render::render_dataset(&mesh, &k, views, g.seed, size, size, pool);

    let mut manifest = format!(
        "seed {}\nviews {views}\nsize {size}\nextent {extent}\n",
        g.seed
    );
    for (i, (pose, depth, mask)) in rendered.iter().enumerate() {
        let pose_name = format!("pose_{i}.txt");
        let depth_name = format!("depth_{i}.pfm");
        let mask_name = format!("mask_{i}.pgm");
        formats::write_pose(&out_dir.join(&pose_name), pose)?;
        formats::write_pfm(&out_dir.join(&depth_name), depth)?;
        formats::write_pgm(&out_dir.join(&mask_name), mask)?;
        manifest.push_str(&format!("{pose_name}\n{depth_name}\n{mask_name}\n"));
    }
    let manifest_path = out_dir.join("manifest.txt");
    std::fs::write(&manifest_path, manifest).map_err(|e| io_err(&manifest_path, e))?;
    g.say(&format!("wrote {views} views to {}", out_dir.display()));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_pseudo_render(
    cloud_path: &Path,
    pose_path: &Path,
    out_prefix: &str,
    size: usize,
    upsample: usize,
    extent: f64,
    beta: f64,
    g: &GlobalOpts,
    pool: &dyn TaskPool,
) -> CliResult<()> {
    let cloud = formats::read_ply(cloud_path)?;
    let pose = formats::read_pose(pose_path)?;
    let k = CameraIntrinsics::orthographic_centered(size, size, extent);
    let cfg = SplatConfig {
        height: size,
        width: size,
        upsample,
        z_near: 1e-6,
        beta,
    };
    let render =
        pointfit_core::splat::pseudo_render_view_weighted(&cloud, None, &k, &pose, &cfg, pool)?;

    let depth_path = PathBuf::from(format!("{out_prefix}depth.pfm"));
    if let Some(parent) = depth_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    formats::write_pfm(&depth_path, &render.depth)?;
    formats::write_pgm(
        &PathBuf::from(format!("{out_prefix}mask.pgm")),
        &render.mask,
    )?;
    let stats = format!(
        "culled {}\ndropped {}\ncollisions {}\noccupied {}\n",
        render.stats.culled, render.stats.dropped, render.stats.collisions, render.stats.occupied
    );
    let stats_path = PathBuf::from(format!("{out_prefix}stats.txt"));
    std::fs::write(&stats_path, stats).map_err(|e| io_err(&stats_path, e))?;
    g.say(&format!(
        "pseudo-rendered {} points, {} pixels occupied",
        cloud.len(),
        render.stats.occupied
    ));
    Ok(())
}

pub fn cmd_fit(
    mesh_path: &Path,
    out_dir: &Path,
    cfg: &FitConfig,
    g: &GlobalOpts,
    pool: &dyn TaskPool,
) -> CliResult<()> {
    let mesh = load_mesh(mesh_path)?;
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;

    let start = Instant::now();
    let outcome = fit_shape(&mesh, cfg, pool)?;
    let wall = start.elapsed().as_secs_f64();

    formats::write_ply(&out_dir.join("cloud.ply"), &outcome.cloud)?;
    formats::write_checkpoint(
        &out_dir.join("checkpoint.bin"),
        &outcome.maps,
        &outcome.adam,
        outcome.iteration,
    )?;
    formats::write_losses_csv(&out_dir.join("losses.csv"), &outcome.report.losses)?;

    let stages = if cfg.stage2_iters == 0 {
        "stage1-only"
    } else {
        "stage1+stage2"
    };
    let mut report = format!(
        "stages {stages}\niterations {}\npoints {}\n",
        outcome.iteration,
        outcome.cloud.len()
    );
    if let Some(last) = outcome.report.losses.last() {
        report.push_str(&format!(
            "final_mask_loss {}\nfinal_depth_loss {}\nfinal_total_loss {}\n",
            last.mask, last.depth, last.total
        ));
    }
    match &outcome.report.shape_error {
        Some(e) => {
            report.push_str(&format!(
                "pred_to_gt_x100 {}\ngt_to_pred_x100 {}\n",
                e.pred_to_gt * METRIC_DISPLAY_SCALE,
                e.gt_to_pred * METRIC_DISPLAY_SCALE
            ));
        }
        None => report.push_str("pred_to_gt_x100 unavailable\ngt_to_pred_x100 unavailable\n"),
    }
    report.push_str(&format!(
        "culled {}\ndropped {}\ncollisions {}\nwall_seconds {wall:.3}\n",
        outcome.report.counters.culled,
        outcome.report.counters.dropped,
        outcome.report.counters.collisions
    ));
    let report_path = out_dir.join("report.txt");
    std::fs::write(&report_path, report).map_err(|e| io_err(&report_path, e))?;

    if let Some(e) = &outcome.report.shape_error {
        g.say(&format!(
            "fit {} points; pred_to_gt {:.3}, gt_to_pred {:.3} (x100)",
            outcome.cloud.len(),
            e.pred_to_gt * METRIC_DISPLAY_SCALE,
            e.gt_to_pred * METRIC_DISPLAY_SCALE
        ));
    } else {
        g.say("fit produced an empty cloud; no shape error available");
    }
    Ok(())
}

/// Brute-force bidirectional error, chunked exactly like the indexed path
/// so the two agree bit-for-bit.
fn shape_error_exact(
    pred: &PointCloud,
    gt: &SurfaceSamples,
    pool: &dyn TaskPool,
) -> CliResult<ShapeError> {
    if pred.is_empty() || gt.points.is_empty() {
        return Err(CliError::Contract(
            "shape error requires non-empty clouds".into(),
        ));
    }
    let pred_to_gt = chunked_sum(pool, pred.len(), |i| {
        let (_, d2) = brute_force_nearest(&gt.points.points, pred.points[i]);
        d2.sqrt()
    }) / pred.len() as f64;
    let gt_to_pred = chunked_sum(pool, gt.points.len(), |i| {
        let (_, d2) = brute_force_nearest(&pred.points, gt.points.points[i]);
        d2.sqrt()
    }) / gt.points.len() as f64;
    Ok(ShapeError {
        pred_to_gt,
        gt_to_pred,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct EvalNumbers {
    pub pred_to_gt_x100: f64,
    pub gt_to_pred_x100: f64,
}

pub fn cmd_eval(
    pred_path: &Path,
    mesh_path: &Path,
    densify_count: usize,
    exact_scan: bool,
    csv: Option<&Path>,
    g: &GlobalOpts,
    pool: &dyn TaskPool,
) -> CliResult<EvalNumbers> {
    let pred = formats::read_ply(pred_path)?;
    if pred.is_empty() {
        return Err(CliError::Contract(format!(
            "{}: predicted cloud is empty; metrics are undefined",
            pred_path.display()
        )));
    }
    let mesh = load_mesh(mesh_path)?;
    let samples = densify(&mesh, densify_count, g.seed)?;
    let error = if exact_scan {
        shape_error_exact(&pred, &samples, pool)?
    } else {
        shape_error(&pred, &samples, pool)?
    };
    let numbers = EvalNumbers {
        pred_to_gt_x100: error.pred_to_gt * METRIC_DISPLAY_SCALE,
        gt_to_pred_x100: error.gt_to_pred * METRIC_DISPLAY_SCALE,
    };
    println!("pred_to_gt {:.3}", numbers.pred_to_gt_x100);
    println!("gt_to_pred {:.3}", numbers.gt_to_pred_x100);

    if let Some(csv_path) = csv {
        let header = "pred,mesh,densify,seed,pred_to_gt_x100,gt_to_pred_x100\n";
        let row = format!(
            "{},{},{densify_count},{},{},{}\n",
            pred_path.display(),
            mesh_path.display(),
            g.seed,
            numbers.pred_to_gt_x100,
            numbers.gt_to_pred_x100
        );
        let mut text = if csv_path.exists() {
            std::fs::read_to_string(csv_path).map_err(|e| io_err(csv_path, e))?
        } else {
            header.to_string()
        };
        text.push_str(&row);
        std::fs::write(csv_path, text).map_err(|e| io_err(csv_path, e))?;
    }
    Ok(numbers)
}

/// Effective configuration after precedence resolution, one `key value`
/// line each, parseable by scripts.
pub fn view_config_report(cfg: &FitConfig, gen_views: usize, g: &GlobalOpts) -> String {
    let pregen = match cfg.pregen {
        Some(n) => n.to_string(),
        None => "none".to_string(),
    };
    format!(
        "n_views {}\nk_views {}\nlambda {}\nupsample {}\nsize {}\nstage1_lr {}\nstage2_lr {}\n\
         stage1_iters {}\nstage2_iters {}\ncube_distance {}\nmask_threshold {}\nextent {}\n\
         beta {}\nepsilon {}\nz_near {}\npregen {pregen}\ndensify {}\ngen_views {gen_views}\n\
         seed {}\nworkers {}\n",
        cfg.n_views,
        cfg.k_views,
        cfg.lambda,
        cfg.upsample,
        cfg.image_size,
        cfg.stage1_lr,
        cfg.stage2_lr,
        cfg.stage1_iters,
        cfg.stage2_iters,
        cfg.cube_distance,
        cfg.mask_threshold,
        cfg.extent,
        cfg.beta,
        cfg.epsilon,
        cfg.z_near,
        cfg.densify_count,
        g.seed,
        g.workers
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use pointfit_core::SerialPool;
    use std::fs;

    fn quiet(seed: u64) -> GlobalOpts {
        GlobalOpts {
            seed,
            workers: 1,
            quiet: true,
        }
    }

    fn write_cube_obj(dir: &Path) -> PathBuf {
        let mesh = pointfit_core::mesh::unit_cube();
        let mut text = String::new();
        for v in &mesh.vertices {
            text.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
        }
        for t in &mesh.triangles {
            text.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        }
        let path = dir.join("cube.obj");
        fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn gen_data_single_view_writes_exactly_four_files() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = write_cube_obj(dir.path());
        let out = dir.path().join("data");
        cmd_gen_data(&mesh, &out, 1, 16, 2.5, &quiet(3), &SerialPool).unwrap();
        let mut names: Vec<String> = fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(
            names,
            vec!["depth_0.pfm", "manifest.txt", "mask_0.pgm", "pose_0.txt"]
        );
    }

    #[test]
    fn gen_data_same_seed_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = write_cube_obj(dir.path());
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        cmd_gen_data(&mesh, &out_a, 3, 16, 2.5, &quiet(11), &SerialPool).unwrap();
        cmd_gen_data(&mesh, &out_b, 3, 16, 2.5, &quiet(11), &SerialPool).unwrap();
        for name in ["pose_1.txt", "depth_2.pfm", "mask_0.pgm", "manifest.txt"] {
            assert_eq!(
                fs::read(out_a.join(name)).unwrap(),
                fs::read(out_b.join(name)).unwrap(),
                "{name} differs"
            );
        }
    }

    #[test]
    fn pseudo_render_empty_cloud_is_all_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let cloud_path = dir.path().join("empty.ply");
        formats::write_ply(&cloud_path, &PointCloud::new(vec![])).unwrap();
        let pose_path = dir.path().join("pose.txt");
        formats::write_pose(&pose_path, &pointfit_core::RigidTransform::IDENTITY).unwrap();
        let prefix = format!("{}/out_", dir.path().display());
        cmd_pseudo_render(
            &cloud_path,
            &pose_path,
            &prefix,
            8,
            3,
            2.5,
            2.0,
            &quiet(0),
            &SerialPool,
        )
        .unwrap();
        let depth = formats::read_pfm(&PathBuf::from(format!("{prefix}depth.pfm"))).unwrap();
        assert_eq!(depth.valid_count(), 0);
        let mask = formats::read_pgm(&PathBuf::from(format!("{prefix}mask.pgm"))).unwrap();
        assert!(mask.probability.iter().all(|&p| p == 0.0));
        let stats = fs::read_to_string(format!("{prefix}stats.txt")).unwrap();
        assert!(stats.contains("occupied 0"), "{stats}");
    }

    #[test]
    fn eval_against_own_samples_is_zero() {
        let dir = tempfile::tempdir().unwrap();
        let mesh_path = write_cube_obj(dir.path());
        let mesh = load_mesh(&mesh_path).unwrap();
        // f32 storage rounds coordinates, so regenerate predictions from the
        // PLY round trip to compare like with like.
        let samples = densify(&mesh, 2000, 5).unwrap();
        let pred_path = dir.path().join("pred.ply");
        formats::write_ply(&pred_path, &samples.points).unwrap();
        let pred = formats::read_ply(&pred_path).unwrap();

        // Metrics against the f32-rounded points are tiny but not zero;
        // against an identical cloud they are exactly zero.
        let self_samples = SurfaceSamples {
            points: pred.clone(),
            mesh_digest: 0,
            seed: 5,
        };
        let e = shape_error(&pred, &self_samples, &SerialPool).unwrap();
        assert_eq!(e.pred_to_gt, 0.0);
        assert_eq!(e.gt_to_pred, 0.0);

        let numbers = cmd_eval(
            &pred_path,
            &mesh_path,
            2000,
            false,
            None,
            &quiet(5),
            &SerialPool,
        )
        .unwrap();
        assert!(
            numbers.pred_to_gt_x100 < 1e-3,
            "{}",
            numbers.pred_to_gt_x100
        );
        assert!(
            numbers.gt_to_pred_x100 < 1e-3,
            "{}",
            numbers.gt_to_pred_x100
        );
    }

    #[test]
    fn eval_exact_scan_matches_indexed_path() {
        let dir = tempfile::tempdir().unwrap();
        let mesh_path = write_cube_obj(dir.path());
        let mesh = load_mesh(&mesh_path).unwrap();
        let pred_points = densify(&mesh, 300, 9).unwrap().points;
        let pred_path = dir.path().join("pred.ply");
        formats::write_ply(&pred_path, &pred_points).unwrap();

        let indexed = cmd_eval(
            &pred_path,
            &mesh_path,
            500,
            false,
            None,
            &quiet(2),
            &SerialPool,
        )
        .unwrap();
        let exact = cmd_eval(
            &pred_path,
            &mesh_path,
            500,
            true,
            None,
            &quiet(2),
            &SerialPool,
        )
        .unwrap();
        assert_eq!(
            indexed.pred_to_gt_x100.to_bits(),
            exact.pred_to_gt_x100.to_bits()
        );
        assert_eq!(
            indexed.gt_to_pred_x100.to_bits(),
            exact.gt_to_pred_x100.to_bits()
        );
    }

    #[test]
    fn eval_rejects_empty_prediction() {
        let dir = tempfile::tempdir().unwrap();
        let mesh_path = write_cube_obj(dir.path());
        let pred_path = dir.path().join("pred.ply");
        formats::write_ply(&pred_path, &PointCloud::new(vec![])).unwrap();
        let err = cmd_eval(
            &pred_path,
            &mesh_path,
            100,
            false,
            None,
            &quiet(0),
            &SerialPool,
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn fit_writes_all_artifacts_and_labels_stage1_only() {
        let dir = tempfile::tempdir().unwrap();
        let mesh_path = write_cube_obj(dir.path());
        let out = dir.path().join("fit");
        let cfg = FitConfig {
            image_size: 12,
            stage1_iters: 8,
            stage2_iters: 0,
            upsample: 2,
            densify_count: 500,
            seed: 4,
            ..FitConfig::default()
        };
        cmd_fit(&mesh_path, &out, &cfg, &quiet(4), &SerialPool).unwrap();
        for name in ["cloud.ply", "checkpoint.bin", "losses.csv", "report.txt"] {
            assert!(out.join(name).exists(), "{name} missing");
        }
        let report = fs::read_to_string(out.join("report.txt")).unwrap();
        assert!(report.contains("stages stage1-only"), "{report}");
        assert!(report.contains("pred_to_gt_x100"), "{report}");
        let (maps, adam, iter) = formats::read_checkpoint(&out.join("checkpoint.bin")).unwrap();
        assert_eq!(iter, 8);
        assert_eq!(maps.height, 12);
        assert_eq!(adam.m.len(), maps.data.len());
        let csv = fs::read_to_string(out.join("losses.csv")).unwrap();
        assert_eq!(csv.lines().count(), 9, "header plus one row per iteration");
    }

    #[test]
    fn view_config_reports_defaults() {
        let report = view_config_report(&FitConfig::default(), 100, &quiet(0));
        for line in [
            "n_views 8",
            "k_views 5",
            "lambda 1",
            "upsample 5",
            "size 128",
            "stage1_lr 0.01",
            "stage2_lr 0.0001",
            "stage1_iters 3000",
            "stage2_iters 2000",
            "densify 100000",
            "gen_views 100",
        ] {
            assert!(
                report.lines().any(|l| l == line),
                "missing `{line}` in {report}"
            );
        }
    }
}
