//! Desk-scale optimization harness: the per-view (x, y, z, mask-logit) maps
//! are free parameters trained by Adam in two stages, direct depth/mask
//! supervision at the N fixed cube-corner views followed by joint 2D
//! projection optimization against K random novel views per step.
//!
//! Novel views are pure rotations shifted back along the camera axis by the
//! fixed-view camera distance. An orthographic camera makes this shift a
//! constant added to every depth (prediction and ground truth alike), so
//! losses and gradients are unchanged while all depths stay in front of the
//! near plane where inverse-depth pooling is well defined.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{
    fixed_cube_viewpoints, fuse_views_with_sources, CameraIntrinsics, PointCloud, ProjectionMode,
    RigidTransform, ViewMaps, CH_MASK, CH_X, CH_Y, CH_Z,
};
use crate::loss::{depth_loss, mask_loss, total_loss, LossWeights, TotalLoss, ViewLossInput};
use crate::math::{self, Vec3};
use crate::mesh::{densify, TriangleMesh};
use crate::metrics::{shape_error, ShapeError};
use crate::pool::TaskPool;
use crate::render::{rasterize_with_pool, DepthImage, MaskImage};
use crate::rng::{streams, Pcg32};
use crate::splat::{full_backward, pseudo_render_view_weighted, SplatConfig};

/// Everything the two-stage fit needs. Defaults follow the reference
/// training setup: 8 views of 128x128 maps, 5 novel views per step, unit
/// depth weight, upsampling 5, learning rates 1e-2 and 1e-4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub n_views: usize,
    pub k_views: usize,
    pub lambda: f64,
    pub upsample: usize,
    pub image_size: usize,
    pub stage1_lr: f64,
    pub stage2_lr: f64,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub seed: u64,
    /// Fixed viewpoints sit at cube corners (±d, ±d, ±d).
    pub cube_distance: f64,
    /// Pixels with retained probability below this never enter the fused
    /// cloud.
    pub mask_threshold: f64,
    /// World units spanned by the camera's horizontal field of view.
    pub extent: f64,
    /// Mask sharpness of the pseudo-renderer.
    pub beta: f64,
    /// Cross-entropy probability clamp.
    pub epsilon: f64,
    pub z_near: f64,
    /// When set, pre-renders this many ground-truth views once and samples
    /// each step's K views from them uniformly with replacement; when unset,
    /// ground truth is rasterized on demand at freshly drawn rotations.
    pub pregen: Option<usize>,
    /// Surface sample count for the final shape-error report.
    pub densify_count: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_views: 8,
            k_views: 5,
            lambda: 1.0,
            upsample: 5,
            image_size: 128,
            stage1_lr: 1e-2,
            stage2_lr: 1e-4,
            stage1_iters: 3000,
            stage2_iters: 2000,
            seed: 0,
            cube_distance: 1.0,
            mask_threshold: 0.5,
            extent: 2.5,
            beta: 2.0,
            epsilon: 1e-7,
            z_near: 1e-6,
            pregen: None,
            densify_count: 100_000,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_views == 0 || self.n_views > 8 {
            return Err(Error::InvalidInput(
                "n_views must be between 1 and 8 (cube corners)",
            ));
        }
        if self.k_views == 0 {
            return Err(Error::InvalidInput("k_views must be positive"));
        }
        if self.image_size == 0 {
            return Err(Error::InvalidInput("image size must be positive"));
        }
        if self.upsample == 0 {
            return Err(Error::InvalidInput("upsample must be positive"));
        }
        if !(self.stage1_lr > 0.0 && self.stage2_lr > 0.0) {
            return Err(Error::InvalidInput("learning rates must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidInput("lambda must be non-negative"));
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return Err(Error::InvalidInput("mask threshold must lie in (0, 1)"));
        }
        if !(self.cube_distance > 0.0 && self.extent > 0.0) {
            return Err(Error::InvalidInput(
                "cube distance and extent must be positive",
            ));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidInput("beta must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::InvalidInput("epsilon must lie in (0, 0.5)"));
        }
        if !(self.z_near > 0.0) {
            return Err(Error::InvalidInput("z_near must be positive"));
        }
        if self.densify_count == 0 {
            return Err(Error::InvalidInput("densify count must be positive"));
        }
        if self.pregen == Some(0) {
            return Err(Error::InvalidInput(
                "pregen pool must be non-empty when enabled",
            ));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::orthographic_centered(self.image_size, self.image_size, self.extent)
    }

    pub fn splat_config(&self) -> SplatConfig {
        SplatConfig {
            height: self.image_size,
            width: self.image_size,
            upsample: self.upsample,
            z_near: self.z_near,
            beta: self.beta,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            epsilon: self.epsilon,
            k_views: self.k_views,
        }
    }

    /// Camera distance of the fixed views, also used as the depth shift of
    /// novel views.
    pub fn camera_distance(&self) -> f64 {
        math::sqrt(3.0) * self.cube_distance
    }
}

/// Bias-corrected Adam accumulator over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One standard Adam step with bias correction; mutates parameters and
/// state in place.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len()
    {
        return Err(Error::Contract(
            "adam update requires matching parameter/gradient shapes",
        ));
    }
    state.step += 1;
    let b1 = state.beta1;
    let b2 = state.beta2;
    let bc1 = 1.0 - pow_u64(b1, state.step);
    let bc2 = 1.0 - pow_u64(b2, state.step);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (math::sqrt(v_hat) + state.eps);
    }
    Ok(())
}

fn pow_u64(base: f64, exp: u64) -> f64 {
    let mut result = 1.0;
    let mut base = base;
    let mut exp = exp;
    while exp > 0 {
        if exp & 1 == 1 {
            result *= base;
        }
        base *= base;
        exp >>= 1;
    }
    result
}

/// One line of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iter: usize,
    pub mask: f64,
    pub depth: f64,
    pub total: f64,
}

/// Accumulated pseudo-render diagnostics over a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RenderCounters {
    pub culled: u64,
    pub dropped: u64,
    pub collisions: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub losses: Vec<LossRecord>,
    pub shape_error: Option<ShapeError>,
    /// Filled in by callers with access to a clock; stays 0 here.
    pub wall_seconds: f64,
    pub counters: RenderCounters,
}

/// Final state of a fit: the fused cloud, the optimized maps, and the
/// optimizer snapshot for checkpointing.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub cloud: PointCloud,
    pub maps: ViewMaps,
    pub adam: AdamState,
    pub iteration: u64,
    pub report: FitReport,
}

/// Ground truth for the fixed views plus initialized maps.
fn initialize_maps(
    mesh: &TriangleMesh,
    cfg: &FitConfig,
    pool: &dyn TaskPool,
) -> Result<(ViewMaps, Vec<(DepthImage, MaskImage)>)> {
    let k = cfg.intrinsics();
    let size = cfg.image_size;
    let views: Vec<RigidTransform> = fixed_cube_viewpoints(cfg.cube_distance)?
        .into_iter()
        .take(cfg.n_views)
        .collect();
    let mut gt = Vec::with_capacity(views.len());
    for (i, t) in views.iter().enumerate() {
        let (d, m) = rasterize_with_pool(mesh, &k, t, size, size, pool);
        if d.valid_count() == 0 {
            return Err(Error::DegenerateSetup(alloc::format!(
                "mesh renders empty at fixed view {i}"
            )));
        }
        gt.push((d, m));
    }
    let mut maps = ViewMaps::zeros(views, size, size);
    for view in 0..cfg.n_views {
        let (d, _) = &gt[view];
        let mut depth_sum = 0.0;
        let mut depth_count = 0usize;
        for i in 0..d.depth.len() {
            if d.valid[i] {
                depth_sum += d.depth[i];
                depth_count += 1;
            }
        }
        let mean_depth = depth_sum / depth_count as f64;
        for row in 0..size {
            for col in 0..size {
                maps.set(view, CH_X, row, col, col as f64);
                maps.set(view, CH_Y, row, col, row as f64);
                maps.set(view, CH_Z, row, col, mean_depth);
                maps.set(view, CH_MASK, row, col, 0.0);
            }
        }
    }
    Ok((maps, gt))
}

/// Stage-1 loss and gradient: per fixed view, L1 on the z channel against
/// ground-truth depth (over GT-valid pixels) plus cross-entropy of
/// sigmoid(logit) against the ground-truth mask.
fn supervision_step(
    maps: &ViewMaps,
    gt: &[(DepthImage, MaskImage)],
    cfg: &FitConfig,
) -> Result<(f64, f64, Vec<f64>)> {
    let size = cfg.image_size;
    let pixels = size * size;
    let mut grad = vec![0.0; maps.data.len()];
    let mut mask_sum = 0.0;
    let mut depth_sum = 0.0;
    for view in 0..cfg.n_views {
        let (gt_depth, gt_mask) = &gt[view];
        let pred_depth = DepthImage {
            height: size,
            width: size,
            depth: maps.plane(view, CH_Z).to_vec(),
            valid: vec![true; pixels],
        };
        let pred_mask = MaskImage {
            height: size,
            width: size,
            probability: maps
                .plane(view, CH_MASK)
                .iter()
                .map(|&l| math::sigmoid(l))
                .collect(),
        };
        let (dl, dgrad) = depth_loss(&pred_depth, gt_depth)?;
        let (ml, mgrad) = mask_loss(&pred_mask, gt_mask, cfg.epsilon)?;
        depth_sum += dl;
        mask_sum += ml;
        let z_base = maps.index(view, CH_Z, 0, 0);
        let l_base = maps.index(view, CH_MASK, 0, 0);
        for px in 0..pixels {
            grad[z_base + px] += cfg.lambda * dgrad[px];
            let s = pred_mask.probability[px];
            grad[l_base + px] += mgrad[px] * s * (1.0 - s);
        }
    }
    Ok((mask_sum, depth_sum, grad))
}

/// Pretrains the maps against rasterized ground truth at the fixed views.
/// Returns the maps and the per-iteration loss log.
pub fn pretrain_stage(
    mesh: &TriangleMesh,
    cfg: &FitConfig,
    pool: &dyn TaskPool,
) -> Result<(ViewMaps, Vec<LossRecord>)> {
    cfg.validate()?;
    mesh.validate()?;
    let (mut maps, gt) = initialize_maps(mesh, cfg, pool)?;
    let mut adam = AdamState::new(maps.data.len());
    let mut losses = Vec::with_capacity(cfg.stage1_iters);
    for iter in 0..cfg.stage1_iters {
        let (mask_sum, depth_sum, grad) = supervision_step(&maps, &gt, cfg)?;
        adam_update(&mut maps.data, &grad, &mut adam, cfg.stage1_lr)?;
        losses.push(LossRecord {
            iter,
            mask: mask_sum,
            depth: depth_sum,
            total: mask_sum + cfg.lambda * depth_sum,
        });
    }
    Ok((maps, losses))
}

/// Ground truth for one novel view.
pub struct NovelView {
    pub transform: RigidTransform,
    pub depth: DepthImage,
    pub mask: MaskImage,
}

/// Draws a novel viewpoint: a Haar-random rotation shifted back along the
/// camera axis so the whole object sits in front of the near plane.
pub fn draw_novel_view(rng: &mut Pcg32, camera_distance: f64) -> RigidTransform {
    let mut t = crate::geometry::random_rotation(rng);
    t.translation = Vec3::new(0.0, 0.0, camera_distance);
    t
}

/// Joint projection loss over a set of novel views and its gradient on the
/// flat map parameters. Exposed for gradient verification.
pub fn projection_step(
    maps: &ViewMaps,
    novels: &[NovelView],
    cfg: &FitConfig,
    pool: &dyn TaskPool,
) -> Result<(TotalLoss, Vec<f64>, RenderCounters)> {
    let k = cfg.intrinsics();
    let splat_cfg = cfg.splat_config();
    let weights_cfg = cfg.loss_weights();

    let (cloud, sources) = fuse_views_with_sources(maps, &k, cfg.mask_threshold)?;
    let retention: Vec<f64> = sources
        .iter()
        .map(|s| math::sigmoid(maps.get(s.view as usize, CH_MASK, s.row as usize, s.col as usize)))
        .collect();

    // Forward: render every novel view (parallelism lives inside each
    // render; views evaluate in fixed order).
    let mut renders = Vec::with_capacity(novels.len());
    let mut counters = RenderCounters::default();
    for nv in novels {
        let r = pseudo_render_view_weighted(
            &cloud,
            Some(&retention),
            &k,
            &nv.transform,
            &splat_cfg,
            pool,
        )?;
        counters.culled += r.stats.culled as u64;
        counters.dropped += r.stats.dropped as u64;
        counters.collisions += r.stats.collisions as u64;
        renders.push(r);
    }

    let inputs: Vec<ViewLossInput<'_>> = renders
        .iter()
        .zip(novels)
        .map(|(r, nv)| ViewLossInput {
            pred_depth: &r.depth,
            pred_mask: &r.mask,
            gt_depth: &nv.depth,
            gt_mask: &nv.mask,
        })
        .collect();
    let loss = total_loss(&inputs, &weights_cfg)?;

    // Backward through splatting and projection, accumulated per point in
    // fixed view order.
    let mut point_grads = vec![Vec3::ZERO; cloud.len()];
    let mut weight_grads = vec![0.0; cloud.len()];
    for (view_idx, render) in renders.iter().enumerate() {
        let g = full_backward(
            &loss.per_view[view_idx].depth,
            &loss.per_view[view_idx].mask,
            render,
            &novels[view_idx].transform,
            cloud.len(),
            &splat_cfg,
        )?;
        for i in 0..cloud.len() {
            point_grads[i] += g.positions[i];
            weight_grads[i] += g.weights[i];
        }
    }

    // Backward through fusion into the four channels.
    let mut grad = vec![0.0; maps.data.len()];
    for (i, s) in sources.iter().enumerate() {
        let view = s.view as usize;
        let (row, col) = (s.row as usize, s.col as usize);
        let view_t = &maps.transforms[view];
        // p = R^T (cam - t), so dL/dcam = R * dL/dp.
        let dcam = view_t.rotation * point_grads[i];
        let (du, dv, dz) = match k.mode {
            ProjectionMode::Orthographic => (dcam.x / k.fx, dcam.y / k.fy, dcam.z),
            ProjectionMode::Perspective => {
                let z = maps.get(view, CH_Z, row, col);
                let u = maps.get(view, CH_X, row, col);
                let v = maps.get(view, CH_Y, row, col);
                (
                    dcam.x * z / k.fx,
                    dcam.y * z / k.fy,
                    dcam.x * (u - k.cx) / k.fx + dcam.y * (v - k.cy) / k.fy + dcam.z,
                )
            }
        };
        grad[maps.index(view, CH_X, row, col)] += du;
        grad[maps.index(view, CH_Y, row, col)] += dv;
        grad[maps.index(view, CH_Z, row, col)] += dz;
        let s_val = retention[i];
        grad[maps.index(view, CH_MASK, row, col)] += weight_grads[i] * s_val * (1.0 - s_val);
    }
    Ok((loss, grad, counters))
}

fn pregen_views(
    mesh: &TriangleMesh,
    cfg: &FitConfig,
    count: usize,
    pool: &dyn TaskPool,
) -> Vec<NovelView> {
    let k = cfg.intrinsics();
    let size = cfg.image_size;
    let mut rng = Pcg32::new(cfg.seed, streams::PREGEN);
    let dist = cfg.camera_distance();
    (0..count)
        .map(|_| {
            let t = draw_novel_view(&mut rng, dist);
            let (d, m) = rasterize_with_pool(mesh, &k, &t, size, size, pool);
            NovelView {
                transform: t,
                depth: d,
                mask: m,
            }
        })
        .collect()
}

/// Stage 2: joint 2D projection optimization over K novel views per step.
pub fn finetune_stage(
    maps: ViewMaps,
    mesh: &TriangleMesh,
    cfg: &FitConfig,
    pool: &dyn TaskPool,
) -> Result<(ViewMaps, AdamState, FitReport)> {
    cfg.validate()?;
    maps.validate()?;
    let k = cfg.intrinsics();
    let size = cfg.image_size;
    let dist = cfg.camera_distance();
    let mut maps = maps;
    let mut adam = AdamState::new(maps.data.len());
    let mut rng = Pcg32::new(cfg.seed, streams::NOVEL);
    let pregen = cfg.pregen.map(|count| pregen_views(mesh, cfg, count, pool));

    let mut losses = Vec::with_capacity(cfg.stage2_iters);
    let mut counters = RenderCounters::default();
    for iter in 0..cfg.stage2_iters {
        let novels: Vec<NovelView> = match &pregen {
            Some(bank) => (0..cfg.k_views)
                .map(|_| {
                    let idx = rng.below(bank.len() as u32) as usize;
                    NovelView {
                        transform: bank[idx].transform,
                        depth: bank[idx].depth.clone(),
                        mask: bank[idx].mask.clone(),
                    }
                })
                .collect(),
            None => (0..cfg.k_views)
                .map(|_| {
                    let t = draw_novel_view(&mut rng, dist);
                    let (d, m) = rasterize_with_pool(mesh, &k, &t, size, size, pool);
                    NovelView {
                        transform: t,
                        depth: d,
                        mask: m,
                    }
                })
                .collect(),
        };
        let (loss, grad, step_counters) = projection_step(&maps, &novels, cfg, pool)?;
        counters.culled += step_counters.culled;
        counters.dropped += step_counters.dropped;
        counters.collisions += step_counters.collisions;
        adam_update(&mut maps.data, &grad, &mut adam, cfg.stage2_lr)?;
        losses.push(LossRecord {
            iter,
            mask: loss.mask_sum,
            depth: loss.depth_sum,
            total: loss.total,
        });
    }
    let report = FitReport {
        losses,
        shape_error: None,
        wall_seconds: 0.0,
        counters,
    };
    Ok((maps, adam, report))
}

/// Full pipeline: pretrain, fine-tune, fuse, and score against densified
/// surface samples.
pub fn fit_shape(mesh: &TriangleMesh, cfg: &FitConfig, pool: &dyn TaskPool) -> Result<FitOutcome> {
    cfg.validate()?;
    let (maps, stage1_losses) = pretrain_stage(mesh, cfg, pool)?;
    let (maps, adam, stage2_report) = finetune_stage(maps, mesh, cfg, pool)?;
    let cloud = crate::geometry::fuse_views(&maps, &cfg.intrinsics(), cfg.mask_threshold)?;

    let mut losses = stage1_losses;
    let offset = losses.len();
    losses.extend(stage2_report.losses.iter().map(|r| LossRecord {
        iter: r.iter + offset,
        ..*r
    }));

    let samples = densify(mesh, cfg.densify_count, cfg.seed)?;
    let error = if cloud.is_empty() {
        None
    } else {
        Some(shape_error(&cloud, &samples, pool)?)
    };
    let iteration = (cfg.stage1_iters + cfg.stage2_iters) as u64;
    Ok(FitOutcome {
        cloud,
        maps,
        adam,
        iteration,
        report: FitReport {
            losses,
            shape_error: error,
            wall_seconds: 0.0,
            counters: stage2_report.counters,
        },
    })
}
