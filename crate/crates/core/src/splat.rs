//! Differentiable pseudo-rendering of point clouds.
//!
//! Projected points are splatted into a grid upsampled by a factor U; each
//! upsampled cell keeps its nearest point (maximum inverse depth), and a
//! U x U max-pool brings the grid back to the output resolution. Collisions
//! within a cell resolve to the nearest point, ties to the lowest source id,
//! so the output is independent of point order and thread schedule.
//!
//! A coordinate u' lands in upsampled cell floor((u' + 1/2) * U), so output
//! pixel j pools points with u' in [j - 1/2, j + 1/2): the same footprint the
//! rasterizer assigns to pixel j, at every U. A consequence worth knowing:
//! because each cell already keeps its exact nearest point, the pooled depth
//! and mask are independent of U. Raising U only spreads points over more
//! cells, which lowers the collision diagnostic and shrinks the per-cell
//! workload of the parallel merge.
//!
//! The backward pass is the exact subgradient of this forward map: depth
//! gradient flows only to each pixel's winning point's depth (slope 1),
//! mask gradient flows to every contributing point's retention weight, and
//! the spatial derivatives with respect to u', v' are identically zero
//! because the discretization is hard. Positional learning signal therefore
//! arrives only through the depth channel of multiple viewpoints.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{camera_to_image, CameraIntrinsics, PointCloud, RigidTransform};
use crate::math::{self, Vec3};
use crate::pool::{map_tasks, SerialPool, TaskPool};
use crate::render::{DepthImage, MaskImage};

/// Output geometry plus the three knobs of the splatter: upsampling factor,
/// near-plane cull distance, and mask sharpness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatConfig {
    pub height: usize,
    pub width: usize,
    pub upsample: usize,
    pub z_near: f64,
    /// Mask probability is `1 - exp(-beta * c)` for soft point count `c`.
    /// `beta = infinity` selects a hard 0/1 mask (which carries no mask
    /// gradient).
    pub beta: f64,
}

impl SplatConfig {
    pub fn with_size(height: usize, width: usize) -> Self {
        SplatConfig {
            height,
            width,
            upsample: 5,
            z_near: 1e-6,
            beta: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidInput("splat output must be at least 1x1"));
        }
        if self.upsample == 0 {
            return Err(Error::InvalidInput("upsample factor must be at least 1"));
        }
        if !(self.z_near > 0.0) {
            return Err(Error::InvalidInput("z_near must be positive"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidInput("mask sharpness beta must be positive"));
        }
        Ok(())
    }
}

/// One projected point: continuous image coordinates, camera depth, the
/// index of the originating point, and a retention weight in (0, 1] that
/// feeds the soft mask count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub u: f64,
    pub v: f64,
    pub z: f64,
    pub source: u32,
    pub weight: f64,
}

/// Points that survived projection; culled points are absent, so `z` here
/// always exceeds the near plane.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProjectedPoints {
    pub points: Vec<ProjectedPoint>,
}

pub const NO_WINNER: u32 = u32::MAX;

/// Per-output-pixel index of the winning entry in [`ProjectedPoints`]
/// (`NO_WINNER` where unoccupied). The backward pass routes depth gradients
/// through this record.
#[derive(Debug, Clone, PartialEq)]
pub struct WinnerMap {
    pub height: usize,
    pub width: usize,
    pub entries: Vec<u32>,
}

impl WinnerMap {
    #[inline]
    pub fn entry(&self, row: usize, col: usize) -> Option<u32> {
        let e = self.entries[row * self.width + col];
        (e != NO_WINNER).then_some(e)
    }

    /// Source id of the winner at a pixel, if any.
    pub fn source(&self, points: &ProjectedPoints, row: usize, col: usize) -> Option<u32> {
        self.entry(row, col)
            .map(|e| points.points[e as usize].source)
    }
}

/// Diagnostic counters for one splatting call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SplatStats {
    /// Points at or behind the near plane.
    pub culled: usize,
    /// Points projecting outside the upsampled grid.
    pub dropped: usize,
    /// Sum over upsampled cells of (points in cell - 1), clamped at 0.
    pub collisions: usize,
    /// Output pixels with at least one point.
    pub occupied: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplatOutput {
    pub depth: DepthImage,
    pub mask: MaskImage,
    pub winners: WinnerMap,
    pub stats: SplatStats,
}

/// Gradient on one projected point. `du` and `dv` are always zero (hard
/// discretization); they are carried so the record reads as the full
/// per-point gradient.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PointGrad {
    pub du: f64,
    pub dv: f64,
    pub dz: f64,
    pub dweight: f64,
}

/// Forward pseudo-render record needed to run the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoRender {
    pub depth: DepthImage,
    pub mask: MaskImage,
    pub winners: WinnerMap,
    pub projected: ProjectedPoints,
    pub stats: SplatStats,
}

/// Gradients on the canonical cloud: one 3-vector per point plus one
/// retention-weight slot per point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGrads {
    pub positions: Vec<Vec3>,
    pub weights: Vec<f64>,
}

#[inline]
fn cell_coord(x: f64, upsample: usize) -> i64 {
    math::floor((x + 0.5) * upsample as f64) as i64
}

/// Ordering for collision resolution: nearer z wins, ties go to the lower
/// source id (then lower entry index, for robustness against duplicate ids).
#[inline]
fn beats(points: &[ProjectedPoint], challenger: u32, incumbent: u32) -> bool {
    if incumbent == NO_WINNER {
        return true;
    }
    let a = &points[challenger as usize];
    let b = &points[incumbent as usize];
    if a.z != b.z {
        return a.z < b.z;
    }
    (a.source, challenger) < (b.source, incumbent)
}

fn mask_probability(beta: f64, count: f64) -> f64 {
    if beta.is_infinite() {
        if count > 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - math::exp(-beta * count)
    }
}

fn mask_probability_slope(beta: f64, count: f64) -> f64 {
    if beta.is_infinite() {
        0.0
    } else {
        beta * math::exp(-beta * count)
    }
}

/// Splats projected points into a depth/mask pair at the configured output
/// resolution. Depth at an occupied pixel is exactly the minimum `z` among
/// points mapping into that pixel's U x U cell block.
pub fn splat(points: &ProjectedPoints, cfg: &SplatConfig) -> Result<SplatOutput> {
    splat_with_pool(points, cfg, &SerialPool)
}

pub fn splat_with_pool(
    points: &ProjectedPoints,
    cfg: &SplatConfig,
    pool: &dyn TaskPool,
) -> Result<SplatOutput> {
    cfg.validate()?;
    let u = cfg.upsample;
    let grid_w = cfg.width * u;
    let grid_h = cfg.height * u;

    let mut cell_winner = vec![NO_WINNER; grid_w * grid_h];
    let mut cell_count = vec![0u32; grid_w * grid_h];
    let mut pixel_count = vec![0.0f64; cfg.width * cfg.height];
    let mut culled = 0usize;
    let mut dropped = 0usize;

    for (entry, p) in points.points.iter().enumerate() {
        if !(p.z > cfg.z_near) {
            culled += 1;
            continue;
        }
        if !(p.u.is_finite() && p.v.is_finite()) {
            dropped += 1;
            continue;
        }
        let cu = cell_coord(p.u, u);
        let cv = cell_coord(p.v, u);
        if cu < 0 || cv < 0 || cu >= grid_w as i64 || cv >= grid_h as i64 {
            dropped += 1;
            continue;
        }
        let (cu, cv) = (cu as usize, cv as usize);
        let cell = cv * grid_w + cu;
        cell_count[cell] += 1;
        pixel_count[(cv / u) * cfg.width + (cu / u)] += p.weight;
        if beats(&points.points, entry as u32, cell_winner[cell]) {
            cell_winner[cell] = entry as u32;
        }
    }

    // Pool the upsampled grid back to output resolution, one fixed row band
    // per task. Each band owns whole output rows, hence disjoint cell rows.
    const BAND: usize = 16;
    let bands = cfg.height.div_ceil(BAND).max(1);
    struct Band {
        depth: Vec<f64>,
        valid: Vec<bool>,
        prob: Vec<f64>,
        winners: Vec<u32>,
        occupied: usize,
        collisions: usize,
    }
    let band_results: Vec<Band> = map_tasks(pool, bands, |band| {
        let row_start = band * BAND;
        let row_end = (row_start + BAND).min(cfg.height);
        let rows = row_end - row_start;
        let mut out = Band {
            depth: vec![f64::INFINITY; rows * cfg.width],
            valid: vec![false; rows * cfg.width],
            prob: vec![0.0; rows * cfg.width],
            winners: vec![NO_WINNER; rows * cfg.width],
            occupied: 0,
            collisions: 0,
        };
        for or in row_start..row_end {
            for oc in 0..cfg.width {
                let mut best = NO_WINNER;
                for cv in or * u..(or + 1) * u {
                    for cu in oc * u..(oc + 1) * u {
                        let cell = cv * grid_w + cu;
                        out.collisions += cell_count[cell].saturating_sub(1) as usize;
                        let w = cell_winner[cell];
                        if w != NO_WINNER && beats(&points.points, w, best) {
                            best = w;
                        }
                    }
                }
                let slot = (or - row_start) * cfg.width + oc;
                if best != NO_WINNER {
                    out.depth[slot] = points.points[best as usize].z;
                    out.valid[slot] = true;
                    out.occupied += 1;
                }
                out.winners[slot] = best;
                out.prob[slot] = mask_probability(cfg.beta, pixel_count[or * cfg.width + oc]);
            }
        }
        out
    });

    let mut depth = DepthImage::new_invalid(cfg.height, cfg.width);
    let mut mask = MaskImage::new_zero(cfg.height, cfg.width);
    let mut winners = WinnerMap {
        height: cfg.height,
        width: cfg.width,
        entries: vec![NO_WINNER; cfg.height * cfg.width],
    };
    let mut occupied = 0;
    let mut collisions = 0;
    for (band, b) in band_results.into_iter().enumerate() {
        let row_start = band * BAND;
        let rows = b.valid.len() / cfg.width;
        for r in 0..rows {
            let dst = (row_start + r) * cfg.width;
            let src = r * cfg.width;
            depth.depth[dst..dst + cfg.width].copy_from_slice(&b.depth[src..src + cfg.width]);
            depth.valid[dst..dst + cfg.width].copy_from_slice(&b.valid[src..src + cfg.width]);
            mask.probability[dst..dst + cfg.width].copy_from_slice(&b.prob[src..src + cfg.width]);
            winners.entries[dst..dst + cfg.width].copy_from_slice(&b.winners[src..src + cfg.width]);
        }
        occupied += b.occupied;
        collisions += b.collisions;
    }
    Ok(SplatOutput {
        depth,
        mask,
        winners,
        stats: SplatStats {
            culled,
            dropped,
            collisions,
            occupied,
        },
    })
}

/// Exact subgradient of [`splat`]: depth gradient lands on each pixel
/// winner's `z` with slope 1, mask gradient lands on every contributing
/// point's weight, and `u`/`v` receive exactly zero.
pub fn splat_backward(
    grad_depth: &[f64],
    grad_mask: &[f64],
    winners: &WinnerMap,
    points: &ProjectedPoints,
    cfg: &SplatConfig,
) -> Result<Vec<PointGrad>> {
    cfg.validate()?;
    let pixels = cfg.height * cfg.width;
    if grad_depth.len() != pixels || grad_mask.len() != pixels {
        return Err(Error::Contract(
            "gradient image size does not match splat config",
        ));
    }
    if winners.height != cfg.height || winners.width != cfg.width {
        return Err(Error::Contract(
            "winner map size does not match splat config",
        ));
    }
    let u = cfg.upsample;
    let grid_w = cfg.width * u;
    let grid_h = cfg.height * u;

    let mut grads = vec![PointGrad::default(); points.points.len()];

    // Depth: winner identity chain.
    for (px, &entry) in winners.entries.iter().enumerate() {
        if entry != NO_WINNER {
            if entry as usize >= points.points.len() {
                return Err(Error::Contract("winner map references a missing point"));
            }
            grads[entry as usize].dz += grad_depth[px];
        }
    }

    // Mask: recompute each pixel's soft count, then fan the chain-rule
    // factor out to every point that landed in the pixel.
    let mut pixel_count = vec![0.0f64; pixels];
    let mut pixel_of = vec![usize::MAX; points.points.len()];
    for (entry, p) in points.points.iter().enumerate() {
        if !(p.z > cfg.z_near) || !(p.u.is_finite() && p.v.is_finite()) {
            continue;
        }
        let cu = cell_coord(p.u, u);
        let cv = cell_coord(p.v, u);
        if cu < 0 || cv < 0 || cu >= grid_w as i64 || cv >= grid_h as i64 {
            continue;
        }
        let px = (cv as usize / u) * cfg.width + (cu as usize / u);
        pixel_count[px] += p.weight;
        pixel_of[entry] = px;
    }
    for (entry, &px) in pixel_of.iter().enumerate() {
        if px != usize::MAX {
            grads[entry].dweight +=
                grad_mask[px] * mask_probability_slope(cfg.beta, pixel_count[px]);
        }
    }
    Ok(grads)
}

/// Projects a cloud into a novel view, dropping culled points. `weights`
/// (when given) supplies per-point retention weights; omitted weights are 1.
pub fn project_points(
    cloud: &PointCloud,
    weights: Option<&[f64]>,
    k: &CameraIntrinsics,
    novel: &RigidTransform,
    z_near: f64,
) -> Result<(ProjectedPoints, usize)> {
    if let Some(w) = weights {
        if w.len() != cloud.len() {
            return Err(Error::Contract("weight count does not match point count"));
        }
    }
    let mut out = Vec::with_capacity(cloud.len());
    let mut culled = 0;
    for (i, &p) in cloud.points.iter().enumerate() {
        match camera_to_image(k, novel, p) {
            Some((u, v, z)) if z > z_near => out.push(ProjectedPoint {
                u,
                v,
                z,
                source: i as u32,
                weight: weights.map_or(1.0, |w| w[i]),
            }),
            _ => culled += 1,
        }
    }
    Ok((ProjectedPoints { points: out }, culled))
}

/// Projection followed by splatting: the full differentiable render of a
/// canonical cloud into one novel viewpoint.
pub fn pseudo_render_view(
    cloud: &PointCloud,
    k: &CameraIntrinsics,
    novel: &RigidTransform,
    cfg: &SplatConfig,
) -> Result<PseudoRender> {
    pseudo_render_view_weighted(cloud, None, k, novel, cfg, &SerialPool)
}

pub fn pseudo_render_view_weighted(
    cloud: &PointCloud,
    weights: Option<&[f64]>,
    k: &CameraIntrinsics,
    novel: &RigidTransform,
    cfg: &SplatConfig,
    pool: &dyn TaskPool,
) -> Result<PseudoRender> {
    cfg.validate()?;
    k.validate()?;
    novel.validate()?;
    let (projected, culled) = project_points(cloud, weights, k, novel, cfg.z_near)?;
    let out = splat_with_pool(&projected, cfg, pool)?;
    let mut stats = out.stats;
    stats.culled += culled;
    Ok(PseudoRender {
        depth: out.depth,
        mask: out.mask,
        winners: out.winners,
        projected,
        stats,
    })
}

/// Chains [`splat_backward`] through the projection: each winning point's
/// depth gradient maps to canonical coordinates via the depth row of the
/// novel rotation (`dL/dp = dz' * R_novel[2]`, identical in both projection
/// modes since intrinsics never touch depth), and weight gradients
/// accumulate per source point.
pub fn full_backward(
    grad_depth: &[f64],
    grad_mask: &[f64],
    render: &PseudoRender,
    novel: &RigidTransform,
    n_points: usize,
    cfg: &SplatConfig,
) -> Result<PointGrads> {
    let per_entry = splat_backward(
        grad_depth,
        grad_mask,
        &render.winners,
        &render.projected,
        cfg,
    )?;
    let depth_row = novel.rotation.row(2);
    let mut positions = vec![Vec3::ZERO; n_points];
    let mut weights = vec![0.0f64; n_points];
    for (entry, g) in per_entry.iter().enumerate() {
        let source = render.projected.points[entry].source as usize;
        if source >= n_points {
            return Err(Error::Contract(
                "render record references a point beyond the cloud",
            ));
        }
        positions[source] += depth_row * g.dz;
        weights[source] += g.dweight;
    }
    Ok(PointGrads { positions, weights })
}
