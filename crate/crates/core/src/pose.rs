//! Camera recovery from a silhouette: multi-start finite-difference descent
//! on `1 − soft-IoU` with an annealed soft rasterizer, scored by hard IoU.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{EulerCamera, MAX_PITCH};
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::raster::{pixel_center_ndc, render_hard, render_soft, SilhouetteImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub cam: EulerCamera,
    /// Hard-silhouette IoU of `cam` against the thresholded target.
    pub iou: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub starts: usize,
    pub max_iters: usize,
    /// Initial step per parameter `(yaw, pitch, d, r_x, r_y)`; the distance
    /// entry is relative to the current distance.
    pub step_sizes: [f64; 5],
    /// Central-difference half widths, same layout as `step_sizes`.
    pub fd_epsilons: [f64; 5],
    pub accept_iou: f64,
    pub sigma_start: f64,
    pub sigma_end: f64,
    /// Iterations between σ halvings.
    pub sigma_halving: usize,
    /// Lower bound on the searched distance as a multiple of the mesh radius.
    pub min_distance_factor: f64,
    /// Pitch of every starting point.
    pub init_pitch: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            starts: 8,
            max_iters: 200,
            step_sizes: [0.1, 0.05, 0.03, 0.02, 0.02],
            fd_epsilons: [1e-3, 1e-3, 1e-3, 1e-3, 1e-3],
            accept_iou: 0.90,
            sigma_start: 0.05,
            sigma_end: 0.005,
            sigma_halving: 50,
            min_distance_factor: 1.5,
            init_pitch: 0.35,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.starts == 0 {
            return Err(Error::config("starts", "must be >= 1"));
        }
        if !(self.accept_iou > 0.0 && self.accept_iou <= 1.0) {
            return Err(Error::config("accept_iou", "must be in (0, 1]"));
        }
        if !(self.sigma_start > 0.0 && self.sigma_end > 0.0 && self.sigma_end <= self.sigma_start) {
            return Err(Error::config("sigma_start", "need 0 < sigma_end <= sigma_start"));
        }
        if self.sigma_halving == 0 {
            return Err(Error::config("sigma_halving", "must be >= 1"));
        }
        if self.step_sizes.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config("step_sizes", "entries must be > 0"));
        }
        if self.fd_epsilons.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config("fd_epsilons", "entries must be > 0"));
        }
        if !(self.min_distance_factor > 1.0) {
            return Err(Error::config("min_distance_factor", "must be > 1"));
        }
        Ok(())
    }

    fn sigma_at(&self, iter: usize) -> f64 {
        let halvings = (iter / self.sigma_halving).min(60) as i32;
        (self.sigma_start * 0.5f64.powi(halvings)).max(self.sigma_end)
    }
}

/// `Σ min(p, q) / Σ max(p, q)`; 1 when both are empty.
pub fn soft_iou(p: &SilhouetteImage, q: &SilhouetteImage) -> Result<f64> {
    if (p.height(), p.width()) != (q.height(), q.width()) {
        return Err(Error::ShapeMismatch(format!(
            "silhouettes {}x{} and {}x{} differ",
            p.height(),
            p.width(),
            q.height(),
            q.width()
        )));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (&a, &b) in p.data().iter().zip(q.data()) {
        num += a.min(b);
        den += a.max(b);
    }
    Ok(if den == 0.0 { 1.0 } else { num / den })
}

/// `1 − soft-IoU` between the soft render at `cam` and `target`.
pub fn soft_iou_loss(mesh: &TriangleMesh, cam: &EulerCamera, target: &SilhouetteImage, sigma: f64) -> Result<f64> {
    let p = render_soft(mesh, cam, target.height(), target.width(), sigma)?;
    Ok(1.0 - soft_iou(&p, target)?)
}

/// Hard IoU of the binary render against `target` thresholded at 0.5.
pub fn hard_iou(mesh: &TriangleMesh, cam: &EulerCamera, target: &SilhouetteImage) -> Result<f64> {
    let p = render_hard(mesh, cam, target.height(), target.width())?;
    crate::mask::mask_iou(&p.threshold(0.5), &target.threshold(0.5))
}

struct Problem<'a> {
    mesh: &'a TriangleMesh,
    target: &'a SilhouetteImage,
    min_d: f64,
}

impl Problem<'_> {
    fn camera(&self, p: &[f64; 5]) -> EulerCamera {
        EulerCamera::clamped(p[0], p[1], p[2], p[3], p[4], self.min_d)
    }

    fn loss(&self, p: &[f64; 5], sigma: f64) -> Result<f64> {
        soft_iou_loss(self.mesh, &self.camera(p), self.target, sigma)
    }
}

/// Absolute finite-difference widths at `cam`.
fn fd_widths(cam: &EulerCamera, eps: &[f64; 5]) -> [f64; 5] {
    [eps[0], eps[1], eps[2] * cam.d(), eps[3], eps[4]]
}

/// Finite-difference gradient of [`soft_iou_loss`] in `(yaw, pitch, d, r_x,
/// r_y)`. `five_point` selects the fourth-order stencil.
pub fn loss_gradient(
    mesh: &TriangleMesh,
    cam: &EulerCamera,
    target: &SilhouetteImage,
    sigma: f64,
    eps: &[f64; 5],
    five_point: bool,
) -> Result<[f64; 5]> {
    let base = cam.to_array();
    let h = fd_widths(cam, eps);
    let eval = |k: usize, delta: f64| -> Result<f64> {
        let mut p = base;
        p[k] += delta;
        let c = EulerCamera::clamped(p[0], p[1], p[2], p[3], p[4], 0.0);
        soft_iou_loss(mesh, &c, target, sigma)
    };
    let mut g = [0.0; 5];
    for k in 0..5 {
        g[k] = if five_point {
            (-eval(k, 2.0 * h[k])? + 8.0 * eval(k, h[k])? - 8.0 * eval(k, -h[k])? + eval(k, -2.0 * h[k])?)
                / (12.0 * h[k])
        } else {
            (eval(k, h[k])? - eval(k, -h[k])?) / (2.0 * h[k])
        };
    }
    Ok(g)
}

/// Per-iteration record of one descent.
#[derive(Debug, Clone, Default)]
pub struct DescentTrace {
    /// `(sigma, soft loss of the current iterate)` after each iteration.
    pub soft: Vec<(f64, f64)>,
    /// Best hard IoU seen so far, after each iteration.
    pub best_iou: Vec<f64>,
}

struct DescentResult {
    cam: EulerCamera,
    iou: f64,
    iterations: usize,
    trace: DescentTrace,
}

fn descend(prob: &Problem, cfg: &EstimatorConfig, init: [f64; 5]) -> Result<DescentResult> {
    let mut p = prob.camera(&init).to_array();
    let mut best_cam = prob.camera(&p);
    let mut best_iou = hard_iou(prob.mesh, &best_cam, prob.target)?;
    let mut trace = DescentTrace::default();
    let base_step = |d: f64| {
        let s = cfg.step_sizes;
        [s[0], s[1], s[2] * d, s[3], s[4]]
    };
    let mut sigma = cfg.sigma_at(0);
    let mut loss = prob.loss(&p, sigma)?;
    let mut step = base_step(p[2]);
    let mut prev_g = [0.0; 5];
    let mut iter = 0;
    while iter < cfg.max_iters {
        let s = cfg.sigma_at(iter);
        if s != sigma {
            sigma = s;
            loss = prob.loss(&p, sigma)?;
            step = base_step(p[2]).map(|v| v * 0.5);
            prev_g = [0.0; 5];
        }
        iter += 1;
        let cam = prob.camera(&p);
        let g = loss_gradient(prob.mesh, &cam, prob.target, sigma, &cfg.fd_epsilons, false)?;
        // Sign-adaptive per-parameter steps.
        let init = base_step(p[2]);
        for k in 0..5 {
            let agree = g[k] * prev_g[k];
            if agree > 0.0 {
                step[k] = (step[k] * 1.2).min(4.0 * init[k]);
            } else if agree < 0.0 {
                step[k] *= 0.5;
            }
        }
        prev_g = g;
        let mut improved = false;
        if g.iter().any(|v| *v != 0.0) && g.iter().all(|v| v.is_finite()) {
            for _ in 0..6 {
                let mut q = p;
                for k in 0..5 {
                    q[k] -= step[k] * g[k].signum() * (g[k] != 0.0) as u8 as f64;
                }
                let q = prob.camera(&q).to_array();
                let lq = prob.loss(&q, sigma)?;
                if lq < loss {
                    p = q;
                    loss = lq;
                    improved = true;
                    break;
                }
                step = step.map(|v| v * 0.5);
            }
        }
        if improved {
            let cam = prob.camera(&p);
            let iou = hard_iou(prob.mesh, &cam, prob.target)?;
            if iou > best_iou {
                best_iou = iou;
                best_cam = cam;
            }
        }
        trace.soft.push((sigma, loss));
        trace.best_iou.push(best_iou);
        let tiny = step.iter().zip(&init).all(|(s, i)| *s < 1e-3 * i);
        if !improved || tiny {
            // Stalled at this σ: jump to the next stage, or stop after the last.
            let stage_end = (iter / cfg.sigma_halving + 1) * cfg.sigma_halving;
            if sigma <= cfg.sigma_end || stage_end >= cfg.max_iters {
                break;
            }
            iter = stage_end;
        }
    }
    Ok(DescentResult {
        cam: best_cam,
        iou: best_iou,
        iterations: iter.min(cfg.max_iters),
        trace,
    })
}

/// Starting points for every descent: stratified yaw, `init_pitch`, distance
/// from the blob area, shift from the blob centroid.
pub fn initial_guesses(mesh: &TriangleMesh, target: &SilhouetteImage, cfg: &EstimatorConfig) -> Result<Vec<[f64; 5]>> {
    let (h, w) = (target.height(), target.width());
    let (mut mass, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            let v = target.get(r, c);
            if v > 0.0 {
                let p = pixel_center_ndc(r, c, h, w);
                mass += v;
                sx += v * p.x;
                sy += v * p.y;
            }
        }
    }
    if mass == 0.0 {
        return Err(Error::EmptyTarget);
    }
    let frac = mass / (h * w) as f64;
    let min_d = cfg.min_distance_factor * mesh.radius();
    let d = (mesh.radius() * (std::f64::consts::PI / (4.0 * frac)).sqrt()).max(min_d);
    let (rx, ry) = ((sx / mass).clamp(-1.0, 1.0), (sy / mass).clamp(-1.0, 1.0));
    let n = cfg.starts;
    Ok((0..n)
        .map(|k| {
            let yaw = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * (k + 1) as f64 / n as f64;
            [yaw, cfg.init_pitch.clamp(-MAX_PITCH, MAX_PITCH), d, rx, ry]
        })
        .collect())
}

/// Best-IoU camera over `cfg.starts` independent descents. Ties go to the
/// lowest start index, so the result does not depend on thread count.
pub fn estimate_camera(mesh: &TriangleMesh, target: &SilhouetteImage, cfg: &EstimatorConfig) -> Result<PoseEstimate> {
    cfg.validate()?;
    let inits = initial_guesses(mesh, target, cfg)?;
    let prob = Problem {
        mesh,
        target,
        min_d: cfg.min_distance_factor * mesh.radius(),
    };
    let results: Vec<DescentResult> = inits
        .par_iter()
        .map(|init| descend(&prob, cfg, *init))
        .collect::<Result<_>>()?;
    let mut best = &results[0];
    for r in &results[1..] {
        if r.iou > best.iou {
            best = r;
        }
    }
    Ok(PoseEstimate {
        cam: best.cam,
        iou: best.iou,
        iterations: best.iterations,
        converged: best.iou >= cfg.accept_iou,
    })
}

/// Single descent from `init`, with its iteration trace.
pub fn descend_from(
    mesh: &TriangleMesh,
    target: &SilhouetteImage,
    cfg: &EstimatorConfig,
    init: [f64; 5],
) -> Result<(PoseEstimate, DescentTrace)> {
    cfg.validate()?;
    let prob = Problem {
        mesh,
        target,
        min_d: cfg.min_distance_factor * mesh.radius(),
    };
    let r = descend(&prob, cfg, init)?;
    Ok((
        PoseEstimate {
            cam: r.cam,
            iou: r.iou,
            iterations: r.iterations,
            converged: r.iou >= cfg.accept_iou,
        },
        r.trace,
    ))
}

/// Order-preserving subsequence with `iou >= threshold`.
pub fn filter_by_iou(estimates: &[PoseEstimate], threshold: f64) -> Vec<PoseEstimate> {
    estimates.iter().filter(|e| e.iou >= threshold).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{PrimitiveKind, PrimitiveSpec};

    fn boxy() -> TriangleMesh {
        PrimitiveSpec::new(PrimitiveKind::Box, &[1.0, 0.6, 0.4], 0).build().unwrap()
    }

    #[test]
    fn self_match_and_disjoint_losses() {
        let m = boxy();
        let cam = EulerCamera::new(0.3, 0.2, 3.0, 0.0, 0.0).unwrap();
        let t = render_soft(&m, &cam, 64, 64, 0.01).unwrap();
        assert!(soft_iou_loss(&m, &cam, &t, 0.01).unwrap() < 1e-6);
        let empty = SilhouetteImage::new(64, 64, vec![0.0; 64 * 64]).unwrap();
        assert_eq!(soft_iou_loss(&m, &cam, &empty, 0.01).unwrap(), 1.0);
    }

    #[test]
    fn loss_grows_with_yaw_offset() {
        let m = boxy();
        let cam = EulerCamera::new(0.3, 0.2, 3.0, 0.0, 0.0).unwrap();
        let t = render_hard(&m, &cam, 128, 128).unwrap();
        let mut prev = soft_iou_loss(&m, &cam, &t, 0.005).unwrap();
        for deg in (2..=20).step_by(2) {
            let c = EulerCamera::new(0.3 + (deg as f64).to_radians(), 0.2, 3.0, 0.0, 0.0).unwrap();
            let l = soft_iou_loss(&m, &c, &t, 0.005).unwrap();
            assert!(l > prev, "{deg}: {l} <= {prev}");
            prev = l;
        }
    }

    #[test]
    fn filter_keeps_order() {
        let cam = EulerCamera::new(0.0, 0.0, 3.0, 0.0, 0.0).unwrap();
        let e = |iou| PoseEstimate {
            cam,
            iou,
            iterations: 0,
            converged: false,
        };
        let v = vec![e(0.95), e(0.80), e(0.91)];
        let kept: Vec<f64> = filter_by_iou(&v, 0.90).iter().map(|x| x.iou).collect();
        assert_eq!(kept, vec![0.95, 0.91]);
        assert!(filter_by_iou(&[], 0.9).is_empty());
        assert_eq!(filter_by_iou(&v, 0.0).len(), 3);
    }

    #[test]
    fn empty_target_is_an_error() {
        let t = SilhouetteImage::new(16, 16, vec![0.0; 256]).unwrap();
        assert!(matches!(
            estimate_camera(&boxy(), &t, &EstimatorConfig::default()),
            Err(Error::EmptyTarget)
        ));
    }
}
