//! Naive multi-view plane sweep: fronto-parallel depth hypotheses scored by the
//! sum of absolute differences of small grey patches.

use rayon::prelude::*;

use crate::densify::{DepthMap, Densifier};
use crate::geo::Frame;

#[derive(Debug, Clone)]
pub struct BlockMatchDensifier {
    pub window: usize,
    pub planes: usize,
    /// Depth search range as fractions of the reference camera's height above
    /// the zero-elevation datum.
    pub near: f64,
    pub far: f64,
    /// Patch half-size in pixels.
    pub radius: i32,
    /// Depth is estimated on this pixel lattice; other pixels stay empty.
    pub stride: u32,
    /// Maximum mean absolute grey difference for a depth to be kept.
    pub max_cost: f64,
}

impl Default for BlockMatchDensifier {
    fn default() -> Self {
        Self {
            window: 3,
            planes: 48,
            near: 0.5,
            far: 1.2,
            radius: 2,
            stride: 2,
            max_cost: 12.0,
        }
    }
}

fn grey(frame: &Frame) -> Vec<f32> {
    frame
        .image
        .pixels()
        .map(|p| 0.299 * f32::from(p[0]) + 0.587 * f32::from(p[1]) + 0.114 * f32::from(p[2]))
        .collect()
}

fn sample(img: &[f32], w: usize, h: usize, u: f64, v: f64) -> Option<f32> {
    if u < 0.0 || v < 0.0 || u > (w - 1) as f64 || v > (h - 1) as f64 {
        return None;
    }
    let (u0, v0) = (u.floor() as usize, v.floor() as usize);
    let (u1, v1) = ((u0 + 1).min(w - 1), (v0 + 1).min(h - 1));
    let (fu, fv) = ((u - u0 as f64) as f32, (v - v0 as f64) as f32);
    let a = img[v0 * w + u0] * (1.0 - fu) + img[v0 * w + u1] * fu;
    let b = img[v1 * w + u0] * (1.0 - fu) + img[v1 * w + u1] * fu;
    Some(a * (1.0 - fv) + b * fv)
}

impl Densifier for BlockMatchDensifier {
    fn required_frame_count(&self) -> usize {
        self.window.max(2)
    }

    fn densify(&mut self, window: &[&Frame], reference: usize) -> Option<DepthMap> {
        let rf = window.get(reference)?;
        let rpose = rf.pose?;
        let (w, h) = (rf.image.width() as usize, rf.image.height() as usize);
        let rgrey = grey(rf);
        let others: Vec<(&Frame, Vec<f32>)> = window
            .iter()
            .enumerate()
            .filter(|&(i, f)| i != reference && f.pose.is_some())
            .map(|(_, f)| (*f, grey(f)))
            .collect();
        if others.is_empty() {
            return None;
        }
        let height = rpose.position.z.max(1.0);
        let (near, far) = (self.near * height, self.far * height);
        let planes = self.planes.max(2);
        let depths: Vec<f64> = (0..planes)
            .map(|k| {
                // uniform in inverse depth
                let t = k as f64 / (planes - 1) as f64;
                1.0 / (1.0 / near * (1.0 - t) + 1.0 / far * t)
            })
            .collect();
        let r = self.radius;
        let stride = self.stride.max(1) as usize;
        let cam = rf.camera;

        let mut out = DepthMap::new(w as u32, h as u32);
        out.depths
            .par_chunks_mut(w)
            .enumerate()
            .filter(|(v, _)| v % stride == 0)
            .for_each(|(v, row)| {
                for u in (0..w).step_by(stride) {
                    let mut best = (f64::INFINITY, f64::NAN);
                    for &d in &depths {
                        let mut cost = 0.0f64;
                        let mut n = 0usize;
                        for (of, og) in &others {
                            let opose = of.pose.as_ref().expect("filtered");
                            for dv in -r..=r {
                                for du in -r..=r {
                                    let (pu, pv) = (u as f64 + du as f64, v as f64 + dv as f64);
                                    let Some(a) = sample(&rgrey, w, h, pu, pv) else { continue };
                                    let Ok(x) = cam.backproject(&rpose, pu, pv, d) else { continue };
                                    let Ok(p) = of.camera.project(opose, &x) else { continue };
                                    let (ow, oh) = (of.image.width() as usize, of.image.height() as usize);
                                    let Some(b) = sample(og, ow, oh, p.u, p.v) else { continue };
                                    cost += f64::from((a - b).abs());
                                    n += 1;
                                }
                            }
                        }
                        let min_samples = ((2 * r + 1) * (2 * r + 1)) as usize;
                        if n >= min_samples {
                            let c = cost / n as f64;
                            if c < best.0 {
                                best = (c, d);
                            }
                        }
                    }
                    if best.0 <= self.max_cost {
                        row[u] = best.1;
                    }
                }
            });
        Some(out)
    }
}
