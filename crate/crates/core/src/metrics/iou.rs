//! Oriented 3D boxes and their intersection-over-union.

use serde::{Deserialize, Serialize};

use crate::traj::TrackState;

/// Box with a yaw rotation about the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3d {
    pub center: [f64; 3],
    pub yaw: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl Box3d {
    pub fn from_state(s: &TrackState) -> Self {
        Self {
            center: s.position(),
            yaw: s.yaw(),
            length: s.length,
            width: s.width,
            height: s.height,
        }
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    /// Footprint corners, counter-clockwise.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        let [cx, cy, _] = self.center;
        let corner = |dx: f64, dy: f64| [cx + c * dx - s * dy, cy + s * dx + c * dy];
        [
            corner(hl, hw),
            corner(-hl, hw),
            corner(-hl, -hw),
            corner(hl, -hw),
        ]
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    twice.abs() / 2.0
}

/// Sutherland-Hodgman clipping of `subject` by the convex CCW polygon `clip`.
pub fn clip_polygon(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in != prev_in {
                let (d1, d2) = (cross(a, b, prev), cross(a, b, cur));
                let t = d1 / (d1 - d2);
                out.push([
                    prev[0] + t * (cur[0] - prev[0]),
                    prev[1] + t * (cur[1] - prev[1]),
                ]);
            }
            if cur_in {
                out.push(cur);
            }
        }
    }
    out
}

pub fn intersection_volume(a: &Box3d, b: &Box3d) -> f64 {
    let z_lo = (a.center[2] - a.height / 2.0).max(b.center[2] - b.height / 2.0);
    let z_hi = (a.center[2] + a.height / 2.0).min(b.center[2] + b.height / 2.0);
    if z_hi <= z_lo {
        return 0.0;
    }
    let area = polygon_area(&clip_polygon(&a.footprint(), &b.footprint()));
    area * (z_hi - z_lo)
}

/// 3D IoU in `[0, 1]`; degenerate boxes give 0.
pub fn iou_3d(a: &Box3d, b: &Box3d) -> f64 {
    let inter = intersection_volume(a, b);
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 || inter <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}
