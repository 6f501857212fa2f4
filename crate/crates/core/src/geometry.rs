//! Planar geometry helpers shared by observation, reward and scene code.

pub type Vec2 = [f64; 2];

#[inline]
pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn scale(a: Vec2, s: f64) -> Vec2 {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn cross(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn norm(a: Vec2) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn norm_sq(a: Vec2) -> f64 {
    dot(a, a)
}

/// Rotate a world-frame vector into the body frame of an agent with heading `yaw`.
#[inline]
pub fn to_body(v: Vec2, cos_yaw: f64, sin_yaw: f64) -> Vec2 {
    [cos_yaw * v[0] + sin_yaw * v[1], -sin_yaw * v[0] + cos_yaw * v[1]]
}

#[inline]
pub fn rotate(v: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

/// Vehicle footprint approximated by three equal circles on the longitudinal axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleHull {
    pub radius: f64,
    /// Offset of the front/rear circles from the chassis centre.
    pub offset: f64,
}

impl CircleHull {
    pub fn from_dims(length: f64, width: f64, wheelbase: f64) -> Self {
        let radius = (0.55 * width).max(0.45);
        let offset = (wheelbase / 2.0).min((length / 2.0 - 0.8 * radius).max(0.0));
        CircleHull { radius, offset }
    }

    /// Circle centres at offsets `{-d, 0, +d}` along the heading.
    #[inline]
    pub fn centers(&self, pos: Vec2, cos_yaw: f64, sin_yaw: f64) -> [Vec2; 3] {
        let d = self.offset;
        [
            [pos[0] - d * cos_yaw, pos[1] - d * sin_yaw],
            pos,
            [pos[0] + d * cos_yaw, pos[1] + d * sin_yaw],
        ]
    }
}

/// Distance from `p` to the segment with centre `mid`, unit direction `dir`
/// and half-length `half_len`, plus the signed lateral offset of `p` from the
/// segment axis (positive to the left of `dir`).
#[inline]
pub fn point_segment(p: Vec2, mid: Vec2, dir: Vec2, half_len: f64) -> (f64, f64) {
    let rel = sub(p, mid);
    let along = dot(rel, dir);
    let lateral = cross(dir, rel);
    let excess = (along.abs() - half_len).max(0.0);
    ((excess * excess + lateral * lateral).sqrt(), lateral)
}

/// Overlap test between a circle and an oriented box given by centre,
/// unit axis and half extents.
#[inline]
pub fn circle_obb_overlap(c: Vec2, r: f64, mid: Vec2, dir: Vec2, half_len: f64, half_width: f64) -> bool {
    let rel = sub(c, mid);
    let u = dot(rel, dir);
    let v = cross(dir, rel);
    let du = (u.abs() - half_len).max(0.0);
    let dv = (v.abs() - half_width).max(0.0);
    du * du + dv * dv < r * r
}

/// Minimum distance between segments `a0-a1` and `b0-b1`.
pub fn segment_segment_distance(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> f64 {
    if segments_intersect(a0, a1, b0, b1) {
        return 0.0;
    }
    let d1 = point_to_segment(a0, b0, b1);
    let d2 = point_to_segment(a1, b0, b1);
    let d3 = point_to_segment(b0, a0, a1);
    let d4 = point_to_segment(b1, a0, a1);
    d1.min(d2).min(d3).min(d4)
}

pub fn point_to_segment(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = sub(b, a);
    let len_sq = norm_sq(ab);
    if len_sq == 0.0 {
        return norm(sub(p, a));
    }
    let t = (dot(sub(p, a), ab) / len_sq).clamp(0.0, 1.0);
    norm(sub(p, add(a, scale(ab, t))))
}

fn segments_intersect(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> bool {
    let d1 = cross(sub(b1, b0), sub(a0, b0));
    let d2 = cross(sub(b1, b0), sub(a1, b0));
    let d3 = cross(sub(a1, a0), sub(b0, a0));
    let d4 = cross(sub(a1, a0), sub(b1, a0));
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}
