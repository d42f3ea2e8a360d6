//! Bounded domains with closed-form signed distances.
//!
//! Every domain is one of a few convex-or-annular shapes for which the exact
//! Euclidean signed distance (positive inside, negative outside) is available
//! in closed form, together with its gradient and Hessian away from the
//! medial axis. Exactness matters: dilation and erosion are then literally a
//! constant shift of the signed distance, boundary-strip barriers can use
//! chain-rule derivatives of the true distance function, and the uniform
//! exterior-ball property of dilated domains can be probed directly.
//!
//! Each shape carries a proximal-smoothness radius `eta` in (0, 1): every
//! boundary point admits an exterior tangent ball of radius `eta`. Dilating
//! by `delta < eta / 2` preserves a uniform exterior ball of radius `eta / 2`.

use serde::{Deserialize, Serialize};

use crate::num::{self, halton_point};

/// Errors from domain construction and queries.
#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid domain parameters: {0}")]
    BadParams(String),
    #[error("dilation {delta} out of range (cumulative limit {limit})")]
    DeltaTooLarge { delta: f64, limit: f64 },
    #[error("point is not on the boundary (signed distance {sd})")]
    NotOnBoundary { sd: f64 },
    #[error("operation not supported in dimension {0}")]
    UnsupportedDim(usize),
}

/// The base shape of a domain, before any dilation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DomainShape {
    /// Open interval (lo, hi) in dimension 1.
    Interval { lo: f64, hi: f64 },
    /// Open Euclidean ball.
    Ball { center: Vec<f64>, radius: f64 },
    /// Axis-aligned box with rounded corners: the set of points within
    /// `corner_radius` of the inner box `center +- (halfwidths - corner_radius)`.
    RoundedBox {
        center: Vec<f64>,
        halfwidths: Vec<f64>,
        corner_radius: f64,
    },
    /// Open spherical shell `inner < |x - center| < outer` (in d = 1 a pair
    /// of intervals). Used for composite boundary barriers.
    Annulus {
        center: Vec<f64>,
        inner: f64,
        outer: f64,
    },
}

/// A bounded domain: base shape plus a (possibly negative) dilation offset.
/// The signed distance of the dilated domain is exactly
/// `base signed distance + dilation`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    dim: usize,
    shape: DomainShape,
    /// Cumulative dilation: positive inflates, negative erodes.
    dilation: f64,
    /// Proximal-smoothness radius of the base shape, in (0, 1).
    prox_radius_eta: f64,
}

const ETA_CAP: f64 = 1.0 - 1e-6;

/// Classification tolerance: points with signed distance in [-1e-12, 1e-12]
/// are treated as boundary by the queries that care.
pub const BOUNDARY_TOL: f64 = 1e-12;

impl DomainSpec {
    /// Open interval (lo, hi); requires lo < hi.
    pub fn interval(lo: f64, hi: f64) -> Result<Self, GeometryError> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(GeometryError::BadParams(format!(
                "interval needs lo < hi, got ({lo}, {hi})"
            )));
        }
        let half = 0.5 * (hi - lo);
        Ok(Self {
            dim: 1,
            shape: DomainShape::Interval { lo, hi },
            dilation: 0.0,
            prox_radius_eta: ETA_CAP.min(half),
        })
    }

    /// Open ball; requires radius > 0 and a finite center.
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0) || !radius.is_finite() || center.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::BadParams(format!(
                "ball needs radius > 0, got {radius}"
            )));
        }
        if center.is_empty() {
            return Err(GeometryError::BadParams("ball center is empty".into()));
        }
        let dim = center.len();
        Ok(Self {
            dim,
            shape: DomainShape::Ball { center, radius },
            dilation: 0.0,
            prox_radius_eta: ETA_CAP.min(radius),
        })
    }

    /// Rounded box; requires `0 < corner_radius < min(halfwidths)` and
    /// dimension >= 2.
    pub fn rounded_box(
        center: Vec<f64>,
        halfwidths: Vec<f64>,
        corner_radius: f64,
    ) -> Result<Self, GeometryError> {
        let dim = center.len();
        if dim < 2 || halfwidths.len() != dim {
            return Err(GeometryError::BadParams(
                "rounded box needs dim >= 2 and matching halfwidths".into(),
            ));
        }
        let min_hw = halfwidths.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(corner_radius > 0.0) || !(corner_radius < min_hw) {
            return Err(GeometryError::BadParams(format!(
                "rounded box needs 0 < corner_radius < min(halfwidths), got {corner_radius} vs {min_hw}"
            )));
        }
        if center.iter().chain(halfwidths.iter()).any(|c| !c.is_finite()) {
            return Err(GeometryError::BadParams("nonfinite rounded box".into()));
        }
        Ok(Self {
            dim,
            shape: DomainShape::RoundedBox {
                center,
                halfwidths,
                corner_radius,
            },
            dilation: 0.0,
            prox_radius_eta: ETA_CAP.min(corner_radius),
        })
    }

    /// Spherical shell `inner < |x - center| < outer`; requires
    /// `0 < inner < outer`.
    pub fn annulus(center: Vec<f64>, inner: f64, outer: f64) -> Result<Self, GeometryError> {
        if !(inner > 0.0) || !(inner < outer) || !outer.is_finite() {
            return Err(GeometryError::BadParams(format!(
                "annulus needs 0 < inner < outer, got ({inner}, {outer})"
            )));
        }
        if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::BadParams("bad annulus center".into()));
        }
        let dim = center.len();
        Ok(Self {
            dim,
            shape: DomainShape::Annulus {
                center,
                inner,
                outer,
            },
            dilation: 0.0,
            prox_radius_eta: ETA_CAP.min(inner),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> &DomainShape {
        &self.shape
    }

    /// Cumulative dilation applied so far (negative = eroded).
    pub fn dilation(&self) -> f64 {
        self.dilation
    }

    /// Proximal-smoothness radius of the base shape.
    pub fn prox_radius_eta(&self) -> f64 {
        self.prox_radius_eta
    }

    /// Exact signed distance to the boundary: positive inside, negative
    /// outside, zero on the boundary.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.base_signed_distance(x) + self.dilation
    }

    /// Distance to the complement: `max(signed_distance, 0)`.
    pub fn dist_to_complement(&self, x: &[f64]) -> f64 {
        self.signed_distance(x).max(0.0)
    }

    /// True if x lies in the open domain with a small numerical margin.
    pub fn is_interior(&self, x: &[f64]) -> bool {
        self.signed_distance(x) > BOUNDARY_TOL
    }

    fn base_signed_distance(&self, x: &[f64]) -> f64 {
        match &self.shape {
            DomainShape::Interval { lo, hi } => (x[0] - lo).min(hi - x[0]),
            DomainShape::Ball { center, radius } => radius - num::dist2(x, center),
            DomainShape::RoundedBox {
                center,
                halfwidths,
                corner_radius,
            } => {
                let mut out_sq = 0.0;
                let mut max_q = f64::NEG_INFINITY;
                for k in 0..self.dim {
                    let q = (x[k] - center[k]).abs() - (halfwidths[k] - corner_radius);
                    max_q = max_q.max(q);
                    if q > 0.0 {
                        out_sq += q * q;
                    }
                }
                corner_radius - (out_sq.sqrt() + max_q.min(0.0))
            }
            DomainShape::Annulus {
                center,
                inner,
                outer,
            } => {
                let r = num::dist2(x, center);
                (r - inner).min(outer - r)
            }
        }
    }

    /// Axis-aligned bounding box `(lo, hi)` of the (dilated) domain.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let pad = self.dilation;
        match &self.shape {
            DomainShape::Interval { lo, hi } => (vec![lo - pad], vec![hi + pad]),
            DomainShape::Ball { center, radius } => {
                let r = radius + pad;
                (
                    center.iter().map(|c| c - r).collect(),
                    center.iter().map(|c| c + r).collect(),
                )
            }
            DomainShape::RoundedBox {
                center, halfwidths, ..
            } => (
                center
                    .iter()
                    .zip(halfwidths)
                    .map(|(c, h)| c - h - pad)
                    .collect(),
                center
                    .iter()
                    .zip(halfwidths)
                    .map(|(c, h)| c + h + pad)
                    .collect(),
            ),
            DomainShape::Annulus { center, outer, .. } => {
                let r = outer + pad;
                (
                    center.iter().map(|c| c - r).collect(),
                    center.iter().map(|c| c + r).collect(),
                )
            }
        }
    }

    /// In-radius of the (dilated) domain: the largest depth reachable from
    /// the boundary.
    pub fn in_radius(&self) -> f64 {
        let base = match &self.shape {
            DomainShape::Interval { lo, hi } => 0.5 * (hi - lo),
            DomainShape::Ball { radius, .. } => *radius,
            DomainShape::RoundedBox { halfwidths, .. } => {
                halfwidths.iter().cloned().fold(f64::INFINITY, f64::min)
            }
            DomainShape::Annulus { inner, outer, .. } => 0.5 * (outer - inner),
        };
        base + self.dilation
    }

    /// Largest depth up to which inward-normal rays from the boundary realize
    /// the distance exactly and the distance function stays twice
    /// differentiable (distance to the medial axis). At most the in-radius.
    pub fn normal_reach(&self) -> f64 {
        match &self.shape {
            DomainShape::RoundedBox { corner_radius, .. } => {
                (corner_radius + self.dilation).min(self.in_radius())
            }
            _ => self.in_radius(),
        }
    }

    /// Dilates (`delta > 0`) or erodes (`delta < 0`) the domain. The new
    /// signed distance is exactly `old + delta`. Cumulative dilation must
    /// stay below `eta / 2` (the exterior-ball guarantee) and erosion must
    /// leave a nonempty interior.
    pub fn dilate(&self, delta: f64) -> Result<Self, GeometryError> {
        if !delta.is_finite() {
            return Err(GeometryError::BadParams("nonfinite dilation".into()));
        }
        let new_dilation = self.dilation + delta;
        let limit = 0.5 * self.prox_radius_eta;
        if new_dilation >= limit {
            return Err(GeometryError::DeltaTooLarge {
                delta,
                limit,
            });
        }
        if self.in_radius() + delta <= BOUNDARY_TOL {
            return Err(GeometryError::DeltaTooLarge {
                delta,
                limit: self.in_radius(),
            });
        }
        let mut out = self.clone();
        out.dilation = new_dilation;
        Ok(out)
    }

    /// Gradient of the signed distance (unit vector pointing inward along
    /// increasing distance), defined away from the medial axis; ridge points
    /// take a fixed deterministic branch.
    pub fn distance_gradient(&self, x: &[f64]) -> Vec<f64> {
        match &self.shape {
            DomainShape::Interval { lo, hi } => {
                // sd = min(x - lo, hi - x): gradient +1 on the lo side.
                if x[0] - lo <= hi - x[0] {
                    vec![1.0]
                } else {
                    vec![-1.0]
                }
            }
            DomainShape::Ball { center, radius: _ } => {
                let p = num::sub(x, center);
                let r = num::norm2(&p);
                if r < 1e-14 {
                    return vec![0.0; self.dim];
                }
                p.iter().map(|c| -c / r).collect()
            }
            DomainShape::RoundedBox {
                center,
                halfwidths,
                corner_radius,
            } => {
                let mut v = vec![0.0; self.dim];
                let mut vn = 0.0;
                let mut max_q = f64::NEG_INFINITY;
                let mut max_k = 0;
                for k in 0..self.dim {
                    let p = x[k] - center[k];
                    let q = p.abs() - (halfwidths[k] - corner_radius);
                    if q > max_q {
                        max_q = q;
                        max_k = k;
                    }
                    if q > 0.0 {
                        v[k] = p.signum() * q;
                        vn += q * q;
                    }
                }
                if vn > 0.0 {
                    let vn = vn.sqrt();
                    v.iter().map(|c| -c / vn).collect()
                } else {
                    // Deep region: nearest face is along the largest q.
                    let mut g = vec![0.0; self.dim];
                    g[max_k] = -(x[max_k] - center[max_k]).signum();
                    g
                }
            }
            DomainShape::Annulus {
                center,
                inner,
                outer,
            } => {
                let p = num::sub(x, center);
                let r = num::norm2(&p);
                if r < 1e-14 {
                    return vec![0.0; self.dim];
                }
                if r - inner <= outer - r {
                    p.iter().map(|c| c / r).collect()
                } else {
                    p.iter().map(|c| -c / r).collect()
                }
            }
        }
    }

    /// Hessian (row-major d x d) of the signed distance, defined away from
    /// the medial axis.
    pub fn distance_hessian(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        match &self.shape {
            DomainShape::Interval { .. } => vec![0.0],
            DomainShape::Ball { center, .. } => {
                let p = num::sub(x, center);
                let r = num::norm2(&p);
                let mut h = vec![0.0; d * d];
                if r < 1e-14 {
                    return h;
                }
                for i in 0..d {
                    for j in 0..d {
                        let id = if i == j { 1.0 } else { 0.0 };
                        h[i * d + j] = -(id - p[i] * p[j] / (r * r)) / r;
                    }
                }
                h
            }
            DomainShape::RoundedBox {
                center,
                halfwidths,
                corner_radius,
            } => {
                let mut v = vec![0.0; d];
                let mut active = vec![false; d];
                let mut vn_sq = 0.0;
                for k in 0..d {
                    let p = x[k] - center[k];
                    let q = p.abs() - (halfwidths[k] - corner_radius);
                    if q > 0.0 {
                        v[k] = p.signum() * q;
                        active[k] = true;
                        vn_sq += q * q;
                    }
                }
                let mut h = vec![0.0; d * d];
                if vn_sq <= 0.0 {
                    return h; // flat face region
                }
                let vn = vn_sq.sqrt();
                for i in 0..d {
                    for j in 0..d {
                        let pa = if i == j && active[i] { 1.0 } else { 0.0 };
                        h[i * d + j] = -(pa - v[i] * v[j] / vn_sq) / vn;
                    }
                }
                h
            }
            DomainShape::Annulus {
                center,
                inner,
                outer,
            } => {
                let p = num::sub(x, center);
                let r = num::norm2(&p);
                let mut h = vec![0.0; d * d];
                if r < 1e-14 {
                    return h;
                }
                let sign = if r - inner <= outer - r { 1.0 } else { -1.0 };
                for i in 0..d {
                    for j in 0..d {
                        let id = if i == j { 1.0 } else { 0.0 };
                        h[i * d + j] = sign * (id - p[i] * p[j] / (r * r)) / r;
                    }
                }
                h
            }
        }
    }

    /// Outward proximal normal at a boundary point (|signed distance| must be
    /// below 1e-8).
    pub fn proximal_normal(&self, x: &[f64]) -> Result<Vec<f64>, GeometryError> {
        let sd = self.signed_distance(x);
        if sd.abs() > 1e-8 {
            return Err(GeometryError::NotOnBoundary { sd });
        }
        Ok(self.distance_gradient(x).iter().map(|g| -g).collect())
    }

    /// Verifies the exterior-ball property at boundary point `x`: places the
    /// ball of radius `r` tangent at `x` along the outward proximal normal
    /// and probes `n_probe` quasi-uniform points of its interior; returns
    /// true iff none lies in the open domain.
    pub fn exterior_ball_check(
        &self,
        x: &[f64],
        r: f64,
        n_probe: usize,
    ) -> Result<bool, GeometryError> {
        let n = self.proximal_normal(x)?;
        let center: Vec<f64> = x.iter().zip(&n).map(|(xi, ni)| xi + r * ni).collect();
        let mut found = 0usize;
        let mut index = 1u64;
        while found < n_probe {
            let u = halton_point(index, self.dim);
            index += 1;
            let y: Vec<f64> = u.iter().map(|c| 2.0 * c - 1.0).collect();
            if num::norm2(&y) >= 1.0 {
                continue;
            }
            let p = num::axpy(&center, r, &y);
            found += 1;
            if self.signed_distance(&p) > BOUNDARY_TOL {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `n` deterministic quasi-uniform boundary points (supported in d <= 3;
    /// shapes with finitely many boundary points cycle through them).
    pub fn boundary_samples(&self, n: usize) -> Vec<Vec<f64>> {
        let pad = self.dilation;
        match &self.shape {
            DomainShape::Interval { lo, hi } => {
                let pts = [vec![lo - pad], vec![hi + pad]];
                (0..n).map(|k| pts[k % 2].clone()).collect()
            }
            DomainShape::Ball { center, radius } => {
                sphere_samples(center, radius + pad, n)
            }
            DomainShape::RoundedBox {
                center,
                halfwidths,
                corner_radius,
            } => rounded_box_boundary(center, halfwidths, *corner_radius, pad, n),
            DomainShape::Annulus {
                center,
                inner,
                outer,
            } => {
                // Split proportionally to boundary measure.
                let ri = inner - pad;
                let ro = outer + pad;
                let n_in = ((n as f64) * ri / (ri + ro)).round() as usize;
                let n_in = n_in.clamp(1.min(n), n.saturating_sub(1).max(1));
                let mut pts = sphere_samples(center, ri, n_in);
                pts.extend(sphere_samples(center, ro, n - n_in));
                pts
            }
        }
    }

    /// `n` deterministic points in the boundary collar
    /// `{x in O : 0 < dist(x, complement) < max_depth}`, built by pulling
    /// boundary samples inward along the normal; the k-th point has exact
    /// depth `max_depth * vdC(k)`. Requires `max_depth <= normal_reach`.
    pub fn collar_samples(&self, max_depth: f64, n: usize) -> Vec<Vec<f64>> {
        assert!(
            max_depth > 0.0 && max_depth <= self.normal_reach() * (1.0 + 1e-12),
            "collar depth {max_depth} exceeds normal reach {}",
            self.normal_reach()
        );
        let boundary = self.boundary_samples(n);
        boundary
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let depth = max_depth * num::radical_inverse(k as u64 + 1, 2);
                let normal = self
                    .proximal_normal(b)
                    .expect("boundary samples lie on the boundary");
                num::axpy(b, -depth, &normal)
            })
            .collect()
    }
}

/// Quasi-uniform points on the sphere of the given radius (d <= 3).
fn sphere_samples(center: &[f64], radius: f64, n: usize) -> Vec<Vec<f64>> {
    let d = center.len();
    match d {
        1 => {
            let pts = [vec![center[0] - radius], vec![center[0] + radius]];
            (0..n).map(|k| pts[k % 2].clone()).collect()
        }
        2 => (0..n)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / n.max(1) as f64;
                vec![center[0] + radius * th.cos(), center[1] + radius * th.sin()]
            })
            .collect(),
        3 => {
            // Fibonacci sphere.
            let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
            (0..n)
                .map(|k| {
                    let i = k as f64 + 0.5;
                    let z = 1.0 - 2.0 * i / n as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let th = 2.0 * std::f64::consts::PI * i / golden;
                    vec![
                        center[0] + radius * r * th.cos(),
                        center[1] + radius * r * th.sin(),
                        center[2] + radius * z,
                    ]
                })
                .collect()
        }
        _ => panic!("boundary sampling supports d <= 3, got {d}"),
    }
}

/// Arc-length-uniform samples of a 2-d rounded-box boundary (dilated by pad).
fn rounded_box_boundary(
    center: &[f64],
    halfwidths: &[f64],
    corner_radius: f64,
    pad: f64,
    n: usize,
) -> Vec<Vec<f64>> {
    assert!(center.len() == 2, "rounded-box boundary sampling supports d = 2");
    let b = [halfwidths[0] - corner_radius, halfwidths[1] - corner_radius];
    let r = corner_radius + pad;
    let pi = std::f64::consts::PI;
    // Segments clockwise from the middle of the right face:
    // faces have lengths 2*b, each corner arc is a quarter circle of radius r.
    struct Seg {
        len: f64,
        kind: SegKind,
    }
    enum SegKind {
        // Straight run from a start point along a unit direction.
        Line { start: [f64; 2], dir: [f64; 2] },
        // Arc centered at an inner-box corner from a start angle, CCW.
        Arc { c: [f64; 2], th0: f64 },
    }
    let rx = halfwidths[0] + pad;
    let ry = halfwidths[1] + pad;
    let segs = vec![
        Seg {
            len: 2.0 * b[1],
            kind: SegKind::Line {
                start: [rx, -b[1]],
                dir: [0.0, 1.0],
            },
        },
        Seg {
            len: r * pi / 2.0,
            kind: SegKind::Arc {
                c: [b[0], b[1]],
                th0: 0.0,
            },
        },
        Seg {
            len: 2.0 * b[0],
            kind: SegKind::Line {
                start: [b[0], ry],
                dir: [-1.0, 0.0],
            },
        },
        Seg {
            len: r * pi / 2.0,
            kind: SegKind::Arc {
                c: [-b[0], b[1]],
                th0: pi / 2.0,
            },
        },
        Seg {
            len: 2.0 * b[1],
            kind: SegKind::Line {
                start: [-rx, b[1]],
                dir: [0.0, -1.0],
            },
        },
        Seg {
            len: r * pi / 2.0,
            kind: SegKind::Arc {
                c: [-b[0], -b[1]],
                th0: pi,
            },
        },
        Seg {
            len: 2.0 * b[0],
            kind: SegKind::Line {
                start: [-b[0], -ry],
                dir: [1.0, 0.0],
            },
        },
        Seg {
            len: r * pi / 2.0,
            kind: SegKind::Arc {
                c: [b[0], -b[1]],
                th0: 1.5 * pi,
            },
        },
    ];
    let total: f64 = segs.iter().map(|s| s.len).sum();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut s = total * (k as f64 + 0.5) / n as f64;
        for seg in &segs {
            if s > seg.len {
                s -= seg.len;
                continue;
            }
            let p = match &seg.kind {
                SegKind::Line { start, dir } => {
                    [start[0] + s * dir[0], start[1] + s * dir[1]]
                }
                SegKind::Arc { c, th0 } => {
                    let th = th0 + s / r;
                    [c[0] + r * th.cos(), c[1] + r * th.sin()]
                }
            };
            out.push(vec![center[0] + p[0], center[1] + p[1]]);
            break;
        }
    }
    out
}
