//! Ray-intersection primitives for the hallway scenes.
//!
//! Geometry is f32 throughout the hot path; the desk-scale dimensions
//! leave three orders of magnitude between offsets and float epsilon.

use nalgebra::{Point3, Vector3};

pub type Vec3 = Vector3<f32>;
pub type Pt3 = Point3<f32>;

/// Offset applied along normals when spawning secondary rays.
pub const RAY_EPS: f32 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Pt3,
    pub dir: Vec3,
}

/// A parallelogram: origin plus two edge vectors.
#[derive(Debug, Clone)]
pub struct Rect {
    pub origin: Pt3,
    pub edge_u: Vec3,
    pub edge_v: Vec3,
    pub normal: Vec3,
    inv_len2_u: f32,
    inv_len2_v: f32,
}

impl Rect {
    pub fn new(origin: Pt3, edge_u: Vec3, edge_v: Vec3) -> Self {
        let normal = edge_u.cross(&edge_v).normalize();
        Self {
            origin,
            edge_u,
            edge_v,
            normal,
            inv_len2_u: 1.0 / edge_u.norm_squared(),
            inv_len2_v: 1.0 / edge_v.norm_squared(),
        }
    }

    pub fn area(&self) -> f32 {
        self.edge_u.cross(&self.edge_v).norm()
    }

    /// Point at local coordinates `(u, v)` in `[0, 1]^2`.
    pub fn point_at(&self, u: f32, v: f32) -> Pt3 {
        self.origin + self.edge_u * u + self.edge_v * v
    }

    #[inline]
    pub fn intersect(&self, ray: &Ray, t_max: f32) -> Option<f32> {
        let denom = ray.dir.dot(&self.normal);
        if denom.abs() < 1e-9 {
            return None;
        }
        let t = (self.origin - ray.origin).dot(&self.normal) / denom;
        if t <= RAY_EPS || t >= t_max {
            return None;
        }
        let p = ray.origin + ray.dir * t;
        let d = p - self.origin;
        let u = d.dot(&self.edge_u) * self.inv_len2_u;
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let v = d.dot(&self.edge_v) * self.inv_len2_v;
        if !(0.0..=1.0).contains(&v) {
            return None;
        }
        Some(t)
    }
}

/// A triangle with precomputed edges for Moller-Trumbore intersection.
#[derive(Debug, Clone)]
pub struct Tri {
    pub a: Pt3,
    pub edge1: Vec3,
    pub edge2: Vec3,
    pub normal: Vec3,
}

impl Tri {
    pub fn new(a: Pt3, b: Pt3, c: Pt3) -> Self {
        let edge1 = b - a;
        let edge2 = c - a;
        Self {
            a,
            edge1,
            edge2,
            normal: edge1.cross(&edge2).normalize(),
        }
    }

    pub fn area(&self) -> f32 {
        self.edge1.cross(&self.edge2).norm() * 0.5
    }

    #[inline]
    pub fn intersect(&self, ray: &Ray, t_max: f32) -> Option<f32> {
        let pvec = ray.dir.cross(&self.edge2);
        let det = self.edge1.dot(&pvec);
        if det.abs() < 1e-12 {
            return None;
        }
        let inv_det = 1.0 / det;
        let tvec = ray.origin - self.a;
        let u = tvec.dot(&pvec) * inv_det;
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let qvec = tvec.cross(&self.edge1);
        let v = ray.dir.dot(&qvec) * inv_det;
        if v < 0.0 || u + v > 1.0 {
            return None;
        }
        let t = self.edge2.dot(&qvec) * inv_det;
        if t <= RAY_EPS || t >= t_max {
            return None;
        }
        Some(t)
    }
}

#[derive(Debug, Clone)]
pub enum Shape {
    Rect(Rect),
    Tri(Tri),
}

impl Shape {
    #[inline]
    pub fn intersect(&self, ray: &Ray, t_max: f32) -> Option<f32> {
        match self {
            Shape::Rect(r) => r.intersect(ray, t_max),
            Shape::Tri(t) => t.intersect(ray, t_max),
        }
    }

    pub fn normal(&self) -> Vec3 {
        match self {
            Shape::Rect(r) => r.normal,
            Shape::Tri(t) => t.normal,
        }
    }

    pub fn area(&self) -> f32 {
        match self {
            Shape::Rect(r) => r.area(),
            Shape::Tri(t) => t.area(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_intersection_hits_inside_and_misses_outside() {
        let rect = Rect::new(
            Pt3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        );
        let hit = Ray {
            origin: Pt3::new(0.5, 0.5, 1.0),
            dir: Vec3::new(0.0, 0.0, -1.0),
        };
        assert!((rect.intersect(&hit, f32::INFINITY).unwrap() - 1.0).abs() < 1e-6);
        let miss = Ray {
            origin: Pt3::new(1.5, 0.5, 1.0),
            dir: Vec3::new(0.0, 0.0, -1.0),
        };
        assert!(rect.intersect(&miss, f32::INFINITY).is_none());
    }

    #[test]
    fn tri_intersection_respects_barycentric_bounds() {
        let tri = Tri::new(
            Pt3::new(0.0, 0.0, 0.0),
            Pt3::new(1.0, 0.0, 0.0),
            Pt3::new(0.0, 1.0, 0.0),
        );
        let hit = Ray {
            origin: Pt3::new(0.2, 0.2, 1.0),
            dir: Vec3::new(0.0, 0.0, -1.0),
        };
        assert!(tri.intersect(&hit, f32::INFINITY).is_some());
        let miss = Ray {
            origin: Pt3::new(0.8, 0.8, 1.0),
            dir: Vec3::new(0.0, 0.0, -1.0),
        };
        assert!(tri.intersect(&miss, f32::INFINITY).is_none());
    }

    #[test]
    fn t_max_cuts_off_far_hits() {
        let rect = Rect::new(
            Pt3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        );
        let ray = Ray {
            origin: Pt3::new(0.5, 0.5, 2.0),
            dir: Vec3::new(0.0, 0.0, -1.0),
        };
        assert!(rect.intersect(&ray, 1.5).is_none());
        assert!(rect.intersect(&ray, 2.5).is_some());
    }
}
