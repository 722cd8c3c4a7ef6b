//! Concrete render-time world: surface list, materials, spot light, and
//! the pinhole/orthographic cameras, all built from a [`SceneInstance`].

use super::geom::{Pt3, Ray, Rect, Shape, Tri, Vec3, RAY_EPS};
use crate::scene::{ObjectClass, SceneInstance, TargetObject};

/// What a surface is, for patch tagging and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceKind {
    Floor,
    Ceiling,
    FarWall,
    LeftWall,
    CornerWall,
    InnerWall,
    EndWall,
    CameraWall,
    Object,
}

/// Shading parameters derived from the sampled material triple.
#[derive(Debug, Clone, Copy)]
pub struct ShadeParams {
    /// Diffuse albedo.
    pub albedo: f32,
    /// Specular lobe weight.
    pub spec_weight: f32,
    /// Phong exponent derived from roughness.
    pub exponent: f32,
}

impl ShadeParams {
    pub fn from_material(m: &crate::scene::MaterialInstance) -> Self {
        let r = m.roughness.clamp(0.05, 1.0);
        Self {
            albedo: m.value as f32,
            spec_weight: (0.08 * m.specular) as f32,
            exponent: ((2.0 / r.powi(4)) - 2.0).clamp(0.0, 5000.0) as f32,
        }
    }

    pub fn lambertian(albedo: f32) -> Self {
        Self {
            albedo,
            spec_weight: 0.0,
            exponent: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Surface {
    pub shape: Shape,
    pub kind: SurfaceKind,
    pub shade: ShadeParams,
}

/// Spot light with smooth angular falloff.
#[derive(Debug, Clone)]
pub struct SpotLight {
    pub position: Pt3,
    pub direction: Vec3,
    /// Radiant intensity on axis: emission / 4 pi.
    pub intensity: f32,
    pub cos_outer: f32,
    pub half_outer: f32,
    pub half_inner: f32,
}

impl SpotLight {
    pub fn from_scene(scene: &SceneInstance) -> Self {
        let p = scene.light.position();
        let d = scene.light.direction();
        let half_outer = (scene.light.spot_size / 2.0) as f32;
        let half_inner = half_outer * (1.0 - scene.light.spot_blend) as f32;
        Self {
            position: Pt3::new(p.x as f32, p.y as f32, p.z as f32),
            direction: Vec3::new(d.x as f32, d.y as f32, d.z as f32),
            intensity: (scene.light.emission / (4.0 * std::f64::consts::PI)) as f32,
            cos_outer: half_outer.cos(),
            half_outer,
            half_inner,
        }
    }

    /// Radiant intensity toward `dir` (unit vector from the light).
    #[inline]
    pub fn intensity_toward(&self, dir: &Vec3) -> f32 {
        let cos = self.direction.dot(dir);
        if cos <= self.cos_outer {
            return 0.0;
        }
        let theta = cos.clamp(-1.0, 1.0).acos();
        if theta <= self.half_inner {
            return self.intensity;
        }
        let span = self.half_outer - self.half_inner;
        if span <= 0.0 {
            return self.intensity;
        }
        let t = ((self.half_outer - theta) / span).clamp(0.0, 1.0);
        self.intensity * t * t * (3.0 - 2.0 * t)
    }
}

/// Pinhole camera with square pixels. Pixel centers sit at integer
/// coordinates, matching the rectification convention.
#[derive(Debug, Clone)]
pub struct Camera {
    pub position: Pt3,
    forward: Vec3,
    right: Vec3,
    up: Vec3,
    tan_half: f32,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(position: [f64; 3], look_at: [f64; 3], fov_deg: f64, resolution: usize) -> Self {
        let pos = Pt3::new(position[0] as f32, position[1] as f32, position[2] as f32);
        let target = Pt3::new(look_at[0] as f32, look_at[1] as f32, look_at[2] as f32);
        let forward = (target - pos).normalize();
        let up_hint = if forward.z.abs() > 0.999 {
            Vec3::new(0.0, 1.0, 0.0)
        } else {
            Vec3::new(0.0, 0.0, 1.0)
        };
        let right = forward.cross(&up_hint).normalize();
        let up = right.cross(&forward).normalize();
        Self {
            position: pos,
            forward,
            right,
            up,
            tan_half: ((fov_deg.to_radians() / 2.0).tan()) as f32,
            width: resolution,
            height: resolution,
        }
    }

    /// Ray through continuous pixel position `(px, py)` where integer
    /// values are pixel centers.
    pub fn ray_for(&self, px: f32, py: f32) -> Ray {
        let sx = ((px + 0.5) / self.width as f32 - 0.5) * 2.0 * self.tan_half;
        let sy = (0.5 - (py + 0.5) / self.height as f32) * 2.0 * self.tan_half;
        Ray {
            origin: self.position,
            dir: (self.forward + self.right * sx + self.up * sy).normalize(),
        }
    }

    /// Project a world point to continuous pixel coordinates; `None` if
    /// behind the camera. Exact inverse of [`ray_for`].
    pub fn project(&self, p: Pt3) -> Option<(f64, f64)> {
        let t = p - self.position;
        let depth = t.dot(&self.forward);
        if depth <= 1e-6 {
            return None;
        }
        let sx = t.dot(&self.right) / depth;
        let sy = t.dot(&self.up) / depth;
        let px = (sx / (2.0 * self.tan_half) + 0.5) * self.width as f32 - 0.5;
        let py = (0.5 - sy / (2.0 * self.tan_half)) * self.height as f32 - 0.5;
        Some((px as f64, py as f64))
    }
}

/// The full render-time world.
#[derive(Debug, Clone)]
pub struct World {
    pub surfaces: Vec<Surface>,
    pub light: SpotLight,
    pub exposure: f32,
}

impl World {
    /// Build walls, floor, ceiling, and the optional hidden object.
    pub fn build(scene: &SceneInstance, object: Option<&TargetObject>) -> Self {
        let shade = ShadeParams::from_material(&scene.material);
        let h = &scene.hallway;
        let (wv, lv) = (h.visible_width as f32, h.visible_length as f32);
        let (wo, lo) = (h.occluded_width as f32, h.occluded_length as f32);
        let gh = scene.ceiling_height as f32;
        let p = Pt3::new;
        let v = Vec3::new;

        let mut surfaces = vec![
            // Floor of both corridor legs, normals +z.
            Surface {
                shape: Shape::Rect(Rect::new(p(-wv, -wo, 0.0), v(wv, 0.0, 0.0), v(0.0, wo + lv, 0.0))),
                kind: SurfaceKind::Floor,
                shade,
            },
            Surface {
                shape: Shape::Rect(Rect::new(p(0.0, -wo, 0.0), v(lo, 0.0, 0.0), v(0.0, wo, 0.0))),
                kind: SurfaceKind::Floor,
                shade,
            },
            // Ceiling, normals -z.
            Surface {
                shape: Shape::Rect(Rect::new(p(-wv, -wo, gh), v(0.0, wo + lv, 0.0), v(wv, 0.0, 0.0))),
                kind: SurfaceKind::Ceiling,
                shade,
            },
            Surface {
                shape: Shape::Rect(Rect::new(p(0.0, -wo, gh), v(0.0, wo, 0.0), v(lo, 0.0, 0.0))),
                kind: SurfaceKind::Ceiling,
                shade,
            },
            // Far wall (the flashlight target), normal +y.
            Surface {
                shape: Shape::Rect(Rect::new(p(-wv, -wo, 0.0), v(0.0, 0.0, gh), v(wv + lo, 0.0, 0.0))),
                kind: SurfaceKind::FarWall,
                shade,
            },
            // Left wall of the visible corridor, normal +x.
            Surface {
                shape: Shape::Rect(Rect::new(p(-wv, -wo, 0.0), v(0.0, wo + lv, 0.0), v(0.0, 0.0, gh))),
                kind: SurfaceKind::LeftWall,
                shade,
            },
            // Corner wall: right wall of the visible corridor, normal -x.
            Surface {
                shape: Shape::Rect(Rect::new(p(0.0, 0.0, 0.0), v(0.0, 0.0, gh), v(0.0, lv, 0.0))),
                kind: SurfaceKind::CornerWall,
                shade,
            },
            // Inner wall of the occluded corridor, normal -y.
            Surface {
                shape: Shape::Rect(Rect::new(p(0.0, 0.0, 0.0), v(lo, 0.0, 0.0), v(0.0, 0.0, gh))),
                kind: SurfaceKind::InnerWall,
                shade,
            },
            // End wall of the occluded corridor, normal -x.
            Surface {
                shape: Shape::Rect(Rect::new(p(lo, -wo, 0.0), v(0.0, 0.0, gh), v(0.0, wo, 0.0))),
                kind: SurfaceKind::EndWall,
                shade,
            },
            // Wall behind the camera, normal -y.
            Surface {
                shape: Shape::Rect(Rect::new(p(-wv, lv, 0.0), v(wv, 0.0, 0.0), v(0.0, 0.0, gh))),
                kind: SurfaceKind::CameraWall,
                shade,
            },
        ];

        if let Some(obj) = object {
            surfaces.extend(object_surfaces(obj, shade));
        }

        Self {
            surfaces,
            light: SpotLight::from_scene(scene),
            exposure: scene.camera.exposure as f32,
        }
    }

    /// Nearest surface hit.
    #[inline]
    pub fn hit(&self, ray: &Ray) -> Option<(usize, f32)> {
        let mut best: Option<(usize, f32)> = None;
        let mut t_max = f32::INFINITY;
        for (i, s) in self.surfaces.iter().enumerate() {
            if let Some(t) = s.shape.intersect(ray, t_max) {
                t_max = t;
                best = Some((i, t));
            }
        }
        best
    }

    /// True if the segment from `from` to `to` is unobstructed.
    #[inline]
    pub fn visible(&self, from: Pt3, to: Pt3) -> bool {
        let delta = to - from;
        let dist = delta.norm();
        if dist <= 2.0 * RAY_EPS {
            return true;
        }
        let ray = Ray {
            origin: from,
            dir: delta / dist,
        };
        let t_max = dist - 2.0 * RAY_EPS;
        for s in &self.surfaces {
            if s.shape.intersect(&ray, t_max).is_some() {
                return false;
            }
        }
        true
    }
}

fn object_surfaces(obj: &TargetObject, shade: ShadeParams) -> Vec<Surface> {
    let corners = obj.base_corners();
    let h = obj.height as f32;
    let base: Vec<Pt3> = corners
        .iter()
        .map(|c| Pt3::new(c[0] as f32, c[1] as f32, 0.0))
        .collect();
    let mut out = Vec::with_capacity(5);
    match obj.class {
        ObjectClass::RectBox | ObjectClass::Cube => {
            for i in 0..4 {
                let a = base[i];
                let b = base[(i + 1) % 4];
                out.push(Surface {
                    shape: Shape::Rect(Rect::new(a, b - a, Vec3::new(0.0, 0.0, h))),
                    kind: SurfaceKind::Object,
                    shade,
                });
            }
            let top0 = Pt3::new(base[0].x, base[0].y, h);
            out.push(Surface {
                shape: Shape::Rect(Rect::new(
                    top0,
                    base[1] - base[0],
                    base[3] - base[0],
                )),
                kind: SurfaceKind::Object,
                shade,
            });
        }
        ObjectClass::Pyramid => {
            let apex = Pt3::new(obj.x as f32, obj.y as f32, h);
            for i in 0..4 {
                out.push(Surface {
                    shape: Shape::Tri(Tri::new(base[i], base[(i + 1) % 4], apex)),
                    kind: SurfaceKind::Object,
                    shade,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SceneConfig;

    #[test]
    fn walls_have_inward_normals() {
        let scene = SceneConfig::default().sample(0).unwrap();
        let world = World::build(&scene, None);
        // A point well inside the visible corridor.
        let inside = Pt3::new(-0.3, 0.5, 0.3);
        for s in &world.surfaces {
            let (sample, normal) = match &s.shape {
                Shape::Rect(r) => (r.point_at(0.5, 0.5), r.normal),
                Shape::Tri(t) => (t.a, t.normal),
            };
            // Inward: the normal points toward the hallway interior for at
            // least one of the two leg centers.
            let inside_b = Pt3::new(0.6, -0.3, 0.3);
            let d1 = (inside - sample).dot(&normal);
            let d2 = (inside_b - sample).dot(&normal);
            assert!(
                d1 > 0.0 || d2 > 0.0,
                "{:?} normal faces outward",
                s.kind
            );
        }
    }

    #[test]
    fn corner_wall_blocks_sight_into_the_occluded_corridor() {
        let scene = SceneConfig::default().sample(0).unwrap();
        let world = World::build(&scene, None);
        let camera = Pt3::new(-0.30, 1.82, 0.42);
        let hidden = Pt3::new(0.25, -0.25, 0.05);
        assert!(!world.visible(camera, hidden));
        let visible_floor = Pt3::new(-0.3, -0.1, 0.0);
        assert!(world.visible(camera, visible_floor + Vec3::new(0.0, 0.0, RAY_EPS * 4.0)));
    }

    #[test]
    fn far_wall_sees_hidden_objects() {
        // The illuminated wall must have line of sight to the object.
        let scene = SceneConfig::default().sample(0).unwrap();
        let world = World::build(&scene, None);
        let wall_point = Pt3::new(-0.1, -0.6 + RAY_EPS * 4.0, 0.3);
        let object_top = Pt3::new(0.2, -0.2, 0.15);
        assert!(world.visible(wall_point, object_top));
    }

    #[test]
    fn spot_falloff_is_full_inside_and_zero_outside() {
        let scene = SceneConfig::default().sample(0).unwrap();
        let light = SpotLight::from_scene(&scene);
        assert!(light.intensity_toward(&light.direction) == light.intensity);
        let sideways = Vec3::new(-light.direction.y, light.direction.x, light.direction.z)
            .normalize();
        // 90 degrees off axis is far outside a 16 degree cone.
        let off = (light.direction + sideways * 10.0).normalize();
        assert_eq!(light.intensity_toward(&off), 0.0);
    }

    #[test]
    fn camera_projection_inverts_ray_generation() {
        let cam = Camera::new([-0.3, 1.82, 0.42], [-0.3, 0.0, 0.0], 40.0, 128);
        for &(px, py) in &[(10.0f32, 20.0f32), (63.5, 63.5), (100.2, 5.7)] {
            let ray = cam.ray_for(px, py);
            let p = ray.origin + ray.dir * 1.7;
            let (qx, qy) = cam.project(p).unwrap();
            assert!((qx - px as f64).abs() < 1e-3, "{qx} vs {px}");
            assert!((qy - py as f64).abs() < 1e-3, "{qy} vs {py}");
        }
    }

    #[test]
    fn projected_crop_corners_land_inside_the_camera_frame() {
        let scene = SceneConfig::default().sample(0).unwrap();
        let cam = Camera::new(
            scene.camera.position,
            scene.camera.look_at,
            scene.camera.fov_deg,
            scene.camera.resolution,
        );
        for q in &scene.crop_quad {
            let (px, py) = cam
                .project(Pt3::new(q[0] as f32, q[1] as f32, 0.0))
                .expect("crop corner behind camera");
            assert!(
                px > 2.0 && py > 2.0 && px < 125.0 && py < 125.0,
                "corner ({}, {}) projects to ({px:.1}, {py:.1})",
                q[0],
                q[1]
            );
        }
    }

    #[test]
    fn pyramid_faces_tilt_outward() {
        let obj = TargetObject::new(ObjectClass::Pyramid, 0.3, -0.3, 0.15, 0.0);
        let surfaces = object_surfaces(&obj, ShadeParams::lambertian(0.8));
        assert_eq!(surfaces.len(), 4);
        for s in &surfaces {
            let n = s.shape.normal();
            assert!(n.z > 0.0, "side faces point partly upward");
            // Outward: horizontal component points away from the center.
            let horiz = Vec3::new(n.x, n.y, 0.0);
            if horiz.norm() > 1e-6 {
                let center_dir = match &s.shape {
                    Shape::Tri(t) => Vec3::new(t.a.x - 0.3, t.a.y + 0.3, 0.0),
                    _ => unreachable!(),
                };
                assert!(horiz.dot(&center_dir) > -1e-6);
            }
        }
    }
}
