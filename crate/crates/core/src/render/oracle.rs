//! Discretized radiosity reference for the path tracer.
//!
//! Surfaces are cut into patches; light transport is solved Lambertian-
//! only by explicit bounce iteration (direct illumination plus gathers)
//! with point-to-point form factors and cached visibility. Floor patches
//! are resampled onto the top-down crop grid, which is exactly what the
//! tracer's `TopDownDirect` view estimates. Single-threaded by contract.

use nalgebra::{Point3, Vector3};

use super::geom::{Pt3, Shape};
use super::world::{SurfaceKind, World};
use super::RenderError;
use crate::image::{ImageGrid, Range};
use crate::scene::{SceneInstance, TargetObject};

type P3 = Point3<f64>;
type V3 = Vector3<f64>;

#[derive(Debug, Clone)]
pub struct OracleOptions {
    /// Target patch edge length in meters.
    pub patch_size: f64,
    /// Total reflections, matching the tracer's `max_bounces`.
    pub bounces: usize,
    pub patch_cap: usize,
    pub out_size: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            patch_size: 0.01,
            bounces: 4,
            patch_cap: 50_000,
            out_size: 64,
        }
    }
}

struct Patch {
    center: P3,
    normal: V3,
    area: f64,
    albedo: f64,
    // Half-extent vectors of the patch cell; zero for triangle patches.
    half_u: V3,
    half_v: V3,
}

struct FloorGrid {
    origin: P3,
    edge_u: V3,
    edge_v: V3,
    nu: usize,
    nv: usize,
    start: usize,
}

/// Solve the scene with patches of `patch_size` and return the top-down
/// floor image at 64x64 with default bounce count.
pub fn radiosity_oracle(
    scene: &SceneInstance,
    object: Option<&TargetObject>,
    patch_size: f64,
) -> Result<ImageGrid, RenderError> {
    radiosity_oracle_opts(
        scene,
        object,
        &OracleOptions {
            patch_size,
            ..OracleOptions::default()
        },
    )
}

pub fn radiosity_oracle_opts(
    scene: &SceneInstance,
    object: Option<&TargetObject>,
    opts: &OracleOptions,
) -> Result<ImageGrid, RenderError> {
    let world = World::build(scene, object);
    let (patches, floor_grids) = patchify(&world, opts.patch_size, opts.patch_cap)?;
    let total = solve(&world, &patches, opts.bounces, opts.patch_size);
    Ok(resample_floor(
        scene,
        &floor_grids,
        &total,
        opts.out_size,
        world.exposure as f64,
    ))
}

fn patchify(
    world: &World,
    patch_size: f64,
    cap: usize,
) -> Result<(Vec<Patch>, Vec<FloorGrid>), RenderError> {
    let mut patches = Vec::new();
    let mut floor_grids = Vec::new();
    for (si, surf) in world.surfaces.iter().enumerate() {
        let albedo = surf.shade.albedo as f64;
        match &surf.shape {
            Shape::Rect(r) => {
                let eu = V3::new(r.edge_u.x as f64, r.edge_u.y as f64, r.edge_u.z as f64);
                let ev = V3::new(r.edge_v.x as f64, r.edge_v.y as f64, r.edge_v.z as f64);
                let origin = P3::new(r.origin.x as f64, r.origin.y as f64, r.origin.z as f64);
                let nu = (eu.norm() / patch_size).ceil() as usize;
                let nv = (ev.norm() / patch_size).ceil() as usize;
                if nu < 4 || nv < 4 {
                    return Err(RenderError::PatchTooCoarse {
                        patch: patch_size,
                        surface: si,
                    });
                }
                let normal = eu.cross(&ev).normalize();
                let area = eu.cross(&ev).norm() / (nu * nv) as f64;
                if surf.kind == SurfaceKind::Floor {
                    floor_grids.push(FloorGrid {
                        origin,
                        edge_u: eu,
                        edge_v: ev,
                        nu,
                        nv,
                        start: patches.len(),
                    });
                }
                for iu in 0..nu {
                    for iv in 0..nv {
                        let center = origin
                            + eu * ((iu as f64 + 0.5) / nu as f64)
                            + ev * ((iv as f64 + 0.5) / nv as f64);
                        patches.push(Patch {
                            center,
                            normal,
                            area,
                            albedo,
                            half_u: eu / (2.0 * nu as f64),
                            half_v: ev / (2.0 * nv as f64),
                        });
                    }
                }
            }
            Shape::Tri(t) => {
                let a = P3::new(t.a.x as f64, t.a.y as f64, t.a.z as f64);
                let e1 = V3::new(t.edge1.x as f64, t.edge1.y as f64, t.edge1.z as f64);
                let e2 = V3::new(t.edge2.x as f64, t.edge2.y as f64, t.edge2.z as f64);
                let longest = e1.norm().max(e2.norm()).max((e2 - e1).norm());
                let k = ((longest / patch_size).ceil() as usize).max(4);
                let normal = e1.cross(&e2).normalize();
                let cell_area = e1.cross(&e2).norm() / 2.0 / (k * k) as f64;
                // Barycentric subdivision into k^2 sub-triangles.
                for row in 0..k {
                    for colu in 0..(k - row) {
                        // Upward sub-triangle centroid.
                        let (x, y) = (colu as f64, row as f64);
                        let c_up = a
                            + e1 * ((x + (x + 1.0) + x) / 3.0 / k as f64)
                            + e2 * ((y + y + (y + 1.0)) / 3.0 / k as f64);
                        patches.push(Patch {
                            center: c_up,
                            normal,
                            area: cell_area,
                            albedo,
                            half_u: V3::zeros(),
                            half_v: V3::zeros(),
                        });
                        if colu + row + 1 < k {
                            // Downward companion.
                            let c_dn = a
                                + e1 * (((x + 1.0) * 2.0 + x) / 3.0 / k as f64)
                                + e2 * ((y * 2.0 + y + 1.0) / 3.0 / k as f64);
                            patches.push(Patch {
                                center: c_dn,
                                normal,
                                area: cell_area,
                                albedo,
                                half_u: V3::zeros(),
                                half_v: V3::zeros(),
                            });
                        }
                    }
                }
            }
        }
        if patches.len() > cap {
            return Err(RenderError::PatchCountExceeded {
                got: patches.len(),
                cap,
            });
        }
    }
    Ok((patches, floor_grids))
}

fn to_f32(p: P3) -> Pt3 {
    Pt3::new(p.x as f32, p.y as f32, p.z as f32)
}

/// Point-to-point transfer geometry `cos_i cos_j / (pi r^2)`, refined by
/// 2x2 sub-points per patch when the pair is closer than four patch
/// widths.
fn pair_geometry(a: &Patch, b: &Patch, patch_size: f64) -> f64 {
    let near2 = (4.0 * patch_size) * (4.0 * patch_size);
    let d = b.center - a.center;
    let r2 = d.norm_squared();
    if r2 >= near2 {
        return point_geometry(&a.center, &a.normal, &b.center, &b.normal);
    }
    let mut acc = 0.0;
    let offsets = [(-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5)];
    for (au, av) in offsets {
        let pa = a.center + a.half_u * au + a.half_v * av;
        for (bu, bv) in offsets {
            let pb = b.center + b.half_u * bu + b.half_v * bv;
            acc += point_geometry(&pa, &a.normal, &pb, &b.normal);
        }
    }
    acc / 16.0
}

#[inline]
fn point_geometry(pa: &P3, na: &V3, pb: &P3, nb: &V3) -> f64 {
    let d = pb - pa;
    let r2 = d.norm_squared();
    if r2 <= 1e-12 {
        return 0.0;
    }
    let dir = d / r2.sqrt();
    let cos_a = na.dot(&dir).max(0.0);
    let cos_b = -nb.dot(&dir);
    if cos_a <= 0.0 || cos_b <= 0.0 {
        return 0.0;
    }
    cos_a * cos_b / (std::f64::consts::PI * r2)
}

/// Bounce-iterated radiosity. Returns per-patch total radiosity over
/// `bounces` reflections.
fn solve(world: &World, patches: &[Patch], bounces: usize, patch_size: f64) -> Vec<f64> {
    let p = patches.len();
    let light_pos = P3::new(
        world.light.position.x as f64,
        world.light.position.y as f64,
        world.light.position.z as f64,
    );

    // Reflection 1: direct spot illumination.
    let mut b: Vec<f64> = patches
        .iter()
        .map(|patch| {
            let to_light = light_pos - patch.center;
            let d2 = to_light.norm_squared();
            if d2 <= 1e-12 {
                return 0.0;
            }
            let dir = to_light / d2.sqrt();
            let cos = patch.normal.dot(&dir);
            if cos <= 0.0 {
                return 0.0;
            }
            let from_light = Pt3::new(-dir.x as f32, -dir.y as f32, -dir.z as f32);
            let intensity = world
                .light
                .intensity_toward(&super::geom::Vec3::new(from_light.x, from_light.y, from_light.z))
                as f64;
            if intensity <= 0.0 {
                return 0.0;
            }
            let offset = to_f32(patch.center + patch.normal * 2e-4);
            if !world.visible(offset, world.light.position) {
                return 0.0;
            }
            patch.albedo * intensity * cos / d2
        })
        .collect();
    let mut total = b.clone();

    if bounces <= 1 || b.iter().all(|&v| v == 0.0) {
        return total;
    }

    // Visibility between patch pairs, cached as a triangular bitset.
    let pair_count = p * (p - 1) / 2;
    let mut vis = vec![0u64; pair_count / 64 + 1];
    let mut pair_idx = 0usize;
    for i in 0..p {
        let pi = &patches[i];
        let from = to_f32(pi.center + pi.normal * 2e-4);
        for j in (i + 1)..p {
            let pj = &patches[j];
            let d = pj.center - pi.center;
            let facing = pi.normal.dot(&d) > 0.0 && pj.normal.dot(&d) < 0.0;
            if facing {
                let to = to_f32(pj.center + pj.normal * 2e-4);
                if world.visible(from, to) {
                    vis[pair_idx / 64] |= 1u64 << (pair_idx % 64);
                }
            }
            pair_idx += 1;
        }
    }

    for _bounce in 2..=bounces {
        let mut e = vec![0.0f64; p];
        let mut pair_idx = 0usize;
        for i in 0..p {
            for j in (i + 1)..p {
                if vis[pair_idx / 64] & (1u64 << (pair_idx % 64)) != 0 {
                    let g = pair_geometry(&patches[i], &patches[j], patch_size);
                    if g > 0.0 {
                        e[i] += b[j] * g * patches[j].area;
                        e[j] += b[i] * g * patches[i].area;
                    }
                }
                pair_idx += 1;
            }
        }
        for i in 0..p {
            b[i] = patches[i].albedo * e[i];
            total[i] += b[i];
        }
    }
    total
}

/// Bilinear resampling of floor-patch radiosity to the top-down crop
/// grid, converted to radiance and exposed.
fn resample_floor(
    scene: &SceneInstance,
    grids: &[FloorGrid],
    total: &[f64],
    out_size: usize,
    exposure: f64,
) -> ImageGrid {
    let mut data = vec![0.0f32; out_size * out_size];
    for row in 0..out_size {
        for col in 0..out_size {
            let u = col as f64 / (out_size - 1) as f64;
            let v = row as f64 / (out_size - 1) as f64;
            let p = scene.crop_point(u, v);
            let p = P3::new(p.x, p.y, p.z);
            for grid in grids {
                let d = p - grid.origin;
                let lu = d.dot(&grid.edge_u) / grid.edge_u.norm_squared();
                let lv = d.dot(&grid.edge_v) / grid.edge_v.norm_squared();
                if !(-1e-9..=1.0 + 1e-9).contains(&lu) || !(-1e-9..=1.0 + 1e-9).contains(&lv) {
                    continue;
                }
                let gu = (lu * grid.nu as f64 - 0.5).clamp(0.0, (grid.nu - 1) as f64);
                let gv = (lv * grid.nv as f64 - 0.5).clamp(0.0, (grid.nv - 1) as f64);
                let iu = (gu.floor() as usize).min(grid.nu.saturating_sub(2));
                let iv = (gv.floor() as usize).min(grid.nv.saturating_sub(2));
                let fu = gu - iu as f64;
                let fv = gv - iv as f64;
                let at = |a: usize, b: usize| total[grid.start + a * grid.nv + b];
                let v00 = at(iu, iv);
                let v01 = at(iu, iv + 1.min(grid.nv - 1 - iv));
                let v10 = at(iu + 1.min(grid.nu - 1 - iu), iv);
                let v11 = at(
                    iu + 1.min(grid.nu - 1 - iu),
                    iv + 1.min(grid.nv - 1 - iv),
                );
                let top = v00 + (v01 - v00) * fv;
                let bot = v10 + (v11 - v10) * fv;
                let radiosity = top + (bot - top) * fu;
                data[row * out_size + col] =
                    (radiosity / std::f64::consts::PI * exposure) as f32;
                break;
            }
        }
    }
    ImageGrid::new(out_size, out_size, 1, Range::Linear, data).expect("oracle image is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SceneConfig;

    #[test]
    fn facing_unit_patches_match_the_form_factor_formula() {
        // Two parallel 4x4 cm plates 60 cm apart, subdivided at 1 cm: the
        // irradiance gathered at the receiver center from a unit-radiosity
        // emitter must match cos^2 / (pi d^2) * A within 1 percent.
        let d = 0.60;
        let side = 0.04;
        let n_side = 4;
        let cell = side / n_side as f64;
        let mut emitters = Vec::new();
        for i in 0..n_side {
            for j in 0..n_side {
                emitters.push(Patch {
                    center: P3::new(
                        (i as f64 + 0.5) * cell - side / 2.0,
                        (j as f64 + 0.5) * cell - side / 2.0,
                        0.0,
                    ),
                    normal: V3::new(0.0, 0.0, 1.0),
                    area: cell * cell,
                    albedo: 1.0,
                    half_u: V3::new(cell / 2.0, 0.0, 0.0),
                    half_v: V3::new(0.0, cell / 2.0, 0.0),
                });
            }
        }
        let receiver = Patch {
            center: P3::new(0.0, 0.0, d),
            normal: V3::new(0.0, 0.0, -1.0),
            area: cell * cell,
            albedo: 1.0,
            half_u: V3::new(cell / 2.0, 0.0, 0.0),
            half_v: V3::new(0.0, cell / 2.0, 0.0),
        };
        let mut e = 0.0;
        for em in &emitters {
            e += pair_geometry(&receiver, em, cell) * em.area;
        }
        let expected = side * side / (std::f64::consts::PI * d * d);
        let rel = (e - expected).abs() / expected;
        assert!(rel < 0.01, "form factor off by {rel:.4}");
    }

    #[test]
    fn light_off_yields_zero_everywhere() {
        let mut cfg = SceneConfig::default();
        cfg.light.emission = crate::scene::ParamDistribution::fixed(0.0);
        let scene = cfg.sample(0).unwrap();
        let img = radiosity_oracle_opts(
            &scene,
            None,
            &OracleOptions {
                patch_size: 0.06,
                bounces: 4,
                patch_cap: 50_000,
                out_size: 16,
            },
        )
        .unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn patch_cap_is_enforced() {
        let scene = SceneConfig::default().sample(0).unwrap();
        let err = radiosity_oracle_opts(
            &scene,
            None,
            &OracleOptions {
                patch_size: 0.01,
                bounces: 4,
                patch_cap: 100,
                out_size: 16,
            },
        );
        assert!(matches!(err, Err(RenderError::PatchCountExceeded { .. })));
    }

    #[test]
    fn too_coarse_patches_are_rejected() {
        let scene = SceneConfig::default().sample(0).unwrap();
        let err = radiosity_oracle_opts(
            &scene,
            None,
            &OracleOptions {
                patch_size: 0.5,
                bounces: 4,
                patch_cap: 50_000,
                out_size: 16,
            },
        );
        assert!(matches!(err, Err(RenderError::PatchTooCoarse { .. })));
    }
}
