//! Monte-Carlo renderer for the hallway scenes: the measurement view, a
//! direct top-down view of the floor crop, the virtual view into the
//! occluded corridor, and a discretized radiosity oracle used to validate
//! the tracer.

pub mod geom;
pub mod oracle;
pub mod tracer;
pub mod world;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::image::{ImageGrid, Range};
use crate::rng::{self, Domain};
use crate::scene::{SceneError, SceneInstance, TargetObject};
use world::{Camera, World};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid render job: {0}")]
    InvalidJob(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
    #[error("patch count {got} exceeds cap {cap}")]
    PatchCountExceeded { got: usize, cap: usize },
    #[error("patch size {patch} leaves surface {surface} under 4 patches per side")]
    PatchTooCoarse { patch: f64, surface: usize },
}

/// Which camera the job renders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum View {
    /// The measurement camera looking at the visible floor.
    Perspective,
    /// Orthographic top-down resampling of the floor crop quadrilateral;
    /// equals the rectified measurement for Lambertian scenes.
    TopDownDirect,
    /// The virtual camera facing into the occluded corridor.
    OutputView,
}

/// A fully specified render.
#[derive(Debug, Clone)]
pub struct RenderJob {
    pub scene: SceneInstance,
    pub object: Option<TargetObject>,
    pub view: View,
    pub samples_per_pixel: usize,
    /// Maximum surface reflections per path. The information-carrying
    /// signal path has three (wall, object, floor), so at least 3.
    pub max_bounces: usize,
    pub seed: u64,
    /// Override the view's default output resolution.
    pub resolution: Option<usize>,
    /// Replicate the monochrome result into 3 planes.
    pub channels: usize,
    /// Additive Gaussian read noise after exposure (clamped at zero).
    pub noise_sigma: Option<f64>,
}

impl RenderJob {
    pub fn new(scene: SceneInstance, view: View, spp: usize, seed: u64) -> Self {
        Self {
            scene,
            object: None,
            view,
            samples_per_pixel: spp,
            max_bounces: 4,
            seed,
            resolution: None,
            channels: 1,
            noise_sigma: None,
        }
    }

    pub fn with_object(mut self, object: TargetObject) -> Self {
        self.object = Some(object);
        self
    }

    fn validate(&self) -> Result<(), RenderError> {
        if self.samples_per_pixel == 0 {
            return Err(RenderError::InvalidJob("samples_per_pixel must be >= 1".into()));
        }
        if self.max_bounces < 3 {
            return Err(RenderError::InvalidJob(format!(
                "max_bounces {} below the 3-reflection signal path",
                self.max_bounces
            )));
        }
        if !(self.channels == 1 || self.channels == 3) {
            return Err(RenderError::InvalidJob(format!(
                "channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        if self.scene.camera.fov_deg <= 0.0 || self.scene.camera.fov_deg >= 180.0 {
            return Err(RenderError::InvalidJob(format!(
                "degenerate camera fov {}",
                self.scene.camera.fov_deg
            )));
        }
        if let Some(obj) = &self.object {
            obj.validate_in(&self.scene)?;
        }
        Ok(())
    }

    fn resolution_for_view(&self) -> usize {
        self.resolution.unwrap_or(match self.view {
            View::Perspective => self.scene.camera.resolution,
            View::TopDownDirect => 64,
            View::OutputView => self.scene.output_camera.resolution,
        })
    }
}

/// Render the job to a linear-irradiance image. Deterministic in the job,
/// independent of thread count.
pub fn render(job: &RenderJob) -> Result<ImageGrid, RenderError> {
    job.validate()?;
    let world = World::build(&job.scene, job.object.as_ref());
    let res = job.resolution_for_view();
    if res < 2 {
        return Err(RenderError::InvalidJob(format!("resolution {res} too small")));
    }
    let spp = job.samples_per_pixel;
    let bounces = job.max_bounces;
    let exposure = world.exposure;
    let seed = job.seed;

    let camera = match job.view {
        View::Perspective => Some(Camera::new(
            job.scene.camera.position,
            job.scene.camera.look_at,
            job.scene.camera.fov_deg,
            res,
        )),
        View::OutputView => Some(Camera::new(
            job.scene.output_camera.position,
            job.scene.output_camera.look_at,
            job.scene.output_camera.fov_deg,
            res,
        )),
        View::TopDownDirect => None,
    };

    // The floor's shading parameters, for paths started on the floor.
    let floor_shade = world.surfaces[0].shade;
    let scene = &job.scene;

    let pixels: Vec<f32> = (0..res * res)
        .into_par_iter()
        .map(|pixel| {
            let mut rng = rng::stream(seed, Domain::RenderPixel, pixel as u64);
            let (row, col) = (pixel / res, pixel % res);
            let mut acc = 0.0f64;
            match &camera {
                Some(cam) => {
                    for _ in 0..spp {
                        let jx: f32 = rng.gen::<f32>() - 0.5;
                        let jy: f32 = rng.gen::<f32>() - 0.5;
                        let ray = cam.ray_for(col as f32 + jx, row as f32 + jy);
                        acc += tracer::radiance_from_ray(&world, &ray, &mut rng, bounces);
                    }
                }
                None => {
                    // Top-down: the first path vertex is the known floor
                    // point under this pixel, viewed from straight above.
                    let u = col as f64 / (res - 1) as f64;
                    let v = row as f64 / (res - 1) as f64;
                    let fp = scene.crop_point(u, v);
                    let p = geom::Pt3::new(fp.x as f32, fp.y as f32, 0.0);
                    let n = geom::Vec3::new(0.0, 0.0, 1.0);
                    for _ in 0..spp {
                        acc += tracer::radiance_from_vertex(
                            &world,
                            p,
                            n,
                            n,
                            floor_shade,
                            &mut rng,
                            bounces,
                        );
                    }
                }
            }
            let mut value = (acc / spp as f64) as f32 * exposure;
            if let Some(sigma) = job.noise_sigma {
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen();
                let gauss = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                value = (value + (sigma * gauss) as f32).max(0.0);
            }
            value
        })
        .collect();

    let mono = ImageGrid::new(res, res, 1, Range::Linear, pixels)?;
    Ok(if job.channels == 3 {
        mono.replicate_channels(3)?
    } else {
        mono
    })
}

/// Settings for dataset pair rendering.
#[derive(Debug, Clone)]
pub struct PairOptions {
    pub samples_per_pixel: usize,
    pub max_bounces: usize,
    pub output_channels: usize,
}

impl Default for PairOptions {
    fn default() -> Self {
        Self {
            samples_per_pixel: 256,
            max_bounces: 4,
            output_channels: 1,
        }
    }
}

/// Render the training input (top-down measurement) and target (virtual
/// view into the occluded corridor) for one scene sample. Both renders
/// share the scene; their pixel streams are derived from `seed`.
pub fn render_pair(
    scene: &SceneInstance,
    object: Option<&TargetObject>,
    seed: u64,
) -> Result<(ImageGrid, ImageGrid), RenderError> {
    render_pair_opts(scene, object, seed, &PairOptions::default())
}

pub fn render_pair_opts(
    scene: &SceneInstance,
    object: Option<&TargetObject>,
    seed: u64,
    opts: &PairOptions,
) -> Result<(ImageGrid, ImageGrid), RenderError> {
    let mut input_job = RenderJob::new(
        scene.clone(),
        View::TopDownDirect,
        opts.samples_per_pixel,
        rng::derive_seed(seed, 1),
    );
    input_job.max_bounces = opts.max_bounces;
    input_job.object = object.copied();
    let input = render(&input_job)?;

    let mut output_job = RenderJob::new(
        scene.clone(),
        View::OutputView,
        opts.samples_per_pixel,
        rng::derive_seed(seed, 2),
    );
    output_job.max_bounces = opts.max_bounces;
    output_job.object = object.copied();
    output_job.channels = opts.output_channels;
    let output = render(&output_job)?;

    Ok((input, output))
}
