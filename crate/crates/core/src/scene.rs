//! Domain model of the L-shaped hallway world: geometry configuration,
//! randomized rendering parameters, hidden objects, and the evaluation grid.
//!
//! # Coordinate frame
//!
//! Right-handed, floor at `z = 0`, occluding corner at the origin. The
//! visible corridor extends along `+y` (the camera sits at large `y`
//! looking toward the corner region); the occluded corridor extends along
//! `+x`. The two corridors share the far wall at `y = -occluded_width`,
//! which is the wall the flashlight illuminates.
//!
//! Config files use the light position convention of the renderer model
//! parameters: `light.x` is the distance from the corner down the visible
//! corridor (world `+y`), `light.y` the lateral distance from the corner
//! wall into the corridor (world `-x`).

use nalgebra::{Point3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Domain};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },
    #[error("sampled {name} = {value} violates {constraint}")]
    SampledOutOfRange {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },
    #[error("crop quadrilateral is {0}")]
    BadCropQuad(&'static str),
    #[error("grid index ({row}, {col}) outside {rows}x{cols}")]
    GridIndexOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("object at ({x:.3}, {y:.3}) is outside the occluded placement region")]
    ObjectOutsideOccluded { x: f64, y: f64 },
    #[error("object intersects a wall: {0}")]
    ObjectIntersectsWall(String),
}

/// A uniformly distributed parameter `mu + U[-alpha, alpha]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamDistribution {
    pub mu: f64,
    pub alpha: f64,
}

impl ParamDistribution {
    pub fn new(mu: f64, alpha: f64) -> Self {
        Self { mu, alpha }
    }

    /// Degenerate distribution that always yields `mu`.
    pub fn fixed(mu: f64) -> Self {
        Self { mu, alpha: 0.0 }
    }

    /// Draw from `[mu - alpha, mu + alpha]`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        self.mu + (2.0 * u - 1.0) * self.alpha
    }

    fn check(&self, name: &'static str) -> Result<(), SceneError> {
        if !self.mu.is_finite() || !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(SceneError::InvalidParam {
                name,
                reason: format!("mu={}, alpha={} (alpha must be >= 0)", self.mu, self.alpha),
            });
        }
        Ok(())
    }
}

/// Stable per-field stream ids for parameter sampling. Append only.
#[derive(Debug, Clone, Copy)]
enum ParamField {
    CeilingHeight = 0,
    LightX = 1,
    LightY = 2,
    LightEmission = 3,
    SpotSize = 4,
    SpotBlend = 5,
    Exposure = 6,
    MatValue = 7,
    MatSpecular = 8,
    MatRoughness = 9,
}

fn draw(seed: u64, field: ParamField, dist: &ParamDistribution) -> f64 {
    let mut rng = rng::stream(seed, Domain::SceneParam, field as u64);
    dist.sample(&mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LightConfig {
    /// Distance from the corner along the visible corridor (world `+y`).
    pub x: ParamDistribution,
    /// Lateral distance from the corner wall into the corridor (world `-x`).
    pub y: ParamDistribution,
    pub height: f64,
    /// World-space point the spot axis passes through.
    pub aim: [f64; 3],
    pub emission: ParamDistribution,
    /// Full cone apex angle in radians.
    pub spot_size: ParamDistribution,
    /// Fraction of the cone over which intensity falls off, in `[0, 1]`.
    pub spot_blend: ParamDistribution,
}

impl Default for LightConfig {
    fn default() -> Self {
        Self {
            x: ParamDistribution::new(1.85, 0.03),
            y: ParamDistribution::new(0.28, 0.03),
            height: 0.50,
            aim: [-0.25, -0.60, 0.30],
            emission: ParamDistribution::new(2.6e6, 5e5),
            spot_size: ParamDistribution::new(0.287, 0.04),
            spot_blend: ParamDistribution::new(0.6, 0.15),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub exposure: ParamDistribution,
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    pub fov_deg: f64,
    pub resolution: usize,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            exposure: ParamDistribution::new(1.1, 0.2),
            position: [-0.30, 1.82, 0.42],
            look_at: [-0.30, 0.0, 0.0],
            fov_deg: 40.0,
            resolution: 128,
        }
    }
}

/// Fixed-pose auxiliary camera (the virtual view into the occluded area).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewConfig {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    pub fov_deg: f64,
    pub resolution: usize,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            position: [-0.30, -0.30, 0.32],
            look_at: [0.70, -0.30, 0.08],
            fov_deg: 62.0,
            resolution: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaterialConfig {
    pub value: ParamDistribution,
    pub specular: ParamDistribution,
    pub roughness: ParamDistribution,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        Self {
            value: ParamDistribution::new(0.8, 0.2),
            specular: ParamDistribution::new(0.68, 0.15),
            roughness: ParamDistribution::new(0.5, 0.2),
        }
    }
}

/// Footprint of the two corridors. The visible corridor occupies
/// `x in [-visible_width, 0], y in [-occluded_width, visible_length]`;
/// the occluded corridor `x in [0, occluded_length], y in [-occluded_width, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HallwayDims {
    pub visible_width: f64,
    pub visible_length: f64,
    pub occluded_width: f64,
    pub occluded_length: f64,
}

impl Default for HallwayDims {
    fn default() -> Self {
        Self {
            visible_width: 0.6,
            visible_length: 2.4,
            occluded_width: 0.6,
            occluded_length: 1.2,
        }
    }
}

/// Hidden-object defaults: per-class heights and the yaw jitter range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectDefaults {
    pub rect_box_height: f64,
    pub cube_height: f64,
    pub pyramid_height: f64,
    /// Yaw drawn from `[-yaw_jitter, yaw_jitter]` radians.
    pub yaw_jitter: f64,
    /// Test-set position perturbation radius in meters.
    pub position_jitter: f64,
}

impl Default for ObjectDefaults {
    fn default() -> Self {
        Self {
            rect_box_height: 0.30,
            cube_height: 0.18,
            pyramid_height: 0.15,
            yaw_jitter: 0.08,
            position_jitter: 0.01,
        }
    }
}

/// Axis-aligned rectangle on the occluded floor from which training-set
/// object positions are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlacementRegion {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for PlacementRegion {
    fn default() -> Self {
        Self {
            x_min: 0.12,
            x_max: 0.50,
            y_min: -0.48,
            y_max: -0.12,
        }
    }
}

/// Scene description with randomization distributions; the JSON config
/// format. `sample` turns it into a concrete [`SceneInstance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub ceiling_height: ParamDistribution,
    pub light: LightConfig,
    pub camera: CameraConfig,
    pub output_camera: ViewConfig,
    pub material: MaterialConfig,
    pub hallway: HallwayDims,
    /// Floor points (z = 0) of the rectification region, ordered
    /// `[near-left, far-left, far-right, near-right]` where "far" is the
    /// illuminated wall side; maps to rectified columns 0..W-1 left to
    /// right and rows 0..H-1 top to bottom.
    pub crop_quad: [[f64; 2]; 4],
    pub objects: ObjectDefaults,
    pub placement: PlacementRegion,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            ceiling_height: ParamDistribution::new(0.615, 0.01),
            light: LightConfig::default(),
            camera: CameraConfig::default(),
            output_camera: ViewConfig::default(),
            material: MaterialConfig::default(),
            hallway: HallwayDims::default(),
            // 4 cm clearance from every wall keeps the rectified view away
            // from the seam lines where irradiance gradients are singular.
            crop_quad: [[-0.56, 0.56], [-0.56, -0.56], [-0.04, -0.56], [-0.04, 0.56]],
            objects: ObjectDefaults::default(),
            placement: PlacementRegion::default(),
        }
    }
}

impl SceneConfig {
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene config serializes")
    }

    /// Draw every randomized field independently and validate the result.
    /// Deterministic in `(self, seed)`; each field has its own RNG stream,
    /// so adding a field never perturbs the other draws.
    pub fn sample(&self, seed: u64) -> Result<SceneInstance, SceneError> {
        self.ceiling_height.check("ceiling_height")?;
        self.light.x.check("light.x")?;
        self.light.y.check("light.y")?;
        self.light.emission.check("light.emission")?;
        self.light.spot_size.check("light.spot_size")?;
        self.light.spot_blend.check("light.spot_blend")?;
        self.camera.exposure.check("camera.exposure")?;
        self.material.value.check("material.value")?;
        self.material.specular.check("material.specular")?;
        self.material.roughness.check("material.roughness")?;

        let instance = SceneInstance {
            ceiling_height: draw(seed, ParamField::CeilingHeight, &self.ceiling_height),
            light: LightInstance {
                corridor_x: draw(seed, ParamField::LightX, &self.light.x),
                corridor_y: draw(seed, ParamField::LightY, &self.light.y),
                height: self.light.height,
                aim: self.light.aim,
                emission: draw(seed, ParamField::LightEmission, &self.light.emission),
                spot_size: draw(seed, ParamField::SpotSize, &self.light.spot_size),
                spot_blend: draw(seed, ParamField::SpotBlend, &self.light.spot_blend),
            },
            camera: CameraInstance {
                exposure: draw(seed, ParamField::Exposure, &self.camera.exposure),
                position: self.camera.position,
                look_at: self.camera.look_at,
                fov_deg: self.camera.fov_deg,
                resolution: self.camera.resolution,
            },
            output_camera: self.output_camera.clone(),
            material: MaterialInstance {
                value: draw(seed, ParamField::MatValue, &self.material.value),
                specular: draw(seed, ParamField::MatSpecular, &self.material.specular),
                roughness: draw(seed, ParamField::MatRoughness, &self.material.roughness),
            },
            hallway: self.hallway.clone(),
            crop_quad: self.crop_quad,
            objects: self.objects.clone(),
            placement: self.placement.clone(),
        };
        instance.validate()?;
        Ok(instance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightInstance {
    /// Distance from the corner along the visible corridor.
    pub corridor_x: f64,
    /// Lateral distance from the corner wall.
    pub corridor_y: f64,
    pub height: f64,
    pub aim: [f64; 3],
    pub emission: f64,
    pub spot_size: f64,
    pub spot_blend: f64,
}

impl LightInstance {
    /// World-space position of the spot source.
    pub fn position(&self) -> Point3<f64> {
        Point3::new(-self.corridor_y, self.corridor_x, self.height)
    }

    pub fn direction(&self) -> Vector3<f64> {
        (Point3::from(Vector3::from(self.aim)) - self.position()).normalize()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraInstance {
    pub exposure: f64,
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    pub fov_deg: f64,
    pub resolution: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialInstance {
    pub value: f64,
    pub specular: f64,
    pub roughness: f64,
}

/// Concrete scene: every randomized parameter resolved to a value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInstance {
    pub ceiling_height: f64,
    pub light: LightInstance,
    pub camera: CameraInstance,
    pub output_camera: ViewConfig,
    pub material: MaterialInstance,
    pub hallway: HallwayDims,
    pub crop_quad: [[f64; 2]; 4],
    pub objects: ObjectDefaults,
    pub placement: PlacementRegion,
}

impl SceneInstance {
    /// The point where the occluding corner wall meets the floor: the
    /// world origin by convention.
    pub fn corner_position(&self) -> Point3<f64> {
        Point3::origin()
    }

    /// True if `(x, y)` lies in the occluded corridor interior.
    pub fn in_occluded_region(&self, x: f64, y: f64) -> bool {
        x > 0.0 && x < self.hallway.occluded_length && y < 0.0 && y > -self.hallway.occluded_width
    }

    fn validate(&self) -> Result<(), SceneError> {
        let h = &self.hallway;
        for (name, v) in [
            ("visible_width", h.visible_width),
            ("visible_length", h.visible_length),
            ("occluded_width", h.occluded_width),
            ("occluded_length", h.occluded_length),
            ("ceiling_height", self.ceiling_height),
        ] {
            if !(v > 0.0) {
                return Err(SceneError::SampledOutOfRange {
                    name,
                    value: v,
                    constraint: "> 0",
                });
            }
        }
        let max_obj = self
            .objects
            .rect_box_height
            .max(self.objects.cube_height)
            .max(self.objects.pyramid_height);
        if self.ceiling_height <= max_obj {
            return Err(SceneError::SampledOutOfRange {
                name: "ceiling_height",
                value: self.ceiling_height,
                constraint: "> max object height",
            });
        }
        let unit_checks = [
            ("light.spot_blend", self.light.spot_blend),
            ("material.value", self.material.value),
            ("material.specular", self.material.specular),
            ("material.roughness", self.material.roughness),
        ];
        for (name, v) in unit_checks {
            if !(0.0..=1.0).contains(&v) {
                return Err(SceneError::SampledOutOfRange {
                    name,
                    value: v,
                    constraint: "in [0, 1]",
                });
            }
        }
        if !(self.light.spot_size > 0.0 && self.light.spot_size <= std::f64::consts::PI) {
            return Err(SceneError::SampledOutOfRange {
                name: "light.spot_size",
                value: self.light.spot_size,
                constraint: "in (0, pi]",
            });
        }
        if self.light.emission < 0.0 {
            return Err(SceneError::SampledOutOfRange {
                name: "light.emission",
                value: self.light.emission,
                constraint: ">= 0",
            });
        }
        if self.camera.exposure <= 0.0 {
            return Err(SceneError::SampledOutOfRange {
                name: "camera.exposure",
                value: self.camera.exposure,
                constraint: "> 0",
            });
        }
        self.validate_crop_quad()?;
        Ok(())
    }

    fn validate_crop_quad(&self) -> Result<(), SceneError> {
        let q = &self.crop_quad;
        // Convex and non-degenerate: consistent turn direction, no zero edges.
        let mut sign = 0.0f64;
        for i in 0..4 {
            let a = q[i];
            let b = q[(i + 1) % 4];
            let c = q[(i + 2) % 4];
            let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
            if cross.abs() < 1e-9 {
                return Err(SceneError::BadCropQuad("degenerate"));
            }
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return Err(SceneError::BadCropQuad("non-convex"));
            }
        }
        // Must lie in the visible region of the floor.
        for p in q {
            let visible = p[0] <= 1e-9
                && p[0] >= -self.hallway.visible_width - 1e-9
                && p[1] >= -self.hallway.occluded_width - 1e-9
                && p[1] <= self.hallway.visible_length + 1e-9;
            if !visible {
                return Err(SceneError::BadCropQuad("outside the visible floor"));
            }
        }
        Ok(())
    }

    /// Floor point for normalized crop coordinates `u` (column direction,
    /// along `quad[0] -> quad[1]`) and `v` (row direction, along
    /// `quad[0] -> quad[3]`), both in `[0, 1]`.
    pub fn crop_point(&self, u: f64, v: f64) -> Point3<f64> {
        let q = &self.crop_quad;
        let top = [
            q[0][0] + (q[1][0] - q[0][0]) * u,
            q[0][1] + (q[1][1] - q[0][1]) * u,
        ];
        let bot = [
            q[3][0] + (q[2][0] - q[3][0]) * u,
            q[3][1] + (q[2][1] - q[3][1]) * u,
        ];
        Point3::new(top[0] + (bot[0] - top[0]) * v, top[1] + (bot[1] - top[1]) * v, 0.0)
    }

    /// Fractional rectified-image column of the corner for a `size`-wide
    /// output: the column axis crosses the corner's `y = 0` line here.
    /// Columns right of this belong to the area beyond the corner.
    pub fn corner_column(&self, size: usize) -> f64 {
        // Invert the bilinear map for the corner point with a few Newton
        // steps; the default quad is an axis-aligned rectangle but crop
        // quads are only required to be convex.
        let target = self.corner_position();
        let (mut u, mut v) = (0.5, 0.5);
        for _ in 0..12 {
            let p = self.crop_point(u, v);
            let du = 1e-6;
            let pu = self.crop_point(u + du, v);
            let pv = self.crop_point(u, v + du);
            let jux = (pu.x - p.x) / du;
            let juy = (pu.y - p.y) / du;
            let jvx = (pv.x - p.x) / du;
            let jvy = (pv.y - p.y) / du;
            let det = jux * jvy - juy * jvx;
            if det.abs() < 1e-14 {
                break;
            }
            let ex = target.x - p.x;
            let ey = target.y - p.y;
            u += (ex * jvy - ey * jvx) / det;
            v += (ey * jux - ex * juy) / det;
        }
        u * (size as f64 - 1.0)
    }
}

/// Hidden-object class. Base widths follow the three physical targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectClass {
    RectBox,
    Cube,
    Pyramid,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [ObjectClass::RectBox, ObjectClass::Cube, ObjectClass::Pyramid];

    /// Square base side length in meters.
    pub fn base_width(self) -> f64 {
        match self {
            ObjectClass::RectBox => 0.12,
            ObjectClass::Cube => 0.18,
            ObjectClass::Pyramid => 0.12,
        }
    }

    pub fn index(self) -> usize {
        match self {
            ObjectClass::RectBox => 0,
            ObjectClass::Cube => 1,
            ObjectClass::Pyramid => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::RectBox => "rect_box",
            ObjectClass::Cube => "cube",
            ObjectClass::Pyramid => "pyramid",
        }
    }

    pub fn default_height(self, defaults: &ObjectDefaults) -> f64 {
        match self {
            ObjectClass::RectBox => defaults.rect_box_height,
            ObjectClass::Cube => defaults.cube_height,
            ObjectClass::Pyramid => defaults.pyramid_height,
        }
    }
}

/// A hidden object standing on the occluded floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetObject {
    pub class: ObjectClass,
    /// Base center on the floor, meters.
    pub x: f64,
    pub y: f64,
    pub height: f64,
    /// Rotation about the vertical axis, radians.
    pub yaw: f64,
}

impl TargetObject {
    pub fn new(class: ObjectClass, x: f64, y: f64, height: f64, yaw: f64) -> Self {
        Self {
            class,
            x,
            y,
            height,
            yaw,
        }
    }

    pub fn with_defaults(class: ObjectClass, x: f64, y: f64, defaults: &ObjectDefaults) -> Self {
        Self::new(class, x, y, class.default_height(defaults), 0.0)
    }

    /// Rotated base corners on the floor, counterclockwise.
    pub fn base_corners(&self) -> [[f64; 2]; 4] {
        let h = self.class.base_width() / 2.0;
        let (s, c) = self.yaw.sin_cos();
        let mut corners = [[0.0; 2]; 4];
        for (i, (dx, dy)) in [(-h, -h), (h, -h), (h, h), (-h, h)].iter().enumerate() {
            corners[i] = [self.x + c * dx - s * dy, self.y + s * dx + c * dy];
        }
        corners
    }

    /// Check that the object center sits in the occluded corridor and the
    /// body stays clear of every wall. The corner plane at `x = 0` is
    /// open space for `y < 0`, so the body may cross it by up to 3 cm
    /// (which keeps it outside the default floor crop); walls proper are
    /// hard limits.
    pub fn validate_in(&self, scene: &SceneInstance) -> Result<(), SceneError> {
        if !scene.in_occluded_region(self.x, self.y) {
            return Err(SceneError::ObjectOutsideOccluded {
                x: self.x,
                y: self.y,
            });
        }
        let margin = 0.002;
        for [cx, cy] in self.base_corners() {
            if cx < -0.03 {
                return Err(SceneError::ObjectIntersectsWall(format!(
                    "corner ({cx:.3}, {cy:.3}) extends into the visible corridor"
                )));
            }
            if cy > -margin && cx > margin {
                return Err(SceneError::ObjectIntersectsWall(format!(
                    "corner ({cx:.3}, {cy:.3}) reaches the inner corridor wall"
                )));
            }
            if cx < margin && cy > -margin {
                return Err(SceneError::ObjectIntersectsWall(format!(
                    "corner ({cx:.3}, {cy:.3}) reaches the corner wall"
                )));
            }
            if cy < -scene.hallway.occluded_width + margin {
                return Err(SceneError::ObjectIntersectsWall(format!(
                    "corner ({cx:.3}, {cy:.3}) reaches the far wall"
                )));
            }
            if cx > scene.hallway.occluded_length - margin {
                return Err(SceneError::ObjectIntersectsWall(format!(
                    "corner ({cx:.3}, {cy:.3}) reaches the corridor end wall"
                )));
            }
        }
        if self.height >= scene.ceiling_height {
            return Err(SceneError::ObjectIntersectsWall(
                "object reaches the ceiling".into(),
            ));
        }
        Ok(())
    }
}

/// The 5x5 evaluation grid in the occluded corridor.
///
/// Row axis points away from the corner along the occluded corridor
/// (`+x`), column axis runs parallel to the corridor end wall (`-y`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Side length of the square grid, meters.
    pub extent: f64,
    /// Distance of the first row from the corner plane.
    pub offset: f64,
    /// Distance of the first column from the inner corridor wall.
    pub col_offset: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            rows: 5,
            cols: 5,
            extent: 0.30,
            offset: 0.10,
            col_offset: 0.12,
        }
    }
}

impl GridSpec {
    pub fn spacing(&self) -> f64 {
        self.extent / (self.rows as f64 - 1.0)
    }

    /// Center of grid point `(row, col)` in scene coordinates.
    pub fn position(&self, row: usize, col: usize) -> Result<(f64, f64), SceneError> {
        if row >= self.rows || col >= self.cols {
            return Err(SceneError::GridIndexOutOfRange {
                row,
                col,
                rows: self.rows,
                cols: self.cols,
            });
        }
        let s = self.spacing();
        Ok((
            self.offset + s * row as f64,
            -(self.col_offset + s * col as f64),
        ))
    }

    /// Distance of a grid row from the corner, measured along the row axis.
    pub fn row_distance(&self, row: usize) -> f64 {
        self.offset + self.spacing() * row as f64
    }
}
