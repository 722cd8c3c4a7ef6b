//! Geometric preprocessing: homography rectification of the observed floor
//! region, background subtraction, and per-image scaling to `[-1, 1]`.
//!
//! Pipeline order is fixed: rectify, then subtract, then scale.

use nalgebra::{DMatrix, Matrix3, Vector3};
use thiserror::Error;

use crate::image::{ImageGrid, Range};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("degenerate point configuration: {0}")]
    Degenerate(&'static str),
    #[error("homography solve failed: {0}")]
    SolveFailed(&'static str),
    #[error("homography is not invertible (|det| = {0:e})")]
    NotInvertible(f64),
    #[error("image dimensions {0}x{1} do not match reference {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("background stack needs at least 2 frames, got {0}")]
    StackTooSmall(usize),
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
}

/// A 3x3 projective transform, normalized so `h33 = 1` when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
        }
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, PreprocessError> {
        let mut m = m;
        let h33 = m[(2, 2)];
        if h33.abs() > 1e-12 {
            m /= h33;
        }
        let det = m.determinant();
        if det.abs() <= 1e-12 {
            return Err(PreprocessError::NotInvertible(det.abs()));
        }
        Ok(Self { m })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn inverse(&self) -> Result<Homography, PreprocessError> {
        let inv = self
            .m
            .try_inverse()
            .ok_or(PreprocessError::NotInvertible(0.0))?;
        Homography::from_matrix(inv)
    }

    /// Apply to a point `(x, y)` with homogeneous division.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let p = self.m * Vector3::new(x, y, 1.0);
        (p.x / p.z, p.y / p.z)
    }
}

fn collinear_triple(points: &[[f64; 2]; 4]) -> bool {
    let spread = points
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0f64, |acc, &v| acc.max(v.abs()))
        .max(1.0);
    for i in 0..4 {
        for j in (i + 1)..4 {
            for k in (j + 1)..4 {
                let (a, b, c) = (points[i], points[j], points[k]);
                let cross =
                    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
                if cross.abs() < 1e-9 * spread * spread {
                    return true;
                }
            }
        }
    }
    false
}

/// Isotropic normalization: centroid to origin, mean distance sqrt(2).
fn hartley_transform(points: &[[f64; 2]; 4]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean_dist = points
        .iter()
        .map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let s = if mean_dist > 1e-12 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Estimate the homography mapping each `src[i]` to `dst[i]` with the
/// normalized direct linear transform.
pub fn estimate_homography(
    src: &[[f64; 2]; 4],
    dst: &[[f64; 2]; 4],
) -> Result<Homography, PreprocessError> {
    if collinear_triple(src) {
        return Err(PreprocessError::Degenerate("three source points collinear"));
    }
    if collinear_triple(dst) {
        return Err(PreprocessError::Degenerate(
            "three destination points collinear",
        ));
    }

    let t_src = hartley_transform(src);
    let t_dst = hartley_transform(dst);
    let norm = |t: &Matrix3<f64>, p: [f64; 2]| {
        let v = t * Vector3::new(p[0], p[1], 1.0);
        [v.x / v.z, v.y / v.z]
    };

    let mut a = DMatrix::<f64>::zeros(8, 9);
    for i in 0..4 {
        let [x, y] = norm(&t_src, src[i]);
        let [u, v] = norm(&t_dst, dst[i]);
        let r0 = 2 * i;
        let r1 = 2 * i + 1;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v;
    }

    // Smallest right singular vector of A via the eigenvector of A^T A
    // with the smallest eigenvalue (a thin SVD of the 8x9 system would not
    // expose the null-space direction).
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let min_idx = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .ok_or(PreprocessError::SolveFailed("empty eigenvalues"))?;
    let h = eig.eigenvectors.column(min_idx);

    let h_norm = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or(PreprocessError::SolveFailed("normalization not invertible"))?;
    let hom = Homography::from_matrix(t_dst_inv * h_norm * t_src)?;

    // The four exact correspondences must reproduce to tight tolerance.
    for i in 0..4 {
        let (u, v) = hom.apply(src[i][0], src[i][1]);
        let scale = dst[i][0].abs().max(dst[i][1].abs()).max(1.0);
        let err = ((u - dst[i][0]).powi(2) + (v - dst[i][1]).powi(2)).sqrt();
        if err > 1e-9 * scale {
            return Err(PreprocessError::SolveFailed("residual above tolerance"));
        }
    }
    Ok(hom)
}

/// Inverse-warp `image` through `h` into a `out_size` square using
/// bilinear interpolation. Samples falling outside the source are 0.
///
/// `h` maps source pixel coordinates `(x = col, y = row)` to output
/// coordinates, i.e. the output at `(x, y)` reads the source at
/// `h^-1 (x, y)`.
pub fn rectify(
    image: &ImageGrid,
    h: &Homography,
    out_size: usize,
) -> Result<ImageGrid, PreprocessError> {
    let inv = h.inverse()?;
    let (w, ht, ch) = (image.width(), image.height(), image.channels());
    let mut out = ImageGrid::zeros(out_size, out_size, ch, image.range());
    for row in 0..out_size {
        for col in 0..out_size {
            let (sx, sy) = inv.apply(col as f64, row as f64);
            if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (ht - 1) as f64 {
                continue;
            }
            let ix = (sx.floor() as usize).min(w.saturating_sub(2));
            let iy = (sy.floor() as usize).min(ht.saturating_sub(2));
            let fx = (sx - ix as f64) as f32;
            let fy = (sy - iy as f64) as f32;
            for c in 0..ch {
                let v00 = image.get(c, iy, ix);
                let v01 = image.get(c, iy, (ix + 1).min(w - 1));
                let v10 = image.get(c, (iy + 1).min(ht - 1), ix);
                let v11 = image.get(c, (iy + 1).min(ht - 1), (ix + 1).min(w - 1));
                let top = v00 + (v01 - v00) * fx;
                let bot = v10 + (v11 - v10) * fx;
                out.set(c, row, col, top + (bot - top) * fy);
            }
        }
    }
    Ok(out)
}

/// Background reference: a known object-free frame, or a per-pixel
/// statistic of a frame stack.
#[derive(Debug, Clone)]
pub enum BackgroundModel {
    GroundTruth(ImageGrid),
    PixelMean(Vec<ImageGrid>),
    PixelMin(Vec<ImageGrid>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BackgroundMode {
    GroundTruth,
    PixelMean,
    PixelMin,
}

impl BackgroundModel {
    pub fn mode(&self) -> BackgroundMode {
        match self {
            BackgroundModel::GroundTruth(_) => BackgroundMode::GroundTruth,
            BackgroundModel::PixelMean(_) => BackgroundMode::PixelMean,
            BackgroundModel::PixelMin(_) => BackgroundMode::PixelMin,
        }
    }

    /// Collapse to the reference image subtracted from each frame.
    pub fn reference(&self) -> Result<ImageGrid, PreprocessError> {
        match self {
            BackgroundModel::GroundTruth(img) => Ok(img.clone()),
            BackgroundModel::PixelMean(stack) => {
                let first = check_stack(stack)?;
                let mut acc = vec![0.0f64; first.data().len()];
                for frame in stack {
                    check_dims(frame, first)?;
                    for (a, &v) in acc.iter_mut().zip(frame.data()) {
                        *a += v as f64;
                    }
                }
                let n = stack.len() as f64;
                let data = acc.iter().map(|&v| (v / n) as f32).collect();
                Ok(ImageGrid::new(
                    first.width(),
                    first.height(),
                    first.channels(),
                    first.range(),
                    data,
                )?)
            }
            BackgroundModel::PixelMin(stack) => {
                let first = check_stack(stack)?;
                let mut acc = first.data().to_vec();
                for frame in &stack[1..] {
                    check_dims(frame, first)?;
                    for (a, &v) in acc.iter_mut().zip(frame.data()) {
                        *a = a.min(v);
                    }
                }
                Ok(ImageGrid::new(
                    first.width(),
                    first.height(),
                    first.channels(),
                    first.range(),
                    acc,
                )?)
            }
        }
    }

    /// Rectify every frame of the model, producing a model that applies to
    /// rectified frames.
    pub fn rectified(
        &self,
        h: &Homography,
        out_size: usize,
    ) -> Result<BackgroundModel, PreprocessError> {
        let map = |frames: &Vec<ImageGrid>| -> Result<Vec<ImageGrid>, PreprocessError> {
            frames.iter().map(|f| rectify(f, h, out_size)).collect()
        };
        Ok(match self {
            BackgroundModel::GroundTruth(img) => {
                BackgroundModel::GroundTruth(rectify(img, h, out_size)?)
            }
            BackgroundModel::PixelMean(stack) => BackgroundModel::PixelMean(map(stack)?),
            BackgroundModel::PixelMin(stack) => BackgroundModel::PixelMin(map(stack)?),
        })
    }
}

fn check_stack(stack: &[ImageGrid]) -> Result<&ImageGrid, PreprocessError> {
    if stack.len() < 2 {
        return Err(PreprocessError::StackTooSmall(stack.len()));
    }
    Ok(&stack[0])
}

fn check_dims(a: &ImageGrid, b: &ImageGrid) -> Result<(), PreprocessError> {
    if a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels() {
        return Err(PreprocessError::DimensionMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    Ok(())
}

/// `frame - reference`. The result is signed and carries no range tag
/// guarantees beyond finiteness, so it is returned as raw data plus
/// dimensions packed in an [`ImageGrid`] with [`Range::Signed`].
pub fn subtract_background(
    frame: &ImageGrid,
    bg: &BackgroundModel,
) -> Result<ImageGrid, PreprocessError> {
    let reference = bg.reference()?;
    check_dims(frame, &reference)?;
    let data = frame
        .data()
        .iter()
        .zip(reference.data())
        .map(|(&f, &r)| f - r)
        .collect();
    Ok(ImageGrid::new(
        frame.width(),
        frame.height(),
        frame.channels(),
        Range::Signed,
        data,
    )?)
}

/// Affine map sending the minimum to -1 and the maximum to +1. A constant
/// image maps to all zeros.
pub fn scale_unit(image: &ImageGrid) -> ImageGrid {
    let min = image.min_value();
    let max = image.max_value();
    let span = max - min;
    let data: Vec<f32> = if span <= 0.0 {
        vec![0.0; image.data().len()]
    } else {
        image
            .data()
            .iter()
            .map(|&v| 2.0 * ((v - min) / span) - 1.0)
            .collect()
    };
    ImageGrid::new(
        image.width(),
        image.height(),
        image.channels(),
        Range::Unit,
        data,
    )
    .expect("scaled values are in [-1, 1]")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{ImageGrid, Range};

    const UNIT_SQUARE: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];

    #[test]
    fn unit_square_to_itself_is_identity() {
        let h = estimate_homography(&UNIT_SQUARE, &UNIT_SQUARE).unwrap();
        let m = h.matrix();
        for r in 0..3 {
            for c in 0..3 {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert!((m[(r, c)] - expect).abs() < 1e-9, "H[{r}{c}] = {}", m[(r, c)]);
            }
        }
    }

    #[test]
    fn doubling_square_is_pure_scale() {
        let dst = [[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]];
        let h = estimate_homography(&UNIT_SQUARE, &dst).unwrap();
        let m = h.matrix();
        assert!((m[(0, 0)] - 2.0).abs() < 1e-9);
        assert!((m[(1, 1)] - 2.0).abs() < 1e-9);
        assert!((m[(2, 2)] - 1.0).abs() < 1e-12);
        assert!(m[(0, 1)].abs() < 1e-9 && m[(1, 0)].abs() < 1e-9);
    }

    #[test]
    fn random_quads_reproject_exactly() {
        use rand::Rng;
        let mut rng = crate::rng::stream(11, crate::rng::Domain::Test, 0);
        for _ in 0..50 {
            let mut quad = || {
                let mut q = [[0.0; 2]; 4];
                loop {
                    for p in q.iter_mut() {
                        p[0] = rng.gen_range(-10.0..10.0);
                        p[1] = rng.gen_range(-10.0..10.0);
                    }
                    if !collinear_triple(&q) {
                        return q;
                    }
                }
            };
            let src = quad();
            let dst = quad();
            let h = estimate_homography(&src, &dst).unwrap();
            for i in 0..4 {
                let (u, v) = h.apply(src[i][0], src[i][1]);
                let err = ((u - dst[i][0]).powi(2) + (v - dst[i][1]).powi(2)).sqrt();
                assert!(err < 1e-8, "reprojection error {err}");
            }
        }
    }

    #[test]
    fn collinear_points_are_rejected() {
        let src = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [0.0, 1.0]];
        assert!(matches!(
            estimate_homography(&src, &UNIT_SQUARE),
            Err(PreprocessError::Degenerate(_))
        ));
    }

    fn gradient_image(n: usize) -> ImageGrid {
        let data = (0..n * n)
            .map(|i| {
                let r = (i / n) as f32;
                let c = (i % n) as f32;
                (r * 0.05 + c * 0.11).sin() * 0.5 + 1.0
            })
            .collect();
        ImageGrid::new(n, n, 1, Range::Linear, data).unwrap()
    }

    #[test]
    fn identity_rectify_copies_the_image() {
        let img = gradient_image(64);
        let out = rectify(&img, &Homography::identity(), 64).unwrap();
        assert_eq!(img.data(), out.data());
    }

    #[test]
    fn downscale_of_constant_image_is_constant() {
        let img = ImageGrid::new(128, 128, 1, Range::Linear, vec![3.5; 128 * 128]).unwrap();
        let h = Homography::from_matrix(Matrix3::new(
            0.5, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 1.0,
        ))
        .unwrap();
        let out = rectify(&img, &h, 64).unwrap();
        for &v in out.data() {
            assert!((v - 3.5).abs() < 1e-6);
        }
    }

    #[test]
    fn warped_bright_square_lands_where_the_corners_say() {
        // A bright block, warped by a mild projective map; its centroid in
        // the output must sit within half a pixel of the mapped centroid.
        let n = 96;
        let mut img = ImageGrid::zeros(n, n, 1, Range::Linear);
        for r in 30..41 {
            for c in 20..31 {
                img.set(0, r, c, 1.0);
            }
        }
        let m = Matrix3::new(1.1, 0.05, 4.0, -0.03, 0.95, 6.0, 1e-4, -5e-5, 1.0);
        let h = Homography::from_matrix(m).unwrap();
        let out = rectify(&img, &h, n).unwrap();

        let (mut sx, mut sy, mut mass) = (0.0f64, 0.0f64, 0.0f64);
        for r in 0..n {
            for c in 0..n {
                let v = out.get(0, r, c) as f64;
                sx += v * c as f64;
                sy += v * r as f64;
                mass += v;
            }
        }
        let (cx, cy) = (sx / mass, sy / mass);
        let (ex, ey) = h.apply(25.0, 35.0);
        assert!(
            (cx - ex).abs() < 0.5 && (cy - ey).abs() < 0.5,
            "centroid ({cx:.2}, {cy:.2}) vs expected ({ex:.2}, {ey:.2})"
        );
    }

    #[test]
    fn rectify_round_trip_recovers_the_interior() {
        let img = gradient_image(96);
        let m = Matrix3::new(1.05, 0.08, 3.0, -0.04, 0.98, 2.0, 2e-4, 1e-4, 1.0);
        let h = Homography::from_matrix(m).unwrap();
        let there = rectify(&img, &h, 96).unwrap();
        let back = rectify(&there, &h.inverse().unwrap(), 96).unwrap();

        let mut sum = 0.0f64;
        let mut count = 0usize;
        for r in 0..96 {
            for c in 0..96 {
                // Interior: the forward map must keep a 2 px safety margin.
                let (fx, fy) = h.apply(c as f64, r as f64);
                if fx < 2.0 || fy < 2.0 || fx > 93.0 || fy > 93.0 {
                    continue;
                }
                sum += (back.get(0, r, c) - img.get(0, r, c)).abs() as f64;
                count += 1;
            }
        }
        assert!(count > 1000);
        let mad = sum / count as f64;
        assert!(mad < 0.02, "round-trip mean abs diff {mad}");
    }

    #[test]
    fn subtracting_own_background_gives_zeros() {
        let img = gradient_image(16);
        let out = subtract_background(&img, &BackgroundModel::GroundTruth(img.clone())).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mean_and_min_references_match_definitions() {
        let a = ImageGrid::new(2, 1, 1, Range::Linear, vec![2.0, 2.0]).unwrap();
        let b = ImageGrid::new(2, 1, 1, Range::Linear, vec![4.0, 4.0]).unwrap();
        let mean = BackgroundModel::PixelMean(vec![a.clone(), b.clone()])
            .reference()
            .unwrap();
        assert_eq!(mean.data(), &[3.0, 3.0]);
        let min = BackgroundModel::PixelMin(vec![a, b]).reference().unwrap();
        assert_eq!(min.data(), &[2.0, 2.0]);
    }

    #[test]
    fn background_errors_on_small_stack_and_dim_mismatch() {
        let a = ImageGrid::new(2, 1, 1, Range::Linear, vec![2.0, 2.0]).unwrap();
        assert!(matches!(
            BackgroundModel::PixelMean(vec![a.clone()]).reference(),
            Err(PreprocessError::StackTooSmall(1))
        ));
        let small = ImageGrid::new(1, 1, 1, Range::Linear, vec![1.0]).unwrap();
        assert!(subtract_background(&small, &BackgroundModel::GroundTruth(a)).is_err());
    }

    #[test]
    fn subtraction_is_linear_in_the_frame() {
        let bg = BackgroundModel::GroundTruth(gradient_image(8));
        let f1 = gradient_image(8);
        let mut f2 = f1.clone();
        for v in f2.data_mut() {
            *v *= 2.0;
        }
        let s1 = subtract_background(&f1, &bg).unwrap();
        let s2 = subtract_background(&f2, &bg).unwrap();
        let reference = bg.reference().unwrap();
        for i in 0..s1.data().len() {
            let lhs = s2.data()[i];
            let rhs = 2.0 * s1.data()[i] + reference.data()[i];
            assert!((lhs - rhs).abs() < 1e-5);
        }
    }

    #[test]
    fn scale_unit_hits_the_documented_examples() {
        let img = ImageGrid::new(3, 1, 1, Range::Linear, vec![0.0, 5.0, 10.0]).unwrap();
        let out = scale_unit(&img);
        assert_eq!(out.data(), &[-1.0, 0.0, 1.0]);
        assert_eq!(out.range(), Range::Unit);

        let flat = ImageGrid::new(3, 1, 1, Range::Linear, vec![7.0; 3]).unwrap();
        assert!(scale_unit(&flat).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scale_unit_is_invariant_to_positive_gain() {
        use rand::Rng;
        let mut rng = crate::rng::stream(5, crate::rng::Domain::Test, 1);
        for _ in 0..20 {
            let data: Vec<f32> = (0..64).map(|_| rng.gen_range(0.0..10.0)).collect();
            let img = ImageGrid::new(8, 8, 1, Range::Linear, data).unwrap();
            let k: f32 = rng.gen_range(0.1..50.0);
            let mut scaled = img.clone();
            for v in scaled.data_mut() {
                *v *= k;
            }
            let a = scale_unit(&img);
            let b = scale_unit(&scaled);
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn scale_unit_output_spans_the_full_range() {
        let img = gradient_image(16);
        let out = scale_unit(&img);
        assert_eq!(out.min_value(), -1.0);
        assert_eq!(out.max_value(), 1.0);
    }
}
