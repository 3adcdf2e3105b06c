//! Label-preserving image mutations and the metamorphic closeness constraint.
//!
//! Pixel-level transforms (auto-contrast, jitter, blur) are checked against the
//! lineage's reference image: a candidate is valid when few components changed
//! (`L0 <= alpha * size`) or none changed much (`Linf <= beta`). Affine
//! transforms (crop, flip, rotation, perspective) are bounded by their
//! parameter ranges instead, may occur at most once per lineage, and reset the
//! reference to their output.
//!
//! Geometric transforms sample with bilinear interpolation and reflect padding.
//! Rotation angles are counter-clockwise as displayed (row 0 at the top), about
//! the image center.

use nalgebra::{SMatrix, SVector};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransformKind {
    RandomCrop,
    AutoContrast,
    ColorJitter,
    HorizontalFlip,
    Rotation,
    GaussianBlur,
    RandomPerspective,
}

impl TransformKind {
    pub const ALL: [TransformKind; 7] = [
        TransformKind::RandomCrop,
        TransformKind::AutoContrast,
        TransformKind::ColorJitter,
        TransformKind::HorizontalFlip,
        TransformKind::Rotation,
        TransformKind::GaussianBlur,
        TransformKind::RandomPerspective,
    ];

    pub fn is_affine(self) -> bool {
        matches!(
            self,
            TransformKind::RandomCrop
                | TransformKind::HorizontalFlip
                | TransformKind::Rotation
                | TransformKind::RandomPerspective
        )
    }
}

/// A transform together with its concrete parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params")]
pub enum Transform {
    /// Crop box in pixels, resized back to the full shape.
    RandomCrop {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    AutoContrast,
    /// Multiplicative brightness, then contrast about the image mean.
    ColorJitter {
        brightness: f64,
        contrast: f64,
    },
    HorizontalFlip,
    Rotation {
        degrees: f64,
    },
    GaussianBlur {
        sigma: f64,
    },
    /// Source-corner displacements `[dx, dy]` in pixels for the top-left,
    /// top-right, bottom-right and bottom-left corners.
    RandomPerspective {
        displacements: [[f64; 2]; 4],
    },
}

impl Transform {
    pub fn kind(&self) -> TransformKind {
        match self {
            Transform::RandomCrop { .. } => TransformKind::RandomCrop,
            Transform::AutoContrast => TransformKind::AutoContrast,
            Transform::ColorJitter { .. } => TransformKind::ColorJitter,
            Transform::HorizontalFlip => TransformKind::HorizontalFlip,
            Transform::Rotation { .. } => TransformKind::Rotation,
            Transform::GaussianBlur { .. } => TransformKind::GaussianBlur,
            Transform::RandomPerspective { .. } => TransformKind::RandomPerspective,
        }
    }

    pub fn is_affine(&self) -> bool {
        self.kind().is_affine()
    }

    /// Checks parameters against the configured ranges for an image of `shape`.
    pub fn check_range(&self, shape: Shape, ranges: &TransformRanges) -> Result<()> {
        let bad = |what: String| Err(Error::Config(what));
        match *self {
            Transform::RandomCrop {
                top,
                left,
                height,
                width,
            } => {
                if height == 0
                    || width == 0
                    || top + height > shape.height
                    || left + width > shape.width
                {
                    return bad(format!(
                        "crop box {top},{left} {height}x{width} outside {shape}"
                    ));
                }
                let area = (height * width) as f64 / (shape.height * shape.width) as f64;
                if area + 1e-12 < ranges.crop_min_area {
                    return bad(format!(
                        "crop keeps {area:.3} of the area, minimum {}",
                        ranges.crop_min_area
                    ));
                }
            }
            Transform::ColorJitter {
                brightness,
                contrast,
            } => {
                if !in_range(brightness, ranges.brightness) || !in_range(contrast, ranges.contrast)
                {
                    return bad(format!(
                        "jitter factors ({brightness}, {contrast}) out of range"
                    ));
                }
            }
            Transform::Rotation { degrees } => {
                if !degrees.is_finite() || degrees.abs() > ranges.rotation_degrees {
                    return bad(format!(
                        "rotation {degrees} exceeds +/-{}",
                        ranges.rotation_degrees
                    ));
                }
            }
            Transform::GaussianBlur { sigma } => {
                if !in_range(sigma, ranges.blur_sigma) {
                    return bad(format!("blur sigma {sigma} out of range"));
                }
            }
            Transform::RandomPerspective { displacements } => {
                let max_x = ranges.perspective_scale * shape.width as f64 / 2.0;
                let max_y = ranges.perspective_scale * shape.height as f64 / 2.0;
                if displacements
                    .iter()
                    .any(|d| !(d[0].abs() <= max_x + 1e-12 && d[1].abs() <= max_y + 1e-12))
                {
                    return bad("perspective displacement out of range".into());
                }
            }
            Transform::AutoContrast | Transform::HorizontalFlip => {}
        }
        Ok(())
    }
}

fn in_range(v: f64, (lo, hi): (f64, f64)) -> bool {
    v.is_finite() && v >= lo && v <= hi
}

/// Parameter ranges the sampler draws from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformRanges {
    /// Maximum absolute rotation in degrees.
    pub rotation_degrees: f64,
    /// Minimum fraction of the image area a crop keeps.
    pub crop_min_area: f64,
    pub brightness: (f64, f64),
    pub contrast: (f64, f64),
    pub blur_sigma: (f64, f64),
    /// Corner displacement bound as a fraction of the half-width / half-height.
    pub perspective_scale: f64,
}

impl Default for TransformRanges {
    fn default() -> Self {
        TransformRanges {
            rotation_degrees: 15.0,
            crop_min_area: 0.8,
            brightness: (0.8, 1.25),
            contrast: (0.8, 1.25),
            blur_sigma: (0.5, 1.5),
            perspective_scale: 0.2,
        }
    }
}

impl TransformRanges {
    pub fn validate(&self) -> Result<()> {
        let ok_pair =
            |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi;
        if !(self.rotation_degrees.is_finite() && (0.0..=180.0).contains(&self.rotation_degrees)) {
            return Err(Error::Config(
                "rotation_degrees must lie in [0, 180]".into(),
            ));
        }
        if !(self.crop_min_area > 0.0 && self.crop_min_area <= 1.0) {
            return Err(Error::Config("crop_min_area must lie in (0, 1]".into()));
        }
        if !ok_pair(self.brightness) || !ok_pair(self.contrast) || !ok_pair(self.blur_sigma) {
            return Err(Error::Config(
                "brightness, contrast and blur_sigma need 0 < lo <= hi".into(),
            ));
        }
        if !(self.perspective_scale >= 0.0 && self.perspective_scale < 1.0) {
            return Err(Error::Config("perspective_scale must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One step of a lineage, enough to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationRecord {
    #[serde(flatten)]
    pub transform: Transform,
    pub is_affine: bool,
    pub parent_id: u64,
    /// Raw RNG words consumed while sampling this step.
    pub rng_draws: u64,
}

/// Bookkeeping carried along a lineage.
#[derive(Debug, Clone, PartialEq)]
pub struct LineageState {
    /// Image the pixel-level constraint is measured against.
    pub reference: ImageTensor,
    pub affine_used: bool,
    pub depth: u32,
}

impl LineageState {
    pub fn root(seed: &ImageTensor) -> Self {
        LineageState {
            reference: seed.clone(),
            affine_used: false,
            depth: 0,
        }
    }

    /// State for an accepted child produced by `record`.
    pub fn child(&self, candidate: &ImageTensor, record: &MutationRecord) -> Self {
        if record.is_affine {
            LineageState {
                reference: candidate.clone(),
                affine_used: true,
                depth: self.depth + 1,
            }
        } else {
            LineageState {
                reference: self.reference.clone(),
                affine_used: self.affine_used,
                depth: self.depth + 1,
            }
        }
    }
}

/// Metamorphic closeness check on the `[0, 1]` pixel scale.
pub fn is_valid(
    reference: &ImageTensor,
    candidate: &ImageTensor,
    alpha: f64,
    beta: f64,
) -> Result<bool> {
    if reference.shape() != candidate.shape() {
        return Err(Error::Input(format!(
            "shape mismatch: reference {} vs candidate {}",
            reference.shape(),
            candidate.shape()
        )));
    }
    check_alpha_beta(alpha, beta)?;
    let mut changed = 0usize;
    let mut max_delta = 0.0f64;
    for (&a, &b) in reference.pixels().iter().zip(candidate.pixels()) {
        if a != b {
            changed += 1;
            max_delta = max_delta.max((f64::from(a) - f64::from(b)).abs());
        }
    }
    Ok(changed as f64 <= alpha * reference.len() as f64 || max_delta <= beta)
}

pub(crate) fn check_alpha_beta(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) || !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Config(format!(
            "alpha ({alpha}) and beta ({beta}) must lie in (0, 1]"
        )));
    }
    Ok(())
}

/// Applies a transform; the output keeps the input shape and is clamped to `[0, 1]`.
pub fn apply_transform(image: &ImageTensor, t: &Transform) -> Result<ImageTensor> {
    let shape = image.shape();
    match *t {
        Transform::HorizontalFlip => {
            let mut out = Vec::with_capacity(image.len());
            for r in 0..shape.height {
                for c in (0..shape.width).rev() {
                    for ch in 0..shape.channels {
                        out.push(image.get(r, c, ch));
                    }
                }
            }
            Ok(ImageTensor::from_unclamped(shape, out))
        }
        Transform::Rotation { degrees } => {
            if !degrees.is_finite() {
                return Err(Error::Config(format!(
                    "rotation angle {degrees} is not finite"
                )));
            }
            let (sin, cos) = degrees.to_radians().sin_cos();
            let cy = (shape.height as f64 - 1.0) / 2.0;
            let cx = (shape.width as f64 - 1.0) / 2.0;
            Ok(remap(image, |r, c| {
                let (x, y) = (c - cx, r - cy);
                (x * sin + y * cos + cy, x * cos - y * sin + cx)
            }))
        }
        Transform::RandomCrop {
            top,
            left,
            height,
            width,
        } => {
            if height == 0
                || width == 0
                || top + height > shape.height
                || left + width > shape.width
            {
                return Err(Error::Config(format!("crop box outside {shape}")));
            }
            let sy = height as f64 / shape.height as f64;
            let sx = width as f64 / shape.width as f64;
            Ok(remap(image, |r, c| {
                (
                    top as f64 + (r + 0.5) * sy - 0.5,
                    left as f64 + (c + 0.5) * sx - 0.5,
                )
            }))
        }
        Transform::RandomPerspective { displacements } => {
            if displacements.iter().flatten().any(|d| !d.is_finite()) {
                return Err(Error::Config(
                    "perspective displacement is not finite".into(),
                ));
            }
            let h = perspective_homography(shape, &displacements)?;
            Ok(remap(image, |r, c| {
                let w = h[(2, 0)] * c + h[(2, 1)] * r + h[(2, 2)];
                let x = (h[(0, 0)] * c + h[(0, 1)] * r + h[(0, 2)]) / w;
                let y = (h[(1, 0)] * c + h[(1, 1)] * r + h[(1, 2)]) / w;
                (y, x)
            }))
        }
        Transform::AutoContrast => {
            let mut out = image.pixels().to_vec();
            for ch in 0..shape.channels {
                let vals = out.iter().skip(ch).step_by(shape.channels);
                let (lo, hi) = vals.fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
                if hi > lo {
                    let scale = 1.0 / (hi - lo);
                    for v in out.iter_mut().skip(ch).step_by(shape.channels) {
                        *v = (*v - lo) * scale;
                    }
                }
            }
            Ok(ImageTensor::from_unclamped(shape, out))
        }
        Transform::ColorJitter {
            brightness,
            contrast,
        } => {
            if !(brightness.is_finite()
                && brightness > 0.0
                && contrast.is_finite()
                && contrast > 0.0)
            {
                return Err(Error::Config("jitter factors must be positive".into()));
            }
            let bright: Vec<f32> = image
                .pixels()
                .iter()
                .map(|&p| (f64::from(p) * brightness).clamp(0.0, 1.0) as f32)
                .collect();
            let mean = bright.iter().map(|&p| f64::from(p)).sum::<f64>() / bright.len() as f64;
            let out = bright
                .iter()
                .map(|&p| (mean + contrast * (f64::from(p) - mean)) as f32)
                .collect();
            Ok(ImageTensor::from_unclamped(shape, out))
        }
        Transform::GaussianBlur { sigma } => {
            if !(sigma.is_finite() && sigma > 0.0) {
                return Err(Error::Config(format!(
                    "blur sigma {sigma} must be positive"
                )));
            }
            Ok(gaussian_blur(image, sigma))
        }
    }
}

/// Reflect an integer index into `[0, n)` ("reflect" mode: edge not repeated).
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

fn reflect_coord(v: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let max = (n - 1) as f64;
    let period = 2.0 * max;
    let m = v.rem_euclid(period);
    if m <= max {
        m
    } else {
        period - m
    }
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

fn bilinear(image: &ImageTensor, y: f64, x: f64, ch: usize) -> f32 {
    let y = reflect_coord(snap(y), image.height());
    let x = reflect_coord(snap(x), image.width());
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as usize, x0 as usize);
    let y1 = (y0 + 1).min(image.height() - 1);
    let x1 = (x0 + 1).min(image.width() - 1);
    let p = |r, c| f64::from(image.get(r, c, ch));
    let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
    let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
    (top * (1.0 - fy) + bottom * fy) as f32
}

/// Inverse-maps each output pixel `(row, col)` to a source coordinate `(y, x)`.
fn remap(image: &ImageTensor, source: impl Fn(f64, f64) -> (f64, f64)) -> ImageTensor {
    let shape = image.shape();
    let mut out = Vec::with_capacity(image.len());
    for r in 0..shape.height {
        for c in 0..shape.width {
            let (y, x) = source(r as f64, c as f64);
            for ch in 0..shape.channels {
                out.push(bilinear(image, y, x, ch));
            }
        }
    }
    ImageTensor::from_unclamped(shape, out)
}

/// Homography mapping output corners onto the displaced source corners.
fn perspective_homography(
    shape: Shape,
    displacements: &[[f64; 2]; 4],
) -> Result<SMatrix<f64, 3, 3>> {
    let (w, h) = ((shape.width - 1) as f64, (shape.height - 1) as f64);
    let dst = [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]];
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let [x, y] = dst[i];
        let [u, v] = [x + displacements[i][0], y + displacements[i][1]];
        a.set_row(
            2 * i,
            &nalgebra::RowSVector::<f64, 8>::from_row_slice(&[
                x,
                y,
                1.0,
                0.0,
                0.0,
                0.0,
                -u * x,
                -u * y,
            ]),
        );
        a.set_row(
            2 * i + 1,
            &nalgebra::RowSVector::<f64, 8>::from_row_slice(&[
                0.0,
                0.0,
                0.0,
                x,
                y,
                1.0,
                -v * x,
                -v * y,
            ]),
        );
        b[2 * i] = u;
        b[2 * i + 1] = v;
    }
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Config("degenerate perspective corners".into()))?;
    Ok(SMatrix::<f64, 3, 3>::new(
        sol[0], sol[1], sol[2], sol[3], sol[4], sol[5], sol[6], sol[7], 1.0,
    ))
}

fn gaussian_blur(image: &ImageTensor, sigma: f64) -> ImageTensor {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let shape = image.shape();
    let (h, w, ch) = (shape.height, shape.width, shape.channels);
    let src: Vec<f64> = image.pixels().iter().map(|&p| f64::from(p)).collect();
    let idx = |r: usize, c: usize, k: usize| (r * w + c) * ch + k;

    let mut horiz = vec![0.0; src.len()];
    for r in 0..h {
        for c in 0..w {
            for k in 0..ch {
                horiz[idx(r, c, k)] = kernel
                    .iter()
                    .enumerate()
                    .map(|(j, wt)| {
                        wt * src[idx(r, reflect_index(c as isize + j as isize - radius, w), k)]
                    })
                    .sum();
            }
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for r in 0..h {
        for c in 0..w {
            for k in 0..ch {
                out[idx(r, c, k)] = kernel
                    .iter()
                    .enumerate()
                    .map(|(j, wt)| {
                        wt * horiz[idx(reflect_index(r as isize + j as isize - radius, h), c, k)]
                    })
                    .sum::<f64>() as f32;
            }
        }
    }
    ImageTensor::from_unclamped(shape, out)
}

/// Counts the 32-bit words drawn through it.
struct CountingRng<'a, R: RngCore + ?Sized> {
    inner: &'a mut R,
    words: u64,
}

impl<R: RngCore + ?Sized> RngCore for CountingRng<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.words += 1;
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.words += 2;
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.words += dest.len().div_ceil(4) as u64;
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

/// Samples transforms from configured ranges under the one-affine rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Mutator {
    pub ranges: TransformRanges,
    /// False for orientation-sensitive data (digits, house numbers).
    pub allow_hflip: bool,
}

impl Mutator {
    pub fn new(ranges: TransformRanges, allow_hflip: bool) -> Result<Self> {
        ranges.validate()?;
        Ok(Mutator {
            ranges,
            allow_hflip,
        })
    }

    /// Kinds that may be drawn next on a lineage; never empty.
    pub fn admissible(&self, affine_used: bool) -> Vec<TransformKind> {
        TransformKind::ALL
            .into_iter()
            .filter(|k| !(affine_used && k.is_affine()))
            .filter(|k| self.allow_hflip || *k != TransformKind::HorizontalFlip)
            .collect()
    }

    pub fn sample(&self, kind: TransformKind, shape: Shape, rng: &mut dyn RngCore) -> Transform {
        let r = &self.ranges;
        let uniform = |rng: &mut dyn RngCore, (lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                rng.gen_range(lo..=hi)
            }
        };
        match kind {
            TransformKind::RandomCrop => {
                let area = uniform(rng, (r.crop_min_area, 1.0));
                let side = area.sqrt();
                let height = ((shape.height as f64 * side).ceil() as usize).clamp(1, shape.height);
                let width = ((shape.width as f64 * side).ceil() as usize).clamp(1, shape.width);
                let top = rng.gen_range(0..=shape.height - height);
                let left = rng.gen_range(0..=shape.width - width);
                Transform::RandomCrop {
                    top,
                    left,
                    height,
                    width,
                }
            }
            TransformKind::AutoContrast => Transform::AutoContrast,
            TransformKind::ColorJitter => Transform::ColorJitter {
                brightness: uniform(rng, r.brightness),
                contrast: uniform(rng, r.contrast),
            },
            TransformKind::HorizontalFlip => Transform::HorizontalFlip,
            TransformKind::Rotation => Transform::Rotation {
                degrees: uniform(rng, (-r.rotation_degrees, r.rotation_degrees)),
            },
            TransformKind::GaussianBlur => Transform::GaussianBlur {
                sigma: uniform(rng, r.blur_sigma),
            },
            TransformKind::RandomPerspective => {
                let mx = r.perspective_scale * shape.width as f64 / 2.0;
                let my = r.perspective_scale * shape.height as f64 / 2.0;
                let mut displacements = [[0.0; 2]; 4];
                for d in &mut displacements {
                    *d = [uniform(rng, (-mx, mx)), uniform(rng, (-my, my))];
                }
                Transform::RandomPerspective { displacements }
            }
        }
    }

    /// Draws an admissible transform uniformly, samples its parameters and
    /// applies it. The candidate is quantized to 8 bits.
    pub fn mutate(
        &self,
        image: &ImageTensor,
        parent_id: u64,
        lineage: &LineageState,
        rng: &mut (impl Rng + ?Sized),
    ) -> Result<(ImageTensor, MutationRecord)> {
        let mut counting = CountingRng {
            inner: rng,
            words: 0,
        };
        let kinds = self.admissible(lineage.affine_used);
        let kind = kinds[counting.gen_range(0..kinds.len())];
        let transform = self.sample(kind, image.shape(), &mut counting);
        let rng_draws = counting.words;
        let candidate = apply_transform(image, &transform)?.quantized();
        Ok((
            candidate,
            MutationRecord {
                is_affine: transform.is_affine(),
                transform,
                parent_id,
                rng_draws,
            },
        ))
    }

    /// Regenerates the image a record produced from its parent.
    pub fn replay(&self, parent: &ImageTensor, record: &MutationRecord) -> Result<ImageTensor> {
        record.transform.check_range(parent.shape(), &self.ranges)?;
        Ok(apply_transform(parent, &record.transform)?.quantized())
    }
}

/// Closeness gate for a freshly mutated candidate on `lineage`.
pub fn passes_constraint(
    lineage: &LineageState,
    candidate: &ImageTensor,
    record: &MutationRecord,
    alpha: f64,
    beta: f64,
) -> Result<bool> {
    if record.is_affine {
        check_alpha_beta(alpha, beta)?;
        Ok(!lineage.affine_used)
    } else {
        is_valid(&lineage.reference, candidate, alpha, beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(shape: Shape) -> ImageTensor {
        let n = shape.len();
        ImageTensor::new(shape, (0..n).map(|i| i as f32 / (n - 1) as f32).collect()).unwrap()
    }

    #[test]
    fn hflip_is_an_involution() {
        let img = ramp(Shape::new(4, 5, 3));
        let once = apply_transform(&img, &Transform::HorizontalFlip).unwrap();
        assert_ne!(once, img);
        assert_eq!(
            apply_transform(&once, &Transform::HorizontalFlip).unwrap(),
            img
        );
    }

    #[test]
    fn zero_rotation_is_identity() {
        let img = ramp(Shape::new(7, 6, 2));
        assert_eq!(
            apply_transform(&img, &Transform::Rotation { degrees: 0.0 }).unwrap(),
            img
        );
    }

    #[test]
    fn quarter_turn_moves_top_left_to_bottom_left() {
        // Counter-clockwise as displayed: (row 0, col 0) -> (row 2, col 0).
        let mut px = vec![0.0; 9];
        px[0] = 1.0;
        let img = ImageTensor::new(Shape::new(3, 3, 1), px).unwrap();
        let rot = apply_transform(&img, &Transform::Rotation { degrees: 90.0 }).unwrap();
        let mut expected = [0.0; 9];
        expected[6] = 1.0;
        assert_eq!(rot.pixels(), &expected[..]);
        let back = apply_transform(&rot, &Transform::Rotation { degrees: -90.0 }).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn every_transform_preserves_shape_and_range() {
        let img = ramp(Shape::new(9, 11, 3));
        let m = Mutator::new(TransformRanges::default(), true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in TransformKind::ALL {
            for _ in 0..5 {
                let t = m.sample(kind, img.shape(), &mut rng);
                t.check_range(img.shape(), &m.ranges).unwrap();
                let out = apply_transform(&img, &t).unwrap();
                assert_eq!(out.shape(), img.shape());
                assert!(out.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
            }
        }
    }

    #[test]
    fn full_crop_and_unit_jitter_are_identity() {
        let img = ramp(Shape::new(5, 5, 1));
        let crop = Transform::RandomCrop {
            top: 0,
            left: 0,
            height: 5,
            width: 5,
        };
        assert_eq!(apply_transform(&img, &crop).unwrap(), img);
        let jitter = Transform::ColorJitter {
            brightness: 1.0,
            contrast: 1.0,
        };
        let out = apply_transform(&img, &jitter).unwrap();
        for (a, b) in out.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() < 1e-6);
        }
        let persp = Transform::RandomPerspective {
            displacements: [[0.0; 2]; 4],
        };
        let out = apply_transform(&img, &persp).unwrap();
        for (a, b) in out.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn blur_preserves_constant_images() {
        let img = ImageTensor::new(Shape::new(6, 6, 1), vec![0.4; 36]).unwrap();
        let out = apply_transform(&img, &Transform::GaussianBlur { sigma: 1.2 }).unwrap();
        for p in out.pixels() {
            assert!((p - 0.4).abs() < 1e-6);
        }
    }

    #[test]
    fn autocontrast_stretches_to_full_range() {
        let img = ImageTensor::new(Shape::new(1, 3, 1), vec![0.2, 0.4, 0.6]).unwrap();
        let out = apply_transform(&img, &Transform::AutoContrast).unwrap();
        assert_eq!(out.pixels()[0], 0.0);
        assert_eq!(out.pixels()[2], 1.0);
        let flat = ImageTensor::new(Shape::new(1, 2, 1), vec![0.3, 0.3]).unwrap();
        assert_eq!(
            apply_transform(&flat, &Transform::AutoContrast).unwrap(),
            flat
        );
    }

    #[test]
    fn bad_params_are_config_errors() {
        let img = ramp(Shape::new(4, 4, 1));
        for t in [
            Transform::GaussianBlur { sigma: 0.0 },
            Transform::Rotation { degrees: f64::NAN },
            Transform::ColorJitter {
                brightness: -1.0,
                contrast: 1.0,
            },
            Transform::RandomCrop {
                top: 2,
                left: 0,
                height: 3,
                width: 4,
            },
        ] {
            assert!(
                matches!(apply_transform(&img, &t), Err(Error::Config(_))),
                "{t:?}"
            );
        }
        let ranges = TransformRanges::default();
        assert!(Transform::Rotation { degrees: 30.0 }
            .check_range(img.shape(), &ranges)
            .is_err());
        assert!(Transform::RandomCrop {
            top: 0,
            left: 0,
            height: 2,
            width: 2
        }
        .check_range(img.shape(), &ranges)
        .is_err());
    }

    #[test]
    fn validity_examples() {
        let shape = Shape::new(28, 28, 1);
        let base = ImageTensor::new(shape, vec![0.05; 784]).unwrap();
        assert!(is_valid(&base, &base, 0.2, 0.5).unwrap());

        let mut px = base.pixels().to_vec();
        px[100] = 0.95;
        let one = ImageTensor::new(shape, px).unwrap();
        assert!(is_valid(&base, &one, 0.2, 0.5).unwrap());

        let shifted = ImageTensor::new(shape, vec![0.65; 784]).unwrap();
        assert!(!is_valid(&base, &shifted, 0.2, 0.5).unwrap());

        let other = ImageTensor::zeros(Shape::new(27, 28, 1));
        assert!(matches!(
            is_valid(&base, &other, 0.2, 0.5),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            is_valid(&base, &base, 0.0, 0.5),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mutate_is_deterministic_and_respects_affine_flag() {
        let img = ramp(Shape::new(8, 8, 1)).quantized();
        let m = Mutator::new(TransformRanges::default(), false).unwrap();
        let lineage = LineageState::root(&img);
        let a = m
            .mutate(&img, 3, &lineage, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        let b = m
            .mutate(&img, 3, &lineage, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        assert_eq!(a, b);
        assert!(a.0.is_quantized());
        assert_eq!(m.replay(&img, &a.1).unwrap(), a.0);

        let used = LineageState {
            affine_used: true,
            ..lineage
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let (_, rec) = m.mutate(&img, 0, &used, &mut rng).unwrap();
            assert!(!rec.is_affine);
            assert_ne!(rec.transform, Transform::HorizontalFlip);
        }
    }

    #[test]
    fn admissible_never_empty() {
        let m = Mutator::new(TransformRanges::default(), false).unwrap();
        assert_eq!(m.admissible(true).len(), 3);
        assert_eq!(m.admissible(false).len(), 6);
        let m = Mutator::new(TransformRanges::default(), true).unwrap();
        assert_eq!(m.admissible(false).len(), 7);
    }

    #[test]
    fn record_json_shape() {
        let rec = MutationRecord {
            transform: Transform::Rotation { degrees: 4.5 },
            is_affine: true,
            parent_id: 2,
            rng_draws: 6,
        };
        let json = serde_json::to_string(&rec).unwrap();
        assert_eq!(
            json,
            r#"{"kind":"Rotation","params":{"degrees":4.5},"is_affine":true,"parent_id":2,"rng_draws":6}"#
        );
        assert_eq!(serde_json::from_str::<MutationRecord>(&json).unwrap(), rec);
    }
}
