//! Macenko stain normalization.
//!
//! Blood-smear images vary in color with staining protocol and scanner. This
//! module aligns them to a common appearance in four steps:
//!
//! 1. [`rgb_to_od`] maps RGB into optical-density (OD) space, where the
//!    Beer-Lambert law makes pixel OD linear in stain concentration.
//! 2. [`estimate_stain_matrix`] finds the two dominant stain vectors: project
//!    tissue pixels onto the top-2 principal directions of the OD cloud and
//!    take the extreme-angle unit vectors at the alpha / (100 - alpha)
//!    percentiles.
//! 3. [`solve_concentrations`] recovers per-pixel stain concentrations by
//!    least squares against the estimated stain basis.
//! 4. [`normalize_image`] rescales concentrations to a reference template's
//!    maxima (99th percentile matching) and re-renders the image under the
//!    reference stain vectors.
//!
//! Principal directions come from the eigendecomposition of the uncentered
//! 3x3 OD second-moment matrix, matching the reference algorithm. Pixels
//! whose maximum channel OD falls below `od_threshold` are treated as
//! background and excluded from estimation.

use nalgebra::{Matrix3, Vector3};

use crate::raster::Image;
use crate::{Error, Result};

/// Default OD threshold below which a pixel counts as background.
pub const DEFAULT_OD_THRESHOLD: f64 = 0.15;
/// Default angle percentile for the extreme stain vectors.
pub const DEFAULT_ALPHA_PERCENTILE: f64 = 1.0;
/// Percentile used to estimate an image's maximum stain concentration.
pub const CONCENTRATION_PERCENTILE: f64 = 99.0;
/// Background (white) intensity assumed for OD conversion and rendering.
pub const BACKGROUND_INTENSITY: u32 = 255;

const MIN_TISSUE_PIXELS: usize = 3;
const UNIT_NORM_TOLERANCE: f64 = 1e-9;
const NORMAL_MATRIX_DET_TOLERANCE: f64 = 1e-12;
const EIGENVALUE_RANK_TOLERANCE: f64 = 1e-8;

/// Per-channel optical densities of an image; same layout as [`Image`].
#[derive(Debug, Clone)]
pub struct OdImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl OdImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn pixel(&self, i: usize) -> [f64; 3] {
        let j = i * 3;
        [self.values[j], self.values[j + 1], self.values[j + 2]]
    }
}

/// Two unit stain vectors in OD space, columns of a 3x2 matrix.
///
/// Column 0 is the stain with the larger red component (hematoxylin
/// convention for H&E).
#[derive(Debug, Clone, PartialEq)]
pub struct StainMatrix {
    columns: [[f64; 3]; 2],
}

impl StainMatrix {
    /// Validate invariants: unit columns, nonnegative components, linear
    /// independence.
    pub fn new(columns: [[f64; 3]; 2]) -> Result<Self> {
        for (i, col) in columns.iter().enumerate() {
            let norm = vec3_norm(col);
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::InvalidStainMatrix(format!(
                    "column {i} has norm {norm}, expected 1"
                )));
            }
            if col.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::InvalidStainMatrix(format!(
                    "column {i} has a negative or non-finite component"
                )));
            }
        }
        let det = normal_matrix_det(&columns);
        if det <= NORMAL_MATRIX_DET_TOLERANCE {
            return Err(Error::InvalidStainMatrix(
                "columns are linearly dependent".into(),
            ));
        }
        Ok(Self { columns })
    }

    pub fn column(&self, i: usize) -> [f64; 3] {
        self.columns[i]
    }

    /// `S . c` for a concentration pair.
    pub fn apply(&self, c: [f64; 2]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for ch in 0..3 {
            out[ch] = self.columns[0][ch] * c[0] + self.columns[1][ch] * c[1];
        }
        out
    }

    /// Angle in degrees between column `i` and an arbitrary vector.
    pub fn column_angle_deg(&self, i: usize, v: &[f64; 3]) -> f64 {
        let col = &self.columns[i];
        let cos = vec3_dot(col, v) / (vec3_norm(col) * vec3_norm(v));
        cos.clamp(-1.0, 1.0).acos().to_degrees()
    }
}

/// Per-pixel stain concentrations; 2 values per pixel, same pixel order as
/// the source image.
#[derive(Debug, Clone)]
pub struct ConcentrationMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ConcentrationMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn pixel(&self, i: usize) -> [f64; 2] {
        [self.values[i * 2], self.values[i * 2 + 1]]
    }

    /// All values of one stain channel in pixel order.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(2).copied().collect()
    }
}

/// A reference stain template: target stain vectors and the maximum
/// concentrations images are rescaled to.
#[derive(Debug, Clone, PartialEq)]
pub struct StainReference {
    pub stains: StainMatrix,
    pub max_concentrations: [f64; 2],
}

impl StainReference {
    pub fn new(stains: StainMatrix, max_concentrations: [f64; 2]) -> Result<Self> {
        if max_concentrations.iter().any(|&m| m <= 0.0 || !m.is_finite()) {
            return Err(Error::InvalidStainMatrix(
                "reference max concentrations must be positive".into(),
            ));
        }
        Ok(Self {
            stains,
            max_concentrations,
        })
    }

    /// The widely used H&E reference constants.
    pub fn default_he() -> Self {
        let stains = StainMatrix::new([
            unit3([0.5626, 0.7201, 0.4062]),
            unit3([0.2159, 0.8012, 0.5581]),
        ])
        .expect("reference constants are valid");
        Self {
            stains,
            max_concentrations: [1.9705, 1.0308],
        }
    }
}

/// Convert an RGB image to optical density:
/// `od = -log10((v + 1) / (background + 1))` per channel.
///
/// The `+ 1` guard keeps `od(0)` finite and `od(background)` exactly zero.
pub fn rgb_to_od(image: &Image, background_intensity: u32) -> OdImage {
    let denom = f64::from(background_intensity) + 1.0;
    let lut: Vec<f64> = (0..=255u32)
        .map(|v| {
            let od = -((f64::from(v) + 1.0) / denom).log10();
            // Clamp values brighter than the background to zero density and
            // normalize -0.0 from log10(1.0).
            if od <= 0.0 {
                0.0
            } else {
                od
            }
        })
        .collect();
    let values = image.pixels().iter().map(|&v| lut[v as usize]).collect();
    OdImage {
        width: image.width(),
        height: image.height(),
        values,
    }
}

/// Estimate the two dominant stain vectors of an OD image.
///
/// Pixels with `max(od) < od_threshold` are discarded as background. The
/// remaining cloud is projected onto its top-2 principal directions; the
/// returned columns are the unit vectors at the `alpha_percentile` and
/// `100 - alpha_percentile` angle percentiles, clamped nonnegative,
/// renormalized, and ordered so the column with the larger red component
/// comes first.
pub fn estimate_stain_matrix(
    od: &OdImage,
    alpha_percentile: f64,
    od_threshold: f64,
) -> Result<StainMatrix> {
    if !(0.0 < alpha_percentile && alpha_percentile < 50.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha percentile must be in (0, 50), got {alpha_percentile}"
        )));
    }
    let tissue: Vec<[f64; 3]> = (0..od.num_pixels())
        .map(|i| od.pixel(i))
        .filter(|p| p.iter().cloned().fold(f64::NEG_INFINITY, f64::max) >= od_threshold)
        .collect();
    if tissue.len() < MIN_TISSUE_PIXELS {
        return Err(Error::TooFewPixels {
            found: tissue.len(),
            needed: MIN_TISSUE_PIXELS,
        });
    }

    // Uncentered second-moment matrix of the tissue OD vectors.
    let n = tissue.len() as f64;
    let mut m = Matrix3::<f64>::zeros();
    for p in &tissue {
        for a in 0..3 {
            for b in 0..3 {
                m[(a, b)] += p[a] * p[b];
            }
        }
    }
    m /= n;

    let eig = nalgebra::SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("eigenvalues are finite")
    });
    let l1 = eig.eigenvalues[order[0]];
    let l2 = eig.eigenvalues[order[1]];
    if l1 <= 0.0 || l2 <= EIGENVALUE_RANK_TOLERANCE * l1 {
        return Err(Error::DegenerateStains);
    }
    let e1 = oriented(eig.eigenvectors.column(order[0]).into());
    let e2 = oriented(eig.eigenvectors.column(order[1]).into());

    // Angle of each tissue pixel within the principal plane.
    let mut angles: Vec<f64> = tissue
        .iter()
        .map(|p| {
            let v = Vector3::new(p[0], p[1], p[2]);
            v.dot(&e2).atan2(v.dot(&e1))
        })
        .collect();
    angles.sort_by(|a, b| a.partial_cmp(b).expect("angles are finite"));
    let phi_lo = percentile(&angles, alpha_percentile);
    let phi_hi = percentile(&angles, 100.0 - alpha_percentile);

    let v_lo = plane_vector(&e1, &e2, phi_lo)?;
    let v_hi = plane_vector(&e1, &e2, phi_hi)?;

    // Hematoxylin convention: larger red component first.
    let columns = if v_lo[0] >= v_hi[0] {
        [v_lo, v_hi]
    } else {
        [v_hi, v_lo]
    };
    StainMatrix::new(columns).map_err(|_| Error::DegenerateStains)
}

/// Per-pixel least-squares concentrations `argmin_c |od - S c|^2`, negative
/// components clamped to zero.
pub fn solve_concentrations(od: &OdImage, stains: &StainMatrix) -> Result<ConcentrationMap> {
    let s0 = stains.column(0);
    let s1 = stains.column(1);
    // 2x2 normal matrix [[a, b], [b, c]] of the unit stain columns.
    let a = vec3_dot(&s0, &s0);
    let b = vec3_dot(&s0, &s1);
    let c = vec3_dot(&s1, &s1);
    let det = a * c - b * b;
    if det <= NORMAL_MATRIX_DET_TOLERANCE {
        return Err(Error::SingularStainMatrix { det });
    }
    let mut values = Vec::with_capacity(od.num_pixels() * 2);
    for i in 0..od.num_pixels() {
        let p = od.pixel(i);
        let r0 = vec3_dot(&s0, &p);
        let r1 = vec3_dot(&s1, &p);
        let c0 = (c * r0 - b * r1) / det;
        let c1 = (a * r1 - b * r0) / det;
        values.push(c0.max(0.0));
        values.push(c1.max(0.0));
    }
    Ok(ConcentrationMap {
        width: od.width,
        height: od.height,
        values,
    })
}

/// Normalize an image onto a reference stain template.
///
/// Pipeline: OD conversion, stain estimation, concentration solve, per-stain
/// rescaling of the 99th-percentile concentration to the reference maximum,
/// then Beer-Lambert re-rendering under the reference stains. Errors from
/// estimation ([`Error::DegenerateStains`], [`Error::TooFewPixels`])
/// propagate; callers decide the fallback.
pub fn normalize_image(
    image: &Image,
    reference: &StainReference,
    alpha_percentile: f64,
    od_threshold: f64,
) -> Result<Image> {
    let od = rgb_to_od(image, BACKGROUND_INTENSITY);
    let stains = estimate_stain_matrix(&od, alpha_percentile, od_threshold)?;
    let conc = solve_concentrations(&od, &stains)?;
    let scales = concentration_scales(&conc, reference.max_concentrations);

    let background = f64::from(BACKGROUND_INTENSITY);
    let mut pixels = Vec::with_capacity(image.num_pixels() * 3);
    for i in 0..conc.num_pixels() {
        let c = conc.pixel(i);
        let scaled = [c[0] * scales[0], c[1] * scales[1]];
        let od_out = reference.stains.apply(scaled);
        for ch in 0..3 {
            let v = (background * 10f64.powf(-od_out[ch])).round().clamp(0.0, 255.0);
            pixels.push(v as u8);
        }
    }
    Image::new(image.width(), image.height(), pixels)
}

/// Fit a reference template from a set of images: mean of the estimated
/// stain vectors (renormalized) and mean of the per-image 99th-percentile
/// concentrations. Images that fail estimation are skipped.
pub fn fit_reference(
    images: &[Image],
    alpha_percentile: f64,
    od_threshold: f64,
) -> Result<StainReference> {
    let mut sum_cols = [[0.0f64; 3]; 2];
    let mut sum_max = [0.0f64; 2];
    let mut fitted = 0usize;
    for image in images {
        let od = rgb_to_od(image, BACKGROUND_INTENSITY);
        let stains = match estimate_stain_matrix(&od, alpha_percentile, od_threshold) {
            Ok(s) => s,
            Err(Error::DegenerateStains) | Err(Error::TooFewPixels { .. }) => continue,
            Err(e) => return Err(e),
        };
        let conc = solve_concentrations(&od, &stains)?;
        for (k, col) in sum_cols.iter_mut().enumerate() {
            let c = stains.column(k);
            for ch in 0..3 {
                col[ch] += c[ch];
            }
        }
        for (k, m) in sum_max.iter_mut().enumerate() {
            let mut ch = conc.channel(k);
            ch.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            *m += percentile(&ch, CONCENTRATION_PERCENTILE);
        }
        fitted += 1;
    }
    if fitted == 0 {
        return Err(Error::DegenerateStains);
    }
    let n = fitted as f64;
    let stains = StainMatrix::new([
        unit3([sum_cols[0][0] / n, sum_cols[0][1] / n, sum_cols[0][2] / n]),
        unit3([sum_cols[1][0] / n, sum_cols[1][1] / n, sum_cols[1][2] / n]),
    ])?;
    StainReference::new(stains, [sum_max[0] / n, sum_max[1] / n])
}

fn concentration_scales(conc: &ConcentrationMap, reference_max: [f64; 2]) -> [f64; 2] {
    let mut scales = [1.0f64; 2];
    for (k, scale) in scales.iter_mut().enumerate() {
        let mut ch = conc.channel(k);
        ch.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let src_max = percentile(&ch, CONCENTRATION_PERCENTILE);
        if src_max > 1e-8 {
            *scale = reference_max[k] / src_max;
        }
    }
    scales
}

/// Linear-interpolation percentile of pre-sorted values
/// (`rank = q / 100 * (n - 1)`).
pub(crate) fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn plane_vector(e1: &Vector3<f64>, e2: &Vector3<f64>, phi: f64) -> Result<[f64; 3]> {
    let v = e1 * phi.cos() + e2 * phi.sin();
    let clamped = [v[0].max(0.0), v[1].max(0.0), v[2].max(0.0)];
    let norm = vec3_norm(&clamped);
    if norm <= 0.0 {
        return Err(Error::DegenerateStains);
    }
    Ok([clamped[0] / norm, clamped[1] / norm, clamped[2] / norm])
}

/// Flip an eigenvector so its component sum is positive.
fn oriented(v: Vector3<f64>) -> Vector3<f64> {
    if v.sum() < 0.0 {
        -v
    } else {
        v
    }
}

fn normal_matrix_det(columns: &[[f64; 3]; 2]) -> f64 {
    let a = vec3_dot(&columns[0], &columns[0]);
    let b = vec3_dot(&columns[0], &columns[1]);
    let c = vec3_dot(&columns[1], &columns[1]);
    a * c - b * b
}

fn vec3_dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn vec3_norm(v: &[f64; 3]) -> f64 {
    vec3_dot(v, v).sqrt()
}

fn unit3(v: [f64; 3]) -> [f64; 3] {
    let n = vec3_norm(&v);
    [v[0] / n, v[1] / n, v[2] / n]
}
