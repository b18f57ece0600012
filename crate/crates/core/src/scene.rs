//! Synthetic infrared scene generation.
//!
//! Stands in for a sensor-scene emulation pipeline: static backgrounds built
//! from a smooth random field plus bright point-like decoys, sub-pixel
//! moving targets rendered as Gaussian blobs along linear trajectories, and
//! additive white noise. Produces the intensity cube together with a
//! per-pixel binary target mask, then normalizes, carves fixed-size video
//! samples, and splits them into train/validation/test subsets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::TensorError;
use crate::tensor::Tensor;

/// Footprint of the static decoy blobs, in pixels.
const DECOY_SIGMA: f64 = 0.6;

/// A rendered pixel belongs to the target mask when its deposited flux
/// exceeds this fraction of the target's peak deposit in that frame.
const LABEL_FLUX_FRACTION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("target {index} starts at ({x}, {y}), outside the {width}x{height} cube")]
    TargetOutsideCube {
        index: usize,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("cube is constant; Gaussian scaling is undefined")]
    ConstantCube,
    #[error("sample extent {sample:?} exceeds cube extent {cube:?}")]
    SampleTooLarge { sample: Vec<usize>, cube: Vec<usize> },
    #[error("carve strides must be >= 1")]
    ZeroStride,
    #[error("split fractions {0:?} do not sum to 1")]
    BadFractions([f64; 3]),
    #[error("cannot split an empty sample list")]
    EmptySampleList,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Static background description: a smooth random field over a coarse
/// lattice plus a number of bright point-like decoys that superficially
/// resemble targets but never move.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundSpec {
    /// Mean intensity level of the scene.
    pub level: f32,
    /// Standard deviation of the lattice values of the smooth field.
    pub field_amplitude: f32,
    /// Lattice cell size in pixels; larger cells give smoother fields.
    pub field_cell: usize,
    pub decoy_count: usize,
    pub decoy_brightness: f32,
}

/// One moving point target: a sub-pixel Gaussian blob translated at
/// constant velocity, clipped at the cube borders.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    /// Start position (width, height) in pixels at frame 0.
    pub start: (f64, f64),
    /// Velocity (width, height) in pixels per frame.
    pub velocity: (f64, f64),
    /// Peak deposited intensity when centered on a pixel.
    pub peak: f32,
    /// Point-spread sigma in pixels; must stay below 1 so targets remain
    /// spatially unresolved.
    pub psf_sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub background: BackgroundSpec,
    pub targets: Vec<TargetSpec>,
    pub noise_sigma: f32,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.frames == 0 || self.width == 0 || self.height == 0 {
            return Err(SceneError::InvalidSpec("cube extents must be positive".into()));
        }
        if self.background.field_cell == 0 {
            return Err(SceneError::InvalidSpec("field_cell must be >= 1".into()));
        }
        for (i, t) in self.targets.iter().enumerate() {
            if !(t.psf_sigma > 0.0 && t.psf_sigma < 1.0) {
                return Err(SceneError::InvalidSpec(format!(
                    "target {i}: psf_sigma {} must lie in (0, 1)",
                    t.psf_sigma
                )));
            }
            let (x, y) = t.start;
            if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
                return Err(SceneError::TargetOutsideCube {
                    index: i,
                    x,
                    y,
                    width: self.width,
                    height: self.height,
                });
            }
        }
        Ok(())
    }
}

/// Mean/standard deviation used for Gaussian scaling, kept so later stages
/// can undo or audit the normalization.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScalingStats {
    pub mean: f64,
    pub std: f64,
}

/// A rendered scene: intensity video `[frames, width, height]` and the
/// matching binary target mask.
#[derive(Debug, Clone)]
pub struct DataCube {
    pub intensity: Tensor,
    pub labels: Tensor,
    pub scaling: Option<ScalingStats>,
    /// Generator seed, doubling as the cube id in sample provenance.
    pub cube_id: u64,
}

/// Where a carved sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub cube_id: u64,
    pub time_offset: usize,
    pub width_offset: usize,
    pub height_offset: usize,
}

/// One training example: `[1, frames, width, height]` intensity and label
/// windows cut from the same cube location.
#[derive(Debug, Clone)]
pub struct Sample {
    pub input: Tensor,
    pub label: Tensor,
    pub provenance: Provenance,
}

/// Carving geometry: window extents and strides along (time, width, height).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarveSpec {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// `None` tiles without overlap (stride = extent).
    pub strides: Option<(usize, usize, usize)>,
}

impl Default for CarveSpec {
    fn default() -> Self {
        CarveSpec {
            frames: 16,
            width: 64,
            height: 64,
            strides: None,
        }
    }
}

fn smooth_field(
    rng: &mut ChaCha8Rng,
    width: usize,
    height: usize,
    cell: usize,
    amplitude: f32,
) -> Vec<f32> {
    let cols = width / cell + 2;
    let rows = height / cell + 2;
    let lattice: Vec<f32> = (0..cols * rows)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) as f32 * amplitude)
        .collect();
    let mut field = vec![0.0f32; width * height];
    for x in 0..width {
        let u = x as f32 / cell as f32;
        let (iu, fu) = (u as usize, u.fract());
        for y in 0..height {
            let v = y as f32 / cell as f32;
            let (iv, fv) = (v as usize, v.fract());
            let c00 = lattice[iu * rows + iv];
            let c01 = lattice[iu * rows + iv + 1];
            let c10 = lattice[(iu + 1) * rows + iv];
            let c11 = lattice[(iu + 1) * rows + iv + 1];
            let top = c00 + (c10 - c00) * fu;
            let bot = c01 + (c11 - c01) * fu;
            field[x * height + y] = top + (bot - top) * fv;
        }
    }
    field
}

fn deposit_blob(
    buf: &mut [f32],
    width: usize,
    height: usize,
    cx: f64,
    cy: f64,
    peak: f64,
    sigma: f64,
) -> Vec<(usize, f64)> {
    let radius = (3.0 * sigma).ceil() as i64 + 1;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut deposits = Vec::new();
    let (x0, x1) = (
        (cx.floor() as i64 - radius).max(0),
        (cx.floor() as i64 + radius).min(width as i64 - 1),
    );
    let (y0, y1) = (
        (cy.floor() as i64 - radius).max(0),
        (cy.floor() as i64 + radius).min(height as i64 - 1),
    );
    for x in x0..=x1 {
        for y in y0..=y1 {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let flux = peak * (-(dx * dx + dy * dy) * inv).exp();
            let idx = x as usize * height + y as usize;
            buf[idx] += flux as f32;
            deposits.push((idx, flux));
        }
    }
    deposits
}

/// Renders a scene: a time-constant background, per-frame target deposits
/// along each trajectory, additive white noise, and the label mask.
pub fn generate_cube(spec: &SceneSpec) -> Result<DataCube, SceneError> {
    spec.validate()?;
    let (frames, width, height) = (spec.frames, spec.width, spec.height);
    let plane = width * height;

    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut field_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let mut decoy_rng = ChaCha8Rng::seed_from_u64(master.gen());
    let mut noise_rng = ChaCha8Rng::seed_from_u64(master.gen());

    let mut background = smooth_field(
        &mut field_rng,
        width,
        height,
        spec.background.field_cell,
        spec.background.field_amplitude,
    );
    for v in background.iter_mut() {
        *v += spec.background.level;
    }
    for _ in 0..spec.background.decoy_count {
        let cx = decoy_rng.gen_range(0.0..width as f64);
        let cy = decoy_rng.gen_range(0.0..height as f64);
        deposit_blob(
            &mut background,
            width,
            height,
            cx,
            cy,
            spec.background.decoy_brightness as f64,
            DECOY_SIGMA,
        );
    }

    let mut intensity = vec![0.0f32; frames * plane];
    let mut labels = vec![0.0f32; frames * plane];
    for n in 0..frames {
        let frame = &mut intensity[n * plane..(n + 1) * plane];
        frame.copy_from_slice(&background);
        for target in &spec.targets {
            let cx = target.start.0 + target.velocity.0 * n as f64;
            let cy = target.start.1 + target.velocity.1 * n as f64;
            let deposits = deposit_blob(
                frame,
                width,
                height,
                cx,
                cy,
                target.peak as f64,
                target.psf_sigma,
            );
            let peak_flux = deposits.iter().map(|(_, f)| *f).fold(0.0f64, f64::max);
            if peak_flux > 0.0 {
                let cutoff = LABEL_FLUX_FRACTION * peak_flux;
                for (idx, flux) in deposits {
                    if flux > cutoff {
                        labels[n * plane + idx] = 1.0;
                    }
                }
            }
        }
        if spec.noise_sigma > 0.0 {
            for v in frame.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut noise_rng);
                *v += z as f32 * spec.noise_sigma;
            }
        }
    }

    Ok(DataCube {
        intensity: Tensor::from_vec(&[frames, width, height], intensity)?,
        labels: Tensor::from_vec(&[frames, width, height], labels)?,
        scaling: None,
        cube_id: spec.seed,
    })
}

impl DataCube {
    /// Normalizes the intensity cube to mean 0, population standard
    /// deviation 1, over every element. Labels are never scaled.
    pub fn gaussian_scale(&self) -> Result<DataCube, SceneError> {
        let data = self.intensity.data();
        let n = data.len() as f64;
        let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = data
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        if std <= 0.0 {
            return Err(SceneError::ConstantCube);
        }
        let scaled: Vec<f32> = data
            .iter()
            .map(|&v| ((v as f64 - mean) / std) as f32)
            .collect();
        drop(data);
        Ok(DataCube {
            intensity: Tensor::from_vec(self.intensity.shape(), scaled)?,
            labels: self.labels.clone(),
            scaling: Some(ScalingStats { mean, std }),
            cube_id: self.cube_id,
        })
    }

    /// Cuts the cube into `[1, N, W, H]` windows. Intensity and labels are
    /// carved identically; partial tiles at the far edges are dropped.
    pub fn carve_samples(&self, carve: &CarveSpec) -> Result<Vec<Sample>, SceneError> {
        let cube_shape = self.intensity.shape().to_vec();
        let (cf, cw, ch) = (cube_shape[0], cube_shape[1], cube_shape[2]);
        let (sf, sw, sh) = (carve.frames, carve.width, carve.height);
        if sf > cf || sw > cw || sh > ch || sf == 0 || sw == 0 || sh == 0 {
            return Err(SceneError::SampleTooLarge {
                sample: vec![sf, sw, sh],
                cube: cube_shape,
            });
        }
        let (tf, tw, th) = carve.strides.unwrap_or((sf, sw, sh));
        if tf == 0 || tw == 0 || th == 0 {
            return Err(SceneError::ZeroStride);
        }
        let intensity = self.intensity.data();
        let labels = self.labels.data();
        let mut samples = Vec::new();
        let mut t0 = 0;
        while t0 + sf <= cf {
            let mut w0 = 0;
            while w0 + sw <= cw {
                let mut h0 = 0;
                while h0 + sh <= ch {
                    let mut inp = Vec::with_capacity(sf * sw * sh);
                    let mut lab = Vec::with_capacity(sf * sw * sh);
                    for n in 0..sf {
                        for x in 0..sw {
                            let base = ((t0 + n) * cw + (w0 + x)) * ch + h0;
                            inp.extend_from_slice(&intensity[base..base + sh]);
                            lab.extend_from_slice(&labels[base..base + sh]);
                        }
                    }
                    samples.push(Sample {
                        input: Tensor::from_vec(&[1, sf, sw, sh], inp)?,
                        label: Tensor::from_vec(&[1, sf, sw, sh], lab)?,
                        provenance: Provenance {
                            cube_id: self.cube_id,
                            time_offset: t0,
                            width_offset: w0,
                            height_offset: h0,
                        },
                    });
                    h0 += th;
                }
                w0 += tw;
            }
            t0 += tf;
        }
        Ok(samples)
    }
}

/// Seeded shuffle followed by a contiguous partition: train and validation
/// take `floor(f * n)` samples each, the remainder goes to test.
pub fn split_dataset(
    samples: Vec<Sample>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>), SceneError> {
    let (ft, fv, fs) = fractions;
    if (ft + fv + fs - 1.0).abs() > 1e-9 || ft < 0.0 || fv < 0.0 || fs < 0.0 {
        return Err(SceneError::BadFractions([ft, fv, fs]));
    }
    if samples.is_empty() {
        return Err(SceneError::EmptySampleList);
    }
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates, spelled out so the permutation is pinned by this code
    // rather than by a library's shuffle implementation.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_train = (ft * n as f64).floor() as usize;
    let n_val = (fv * n as f64).floor() as usize;
    let mut shuffled: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let take = |idx: &[usize], pool: &mut Vec<Option<Sample>>| {
        idx.iter()
            .map(|&i| pool[i].take().expect("each index visited once"))
            .collect::<Vec<_>>()
    };
    let train = take(&order[..n_train], &mut shuffled);
    let val = take(&order[n_train..n_train + n_val], &mut shuffled);
    let test = take(&order[n_train + n_val..], &mut shuffled);
    Ok((train, val, test))
}
