//! Multi-level feature aggregation into a single high-resolution map.
//!
//! Level `i` (0-based) has spatial size `(H / 2^i, W / 2^i)`. After every
//! level is projected to `delta` channels, two aggregation schemes exist:
//!
//! * direct: `O = sum_i up(L_i, 2^i)`,
//! * stairstep: fold from the coarsest level, `acc = up(acc, 2) + L_i`.
//!
//! Both sum coarse-to-fine per output pixel, so with nearest-neighbour
//! upsampling they agree bit for bit.

use crate::error::{Error, Result};

/// `height x width x channels` grid stored row-major, channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::from_vec(height, width, channels, vec![0.0; height * width * channels])
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::from_vec(height, width, channels, vec![value; height * width * channels])
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature map dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{height}x{width}x{channels}"),
                actual: format!("{} values", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature map holds non-finite values".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    pub fn max_abs_diff(&self, other: &FeatureMap) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    fn check_same_shape(&self, other: &FeatureMap) -> Result<()> {
        if (self.height, self.width, self.channels) != (other.height, other.width, other.channels) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}x{}", self.height, self.width, self.channels),
                actual: format!("{}x{}x{}", other.height, other.width, other.channels),
            });
        }
        Ok(())
    }

    /// Elementwise `self += other`, counting one addition per element.
    fn add_assign(&mut self, other: &FeatureMap, additions: &mut usize) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        *additions += self.data.len();
        Ok(())
    }
}

/// Per-pixel linear map `in_channels -> out_channels` (a 1x1 convolution
/// without bias). `weights[i * out + o]` maps input channel `i` to output `o`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    in_channels: usize,
    out_channels: usize,
    weights: Vec<f64>,
}

impl Projection {
    pub fn new(in_channels: usize, out_channels: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != in_channels * out_channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{in_channels}x{out_channels} weights"),
                actual: format!("{} weights", weights.len()),
            });
        }
        Ok(Self {
            in_channels,
            out_channels,
            weights,
        })
    }

    pub fn identity(channels: usize) -> Self {
        let mut weights = vec![0.0; channels * channels];
        for i in 0..channels {
            weights[i * channels + i] = 1.0;
        }
        Self {
            in_channels: channels,
            out_channels: channels,
            weights,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }
}

/// The channel-alignment step `m(.)`.
pub fn channel_align(f: &FeatureMap, weights: &Projection) -> Result<FeatureMap> {
    if f.channels != weights.in_channels {
        return Err(Error::ShapeMismatch {
            expected: format!("{} input channels", weights.in_channels),
            actual: format!("{} channels", f.channels),
        });
    }
    let out_c = weights.out_channels;
    let mut data = vec![0.0; f.height * f.width * out_c];
    for (px, out) in f.data.chunks_exact(f.channels).zip(data.chunks_exact_mut(out_c)) {
        for (i, &x) in px.iter().enumerate() {
            let row = &weights.weights[i * out_c..(i + 1) * out_c];
            for (o, w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
    }
    FeatureMap::from_vec(f.height, f.width, out_c, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Nearest,
    /// Half-pixel centers (align-corners false) with edge clamping.
    Bilinear,
}

/// Integer-factor upsampling `u(., factor)`.
pub fn upsample(f: &FeatureMap, factor: usize, mode: Interpolation) -> Result<FeatureMap> {
    if factor < 1 {
        return Err(Error::InvalidArgument(format!("upsampling factor must be >= 1, got {factor}")));
    }
    if factor == 1 {
        return Ok(f.clone());
    }
    let (h, w, c) = (f.height * factor, f.width * factor, f.channels);
    let mut data = Vec::with_capacity(h * w * c);
    match mode {
        Interpolation::Nearest => {
            for y in 0..h {
                for x in 0..w {
                    data.extend_from_slice(f.pixel(y / factor, x / factor));
                }
            }
        }
        Interpolation::Bilinear => {
            let taps = |i: usize, n: usize| -> (usize, usize, f64) {
                let src = ((i as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (n - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(n - 1);
                (i0, i1, src - i0 as f64)
            };
            let xs: Vec<_> = (0..w).map(|x| taps(x, f.width)).collect();
            for y in 0..h {
                let (y0, y1, ly) = taps(y, f.height);
                for &(x0, x1, lx) in &xs {
                    let (p00, p01) = (f.pixel(y0, x0), f.pixel(y0, x1));
                    let (p10, p11) = (f.pixel(y1, x0), f.pixel(y1, x1));
                    for k in 0..c {
                        let top = p00[k] * (1.0 - lx) + p01[k] * lx;
                        let bottom = p10[k] * (1.0 - lx) + p11[k] * lx;
                        data.push(top * (1.0 - ly) + bottom * ly);
                    }
                }
            }
        }
    }
    FeatureMap::from_vec(h, w, c, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HypercolumnSpec {
    pub levels: usize,
    /// Channel count after alignment.
    pub delta: usize,
    pub interpolation: Interpolation,
    /// Spatial size of the finest level.
    pub base_height: usize,
    pub base_width: usize,
}

impl HypercolumnSpec {
    pub const DEFAULT_DELTA: usize = 64;

    pub fn level_size(&self, i: usize) -> (usize, usize) {
        (self.base_height >> i, self.base_width >> i)
    }

    fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.delta == 0 {
            return Err(Error::InvalidArgument("need at least one level and one channel".into()));
        }
        let div = 1usize << (self.levels - 1);
        if !self.base_height.is_multiple_of(div) || !self.base_width.is_multiple_of(div) || self.base_height == 0 || self.base_width == 0 {
            return Err(Error::InvalidArgument(format!(
                "base size {}x{} does not halve exactly {} times",
                self.base_height,
                self.base_width,
                self.levels - 1
            )));
        }
        Ok(())
    }

    /// Checks the dyadic size chain and channel alignment of `levels`.
    pub fn check_levels(&self, levels: &[FeatureMap]) -> Result<()> {
        self.validate()?;
        if levels.len() != self.levels {
            return Err(Error::InvalidArgument(format!(
                "expected {} levels, got {}",
                self.levels,
                levels.len()
            )));
        }
        for (i, l) in levels.iter().enumerate() {
            let (h, w) = self.level_size(i);
            if (l.height, l.width, l.channels) != (h, w, self.delta) {
                return Err(Error::ShapeMismatch {
                    expected: format!("level {} of {h}x{w}x{}", i + 1, self.delta),
                    actual: format!("{}x{}x{}", l.height, l.width, l.channels),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Direct,
    Stairstep,
}

/// Aggregated map plus the number of scalar additions spent.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub output: FeatureMap,
    pub additions: usize,
}

fn direct(levels: &[FeatureMap], spec: &HypercolumnSpec) -> Result<Aggregation> {
    spec.check_levels(levels)?;
    let n = levels.len();
    let mut additions = 0;
    let mut out = upsample(&levels[n - 1], 1 << (n - 1), spec.interpolation)?;
    for i in (0..n - 1).rev() {
        let up = upsample(&levels[i], 1 << i, spec.interpolation)?;
        out.add_assign(&up, &mut additions)?;
    }
    Ok(Aggregation { output: out, additions })
}

fn stairstep(levels: &[FeatureMap], spec: &HypercolumnSpec) -> Result<Aggregation> {
    spec.check_levels(levels)?;
    let n = levels.len();
    let mut additions = 0;
    let mut acc = levels[n - 1].clone();
    for level in levels[..n - 1].iter().rev() {
        acc = upsample(&acc, 2, spec.interpolation)?;
        acc.add_assign(level, &mut additions)?;
    }
    Ok(Aggregation { output: acc, additions })
}

/// Aggregates channel-aligned levels with the given scheme.
pub fn aggregate(levels: &[FeatureMap], spec: &HypercolumnSpec, scheme: Scheme) -> Result<Aggregation> {
    match scheme {
        Scheme::Direct => direct(levels, spec),
        Scheme::Stairstep => stairstep(levels, spec),
    }
}

pub fn hypercolumn_direct(levels: &[FeatureMap], spec: &HypercolumnSpec) -> Result<FeatureMap> {
    direct(levels, spec).map(|a| a.output)
}

pub fn hypercolumn_stairstep(levels: &[FeatureMap], spec: &HypercolumnSpec) -> Result<FeatureMap> {
    stairstep(levels, spec).map(|a| a.output)
}

/// Projects raw levels with `m(.)` and aggregates them.
pub fn hypercolumn(
    raw_levels: &[FeatureMap],
    projections: &[Projection],
    spec: &HypercolumnSpec,
    scheme: Scheme,
) -> Result<FeatureMap> {
    if raw_levels.len() != projections.len() {
        return Err(Error::InvalidArgument(format!(
            "{} levels but {} projections",
            raw_levels.len(),
            projections.len()
        )));
    }
    let aligned = raw_levels
        .iter()
        .zip(projections)
        .map(|(l, p)| channel_align(l, p))
        .collect::<Result<Vec<_>>>()?;
    aggregate(&aligned, spec, scheme).map(|a| a.output)
}

/// Scalar additions performed by `scheme` on inputs shaped by `spec`,
/// measured by running the instrumented aggregation on zero maps.
pub fn count_added_elements(spec: &HypercolumnSpec, scheme: Scheme) -> Result<usize> {
    spec.validate()?;
    let levels = (0..spec.levels)
        .map(|i| {
            let (h, w) = spec.level_size(i);
            FeatureMap::zeros(h, w, spec.delta)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(&levels, spec, scheme).map(|a| a.additions)
}
