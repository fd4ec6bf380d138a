use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

/// One 3D sample: a single modality of a single subject.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    extents: [usize; 3],
    values: Vec<f32>,
}

impl Volume {
    pub fn new(extents: [usize; 3], values: Vec<f32>) -> Result<Self> {
        let n: usize = extents.iter().product();
        if n == 0 || n != values.len() {
            return Err(Error::Shape(format!(
                "volume extents {extents:?} need {n} values, got {}",
                values.len()
            )));
        }
        Ok(Self { extents, values })
    }

    pub fn zeros(extents: [usize; 3]) -> Self {
        Self { extents, values: vec![0.0; extents.iter().product()] }
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.extents[1] + y) * self.extents[2] + x
    }

    pub fn max_abs(&self) -> f32 {
        self.values.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Single-channel `[1, D, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let [d, h, w] = self.extents;
        Tensor::new(vec![1, d, h, w], self.values.clone()).expect("extents checked on construction")
    }

    /// Accepts `[D,H,W]`, `[1,D,H,W]` or `[1,1,D,H,W]` tensors.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let dims: Vec<usize> = t.shape().to_vec();
        let tail = match dims.len() {
            3 => &dims[..],
            4 if dims[0] == 1 => &dims[1..],
            5 if dims[0] == 1 && dims[1] == 1 => &dims[2..],
            _ => return Err(Error::Shape(format!("tensor shape {dims:?} is not a single volume"))),
        };
        Self::new([tail[0], tail[1], tail[2]], t.data().to_vec())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        super::io::write_volume(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        super::io::read_volume(path)
    }
}

/// Divides every value by the volume's largest absolute value, mapping it
/// into [−1, 1]. An all-zero volume is returned unchanged.
pub fn maxabs_scale(v: &Volume) -> Volume {
    let m = v.max_abs();
    if m == 0.0 {
        return v.clone();
    }
    Volume { extents: v.extents, values: v.values.iter().map(|&x| x / m).collect() }
}

/// Separable Gaussian blur with zero boundary handling (kernel truncated at
/// three standard deviations and renormalised).
pub fn gaussian_smooth(v: &Volume, sigma: f32) -> Volume {
    if sigma <= 0.0 {
        return v.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f32 = kernel.iter().sum();
    let kernel: Vec<f32> = kernel.iter().map(|k| k / norm).collect();

    let [d, h, w] = v.extents;
    let mut cur = v.values.clone();
    let mut next = vec![0.0f32; cur.len()];
    let strides = [h * w, w, 1];
    for (axis, &len) in [d, h, w].iter().enumerate() {
        let stride = strides[axis];
        next.iter_mut().for_each(|x| *x = 0.0);
        for (idx, out) in next.iter_mut().enumerate() {
            let pos = (idx / stride % len) as isize;
            let mut acc = 0.0f32;
            for (ki, &k) in kernel.iter().enumerate() {
                let p = pos + ki as isize - radius;
                if p >= 0 && p < len as isize {
                    acc += k * cur[(idx as isize + (p - pos) * stride as isize) as usize];
                }
            }
            *out = acc;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Volume { extents: v.extents, values: cur }
}
