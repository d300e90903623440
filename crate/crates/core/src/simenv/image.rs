/// Maps `[0, 1]` to a byte, rounding half up: `floor(v·255 + 0.5)`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn dequantize(b: u8) -> f64 {
    b as f64 / 255.0
}

/// RGB image, `height × width × 3`, stored at 8 bits per channel.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn from_unit(height: usize, width: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), height * width * 3);
        Self {
            height,
            width,
            data: values.iter().map(|&v| quantize(v)).collect(),
        }
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        dequantize(self.data[(y * self.width + x) * 3 + c])
    }

    pub fn to_unit(&self) -> Vec<f64> {
        self.data.iter().map(|&b| dequantize(b)).collect()
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        let total: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (dequantize(a) - dequantize(b)).abs())
            .sum();
        total / self.data.len() as f64
    }
}

/// Binary `height × width` mask.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    /// The all-ones mask: every pixel is a grasp candidate.
    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_constant_ones(&self) -> bool {
        self.data.iter().all(|&v| v == 1)
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    pub fn to_unit(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.5), 128);
        assert!((dequantize(128) - 0.50196).abs() < 1e-5);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(7.0), 255);
    }
}
