use crate::error::{ensure, Result};
use crate::numerics::Tensor;

/// Collapses a 3-channel `C×t×F×d` patch-embedding kernel to the single
/// channel `(t·F)×d` layout by averaging over channels.
pub fn adapt_pretrained_patch_embedding(kernel: &Tensor) -> Result<Tensor> {
    let shape = kernel.shape();
    ensure!(
        shape.len() == 4,
        "expected a C×t×F×d kernel, got shape {shape:?}"
    );
    ensure!(shape[0] == 3, "expected 3 input channels, got {}", shape[0]);
    let per_channel = shape[1] * shape[2] * shape[3];
    let data = kernel.data();
    let out = (0..per_channel)
        .map(|i| (data[i] + data[per_channel + i] + data[2 * per_channel + i]) / 3.0)
        .collect();
    Tensor::new(&[shape[1] * shape[2], shape[3]], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn averages_channels() {
        let a: Vec<f64> = (0..8).map(f64::from).collect();
        let b: Vec<f64> = (0..8).map(|i| f64::from(i) * 2.0).collect();
        let c: Vec<f64> = (0..8).map(|i| -f64::from(i)).collect();
        let k = Tensor::new(&[3, 2, 2, 2], [a.clone(), b, c].concat()).unwrap();
        let w = adapt_pretrained_patch_embedding(&k).unwrap();
        assert_eq!(w.shape(), &[4, 2]);
        for (i, v) in w.data().iter().enumerate() {
            assert!((v - 2.0 * a[i] / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_channels_and_zero_kernel() {
        let ch: Vec<f64> = vec![0.5, -1.0, 2.0, 3.0, 0.0, 1.0];
        let k = Tensor::new(&[3, 1, 3, 2], [ch.clone(), ch.clone(), ch.clone()].concat()).unwrap();
        assert_eq!(adapt_pretrained_patch_embedding(&k).unwrap().data(), ch.as_slice());
        let z = adapt_pretrained_patch_embedding(&Tensor::zeros(&[3, 2, 4, 5])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_channel_count() {
        assert!(adapt_pretrained_patch_embedding(&Tensor::zeros(&[1, 2, 2, 2])).is_err());
        assert!(adapt_pretrained_patch_embedding(&Tensor::zeros(&[3, 4])).is_err());
    }
}
