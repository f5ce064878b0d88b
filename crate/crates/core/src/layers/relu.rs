use crate::error::{shape_err, Result};
use crate::tensor::{Dims, Tensor4};

/// Which elements were strictly positive in the forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ReluMask {
    dims: Dims,
    active: Vec<bool>,
}

impl ReluMask {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }
}

pub fn relu_forward(x: &Tensor4) -> (Tensor4, ReluMask) {
    let active: Vec<bool> = x.as_slice().iter().map(|&v| v > 0.0).collect();
    let y = x.map(|v| if v > 0.0 { v } else { 0.0 });
    (y, ReluMask { dims: x.dims(), active })
}

/// Passes `dy` where the input was positive; the subgradient at 0 is 0.
pub fn relu_backward(dy: &Tensor4, mask: &ReluMask) -> Result<Tensor4> {
    if dy.dims() != mask.dims {
        return shape_err(format!("relu_backward: dy {} vs mask {}", dy.dims(), mask.dims));
    }
    let data = dy.as_slice().iter().zip(&mask.active).map(|(&g, &on)| if on { g } else { 0.0 }).collect();
    Tensor4::from_vec(dy.dims(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_and_backward() {
        let x = Tensor4::from_vec((1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
        let (y, mask) = relu_forward(&x);
        assert_eq!(y.as_slice(), &[0.0, 0.0, 2.0]);
        let dy = Tensor4::new_filled((1, 1, 1, 3), 5.0).unwrap();
        assert_eq!(relu_backward(&dy, &mask).unwrap().as_slice(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn non_negative_input_is_identity() {
        let x = Tensor4::from_vec((1, 2, 1, 2), vec![0.0, 1.0, 2.5, 1e-300]).unwrap();
        assert_eq!(relu_forward(&x).0, x);
    }

    #[test]
    fn idempotent() {
        let x = Tensor4::from_vec((1, 1, 2, 2), vec![-3.0, 0.5, -0.0, 7.0]).unwrap();
        let once = relu_forward(&x).0;
        assert_eq!(relu_forward(&once).0, once);
    }

    #[test]
    fn mask_dims_checked() {
        let (_, mask) = relu_forward(&Tensor4::zeros((1, 1, 2, 2)).unwrap());
        assert!(relu_backward(&Tensor4::zeros((1, 1, 1, 4)).unwrap(), &mask).is_err());
    }
}
