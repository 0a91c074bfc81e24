//! Geometric transforms of the square's symmetry group (dihedral group of
//! order 8), applied independently to every plane.

use crate::{Scalar, Tensor};

/// Mirrors each plane left-to-right.
pub fn flip_horizontal<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    Tensor::from_fn(s, |n, c, y, xx| x.at(n, c, y, s.w - 1 - xx))
}

/// Rotates each plane by 90° counter-clockwise; height and width swap.
pub fn rot90<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    Tensor::from_fn(s.with_spatial(s.w, s.h), |n, c, y, xx| x.at(n, c, xx, s.w - 1 - y))
}

/// An element of the dihedral group: optional horizontal flip followed by
/// `quarter_turns` counter-clockwise rotations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral {
    pub flip: bool,
    pub quarter_turns: u8,
}

impl Dihedral {
    pub const IDENTITY: Self = Self {
        flip: false,
        quarter_turns: 0,
    };

    /// All eight group elements, identity first.
    pub fn all() -> [Self; 8] {
        let mut out = [Self::IDENTITY; 8];
        for (i, t) in out.iter_mut().enumerate() {
            *t = Self {
                flip: i >= 4,
                quarter_turns: (i % 4) as u8,
            };
        }
        out
    }

    pub fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = if self.flip { flip_horizontal(x) } else { x.clone() };
        for _ in 0..self.quarter_turns % 4 {
            y = rot90(&y);
        }
        y
    }

    /// Undoes [`apply`](Self::apply).
    pub fn invert<T: Scalar>(&self, y: &Tensor<T>) -> Tensor<T> {
        let mut x = y.clone();
        for _ in 0..(4 - self.quarter_turns % 4) % 4 {
            x = rot90(&x);
        }
        if self.flip {
            flip_horizontal(&x)
        } else {
            x
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_is_an_involution() {
        let x = Tensor::<f32>::from_fn([1, 2, 3, 5], |_, c, y, xx| (c * 100 + y * 10 + xx) as f32);
        assert_eq!(flip_horizontal(&flip_horizontal(&x)), x);
        assert_eq!(flip_horizontal(&x).at(0, 1, 2, 0), x.at(0, 1, 2, 4));
    }

    #[test]
    fn four_rotations_are_identity() {
        let x = Tensor::<f32>::from_fn([1, 1, 2, 3], |_, _, y, xx| (y * 3 + xx) as f32);
        let r = rot90(&x);
        assert_eq!(r.shape().h, 3);
        // top-right corner moves to top-left under a counter-clockwise turn
        assert_eq!(r.at(0, 0, 0, 0), x.at(0, 0, 0, 2));
        assert_eq!(rot90(&rot90(&rot90(&r))), x);
    }

    #[test]
    fn every_transform_inverts_and_they_are_distinct() {
        let x = Tensor::<f64>::from_fn([1, 1, 4, 4], |_, _, y, xx| (y * 4 + xx) as f64);
        let images: Vec<_> = Dihedral::all().iter().map(|t| t.apply(&x)).collect();
        for (t, img) in Dihedral::all().iter().zip(&images) {
            assert_eq!(t.invert(img), x);
        }
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(images[i], images[j]);
            }
        }
    }
}
