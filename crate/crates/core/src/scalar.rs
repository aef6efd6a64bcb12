//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! Elementwise math comes from `num_traits::Float`. Dense factorizations are
//! delegated to nalgebra through the per-type hooks below, which keeps
//! nalgebra's own `RealField` methods out of generic code (they would shadow
//! the `Float` ones).

use nalgebra::{DMatrix, DVector};
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + nalgebra::Scalar
{
    /// Converts an `f64` literal. Every supported type represents all finite
    /// `f64` values after rounding, so this never fails.
    fn lit(x: f64) -> Self;

    fn as_f64(self) -> f64;

    /// Complementary error function.
    fn erfc(self) -> Self;

    /// Eigen-decomposition of a symmetric matrix: `(eigenvalues, eigenvectors)`
    /// with eigenvectors stored by column.
    fn sym_eigen(m: &DMatrix<Self>) -> (DVector<Self>, DMatrix<Self>);

    /// Lower Cholesky factor, or `None` when `m` is not positive definite.
    fn cholesky_lower(m: &DMatrix<Self>) -> Option<DMatrix<Self>>;

    /// General inverse by LU, or `None` when singular.
    fn inverse(m: &DMatrix<Self>) -> Option<DMatrix<Self>>;
}

macro_rules! impl_real {
    ($t:ty, $erfc:path) => {
        impl Real for $t {
            #[inline]
            fn lit(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn erfc(self) -> Self {
                $erfc(self)
            }

            fn sym_eigen(m: &DMatrix<Self>) -> (DVector<Self>, DMatrix<Self>) {
                let eig = nalgebra::SymmetricEigen::new(m.clone());
                (eig.eigenvalues, eig.eigenvectors)
            }

            fn cholesky_lower(m: &DMatrix<Self>) -> Option<DMatrix<Self>> {
                m.clone().cholesky().map(|c| c.l())
            }

            fn inverse(m: &DMatrix<Self>) -> Option<DMatrix<Self>> {
                m.clone().try_inverse()
            }
        }
    };
}

impl_real!(f64, libm::erfc);
impl_real!(f32, libm::erfcf);
