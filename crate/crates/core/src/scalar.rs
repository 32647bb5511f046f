use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used by the numeric kernels.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Sum + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any float scalar")
    }

    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize converts to any float scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Debug + Display + Sum + Send + Sync + 'static
{
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub(crate) fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

pub(crate) fn distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    squared_distance(a, b).sqrt()
}

/// Serde for scalars that may be infinite or NaN: finite values as numbers,
/// the rest as the strings "inf", "-inf" and "nan".
pub mod nonfinite {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    use super::Scalar;

    pub fn serialize<T: Scalar, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        let x = v.as_f64();
        if x.is_finite() {
            s.serialize_f64(x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, T: Scalar, D: Deserializer<'de>>(d: D) -> Result<T, D::Error> {
        let x = match Repr::deserialize(d)? {
            Repr::Num(x) => x,
            Repr::Text(t) => match t.as_str() {
                "inf" => f64::INFINITY,
                "-inf" => f64::NEG_INFINITY,
                "nan" => f64::NAN,
                other => return Err(D::Error::custom(format!("not a number: {other:?}"))),
            },
        };
        T::from_f64(x).ok_or_else(|| D::Error::custom("value out of range"))
    }
}
