//! Row-major nested-array (de)serialization for fixed-size matrices, so
//! config files read like the matrices they hold.

macro_rules! square_matrix_serde {
    ($name:ident, $n:expr, $ty:ty) => {
        pub mod $name {
            use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

            pub fn serialize<S: Serializer>(m: &$ty, s: S) -> Result<S::Ok, S::Error> {
                let rows: Vec<Vec<f64>> = (0..$n).map(|r| (0..$n).map(|c| m[(r, c)]).collect()).collect();
                rows.serialize(s)
            }

            pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<$ty, D::Error> {
                let rows = Vec::<Vec<f64>>::deserialize(d)?;
                if rows.len() != $n || rows.iter().any(|r| r.len() != $n) {
                    return Err(D::Error::custom(format!("expected a {}x{} matrix", $n, $n)));
                }
                Ok(<$ty>::from_fn(|r, c| rows[r][c]))
            }
        }
    };
}

square_matrix_serde!(mat3, 3, nalgebra::Matrix3<f64>);
square_matrix_serde!(mat4, 4, nalgebra::Matrix4<f64>);
square_matrix_serde!(mat6, 6, nalgebra::Matrix6<f64>);
