//! Serde helpers that write matrices as row-major arrays.

use nalgebra::DMatrix;
use serde::ser::{SerializeSeq, SerializeStruct};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::linalg::{matrix_to_rows, Subspace, SymMatrix};

pub fn ser_matrix<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    matrix_to_rows(m).serialize(s)
}

pub fn ser_matrix_list<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(ms.len()))?;
    for m in ms {
        seq.serialize_element(&matrix_to_rows(m))?;
    }
    seq.end()
}

pub fn ser_sym<S: Serializer>(m: &SymMatrix, s: S) -> Result<S::Ok, S::Error> {
    m.to_rows().serialize(s)
}

pub fn ser_sym_list<S: Serializer>(ms: &[SymMatrix], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(ms.len()))?;
    for m in ms {
        seq.serialize_element(&m.to_rows())?;
    }
    seq.end()
}

impl Serialize for Subspace {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        // Basis vectors are written as rows.
        let mut st = s.serialize_struct("Subspace", 3)?;
        st.serialize_field("ambient_dim", &self.ambient_dim())?;
        st.serialize_field("dim", &self.dim())?;
        st.serialize_field("basis", &matrix_to_rows(&self.basis().transpose()))?;
        st.end()
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        SymMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}
