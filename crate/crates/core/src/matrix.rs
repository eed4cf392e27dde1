//! Dense user-by-carrier matrix used for gains, powers and rates.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Row-major `users × carriers` matrix of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    users: usize,
    carriers: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(users: usize, carriers: usize) -> Self {
        Self {
            users,
            carriers,
            data: vec![0.0; users * carriers],
        }
    }

    /// Builds a matrix from rows; all rows must have the same length.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Option<Self> {
        let users = rows.len();
        let carriers = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != carriers) {
            return None;
        }
        Some(Self {
            users,
            carriers,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn carriers(&self) -> usize {
        self.carriers
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.carriers..(m + 1) * self.carriers]
    }

    pub fn row_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.data[m * self.carriers..(m + 1) * self.carriers]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.carriers.max(1)).take(self.users)
    }

    /// Column `k` as an owned vector (one entry per user).
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.users).map(|m| self[(m, k)]).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.data.iter()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.rows().map(|r| r.iter().sum()).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.users == other.users && self.carriers == other.carriers
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (m, k): (usize, usize)) -> &f64 {
        &self.data[m * self.carriers + k]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (m, k): (usize, usize)) -> &mut f64 {
        &mut self.data[m * self.carriers + k]
    }
}

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        Matrix::from_rows(rows).ok_or_else(|| serde::de::Error::custom("ragged matrix rows"))
    }
}
