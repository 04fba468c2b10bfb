use std::fmt;

use crate::error::{Error, Result};

/// Dense `channels × time` array of `f64`, stored channel-major
/// (`data[c * time + t]`).
///
/// Weight matrices reuse the same carrier with `channels` as rows and
/// `time` as columns; vectors are `n × 1`.
#[derive(Clone, PartialEq)]
pub struct SequenceTensor {
    channels: usize,
    time: usize,
    data: Vec<f64>,
}

impl fmt::Debug for SequenceTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SequenceTensor({}x{}) ", self.channels, self.time)?;
        f.debug_list().entries(self.data.iter().take(16)).finish()
    }
}

impl SequenceTensor {
    pub fn zeros(channels: usize, time: usize) -> Self {
        Self {
            channels,
            time,
            data: vec![0.0; channels * time],
        }
    }

    pub fn filled(channels: usize, time: usize, value: f64) -> Self {
        Self {
            channels,
            time,
            data: vec![value; channels * time],
        }
    }

    pub fn from_vec(channels: usize, time: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * time {
            return Err(Error::shape(
                "from_vec",
                format!("{channels}x{time}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self {
            channels,
            time,
            data,
        })
    }

    /// Builds from nested rows (`rows[c][t]`). All rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let channels = rows.len();
        let time = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(channels * time);
        for (c, row) in rows.iter().enumerate() {
            if row.len() != time {
                return Err(Error::shape(
                    "from_rows",
                    format!("row 0 has {time} values"),
                    format!("row {c} has {}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            channels,
            time,
            data,
        })
    }

    /// Column vector (`n × 1`).
    pub fn vector(values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            channels: n,
            time: 1,
            data: values,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::vector(vec![value])
    }

    pub fn identity(n: usize) -> Self {
        let mut out = Self::zeros(n, n);
        for i in 0..n {
            out.data[i * n + i] = 1.0;
        }
        out
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.channels, self.time)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize) -> f64 {
        self.data[c * self.time + t]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, value: f64) {
        self.data[c * self.time + t] = value;
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.time..(c + 1) * self.time]
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [f64] {
        let time = self.time;
        &mut self.data[c * time..(c + 1) * time]
    }

    pub fn column(&self, t: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.get(c, t)).collect()
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}", self.channels, self.time)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(op, self.shape_str(), other.shape_str()))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            channels: self.channels,
            time: self.time,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(self.same_shape(other));
        Self {
            channels: self.channels,
            time: self.time,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.time, self.channels);
        for c in 0..self.channels {
            for t in 0..self.time {
                out.data[t * self.channels + c] = self.data[c * self.time + t];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Channels `[start, start + len)`.
    pub fn slice_channels(&self, start: usize, len: usize) -> Self {
        let t = self.time;
        Self {
            channels: len,
            time: t,
            data: self.data[start * t..(start + len) * t].to_vec(),
        }
    }

    /// Time steps `[start, start + len)` of every channel.
    pub fn slice_time(&self, start: usize, len: usize) -> Self {
        let mut data = Vec::with_capacity(self.channels * len);
        for c in 0..self.channels {
            data.extend_from_slice(&self.row(c)[start..start + len]);
        }
        Self {
            channels: self.channels,
            time: len,
            data,
        }
    }

    /// Stacks tensors of equal length along channels.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let time = parts.first().map_or(0, |p| p.time);
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if p.time != time {
                return Err(Error::shape(
                    "concat_channels",
                    format!("time {time}"),
                    format!("time {}", p.time),
                ));
            }
            channels += p.channels;
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            channels,
            time,
            data,
        })
    }

    /// Joins tensors with equal channel count along time.
    pub fn concat_time(parts: &[&Self]) -> Result<Self> {
        let channels = parts.first().map_or(0, |p| p.channels);
        if let Some(bad) = parts.iter().find(|p| p.channels != channels) {
            return Err(Error::shape(
                "concat_time",
                format!("channels {channels}"),
                format!("channels {}", bad.channels),
            ));
        }
        let time: usize = parts.iter().map(|p| p.time).sum();
        let mut data = Vec::with_capacity(channels * time);
        for c in 0..channels {
            for p in parts {
                data.extend_from_slice(p.row(c));
            }
        }
        Ok(Self {
            channels,
            time,
            data,
        })
    }
}
