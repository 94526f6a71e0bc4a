use std::io::Write;

use crate::error::{Error, Result};

/// Mean of the most recent `min(window, t)` values at every position `t`.
pub fn moving_average(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::config("moving-average window must be at least 1"));
    }
    Ok((0..values.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(window);
            let w = &values[lo..=t];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect())
}

/// `(step, value)` pairs with strictly increasing steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricTrace {
    steps: Vec<u64>,
    values: Vec<f64>,
}

impl MetricTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Steps numbered from 1.
    pub fn from_values(values: &[f64]) -> Self {
        MetricTrace {
            steps: (1..=values.len() as u64).collect(),
            values: values.to_vec(),
        }
    }

    pub fn push(&mut self, step: u64, value: f64) -> Result<()> {
        if let Some(&last) = self.steps.last() {
            if step <= last {
                return Err(Error::data(format!(
                    "metric step {step} does not follow {last}"
                )));
            }
        }
        self.steps.push(step);
        self.values.push(value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[u64] {
        &self.steps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.is_empty()).then(|| self.values.iter().sum::<f64>() / self.len() as f64)
    }

    pub fn smoothed(&self, window: usize) -> Result<Vec<f64>> {
        moving_average(&self.values, window)
    }

    /// `step,value,moving_average` with a header row.
    pub fn write_csv<W: Write>(&self, window: usize, w: W) -> Result<()> {
        let smooth = self.smoothed(window)?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "value", "moving_average"])?;
        for ((s, v), m) in self.steps.iter().zip(&self.values).zip(smooth) {
            out.write_record([s.to_string(), v.to_string(), m.to_string()])?;
        }
        out.flush().map_err(|e| Error::io("<metric csv>", e))?;
        Ok(())
    }
}
