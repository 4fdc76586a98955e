//! Running observation statistics (Welford's algorithm) with a parallel
//! merge, so worker deltas can be combined after each collection phase in
//! any order without changing the result beyond roundoff.

use nalgebra::DVector;

const VAR_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    count: f64,
    mean: DVector<f64>,
    /// Sum of squared deviations from the mean (Welford's M2).
    m2: DVector<f64>,
}

impl Normalizer {
    pub fn new(dim: usize) -> Normalizer {
        Normalizer {
            count: 0.0,
            mean: DVector::zeros(dim),
            m2: DVector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Raw M2 accumulator (for persistence).
    pub fn m2_raw(&self) -> &DVector<f64> {
        &self.m2
    }

    /// Rebuild from persisted raw fields.
    pub fn from_raw(count: f64, mean: DVector<f64>, m2: DVector<f64>) -> Result<Normalizer, String> {
        if mean.len() != m2.len() {
            return Err("mean/m2 length mismatch".into());
        }
        if !count.is_finite() || count < 0.0 {
            return Err(format!("bad count {count}"));
        }
        if mean.iter().chain(m2.iter()).any(|v| !v.is_finite()) || m2.iter().any(|&v| v < 0.0) {
            return Err("non-finite or negative statistics".into());
        }
        Ok(Normalizer { count, mean, m2 })
    }

    pub fn update(&mut self, x: &DVector<f64>) {
        self.count += 1.0;
        let delta = x - &self.mean;
        self.mean += &delta / self.count;
        let delta2 = x - &self.mean;
        self.m2 += delta.component_mul(&delta2);
    }

    /// Chan et al. parallel combination of two Welford accumulators.
    pub fn merge(&mut self, other: &Normalizer) {
        if other.count == 0.0 {
            return;
        }
        if self.count == 0.0 {
            *self = other.clone();
            return;
        }
        let total = self.count + other.count;
        let delta = &other.mean - &self.mean;
        let corr = self.count * other.count / total;
        self.m2 += &other.m2 + delta.component_mul(&delta) * corr;
        self.mean += &delta * (other.count / total);
        self.count = total;
    }

    pub fn variance(&self) -> DVector<f64> {
        if self.count < 2.0 {
            DVector::from_element(self.dim(), 1.0)
        } else {
            self.m2.map(|m| (m / self.count).max(VAR_EPS))
        }
    }

    /// (x − mean)/std, clipped to ±10. With fewer than two samples the
    /// statistics are undefined and the input passes through (clipped).
    pub fn normalize(&self, x: &DVector<f64>) -> DVector<f64> {
        let var = self.variance();
        let mean: &DVector<f64> = if self.count < 2.0 {
            // zero mean before statistics exist
            return x.map(|v| v.clamp(-10.0, 10.0));
        } else {
            &self.mean
        };
        DVector::from_fn(x.len(), |i, _| {
            ((x[i] - mean[i]) / var[i].sqrt()).clamp(-10.0, 10.0)
        })
    }
}
