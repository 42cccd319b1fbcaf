use statrs::distribution::{ContinuousCDF, StudentsT};

use super::EvalError;

/// One (amount of data, accuracy) observation. Accuracy is unconstrained so
/// either fractions or percentages can be fitted.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingPoint {
    pub data_hours: f64,
    pub accuracy: f64,
    pub condition: String,
}

impl ScalingPoint {
    pub fn new(data_hours: f64, accuracy: f64, condition: impl Into<String>) -> Self {
        ScalingPoint {
            data_hours,
            accuracy,
            condition: condition.into(),
        }
    }
}

/// Ordinary least squares of accuracy on `log10(hours)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogLinearFit {
    /// Accuracy gained per tenfold increase in data.
    pub slope: f64,
    /// Predicted accuracy at one hour.
    pub intercept: f64,
    pub residuals: Vec<f64>,
    pub n: usize,
    pub x_mean: f64,
    pub sxx: f64,
    /// Range of `log10(hours)` covered by the data.
    pub x_range: (f64, f64),
    /// Residual standard error; `None` with fewer than three points.
    pub sigma: Option<f64>,
    /// Two-sided 97.5% Student-t quantile at `n - 2` degrees of freedom.
    pub t_crit: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    /// 95% confidence band of the fitted mean.
    pub band: Option<(f64, f64)>,
    /// The query lies outside the fitted data range.
    pub extrapolated: bool,
}

pub fn fit_loglinear(points: &[ScalingPoint]) -> Result<LogLinearFit, EvalError> {
    if points.len() < 2 {
        return Err(EvalError::Invalid("need at least two points".into()));
    }
    if let Some(p) = points
        .iter()
        .find(|p| !(p.data_hours > 0.0 && p.data_hours.is_finite()) || !p.accuracy.is_finite())
    {
        return Err(EvalError::Invalid(format!(
            "data_hours must be positive and finite, accuracy finite: ({}, {})",
            p.data_hours, p.accuracy
        )));
    }
    let n = points.len();
    let xs: Vec<f64> = points.iter().map(|p| p.data_hours.log10()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.accuracy).collect();
    let x_mean = xs.iter().sum::<f64>() / n as f64;
    let y_mean = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    if sxx == 0.0 || xs.iter().all(|&x| x == xs[0]) {
        return Err(EvalError::Singular);
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let residuals: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - (intercept + slope * x)).collect();
    let (sigma, t_crit) = if n >= 3 {
        let df = (n - 2) as f64;
        let sse: f64 = residuals.iter().map(|r| r * r).sum();
        let t = StudentsT::new(0.0, 1.0, df)
            .map_err(|e| EvalError::Invalid(e.to_string()))?
            .inverse_cdf(0.975);
        (Some((sse / df).sqrt()), Some(t))
    } else {
        (None, None)
    };
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(LogLinearFit {
        slope,
        intercept,
        residuals,
        n,
        x_mean,
        sxx,
        x_range: (lo, hi),
        sigma,
        t_crit,
    })
}

impl LogLinearFit {
    pub fn slope_se(&self) -> Option<f64> {
        self.sigma.map(|s| s / self.sxx.sqrt())
    }

    pub fn intercept_se(&self) -> Option<f64> {
        self.sigma
            .map(|s| s * (1.0 / self.n as f64 + self.x_mean.powi(2) / self.sxx).sqrt())
    }

    pub fn slope_ci(&self) -> Option<(f64, f64)> {
        let h = self.t_crit? * self.slope_se()?;
        Some((self.slope - h, self.slope + h))
    }

    pub fn intercept_ci(&self) -> Option<(f64, f64)> {
        let h = self.t_crit? * self.intercept_se()?;
        Some((self.intercept - h, self.intercept + h))
    }

    pub fn predict(&self, hours: f64) -> Prediction {
        let x = hours.log10();
        let mean = self.intercept + self.slope * x;
        let band = self.sigma.zip(self.t_crit).map(|(s, t)| {
            let h = t * s * (1.0 / self.n as f64 + (x - self.x_mean).powi(2) / self.sxx).sqrt();
            (mean - h, mean + h)
        });
        Prediction {
            mean,
            band,
            extrapolated: x < self.x_range.0 || x > self.x_range.1,
        }
    }
}

/// Whether `point` lies above the upper 95% band of `fit` at its data size.
/// Without a band (two-point fits) the fitted line itself is the threshold.
pub fn above_trend(point: &ScalingPoint, fit: &LogLinearFit) -> bool {
    let p = fit.predict(point.data_hours);
    let upper = p.band.map_or(p.mean, |(_, hi)| hi);
    point.accuracy > upper
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_decades() {
        let pts = [
            ScalingPoint::new(1.0, 2.0, "a"),
            ScalingPoint::new(10.0, 4.0, "a"),
            ScalingPoint::new(100.0, 6.0, "a"),
        ];
        let f = fit_loglinear(&pts).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 2.0).abs() < 1e-12);
        assert!(f.residuals.iter().all(|r| r.abs() < 1e-12));
        assert!(f.predict(1000.0).extrapolated);
        assert!(!f.predict(50.0).extrapolated);
    }

    #[test]
    fn t_quantile_matches_tables() {
        let pts: Vec<ScalingPoint> = (1..=12).map(|i| ScalingPoint::new(i as f64, (i * i) as f64, "")).collect();
        let f = fit_loglinear(&pts).unwrap();
        assert!((f.t_crit.unwrap() - 2.228).abs() < 1e-3);
    }

    #[test]
    fn degenerate_inputs() {
        let same = [ScalingPoint::new(5.0, 1.0, ""), ScalingPoint::new(5.0, 2.0, "")];
        assert_eq!(fit_loglinear(&same), Err(EvalError::Singular));
        assert!(fit_loglinear(&same[..1]).is_err());
        assert!(fit_loglinear(&[ScalingPoint::new(0.0, 1.0, ""), ScalingPoint::new(1.0, 1.0, "")]).is_err());
        let two = fit_loglinear(&[ScalingPoint::new(1.0, 1.0, ""), ScalingPoint::new(10.0, 2.0, "")]).unwrap();
        assert!(two.slope_ci().is_none() && two.predict(3.0).band.is_none());
    }

    #[test]
    fn trend_membership() {
        let pts = [
            ScalingPoint::new(1.0, 0.10, ""),
            ScalingPoint::new(10.0, 0.21, ""),
            ScalingPoint::new(100.0, 0.29, ""),
            ScalingPoint::new(1000.0, 0.41, ""),
        ];
        let f = fit_loglinear(&pts).unwrap();
        let on = f.predict(30.0).mean;
        assert!(!above_trend(&ScalingPoint::new(30.0, on, ""), &f));
        assert!(!above_trend(&ScalingPoint::new(30.0, on - 0.05, ""), &f));
        let hi = f.predict(30.0).band.unwrap().1;
        assert!(above_trend(&ScalingPoint::new(30.0, hi + 1e-9, ""), &f));
    }
}
