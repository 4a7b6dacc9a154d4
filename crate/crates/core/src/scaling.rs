//! Runtime versus dataset size on synthetic data.

use std::time::Instant;

use serde::Serialize;

use crate::anneal::{anneal, AnnealConfig};
use crate::error::{Error, Result};
use crate::synth::{generate, SynthSpec};

#[derive(Debug, Clone)]
pub struct ScalingConfig {
    pub sizes: Vec<usize>,
    pub repeats: usize,
    /// Points below this size are timed but left out of the fit.
    pub min_fit_size: usize,
    pub synth: SynthSpec,
    pub anneal: AnnealConfig,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        let mut anneal = AnnealConfig {
            k_max: 10,
            ..AnnealConfig::default()
        };
        // Same amount of EM work at every size, so timings reflect the
        // per-iteration cost rather than how quickly a run happens to converge.
        anneal.em.max_iterations = 10;
        anneal.em.rel_tolerance = 1e-300;
        ScalingConfig {
            sizes: vec![1_000, 10_000, 100_000, 1_000_000],
            repeats: 3,
            min_fit_size: 1_000,
            synth: SynthSpec::default(),
            anneal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingPoint {
    pub n: usize,
    pub median_seconds: f64,
    pub min_seconds: f64,
    pub max_seconds: f64,
    pub selected_k: usize,
}

impl ScalingPoint {
    /// `(max - min) / median` over the repeats.
    pub fn relative_spread(&self) -> f64 {
        (self.max_seconds - self.min_seconds) / self.median_seconds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub points: Vec<ScalingPoint>,
    /// Least-squares slope of log(time) against log(N).
    pub slope: f64,
}

impl ScalingReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,median_seconds,min_seconds,max_seconds,selected_k\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.n, p.median_seconds, p.min_seconds, p.max_seconds, p.selected_k
            ));
        }
        out
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Times a full annealing run at each size. Data generation is excluded.
pub fn run(config: &ScalingConfig, mut progress: impl FnMut(&ScalingPoint)) -> Result<ScalingReport> {
    if config.repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let mut points = Vec::with_capacity(config.sizes.len());
    for &n in &config.sizes {
        let spec = SynthSpec {
            num_records: n,
            ..config.synth.clone()
        };
        let (data, _) = generate(&spec)?;
        let mut times = Vec::with_capacity(config.repeats);
        let mut selected_k = 0;
        for _ in 0..config.repeats {
            let start = Instant::now();
            let out = anneal(&data, &config.anneal)?;
            times.push(start.elapsed().as_secs_f64());
            selected_k = out.trace.selected_k;
        }
        let point = ScalingPoint {
            n,
            min_seconds: times.iter().copied().fold(f64::INFINITY, f64::min),
            max_seconds: times.iter().copied().fold(0.0, f64::max),
            median_seconds: median(&mut times),
            selected_k,
        };
        progress(&point);
        points.push(point);
    }
    let fit: Vec<&ScalingPoint> = points.iter().filter(|p| p.n >= config.min_fit_size).collect();
    let slope = if fit.len() >= 2 {
        let x: Vec<f64> = fit.iter().map(|p| (p.n as f64).ln()).collect();
        let y: Vec<f64> = fit.iter().map(|p| p.median_seconds.ln()).collect();
        slope(&x, &y)
    } else {
        f64::NAN
    };
    Ok(ScalingReport { points, slope })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn slope_of_power_law() {
        let x: Vec<f64> = [1e3f64, 1e4, 1e5].iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = [1e3f64, 1e4, 1e5].iter().map(|v| (2e-6 * v.powf(1.5)).ln()).collect();
        assert!((slope(&x, &y) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn small_run_reports_every_size() {
        let config = ScalingConfig {
            sizes: vec![200, 400],
            repeats: 1,
            min_fit_size: 200,
            synth: SynthSpec {
                num_attributes: 4,
                cardinality: 3,
                num_rules: 2,
                ..SynthSpec::default()
            },
            anneal: AnnealConfig {
                k_max: 3,
                ..AnnealConfig::default()
            },
        };
        let mut seen = 0;
        let report = run(&config, |_| seen += 1).unwrap();
        assert_eq!(seen, 2);
        assert_eq!(report.points.len(), 2);
        assert!(report.slope.is_finite());
        assert!(report.to_csv().lines().count() == 3);
    }
}
