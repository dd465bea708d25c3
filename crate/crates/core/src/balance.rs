//! Move-balance emulator: how unavailable proposals and their handling
//! shift the mix of moves actually executed away from the proposal
//! probabilities. Standalone — no trees involved.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rjmcmc::Strategy;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceSpec {
    pub p_b: f64,
    pub p_d: f64,
    pub p_c: f64,
    /// Absolute probability mass of unavailable births (`<= p_b`).
    pub p_bu: f64,
    /// Absolute probability mass of unavailable changes (`<= p_c`).
    pub p_cu: f64,
    pub mode: Strategy,
    /// Sweeping: share of unavailable changes that are resampled rather
    /// than turned into deaths.
    pub case3_frac: f64,
    /// Executed moves to emulate.
    pub draws: usize,
}

impl BalanceSpec {
    pub fn standard(p: [f64; 3], p_bu: f64, p_cu: f64, draws: usize) -> Self {
        BalanceSpec {
            p_b: p[0],
            p_d: p[1],
            p_c: p[2],
            p_bu,
            p_cu,
            mode: Strategy::Standard,
            case3_frac: 0.0,
            draws,
        }
    }

    pub fn sweeping(p: [f64; 3], p_bu: f64, p_cu: f64, case3_frac: f64, draws: usize) -> Self {
        BalanceSpec {
            mode: Strategy::Sweeping,
            case3_frac,
            ..BalanceSpec::standard(p, p_bu, p_cu, draws)
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let p = [self.p_b, self.p_d, self.p_c, self.p_bu, self.p_cu, self.case3_frac];
        if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err("probabilities must be finite and >= 0".into());
        }
        let total = self.p_b + self.p_d + self.p_c;
        if (total - 1.0).abs() > 1e-12 {
            return Err(format!("p_b + p_d + p_c must be 1, got {total}"));
        }
        if self.p_bu > self.p_b {
            return Err(format!("p_bu = {} exceeds p_b = {}", self.p_bu, self.p_b));
        }
        if self.p_cu > self.p_c {
            return Err(format!("p_cu = {} exceeds p_c = {}", self.p_cu, self.p_c));
        }
        if self.case3_frac > 1.0 {
            return Err(format!("case3_frac must lie in [0, 1], got {}", self.case3_frac));
        }
        if self.draws == 0 {
            return Err("draws must be at least 1".into());
        }
        if self.resampled_mass() >= 1.0 {
            return Err("every attempt would be resampled".into());
        }
        Ok(())
    }

    /// Probability that one attempt is thrown back for another draw.
    fn resampled_mass(&self) -> f64 {
        match self.mode {
            Strategy::Standard => self.p_bu + self.p_cu,
            Strategy::Sweeping => self.p_bu + self.case3_frac * self.p_cu,
        }
    }

    /// Closed-form executed (birth, death, change) fractions.
    pub fn analytic(&self) -> [f64; 3] {
        let z = 1.0 - self.resampled_mass();
        let death = match self.mode {
            Strategy::Standard => self.p_d,
            Strategy::Sweeping => self.p_d + (1.0 - self.case3_frac) * self.p_cu,
        };
        [(self.p_b - self.p_bu) / z, death / z, (self.p_c - self.p_cu) / z]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceResult {
    /// Realized (birth, death, change) fractions of executed moves.
    pub realized: [f64; 3],
    /// Resampled attempts over all attempts.
    pub resample_fraction: f64,
    pub attempts: u64,
}

pub fn emulate(spec: &BalanceSpec, seed: u64) -> Result<BalanceResult, String> {
    spec.validate()?;
    let mut rng = seed::rng(seed::derive(seed, seed::Stream::Emulator, 0));
    let mut executed = [0u64; 3];
    let mut attempts = 0u64;
    let mut done = 0;
    while done < spec.draws {
        attempts += 1;
        let u: f64 = rng.random();
        let slot = if u < spec.p_b {
            // unavailable with conditional probability p_bu / p_b
            if u < spec.p_bu {
                None
            } else {
                Some(0)
            }
        } else if u < spec.p_b + spec.p_d {
            Some(1)
        } else if u < spec.p_b + spec.p_d + spec.p_cu {
            match spec.mode {
                Strategy::Standard => None,
                Strategy::Sweeping if rng.random::<f64>() < spec.case3_frac => None,
                Strategy::Sweeping => Some(1),
            }
        } else {
            Some(2)
        };
        if let Some(s) = slot {
            executed[s] += 1;
            done += 1;
        }
    }
    let n = spec.draws as f64;
    Ok(BalanceResult {
        realized: executed.map(|c| c as f64 / n),
        resample_fraction: (attempts - spec.draws as u64) as f64 / attempts as f64,
        attempts,
    })
}

/// `move,proposed,realized,analytic` — one row per move type.
pub fn write_csv<W: Write>(out: W, spec: &BalanceSpec, r: &BalanceResult) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["move", "proposed", "realized", "analytic"])?;
    let proposed = [spec.p_b, spec.p_d, spec.p_c];
    let analytic = spec.analytic();
    for (i, name) in ["birth", "death", "change"].iter().enumerate() {
        w.write_record([
            name.to_string(),
            format!("{:.6}", proposed[i]),
            format!("{:.6}", r.realized[i]),
            format!("{:.6}", analytic[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn within_3se(spec: &BalanceSpec, r: &BalanceResult) {
        let n = spec.draws as f64;
        for (got, want) in r.realized.iter().zip(spec.analytic()) {
            let se = (want * (1.0 - want) / n).sqrt();
            assert!((got - want).abs() <= 3.0 * se + 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn standard_case() {
        let spec = BalanceSpec::standard([0.2, 0.2, 0.6], 0.1, 0.3, 10_000);
        let a = spec.analytic();
        assert!((a[0] - 1.0 / 6.0).abs() < 1e-12);
        assert!((a[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((a[2] - 0.5).abs() < 1e-12);
        let r = emulate(&spec, 7).unwrap();
        within_3se(&spec, &r);
    }

    #[test]
    fn sweeping_case() {
        let spec = BalanceSpec::sweeping([0.2, 0.2, 0.6], 0.07, 0.2, 0.1, 10_000);
        let a = spec.analytic();
        assert!((a[0] - 0.13 / 0.91).abs() < 1e-12);
        assert!((a[1] - 0.38 / 0.91).abs() < 1e-12);
        within_3se(&spec, &emulate(&spec, 8).unwrap());
    }

    #[test]
    fn no_unavailability_is_identity() {
        let spec = BalanceSpec::standard([0.1, 0.3, 0.6], 0.0, 0.0, 20_000);
        assert_eq!(spec.analytic(), [0.1, 0.3, 0.6]);
        let r = emulate(&spec, 3).unwrap();
        within_3se(&spec, &r);
        assert_eq!(r.resample_fraction, 0.0);
    }

    #[test]
    fn invalid_specs() {
        assert!(BalanceSpec::standard([0.2, 0.2, 0.6], 0.3, 0.0, 10).validate().is_err());
        assert!(BalanceSpec::standard([0.2, 0.2, 0.6], 0.0, 0.7, 10).validate().is_err());
        assert!(BalanceSpec::standard([0.2, 0.2, 0.6], 0.0, 0.0, 0).validate().is_err());
        assert!(BalanceSpec::standard([0.2, 0.2, 0.5], 0.0, 0.0, 10).validate().is_err());
        assert!(BalanceSpec::sweeping([0.2, 0.2, 0.6], 0.0, 0.1, 1.5, 10).validate().is_err());
    }

    #[test]
    fn deterministic() {
        let spec = BalanceSpec::standard([0.2, 0.2, 0.6], 0.1, 0.3, 1000);
        assert_eq!(emulate(&spec, 1).unwrap(), emulate(&spec, 1).unwrap());
    }
}
