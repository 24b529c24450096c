use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Load and PV multipliers on a uniform time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayProfile {
    /// Minutes after midnight.
    pub minutes: Vec<u32>,
    pub load_mult: Vec<f64>,
    pub pv_mult: Vec<f64>,
}

#[derive(Deserialize)]
struct ProfileRow {
    time: String,
    load_mult: f64,
    pv_mult: f64,
}

fn parse_time(s: &str) -> Option<u32> {
    let (h, m) = s.trim().split_once(':')?;
    let (h, m): (u32, u32) = (h.parse().ok()?, m.parse().ok()?);
    (h < 24 && m < 60).then_some(h * 60 + m)
}

pub fn format_time(minutes: u32) -> String {
    format!("{:02}:{:02}", minutes / 60, minutes % 60)
}

impl DayProfile {
    pub fn new(minutes: Vec<u32>, load_mult: Vec<f64>, pv_mult: Vec<f64>) -> Result<Self, ModelError> {
        let p = Self { minutes, load_mult, pv_mult };
        p.validate()?;
        Ok(p)
    }

    /// Constant multipliers from `start` to `end` inclusive.
    pub fn flat(start: u32, end: u32, step: u32, load: f64, pv: f64) -> Result<Self, ModelError> {
        let minutes: Vec<u32> = (start..=end).step_by(step.max(1) as usize).collect();
        let n = minutes.len();
        Self::new(minutes, vec![load; n], vec![pv; n])
    }

    /// Reads `time,load_mult,pv_mult` rows with `HH:MM` times.
    pub fn from_reader<R: Read>(r: R) -> Result<Self, ModelError> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let (mut minutes, mut load, mut pv) = (Vec::new(), Vec::new(), Vec::new());
        for (k, row) in rd.deserialize::<ProfileRow>().enumerate() {
            let row = row.map_err(|e| ModelError::Config(format!("profile row {}: {e}", k + 1)))?;
            let t = parse_time(&row.time)
                .ok_or_else(|| ModelError::Config(format!("profile row {}: bad time {:?}", k + 1, row.time)))?;
            minutes.push(t);
            load.push(row.load_mult);
            pv.push(row.pv_mult);
        }
        Self::new(minutes, load, pv)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| ModelError::Config(format!("{}: {e}", path.display())))?;
        Self::from_reader(f)
    }

    pub fn len(&self) -> usize {
        self.minutes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutes.is_empty()
    }

    /// Grid spacing in minutes (0 for a single point).
    pub fn step(&self) -> u32 {
        if self.minutes.len() < 2 {
            0
        } else {
            self.minutes[1] - self.minutes[0]
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.minutes.is_empty() {
            return Err(ModelError::Config("profile is empty".into()));
        }
        if self.load_mult.len() != self.minutes.len() || self.pv_mult.len() != self.minutes.len() {
            return Err(ModelError::Config("profile columns differ in length".into()));
        }
        if let Some(v) = self.load_mult.iter().chain(&self.pv_mult).find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(ModelError::Config(format!("profile multiplier {v} must be finite and non-negative")));
        }
        let step = self.step();
        if self.minutes.len() > 1 && step == 0 {
            return Err(ModelError::Config("profile times must increase".into()));
        }
        for w in self.minutes.windows(2) {
            if w[1] <= w[0] || w[1] - w[0] != step {
                return Err(ModelError::Config(format!(
                    "profile grid is not uniform at {}",
                    format_time(w[1])
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_checks_the_grid() {
        let p = DayProfile::from_reader("time,load_mult,pv_mult\n06:00,0.5,0.1\n06:15,0.55,0.2\n06:30,0.6,0.4\n".as_bytes())
            .unwrap();
        assert_eq!(p.minutes, vec![360, 375, 390]);
        assert_eq!(p.step(), 15);
        assert!(DayProfile::from_reader("time,load_mult,pv_mult\n06:00,0.5,0.1\n06:20,0.5,0.1\n06:30,0.5,0.1\n".as_bytes()).is_err());
        assert!(DayProfile::from_reader("time,load_mult,pv_mult\n06:00,-1,0.1\n".as_bytes()).is_err());
        assert!(DayProfile::from_reader("time,load_mult,pv_mult\n6h,1,0.1\n".as_bytes()).is_err());
        assert_eq!(format_time(615), "10:15");
    }
}
