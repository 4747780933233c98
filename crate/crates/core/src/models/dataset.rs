use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub time: f64,
    pub state: Vec<f64>,
}

/// Time-ordered observations of one model realisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub model_id: String,
    pub discrete: bool,
    pub observations: Vec<Observation>,
}

/// Sidecar describing how a dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub model_id: String,
    #[serde(default)]
    pub theta_true: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub dt: Option<f64>,
}

impl Dataset {
    pub fn new(model_id: &str, discrete: bool, observations: Vec<Observation>) -> Result<Self> {
        let d = Self {
            model_id: model_id.to_string(),
            discrete,
            observations,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let obs = &self.observations;
        if obs.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "dataset needs at least 2 observations, got {}",
                obs.len()
            )));
        }
        let u = obs[0].state.len();
        if u == 0 {
            return Err(Error::InvalidArgument("observation state is empty".into()));
        }
        for (i, o) in obs.iter().enumerate() {
            if o.state.len() != u {
                return Err(Error::DimensionMismatch {
                    expected: u,
                    got: o.state.len(),
                });
            }
            if !o.time.is_finite() || o.state.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("observation {}", i + 1)));
            }
            if self.discrete && o.state.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "observation {} is not a nonnegative integer state",
                    i + 1
                )));
            }
            if i > 0 && !(o.time > obs[i - 1].time) {
                return Err(Error::InvalidArgument(format!(
                    "observation times must strictly increase (row {})",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.observations[0].state.len()
    }

    /// The conditioning pair `(x_{i−1}, x_i)` for factor `i ∈ 2..=n`.
    pub fn pair(&self, factor_index: usize) -> (&Observation, &Observation) {
        (
            &self.observations[factor_index - 2],
            &self.observations[factor_index - 1],
        )
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let u = self.state_dim();
        let mut header = String::from("time");
        for k in 1..=u {
            header.push_str(&format!(",s{k}"));
        }
        writeln!(w, "{header}")?;
        for o in &self.observations {
            let mut line = format_real(o.time);
            for v in &o.state {
                line.push(',');
                if self.discrete {
                    line.push_str(&format!("{}", *v as i64));
                } else {
                    line.push_str(&format_real(*v));
                }
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save(&self, csv_path: &Path, meta: &DatasetMeta) -> Result<()> {
        let f = BufWriter::new(File::create(csv_path)?);
        self.write_csv(f)?;
        let meta_path = csv_path.with_extension("json");
        let mut mf = BufWriter::new(File::create(meta_path)?);
        serde_json::to_writer_pretty(&mut mf, meta)?;
        writeln!(mf)?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R, model_id: &str, discrete: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("time") || headers.len() < 2 {
            return Err(Error::Parse(
                "dataset header must be `time,s1[,s2,...]`".into(),
            ));
        }
        for (k, h) in headers.iter().enumerate().skip(1) {
            if h != format!("s{k}") {
                return Err(Error::Parse(format!("unexpected dataset column {h:?}")));
            }
        }
        let mut observations = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {s:?}: {e}", row + 1)))
            };
            let time = parse(&rec[0])?;
            let state = rec.iter().skip(1).map(parse).collect::<Result<Vec<_>>>()?;
            observations.push(Observation { time, state });
        }
        Self::new(model_id, discrete, observations)
    }

    pub fn load(csv_path: &Path, discrete: bool) -> Result<(Self, DatasetMeta)> {
        let meta: DatasetMeta =
            serde_json::from_reader(File::open(csv_path.with_extension("json"))?)?;
        let data = Self::read_csv(File::open(csv_path)?, &meta.model_id, discrete)?;
        Ok((data, meta))
    }
}

/// Shortest decimal that round-trips to the same `f64`.
pub fn format_real(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_non_increasing_times() {
        let obs = vec![
            Observation {
                time: 1.0,
                state: vec![1.0],
            },
            Observation {
                time: 1.0,
                state: vec![2.0],
            },
        ];
        assert!(Dataset::new("x", false, obs).is_err());
    }

    #[test]
    fn rejects_empty_and_single() {
        assert!(Dataset::new("x", false, vec![]).is_err());
    }

    #[test]
    fn integers_written_as_integers() {
        let d = Dataset::new(
            "inar1",
            true,
            vec![
                Observation {
                    time: 0.0,
                    state: vec![10.0],
                },
                Observation {
                    time: 1.0,
                    state: vec![7.0],
                },
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "time,s1\n0.0,10\n1.0,7\n");
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(
            states in proptest::collection::vec(proptest::num::f64::NORMAL, 2..20),
        ) {
            let obs: Vec<Observation> = states
                .iter()
                .enumerate()
                .map(|(i, s)| Observation { time: i as f64 * 0.1, state: vec![*s, s / 3.0] })
                .collect();
            let d = Dataset::new("cir", false, obs).unwrap();
            let mut buf = Vec::new();
            d.write_csv(&mut buf).unwrap();
            let back = Dataset::read_csv(&buf[..], "cir", false).unwrap();
            for (a, b) in d.observations.iter().zip(&back.observations) {
                prop_assert_eq!(a.time.to_bits(), b.time.to_bits());
                for (x, y) in a.state.iter().zip(&b.state) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
