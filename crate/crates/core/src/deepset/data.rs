//! Training-sample types and the on-disk dataset format.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DVector, Vector3};

use super::ModelError;

/// Relative position and velocity of one neighbor, world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeState {
    pub dp: Vector3<f64>,
    pub dv: Vector3<f64>,
}

impl RelativeState {
    pub fn new(dp: Vector3<f64>, dv: Vector3<f64>) -> Self {
        Self { dp, dv }
    }

    /// Environment encoding: the world origin as a static pseudo-neighbor.
    pub fn environment(ego_p: &Vector3<f64>, ego_v: &Vector3<f64>) -> Self {
        Self { dp: -ego_p, dv: -ego_v }
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_vec(vec![
            self.dp.x, self.dp.y, self.dp.z, self.dv.x, self.dv.y, self.dv.z,
        ])
    }
}

/// One labeled observation: who observed, what they saw, what they felt.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub ego_type: String,
    /// Raw neighbor inputs per type; dimension must match the model.
    pub groups: BTreeMap<String, Vec<DVector<f64>>>,
    /// Measured residual force z component, N.
    pub target_faz: f64,
}

/// Sample collection plus chunk ids so validation splits respect
/// contiguous-time boundaries.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<TrainSample>,
    pub chunks: Vec<u32>,
}

impl Dataset {
    pub fn push(&mut self, sample: TrainSample, chunk: u32) {
        self.samples.push(sample);
        self.chunks.push(chunk);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn extend(&mut self, other: &Dataset) {
        let offset = self.chunks.iter().copied().max().map_or(0, |m| m + 1);
        self.samples.extend(other.samples.iter().cloned());
        self.chunks.extend(other.chunks.iter().map(|c| c + offset));
    }

    /// Writes the newline-delimited record format. The header carries the
    /// schema version and the generator seed; each record lists the ego
    /// type, group sizes, the flattened neighbor states and the target.
    pub fn write<W: Write>(&self, mut w: W, seed: u64, label: &str) -> std::io::Result<()> {
        writeln!(w, "#swarmlab-dataset v1 seed={seed} label={label}")?;
        for (sample, chunk) in self.samples.iter().zip(&self.chunks) {
            let mut fields: Vec<String> =
                vec![sample.ego_type.clone(), chunk.to_string(), sample.groups.len().to_string()];
            for (ty, members) in &sample.groups {
                fields.push(ty.clone());
                fields.push(members.len().to_string());
                for m in members {
                    for v in m.iter() {
                        fields.push(format!("{v:.17e}"));
                    }
                }
            }
            fields.push(format!("{:.17e}", sample.target_faz));
            writeln!(w, "{}", fields.join(" "))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, seed: u64, label: &str) -> std::io::Result<()> {
        let f = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(f), seed, label)
    }

    pub fn load(path: &Path, input_dim: usize) -> Result<Self, ModelError> {
        let f = std::fs::File::open(path)?;
        Self::read(BufReader::new(f), input_dim)
    }

    pub fn read<R: BufRead>(r: R, input_dim: usize) -> Result<Self, ModelError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| ModelError::Format("empty dataset file".into()))??;
        if !header.starts_with("#swarmlab-dataset v1") {
            return Err(ModelError::Format(format!("unrecognized header: {header}")));
        }
        let mut out = Dataset::default();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let mut next = |what: &str| {
                it.next().ok_or_else(|| ModelError::Format(format!("missing field: {what}")))
            };
            let ego_type = next("ego")?.to_string();
            let chunk: u32 = parse(next("chunk")?)?;
            let n_groups: usize = parse(next("n_groups")?)?;
            let mut groups = BTreeMap::new();
            for _ in 0..n_groups {
                let ty = next("type")?.to_string();
                let n: usize = parse(next("count")?)?;
                let mut members = Vec::with_capacity(n);
                for _ in 0..n {
                    let mut v = DVector::zeros(input_dim);
                    for d in 0..input_dim {
                        v[d] = parse(next("value")?)?;
                    }
                    members.push(v);
                }
                groups.insert(ty, members);
            }
            let target_faz: f64 = parse(next("target")?)?;
            out.push(TrainSample { ego_type, groups, target_faz }, chunk);
        }
        Ok(out)
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T, ModelError> {
    s.parse().map_err(|_| ModelError::Format(format!("bad field: {s}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(target: f64) -> TrainSample {
        let mut groups = BTreeMap::new();
        groups.insert(
            "small".to_string(),
            vec![RelativeState::new(Vector3::new(0.1, 0.2, 0.3), Vector3::new(-0.5, 0.0, 0.25)).to_vector()],
        );
        groups.insert("env".to_string(), vec![DVector::zeros(6)]);
        TrainSample { ego_type: "large".into(), groups, target_faz: target }
    }

    #[test]
    fn round_trips_exactly() {
        let mut ds = Dataset::default();
        ds.push(sample(-0.0123456789012345678), 0);
        ds.push(sample(1.0 / 3.0), 1);
        let mut buf = Vec::new();
        ds.write(&mut buf, 99, "test").unwrap();
        let back = Dataset::read(std::io::Cursor::new(&buf), 6).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.chunks, vec![0, 1]);
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            assert_eq!(a.ego_type, b.ego_type);
            assert_eq!(a.target_faz.to_bits(), b.target_faz.to_bits());
            assert_eq!(a.groups, b.groups);
        }
    }

    #[test]
    fn extend_keeps_chunks_disjoint() {
        let mut a = Dataset::default();
        a.push(sample(0.0), 0);
        a.push(sample(0.0), 1);
        let mut b = Dataset::default();
        b.push(sample(0.0), 0);
        a.extend(&b);
        assert_eq!(a.chunks, vec![0, 1, 2]);
    }
}
