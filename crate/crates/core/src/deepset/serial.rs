//! Binary model file, bit-exact on round trip.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{HeteroDeepSet, ModelError};
use crate::nn::Mlp;

const MAGIC: &[u8; 4] = b"HDS1";
const VERSION: u32 = 1;

impl HeteroDeepSet {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, self.input_dim as u32);
        put_u32(&mut out, self.hidden as u32);
        put_f64(&mut out, self.gamma);
        put_u32(&mut out, self.robot_types.len() as u32);
        for t in &self.robot_types {
            put_str(&mut out, t);
        }
        put_nets(&mut out, &self.phi);
        put_nets(&mut out, &self.rho);
        put_vec(&mut out, &self.input_mean);
        put_vec(&mut out, &self.input_scale);
        put_f64(&mut out, self.output_scale);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Cursor { bytes, pos: 0 };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ModelError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ModelError::Format(format!("unsupported version {version}")));
        }
        let input_dim = r.u32()? as usize;
        let hidden = r.u32()? as usize;
        let gamma = r.f64()?;
        let n_types = r.u32()? as usize;
        let mut robot_types = Vec::with_capacity(n_types);
        for _ in 0..n_types {
            robot_types.push(r.str()?);
        }
        let phi = r.nets()?;
        let rho = r.nets()?;
        let input_mean = r.vec()?;
        let input_scale = r.vec()?;
        let output_scale = r.f64()?;
        Ok(Self {
            input_dim,
            hidden,
            gamma,
            robot_types,
            phi,
            rho,
            input_mean,
            input_scale,
            output_scale,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_vec(out: &mut Vec<u8>, v: &DVector<f64>) {
    put_u32(out, v.len() as u32);
    for x in v.iter() {
        put_f64(out, *x);
    }
}

fn put_nets(out: &mut Vec<u8>, nets: &BTreeMap<String, Mlp>) {
    put_u32(out, nets.len() as u32);
    for (name, net) in nets {
        put_str(out, name);
        let sizes = net.layer_sizes();
        put_u32(out, sizes.len() as u32);
        for s in &sizes {
            put_u32(out, *s as u32);
        }
        for (w, b) in net.weights.iter().zip(&net.biases) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    put_f64(out, w[(r, c)]);
                }
            }
            for x in b.iter() {
                put_f64(out, *x);
            }
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn read_exact(&mut self, buf: &mut [u8]) -> Result<(), ModelError> {
        if self.pos + buf.len() > self.bytes.len() {
            return Err(ModelError::Format("truncated model file".into()));
        }
        buf.copy_from_slice(&self.bytes[self.pos..self.pos + buf.len()]);
        self.pos += buf.len();
        Ok(())
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn str(&mut self) -> Result<String, ModelError> {
        let n = self.u32()? as usize;
        let mut b = vec![0u8; n];
        self.read_exact(&mut b)?;
        String::from_utf8(b).map_err(|_| ModelError::Format("bad utf8".into()))
    }

    fn vec(&mut self) -> Result<DVector<f64>, ModelError> {
        let n = self.u32()? as usize;
        let mut v = DVector::zeros(n);
        for i in 0..n {
            v[i] = self.f64()?;
        }
        Ok(v)
    }

    fn nets(&mut self) -> Result<BTreeMap<String, Mlp>, ModelError> {
        let n = self.u32()? as usize;
        let mut out = BTreeMap::new();
        for _ in 0..n {
            let name = self.str()?;
            let n_sizes = self.u32()? as usize;
            let mut sizes = Vec::with_capacity(n_sizes);
            for _ in 0..n_sizes {
                sizes.push(self.u32()? as usize);
            }
            let mut weights = Vec::new();
            let mut biases = Vec::new();
            for pair in sizes.windows(2) {
                let (n_in, n_out) = (pair[0], pair[1]);
                let mut w = DMatrix::zeros(n_out, n_in);
                for r in 0..n_out {
                    for c in 0..n_in {
                        w[(r, c)] = self.f64()?;
                    }
                }
                let mut b = DVector::zeros(n_out);
                for i in 0..n_out {
                    b[i] = self.f64()?;
                }
                weights.push(w);
                biases.push(b);
            }
            out.insert(name, Mlp::from_parts(weights, biases));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = StdRng::seed_from_u64(77);
        let robot = vec!["large".to_string(), "small".to_string()];
        let phi = vec!["env".to_string(), "large".to_string(), "small".to_string()];
        let mut model = HeteroDeepSet::new_random(&robot, &phi, 6, 20, 4.0, &mut rng);
        model.input_mean = DVector::from_fn(6, |i, _| i as f64 * 0.1);
        model.input_scale = DVector::from_fn(6, |i, _| 1.0 + i as f64);
        let bytes = model.to_bytes();
        let back = HeteroDeepSet::from_bytes(&bytes).unwrap();
        assert_eq!(bytes, back.to_bytes());
        // spot-check an actual weight bit pattern
        let a = model.phi["small"].weights[1][(3, 2)];
        let b = back.phi["small"].weights[1][(3, 2)];
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn truncated_file_rejected() {
        let mut rng = StdRng::seed_from_u64(78);
        let model = HeteroDeepSet::new_random(
            &["small".to_string()],
            &["env".to_string(), "small".to_string()],
            6,
            10,
            4.0,
            &mut rng,
        );
        let bytes = model.to_bytes();
        assert!(HeteroDeepSet::from_bytes(&bytes[..bytes.len() / 2]).is_err());
        assert!(HeteroDeepSet::from_bytes(b"nope").is_err());
    }
}
