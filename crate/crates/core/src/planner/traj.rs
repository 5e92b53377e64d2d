//! Uniform-step trajectory tables, the common currency between the two
//! planning stages, the controller and the simulator.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::dynamics::PlanState;

/// One knot: state at `t`, action held until the next knot, and the
/// predicted interaction force stored in the state.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub state: PlanState,
    pub u: Vector3<f64>,
}

/// Fixed-step trajectory. The final knot carries a null action.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn new(dt: f64) -> Self {
        Self { dt, points: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn duration(&self) -> f64 {
        if self.points.is_empty() {
            0.0
        } else {
            self.dt * (self.points.len() - 1) as f64
        }
    }

    /// Knot at index `k`, clamped to the final state beyond the horizon.
    pub fn at(&self, k: usize) -> &TrajectoryPoint {
        let k = k.min(self.points.len() - 1);
        &self.points[k]
    }

    /// Linear interpolation of position and velocity at time `t`.
    pub fn sample(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        assert!(!self.points.is_empty());
        if t <= 0.0 {
            return (self.points[0].state.p, self.points[0].state.v);
        }
        let idx = (t / self.dt).floor() as usize;
        if idx + 1 >= self.points.len() {
            let last = self.points.last().unwrap();
            return (last.state.p, last.state.v);
        }
        let frac = (t - idx as f64 * self.dt) / self.dt;
        let a = &self.points[idx].state;
        let b = &self.points[idx + 1].state;
        (a.p + frac * (b.p - a.p), a.v + frac * (b.v - a.v))
    }

    /// Pads with the final state and null actions out to `len` knots.
    pub fn extend_to(&mut self, len: usize) {
        if self.points.is_empty() {
            return;
        }
        let last = *self.points.last().unwrap();
        while self.points.len() < len {
            self.points.push(TrajectoryPoint { t: 0.0, state: last.state, u: Vector3::zeros() });
        }
        // normalize timestamps onto the uniform grid
        for (k, pt) in self.points.iter_mut().enumerate() {
            pt.t = k as f64 * self.dt;
        }
        if let Some(p) = self.points.last_mut() {
            p.u = Vector3::zeros();
        }
    }

    /// Column order: t, p, v, u, fa (13 columns).
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "#swarmlab-trajectory v1 dt={:.17e}", self.dt)?;
        writeln!(w, "t,px,py,pz,vx,vy,vz,ux,uy,uz,fax,fay,faz")?;
        for pt in &self.points {
            let s = &pt.state;
            writeln!(
                w,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                pt.t, s.p.x, s.p.y, s.p.z, s.v.x, s.v.y, s.v.z, pt.u.x, pt.u.y, pt.u.z,
                s.fa.x, s.fa.y, s.fa.z
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> std::io::Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv<R: BufRead>(r: R) -> std::io::Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad("empty trajectory file"))??;
        let dt: f64 = header
            .strip_prefix("#swarmlab-trajectory v1 dt=")
            .ok_or_else(|| bad("bad trajectory header"))?
            .parse()
            .map_err(|_| bad("bad dt"))?;
        let mut out = Trajectory::new(dt);
        for line in lines {
            let line = line?;
            if line.starts_with('t') || line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.parse().map_err(|_| bad("bad number")))
                .collect::<Result<_, _>>()?;
            if vals.len() != 13 {
                return Err(bad("expected 13 columns"));
            }
            out.points.push(TrajectoryPoint {
                t: vals[0],
                state: PlanState {
                    p: Vector3::new(vals[1], vals[2], vals[3]),
                    v: Vector3::new(vals[4], vals[5], vals[6]),
                    fa: Vector3::new(vals[10], vals[11], vals[12]),
                },
                u: Vector3::new(vals[7], vals[8], vals[9]),
            });
        }
        Ok(out)
    }

    pub fn load_csv(path: &Path) -> std::io::Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

fn bad(msg: &str) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo() -> Trajectory {
        let mut t = Trajectory::new(0.1);
        for k in 0..5 {
            t.points.push(TrajectoryPoint {
                t: k as f64 * 0.1,
                state: PlanState {
                    p: Vector3::new(k as f64, 0.0, 1.0),
                    v: Vector3::new(10.0, 0.0, 0.0),
                    fa: Vector3::new(0.0, 0.0, -0.01 * k as f64),
                },
                u: Vector3::new(0.0, 0.1, 0.0),
            });
        }
        t
    }

    #[test]
    fn interpolation_is_linear() {
        let t = demo();
        let (p, v) = t.sample(0.15);
        assert!((p.x - 1.5).abs() < 1e-12);
        assert_eq!(v.x, 10.0);
        let (p_end, _) = t.sample(99.0);
        assert_eq!(p_end.x, 4.0);
    }

    #[test]
    fn clamped_indexing() {
        let t = demo();
        assert_eq!(t.at(100).state.p.x, 4.0);
    }

    #[test]
    fn extend_pads_with_null_actions() {
        let mut t = demo();
        t.extend_to(8);
        assert_eq!(t.len(), 8);
        assert_eq!(t.points[7].state.p, t.points[4].state.p);
        assert_eq!(t.points[7].u, Vector3::zeros());
        assert!((t.points[7].t - 0.7).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_bit_exact() {
        let t = demo();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = Trajectory::read_csv(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(back.len(), t.len());
        for (a, b) in t.points.iter().zip(&back.points) {
            assert_eq!(a.state.p, b.state.p);
            assert_eq!(a.state.fa.z.to_bits(), b.state.fa.z.to_bits());
        }
    }
}
