//! Per-operator datasets and their on-disk format.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::Grid1D;
use super::ic::InitialConditionSpec;
use super::pde::{calibrate_dt, solve_pde_with_dt, PdeSpec, SELF_CONVERGENCE_TOL};
use super::spectral::FourierInterpolant;
use crate::autodiff::checkpoint::{read_f64s, read_u32};
use crate::autodiff::Matrix;
use crate::models::FunctionBatch;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"MODNODS1";
const VERSION: u32 = 1;
/// Rejected draws tolerated per sample slot.
pub const MAX_REJECTIONS: usize = 10;
const CALIBRATION_PROBES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One operator: equation, input distribution and discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub pde: PdeSpec,
    pub ic: InitialConditionSpec,
    pub grid: Grid1D,
    /// Constant added to the sampled initial condition before solving. The
    /// branch input is the sample without the offset.
    #[serde(default)]
    pub ic_offset: f64,
}

impl OperatorSpec {
    pub fn validate(&self) -> Result<()> {
        self.pde.validate()?;
        self.grid.validate()?;
        self.ic.validate(self.grid.length)?;
        if !self.ic_offset.is_finite() {
            return Err(Error::config("ic_offset must be finite"));
        }
        Ok(())
    }
}

/// Periodic query mesh `x_j = (j + offset) L / M`, optionally crossed with
/// a list of times (time-major ordering).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryMesh {
    pub n_points: usize,
    /// Shift in units of the mesh spacing; `0.5` gives the cell midpoints.
    #[serde(default)]
    pub offset: f64,
    /// `None`: the trunk sees `x` only and targets are taken at `T`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
}

impl QueryMesh {
    pub fn spatial(n_points: usize, offset: f64) -> Self {
        QueryMesh {
            n_points,
            offset,
            times: None,
        }
    }

    pub fn with_times(mut self, times: Vec<f64>) -> Self {
        self.times = Some(times);
        self
    }

    pub fn validate(&self, pde: &PdeSpec) -> Result<()> {
        if self.n_points == 0 {
            return Err(Error::config("query mesh needs at least one point"));
        }
        if !(0.0..1.0).contains(&self.offset) {
            return Err(Error::config(format!("mesh offset must lie in [0, 1), got {}", self.offset)));
        }
        if let Some(ts) = &self.times {
            if ts.is_empty() {
                return Err(Error::config("time list is empty"));
            }
            let mut prev = 0.0;
            for &t in ts {
                if !(t >= prev) || t > pde.final_time {
                    return Err(Error::config(format!(
                        "query times must be sorted within [0, {}]",
                        pde.final_time
                    )));
                }
                prev = t;
            }
        }
        Ok(())
    }

    pub fn query_dim(&self) -> usize {
        if self.times.is_some() {
            2
        } else {
            1
        }
    }

    pub fn xs(&self, length: f64) -> Vec<f64> {
        let h = length / self.n_points as f64;
        (0..self.n_points).map(|j| (j as f64 + self.offset) * h).collect()
    }

    /// Snapshot times the solver must produce.
    pub fn save_times(&self, pde: &PdeSpec) -> Vec<f64> {
        self.times.clone().unwrap_or_else(|| vec![pde.final_time])
    }

    /// `n_q × d` coordinates.
    pub fn points(&self, length: f64) -> Matrix {
        let xs = self.xs(length);
        match &self.times {
            None => Matrix::column_vector(&xs),
            Some(ts) => {
                let mut m = Matrix::zeros(ts.len() * xs.len(), 2);
                for (a, &t) in ts.iter().enumerate() {
                    for (b, &x) in xs.iter().enumerate() {
                        let r = a * xs.len() + b;
                        m.set(r, 0, x);
                        m.set(r, 1, t);
                    }
                }
                m
            }
        }
    }

    pub fn len(&self) -> usize {
        self.n_points * self.times.as_ref().map_or(1, |t| t.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Grid indices where input functions are observed.
pub fn equispaced_sensors(grid: &Grid1D, n_sensors: usize) -> Result<Vec<usize>> {
    if n_sensors == 0 || grid.n_points % n_sensors != 0 {
        return Err(Error::config(format!(
            "{n_sensors} sensors do not divide a {}-point grid",
            grid.n_points
        )));
    }
    let stride = grid.n_points / n_sensors;
    Ok((0..n_sensors).map(|j| j * stride).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ShardMeta {
    operator_id: usize,
    operator: OperatorSpec,
    sensors: Vec<usize>,
    mesh: QueryMesh,
    split: Split,
    dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetShard {
    pub operator_id: usize,
    pub operator: OperatorSpec,
    /// Sensor grid indices.
    pub sensors: Vec<usize>,
    pub mesh: QueryMesh,
    pub split: Split,
    /// Time step used for every solve in the shard.
    pub dt: f64,
    /// `N_u × N_s` sensor values.
    pub inputs: Matrix,
    /// `n_q × d` query coordinates shared by all samples.
    pub points: Matrix,
    /// `N_u × n_q` solution values.
    pub targets: Matrix,
}

impl DatasetShard {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sensor_locations(&self) -> Vec<f64> {
        let x = self.operator.grid.points();
        self.sensors.iter().map(|&i| x[i]).collect()
    }

    pub fn to_function_batch(&self) -> Result<FunctionBatch> {
        FunctionBatch::shared(self.inputs.clone(), self.points.clone(), self.targets.clone())
    }

    /// First `n` samples.
    pub fn truncated(&self, n: usize) -> Result<DatasetShard> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        let mut s = self.clone();
        s.inputs = self.inputs.select_rows(&idx)?;
        s.targets = self.targets.select_rows(&idx)?;
        Ok(s)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let meta = ShardMeta {
            operator_id: self.operator_id,
            operator: self.operator.clone(),
            sensors: self.sensors.clone(),
            mesh: self.mesh.clone(),
            split: self.split,
            dt: self.dt,
        };
        let json = serde_json::to_vec(&meta)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for m in [&self.inputs, &self.points, &self.targets] {
            w.write_all(&(m.rows() as u32).to_le_bytes())?;
            w.write_all(&(m.cols() as u32).to_le_bytes())?;
            for v in m.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<DatasetShard> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a dataset shard (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported shard version {version}")));
        }
        let len = read_u32(r)? as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let meta: ShardMeta = serde_json::from_slice(&json)?;
        let mut mats = Vec::with_capacity(3);
        for _ in 0..3 {
            let rows = read_u32(r)? as usize;
            let cols = read_u32(r)? as usize;
            let data = read_f64s(r, rows * cols)?;
            mats.push(Matrix::from_vec(rows, cols, data)?);
        }
        let targets = mats.pop().unwrap();
        let points = mats.pop().unwrap();
        let inputs = mats.pop().unwrap();
        if inputs.rows() != targets.rows() || points.rows() != targets.cols() {
            return Err(Error::Format("inconsistent block sizes".into()));
        }
        Ok(DatasetShard {
            operator_id: meta.operator_id,
            operator: meta.operator,
            sensors: meta.sensors,
            mesh: meta.mesh,
            split: meta.split,
            dt: meta.dt,
            inputs,
            points,
            targets,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<DatasetShard> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        DatasetShard::read(&mut f)
    }
}

/// Values of solver snapshots on the query mesh, time-major.
fn sample_on_mesh(snapshots: &Matrix, grid: &Grid1D, mesh: &QueryMesh) -> Vec<f64> {
    let n = grid.n_points;
    let m = mesh.n_points;
    let aligned = mesh.offset == 0.0 && n % m == 0;
    let xs = mesh.xs(grid.length);
    let mut out = Vec::with_capacity(snapshots.rows() * m);
    for r in 0..snapshots.rows() {
        let row = snapshots.row(r);
        if aligned {
            out.extend(row.iter().step_by(n / m));
        } else {
            out.extend(FourierInterpolant::new(row, grid.length).eval_many(&xs));
        }
    }
    out
}

/// Samples initial conditions, solves, and records sensor inputs with
/// targets on `mesh`. Draws violating the equation's admissibility check or
/// making the solver diverge are replaced, up to [`MAX_REJECTIONS`] per slot.
pub fn build_shard<R: Rng + ?Sized>(
    operator_id: usize,
    op: &OperatorSpec,
    n_functions: usize,
    sensors: &[usize],
    mesh: &QueryMesh,
    rng: &mut R,
    split: Split,
) -> Result<DatasetShard> {
    op.validate()?;
    mesh.validate(&op.pde)?;
    if n_functions == 0 {
        return Err(Error::config("a shard needs at least one function"));
    }
    if sensors.is_empty() || sensors.iter().any(|&s| s >= op.grid.n_points) {
        return Err(Error::config("sensor indices must be non-empty and on the grid"));
    }
    let grid = op.grid;
    let x = grid.points();
    let save_times = mesh.save_times(&op.pde);

    let draw = |rng: &mut R| -> Result<(Vec<f64>, Vec<f64>)> {
        for _ in 0..=MAX_REJECTIONS {
            let raw = op.ic.draw(rng).eval_many(&x, grid.length);
            let shifted: Vec<f64> = raw.iter().map(|v| v + op.ic_offset).collect();
            if op.pde.admissible(&shifted, &grid) {
                return Ok((raw, shifted));
            }
        }
        Err(Error::config(format!(
            "{}: more than {MAX_REJECTIONS} inadmissible initial conditions in a row",
            op.pde.equation.name()
        )))
    };

    let mut ics = Vec::with_capacity(n_functions);
    for _ in 0..n_functions {
        ics.push(draw(rng)?);
    }
    let probes: Vec<Vec<f64>> = ics.iter().take(CALIBRATION_PROBES).map(|p| p.1.clone()).collect();
    let dt = calibrate_dt(&op.pde, &probes, &grid, &save_times, SELF_CONVERGENCE_TOL)?;

    let n_q = mesh.len();
    let mut inputs = Matrix::zeros(n_functions, sensors.len());
    let mut targets = Matrix::zeros(n_functions, n_q);
    for (i, slot) in ics.into_iter().enumerate() {
        let (mut raw, mut shifted) = slot;
        let mut rejections = 0;
        let snaps = loop {
            match solve_pde_with_dt(&op.pde, &shifted, &grid, &save_times, dt) {
                Ok(s) => break s,
                Err(Error::SolverDivergence { equation, time }) => {
                    rejections += 1;
                    if rejections > MAX_REJECTIONS {
                        return Err(Error::SolverDivergence { equation, time });
                    }
                    (raw, shifted) = draw(rng)?;
                }
                Err(e) => return Err(e),
            }
        };
        for (c, &s) in sensors.iter().enumerate() {
            inputs.set(i, c, raw[s]);
        }
        targets.row_mut(i).copy_from_slice(&sample_on_mesh(&snaps, &grid, mesh));
    }

    Ok(DatasetShard {
        operator_id,
        operator: op.clone(),
        sensors: sensors.to_vec(),
        mesh: mesh.clone(),
        split,
        dt,
        inputs,
        points: mesh.points(grid.length),
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::pde::Equation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn advection_op() -> OperatorSpec {
        OperatorSpec {
            pde: PdeSpec::new(Equation::Advection, 0.1),
            ic: InitialConditionSpec::gaussian_mix_b(),
            grid: Grid1D::new(1.0, 32).unwrap(),
            ic_offset: 0.0,
        }
    }

    #[test]
    fn single_function_shard() {
        let op = advection_op();
        let sensors = equispaced_sensors(&op.grid, 8).unwrap();
        let mesh = QueryMesh::spatial(16, 0.0);
        let s = build_shard(0, &op, 1, &sensors, &mesh, &mut ChaCha8Rng::seed_from_u64(1), Split::Train).unwrap();
        assert_eq!(s.inputs.rows(), 1);
        assert_eq!(s.inputs.cols(), 8);
        assert_eq!(s.targets.cols(), 16);
        assert_eq!(s.to_function_batch().unwrap().len(), 1);
    }

    #[test]
    fn aligned_mesh_targets_match_the_solver() {
        let op = advection_op();
        let sensors = equispaced_sensors(&op.grid, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let on_grid = build_shard(0, &op, 2, &sensors, &QueryMesh::spatial(32, 0.0), &mut rng, Split::Train).unwrap();
        // Same draws, mesh at every second grid point through interpolation
        // with a tiny offset versus direct subsampling.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let half = build_shard(0, &op, 2, &sensors, &QueryMesh::spatial(16, 0.0), &mut rng, Split::Train).unwrap();
        for i in 0..2 {
            for j in 0..16 {
                assert_eq!(half.targets.get(i, j), on_grid.targets.get(i, 2 * j));
            }
        }
    }

    #[test]
    fn offset_mesh_matches_interpolated_grid() {
        let op = advection_op();
        let sensors = equispaced_sensors(&op.grid, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fine = build_shard(0, &op, 1, &sensors, &QueryMesh::spatial(32, 0.0), &mut rng, Split::Train).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mid = build_shard(0, &op, 1, &sensors, &QueryMesh::spatial(16, 0.5), &mut rng, Split::Test).unwrap();
        // Midpoints of the 16-point mesh are odd points of the 32-point grid.
        for j in 0..16 {
            assert!((mid.targets.get(0, j) - fine.targets.get(0, 2 * j + 1)).abs() < 1e-10);
        }
    }

    #[test]
    fn space_time_mesh_layout() {
        let mesh = QueryMesh::spatial(4, 0.0).with_times(vec![0.05, 0.1]);
        let p = mesh.points(1.0);
        assert_eq!((p.rows(), p.cols()), (8, 2));
        assert_eq!(p.get(5, 0), 0.25);
        assert_eq!(p.get(5, 1), 0.1);
        let op = advection_op();
        let sensors = equispaced_sensors(&op.grid, 8).unwrap();
        let s = build_shard(0, &op, 3, &sensors, &mesh, &mut ChaCha8Rng::seed_from_u64(2), Split::Train).unwrap();
        assert_eq!(s.targets.cols(), 8);
        assert_eq!(s.to_function_batch().unwrap().query_dim(), Some(2));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let op = advection_op();
        let sensors = equispaced_sensors(&op.grid, 8).unwrap();
        let s = build_shard(2, &op, 3, &sensors, &QueryMesh::spatial(16, 0.5), &mut ChaCha8Rng::seed_from_u64(3), Split::Test).unwrap();
        let mut buf = Vec::new();
        s.write(&mut buf).unwrap();
        let back = DatasetShard::read(&mut buf.as_slice()).unwrap();
        assert_eq!(back, s);
        buf[0] = b'X';
        assert!(matches!(DatasetShard::read(&mut buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn sensors_must_divide_the_grid() {
        let g = Grid1D::new(1.0, 32).unwrap();
        assert!(equispaced_sensors(&g, 5).is_err());
        assert_eq!(equispaced_sensors(&g, 4).unwrap(), vec![0, 8, 16, 24]);
    }

    #[test]
    fn zero_functions_is_an_error() {
        let op = advection_op();
        let r = build_shard(0, &op, 0, &[0], &QueryMesh::spatial(4, 0.0), &mut ChaCha8Rng::seed_from_u64(0), Split::Train);
        assert!(r.is_err());
    }
}
