//! Branch/trunk operator networks.
//!
//! A prediction is the inner product `G(u)(x) ≈ Σ_k a_k(û) b_k(x)` between
//! the branch output `a(û) ∈ ℝ^K` and the trunk output `b(x) ∈ ℝ^K`.
//! [`DonModel`] pairs one branch with one trunk; [`ModnoModel`] shares one
//! branch across operators and keeps a dedicated trunk per operator.

use crate::autodiff::matrix::gemm;
use crate::autodiff::{Matrix, MlpGrads, MlpParams};
use crate::bench::metrics::{mean_relative_l2, relative_l2};
use crate::{Error, Result};

/// Query locations for one input function and the operator's values there.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBatch {
    /// `n_q × d` coordinates in the output domain.
    pub points: Matrix,
    /// `n_q × 1` target values.
    pub targets: Matrix,
}

impl QueryBatch {
    pub fn new(points: Matrix, targets: Matrix) -> Result<Self> {
        if points.rows() != targets.rows() || targets.cols() != 1 {
            return Err(Error::shape(format!(
                "query batch points {:?} vs targets {:?}",
                points.shape(),
                targets.shape()
            )));
        }
        Ok(QueryBatch { points, targets })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }
}

/// Query layout of a [`FunctionBatch`].
#[derive(Debug, Clone, PartialEq)]
pub enum Queries {
    /// Every function is queried at the same points; `targets` is
    /// `N_u × n_q` with one row per function.
    Shared { points: Matrix, targets: Matrix },
    /// Independent points per function.
    PerFunction(Vec<QueryBatch>),
}

/// Sensor values of `N_u` input functions plus their query data.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionBatch {
    /// `N_u × N_s`.
    pub inputs: Matrix,
    pub queries: Queries,
}

impl FunctionBatch {
    pub fn shared(inputs: Matrix, points: Matrix, targets: Matrix) -> Result<Self> {
        if targets.rows() != inputs.rows() || targets.cols() != points.rows() {
            return Err(Error::shape(format!(
                "shared targets {:?} for {} functions and {} points",
                targets.shape(),
                inputs.rows(),
                points.rows()
            )));
        }
        Ok(FunctionBatch {
            inputs,
            queries: Queries::Shared { points, targets },
        })
    }

    pub fn per_function(inputs: Matrix, queries: Vec<QueryBatch>) -> Result<Self> {
        if queries.len() != inputs.rows() {
            return Err(Error::shape(format!(
                "{} query batches for {} input functions",
                queries.len(),
                inputs.rows()
            )));
        }
        let d = queries.first().map(|q| q.points.cols());
        if queries.iter().any(|q| Some(q.points.cols()) != d) {
            return Err(Error::shape("query batches disagree on coordinate dimension"));
        }
        Ok(FunctionBatch {
            inputs,
            queries: Queries::PerFunction(queries),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn n_sensors(&self) -> usize {
        self.inputs.cols()
    }

    pub fn total_points(&self) -> usize {
        match &self.queries {
            Queries::Shared { points, .. } => points.rows() * self.len(),
            Queries::PerFunction(q) => q.iter().map(QueryBatch::len).sum(),
        }
    }

    pub fn query_dim(&self) -> Option<usize> {
        match &self.queries {
            Queries::Shared { points, .. } => Some(points.cols()),
            Queries::PerFunction(q) => q.first().map(|b| b.points.cols()),
        }
    }

    /// Query batch of function `p`.
    pub fn query_batch(&self, p: usize) -> Result<QueryBatch> {
        if p >= self.len() {
            return Err(Error::Index {
                index: p,
                len: self.len(),
            });
        }
        match &self.queries {
            Queries::Shared { points, targets } => {
                QueryBatch::new(points.clone(), Matrix::column_vector(targets.row(p)))
            }
            Queries::PerFunction(q) => Ok(q[p].clone()),
        }
    }

    /// Sub-batch with the listed functions, all of their queries kept.
    pub fn select(&self, indices: &[usize]) -> Result<FunctionBatch> {
        let inputs = self.inputs.select_rows(indices)?;
        let queries = match &self.queries {
            Queries::Shared { points, targets } => Queries::Shared {
                points: points.clone(),
                targets: targets.select_rows(indices)?,
            },
            Queries::PerFunction(q) => Queries::PerFunction(
                indices.iter().map(|&i| q[i].clone()).collect(),
            ),
        };
        Ok(FunctionBatch { inputs, queries })
    }

    /// Same data with the per-function layout.
    pub fn to_per_function(&self) -> Result<FunctionBatch> {
        let q = (0..self.len())
            .map(|p| self.query_batch(p))
            .collect::<Result<Vec<_>>>()?;
        FunctionBatch::per_function(self.inputs.clone(), q)
    }
}

/// Single-operator branch/trunk network.
#[derive(Debug, Clone, PartialEq)]
pub struct DonModel {
    pub branch: MlpParams,
    pub trunk: MlpParams,
}

impl DonModel {
    pub fn new(branch: MlpParams, trunk: MlpParams) -> Result<Self> {
        if branch.output_dim() != trunk.output_dim() {
            return Err(Error::shape(format!(
                "branch outputs {} basis coefficients, trunk {}",
                branch.output_dim(),
                trunk.output_dim()
            )));
        }
        Ok(DonModel { branch, trunk })
    }

    pub fn n_sensors(&self) -> usize {
        self.branch.input_dim()
    }

    pub fn basis_count(&self) -> usize {
        self.branch.output_dim()
    }

    pub fn query_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    /// `out[j] = Σ_k branch(û)_k · trunk(x_j)_k`.
    pub fn predict(&self, u_hat: &[f64], points: &Matrix) -> Result<Vec<f64>> {
        predict_pair(&self.branch, &self.trunk, u_hat, points)
    }

    /// Predictions for many functions on one mesh: `N_u × n_q`.
    pub fn predict_mesh(&self, inputs: &Matrix, points: &Matrix) -> Result<Matrix> {
        predict_mesh_pair(&self.branch, &self.trunk, inputs, points)
    }

    /// Mean squared error over all query points in `batch` and its exact
    /// gradients for (branch, trunk).
    pub fn loss_and_grads(&self, batch: &FunctionBatch) -> Result<(f64, MlpGrads, MlpGrads)> {
        let out = pair_loss(&self.branch, &self.trunk, batch, true, true)?;
        Ok((out.loss, out.branch_grad.unwrap(), out.trunk_grad.unwrap()))
    }

    pub fn loss(&self, batch: &FunctionBatch) -> Result<f64> {
        Ok(pair_loss(&self.branch, &self.trunk, batch, false, false)?.loss)
    }

    /// Mean over functions of the per-function relative L2 error.
    pub fn relative_error(&self, batch: &FunctionBatch) -> Result<f64> {
        pair_relative_error(&self.branch, &self.trunk, batch)
    }
}

/// One shared branch network and one trunk network per operator.
#[derive(Debug, Clone, PartialEq)]
pub struct ModnoModel {
    pub branch: MlpParams,
    pub trunks: Vec<MlpParams>,
}

/// Output of [`ModnoModel::local_loss_and_grads`].
#[derive(Debug, Clone)]
pub struct LocalLoss {
    pub loss: f64,
    pub grad_trunk: MlpGrads,
    pub grad_branch: MlpGrads,
}

impl ModnoModel {
    pub fn new(branch: MlpParams, trunks: Vec<MlpParams>) -> Result<Self> {
        if trunks.is_empty() {
            return Err(Error::config("a multi-operator model needs at least one trunk"));
        }
        for (i, t) in trunks.iter().enumerate() {
            if t.output_dim() != branch.output_dim() {
                return Err(Error::shape(format!(
                    "trunk {i} outputs {} basis values, branch {}",
                    t.output_dim(),
                    branch.output_dim()
                )));
            }
        }
        Ok(ModnoModel { branch, trunks })
    }

    pub fn n_operators(&self) -> usize {
        self.trunks.len()
    }

    pub fn n_sensors(&self) -> usize {
        self.branch.input_dim()
    }

    pub fn basis_count(&self) -> usize {
        self.branch.output_dim()
    }

    pub fn query_dims(&self) -> Vec<usize> {
        self.trunks.iter().map(MlpParams::input_dim).collect()
    }

    pub fn trunk(&self, i: usize) -> Result<&MlpParams> {
        self.trunks.get(i).ok_or(Error::Index {
            index: i,
            len: self.trunks.len(),
        })
    }

    /// The single-operator model formed by the shared branch and trunk `i`.
    pub fn operator_model(&self, i: usize) -> Result<DonModel> {
        DonModel::new(self.branch.clone(), self.trunk(i)?.clone())
    }

    /// Shared input encoding `a(û; α)` for a batch of functions (`N_u × K`).
    pub fn encode(&self, inputs: &Matrix) -> Result<Matrix> {
        self.branch.forward(inputs)
    }

    pub fn predict(&self, i: usize, u_hat: &[f64], points: &Matrix) -> Result<Vec<f64>> {
        predict_pair(&self.branch, self.trunk(i)?, u_hat, points)
    }

    pub fn predict_mesh(&self, i: usize, inputs: &Matrix, points: &Matrix) -> Result<Matrix> {
        predict_mesh_pair(&self.branch, self.trunk(i)?, inputs, points)
    }

    /// Local loss of operator `i` and its gradients with respect to the
    /// operator's trunk and the shared branch.
    pub fn local_loss_and_grads(&self, i: usize, batch: &FunctionBatch) -> Result<LocalLoss> {
        let out = pair_loss(&self.branch, self.trunk(i)?, batch, true, true)?;
        Ok(LocalLoss {
            loss: out.loss,
            grad_trunk: out.trunk_grad.unwrap(),
            grad_branch: out.branch_grad.unwrap(),
        })
    }

    pub fn local_loss(&self, i: usize, batch: &FunctionBatch) -> Result<f64> {
        Ok(pair_loss(&self.branch, self.trunk(i)?, batch, false, false)?.loss)
    }

    pub fn relative_error(&self, i: usize, batch: &FunctionBatch) -> Result<f64> {
        pair_relative_error(&self.branch, self.trunk(i)?, batch)
    }

    /// Sum of local losses over all operators, each evaluated on the listed
    /// subset of its shard, with the summed branch gradient. Operators are
    /// reduced in index order.
    pub fn global_loss_and_grads(
        &self,
        shards: &[FunctionBatch],
        subsets: &[Vec<usize>],
    ) -> Result<(f64, MlpGrads)> {
        if shards.is_empty() {
            return Err(Error::config("global loss over an empty operator list"));
        }
        if shards.len() != self.n_operators() || subsets.len() != shards.len() {
            return Err(Error::shape(format!(
                "{} shards and {} subsets for {} operators",
                shards.len(),
                subsets.len(),
                self.n_operators()
            )));
        }
        let mut loss = 0.0;
        let mut grad = self.branch.zero_grads();
        for (i, (shard, subset)) in shards.iter().zip(subsets).enumerate() {
            let sub = shard.select(subset)?;
            let out = pair_loss(&self.branch, &self.trunks[i], &sub, true, false)?;
            loss += out.loss;
            grad.add_assign(out.branch_grad.as_ref().unwrap())?;
        }
        Ok((loss, grad))
    }
}

fn predict_pair(
    branch: &MlpParams,
    trunk: &MlpParams,
    u_hat: &[f64],
    points: &Matrix,
) -> Result<Vec<f64>> {
    if u_hat.len() != branch.input_dim() {
        return Err(Error::shape(format!(
            "input function has {} sensor values, model expects {}",
            u_hat.len(),
            branch.input_dim()
        )));
    }
    Ok(predict_mesh_pair(branch, trunk, &Matrix::row_vector(u_hat), points)?.into_vec())
}

fn predict_mesh_pair(
    branch: &MlpParams,
    trunk: &MlpParams,
    inputs: &Matrix,
    points: &Matrix,
) -> Result<Matrix> {
    let a = branch.forward(inputs)?;
    let b = trunk.forward(points)?;
    a.matmul_t(&b)
}

fn pair_relative_error(branch: &MlpParams, trunk: &MlpParams, batch: &FunctionBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::config("relative error over an empty batch"));
    }
    match &batch.queries {
        Queries::Shared { points, targets } => {
            mean_relative_l2(&predict_mesh_pair(branch, trunk, &batch.inputs, points)?, targets)
        }
        Queries::PerFunction(q) => {
            let mut sum = 0.0;
            for (p, qb) in q.iter().enumerate() {
                let pred = predict_pair(branch, trunk, batch.inputs.row(p), &qb.points)?;
                sum += relative_l2(&pred, qb.targets.as_slice())?;
            }
            Ok(sum / q.len() as f64)
        }
    }
}

pub(crate) struct PairLoss {
    pub loss: f64,
    pub branch_grad: Option<MlpGrads>,
    pub trunk_grad: Option<MlpGrads>,
}

/// MSE of `Σ_k a_k b_k` against the batch targets, normalized by the total
/// number of query points, with optional gradients for either network.
pub(crate) fn pair_loss(
    branch: &MlpParams,
    trunk: &MlpParams,
    batch: &FunctionBatch,
    want_branch: bool,
    want_trunk: bool,
) -> Result<PairLoss> {
    if batch.is_empty() || batch.total_points() == 0 {
        return Err(Error::config("loss over an empty batch"));
    }
    if batch.n_sensors() != branch.input_dim() {
        return Err(Error::shape(format!(
            "batch has {} sensors, branch expects {}",
            batch.n_sensors(),
            branch.input_dim()
        )));
    }
    let a_trace = branch.forward_trace(&batch.inputs)?;
    let a = &a_trace.output;
    let k = a.cols();
    let total = batch.total_points() as f64;

    let (loss, d_a, t_trace, d_t) = match &batch.queries {
        Queries::Shared { points, targets } => {
            let t_trace = trunk.forward_trace(points)?;
            let t = &t_trace.output;
            // residual = A · Tᵀ − Y
            let mut resid = targets.clone();
            gemm(1.0, a, false, t, true, -1.0, &mut resid);
            let loss = resid.as_slice().iter().map(|r| r * r).sum::<f64>() / total;
            let d_pred = resid.scale(2.0 / total);
            let d_a = if want_branch {
                let mut d = Matrix::zeros(a.rows(), k);
                gemm(1.0, &d_pred, false, t, false, 0.0, &mut d);
                Some(d)
            } else {
                None
            };
            let d_t = if want_trunk {
                let mut d = Matrix::zeros(t.rows(), k);
                gemm(1.0, &d_pred, true, a, false, 0.0, &mut d);
                Some(d)
            } else {
                None
            };
            (loss, d_a, t_trace, d_t)
        }
        Queries::PerFunction(batches) => {
            let blocks: Vec<&Matrix> = batches.iter().map(|q| &q.points).collect();
            let stacked = Matrix::vstack(&blocks)?;
            let t_trace = trunk.forward_trace(&stacked)?;
            let t = &t_trace.output;
            let mut d_a = Matrix::zeros(a.rows(), k);
            let mut d_t = Matrix::zeros(t.rows(), k);
            let mut sq = 0.0;
            let mut row = 0;
            for (p, q) in batches.iter().enumerate() {
                let a_p = a.row(p);
                for j in 0..q.len() {
                    let t_j = t.row(row);
                    let pred: f64 = a_p.iter().zip(t_j).map(|(x, y)| x * y).sum();
                    let r = pred - q.targets.get(j, 0);
                    sq += r * r;
                    let g = 2.0 * r / total;
                    for (da, tv) in d_a.row_mut(p).iter_mut().zip(t_j) {
                        *da += g * tv;
                    }
                    for (dt, av) in d_t.row_mut(row).iter_mut().zip(a_p) {
                        *dt = g * av;
                    }
                    row += 1;
                }
            }
            (
                sq / total,
                want_branch.then_some(d_a),
                t_trace,
                want_trunk.then_some(d_t),
            )
        }
    };

    let branch_grad = match d_a {
        Some(d) => Some(branch.backward_trace(&a_trace, &d, false)?.0),
        None => None,
    };
    let trunk_grad = match d_t {
        Some(d) => Some(trunk.backward_trace(&t_trace, &d, false)?.0),
        None => None,
    };
    Ok(PairLoss {
        loss,
        branch_grad,
        trunk_grad,
    })
}
