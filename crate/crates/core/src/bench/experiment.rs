//! End-to-end experiment runs: data, single-operator baselines, the q sweep,
//! evaluation, cost accounting and result files.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, OperatorConfig, Seeds};
use super::metrics::mean_relative_l2;
use crate::autodiff::{read_checkpoint, write_checkpoint, Matrix, MlpParams};
use crate::datagen::{build_shard, equispaced_sensors, mean_baseline_error, DatasetShard, Split};
use crate::models::{DonModel, FunctionBatch, ModnoModel};
use crate::trainer::{train_modno, train_single_don, CostLedger, TrainConfig, TrainHistory};
use crate::{Error, Result};

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name.to_string(),
        source: Box::new(e),
    })
}

/// Per-column divisors mapping physical query coordinates to the trunk's
/// unit range: `x / L` and, with a time axis, `t / T`.
pub fn coordinate_scales(op: &OperatorConfig) -> Vec<f64> {
    let mut s = vec![op.spec.grid.length];
    if op.train_mesh.query_dim() == 2 {
        s.push(op.spec.pde.final_time);
    }
    s
}

/// Trunk input width for a query dimension `d`.
pub fn trunk_input_dim(fourier_features: usize, d: usize) -> usize {
    if fourier_features == 0 {
        d
    } else {
        2 * fourier_features + d - 1
    }
}

/// Population mean and standard deviation.
fn moments<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Affine maps between raw shard data and what the networks see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataEncoding {
    /// Branch inputs enter as `(u - input_shift) / input_scale`.
    pub input_shift: f64,
    pub input_scale: f64,
    /// Per operator: `L`, and `T` when there is a time axis.
    pub coordinate_scales: Vec<Vec<f64>>,
    /// Per operator: the networks learn `(target - shift) / scale`.
    pub target_shifts: Vec<f64>,
    pub target_scales: Vec<f64>,
    pub fourier_features: usize,
}

impl DataEncoding {
    /// Identity on values, coordinates divided by the domain sizes.
    pub fn plain(cfg: &ExperimentConfig) -> Self {
        DataEncoding {
            input_shift: 0.0,
            input_scale: 1.0,
            coordinate_scales: cfg.operators.iter().map(coordinate_scales).collect(),
            target_shifts: vec![0.0; cfg.operators.len()],
            target_scales: vec![1.0; cfg.operators.len()],
            fourier_features: cfg.network.fourier_features,
        }
    }

    /// Statistics from the training shards only.
    pub fn fit(cfg: &ExperimentConfig, train: &[DatasetShard]) -> Result<Self> {
        if train.len() != cfg.operators.len() {
            return Err(Error::shape(format!(
                "{} training shards for {} operators",
                train.len(),
                cfg.operators.len()
            )));
        }
        let mut enc = Self::plain(cfg);
        if cfg.network.standardize_inputs {
            let (mean, sd) = moments(train.iter().flat_map(|s| s.inputs.as_slice()));
            enc.input_shift = mean;
            enc.input_scale = if sd > 0.0 { sd } else { 1.0 };
        }
        if let Some(target) = cfg.network.target_std {
            for (i, shard) in train.iter().enumerate() {
                let (mean, sd) = moments(shard.targets.as_slice().iter());
                enc.target_shifts[i] = mean;
                if sd > 0.0 {
                    enc.target_scales[i] = sd / target;
                }
            }
        }
        Ok(enc)
    }

    pub fn n_operators(&self) -> usize {
        self.coordinate_scales.len()
    }

    fn check_op(&self, op: usize) -> Result<()> {
        if op >= self.n_operators() {
            return Err(Error::Index {
                index: op,
                len: self.n_operators(),
            });
        }
        Ok(())
    }

    pub fn encode_inputs(&self, inputs: &Matrix) -> Matrix {
        let (a, b) = (self.input_shift, self.input_scale);
        inputs.map(|v| (v - a) / b)
    }

    /// Trunk inputs for physical query points of operator `op`.
    pub fn encode_points(&self, op: usize, points: &Matrix) -> Result<Matrix> {
        self.check_op(op)?;
        let scaled = scale_points(points, &self.coordinate_scales[op])?;
        let m = self.fourier_features;
        if m == 0 {
            return Ok(scaled);
        }
        let d = scaled.cols();
        let mut out = Matrix::zeros(scaled.rows(), trunk_input_dim(m, d));
        for r in 0..scaled.rows() {
            let src = scaled.row(r);
            let dst = out.row_mut(r);
            for k in 0..m {
                let angle = 2.0 * PI * (k + 1) as f64 * src[0];
                dst[2 * k] = angle.cos();
                dst[2 * k + 1] = angle.sin();
            }
            dst[2 * m..].copy_from_slice(&src[1..]);
        }
        Ok(out)
    }

    /// Network-space training or evaluation batch for a shard of `op`.
    pub fn batch(&self, op: usize, shard: &DatasetShard) -> Result<FunctionBatch> {
        self.check_op(op)?;
        let (a, b) = (self.target_shifts[op], self.target_scales[op]);
        FunctionBatch::shared(
            self.encode_inputs(&shard.inputs),
            self.encode_points(op, &shard.points)?,
            shard.targets.map(|v| (v - a) / b),
        )
    }

    /// Network outputs of `op` back in physical units.
    pub fn decode_values(&self, op: usize, net: &Matrix) -> Result<Matrix> {
        self.check_op(op)?;
        let (a, b) = (self.target_shifts[op], self.target_scales[op]);
        Ok(net.map(|v| a + b * v))
    }

    /// Physical-unit predictions of `op` for raw inputs on physical points.
    pub fn predict(&self, model: &ModnoModel, op: usize, inputs: &Matrix, points: &Matrix) -> Result<Matrix> {
        let p = self.encode_points(op, points)?;
        self.decode_values(op, &model.predict_mesh(op, &self.encode_inputs(inputs), &p)?)
    }

    /// Mean relative L2 error, in physical units, of operator `op` of
    /// `model` on a raw shard.
    pub fn evaluate(&self, model: &ModnoModel, op: usize, shard: &DatasetShard) -> Result<f64> {
        mean_relative_l2(&self.predict(model, op, &shard.inputs, &shard.points)?, &shard.targets)
    }

    /// Same as [`DataEncoding::evaluate`] for a single-operator network
    /// trained as operator `op`.
    pub fn evaluate_don(&self, model: &DonModel, op: usize, shard: &DatasetShard) -> Result<f64> {
        let p = self.encode_points(op, &shard.points)?;
        let net = model.predict_mesh(&self.encode_inputs(&shard.inputs), &p)?;
        mean_relative_l2(&self.decode_values(op, &net)?, &shard.targets)
    }
}

pub fn scale_points(points: &Matrix, scales: &[f64]) -> Result<Matrix> {
    if points.cols() != scales.len() {
        return Err(Error::shape(format!(
            "{} coordinate columns, {} scales",
            points.cols(),
            scales.len()
        )));
    }
    let mut m = points.clone();
    for r in 0..m.rows() {
        for (v, s) in m.row_mut(r).iter_mut().zip(scales) {
            *v /= s;
        }
    }
    Ok(m)
}

fn data_rng(seeds: &Seeds, op: usize, split: Split) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.data);
    rng.set_stream(2 * op as u64 + if split == Split::Train { 0 } else { 1 });
    rng
}

fn for_each_operator<T: Send>(n: usize, threads: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    if threads <= 1 || n <= 1 {
        return (0..n).map(&f).collect();
    }
    let f = &f;
    let mut out: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
    for chunk in (0..n).collect::<Vec<_>>().chunks(threads) {
        let results: Vec<(usize, Result<T>)> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|&i| (i, s.spawn(move || f(i)))).collect();
            handles
                .into_iter()
                .map(|(i, h)| (i, h.join().unwrap_or_else(|_| Err(Error::config("worker thread panicked")))))
                .collect()
        });
        for (i, r) in results {
            out[i] = Some(r);
        }
    }
    out.into_iter().map(|r| r.unwrap()).collect()
}

/// Train and test shards for every operator, in operator order.
pub fn generate_shards(cfg: &ExperimentConfig, threads: usize) -> Result<(Vec<DatasetShard>, Vec<DatasetShard>)> {
    cfg.validate()?;
    let pairs = for_each_operator(cfg.operators.len(), threads, |i| {
        let op = &cfg.operators[i];
        let sensors = equispaced_sensors(&op.spec.grid, cfg.n_sensors)?;
        let train = build_shard(
            i,
            &op.spec,
            cfg.n_train,
            &sensors,
            &op.train_mesh,
            &mut data_rng(&cfg.seeds, i, Split::Train),
            Split::Train,
        )?;
        let test = build_shard(
            i,
            &op.spec,
            cfg.n_test,
            &sensors,
            &op.test_mesh,
            &mut data_rng(&cfg.seeds, i, Split::Test),
            Split::Test,
        )?;
        Ok((train, test))
    })?;
    Ok(pairs.into_iter().unzip())
}

fn branch_sizes(cfg: &ExperimentConfig) -> Vec<usize> {
    let mut s = vec![cfg.n_sensors];
    s.extend(&cfg.network.branch_hidden);
    s.push(cfg.network.basis);
    s
}

fn trunk_sizes(cfg: &ExperimentConfig, d: usize) -> Vec<usize> {
    let mut s = vec![d];
    s.extend(&cfg.network.trunk_hidden);
    s.push(cfg.network.basis);
    s
}

/// Initial shared-branch model. The single-operator baselines start from the
/// same branch and the same trunk as operator `i`.
pub fn init_modno(cfg: &ExperimentConfig) -> Result<ModnoModel> {
    let act = cfg.network.activation;
    let branch = MlpParams::init(&branch_sizes(cfg), act, cfg.seeds.init)?;
    let trunks = cfg
        .operators
        .iter()
        .enumerate()
        .map(|(i, op)| {
            let seed = cfg.seeds.init.wrapping_add(1 + i as u64);
            let d = trunk_input_dim(cfg.network.fourier_features, op.train_mesh.query_dim());
            MlpParams::init(&trunk_sizes(cfg, d), act, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    ModnoModel::new(branch, trunks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub experiment: String,
    pub config_hash: String,
    pub seeds: Seeds,
    pub operators: Vec<String>,
    pub q_values: Vec<f64>,
    /// Mean-of-training-solutions error per operator (fraction).
    pub mean_baseline: Vec<f64>,
    /// Single-DON test error per operator (fraction).
    pub single_don: Vec<f64>,
    /// MODNO test error, `[operator][q index]` (fraction).
    pub modno: Vec<Vec<f64>>,
    /// `C_MOL / C_SOL` per q.
    pub cost_ratio: Vec<f64>,
}

impl ResultsTable {
    pub fn validate(&self) -> Result<()> {
        let n = self.operators.len();
        if self.single_don.len() != n || self.modno.len() != n || self.mean_baseline.len() != n {
            return Err(Error::shape("results table rows disagree with the operator list"));
        }
        if self.cost_ratio.len() != self.q_values.len() || self.modno.iter().any(|r| r.len() != self.q_values.len()) {
            return Err(Error::shape("results table columns disagree with the q list"));
        }
        let cells = self
            .single_don
            .iter()
            .chain(self.modno.iter().flatten())
            .chain(&self.mean_baseline)
            .chain(&self.cost_ratio);
        for &v in cells {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!("results cell {v} is not a finite non-negative value")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Markdown,
    Csv,
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn q_label(q: f64) -> String {
    let p = 100.0 * q;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}", p.round() as i64)
    } else {
        format!("{p}")
    }
}

/// Renders the table; percentages carry two decimals.
pub fn emit_table(results: &ResultsTable, format: TableFormat) -> String {
    let mut s = String::new();
    match format {
        TableFormat::Markdown => {
            s.push_str("| Operator | Single DON 100% data |");
            for &q in &results.q_values {
                s.push_str(&format!(" MODNO {}% data |", q_label(q)));
            }
            s.push('\n');
            s.push_str("|---|---|");
            for _ in &results.q_values {
                s.push_str("---|");
            }
            s.push('\n');
            for (i, name) in results.operators.iter().enumerate() {
                s.push_str(&format!("| {name} | {}% |", pct(results.single_don[i])));
                for v in &results.modno[i] {
                    s.push_str(&format!(" {}% |", pct(*v)));
                }
                s.push('\n');
            }
            if !results.q_values.is_empty() {
                s.push_str("\nC_MOL / C_SOL:");
                for (q, r) in results.q_values.iter().zip(&results.cost_ratio) {
                    s.push_str(&format!(" q={q}: {}%;", pct(*r)));
                }
                s.push('\n');
            }
            if !results.operators.is_empty() {
                s.push_str("\nMean-of-training-solutions baseline:");
                for (name, b) in results.operators.iter().zip(&results.mean_baseline) {
                    s.push_str(&format!(" {name}: {}%;", pct(*b)));
                }
                s.push('\n');
            }
            s.push_str(&format!(
                "\nexperiment {} | config {} | data seed {} | init seed {}\n",
                results.experiment, results.config_hash, results.seeds.data, results.seeds.init
            ));
        }
        TableFormat::Csv => {
            s.push_str("operator,single_don");
            for &q in &results.q_values {
                s.push_str(&format!(",modno_q{q}"));
            }
            s.push('\n');
            for (i, name) in results.operators.iter().enumerate() {
                s.push_str(&format!("{},{}", name.replace(',', " "), pct(results.single_don[i])));
                for v in &results.modno[i] {
                    s.push_str(&format!(",{}", pct(*v)));
                }
                s.push('\n');
            }
        }
    }
    s
}

/// Cost ratio per q as CSV (`q,ratio_percent`).
pub fn emit_cost_csv(results: &ResultsTable) -> String {
    let mut s = String::from("q,cost_ratio\n");
    for (q, r) in results.q_values.iter().zip(&results.cost_ratio) {
        s.push_str(&format!("{q},{}\n", pct(*r)));
    }
    s
}

/// Columns `x [t] target_s prediction_s ...` for the selected samples, one
/// row per query point, physical coordinates and values, full precision.
pub fn emit_solution_plotdata<W: Write>(
    model: &ModnoModel,
    encoding: &DataEncoding,
    op: usize,
    shard: &DatasetShard,
    samples: &[usize],
    w: &mut W,
) -> Result<()> {
    for &s in samples {
        if s >= shard.len() {
            return Err(Error::Index {
                index: s,
                len: shard.len(),
            });
        }
    }
    let inputs = shard.inputs.select_rows(samples)?;
    let pred = encoding.predict(model, op, &inputs, &shard.points)?;
    let d = shard.points.cols();
    let mut header = String::from("# x");
    if d == 2 {
        header.push_str(" t");
    }
    for &s in samples {
        header.push_str(&format!(" target_{s} prediction_{s}"));
    }
    writeln!(w, "{header}")?;
    for r in 0..shard.points.rows() {
        let mut line = String::new();
        for c in 0..d {
            line.push_str(&format!("{:e} ", shard.points.get(r, c)));
        }
        for (k, &s) in samples.iter().enumerate() {
            line.push_str(&format!("{:e} {:e} ", shard.targets.get(s, r), pred.get(k, r)));
        }
        writeln!(w, "{}", line.trim_end())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub n_operators: usize,
    pub basis: usize,
    pub n_sensors: usize,
    pub query_dims: Vec<usize>,
    pub labels: Vec<String>,
    pub encoding: DataEncoding,
}

pub fn save_modno(path: &Path, model: &ModnoModel, cfg: &ExperimentConfig, encoding: &DataEncoding) -> Result<()> {
    if encoding.n_operators() != model.n_operators() {
        return Err(Error::shape("encoding and model disagree on the operator count"));
    }
    let header = CheckpointHeader {
        n_operators: model.n_operators(),
        basis: cfg.network.basis,
        n_sensors: cfg.n_sensors,
        query_dims: model.query_dims(),
        labels: cfg.operators.iter().map(|o| o.label.clone()).collect(),
        encoding: encoding.clone(),
    };
    let mut nets = vec![&model.branch];
    nets.extend(model.trunks.iter());
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write_checkpoint(&mut f, &serde_json::to_vec(&header)?, &nets)?;
    f.flush()?;
    Ok(())
}

pub fn load_modno(path: &Path) -> Result<(ModnoModel, CheckpointHeader)> {
    let mut f = std::io::BufReader::new(fs::File::open(path)?);
    let (header, mut nets) = read_checkpoint(&mut f)?;
    let header: CheckpointHeader = serde_json::from_slice(&header)?;
    if nets.len() != header.n_operators + 1 {
        return Err(Error::Format(format!(
            "checkpoint holds {} networks for {} operators",
            nets.len(),
            header.n_operators
        )));
    }
    let trunks = nets.split_off(1);
    let model = ModnoModel::new(nets.pop().unwrap(), trunks)?;
    if model.query_dims() != header.query_dims
        || model.branch.input_dim() != header.n_sensors
        || header.encoding.n_operators() != header.n_operators
    {
        return Err(Error::Format("checkpoint header disagrees with its networks".into()));
    }
    Ok((model, header))
}

/// Mean per-sample relative error of every operator on its raw test shard.
pub fn evaluate_modno(model: &ModnoModel, encoding: &DataEncoding, tests: &[DatasetShard]) -> Result<Vec<f64>> {
    if tests.len() != model.n_operators() {
        return Err(Error::shape(format!(
            "{} test shards for {} operators",
            tests.len(),
            model.n_operators()
        )));
    }
    tests
        .iter()
        .enumerate()
        .map(|(i, t)| encoding.evaluate(model, i, t))
        .collect()
}

/// Fits the encoding on `train` and trains one shared-branch model with
/// shared data fraction `q` from the configured initialization.
pub fn train_modno_once(
    cfg: &ExperimentConfig,
    train: &[DatasetShard],
    q: f64,
) -> Result<(ModnoModel, TrainHistory, DataEncoding)> {
    cfg.validate()?;
    let encoding = DataEncoding::fit(cfg, train)?;
    let batches = train
        .iter()
        .enumerate()
        .map(|(i, s)| encoding.batch(i, s))
        .collect::<Result<Vec<_>>>()?;
    let mut c = cfg.train.clone();
    c.shared_data_fraction = q;
    let (model, hist) = train_modno(init_modno(cfg)?, &batches, &c)?;
    Ok((model, hist, encoding))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_root: PathBuf,
    pub threads: usize,
    pub verbose: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub table: ResultsTable,
    pub run_dir: PathBuf,
    pub modno_models: Vec<ModnoModel>,
    pub single_models: Vec<DonModel>,
    pub encoding: DataEncoding,
    pub train: Vec<DatasetShard>,
    pub test: Vec<DatasetShard>,
}

fn write_tables(dir: &Path, table: &ResultsTable) -> Result<()> {
    fs::write(dir.join("results.md"), emit_table(table, TableFormat::Markdown))?;
    fs::write(dir.join("results.csv"), emit_table(table, TableFormat::Csv))?;
    fs::write(dir.join("cost.csv"), emit_cost_csv(table))?;
    fs::write(dir.join("results.json"), serde_json::to_string_pretty(table)?)?;
    Ok(())
}

fn write_history(path: &Path, h: &TrainHistory) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    h.write_csv(&mut f)?;
    f.flush()?;
    Ok(())
}

/// Runs the whole experiment and writes its artifacts under
/// `out_root/<name>-<hash>/`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentReport> {
    stage("config", cfg.validate())?;
    let started = Instant::now();
    let log = |msg: String| {
        if opts.verbose {
            eprintln!("[{:8.1}s] {msg}", started.elapsed().as_secs_f64());
        }
    };
    let run_dir = opts.out_root.join(stage("config", cfg.run_dir_name())?);
    stage("output", fs::create_dir_all(run_dir.join("data")).map_err(Error::from))?;
    stage("output", fs::write(run_dir.join("config.json"), cfg.to_json()?).map_err(Error::from))?;
    let threads = opts.threads.max(1);

    log(format!("generating data for {}", cfg.name));
    let (train, test) = stage("datagen", generate_shards(cfg, threads))?;
    for (i, (tr, te)) in train.iter().zip(&test).enumerate() {
        stage("datagen", tr.save(&run_dir.join(format!("data/op{i}_train.bin"))))?;
        stage("datagen", te.save(&run_dir.join(format!("data/op{i}_test.bin"))))?;
    }
    let mean_baseline = stage(
        "baseline",
        train.iter().zip(&test).map(|(a, b)| mean_baseline_error(a, b)).collect::<Result<Vec<_>>>(),
    )?;
    log(format!("mean baselines {mean_baseline:?}"));

    let encoding = stage("encode", DataEncoding::fit(cfg, &train))?;
    let train_b = stage(
        "encode",
        train.iter().enumerate().map(|(i, s)| encoding.batch(i, s)).collect::<Result<Vec<_>>>(),
    )?;

    let init = stage("init", init_modno(cfg))?;
    let mut table = ResultsTable {
        experiment: cfg.name.clone(),
        config_hash: cfg.content_hash()?,
        seeds: cfg.seeds,
        operators: cfg.operators.iter().map(|o| o.label.clone()).collect(),
        q_values: Vec::new(),
        mean_baseline,
        single_don: vec![0.0; cfg.operators.len()],
        modno: vec![Vec::new(); cfg.operators.len()],
        cost_ratio: Vec::new(),
    };

    let mut single_cfg = cfg.train.clone();
    single_cfg.shared_data_fraction = 1.0;
    single_cfg.trunk_lrs = None;
    let singles = stage(
        "single_don",
        for_each_operator(cfg.operators.len(), threads, |i| {
            let model = init.operator_model(i)?;
            let mut c = single_cfg.clone();
            c.trunk_lr = cfg.train.trunk_lr_for(i);
            let (m, h) = train_single_don(model, &train_b[i], &c, None)?;
            let err = encoding.evaluate_don(&m, i, &test[i])?;
            Ok((m, h, err))
        }),
    )?;
    let mut single_models = Vec::new();
    for (i, (m, h, err)) in singles.into_iter().enumerate() {
        log(format!("single DON {}: {:.4}%", cfg.operators[i].label, 100.0 * err));
        stage("single_don", write_history(&run_dir.join(format!("history_single_op{i}.csv")), &h))?;
        table.single_don[i] = err;
        single_models.push(m);
    }
    stage("output", write_tables(&run_dir, &table))?;

    let query_counts: Vec<Vec<i64>> = train_b
        .iter()
        .map(|b| vec![(b.total_points() / b.len()) as i64; b.len()])
        .collect();
    let mut modno_models = Vec::new();
    for (k, &q) in cfg.q_values.iter().enumerate() {
        let mut c: TrainConfig = cfg.train.clone();
        c.shared_data_fraction = q;
        let (model, hist) = stage("modno", train_modno(init.clone(), &train_b, &c))?;
        let errs = stage("evaluate", evaluate_modno(&model, &encoding, &test))?;
        log(format!("MODNO q={q}: {:?}", errs.iter().map(|e| 100.0 * e).collect::<Vec<_>>()));
        let ledger = stage("cost", CostLedger::matched(&query_counts, c.epochs as i64, q))?;
        table.q_values.push(q);
        table.cost_ratio.push(ledger.ratio());
        for (i, e) in errs.into_iter().enumerate() {
            table.modno[i].push(e);
        }
        stage("output", write_history(&run_dir.join(format!("history_modno_q{k}.csv")), &hist))?;
        stage("output", save_modno(&run_dir.join(format!("modno_q{k}.ckpt")), &model, cfg, &encoding))?;
        if k == 0 {
            for (i, shard) in test.iter().enumerate() {
                let mut f = std::io::BufWriter::new(stage(
                    "output",
                    fs::File::create(run_dir.join(format!("plot_op{i}.dat"))).map_err(Error::from),
                )?);
                stage("output", emit_solution_plotdata(&model, &encoding, i, shard, &[0], &mut f))?;
            }
        }
        stage("output", write_tables(&run_dir, &table))?;
        modno_models.push(model);
    }
    stage("output", table.validate())?;
    log(format!("done in {:.1}s", started.elapsed().as_secs_f64()));
    Ok(ExperimentReport {
        table,
        run_dir,
        modno_models,
        single_models,
        encoding,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(n_op: usize, qs: &[f64]) -> ResultsTable {
        ResultsTable {
            experiment: "custom".into(),
            config_hash: "abc".into(),
            seeds: Seeds { data: 1, init: 2 },
            operators: (0..n_op).map(|i| format!("op{i}")).collect(),
            q_values: qs.to_vec(),
            mean_baseline: vec![0.5; n_op],
            single_don: (0..n_op).map(|i| 0.01 * (i + 1) as f64).collect(),
            modno: (0..n_op).map(|i| qs.iter().map(|q| 0.02 * q + 0.001 * i as f64).collect()).collect(),
            cost_ratio: qs.iter().map(|q| (1.0 + q) / 2.0).collect(),
        }
    }

    #[test]
    fn markdown_rows_match_operators() {
        let t = table(3, &[1.0, 0.9]);
        let md = emit_table(&t, TableFormat::Markdown);
        let rows = md.lines().filter(|l| l.starts_with("| op")).count();
        assert_eq!(rows, 3);
        assert!(md.starts_with("| Operator | Single DON 100% data | MODNO 100% data | MODNO 90% data |"));
        assert!(md.contains("| op0 | 1.00% | 2.00% | 1.80% |"));
    }

    #[test]
    fn empty_sweep_gives_header_only() {
        let t = table(0, &[]);
        let md = emit_table(&t, TableFormat::Markdown);
        assert_eq!(md.lines().filter(|l| l.starts_with('|')).count(), 2);
        let csv = emit_table(&t, TableFormat::Csv);
        assert_eq!(csv, "operator,single_don\n");
    }

    #[test]
    fn csv_reparses_to_rounded_values() {
        let t = table(2, &[1.0, 0.8]);
        let csv = emit_table(&t, TableFormat::Csv);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "operator,single_don,modno_q1,modno_q0.8");
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(f[0], t.operators[i]);
            let single: f64 = f[1].parse().unwrap();
            assert!((single - (100.0 * t.single_don[i] * 100.0).round() / 100.0).abs() < 1e-9);
            for (k, v) in f[2..].iter().enumerate() {
                let v: f64 = v.parse().unwrap();
                assert!((v - (100.0 * t.modno[i][k] * 100.0).round() / 100.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_cells_are_rejected() {
        let mut t = table(2, &[1.0]);
        t.validate().unwrap();
        t.modno[1][0] = f64::NAN;
        assert!(t.validate().is_err());
        let mut t = table(2, &[1.0]);
        t.single_don.pop();
        assert!(t.validate().is_err());
    }

    #[test]
    fn point_scaling() {
        let p = Matrix::from_rows(&[vec![1.0, 0.01], vec![2.0, 0.005]]).unwrap();
        let s = scale_points(&p, &[2.0, 0.01]).unwrap();
        assert_eq!(s.row(0), &[0.5, 1.0]);
        assert_eq!(s.row(1), &[1.0, 0.5]);
        assert!(scale_points(&p, &[1.0]).is_err());
    }

    fn tiny() -> ExperimentConfig {
        let mut cfg = super::super::config::exp3();
        cfg.name = "tiny".into();
        cfg.n_train = 6;
        cfg.n_test = 3;
        cfg.n_sensors = 16;
        cfg.network.basis = 4;
        cfg.network.branch_hidden = vec![8];
        cfg.network.trunk_hidden = vec![8];
        cfg.network.fourier_features = 3;
        cfg.train.epochs = 3;
        cfg.train.minibatch_size = crate::trainer::BatchSize::Full;
        cfg.q_values = vec![1.0];
        cfg
    }

    #[test]
    fn trunk_width() {
        assert_eq!(trunk_input_dim(0, 1), 1);
        assert_eq!(trunk_input_dim(0, 2), 2);
        assert_eq!(trunk_input_dim(6, 1), 12);
        assert_eq!(trunk_input_dim(6, 2), 13);
    }

    #[test]
    fn fourier_embedding_values() {
        let cfg = tiny();
        let enc = DataEncoding::plain(&cfg);
        let l = cfg.operators[0].spec.grid.length;
        let p = Matrix::from_rows(&[vec![0.0], vec![0.25 * l]]).unwrap();
        let e = enc.encode_points(0, &p).unwrap();
        assert_eq!(e.cols(), 6);
        assert_eq!(e.row(0), &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        // s = 1/4: harmonics k = 1, 2, 3 sit at quarter, half and three-quarter turns.
        let expect = [0.0, 1.0, -1.0, 0.0, 0.0, -1.0];
        for (a, b) in e.row(1).iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        assert!(enc.encode_points(3, &p).is_err());
    }

    #[test]
    fn time_axis_passes_through_scaled() {
        let mut cfg = super::super::config::exp2();
        cfg.network.fourier_features = 2;
        let enc = DataEncoding::plain(&cfg);
        let t_final = cfg.operators[0].spec.pde.final_time;
        let p = Matrix::from_rows(&[vec![0.5, 0.5 * t_final]]).unwrap();
        let e = enc.encode_points(0, &p).unwrap();
        assert_eq!(e.cols(), 5);
        assert_eq!(e.get(0, 4), 0.5);
    }

    #[test]
    fn fit_statistics_and_round_trip() {
        let cfg = tiny();
        let (train, _) = generate_shards(&cfg, 1).unwrap();
        let enc = DataEncoding::fit(&cfg, &train).unwrap();
        let pooled: Vec<f64> = train.iter().flat_map(|s| s.inputs.as_slice().to_vec()).collect();
        let n = pooled.len() as f64;
        let mean = pooled.iter().sum::<f64>() / n;
        let sd = (pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((enc.input_shift - mean).abs() < 1e-12);
        assert!((enc.input_scale - sd).abs() < 1e-12);
        for (i, shard) in train.iter().enumerate() {
            let b = enc.batch(i, shard).unwrap();
            let encoded = b.query_batch(0).unwrap();
            let t = Matrix::from_rows(&[encoded.targets.as_slice().to_vec()]).unwrap();
            let back = enc.decode_values(i, &t).unwrap();
            let raw = shard.targets.select_rows(&[0]).unwrap();
            assert!(back.max_abs_diff(&raw) < 1e-12);
            // Encoded targets of the whole shard have mean 0 and the configured spread.
            let all: Vec<f64> = shard.targets.as_slice().iter().map(|v| (v - enc.target_shifts[i]) / enc.target_scales[i]).collect();
            let m = all.iter().sum::<f64>() / all.len() as f64;
            let s = (all.iter().map(|v| (v - m).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
            assert!(m.abs() < 1e-10);
            assert!((s - cfg.network.target_std.unwrap()).abs() < 1e-10);
        }
        assert!(DataEncoding::fit(&cfg, &train[..2]).is_err());
    }

    #[test]
    fn checkpoint_and_plotdata_reproduce_predictions() {
        let cfg = tiny();
        let (train, test) = generate_shards(&cfg, 1).unwrap();
        let (model, _, enc) = train_modno_once(&cfg, &train, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_modno(&path, &model, &cfg, &enc).unwrap();
        let (loaded, header) = load_modno(&path).unwrap();
        assert_eq!(header.encoding, enc);
        assert_eq!(evaluate_modno(&loaded, &header.encoding, &test).unwrap(), evaluate_modno(&model, &enc, &test).unwrap());

        let mut buf = Vec::new();
        emit_solution_plotdata(&model, &enc, 1, &test[1], &[2], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<Vec<f64>> = text
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(|l| l.split(' ').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), test[1].points.rows());
        let pred = enc.predict(&model, 1, &test[1].inputs.select_rows(&[2]).unwrap(), &test[1].points).unwrap();
        for (r, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), 3);
            assert_eq!(row[0].to_bits(), test[1].points.get(r, 0).to_bits());
            assert_eq!(row[1].to_bits(), test[1].targets.get(2, r).to_bits());
            assert_eq!(row[2].to_bits(), pred.get(0, r).to_bits());
        }
        assert!(emit_solution_plotdata(&model, &enc, 1, &test[1], &[3], &mut Vec::new()).is_err());
    }
}
