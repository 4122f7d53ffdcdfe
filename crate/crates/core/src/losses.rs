//! Training objectives.
//!
//! Each loss is recorded on a [`Tape`] so it can be differentiated; the
//! `*_value` helpers evaluate the same expressions on plain tensors.

use crate::error::{ensure, Error, Result};
use crate::numeric::{self, Tape, Tensor, Var};

/// Row norms of embeddings must be within this of one.
const UNIT_TOL: f64 = 1e-8;

/// Components and weighted total of the training objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub l_z: f64,
    pub l_c: f64,
    pub l_m: f64,
    pub l_r: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossReport {
    /// `total = l_z + l_c + l_m + lambda * l_r`
    pub fn new(l_z: f64, l_c: f64, l_m: f64, l_r: f64, lambda: f64) -> Result<Self> {
        for (name, v) in [("l_z", l_z), ("l_c", l_c), ("l_m", l_m), ("l_r", l_r), ("lambda", lambda)] {
            if !v.is_finite() {
                return Err(Error::InvalidValue(format!("{name} = {v}")));
            }
        }
        Ok(Self {
            l_z,
            l_c,
            l_m,
            l_r,
            lambda,
            total: l_z + l_c + l_m + lambda * l_r,
        })
    }
}

fn check_unit_rows(t: &Tensor, what: &str) -> Result<()> {
    for (i, row) in t.row_iter().enumerate() {
        let norm = numeric::l2_norm(row);
        ensure!(
            (norm - 1.0).abs() <= UNIT_TOL,
            Contract,
            "{what} row {i} has norm {norm}, expected unit length"
        );
    }
    Ok(())
}

fn check_temperature(tau: f64) -> Result<()> {
    ensure!(tau > 0.0 && tau.is_finite(), Contract, "temperature must be positive, got {tau}");
    Ok(())
}

/// Instance InfoNCE: for each row `i` the positive is `z_i^k` and the
/// candidates are `{z_i^k} ∪ queue`, all scaled by `1 / tau`.
///
/// `queue` is `Q × d_z` and may have zero rows.
pub fn instance_infonce(tape: &mut Tape, zq: Var, zk: Var, queue: &Tensor, tau: f64) -> Result<Var> {
    check_temperature(tau)?;
    let (n, d) = tape.value(zq).dims2()?;
    ensure!(n >= 1, Contract, "instance loss needs at least one row");
    ensure!(
        tape.value(zk).dims2()? == (n, d),
        Contract,
        "query {:?} and key {:?} embeddings differ in shape",
        tape.value(zq).shape(),
        tape.value(zk).shape()
    );
    let (q, qd) = queue.dims2()?;
    ensure!(q == 0 || qd == d, Contract, "queue width {qd} for embeddings of width {d}");
    check_unit_rows(tape.value(zq), "query embedding")?;
    check_unit_rows(tape.value(zk), "key embedding")?;
    check_unit_rows(queue, "queue embedding")?;

    let positive = tape.row_dot(zq, zk)?;
    let logits = if q == 0 {
        positive
    } else {
        let negatives_t = tape.constant(queue.clone());
        let negatives_t = tape.transpose(negatives_t)?;
        let negatives = tape.matmul(zq, negatives_t)?;
        tape.concat_cols(positive, negatives)?
    };
    let scaled = tape.scale(logits, 1.0 / tau);
    tape.cross_entropy_rows(scaled, &vec![0; n])
}

/// Cluster InfoNCE over the `K` columns of the relevancy matrices. Columns are
/// L2-normalized; column `i` of `cq` is contrasted against all columns of `ck`
/// with column `i` as the positive.
pub fn cluster_infonce(tape: &mut Tape, cq: Var, ck: Var, tau: f64) -> Result<Var> {
    check_temperature(tau)?;
    let (n, k) = tape.value(cq).dims2()?;
    ensure!(n >= 1 && k >= 1, Contract, "cluster loss on a {n}x{k} matrix");
    ensure!(
        tape.value(ck).dims2()? == (n, k),
        Contract,
        "relevancy shapes {:?} and {:?} differ",
        tape.value(cq).shape(),
        tape.value(ck).shape()
    );
    let vq = tape.transpose(cq)?;
    let vq = tape.normalize_rows(vq)?;
    let vk = tape.transpose(ck)?;
    let vk = tape.normalize_rows(vk)?;
    let vk_t = tape.transpose(vk)?;
    let sims = tape.matmul(vq, vk_t)?;
    let scaled = tape.scale(sims, 1.0 / tau);
    let targets: Vec<usize> = (0..k).collect();
    tape.cross_entropy_rows(scaled, &targets)
}

/// Balance regularizer `(1/N) Σ_j (Σ_i c_ij)²`. With probability rows it is
/// at least `N / K`, reached when every column sums to `N / K`.
pub fn balance_regularizer(tape: &mut Tape, cq: Var) -> Result<Var> {
    let (n, _) = tape.value(cq).dims2()?;
    ensure!(n >= 1, Contract, "regularizer over zero rows");
    let column_sums = tape.sum_rows(cq)?;
    let squared = tape.square(column_sums);
    let total = tape.sum(squared);
    Ok(tape.scale(total, 1.0 / n as f64))
}

/// Feature consistency `(1/N) Σ_i ‖f̂_i − f_i‖²`.
pub fn consistency(tape: &mut Tape, features: Var, read: Var) -> Result<Var> {
    let (n, _) = tape.value(features).dims2()?;
    ensure!(n >= 1, Contract, "consistency loss over zero rows");
    let diff = tape.sub(read, features)?;
    let squared = tape.square(diff);
    let total = tape.sum(squared);
    Ok(tape.scale(total, 1.0 / n as f64))
}

/// `l_z + l_c + l_m + lambda * l_r` on the tape; `l_m` is omitted when `None`.
pub fn weighted_total(
    tape: &mut Tape,
    l_z: Var,
    l_c: Var,
    l_m: Option<Var>,
    l_r: Var,
    lambda: f64,
) -> Result<Var> {
    let mut total = tape.add(l_z, l_c)?;
    if let Some(l_m) = l_m {
        total = tape.add(total, l_m)?;
    }
    let reg = tape.scale(l_r, lambda);
    tape.add(total, reg)
}

pub fn instance_infonce_value(zq: &Tensor, zk: &Tensor, queue: &Tensor, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let (q, k) = (tape.constant(zq.clone()), tape.constant(zk.clone()));
    let loss = instance_infonce(&mut tape, q, k, queue, tau)?;
    tape.value(loss).item()
}

pub fn cluster_infonce_value(cq: &Tensor, ck: &Tensor, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let (q, k) = (tape.constant(cq.clone()), tape.constant(ck.clone()));
    let loss = cluster_infonce(&mut tape, q, k, tau)?;
    tape.value(loss).item()
}

pub fn balance_regularizer_value(cq: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let c = tape.constant(cq.clone());
    let loss = balance_regularizer(&mut tape, c)?;
    tape.value(loss).item()
}

pub fn consistency_value(features: &Tensor, read: &Tensor) -> Result<f64> {
    ensure!(
        features.shape() == read.shape(),
        Contract,
        "features {:?} vs read {:?}",
        features.shape(),
        read.shape()
    );
    let mut tape = Tape::new();
    let (f, r) = (tape.constant(features.clone()), tape.constant(read.clone()));
    let loss = consistency(&mut tape, f, r)?;
    tape.value(loss).item()
}
