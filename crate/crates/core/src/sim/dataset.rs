//! Turning rollout logs into inverse-model training samples.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rollout::RolloutLog;
use crate::gp::Sample;
use crate::{Error, Result};

/// Sample for instant `k` (rows `k-1`, `k`, `k+1` are used):
/// `w = [dq_B,k+1 planar; dq_B,k; phi_k-1]`, `z = command issued at k`.
///
/// With the controller's convention (`t = k - 1`) this is exactly
/// `w = [dx_B,t+1; dq_B,t; phi_t]` and `z = v^d_t` of the second order model.
pub fn extract_dataset(log: &RolloutLog) -> Result<Vec<Sample>> {
    let rows = &log.rows;
    if rows.len() < 3 {
        return Err(Error::Argument(format!(
            "log has {} rows, need at least 3",
            rows.len()
        )));
    }
    Ok((1..rows.len() - 1)
        .map(|k| {
            let (prev, cur, next) = (&rows[k - 1], &rows[k], &rows[k + 1]);
            Sample {
                w: [next.dx, next.dy, cur.dx, cur.dy, cur.dphi, prev.phi],
                z: [cur.vl_cmd, cur.vr_cmd],
            }
        })
        .collect())
}

/// Seeded shuffle, then the first `round(train_fraction * n)` samples train.
pub fn split(
    samples: &[Sample],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Argument(format!(
            "train fraction must be in [0, 1], got {train_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * samples.len() as f64).round() as usize;
    let pick = |ix: &[usize]| ix.iter().map(|&i| samples[i]).collect::<Vec<_>>();
    Ok((pick(&idx[..n_train]), pick(&idx[n_train..])))
}

#[derive(Serialize, Deserialize)]
struct DatasetRow {
    w1: f64,
    w2: f64,
    w3: f64,
    w4: f64,
    w5: f64,
    w6: f64,
    z1: f64,
    z2: f64,
}

pub fn write_dataset<W: Write>(samples: &[Sample], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for s in samples {
        let [w1, w2, w3, w4, w5, w6] = s.w;
        let [z1, z2] = s.z;
        wr.serialize(DatasetRow {
            w1,
            w2,
            w3,
            w4,
            w5,
            w6,
            z1,
            z2,
        })?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(r: R) -> Result<Vec<Sample>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, row) in rd.deserialize::<DatasetRow>().enumerate() {
        let r = row?;
        let s = Sample {
            w: [r.w1, r.w2, r.w3, r.w4, r.w5, r.w6],
            z: [r.z1, r.z2],
        };
        if !s.is_finite() {
            return Err(Error::Argument(format!("dataset row {i} is not finite")));
        }
        out.push(s);
    }
    Ok(out)
}
