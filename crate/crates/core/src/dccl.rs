//! Dual-centroid compactness loss.
//!
//! For benign latents `Z_B` and anomalous latents `Z_A`:
//!
//! ```text
//! c_B = mean(Z_B), c_A = mean(Z_A)
//! L_cb = mean_i ‖z_i − c_B‖²,  L_ca = mean_j ‖z_j − c_A‖²
//! L_s  = max(0, m − ‖c_B − c_A‖²)
//! L    = α·L_cb + β·L_ca + γ·L_s
//! ```
//!
//! Centroids are batch statistics and stay inside the gradient graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndiff::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcclConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub margin: f64,
}

impl Default for DcclConfig {
    fn default() -> Self {
        DcclConfig {
            alpha: 0.1,
            beta: 0.1,
            gamma: 1.0,
            margin: 5.0,
        }
    }
}

impl DcclConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        if [self.alpha, self.beta, self.gamma].iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidPair {
    pub c_benign: Vec<f64>,
    pub c_anomaly: Vec<f64>,
}

impl CentroidPair {
    pub fn dim(&self) -> usize {
        self.c_benign.len()
    }

    pub fn separation_sq(&self) -> f64 {
        sq_dist(&self.c_benign, &self.c_anomaly)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_cb: f64,
    pub l_ca: f64,
    pub l_s: f64,
    pub total: f64,
}

/// Loss terms as nodes on a tape.
#[derive(Debug, Clone, Copy)]
pub struct DcclVars {
    pub l_cb: Var,
    pub l_ca: Var,
    pub l_s: Var,
    pub total: Var,
}

impl DcclVars {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        let v = |x: Var| tape.value(x).data()[0];
        LossBreakdown {
            l_cb: v(self.l_cb),
            l_ca: v(self.l_ca),
            l_s: v(self.l_s),
            total: v(self.total),
        }
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn column_mean(z: &Tensor, what: &str) -> Result<Vec<f64>> {
    if z.rank() != 2 || z.rows() == 0 {
        return Err(Error::Data(format!("no {what} embeddings to average")));
    }
    let d = z.shape()[1];
    let mut m = vec![0.0; d];
    for i in 0..z.rows() {
        for (acc, v) in m.iter_mut().zip(z.row(i)) {
            *acc += v;
        }
    }
    let n = z.rows() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    Ok(m)
}

pub fn centroids(z_benign: &Tensor, z_anomaly: &Tensor) -> Result<CentroidPair> {
    let c_benign = column_mean(z_benign, "benign")?;
    let c_anomaly = column_mean(z_anomaly, "anomalous")?;
    if c_benign.len() != c_anomaly.len() {
        return Err(Error::shape("centroids", "benign and anomalous latents differ in width"));
    }
    Ok(CentroidPair { c_benign, c_anomaly })
}

fn compactness(tape: &mut Tape, z: Var) -> Result<(Var, Var)> {
    let n = tape.shape(z)[0];
    let c = tape.mean_axis(z, 0)?;
    let diff = tape.sub_bcast(z, c)?;
    let sq = tape.square(diff);
    let s = tape.sum(sq);
    Ok((tape.scale(s, 1.0 / n as f64), c))
}

/// Builds the loss on a tape from `[N,L]` and `[M,L]` latent nodes.
pub fn dccl_on(tape: &mut Tape, z_benign: Var, z_anomaly: Var, cfg: &DcclConfig) -> Result<DcclVars> {
    let (sb, sa) = (tape.shape(z_benign).to_vec(), tape.shape(z_anomaly).to_vec());
    if sb.len() != 2 || sa.len() != 2 || sb[1] != sa[1] {
        return Err(Error::shape("dccl", format!("latent shapes {sb:?} and {sa:?}")));
    }
    if sb[0] == 0 || sa[0] == 0 {
        return Err(Error::Data("dccl needs at least one latent of each class".into()));
    }
    if !tape.value(z_benign).all_finite() || !tape.value(z_anomaly).all_finite() {
        return Err(Error::NonFinite("non-finite embedding in dccl".into()));
    }
    let (l_cb, c_b) = compactness(tape, z_benign)?;
    let (l_ca, c_a) = compactness(tape, z_anomaly)?;
    let gap = tape.sub(c_b, c_a)?;
    let gap_sq = tape.square(gap);
    let dist = tape.sum(gap_sq);
    let neg = tape.scale(dist, -1.0);
    let hinge = tape.add_scalar(neg, cfg.margin);
    let l_s = tape.relu(hinge);

    let a = tape.scale(l_cb, cfg.alpha);
    let b = tape.scale(l_ca, cfg.beta);
    let g = tape.scale(l_s, cfg.gamma);
    let ab = tape.add(a, b)?;
    let total = tape.add(ab, g)?;
    Ok(DcclVars { l_cb, l_ca, l_s, total })
}

/// Evaluates the loss without keeping the graph.
pub fn dccl_loss(z_benign: &Tensor, z_anomaly: &Tensor, cfg: &DcclConfig) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let b = tape.constant(z_benign.clone());
    let a = tape.constant(z_anomaly.clone());
    let vars = dccl_on(&mut tape, b, a, cfg)?;
    Ok(vars.breakdown(&tape))
}
