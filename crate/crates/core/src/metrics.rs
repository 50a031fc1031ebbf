//! Link-level performance quantities: SINR, rates, the RIS-rate phase
//! gradient and the gap terms of the optimization objective.

use std::f64::consts::LN_2;

use crate::channel::{CMat, CVec, C64};
use crate::error::{Error, Result};

/// `NL x K` precoder; column `k` is `w_k`, rows `nL..(n+1)L` belong to AP `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamformingMatrix {
    matrix: CMat,
    num_aps: usize,
    antennas_per_ap: usize,
}

impl BeamformingMatrix {
    pub fn new(matrix: CMat, num_aps: usize, antennas_per_ap: usize) -> Result<Self> {
        if matrix.nrows() != num_aps * antennas_per_ap {
            return Err(Error::Dimension(format!(
                "beamformer has {} rows, expected N*L = {}",
                matrix.nrows(),
                num_aps * antennas_per_ap
            )));
        }
        Ok(Self { matrix, num_aps, antennas_per_ap })
    }

    pub fn zeros(num_aps: usize, antennas_per_ap: usize, num_users: usize) -> Self {
        Self {
            matrix: CMat::zeros(num_aps * antennas_per_ap, num_users),
            num_aps,
            antennas_per_ap,
        }
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut CMat {
        &mut self.matrix
    }

    pub fn num_users(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn num_aps(&self) -> usize {
        self.num_aps
    }

    pub fn antennas_per_ap(&self) -> usize {
        self.antennas_per_ap
    }

    pub fn column(&self, k: usize) -> CVec {
        self.matrix.column(k).clone_owned()
    }

    /// `w_{n,k}`.
    pub fn ap_block(&self, n: usize, k: usize) -> CVec {
        self.matrix
            .view((n * self.antennas_per_ap, k), (self.antennas_per_ap, 1))
            .clone_owned()
            .column(0)
            .clone_owned()
    }

    /// `sum_k ||w_{n,k}||^2`.
    pub fn ap_power(&self, n: usize) -> f64 {
        self.matrix
            .rows(n * self.antennas_per_ap, self.antennas_per_ap)
            .norm_squared()
    }

    /// Largest per-AP excess over `max_power` (zero when feasible).
    pub fn power_violation(&self, max_power: f64) -> f64 {
        (0..self.num_aps)
            .map(|n| (self.ap_power(n) - max_power).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// `|c^H w_i|^2` for every column.
fn received_powers(channel: &CVec, w: &BeamformingMatrix) -> Vec<f64> {
    (0..w.num_users())
        .map(|i| channel.dotc(&w.matrix.column(i)).norm_sqr())
        .collect()
}

/// `|c^H w_k|^2 / (sum_{i != k} |c^H w_i|^2 + noise)` for the supplied channel
/// `c` (the effective channel, or `G_k v` for the RIS-only link).
pub fn sinr(channel: &CVec, w: &BeamformingMatrix, k: usize, noise_power: f64) -> f64 {
    let powers = received_powers(channel, w);
    let interference: f64 = powers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != k)
        .map(|(_, p)| p)
        .sum();
    powers[k] / (interference + noise_power)
}

/// Shannon rate `B log2(1 + sinr)` in bit/s.
pub fn achievable_rate(sinr: f64, bandwidth_hz: f64) -> f64 {
    bandwidth_hz * (1.0 + sinr).log2()
}

/// Rate of user `k` over the RIS-only link `G_k v`.
pub fn ris_rate(v: &CVec, cascaded: &CMat, w: &BeamformingMatrix, k: usize, noise_power: f64, bandwidth_hz: f64) -> f64 {
    achievable_rate(sinr(&(cascaded * v), w, k, noise_power), bandwidth_hz)
}

/// The scalar and vector pieces of the RIS-rate gradient for one user:
/// `a_{k,i} = v^H G_k^H w_i` and `b_{k,i} = (w_i^H G_k v) G_k^H w_i`.
#[derive(Clone, Debug)]
pub struct GradientTerms {
    pub a: Vec<C64>,
    pub b: Vec<CVec>,
    /// `grad_v r_k^RIS` assembled from `a` and `b`.
    pub grad: CVec,
}

/// Assembles the gradient from the `(a, b)` terms:
/// `2B (b_kk - Gamma_RIS sum_{i != k} b_ki) / (ln2 (sum_i |a_ki|^2 + noise))`.
///
/// The returned vector packs the real-coordinate partials as
/// `dr/dRe(v_m) + j dr/dIm(v_m)`, so a real perturbation `dv` changes the rate
/// by `Re{grad^H dv}` to first order (twice the conjugate Wirtinger derivative).
pub fn gradient_terms(
    v: &CVec,
    cascaded: &CMat,
    w: &BeamformingMatrix,
    k: usize,
    noise_power: f64,
    bandwidth_hz: f64,
) -> GradientTerms {
    let ris_channel = cascaded * v;
    let k_count = w.num_users();
    let mut a = Vec::with_capacity(k_count);
    let mut b = Vec::with_capacity(k_count);
    for i in 0..k_count {
        let wi = w.matrix.column(i);
        let gh_w = cascaded.ad_mul(&wi);
        // v^H G^H w_i
        let a_ki = v.dotc(&gh_w);
        // w_i^H G v
        let scalar = wi.dotc(&ris_channel);
        a.push(a_ki);
        b.push(gh_w * scalar);
    }
    let denom: f64 = a.iter().map(|x| x.norm_sqr()).sum::<f64>() + noise_power;
    let interference: f64 = a
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != k)
        .map(|(_, x)| x.norm_sqr())
        .sum();
    let gamma = a[k].norm_sqr() / (interference + noise_power);
    let mut numer = b[k].clone();
    for (i, bi) in b.iter().enumerate() {
        if i != k {
            numer -= bi * C64::new(gamma, 0.0);
        }
    }
    let grad = numer * C64::new(2.0 * bandwidth_hz / (LN_2 * denom), 0.0);
    GradientTerms { a, b, grad }
}

/// `grad_v r_k^RIS` through the quotient-rule form with `h^w_{k,i} = G_k^H w_i`:
/// `2B (h_kk h_kk^H v - Gamma sum_{i != k} h_ki h_ki^H v) / (ln2 (N + D))`.
pub fn ris_rate_gradient(
    v: &CVec,
    cascaded: &CMat,
    w: &BeamformingMatrix,
    k: usize,
    noise_power: f64,
    bandwidth_hz: f64,
) -> CVec {
    let m = v.len();
    let hw: Vec<CVec> = (0..w.num_users())
        .map(|i| cascaded.ad_mul(&w.matrix.column(i)))
        .collect();
    let mut numer_grad = CVec::zeros(m);
    let mut denom_grad = CVec::zeros(m);
    let mut numer = 0.0;
    let mut denom = noise_power;
    for (i, h) in hw.iter().enumerate() {
        // eta_{k,i} = v^H h^w_{k,i}; h (h^H v) = h conj(eta)
        let eta = v.dotc(h);
        let outer_v = h * eta.conj();
        if i == k {
            numer = eta.norm_sqr();
            numer_grad += outer_v;
        } else {
            denom += eta.norm_sqr();
            denom_grad += outer_v;
        }
    }
    let gamma = numer / denom;
    (numer_grad - denom_grad * C64::new(gamma, 0.0))
        * C64::new(2.0 * bandwidth_hz / (LN_2 * (numer + denom)), 0.0)
}

/// `sum_k |r_k / r_k^des - 1|`.
pub fn adaptation_gap(rates: &[f64], demands: &[f64]) -> f64 {
    rates
        .iter()
        .zip(demands)
        .map(|(r, d)| (r / d - 1.0).abs())
        .sum()
}

/// `|r_k - r_k^RIS|^2`.
pub fn redundancy_gap(rate: f64, ris_rate: f64) -> f64 {
    (rate - ris_rate).powi(2)
}

/// `alpha_k = ||h_k|| / max_i ||h_i||` over the current direct channels.
/// If every direct channel is zero all weights fall back to one.
pub fn user_weights(direct_norms: &[f64]) -> Vec<f64> {
    let max = direct_norms.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![1.0; direct_norms.len()];
    }
    direct_norms.iter().map(|n| n / max).collect()
}
