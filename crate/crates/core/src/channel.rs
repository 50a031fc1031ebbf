//! Channel construction for one coherence block.
//!
//! Direct AP-user links are Rayleigh with log-normal shadowing; AP-RIS and
//! RIS-user links are line-of-sight by default. Every random link draws from
//! its own ChaCha stream keyed by `(seed, link)`, so blocking or skipping one
//! link never perturbs another link's realization.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{RisChannelModel, SystemConfig};
use crate::error::{Error, Result};
use crate::geometry::{distance, ris_correlation_matrix, Geometry};

pub type C64 = Complex64;
pub type CVec = DVector<C64>;
pub type CMat = DMatrix<C64>;

/// Stream id offset for the correlated AP-RIS draws.
const AP_RIS_STREAM_BASE: u64 = 1 << 32;
/// Stream id offset for the correlated RIS-user draws.
const RIS_USER_STREAM_BASE: u64 = 2 << 32;

/// Log-distance pathloss as a linear power gain.
pub fn pathloss_gain(distance_m: f64, ref_db: f64, exponent: f64) -> f64 {
    let loss_db = ref_db + 10.0 * exponent * distance_m.log10();
    10f64.powf(-loss_db / 10.0)
}

/// Independent random stream for the direct link `(n, k)`.
pub fn direct_channel_stream(seed: u64, n: usize, k: usize, num_users: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((n * num_users + k) as u64);
    rng
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Large-scale gain of link `(n, k)` without shadowing.
pub fn direct_mean_gain(geometry: &Geometry, config: &SystemConfig, n: usize, k: usize) -> Result<f64> {
    let d = distance(&geometry.ap_positions[n], &geometry.user_positions[k]);
    if d <= 0.0 {
        return Err(Error::ZeroDistance(format!("AP {n} and user {k}")));
    }
    Ok(pathloss_gain(d, config.pathloss_ref_db, config.pathloss_exponent_direct))
}

/// `h_{n,k} = sqrt(beta) z` with `beta` including an 8 dB-style log-normal
/// shadowing draw and `z ~ CN(0, I_L)`. Draw order: shadowing, then `z`.
pub fn sample_direct_channel<R: Rng + ?Sized>(
    rng: &mut R,
    geometry: &Geometry,
    config: &SystemConfig,
    n: usize,
    k: usize,
) -> Result<CVec> {
    let mean = direct_mean_gain(geometry, config, n, k)?;
    let shadow_db: f64 = config.shadowing_std_db * rng.sample::<f64, _>(StandardNormal);
    let beta = mean * 10f64.powf(shadow_db / 10.0);
    let amp = beta.sqrt();
    Ok(CVec::from_fn(config.antennas_per_ap, |_, _| amp * complex_normal(rng)))
}

fn los_phase(d: f64, wavelength: f64) -> C64 {
    C64::from_polar(1.0, -2.0 * PI * d / wavelength)
}

/// Deterministic LoS links: `H_n` (L x M) per AP and `g_k` (M) per user.
/// Every entry has the segment's `sqrt(pathloss)` as modulus and the phase of
/// its exact antenna-element (or element-user) distance.
pub fn build_los_channels(geometry: &Geometry, config: &SystemConfig) -> (Vec<CMat>, Vec<CVec>) {
    let lambda = config.wavelength_m;
    let elements = &geometry.ris_element_positions;
    let m = elements.len();

    let ap_ris = geometry
        .ap_positions
        .iter()
        .zip(&geometry.antenna_positions)
        .map(|(ap, antennas)| {
            let seg = distance(ap, &geometry.ris_center);
            let amp = pathloss_gain(seg, config.pathloss_ref_db, config.pathloss_exponent_ris).sqrt();
            CMat::from_fn(antennas.len(), m, |l, e| {
                amp * los_phase(distance(&antennas[l], &elements[e]), lambda)
            })
        })
        .collect();

    let ris_user = geometry
        .user_positions
        .iter()
        .map(|user| {
            let seg = distance(user, &geometry.ris_center);
            let amp = pathloss_gain(seg, config.pathloss_ref_db, config.pathloss_exponent_ris).sqrt();
            CVec::from_fn(m, |e, _| amp * los_phase(distance(&elements[e], user), lambda))
        })
        .collect();

    (ap_ris, ris_user)
}

/// Correlated Rayleigh links `sqrt(beta) R^{1/2} z` with the LoS segment pathloss.
pub fn build_correlated_channels(
    geometry: &Geometry,
    config: &SystemConfig,
    seed: u64,
) -> (Vec<CMat>, Vec<CVec>) {
    let corr = ris_correlation_matrix(geometry, config.wavelength_m);
    let eig = corr.symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
    let root_c = root.map(|x| C64::new(x, 0.0));
    let m = root.nrows();
    let l_count = config.antennas_per_ap;

    let ap_ris = geometry
        .ap_positions
        .iter()
        .enumerate()
        .map(|(n, ap)| {
            let seg = distance(ap, &geometry.ris_center);
            let amp = pathloss_gain(seg, config.pathloss_ref_db, config.pathloss_exponent_ris).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(AP_RIS_STREAM_BASE + n as u64);
            let z = CMat::from_fn(l_count, m, |_, _| complex_normal(&mut rng));
            (z * &root_c) * C64::new(amp, 0.0)
        })
        .collect();

    let ris_user = geometry
        .user_positions
        .iter()
        .enumerate()
        .map(|(k, user)| {
            let seg = distance(user, &geometry.ris_center);
            let amp = pathloss_gain(seg, config.pathloss_ref_db, config.pathloss_exponent_ris).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(RIS_USER_STREAM_BASE + k as u64);
            let z = CVec::from_fn(m, |_, _| complex_normal(&mut rng));
            (&root_c * z) * C64::new(amp, 0.0)
        })
        .collect();

    (ap_ris, ris_user)
}

/// `G_k = H diag(g_k)`: column `m` of `H` scaled by `g_k[m]`.
pub fn cascade(h: &CMat, g: &CVec) -> Result<CMat> {
    if h.ncols() != g.len() {
        return Err(Error::Dimension(format!(
            "cascade: H has {} columns, g has {} entries",
            h.ncols(),
            g.len()
        )));
    }
    let mut out = h.clone();
    for (mut col, gm) in out.column_iter_mut().zip(g.iter()) {
        col *= *gm;
    }
    Ok(out)
}

/// `h_k + G_k v`.
pub fn effective_channel(h: &CVec, g: &CMat, v: &CVec) -> Result<CVec> {
    if g.nrows() != h.len() || g.ncols() != v.len() {
        return Err(Error::Dimension(format!(
            "effective channel: h is {}, G is {}x{}, v is {}",
            h.len(),
            g.nrows(),
            g.ncols(),
            v.len()
        )));
    }
    Ok(h + g * v)
}

/// All channel tensors of one coherence block plus the blockage mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelState {
    num_aps: usize,
    antennas_per_ap: usize,
    num_users: usize,
    num_elements: usize,
    /// `h_{n,k}` at index `n * K + k`.
    direct: Vec<CVec>,
    ap_ris: Vec<CMat>,
    ris_user: Vec<CVec>,
    stacked_ap_ris: CMat,
    cascaded: Vec<CMat>,
    aggregate: Vec<CVec>,
    blockage_mask: Vec<bool>,
}

impl ChannelState {
    /// Samples every link for `seed`.
    pub fn generate(geometry: &Geometry, config: &SystemConfig, seed: u64) -> Result<Self> {
        let (n_count, k_count) = (config.num_aps, config.num_users);
        let mut direct = Vec::with_capacity(n_count * k_count);
        for n in 0..n_count {
            for k in 0..k_count {
                let mut rng = direct_channel_stream(seed, n, k, k_count);
                direct.push(sample_direct_channel(&mut rng, geometry, config, n, k)?);
            }
        }
        let (ap_ris, ris_user) = match config.ris_channel_model {
            RisChannelModel::LineOfSight => build_los_channels(geometry, config),
            RisChannelModel::CorrelatedRayleigh => build_correlated_channels(geometry, config, seed),
        };
        Self::from_parts(direct, ap_ris, ris_user, vec![false; n_count * k_count])
    }

    /// Assembles a state from raw links; `direct` is indexed `n * K + k`.
    pub fn from_parts(
        direct: Vec<CVec>,
        ap_ris: Vec<CMat>,
        ris_user: Vec<CVec>,
        blockage_mask: Vec<bool>,
    ) -> Result<Self> {
        let num_aps = ap_ris.len();
        let num_users = ris_user.len();
        if num_aps == 0 || num_users == 0 {
            return Err(Error::Dimension("need at least one AP and one user".into()));
        }
        let antennas_per_ap = ap_ris[0].nrows();
        let num_elements = ap_ris[0].ncols();
        if ap_ris.iter().any(|h| h.nrows() != antennas_per_ap || h.ncols() != num_elements) {
            return Err(Error::Dimension("AP-RIS matrices disagree in shape".into()));
        }
        if ris_user.iter().any(|g| g.len() != num_elements) {
            return Err(Error::Dimension("RIS-user vectors disagree with M".into()));
        }
        if direct.len() != num_aps * num_users || direct.iter().any(|h| h.len() != antennas_per_ap) {
            return Err(Error::Dimension("direct links must be N*K vectors of length L".into()));
        }
        if blockage_mask.len() != num_aps * num_users {
            return Err(Error::Dimension("blockage mask must have N*K entries".into()));
        }

        let nl = num_aps * antennas_per_ap;
        let mut stacked_ap_ris = CMat::zeros(nl, num_elements);
        for (n, h) in ap_ris.iter().enumerate() {
            stacked_ap_ris
                .rows_mut(n * antennas_per_ap, antennas_per_ap)
                .copy_from(h);
        }
        let cascaded = ris_user
            .iter()
            .map(|g| cascade(&stacked_ap_ris, g))
            .collect::<Result<Vec<_>>>()?;

        let mut state = Self {
            num_aps,
            antennas_per_ap,
            num_users,
            num_elements,
            direct,
            ap_ris,
            ris_user,
            stacked_ap_ris,
            cascaded,
            aggregate: Vec::new(),
            blockage_mask,
        };
        for idx in 0..state.blockage_mask.len() {
            if state.blockage_mask[idx] {
                state.direct[idx].fill(C64::new(0.0, 0.0));
            }
        }
        state.rebuild_aggregate();
        Ok(state)
    }

    fn rebuild_aggregate(&mut self) {
        let l = self.antennas_per_ap;
        self.aggregate = (0..self.num_users)
            .map(|k| {
                let mut h = CVec::zeros(self.num_aps * l);
                for n in 0..self.num_aps {
                    h.rows_mut(n * l, l).copy_from(&self.direct[n * self.num_users + k]);
                }
                h
            })
            .collect();
    }

    pub fn num_aps(&self) -> usize {
        self.num_aps
    }

    pub fn antennas_per_ap(&self) -> usize {
        self.antennas_per_ap
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    pub fn total_antennas(&self) -> usize {
        self.num_aps * self.antennas_per_ap
    }

    pub fn direct(&self, n: usize, k: usize) -> &CVec {
        &self.direct[n * self.num_users + k]
    }

    /// Stacked `[h_{1,k}; ...; h_{N,k}]`.
    pub fn aggregate_direct(&self, k: usize) -> &CVec {
        &self.aggregate[k]
    }

    pub fn ap_ris(&self, n: usize) -> &CMat {
        &self.ap_ris[n]
    }

    pub fn stacked_ap_ris(&self) -> &CMat {
        &self.stacked_ap_ris
    }

    pub fn ris_user(&self, k: usize) -> &CVec {
        &self.ris_user[k]
    }

    pub fn cascaded(&self, k: usize) -> &CMat {
        &self.cascaded[k]
    }

    /// `h_k + G_k v`.
    pub fn effective(&self, k: usize, v: &CVec) -> CVec {
        &self.aggregate[k] + &self.cascaded[k] * v
    }

    /// `G_k v`, the channel left when every direct link of `k` is blocked.
    pub fn ris_only(&self, k: usize, v: &CVec) -> CVec {
        &self.cascaded[k] * v
    }

    pub fn blockage_mask(&self) -> &[bool] {
        &self.blockage_mask
    }

    pub fn is_link_blocked(&self, n: usize, k: usize) -> bool {
        self.blockage_mask[n * self.num_users + k]
    }

    pub fn is_user_blocked(&self, k: usize) -> bool {
        (0..self.num_aps).all(|n| self.is_link_blocked(n, k))
    }

    /// Zeroes `h_{n,k}` and marks it blocked. RIS links are never touched.
    pub fn block_link(&mut self, n: usize, k: usize) {
        let idx = n * self.num_users + k;
        self.blockage_mask[idx] = true;
        self.direct[idx].fill(C64::new(0.0, 0.0));
        let l = self.antennas_per_ap;
        self.aggregate[k].rows_mut(n * l, l).fill(C64::new(0.0, 0.0));
    }

    pub fn block_user(&mut self, k: usize) {
        for n in 0..self.num_aps {
            self.block_link(n, k);
        }
    }

    /// `||h_k||` of the aggregate direct channel (zero once blocked).
    pub fn direct_norm(&self, k: usize) -> f64 {
        self.aggregate[k].norm()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ChannelStateJson::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: ChannelStateJson = serde_json::from_str(text)?;
        wire.into_state()
    }
}

/// Wire form of [`ChannelState`]; complex numbers are `[re, im]` pairs.
///
/// `direct[n][k][l]`, `ap_ris[n][l][m]`, `ris_user[k][m]`,
/// `cascaded[k][row][m]` with `row` over the stacked `N*L` antennas,
/// `blockage_mask[n][k]`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ChannelStateJson {
    pub num_aps: usize,
    pub antennas_per_ap: usize,
    pub num_users: usize,
    pub num_elements: usize,
    pub direct: Vec<Vec<Vec<[f64; 2]>>>,
    pub ap_ris: Vec<Vec<Vec<[f64; 2]>>>,
    pub ris_user: Vec<Vec<[f64; 2]>>,
    pub cascaded: Vec<Vec<Vec<[f64; 2]>>>,
    pub blockage_mask: Vec<Vec<bool>>,
}

fn pair(c: &C64) -> [f64; 2] {
    [c.re, c.im]
}

fn vec_pairs(v: &CVec) -> Vec<[f64; 2]> {
    v.iter().map(pair).collect()
}

fn mat_pairs(m: &CMat) -> Vec<Vec<[f64; 2]>> {
    m.row_iter().map(|row| row.iter().map(pair).collect()).collect()
}

fn pairs_vec(p: &[[f64; 2]]) -> CVec {
    CVec::from_iterator(p.len(), p.iter().map(|[re, im]| C64::new(*re, *im)))
}

fn pairs_mat(rows: &[Vec<[f64; 2]>]) -> Result<CMat> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Dimension("ragged matrix in channel JSON".into()));
    }
    Ok(CMat::from_fn(r, c, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
}

impl From<&ChannelState> for ChannelStateJson {
    fn from(s: &ChannelState) -> Self {
        let (n_count, k_count) = (s.num_aps, s.num_users);
        Self {
            num_aps: n_count,
            antennas_per_ap: s.antennas_per_ap,
            num_users: k_count,
            num_elements: s.num_elements,
            direct: (0..n_count)
                .map(|n| (0..k_count).map(|k| vec_pairs(s.direct(n, k))).collect())
                .collect(),
            ap_ris: s.ap_ris.iter().map(mat_pairs).collect(),
            ris_user: s.ris_user.iter().map(vec_pairs).collect(),
            cascaded: s.cascaded.iter().map(mat_pairs).collect(),
            blockage_mask: (0..n_count)
                .map(|n| (0..k_count).map(|k| s.is_link_blocked(n, k)).collect())
                .collect(),
        }
    }
}

impl ChannelStateJson {
    /// Rebuilds the state; the stored cascade must match `H diag(g_k)` exactly.
    pub fn into_state(self) -> Result<ChannelState> {
        let mut direct = Vec::with_capacity(self.num_aps * self.num_users);
        for per_ap in &self.direct {
            for link in per_ap {
                direct.push(pairs_vec(link));
            }
        }
        let ap_ris = self.ap_ris.iter().map(|m| pairs_mat(m)).collect::<Result<Vec<_>>>()?;
        let ris_user = self.ris_user.iter().map(|g| pairs_vec(g)).collect();
        let mask = self.blockage_mask.iter().flatten().copied().collect();
        let state = ChannelState::from_parts(direct, ap_ris, ris_user, mask)?;
        for (k, stored) in self.cascaded.iter().enumerate() {
            if pairs_mat(stored)? != state.cascaded[k] {
                return Err(Error::Dimension(format!(
                    "stored cascade for user {k} does not equal H diag(g_k)"
                )));
            }
        }
        Ok(state)
    }
}
