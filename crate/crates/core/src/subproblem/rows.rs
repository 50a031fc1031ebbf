//! First-order restrictions of the SINR and gradient-norm constraints.

use std::f64::consts::LN_2;

use crate::channel::{CMat, CVec, ChannelState, C64};
use crate::conic::{AffineExpr, Cone, ConeConstraint, VarId};
use crate::error::{Error, Result};

use super::{IterateState, Layout, Stage, RATE_UNIT};

/// Complex affine function of real program variables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComplexAffine {
    pub re: AffineExpr,
    pub im: AffineExpr,
}

impl ComplexAffine {
    pub fn constant(c: C64) -> Self {
        Self { re: AffineExpr::constant(c.re), im: AffineExpr::constant(c.im) }
    }

    /// `offset + sum_j conj(c_j) z_j`, where `z_j = x[re_j] + i x[im_j]`.
    pub fn conj_dot(c: impl Iterator<Item = C64>, index: impl Fn(usize) -> (VarId, VarId), offset: C64) -> Self {
        let mut out = Self::constant(offset);
        for (j, cj) in c.enumerate() {
            let (re, im) = index(j);
            out.re.add_term(re, cj.re).add_term(im, cj.im);
            out.im.add_term(im, cj.re).add_term(re, -cj.im);
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> C64 {
        C64::new(self.re.eval(x), self.im.eval(x))
    }
}

/// `Re{g^H (z - z0)}` as a real affine expression.
fn re_inner(g: &CVec, z0: &CVec, index: impl Fn(usize) -> (VarId, VarId)) -> AffineExpr {
    let mut e = AffineExpr::constant(-g.dotc(z0).re);
    for (j, gj) in g.iter().enumerate() {
        let (re, im) = index(j);
        e.add_term(re, gj.re).add_term(im, gj.im);
    }
    e
}

/// `square_scale * sum_j |squares_j(x)|^2 + affine(x) <= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaylorRow {
    pub squares: Vec<ComplexAffine>,
    pub square_scale: f64,
    pub affine: AffineExpr,
    pub label: String,
}

impl TaylorRow {
    /// Left-hand side at `x`; the row holds when this is `<= 0`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.square_scale * self.squares.iter().map(|y| y.eval(x).norm_sqr()).sum::<f64>() + self.affine.eval(x)
    }

    /// Cone form. With `t = -affine / scale`, `sum |y|^2 <= t` becomes
    /// `||(t/s^2 - 1, 2 Re y/s, 2 Im y/s)|| <= t/s^2 + 1`; without squares it
    /// is `-affine >= 0`. The factor `s^2 >= 1` brings the largest coefficient
    /// of `t` down to one: reflected links can sit ten orders of magnitude
    /// above the noise, which stalls the interior-point iterations otherwise.
    pub fn to_constraint(&self) -> ConeConstraint {
        if self.squares.is_empty() {
            return ConeConstraint::new(Cone::NonNeg, vec![self.affine.negated().compacted()], self.label.clone());
        }
        let t = self.affine.scaled(-1.0 / self.square_scale);
        let s2 = t.terms.iter().map(|(_, a)| a.abs()).fold(1.0, f64::max);
        let t = t.scaled(1.0 / s2);
        let y_scale = 2.0 / s2.sqrt();
        let mut head = t.clone();
        head.add_constant(1.0);
        let mut tail = t;
        tail.add_constant(-1.0);
        let mut rows = vec![head.compacted(), tail.compacted()];
        for y in &self.squares {
            rows.push(y.re.scaled(y_scale).compacted());
            rows.push(y.im.scaled(y_scale).compacted());
        }
        ConeConstraint::new(Cone::SecondOrder, rows, self.label.clone())
    }
}

/// Which SINR a restriction bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Link {
    /// Direct plus reflected channel; slack `q_k`.
    Effective,
    /// Reflected channel only; slack `q_k^RIS`.
    RisOnly,
}

fn slack_of(state: &IterateState, layout: &Layout, link: Link, k: usize) -> (VarId, f64) {
    match link {
        Link::Effective => (layout.sinr(k), state.sinr_slack[k]),
        Link::RisOnly => (layout.ris_sinr(k), state.ris_sinr_slack[k]),
    }
}

/// The shared SINR pattern
/// `sum_{i != k} |x_i|^2 + 1 + (|x~_k|^2 / q~^2) q - 2 Re{conj(x~_k) x_k} / q~ <= 0`,
/// with `x~_k` the value of `x_k` at the expansion point.
fn sinr_row(xs: Vec<ComplexAffine>, x_tilde: C64, k: usize, q: VarId, q_tilde: f64, label: String) -> Result<TaylorRow> {
    if !(q_tilde > 1e-12) || !q_tilde.is_finite() {
        return Err(Error::DegenerateExpansion(format!("{label}: SINR slack {q_tilde} is not positive")));
    }
    let mut squares = Vec::with_capacity(xs.len().saturating_sub(1));
    let mut desired = None;
    for (i, x) in xs.into_iter().enumerate() {
        if i == k {
            desired = Some(x);
        } else {
            squares.push(x);
        }
    }
    let desired = desired.expect("user index within range");
    let mut affine = AffineExpr::constant(1.0);
    affine.add_term(q, x_tilde.norm_sqr() / (q_tilde * q_tilde));
    affine.add_scaled(&desired.re, -2.0 * x_tilde.re / q_tilde);
    affine.add_scaled(&desired.im, -2.0 * x_tilde.im / q_tilde);
    Ok(TaylorRow { squares, square_scale: 1.0, affine: affine.compacted(), label })
}

/// SINR restriction of the beamforming stage for user `k`, with the channel
/// `c = (h_k + G_k v~) / sigma` or `G_k v~ / sigma` held fixed.
pub fn sinr_restriction_w(
    state: &IterateState,
    channels: &ChannelState,
    k: usize,
    link: Link,
    layout: &Layout,
    noise_power: f64,
) -> Result<TaylorRow> {
    debug_assert_eq!(layout.stage, Stage::W);
    let sigma = noise_power.sqrt();
    let c = match link {
        Link::Effective => channels.effective(k, &state.v),
        Link::RisOnly => channels.ris_only(k, &state.v),
    } / C64::new(sigma, 0.0);
    let xs = (0..layout.num_users())
        .map(|i| ComplexAffine::conj_dot(c.iter().copied(), |row| layout.w(row, i), C64::new(0.0, 0.0)))
        .collect();
    let x_tilde = c.dotc(&state.w.matrix().column(k));
    let (q, q_tilde) = slack_of(state, layout, link, k);
    let tag = if link == Link::Effective { "sinr" } else { "sinr-ris" };
    sinr_row(xs, x_tilde, k, q, q_tilde, format!("{tag} w k={k}"))
}

/// SINR restriction of the phase stage: `x_i = w_i^H h_k / sigma + d_i^H v`
/// with `d_i = G_k^H w_i / sigma` (the direct part is dropped for the RIS-only link).
pub fn sinr_restriction_v(
    state: &IterateState,
    channels: &ChannelState,
    k: usize,
    link: Link,
    layout: &Layout,
    noise_power: f64,
) -> Result<TaylorRow> {
    debug_assert_eq!(layout.stage, Stage::V);
    let sigma = noise_power.sqrt();
    let g = channels.cascaded(k);
    let h = channels.aggregate_direct(k);
    let mut xs = Vec::with_capacity(layout.num_users());
    let mut x_tilde = C64::new(0.0, 0.0);
    for i in 0..layout.num_users() {
        let wi = state.w.matrix().column(i);
        let d = g.ad_mul(&wi) / C64::new(sigma, 0.0);
        let c = match link {
            Link::Effective => wi.dotc(h) / sigma,
            Link::RisOnly => C64::new(0.0, 0.0),
        };
        if i == k {
            x_tilde = c + d.dotc(&state.v);
        }
        xs.push(ComplexAffine::conj_dot(d.iter().copied(), |m| layout.v(m), c));
    }
    let (q, q_tilde) = slack_of(state, layout, link, k);
    let tag = if link == Link::Effective { "sinr" } else { "sinr-ris" };
    sinr_row(xs, x_tilde, k, q, q_tilde, format!("{tag} v k={k}"))
}

/// Pieces shared by both gradient-norm restrictions.
struct GradientExpansion {
    /// `eta~ = b~_kk - q~_RIS sum_{i != k} b~_ki`.
    eta: CVec,
    eta_norm: f64,
    /// `sum_{i != k} b~_ki`.
    interference: CVec,
    /// `beta = 2 B' / u~` with `B'` in Mbit/s.
    beta: f64,
    u_tilde: f64,
}

fn gradient_expansion(
    b: &[CVec],
    k: usize,
    q_ris: f64,
    u_tilde_bps: f64,
    bandwidth_hz: f64,
    label: &str,
) -> Result<GradientExpansion> {
    let m = b[0].len();
    let mut interference = CVec::zeros(m);
    for (i, bi) in b.iter().enumerate() {
        if i != k {
            interference += bi;
        }
    }
    let eta = &b[k] - &interference * C64::new(q_ris, 0.0);
    let eta_norm = eta.norm();
    if !(eta_norm >= 1e-12) {
        return Err(Error::DegenerateExpansion(format!("{label}: gradient direction vanishes")));
    }
    let u_tilde = u_tilde_bps / RATE_UNIT;
    if !(u_tilde > 0.0) || !u_tilde.is_finite() {
        return Err(Error::DegenerateExpansion(format!("{label}: gradient slack {u_tilde_bps} is not positive")));
    }
    Ok(GradientExpansion { eta, eta_norm, interference, beta: 2.0 * bandwidth_hz / RATE_UNIT / u_tilde, u_tilde })
}

/// `ln2 (sum_i |a_i|^2 + 1) - T <= 0` where `T` is the linearization of
/// `beta ||eta||`; `phase_terms` is `Re{eta^H d eta}` restricted to the
/// optimized block and is supplied by the caller.
fn gradient_row(
    squares: Vec<ComplexAffine>,
    exp: &GradientExpansion,
    layout: &Layout,
    k: usize,
    q_ris_tilde: f64,
    block_terms: AffineExpr,
    label: String,
) -> TaylorRow {
    let (beta, nrm) = (exp.beta, exp.eta_norm);
    // T = beta ||eta|| - (beta ||eta|| / u~)(u - u~) + (beta / ||eta||) [ ... ]
    let mut t = AffineExpr::constant(beta * nrm);
    t.add_scaled(&{
        let mut du = AffineExpr::var(layout.grad(k));
        du.add_constant(-exp.u_tilde);
        du
    }, -beta * nrm / exp.u_tilde);
    let c_q = -exp.eta.dotc(&exp.interference).re;
    let mut dq = AffineExpr::var(layout.ris_sinr(k));
    dq.add_constant(-q_ris_tilde);
    let mut bracket = dq.scaled(c_q);
    bracket.add_scaled(&block_terms, 1.0);
    t.add_scaled(&bracket, beta / nrm);

    let mut affine = AffineExpr::constant(LN_2);
    affine.add_scaled(&t, -1.0);
    TaylorRow { squares, square_scale: LN_2, affine: affine.compacted(), label }
}

/// Gradient-norm restriction of the beamforming stage for user `k`.
///
/// With `p = G_k v~ / sigma` and `G^ = G_k / sigma`, `a_i = p^H w_i`,
/// `b_i = conj(a_i) G^^H w_i`, and the real-linear change of
/// `Re{eta~^H b_i}` in `w_i` is `Re{g_i^H dw_i}` with
/// `g_i = ((G^ eta~)^H w~_i) p + (p^H w~_i) G^ eta~`.
pub fn gradient_norm_restriction_w(
    state: &IterateState,
    channels: &ChannelState,
    k: usize,
    layout: &Layout,
    noise_power: f64,
    bandwidth_hz: f64,
) -> Result<TaylorRow> {
    debug_assert_eq!(layout.stage, Stage::W);
    let sigma = noise_power.sqrt();
    let g: CMat = channels.cascaded(k) / C64::new(sigma, 0.0);
    let p = &g * &state.v;
    let k_count = layout.num_users();
    let w = state.w.matrix();
    let b: Vec<CVec> = (0..k_count)
        .map(|i| {
            let wi = w.column(i);
            g.ad_mul(&wi) * wi.dotc(&p)
        })
        .collect();
    let label = format!("grad w k={k}");
    let q_ris = state.ris_sinr_slack[k];
    let exp = gradient_expansion(&b, k, q_ris, state.grad_slack[k], bandwidth_hz, &label)?;

    let g_eta = &g * &exp.eta;
    let mut block_terms = AffineExpr::constant(0.0);
    for i in 0..k_count {
        let wi: CVec = w.column(i).clone_owned();
        let gi = &p * g_eta.dotc(&wi) + &g_eta * p.dotc(&wi);
        let weight = if i == k { 1.0 } else { -q_ris };
        block_terms.add_scaled(&re_inner(&gi, &wi, |row| layout.w(row, i)), weight);
    }
    let squares = (0..k_count)
        .map(|i| ComplexAffine::conj_dot(p.iter().copied(), |row| layout.w(row, i), C64::new(0.0, 0.0)))
        .collect();
    Ok(gradient_row(squares, &exp, layout, k, q_ris, block_terms, label))
}

/// Gradient-norm restriction of the phase stage for user `k`.
///
/// With `d_i = G_k^H w_i / sigma`, `|a_i|^2 = |d_i^H v|^2`,
/// `b_i = (d_i^H v) d_i`, and `Re{eta~^H db_i} = Re{g_i^H dv}` with
/// `g_i = d_i (d_i^H eta~)`.
pub fn gradient_norm_restriction_v(
    state: &IterateState,
    channels: &ChannelState,
    k: usize,
    layout: &Layout,
    noise_power: f64,
    bandwidth_hz: f64,
) -> Result<TaylorRow> {
    debug_assert_eq!(layout.stage, Stage::V);
    let sigma = noise_power.sqrt();
    let g = channels.cascaded(k);
    let k_count = layout.num_users();
    let d: Vec<CVec> = (0..k_count)
        .map(|i| g.ad_mul(&state.w.matrix().column(i)) / C64::new(sigma, 0.0))
        .collect();
    let b: Vec<CVec> = d.iter().map(|di| di * di.dotc(&state.v)).collect();
    let label = format!("grad v k={k}");
    let q_ris = state.ris_sinr_slack[k];
    let exp = gradient_expansion(&b, k, q_ris, state.grad_slack[k], bandwidth_hz, &label)?;

    let mut direction = CVec::zeros(state.v.len());
    for (i, di) in d.iter().enumerate() {
        let weight = if i == k { 1.0 } else { -q_ris };
        direction.axpy(di.dotc(&exp.eta) * weight, di, C64::new(1.0, 0.0));
    }
    let block_terms = re_inner(&direction, &state.v, |m| layout.v(m));
    let squares = d
        .iter()
        .map(|di| ComplexAffine::conj_dot(di.iter().copied(), |m| layout.v(m), C64::new(0.0, 0.0)))
        .collect();
    Ok(gradient_row(squares, &exp, layout, k, q_ris, block_terms, label))
}
