//! Encoders, update layers and readouts, each with its reverse pass.
//!
//! Gradients of the real loss with respect to a complex quantity `z = x + iy`
//! are carried as `dL/dx + i dL/dy`. With that convention a linear map `w = M z`
//! back-propagates as `M^H g`, a product `w = x y` sends `conj(y) g` to `x`,
//! and `w = conj(z)` sends `conj(g)` to `z`.

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::scalar::{cz, Real, C};

use super::params::{GgnnParams, LayerParams};

/// Hidden features for one forward pass at one layer.
///
/// Edge features are laid out as `[(n * K + k) * C + c]`, vertex features as
/// `[n * C + c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenState<T> {
    pub n_t: usize,
    pub n_users: usize,
    pub width: usize,
    pub edge: Vec<C<T>>,
    pub vertex: Vec<C<T>>,
}

impl<T: Real> HiddenState<T> {
    pub fn zeros(n_t: usize, n_users: usize, width: usize) -> Self {
        Self {
            n_t,
            n_users,
            width,
            edge: vec![cz(); n_t * n_users * width],
            vertex: vec![cz(); n_t * width],
        }
    }

    #[inline]
    pub fn edge_at(&self, n: usize, k: usize) -> &[C<T>] {
        let o = (n * self.n_users + k) * self.width;
        &self.edge[o..o + self.width]
    }

    #[inline]
    pub fn vertex_at(&self, n: usize) -> &[C<T>] {
        &self.vertex[n * self.width..(n + 1) * self.width]
    }

    pub fn is_finite(&self) -> bool {
        self.edge
            .iter()
            .chain(&self.vertex)
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Split tanh on real and imaginary parts.
#[inline]
pub(crate) fn ctanh<T: Real>(z: C<T>) -> C<T> {
    C::new(z.re.tanh(), z.im.tanh())
}

#[inline]
fn ctanh_back<T: Real>(out: C<T>, g: C<T>) -> C<T> {
    C::new((T::one() - out.re * out.re) * g.re, (T::one() - out.im * out.im) * g.im)
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `out = m x`.
#[inline]
fn matvec<T: Real>(m: &CMatrix<T>, x: &[C<T>], out: &mut [C<T>]) {
    for (o, row) in out.iter_mut().zip(m.as_slice().chunks_exact(m.cols())) {
        *o = row.iter().zip(x).fold(cz(), |acc, (a, b)| acc + *a * *b);
    }
}

/// `out += m x`.
#[inline]
fn matvec_add<T: Real>(m: &CMatrix<T>, x: &[C<T>], out: &mut [C<T>]) {
    for (o, row) in out.iter_mut().zip(m.as_slice().chunks_exact(m.cols())) {
        *o = row.iter().zip(x).fold(*o, |acc, (a, b)| acc + *a * *b);
    }
}

/// `out += m^H g`.
#[inline]
fn adj_matvec_add<T: Real>(m: &CMatrix<T>, g: &[C<T>], out: &mut [C<T>]) {
    for (row, gi) in m.as_slice().chunks_exact(m.cols()).zip(g) {
        for (o, a) in out.iter_mut().zip(row) {
            *o = *o + a.conj() * *gi;
        }
    }
}

/// `gm += g x^H`.
#[inline]
fn outer_add<T: Real>(gm: &mut CMatrix<T>, g: &[C<T>], x: &[C<T>]) {
    let cols = gm.cols();
    for (row, gi) in gm.as_mut_slice().chunks_exact_mut(cols).zip(g) {
        for (d, xj) in row.iter_mut().zip(x) {
            *d = *d + *gi * xj.conj();
        }
    }
}

fn check_inputs<T: Real>(h: &CMatrix<T>, state: &HiddenState<T>, layer_in: usize) -> Result<()> {
    if h.rows() != state.n_t || h.cols() != state.n_users {
        return Err(Error::dim(format!(
            "channel is {}x{}, hidden state is for {} antennas and {} users",
            h.rows(),
            h.cols(),
            state.n_t,
            state.n_users
        )));
    }
    if state.width != layer_in {
        return Err(Error::dim(format!(
            "hidden width {} but layer expects {}",
            state.width, layer_in
        )));
    }
    Ok(())
}

/// Mean of each phase-pattern row (the pooled vertex input).
fn pooled_rows<T: Real>(m_p: &CMatrix<T>) -> Vec<C<T>> {
    let l = T::from_count(m_p.cols());
    (0..m_p.rows())
        .map(|n| m_p.row(n).iter().fold(cz(), |acc, z| acc + *z) / l)
        .collect()
}

/// Layer-0 hidden state.
///
/// Edge `(n, k)` gets `h_{n,k}` times a learned vector. Antenna vertex `n`
/// gets `tanh(mean_l(u * [M_p]_{n,l}) + b)`: a shared per-entry map followed
/// by mean pooling, which is invariant to any reordering of the RF chains.
pub fn encode_inputs<T: Real>(h: &CMatrix<T>, m_p: &CMatrix<T>, params: &GgnnParams<T>) -> Result<HiddenState<T>> {
    if h.rows() != m_p.rows() {
        return Err(Error::dim(format!(
            "channel has {} rows, phase pattern {}",
            h.rows(),
            m_p.rows()
        )));
    }
    let (n_t, n_users) = h.shape();
    let width = params.dims()[0];
    let mut state = HiddenState::zeros(n_t, n_users, width);
    let embed = params.edge_embed.as_slice();
    for n in 0..n_t {
        for k in 0..n_users {
            let hk = h[(n, k)];
            let o = (n * n_users + k) * width;
            for (dst, e) in state.edge[o..o + width].iter_mut().zip(embed) {
                *dst = hk * *e;
            }
        }
    }
    let pooled = pooled_rows(m_p);
    let (u, b) = (params.vertex_embed.as_slice(), params.vertex_bias.as_slice());
    for (n, m) in pooled.iter().enumerate() {
        for c in 0..width {
            state.vertex[n * width + c] = ctanh(u[c] * *m + b[c]);
        }
    }
    Ok(state)
}

pub(crate) fn encode_backward<T: Real>(
    h: &CMatrix<T>,
    m_p: &CMatrix<T>,
    state0: &HiddenState<T>,
    g_state: &HiddenState<T>,
    grads: &mut GgnnParams<T>,
) {
    let width = state0.width;
    let n_users = state0.n_users;
    for n in 0..state0.n_t {
        for k in 0..n_users {
            let hc = h[(n, k)].conj();
            let o = (n * n_users + k) * width;
            for (ge, g) in grads
                .edge_embed
                .as_mut_slice()
                .iter_mut()
                .zip(&g_state.edge[o..o + width])
            {
                *ge = *ge + hc * *g;
            }
        }
    }
    let pooled = pooled_rows(m_p);
    for (n, m) in pooled.iter().enumerate() {
        for c in 0..width {
            let gp = ctanh_back(state0.vertex[n * width + c], g_state.vertex[n * width + c]);
            let gu = &mut grads.vertex_embed.as_mut_slice()[c];
            *gu = *gu + m.conj() * gp;
            let gb = &mut grads.vertex_bias.as_mut_slice()[c];
            *gb = *gb + gp;
        }
    }
}

/// Per-sample intermediate products of one edge update.
#[derive(Clone, Debug)]
pub(crate) struct EdgeCache<T> {
    intra: Vec<C<T>>,
    inter: Vec<C<T>>,
    pub(crate) out: Vec<C<T>>,
}

/// `g[n,k,c] = h_{n,k} * a_{n,c}`.
fn coupled<T: Real>(h: &CMatrix<T>, state: &HiddenState<T>) -> Vec<C<T>> {
    let (n_t, n_users, width) = (state.n_t, state.n_users, state.width);
    let mut g = vec![cz(); n_t * n_users * width];
    for n in 0..n_t {
        let an = state.vertex_at(n);
        for k in 0..n_users {
            let hk = h[(n, k)];
            let o = (n * n_users + k) * width;
            for (dst, a) in g[o..o + width].iter_mut().zip(an) {
                *dst = hk * *a;
            }
        }
    }
    g
}

/// Sums over antennas: `t[k,c] = sum_i v[i,k,c] conj(g[i,k,c])` and
/// `u[j,k,c] = sum_i conj(g[i,j,c]) v[i,k,c]`.
fn antenna_sums<T: Real>(g: &[C<T>], state: &HiddenState<T>) -> (Vec<C<T>>, Vec<C<T>>) {
    let (n_t, n_users, width) = (state.n_t, state.n_users, state.width);
    let mut t = vec![cz(); n_users * width];
    let mut u = vec![cz(); n_users * n_users * width];
    for i in 0..n_t {
        for k in 0..n_users {
            let vo = (i * n_users + k) * width;
            let vik = &state.edge[vo..vo + width];
            let gik = &g[vo..vo + width];
            for c in 0..width {
                t[k * width + c] = t[k * width + c] + vik[c] * gik[c].conj();
            }
            for j in 0..n_users {
                let go = (i * n_users + j) * width;
                let uo = (j * n_users + k) * width;
                for c in 0..width {
                    u[uo + c] = u[uo + c] + g[go + c].conj() * vik[c];
                }
            }
        }
    }
    (t, u)
}

pub(crate) fn edge_forward<T: Real>(
    state: &HiddenState<T>,
    h: &CMatrix<T>,
    layer: &LayerParams<T>,
) -> Result<EdgeCache<T>> {
    check_inputs(h, state, layer.s.cols())?;
    let (n_t, n_users, width) = (state.n_t, state.n_users, state.width);
    let out_width = layer.s.rows();
    let g = coupled(h, state);
    let (t, u) = antenna_sums(&g, state);

    let len = n_t * n_users * width;
    let mut intra = vec![cz(); len];
    let mut inter = vec![cz(); len];
    for n in 0..n_t {
        for k in 0..n_users {
            let o = (n * n_users + k) * width;
            for c in 0..width {
                let gnk = g[o + c];
                intra[o + c] = gnk * t[k * width + c] - state.edge[o + c] * gnk.norm_sqr();
                let mut acc = cz();
                for j in (0..n_users).filter(|&j| j != k) {
                    acc = acc + u[(j * n_users + k) * width + c] * g[(n * n_users + j) * width + c];
                }
                inter[o + c] = acc;
            }
        }
    }

    let mut out = vec![cz(); n_t * n_users * out_width];
    for e in 0..n_t * n_users {
        let dst = &mut out[e * out_width..(e + 1) * out_width];
        let src = e * width..(e + 1) * width;
        matvec(&layer.s, &state.edge[src.clone()], dst);
        matvec_add(&layer.p1, &intra[src.clone()], dst);
        matvec_add(&layer.p2, &inter[src], dst);
        for z in dst.iter_mut() {
            *z = ctanh(*z);
        }
    }
    Ok(EdgeCache { intra, inter, out })
}

/// Edge update: self term, intra-user aggregation over the other antennas and
/// inter-user aggregation over the other users, followed by split tanh.
///
/// Returns the layer `l + 1` edge features.
pub fn edge_layer<T: Real>(state: &HiddenState<T>, h: &CMatrix<T>, layer: &LayerParams<T>) -> Result<Vec<C<T>>> {
    Ok(edge_forward(state, h, layer)?.out)
}

/// Reverse pass of [`edge_layer`]: accumulates into `g_state` (input
/// gradients) and `g_layer` (parameter gradients).
pub(crate) fn edge_backward<T: Real>(
    state: &HiddenState<T>,
    h: &CMatrix<T>,
    layer: &LayerParams<T>,
    cache: &EdgeCache<T>,
    g_out: &[C<T>],
    g_state: &mut HiddenState<T>,
    g_layer: &mut LayerParams<T>,
) {
    let (n_t, n_users, width) = (state.n_t, state.n_users, state.width);
    let out_width = layer.s.rows();
    let len = n_t * n_users * width;
    let mut g_intra = vec![cz(); len];
    let mut g_inter = vec![cz(); len];
    let mut g_pre = vec![cz(); out_width];
    for e in 0..n_t * n_users {
        let os = e * out_width..(e + 1) * out_width;
        for ((gp, o), g) in g_pre.iter_mut().zip(&cache.out[os.clone()]).zip(&g_out[os]) {
            *gp = ctanh_back(*o, *g);
        }
        let src = e * width..(e + 1) * width;
        outer_add(&mut g_layer.s, &g_pre, &state.edge[src.clone()]);
        outer_add(&mut g_layer.p1, &g_pre, &cache.intra[src.clone()]);
        outer_add(&mut g_layer.p2, &g_pre, &cache.inter[src.clone()]);
        adj_matvec_add(&layer.s, &g_pre, &mut g_state.edge[src.clone()]);
        adj_matvec_add(&layer.p1, &g_pre, &mut g_intra[src.clone()]);
        adj_matvec_add(&layer.p2, &g_pre, &mut g_inter[src]);
    }

    let g = coupled(h, state);
    let (t, u) = antenna_sums(&g, state);
    let mut g_g = vec![cz(); len];
    let mut g_t = vec![cz(); n_users * width];
    let mut g_u = vec![cz(); n_users * n_users * width];
    let two = T::lit(2.0);

    for n in 0..n_t {
        for k in 0..n_users {
            let o = (n * n_users + k) * width;
            for c in 0..width {
                // intra = g t - v |g|^2
                let gi = g_intra[o + c];
                let gnk = g[o + c];
                let v = state.edge[o + c];
                g_g[o + c] = g_g[o + c] + t[k * width + c].conj() * gi;
                g_t[k * width + c] = g_t[k * width + c] + gnk.conj() * gi;
                g_state.edge[o + c] = g_state.edge[o + c] - gi * gnk.norm_sqr();
                let g_mag = -(gi.conj() * v).re;
                g_g[o + c] = g_g[o + c] + gnk * (two * g_mag);

                // inter = sum_{j != k} u[j,k] g[n,j]
                let gx = g_inter[o + c];
                for j in (0..n_users).filter(|&j| j != k) {
                    let uo = (j * n_users + k) * width + c;
                    let go = (n * n_users + j) * width + c;
                    g_u[uo] = g_u[uo] + g[go].conj() * gx;
                    g_g[go] = g_g[go] + u[uo].conj() * gx;
                }
            }
        }
    }

    for i in 0..n_t {
        for k in 0..n_users {
            let o = (i * n_users + k) * width;
            for c in 0..width {
                let gt = g_t[k * width + c];
                g_state.edge[o + c] = g_state.edge[o + c] + g[o + c] * gt;
                g_g[o + c] = g_g[o + c] + state.edge[o + c] * gt.conj();
                for j in (0..n_users).filter(|&j| j != k) {
                    let gu = g_u[(j * n_users + k) * width + c];
                    let go = (i * n_users + j) * width + c;
                    g_state.edge[o + c] = g_state.edge[o + c] + g[go] * gu;
                    g_g[go] = g_g[go] + state.edge[o + c] * gu.conj();
                }
            }
        }
    }

    for n in 0..n_t {
        for k in 0..n_users {
            let hc = h[(n, k)].conj();
            let o = (n * n_users + k) * width;
            for c in 0..width {
                g_state.vertex[n * width + c] = g_state.vertex[n * width + c] + hc * g_g[o + c];
            }
        }
    }
}

/// Per-sample intermediate products of one vertex update.
#[derive(Clone, Debug)]
pub(crate) struct VertexCache<T> {
    agg: Vec<T>,
    pub(crate) out: Vec<C<T>>,
}

/// `t[k,j,c] = sum_i conj(v[i,j,c]) a[i,c] h[i,k]`.
fn vertex_sums<T: Real>(h: &CMatrix<T>, state: &HiddenState<T>) -> Vec<C<T>> {
    let (n_t, n_users, width) = (state.n_t, state.n_users, state.width);
    let mut t = vec![cz(); n_users * n_users * width];
    for i in 0..n_t {
        let ai = state.vertex_at(i);
        for k in 0..n_users {
            let hik = h[(i, k)];
            for j in 0..n_users {
                let vij = state.edge_at(i, j);
                let to = (k * n_users + j) * width;
                for c in 0..width {
                    t[to + c] = t[to + c] + vij[c].conj() * ai[c] * hik;
                }
            }
        }
    }
    t
}

#[inline]
fn sign<T: Real>(j: usize, k: usize) -> T {
    if j == k {
        T::one()
    } else {
        -T::one()
    }
}

pub(crate) fn vertex_forward<T: Real>(
    state: &HiddenState<T>,
    h: &CMatrix<T>,
    layer: &LayerParams<T>,
) -> Result<VertexCache<T>> {
    check_inputs(h, state, layer.w1.cols())?;
    let (n_t, n_users, width) = (state.n_t, state.n_users, state.width);
    let out_width = layer.w1.rows();
    let t = vertex_sums(h, state);
    let mut agg = vec![T::zero(); n_t * width];
    for n in 0..n_t {
        for k in 0..n_users {
            let hc = h[(n, k)].conj();
            for j in 0..n_users {
                let s = sign::<T>(j, k);
                let vnj = state.edge_at(n, j);
                let to = (k * n_users + j) * width;
                for c in 0..width {
                    agg[n * width + c] = agg[n * width + c] + s * (t[to + c] * hc * vnj[c]).re;
                }
            }
        }
    }
    let mut out = vec![cz(); n_t * out_width];
    let mut agg_c = vec![cz(); width];
    for n in 0..n_t {
        let dst = &mut out[n * out_width..(n + 1) * out_width];
        matvec(&layer.w1, state.vertex_at(n), dst);
        for (z, r) in agg_c.iter_mut().zip(&agg[n * width..(n + 1) * width]) {
            *z = C::new(*r, T::zero());
        }
        matvec_add(&layer.w2, &agg_c, dst);
        for z in dst.iter_mut() {
            *z = ctanh(*z);
        }
    }
    Ok(VertexCache { agg, out })
}

/// Vertex update: self term plus the real part of the own-signal minus
/// interference correlations seen through antenna `n`, followed by split tanh.
///
/// Returns the layer `l + 1` vertex features.
pub fn vertex_layer<T: Real>(state: &HiddenState<T>, h: &CMatrix<T>, layer: &LayerParams<T>) -> Result<Vec<C<T>>> {
    Ok(vertex_forward(state, h, layer)?.out)
}

pub(crate) fn vertex_backward<T: Real>(
    state: &HiddenState<T>,
    h: &CMatrix<T>,
    layer: &LayerParams<T>,
    cache: &VertexCache<T>,
    g_out: &[C<T>],
    g_state: &mut HiddenState<T>,
    g_layer: &mut LayerParams<T>,
) {
    let (n_t, n_users, width) = (state.n_t, state.n_users, state.width);
    let out_width = layer.w1.rows();
    let mut g_pre = vec![cz(); out_width];
    let mut g_agg_c = vec![cz(); width];
    let mut g_agg = vec![T::zero(); n_t * width];
    let mut agg_c = vec![cz(); width];
    for n in 0..n_t {
        let os = n * out_width..(n + 1) * out_width;
        for ((gp, o), g) in g_pre.iter_mut().zip(&cache.out[os.clone()]).zip(&g_out[os]) {
            *gp = ctanh_back(*o, *g);
        }
        let vs = n * width..(n + 1) * width;
        for (z, r) in agg_c.iter_mut().zip(&cache.agg[vs.clone()]) {
            *z = C::new(*r, T::zero());
        }
        outer_add(&mut g_layer.w1, &g_pre, &state.vertex[vs.clone()]);
        outer_add(&mut g_layer.w2, &g_pre, &agg_c);
        adj_matvec_add(&layer.w1, &g_pre, &mut g_state.vertex[vs.clone()]);
        g_agg_c.iter_mut().for_each(|z| *z = cz());
        adj_matvec_add(&layer.w2, &g_pre, &mut g_agg_c);
        for (ga, z) in g_agg[vs].iter_mut().zip(&g_agg_c) {
            *ga = z.re;
        }
    }

    let t = vertex_sums(h, state);
    let mut g_t = vec![cz(); n_users * n_users * width];
    for n in 0..n_t {
        for k in 0..n_users {
            let hnk = h[(n, k)];
            for j in 0..n_users {
                let s = sign::<T>(j, k);
                let to = (k * n_users + j) * width;
                let eo = (n * n_users + j) * width;
                for c in 0..width {
                    let gq = g_agg[n * width + c] * s;
                    let vnj = state.edge[eo + c];
                    g_t[to + c] = g_t[to + c] + hnk * vnj.conj() * gq;
                    g_state.edge[eo + c] = g_state.edge[eo + c] + t[to + c].conj() * hnk * gq;
                }
            }
        }
    }

    for i in 0..n_t {
        for k in 0..n_users {
            let hik = h[(i, k)];
            for j in 0..n_users {
                let to = (k * n_users + j) * width;
                let eo = (i * n_users + j) * width;
                for c in 0..width {
                    let gt = g_t[to + c];
                    let ai = state.vertex[i * width + c];
                    let vij = state.edge[eo + c];
                    g_state.edge[eo + c] = g_state.edge[eo + c] + ai * hik * gt.conj();
                    g_state.vertex[i * width + c] = g_state.vertex[i * width + c] + vij * hik.conj() * gt;
                }
            }
        }
    }
}

/// Maps the final hidden state to amplitudes in `(0, 1)` and the equivalent
/// beamformer `V_e` (`N_t x K`).
pub fn readout<T: Real>(state: &HiddenState<T>, params: &GgnnParams<T>) -> Result<(Vec<T>, CMatrix<T>)> {
    let width = *params.dims().last().unwrap();
    if state.width != width {
        return Err(Error::dim(format!(
            "final hidden width {} but readout expects {}",
            state.width, width
        )));
    }
    let wa = params.readout_a.as_slice();
    let wv = params.readout_v.as_slice();
    let a = (0..state.n_t)
        .map(|n| {
            let z = state
                .vertex_at(n)
                .iter()
                .zip(wa)
                .fold(cz(), |acc, (x, w)| acc + *x * *w);
            sigmoid(z.re)
        })
        .collect();
    let ve = CMatrix::from_fn(state.n_t, state.n_users, |n, k| {
        state
            .edge_at(n, k)
            .iter()
            .zip(wv)
            .fold(cz(), |acc, (x, w)| acc + *x * *w)
    });
    Ok((a, ve))
}

pub(crate) fn readout_backward<T: Real>(
    state: &HiddenState<T>,
    params: &GgnnParams<T>,
    a: &[T],
    g_a: &[T],
    g_ve: &CMatrix<T>,
    grads: &mut GgnnParams<T>,
) -> HiddenState<T> {
    let (n_t, n_users, width) = (state.n_t, state.n_users, state.width);
    let mut g_state = HiddenState::zeros(n_t, n_users, width);
    let wa = params.readout_a.as_slice();
    let wv = params.readout_v.as_slice();
    for n in 0..n_t {
        let gz = C::new(g_a[n] * a[n] * (T::one() - a[n]), T::zero());
        for c in 0..width {
            let x = state.vertex[n * width + c];
            let ga = &mut grads.readout_a.as_mut_slice()[c];
            *ga = *ga + x.conj() * gz;
            g_state.vertex[n * width + c] = wa[c].conj() * gz;
        }
        for k in 0..n_users {
            let gv = g_ve[(n, k)];
            let o = (n * n_users + k) * width;
            for c in 0..width {
                let x = state.edge[o + c];
                let gw = &mut grads.readout_v.as_mut_slice()[c];
                *gw = *gw + x.conj() * gv;
                g_state.edge[o + c] = wv[c].conj() * gv;
            }
        }
    }
    g_state
}
