//! Gradient-structured graph neural network over antenna vertices and
//! antenna-user edges, followed by the range projection and power
//! normalisation.
//!
//! Every layer runs the edge and vertex updates on the same layer-`l` state;
//! the pair forms the layer-`l + 1` state. Weights are shared across all
//! vertices and edges, so the network accepts any number of antennas, users
//! and RF chains.

mod layers;
mod params;

pub use layers::{edge_layer, encode_inputs, readout, vertex_layer, HiddenState};
pub use params::{GgnnParams, LayerParams, REFERENCE_DIMS};

use crate::beamform::{BeamformerSet, RangeProjector};
use crate::error::{Error, Result};
use crate::holo::PhasePattern;
use crate::linalg::CMatrix;
use crate::scalar::Real;

use layers::{
    edge_backward, edge_forward, encode_backward, readout_backward, vertex_backward, vertex_forward, EdgeCache,
    VertexCache,
};

/// Amplitudes and equivalent beamformer straight out of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct GgnnOutput<T> {
    pub a: Vec<T>,
    pub ve: CMatrix<T>,
}

/// Everything the reverse pass needs from one forward pass.
#[derive(Clone, Debug)]
pub(crate) struct Trace<T> {
    states: Vec<HiddenState<T>>,
    edge: Vec<EdgeCache<T>>,
    vertex: Vec<VertexCache<T>>,
    pub(crate) output: GgnnOutput<T>,
}

pub(crate) fn forward_trace<T: Real>(h: &CMatrix<T>, m_p: &CMatrix<T>, params: &GgnnParams<T>) -> Result<Trace<T>> {
    let mut state = encode_inputs(h, m_p, params)?;
    let mut states = Vec::with_capacity(params.n_layers() + 1);
    let mut edge = Vec::with_capacity(params.n_layers());
    let mut vertex = Vec::with_capacity(params.n_layers());
    for layer in &params.layers {
        let e = edge_forward(&state, h, layer)?;
        let v = vertex_forward(&state, h, layer)?;
        let next = HiddenState {
            n_t: state.n_t,
            n_users: state.n_users,
            width: layer.s.rows(),
            edge: e.out.clone(),
            vertex: v.out.clone(),
        };
        states.push(std::mem::replace(&mut state, next));
        edge.push(e);
        vertex.push(v);
    }
    let (a, ve) = readout(&state, params)?;
    states.push(state);
    Ok(Trace {
        states,
        edge,
        vertex,
        output: GgnnOutput { a, ve },
    })
}

/// Reverse pass from `(dL/da, dL/dV_e)` to parameter gradients, accumulated into `grads`.
pub(crate) fn backward<T: Real>(
    h: &CMatrix<T>,
    m_p: &CMatrix<T>,
    params: &GgnnParams<T>,
    trace: &Trace<T>,
    g_a: &[T],
    g_ve: &CMatrix<T>,
    grads: &mut GgnnParams<T>,
) {
    let last = trace.states.last().expect("trace holds the final state");
    let mut g_state = readout_backward(last, params, &trace.output.a, g_a, g_ve, grads);
    for l in (0..params.n_layers()).rev() {
        let input = &trace.states[l];
        let mut g_in = HiddenState::zeros(input.n_t, input.n_users, input.width);
        let (layer, g_layer) = (&params.layers[l], &mut grads.layers[l]);
        edge_backward(input, h, layer, &trace.edge[l], &g_state.edge, &mut g_in, g_layer);
        vertex_backward(input, h, layer, &trace.vertex[l], &g_state.vertex, &mut g_in, g_layer);
        g_state = g_in;
    }
    encode_backward(h, m_p, &trace.states[0], &g_state, grads);
}

/// Network output `(a, V_e)` before any projection.
pub fn ggnn_forward<T: Real>(h: &CMatrix<T>, m_p: &CMatrix<T>, params: &GgnnParams<T>) -> Result<GgnnOutput<T>> {
    Ok(forward_trace(h, m_p, params)?.output)
}

/// Network, range projection and power normalisation, with a cached projector.
pub fn full_forward_with<T: Real>(
    h: &CMatrix<T>,
    projector: &RangeProjector<T>,
    params: &GgnnParams<T>,
    p_max: T,
) -> Result<BeamformerSet<T>> {
    let GgnnOutput { a, ve } = ggnn_forward(h, projector.phase_pattern(), params)?;
    let vt = projector.project(&ve)?;
    let v = crate::beamform::normalize_power(&vt, &a, projector.phase_pattern(), p_max)?;
    if !a.iter().all(|x| x.is_finite()) || !v.is_finite() {
        return Err(Error::arg("network produced non-finite beamformers"));
    }
    Ok(BeamformerSet { a, v, ve })
}

/// Full inference pipeline: `(H, M_p) -> (a, V_e, V)`.
pub fn full_forward<T: Real>(
    h: &CMatrix<T>,
    m_p: &PhasePattern<T>,
    params: &GgnnParams<T>,
    p_max: T,
) -> Result<BeamformerSet<T>> {
    full_forward_with(h, &RangeProjector::new(m_p)?, params, p_max)
}
