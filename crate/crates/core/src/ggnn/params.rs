use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::scalar::{Real, C};

/// Trainable matrices of one edge + vertex update layer, all `C_{l+1} x C_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    /// Edge self term.
    pub s: CMatrix<T>,
    /// Edge intra-user (across antennas) aggregation.
    pub p1: CMatrix<T>,
    /// Edge inter-user aggregation.
    pub p2: CMatrix<T>,
    /// Vertex self term.
    pub w1: CMatrix<T>,
    /// Vertex signal/interference aggregation.
    pub w2: CMatrix<T>,
}

/// All trainable parameters of the gradient-structured GNN.
///
/// Vectors are stored as single-column matrices so that every tensor can be
/// visited uniformly (optimiser, checkpoint, gradient checks). The visiting
/// order of [`tensors`](Self::tensors) is the checkpoint order.
#[derive(Clone, Debug, PartialEq)]
pub struct GgnnParams<T> {
    dims: Vec<usize>,
    /// `C_0`: edge encoder, `v0_{n,k} = h_{n,k} * edge_embed`.
    pub edge_embed: CMatrix<T>,
    /// `C_0`: per-entry map of the phase-pattern row before mean pooling.
    pub vertex_embed: CMatrix<T>,
    /// `C_0`: bias added after pooling.
    pub vertex_bias: CMatrix<T>,
    pub layers: Vec<LayerParams<T>>,
    /// `C_D`: amplitude readout, `a_n = sigmoid(Re(readout_a^T a_n))`.
    pub readout_a: CMatrix<T>,
    /// `C_D`: equivalent-beamformer readout, `v_{e,n,k} = readout_v^T v_{n,k}`.
    pub readout_v: CMatrix<T>,
}

/// Layer widths used in the reference configuration.
pub const REFERENCE_DIMS: [usize; 6] = [64, 128, 512, 512, 128, 64];

/// Extra scale on the aggregation weights at init. The aggregated products sum
/// over all antennas and users, so unit-scale weights saturate tanh on every
/// entry from the first layer on.
pub const AGGREGATION_GAIN: f64 = 0.03;

fn gaussian_matrix<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, sd: f64, rng: &mut R) -> CMatrix<T> {
    CMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C::new(T::lit(re * sd), T::lit(im * sd))
    })
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::arg("layer dims need at least an input and an output width"));
    }
    if dims.contains(&0) {
        return Err(Error::arg("layer widths must be positive"));
    }
    Ok(())
}

impl<T: Real> GgnnParams<T> {
    /// Zero-initialised parameters (also used as a gradient accumulator).
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let c0 = dims[0];
        let cd = *dims.last().unwrap();
        let layers = dims
            .windows(2)
            .map(|w| {
                let z = || CMatrix::zeros(w[1], w[0]);
                LayerParams {
                    s: z(),
                    p1: z(),
                    p2: z(),
                    w1: z(),
                    w2: z(),
                }
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            edge_embed: CMatrix::zeros(c0, 1),
            vertex_embed: CMatrix::zeros(c0, 1),
            vertex_bias: CMatrix::zeros(c0, 1),
            layers,
            readout_a: CMatrix::zeros(cd, 1),
            readout_v: CMatrix::zeros(cd, 1),
        })
    }

    /// Gaussian initialisation: real and imaginary parts i.i.d. with standard
    /// deviation `1/sqrt(fan_in)`; the vertex bias starts at zero.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        check_dims(dims)?;
        let c0 = dims[0];
        let cd = *dims.last().unwrap();
        let edge_embed = gaussian_matrix(c0, 1, 1.0, rng);
        let vertex_embed = gaussian_matrix(c0, 1, 1.0, rng);
        let layers = dims
            .windows(2)
            .map(|w| {
                let sd = 1.0 / (w[0] as f64).sqrt();
                LayerParams {
                    s: gaussian_matrix(w[1], w[0], sd, rng),
                    p1: gaussian_matrix(w[1], w[0], sd * AGGREGATION_GAIN, rng),
                    p2: gaussian_matrix(w[1], w[0], sd * AGGREGATION_GAIN, rng),
                    w1: gaussian_matrix(w[1], w[0], sd, rng),
                    w2: gaussian_matrix(w[1], w[0], sd * AGGREGATION_GAIN, rng),
                }
            })
            .collect();
        let sd = 1.0 / (cd as f64).sqrt();
        let readout_a = gaussian_matrix(cd, 1, sd, rng);
        let readout_v = gaussian_matrix(cd, 1, sd, rng);
        Ok(Self {
            dims: dims.to_vec(),
            edge_embed,
            vertex_embed,
            vertex_bias: CMatrix::zeros(c0, 1),
            layers,
            readout_a,
            readout_v,
        })
    }

    /// Layer widths `C_0..C_D`.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Named tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, &CMatrix<T>)> {
        let mut out = vec![
            ("edge_embed".to_string(), &self.edge_embed),
            ("vertex_embed".to_string(), &self.vertex_embed),
            ("vertex_bias".to_string(), &self.vertex_bias),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.s"), &layer.s));
            out.push((format!("layer{l}.p1"), &layer.p1));
            out.push((format!("layer{l}.p2"), &layer.p2));
            out.push((format!("layer{l}.w1"), &layer.w1));
            out.push((format!("layer{l}.w2"), &layer.w2));
        }
        out.push(("readout_a".to_string(), &self.readout_a));
        out.push(("readout_v".to_string(), &self.readout_v));
        out
    }

    /// Mutable tensors, same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut CMatrix<T>> {
        let mut out = vec![&mut self.edge_embed, &mut self.vertex_embed, &mut self.vertex_bias];
        for layer in self.layers.iter_mut() {
            out.push(&mut layer.s);
            out.push(&mut layer.p1);
            out.push(&mut layer.p2);
            out.push(&mut layer.w1);
            out.push(&mut layer.w2);
        }
        out.push(&mut self.readout_a);
        out.push(&mut self.readout_v);
        out
    }

    /// Number of real degrees of freedom.
    pub fn n_real_params(&self) -> usize {
        2 * self.tensors().iter().map(|(_, t)| t.as_slice().len()).sum::<usize>()
    }

    /// `self += other * scale`, tensor by tensor.
    pub fn axpy(&mut self, scale: T, other: &Self) {
        for (dst, (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
                *d = *d + *s * scale;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// Name of the first tensor holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors().into_iter().find(|(_, t)| !t.is_finite()).map(|(n, _)| n)
    }
}
