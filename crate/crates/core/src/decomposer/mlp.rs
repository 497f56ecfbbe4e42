//! Fixed-shape dense layers over a flat parameter buffer, with hand-written
//! backward passes.

/// Location of one dense layer inside a flat parameter buffer.
///
/// Weights are stored input-major: row `j` holds the `out_dim` weights that
/// input `j` contributes to each output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl Linear {
    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }

    fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.w_off..self.w_off + self.in_dim * self.out_dim]
    }

    pub fn forward(&self, params: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(y.len(), self.out_dim);
        y.copy_from_slice(&params[self.b_off..self.b_off + self.out_dim]);
        let w = self.weights(params);
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                axpy(xj, &w[j * self.out_dim..(j + 1) * self.out_dim], y);
            }
        }
    }

    /// Accumulates parameter gradients into `grad` and, when `dx` is given,
    /// writes the input gradient into it.
    pub fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64], dx: Option<&mut [f64]>) {
        axpy(1.0, dy, &mut grad[self.b_off..self.b_off + self.out_dim]);
        {
            let gw = &mut grad[self.w_off..self.w_off + self.in_dim * self.out_dim];
            for (j, &xj) in x.iter().enumerate() {
                if xj != 0.0 {
                    axpy(xj, dy, &mut gw[j * self.out_dim..(j + 1) * self.out_dim]);
                }
            }
        }
        if let Some(dx) = dx {
            let w = self.weights(params);
            for (j, d) in dx.iter_mut().enumerate() {
                *d = dot(&w[j * self.out_dim..(j + 1) * self.out_dim], dy);
            }
        }
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for k in 0..4 {
            acc[k] += a[4 * i + k] * b[4 * i + k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Four dense layers with ReLU after each of the three hidden layers and a
/// linear output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub layers: [Linear; 4],
}

/// Activations kept for the backward pass: the input and the three
/// post-ReLU hidden vectors.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    pub input: Vec<f64>,
    pub hidden: [Vec<f64>; 3],
}

impl Mlp {
    /// Lays out `dims[0] -> dims[1] -> ... -> dims[4]` starting at `offset`.
    pub fn at(offset: usize, dims: [usize; 5]) -> Self {
        let mut off = offset;
        let layers = std::array::from_fn(|i| {
            let l = Linear {
                in_dim: dims[i],
                out_dim: dims[i + 1],
                w_off: off,
                b_off: off + dims[i] * dims[i + 1],
            };
            off += l.param_count();
            l
        });
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[3].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Linear::param_count).sum()
    }

    pub fn end(&self) -> usize {
        self.layers[3].b_off + self.layers[3].out_dim
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Vec<f64> {
        self.forward_cached(params, input.to_vec()).0
    }

    pub fn forward_cached(&self, params: &[f64], input: Vec<f64>) -> (Vec<f64>, MlpCache) {
        let mut hidden: [Vec<f64>; 3] = Default::default();
        for i in 0..3 {
            let x = if i == 0 { &input } else { &hidden[i - 1] };
            let mut h = vec![0.0; self.layers[i].out_dim];
            self.layers[i].forward(params, x, &mut h);
            h.iter_mut().for_each(|v| *v = v.max(0.0));
            hidden[i] = h;
        }
        let mut out = vec![0.0; self.out_dim()];
        self.layers[3].forward(params, &hidden[2], &mut out);
        (out, MlpCache { input, hidden })
    }

    /// Backpropagates `dout`, accumulating into `grad`; returns the input gradient.
    pub fn backward(&self, params: &[f64], cache: &MlpCache, dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let mut d = dout.to_vec();
        for i in (0..4).rev() {
            let x = if i == 0 { &cache.input } else { &cache.hidden[i - 1] };
            let mut dx = vec![0.0; self.layers[i].in_dim];
            self.layers[i].backward(params, x, &d, grad, Some(&mut dx));
            if i > 0 {
                // ReLU mask from the post-activation values
                for (g, h) in dx.iter_mut().zip(&cache.hidden[i - 1]) {
                    if *h <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            d = dx;
        }
        d
    }
}
