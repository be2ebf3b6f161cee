#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use super::spiral::{SpiralIndices, PAD};
use crate::{Error, Result};

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::CountMismatch {
                what: "tensor elements",
                expected: n,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub struct SpiralConvGrad {
    pub features: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn check_spiral_shapes(features: &Tensor, spirals: &SpiralIndices, weight: &Tensor, cout: Option<usize>) -> Result<(usize, usize, usize)> {
    if features.shape.len() != 2 || weight.shape.len() != 2 {
        return Err(Error::Invalid("spiral_conv expects 2D features and weights".into()));
    }
    let (n, cin) = (features.shape[0], features.shape[1]);
    if spirals.num_vertices() != n {
        return Err(Error::CountMismatch {
            what: "spiral vertices",
            expected: n,
            got: spirals.num_vertices(),
        });
    }
    if weight.shape[0] != spirals.len * cin {
        return Err(Error::CountMismatch {
            what: "spiral weight rows",
            expected: spirals.len * cin,
            got: weight.shape[0],
        });
    }
    if let Some(c) = cout {
        if c != weight.shape[1] {
            return Err(Error::CountMismatch {
                what: "spiral output channels",
                expected: weight.shape[1],
                got: c,
            });
        }
    }
    Ok((n, cin, weight.shape[1]))
}

/// Gathers each vertex's spiral features (padding reads zeros), concatenates
/// them and applies `weight` (`(S·Cin) × Cout`) and `bias`.
pub fn spiral_conv(features: &Tensor, spirals: &SpiralIndices, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, cin, cout) = check_spiral_shapes(features, spirals, weight, Some(bias.len()))?;
    let mut out = vec![0.0; n * cout];
    spiral_fwd(&features.data, cin, spirals, &weight.data, &bias.data, cout, &mut out);
    Ok(Tensor { shape: vec![n, cout], data: out })
}

pub fn spiral_conv_backward(features: &Tensor, spirals: &SpiralIndices, weight: &Tensor, grad_out: &Tensor) -> Result<SpiralConvGrad> {
    let (n, cin, cout) = check_spiral_shapes(features, spirals, weight, grad_out.shape.get(1).copied())?;
    if grad_out.shape[0] != n {
        return Err(Error::CountMismatch {
            what: "spiral output rows",
            expected: n,
            got: grad_out.shape[0],
        });
    }
    let mut gx = vec![0.0; n * cin];
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; cout];
    spiral_bwd(&features.data, cin, spirals, &weight.data, cout, &grad_out.data, Some(&mut gx), &mut gw, &mut gb);
    Ok(SpiralConvGrad {
        features: Tensor { shape: vec![n, cin], data: gx },
        weight: Tensor { shape: weight.shape.clone(), data: gw },
        bias: Tensor { shape: vec![cout], data: gb },
    })
}

pub(crate) fn spiral_fwd(x: &[f64], cin: usize, sp: &SpiralIndices, w: &[f64], b: &[f64], cout: usize, out: &mut [f64]) {
    let n = sp.num_vertices();
    for v in 0..n {
        let y = &mut out[v * cout..(v + 1) * cout];
        y.copy_from_slice(b);
        for (s, &idx) in sp.get(v).iter().enumerate() {
            if idx == PAD {
                continue;
            }
            let xi = &x[idx as usize * cin..(idx as usize + 1) * cin];
            for (ci, &xv) in xi.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let row = &w[(s * cin + ci) * cout..(s * cin + ci + 1) * cout];
                for (yo, wo) in y.iter_mut().zip(row) {
                    *yo += xv * wo;
                }
            }
        }
    }
}

/// Accumulates into `gw`, `gb` and (when given) `gx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn spiral_bwd(
    x: &[f64],
    cin: usize,
    sp: &SpiralIndices,
    w: &[f64],
    cout: usize,
    gy: &[f64],
    mut gx: Option<&mut [f64]>,
    gw: &mut [f64],
    gb: &mut [f64],
) {
    let n = sp.num_vertices();
    for v in 0..n {
        let dy = &gy[v * cout..(v + 1) * cout];
        for (g, d) in gb.iter_mut().zip(dy) {
            *g += d;
        }
        for (s, &idx) in sp.get(v).iter().enumerate() {
            if idx == PAD {
                continue;
            }
            let idx = idx as usize;
            for ci in 0..cin {
                let r = (s * cin + ci) * cout;
                let xv = x[idx * cin + ci];
                let wrow = &w[r..r + cout];
                let gwrow = &mut gw[r..r + cout];
                let mut acc = 0.0;
                for o in 0..cout {
                    gwrow[o] += xv * dy[o];
                    acc += wrow[o] * dy[o];
                }
                if let Some(gx) = gx.as_deref_mut() {
                    gx[idx * cin + ci] += acc;
                }
            }
        }
    }
}

/// `y = W x + b` with `W` stored `out × in`.
pub(crate) fn linear_fwd(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let nin = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bo)| bo + w[o * nin..(o + 1) * nin].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

/// Accumulates weight and bias gradients, returns the input gradient.
pub(crate) fn linear_bwd(w: &[f64], x: &[f64], gy: &[f64], gw: &mut [f64], gb: &mut [f64]) -> Vec<f64> {
    let nin = x.len();
    let mut gx = vec![0.0; nin];
    for (o, &d) in gy.iter().enumerate() {
        gb[o] += d;
        if d == 0.0 {
            continue;
        }
        let row = &w[o * nin..(o + 1) * nin];
        let grow = &mut gw[o * nin..(o + 1) * nin];
        for i in 0..nin {
            grow[i] += d * x[i];
            gx[i] += d * row[i];
        }
    }
    gx
}

pub(crate) fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

pub(crate) fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

pub(crate) fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub(crate) fn relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}
