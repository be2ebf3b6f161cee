#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layers::{elu, elu_grad, linear_bwd, linear_fwd, relu, relu_grad, spiral_bwd, spiral_fwd, Tensor};
use super::sampling::{build_sampling, SamplingOperator};
use super::spiral::{build_spirals, SpiralIndices};
use crate::geom::Vec3;
use crate::mesh::{Part, PartMesh};
use crate::skeleton::{Frame, Pose3D, NUM_JOINTS};
use crate::{Error, Result};

pub const LATENT_DIM: usize = 32;

pub type LatentCode = Vec<f64>;

const LEVELS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TlConfig {
    /// Input size of the pose encoder, `3 × joints`.
    pub pose_in: usize,
    pub pose_hidden: usize,
    pub latent: usize,
    /// Spiral conv output channels of the four encoder blocks.
    pub enc_channels: [usize; 4],
    /// Four decoder blocks, then the final spiral conv (must be 3).
    pub dec_channels: [usize; 5],
    pub enc_dilations: [usize; 4],
    pub dec_dilations: [usize; 5],
    /// Ring-depth limit per spiral conv; `None` leaves spirals unbounded.
    pub enc_hops: [Option<usize>; 4],
    pub dec_hops: [Option<usize>; 5],
    pub spiral_len: usize,
    pub ds_factors: [usize; 4],
    /// Dropout rate inside the pose encoder's residual blocks (training only).
    pub dropout: f64,
}

impl Default for TlConfig {
    fn default() -> Self {
        Self {
            pose_in: 3 * NUM_JOINTS,
            pose_hidden: 1024,
            latent: LATENT_DIM,
            enc_channels: [16, 32, 64, 64],
            dec_channels: [64, 32, 16, 16, 3],
            enc_dilations: [2, 2, 1, 1],
            dec_dilations: [1, 1, 2, 2, 2],
            enc_hops: [None; 4],
            dec_hops: [None; 5],
            spiral_len: 9,
            ds_factors: [2, 2, 2, 2],
            dropout: 0.5,
        }
    }
}

impl TlConfig {
    /// Defaults with the down-sampling factors used for `part`.
    pub fn for_part(part: Part) -> Self {
        let ds_factors = match part {
            Part::Head | Part::Legs => [2, 2, 1, 1],
            Part::Arms | Part::Shoes => [2, 2, 2, 1],
            Part::Shirt => [4, 2, 2, 2],
            Part::Pants => [2, 2, 2, 2],
        };
        Self {
            ds_factors,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dec_channels[4] != 3 {
            return Err(Error::Invalid("final decoder spiral conv must output 3 channels".into()));
        }
        if self.enc_channels.iter().chain(&self.dec_channels).any(|&c| c == 0)
            || self.pose_in == 0
            || self.pose_hidden == 0
            || self.latent == 0
            || self.spiral_len == 0
        {
            return Err(Error::Invalid("network sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Mesh hierarchy, sampling operators and spirals for one part topology.
#[derive(Debug, Clone)]
pub struct PartOps {
    /// Level 0 is the input mesh.
    pub levels: Vec<PartMesh>,
    pub sampling: Vec<SamplingOperator>,
    pub enc_spirals: Vec<SpiralIndices>,
    pub dec_spirals: Vec<SpiralIndices>,
}

impl PartOps {
    pub fn build(mesh: &PartMesh, cfg: &TlConfig) -> Result<Self> {
        let mut levels = vec![mesh.clone()];
        let mut sampling = Vec::with_capacity(LEVELS);
        for k in 0..LEVELS {
            let s = build_sampling(&levels[k], cfg.ds_factors[k])?;
            levels.push(s.coarse.clone());
            sampling.push(s);
        }
        let enc_spirals = (0..LEVELS)
            .map(|k| build_spirals(&levels[k], cfg.spiral_len, cfg.enc_dilations[k], cfg.enc_hops[k]))
            .collect::<Result<Vec<_>>>()?;
        let mut dec_spirals = (0..LEVELS)
            .map(|i| build_spirals(&levels[LEVELS - 1 - i], cfg.spiral_len, cfg.dec_dilations[i], cfg.dec_hops[i]))
            .collect::<Result<Vec<_>>>()?;
        dec_spirals.push(build_spirals(&levels[0], cfg.spiral_len, cfg.dec_dilations[4], cfg.dec_hops[4])?);
        Ok(Self {
            levels,
            sampling,
            enc_spirals,
            dec_spirals,
        })
    }

    pub fn level_size(&self, k: usize) -> usize {
        self.levels[k].vertices.len()
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetParams {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl NetParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape.clone())).collect(),
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// `self += s · other`
    pub fn add_scaled(&mut self, other: &NetParams, s: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += s * y;
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy)]
struct Lin {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct EncLayout {
    sc: [Lin; 4],
    fc: Lin,
}

#[derive(Debug, Clone)]
struct Layout {
    pose_in: Lin,
    pose_blocks: [[Lin; 2]; 2],
    pose_out: Lin,
    rest: EncLayout,
    gt: EncLayout,
    fuse: Lin,
    dec_fc: Lin,
    dec_sc: [Lin; 5],
}

struct LayoutBuilder {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    fan: Vec<(usize, usize)>,
}

impl LayoutBuilder {
    fn lin(&mut self, name: &str, out: usize, inp: usize) -> Lin {
        self.layer(name, vec![out, inp], out, inp)
    }

    fn sc(&mut self, name: &str, s: usize, cin: usize, cout: usize) -> Lin {
        self.layer(name, vec![s * cin, cout], cout, s * cin)
    }

    fn layer(&mut self, name: &str, wshape: Vec<usize>, out: usize, inp: usize) -> Lin {
        let w = self.names.len();
        self.names.push(format!("{name}.weight"));
        self.shapes.push(wshape);
        self.fan.push((inp, out));
        self.names.push(format!("{name}.bias"));
        self.shapes.push(vec![out]);
        self.fan.push((0, 0));
        Lin { w, b: w + 1 }
    }
}

/// One training triple: target pose, rest-pose part and posed part.
#[derive(Debug, Clone)]
pub struct TlExample {
    pub pose: Pose3D,
    pub rest: Vec<Vec3>,
    pub posed: Vec<Vec3>,
}

#[derive(Debug, Clone)]
pub struct TlOutput {
    pub z_pred: LatentCode,
    pub vertices: Vec<Vec3>,
}

/// Terms of the embedding loss, already weighted in `total`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TlLosses {
    /// Mean |Z_pred − Z_gt|.
    pub z: f64,
    /// Mean |V − V_posed| decoding Z_gt.
    pub mesh_gt: f64,
    /// Mean |V − V_posed| decoding Z_pred.
    pub mesh_pred: f64,
    pub total: f64,
}

/// The pose + rest-mesh embedding network for one part topology.
#[derive(Debug, Clone)]
pub struct TlModel {
    pub cfg: TlConfig,
    pub ops: PartOps,
    layout: Layout,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    fan: Vec<(usize, usize)>,
}

struct PoseCache {
    x0: Vec<f64>,
    a0: Vec<f64>,
    blocks: Vec<PoseBlockCache>,
    h: Vec<f64>,
}

struct PoseBlockCache {
    h_in: Vec<f64>,
    t1: Vec<f64>,
    m1: Vec<f64>,
    d1: Vec<f64>,
    t2: Vec<f64>,
    m2: Vec<f64>,
}

struct EncCache {
    h: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
}

struct DecCache {
    z: Vec<f64>,
    u: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    last: Vec<f64>,
}

fn flatten_pose(pose: &Pose3D) -> Vec<f64> {
    let rel = match pose.frame {
        Frame::RootRelative => pose.clone(),
        Frame::World => pose.to_root_relative(),
    };
    rel.positions.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn flatten_vertices(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn l1_mean(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn l1_grad(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    let s = w / a.len().max(1) as f64;
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            if d > 0.0 {
                s
            } else if d < 0.0 {
                -s
            } else {
                0.0
            }
        })
        .collect()
}

/// `w_z · mean|Z_pred − Z_gt| + w_mesh · mean|V_pred − V_posed|`.
pub fn skin_loss(z_pred: &[f64], z_gt: &[f64], v_pred: &[Vec3], v_posed: &[Vec3], w_z: f64, w_mesh: f64) -> Result<f64> {
    if z_pred.len() != z_gt.len() {
        return Err(Error::CountMismatch {
            what: "latent code",
            expected: z_gt.len(),
            got: z_pred.len(),
        });
    }
    if v_pred.len() != v_posed.len() {
        return Err(Error::CountMismatch {
            what: "mesh vertices",
            expected: v_posed.len(),
            got: v_pred.len(),
        });
    }
    Ok(w_z * l1_mean(z_pred, z_gt) + w_mesh * l1_mean(&flatten_vertices(v_pred), &flatten_vertices(v_posed)))
}

/// Gradients of [`skin_loss`] w.r.t. `z_pred`, `z_gt` and `v_pred` (zero
/// subgradient where the difference vanishes).
pub fn skin_loss_grad(z_pred: &[f64], z_gt: &[f64], v_pred: &[Vec3], v_posed: &[Vec3], w_z: f64, w_mesh: f64) -> (Vec<f64>, Vec<f64>, Vec<Vec3>) {
    let gz = l1_grad(z_pred, z_gt, w_z);
    let gzg = gz.iter().map(|g| -g).collect();
    let gv = l1_grad(&flatten_vertices(v_pred), &flatten_vertices(v_posed), w_mesh);
    (gz, gzg, gv.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
}

impl TlModel {
    pub fn new(cfg: TlConfig, mesh: &PartMesh) -> Result<Self> {
        cfg.validate()?;
        let ops = PartOps::build(mesh, &cfg)?;
        Self::with_ops(cfg, ops)
    }

    pub fn with_ops(cfg: TlConfig, ops: PartOps) -> Result<Self> {
        cfg.validate()?;
        let s = cfg.spiral_len;
        let mut b = LayoutBuilder {
            names: Vec::new(),
            shapes: Vec::new(),
            fan: Vec::new(),
        };
        let h = cfg.pose_hidden;
        let pose_in = b.lin("pose.input", h, cfg.pose_in);
        let pose_blocks = [0, 1].map(|k| [0, 1].map(|l| b.lin(&format!("pose.block{k}.fc{l}"), h, h)));
        let pose_out = b.lin("pose.output", cfg.latent, h);
        let n4 = ops.level_size(LEVELS);
        let enc = |prefix: &str, b: &mut LayoutBuilder| {
            let mut cin = 3;
            let sc = [0, 1, 2, 3].map(|k| {
                let l = b.sc(&format!("{prefix}.sc{k}"), s, cin, cfg.enc_channels[k]);
                cin = cfg.enc_channels[k];
                l
            });
            let fc = b.lin(&format!("{prefix}.fc"), cfg.latent, n4 * cfg.enc_channels[3]);
            EncLayout { sc, fc }
        };
        let rest = enc("rest", &mut b);
        let gt = enc("gt", &mut b);
        let fuse = b.lin("fuse", cfg.latent, 2 * cfg.latent);
        let dec_fc = b.lin("dec.fc", n4 * cfg.enc_channels[3], cfg.latent);
        let mut cin = cfg.enc_channels[3];
        let dec_sc = [0, 1, 2, 3, 4].map(|i| {
            let l = b.sc(&format!("dec.sc{i}"), s, cin, cfg.dec_channels[i]);
            cin = cfg.dec_channels[i];
            l
        });
        Ok(Self {
            cfg,
            ops,
            layout: Layout {
                pose_in,
                pose_blocks,
                pose_out,
                rest,
                gt,
                fuse,
                dec_fc,
                dec_sc,
            },
            names: b.names,
            shapes: b.shapes,
            fan: b.fan,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.ops.level_size(0)
    }

    pub fn zero_params(&self) -> NetParams {
        NetParams {
            names: self.names.clone(),
            tensors: self.shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> NetParams {
        let mut p = self.zero_params();
        for (t, &(fin, fout)) in p.tensors.iter_mut().zip(&self.fan) {
            if fin == 0 {
                continue;
            }
            let a = (6.0 / (fin + fout) as f64).sqrt();
            t.data.iter_mut().for_each(|v| *v = rng.random_range(-a..a));
        }
        p
    }

    pub fn check_params(&self, params: &NetParams) -> Result<()> {
        if params.tensors.len() != self.shapes.len() {
            return Err(Error::CountMismatch {
                what: "parameter tensors",
                expected: self.shapes.len(),
                got: params.tensors.len(),
            });
        }
        for (i, (t, s)) in params.tensors.iter().zip(&self.shapes).enumerate() {
            if &t.shape != s || t.data.len() != s.iter().product::<usize>() {
                return Err(Error::Invalid(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    self.names[i], t.shape, s
                )));
            }
        }
        Ok(())
    }

    fn check_vertices(&self, v: &[Vec3]) -> Result<()> {
        if v.len() != self.num_vertices() {
            return Err(Error::CountMismatch {
                what: "part vertices",
                expected: self.num_vertices(),
                got: v.len(),
            });
        }
        Ok(())
    }

    fn check_pose(&self, pose: &Pose3D) -> Result<()> {
        if 3 * pose.len() != self.cfg.pose_in {
            return Err(Error::CountMismatch {
                what: "pose encoder input",
                expected: self.cfg.pose_in,
                got: 3 * pose.len(),
            });
        }
        Ok(())
    }

    fn pose_forward(&self, p: &NetParams, x0: Vec<f64>, mut rng: Option<&mut ChaCha8Rng>) -> (Vec<f64>, PoseCache) {
        let t = &p.tensors;
        let l = &self.layout;
        let a0 = linear_fwd(&t[l.pose_in.w].data, &t[l.pose_in.b].data, &x0);
        let mut h: Vec<f64> = a0.iter().map(|&v| relu(v)).collect();
        let rate = self.cfg.dropout;
        let mut mask = |n: usize| -> Vec<f64> {
            match rng.as_deref_mut() {
                Some(r) if rate > 0.0 => (0..n)
                    .map(|_| if r.random::<f64>() < rate { 0.0 } else { 1.0 / (1.0 - rate) })
                    .collect(),
                _ => vec![1.0; n],
            }
        };
        let mut blocks = Vec::with_capacity(2);
        for blk in &l.pose_blocks {
            let t1 = linear_fwd(&t[blk[0].w].data, &t[blk[0].b].data, &h);
            let m1 = mask(t1.len());
            let d1: Vec<f64> = t1.iter().zip(&m1).map(|(&v, m)| relu(v) * m).collect();
            let t2 = linear_fwd(&t[blk[1].w].data, &t[blk[1].b].data, &d1);
            let m2 = mask(t2.len());
            let out: Vec<f64> = h.iter().zip(&t2).zip(&m2).map(|((hv, &v), m)| hv + relu(v) * m).collect();
            blocks.push(PoseBlockCache {
                h_in: core::mem::replace(&mut h, out),
                t1,
                m1,
                d1,
                t2,
                m2,
            });
        }
        let z = linear_fwd(&t[l.pose_out.w].data, &t[l.pose_out.b].data, &h);
        (z, PoseCache { x0, a0, blocks, h })
    }

    fn pose_backward(&self, p: &NetParams, c: &PoseCache, gz: &[f64], g: &mut NetParams) {
        let t = &p.tensors;
        let l = &self.layout;
        let (gw, gb) = two_mut(&mut g.tensors, l.pose_out.w, l.pose_out.b);
        let mut gh = linear_bwd(&t[l.pose_out.w].data, &c.h, gz, gw, gb);
        for (blk, bc) in l.pose_blocks.iter().zip(&c.blocks).rev() {
            let gt2: Vec<f64> = gh
                .iter()
                .zip(&bc.m2)
                .zip(&bc.t2)
                .map(|((g, m), &v)| g * m * relu_grad(v))
                .collect();
            let (gw, gb) = two_mut(&mut g.tensors, blk[1].w, blk[1].b);
            let gd1 = linear_bwd(&t[blk[1].w].data, &bc.d1, &gt2, gw, gb);
            let gt1: Vec<f64> = gd1
                .iter()
                .zip(&bc.m1)
                .zip(&bc.t1)
                .map(|((g, m), &v)| g * m * relu_grad(v))
                .collect();
            let (gw, gb) = two_mut(&mut g.tensors, blk[0].w, blk[0].b);
            let gin = linear_bwd(&t[blk[0].w].data, &bc.h_in, &gt1, gw, gb);
            for (a, b) in gh.iter_mut().zip(&gin) {
                *a += b;
            }
        }
        let ga0: Vec<f64> = gh.iter().zip(&c.a0).map(|(g, &v)| g * relu_grad(v)).collect();
        let (gw, gb) = two_mut(&mut g.tensors, l.pose_in.w, l.pose_in.b);
        linear_bwd(&t[l.pose_in.w].data, &c.x0, &ga0, gw, gb);
    }

    fn enc_forward(&self, p: &NetParams, e: &EncLayout, verts: Vec<f64>) -> (Vec<f64>, EncCache) {
        let t = &p.tensors;
        let mut h = vec![verts];
        let mut a = Vec::with_capacity(LEVELS);
        let mut cin = 3;
        for k in 0..LEVELS {
            let cout = self.cfg.enc_channels[k];
            let n = self.ops.level_size(k);
            let mut ak = vec![0.0; n * cout];
            spiral_fwd(&h[k], cin, &self.ops.enc_spirals[k], &t[e.sc[k].w].data, &t[e.sc[k].b].data, cout, &mut ak);
            let ek: Vec<f64> = ak.iter().map(|&v| elu(v)).collect();
            h.push(self.ops.sampling[k].down.mul_dense(&ek, cout));
            a.push(ak);
            cin = cout;
        }
        let z = linear_fwd(&t[e.fc.w].data, &t[e.fc.b].data, &h[LEVELS]);
        (z, EncCache { h, a })
    }

    fn enc_backward(&self, p: &NetParams, e: &EncLayout, c: &EncCache, gz: &[f64], g: &mut NetParams) {
        let t = &p.tensors;
        let (gw, gb) = two_mut(&mut g.tensors, e.fc.w, e.fc.b);
        let mut gh = linear_bwd(&t[e.fc.w].data, &c.h[LEVELS], gz, gw, gb);
        for k in (0..LEVELS).rev() {
            let cout = self.cfg.enc_channels[k];
            let cin = if k == 0 { 3 } else { self.cfg.enc_channels[k - 1] };
            let ge = self.ops.sampling[k].down.mul_dense_transpose(&gh, cout);
            let ga: Vec<f64> = ge.iter().zip(&c.a[k]).map(|(g, &v)| g * elu_grad(v)).collect();
            let mut gx = vec![0.0; c.h[k].len()];
            let (gw, gb) = two_mut(&mut g.tensors, e.sc[k].w, e.sc[k].b);
            let gx_opt = if k > 0 { Some(&mut gx[..]) } else { None };
            spiral_bwd(&c.h[k], cin, &self.ops.enc_spirals[k], &t[e.sc[k].w].data, cout, &ga, gx_opt, gw, gb);
            gh = gx;
        }
    }

    fn dec_forward(&self, p: &NetParams, z: &[f64]) -> (Vec<f64>, DecCache) {
        let t = &p.tensors;
        let l = &self.layout;
        let mut h = linear_fwd(&t[l.dec_fc.w].data, &t[l.dec_fc.b].data, z);
        let mut cin = self.cfg.enc_channels[3];
        let mut u = Vec::with_capacity(LEVELS);
        let mut a = Vec::with_capacity(LEVELS);
        for i in 0..LEVELS {
            let level = LEVELS - 1 - i;
            let cout = self.cfg.dec_channels[i];
            let ui = self.ops.sampling[level].up.mul_dense(&h, cin);
            let n = self.ops.level_size(level);
            let mut ai = vec![0.0; n * cout];
            spiral_fwd(&ui, cin, &self.ops.dec_spirals[i], &t[l.dec_sc[i].w].data, &t[l.dec_sc[i].b].data, cout, &mut ai);
            h = ai.iter().map(|&v| elu(v)).collect();
            u.push(ui);
            a.push(ai);
            cin = cout;
        }
        let n0 = self.ops.level_size(0);
        let mut out = vec![0.0; n0 * 3];
        spiral_fwd(&h, cin, &self.ops.dec_spirals[4], &t[l.dec_sc[4].w].data, &t[l.dec_sc[4].b].data, 3, &mut out);
        (out, DecCache { z: z.to_vec(), u, a, last: h })
    }

    fn dec_backward(&self, p: &NetParams, c: &DecCache, gout: &[f64], g: &mut NetParams) -> Vec<f64> {
        let t = &p.tensors;
        let l = &self.layout;
        let cin_last = self.cfg.dec_channels[3];
        let mut gh = vec![0.0; c.last.len()];
        {
            let (gw, gb) = two_mut(&mut g.tensors, l.dec_sc[4].w, l.dec_sc[4].b);
            spiral_bwd(&c.last, cin_last, &self.ops.dec_spirals[4], &t[l.dec_sc[4].w].data, 3, gout, Some(&mut gh), gw, gb);
        }
        for i in (0..LEVELS).rev() {
            let level = LEVELS - 1 - i;
            let cout = self.cfg.dec_channels[i];
            let cin = if i == 0 { self.cfg.enc_channels[3] } else { self.cfg.dec_channels[i - 1] };
            let ga: Vec<f64> = gh.iter().zip(&c.a[i]).map(|(g, &v)| g * elu_grad(v)).collect();
            let mut gu = vec![0.0; c.u[i].len()];
            let (gw, gb) = two_mut(&mut g.tensors, l.dec_sc[i].w, l.dec_sc[i].b);
            spiral_bwd(&c.u[i], cin, &self.ops.dec_spirals[i], &t[l.dec_sc[i].w].data, cout, &ga, Some(&mut gu), gw, gb);
            gh = self.ops.sampling[level].up.mul_dense_transpose(&gu, cin);
        }
        let (gw, gb) = two_mut(&mut g.tensors, l.dec_fc.w, l.dec_fc.b);
        linear_bwd(&t[l.dec_fc.w].data, &c.z, &gh, gw, gb)
    }

    fn fuse_forward(&self, p: &NetParams, z_pose: &[f64], z_rest: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let t = &p.tensors;
        let cat: Vec<f64> = z_pose.iter().chain(z_rest).copied().collect();
        (linear_fwd(&t[self.layout.fuse.w].data, &t[self.layout.fuse.b].data, &cat), cat)
    }

    /// Decodes a latent code into part vertices.
    pub fn decode(&self, params: &NetParams, z: &[f64]) -> Result<Vec<Vec3>> {
        self.check_params(params)?;
        if z.len() != self.cfg.latent {
            return Err(Error::CountMismatch {
                what: "latent code",
                expected: self.cfg.latent,
                got: z.len(),
            });
        }
        Ok(to_vec3(&self.dec_forward(params, z).0))
    }

    /// Latent code of a posed mesh from the ground-truth encoder.
    pub fn encode_gt(&self, params: &NetParams, posed: &[Vec3]) -> Result<LatentCode> {
        self.check_params(params)?;
        self.check_vertices(posed)?;
        Ok(self.enc_forward(params, &self.layout.gt, flatten_vertices(posed)).0)
    }

    /// Test-time path: pose and rest mesh to `Z_pred`, decoded to vertices.
    pub fn forward(&self, params: &NetParams, pose: &Pose3D, rest: &[Vec3]) -> Result<TlOutput> {
        self.check_params(params)?;
        self.check_pose(pose)?;
        self.check_vertices(rest)?;
        let (zp, _) = self.pose_forward(params, flatten_pose(pose), None);
        let (zr, _) = self.enc_forward(params, &self.layout.rest, flatten_vertices(rest));
        let (z_pred, _) = self.fuse_forward(params, &zp, &zr);
        let (out, _) = self.dec_forward(params, &z_pred);
        Ok(TlOutput {
            z_pred,
            vertices: to_vec3(&out),
        })
    }

    /// Test-time forward pass plus the parameter gradient of
    /// `Σ grad_vertices · V_pred`.
    pub fn forward_backward(&self, params: &NetParams, pose: &Pose3D, rest: &[Vec3], grad_vertices: &[Vec3]) -> Result<(TlOutput, NetParams)> {
        self.check_params(params)?;
        self.check_pose(pose)?;
        self.check_vertices(rest)?;
        self.check_vertices(grad_vertices)?;
        let mut g = params.zeros_like();
        let (zp, pc) = self.pose_forward(params, flatten_pose(pose), None);
        let (zr, rc) = self.enc_forward(params, &self.layout.rest, flatten_vertices(rest));
        let (z_pred, cat) = self.fuse_forward(params, &zp, &zr);
        let (out, dc) = self.dec_forward(params, &z_pred);
        let gz = self.dec_backward(params, &dc, &flatten_vertices(grad_vertices), &mut g);
        self.fuse_and_encoders_backward(params, &cat, &pc, &rc, &gz, &mut g);
        Ok((
            TlOutput {
                z_pred,
                vertices: to_vec3(&out),
            },
            g,
        ))
    }

    fn fuse_and_encoders_backward(&self, p: &NetParams, cat: &[f64], pc: &PoseCache, rc: &EncCache, gz: &[f64], g: &mut NetParams) {
        let f = self.layout.fuse;
        let (gw, gb) = two_mut(&mut g.tensors, f.w, f.b);
        let gcat = linear_bwd(&p.tensors[f.w].data, cat, gz, gw, gb);
        let (gpose, grest) = gcat.split_at(self.cfg.latent);
        self.pose_backward(p, pc, gpose, g);
        self.enc_backward(p, &self.layout.rest, rc, grest, g);
    }

    /// Training loss of one example with both decoder paths supervised,
    /// accumulating `scale ×` its gradient into `grad`. `rng` enables
    /// dropout.
    pub fn example_loss(
        &self,
        params: &NetParams,
        ex: &TlExample,
        w_z: f64,
        w_mesh: f64,
        rng: Option<&mut ChaCha8Rng>,
        grad: Option<(&mut NetParams, f64)>,
    ) -> Result<TlLosses> {
        self.check_pose(&ex.pose)?;
        self.check_vertices(&ex.rest)?;
        self.check_vertices(&ex.posed)?;
        let target = flatten_vertices(&ex.posed);
        let (zp, pc) = self.pose_forward(params, flatten_pose(&ex.pose), rng);
        let (zr, rc) = self.enc_forward(params, &self.layout.rest, flatten_vertices(&ex.rest));
        let (z_pred, cat) = self.fuse_forward(params, &zp, &zr);
        let (z_gt, gc) = self.enc_forward(params, &self.layout.gt, target.clone());
        let (v_gt, dgc) = self.dec_forward(params, &z_gt);
        let (v_pred, dpc) = self.dec_forward(params, &z_pred);
        let losses = {
            let z = l1_mean(&z_pred, &z_gt);
            let mesh_gt = l1_mean(&v_gt, &target);
            let mesh_pred = l1_mean(&v_pred, &target);
            TlLosses {
                z,
                mesh_gt,
                mesh_pred,
                total: w_z * z + w_mesh * (mesh_gt + mesh_pred),
            }
        };
        if let Some((g, scale)) = grad {
            let mut gzp = l1_grad(&z_pred, &z_gt, w_z * scale);
            let mut gzg: Vec<f64> = gzp.iter().map(|v| -v).collect();
            let gvg = l1_grad(&v_gt, &target, w_mesh * scale);
            let gvp = l1_grad(&v_pred, &target, w_mesh * scale);
            for (a, b) in gzg.iter_mut().zip(self.dec_backward(params, &dgc, &gvg, g)) {
                *a += b;
            }
            for (a, b) in gzp.iter_mut().zip(self.dec_backward(params, &dpc, &gvp, g)) {
                *a += b;
            }
            self.enc_backward(params, &self.layout.gt, &gc, &gzg, g);
            self.fuse_and_encoders_backward(params, &cat, &pc, &rc, &gzp, g);
        }
        Ok(losses)
    }

    /// Mean losses over a dataset without dropout.
    pub fn evaluate(&self, params: &NetParams, data: &[TlExample], w_z: f64, w_mesh: f64) -> Result<TlLosses> {
        self.check_params(params)?;
        let mut acc = TlLosses::default();
        for ex in data {
            let l = self.example_loss(params, ex, w_z, w_mesh, None, None)?;
            acc.z += l.z;
            acc.mesh_gt += l.mesh_gt;
            acc.mesh_pred += l.mesh_pred;
            acc.total += l.total;
        }
        let n = data.len().max(1) as f64;
        Ok(TlLosses {
            z: acc.z / n,
            mesh_gt: acc.mesh_gt / n,
            mesh_pred: acc.mesh_pred / n,
            total: acc.total / n,
        })
    }
}

fn to_vec3(v: &[f64]) -> Vec<Vec3> {
    v.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

/// Disjoint mutable borrows of a weight and its bias.
fn two_mut(t: &mut [Tensor], w: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(w < b);
    let (lo, hi) = t.split_at_mut(b);
    (&mut lo[w].data, &mut hi[0].data)
}
