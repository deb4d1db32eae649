//! Recurrent and convolutional binary classifiers with hand-written
//! backpropagation, in 64-bit floats.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod train;

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, Array3, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use layers::{Activation, ConvCache, LstmCache};

pub use optim::AmsGrad;
pub use train::{train, EpochRecord, TrainConfig, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    /// `seq` keeps every time step; otherwise only the final state.
    Lstm { units: usize, seq: bool },
    /// Forward and time-reversed LSTMs, outputs concatenated per step.
    BiLstm { units: usize, seq: bool },
    /// Valid convolution, stride 1, ReLU.
    Conv1d { filters: usize, width: usize },
    MaxPool { width: usize },
    Flatten,
    Dense { units: usize, activation: Activation },
    Dropout { rate: f64 },
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let seq = |s: bool| if s { ",seq" } else { "" };
        match *self {
            LayerSpec::Lstm { units, seq: q } => write!(f, "lstm({units}{})", seq(q)),
            LayerSpec::BiLstm { units, seq: q } => write!(f, "bilstm({units}{})", seq(q)),
            LayerSpec::Conv1d { filters, width } => write!(f, "conv1d({filters},{width})"),
            LayerSpec::MaxPool { width } => write!(f, "maxpool({width})"),
            LayerSpec::Flatten => write!(f, "flatten"),
            LayerSpec::Dense { units, activation } => {
                let a = match activation {
                    Activation::Linear => "linear",
                    Activation::Relu => "relu",
                    Activation::Sigmoid => "sigmoid",
                };
                write!(f, "dense({units},{a})")
            }
            LayerSpec::Dropout { rate } => write!(f, "dropout({rate:?})"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;
    /// `lstm(32,seq)`, `bilstm(128)`, `conv1d(64,3)`, `maxpool(2)`,
    /// `flatten`, `dense(64,relu)`, `dropout(0.5)`.
    fn from_str(text: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse layer `{text}`"));
        let t = text.trim();
        let (name, args) = match t.find('(') {
            Some(i) if t.ends_with(')') => (&t[..i], t[i + 1..t.len() - 1].split(',').map(str::trim).collect()),
            None => (t, Vec::new()),
            _ => return Err(bad()),
        };
        let int = |i: usize| -> Result<usize> {
            args.get(i).and_then(|a: &&str| a.parse().ok()).filter(|v| *v > 0).ok_or_else(bad)
        };
        let seq = || match args.get(1) {
            None => Ok(false),
            Some(&"seq") => Ok(true),
            Some(_) => Err(bad()),
        };
        let arity = |n: usize| if args.len() == n { Ok(()) } else { Err(bad()) };
        Ok(match name {
            "lstm" => LayerSpec::Lstm { units: int(0)?, seq: seq()? },
            "bilstm" => LayerSpec::BiLstm { units: int(0)?, seq: seq()? },
            "conv1d" => {
                arity(2)?;
                LayerSpec::Conv1d { filters: int(0)?, width: int(1)? }
            }
            "maxpool" => {
                arity(1)?;
                LayerSpec::MaxPool { width: int(0)? }
            }
            "flatten" => {
                arity(0)?;
                LayerSpec::Flatten
            }
            "dense" => {
                arity(2)?;
                let activation = match args[1] {
                    "relu" => Activation::Relu,
                    "sigmoid" => Activation::Sigmoid,
                    "linear" => Activation::Linear,
                    _ => return Err(bad()),
                };
                LayerSpec::Dense { units: int(0)?, activation }
            }
            "dropout" => {
                arity(1)?;
                LayerSpec::Dropout { rate: args[0].parse().map_err(|_| bad())? }
            }
            _ => return Err(bad()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Preset {
    D1,
    D2,
    D3,
    D4,
    D5,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::D1, Preset::D2, Preset::D3, Preset::D4, Preset::D5];

    pub fn description(self) -> &'static str {
        match self {
            Preset::D1 => "deep LSTM",
            Preset::D2 => "wide LSTM",
            Preset::D3 => "deep bidirectional LSTM",
            Preset::D4 => "wide bidirectional LSTM",
            Preset::D5 => "CNN",
        }
    }

    pub fn spec(self, dropout: f64) -> NetworkSpec {
        use LayerSpec::*;
        let out = Dense { units: 1, activation: Activation::Sigmoid };
        let drop = Dropout { rate: dropout };
        let layers = match self {
            Preset::D1 => vec![Lstm { units: 32, seq: true }, drop, Lstm { units: 32, seq: false }, out],
            Preset::D2 => vec![Lstm { units: 128, seq: false }, drop, out],
            Preset::D3 => vec![BiLstm { units: 32, seq: true }, drop, BiLstm { units: 32, seq: false }, out],
            Preset::D4 => vec![BiLstm { units: 128, seq: false }, drop, out],
            Preset::D5 => vec![
                Conv1d { filters: 64, width: 3 },
                MaxPool { width: 2 },
                Conv1d { filters: 32, width: 3 },
                MaxPool { width: 2 },
                Flatten,
                Dense { units: 64, activation: Activation::Relu },
                drop,
                out,
            ],
        };
        NetworkSpec { layers, preset: Some(self) }
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "D1" => Ok(Preset::D1),
            "D2" => Ok(Preset::D2),
            "D3" => Ok(Preset::D3),
            "D4" => Ok(Preset::D4),
            "D5" => Ok(Preset::D5),
            _ => Err(Error::Config(format!("unknown design `{s}`"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub preset: Option<Preset>,
}

impl NetworkSpec {
    /// Space-separated layer list, e.g. `lstm(128) dropout(0.5) dense(1,sigmoid)`.
    pub fn parse(text: &str) -> Result<Self> {
        let layers = text.split_whitespace().map(str::parse).collect::<Result<Vec<_>>>()?;
        Ok(NetworkSpec { layers, preset: None })
    }

    pub fn layer_string(&self) -> String {
        self.layers.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" ")
    }

    /// Replaces every dropout rate.
    pub fn with_dropout(mut self, rate: f64) -> Self {
        for l in &mut self.layers {
            if let LayerSpec::Dropout { rate: r } = l {
                *r = rate;
            }
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Seq(usize, usize),
    Flat(usize),
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Glorot { fan_in: usize, fan_out: usize },
    Orthogonal,
    /// LSTM bias: forget block 1, rest 0.
    LstmBias,
    Zeros,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Lstm { p: usize, seq: bool },
    BiLstm { p: usize, seq: bool },
    Conv { p: usize, width: usize },
    Pool { width: usize },
    Flatten,
    Dense { p: usize, act: Activation },
    Dropout { rate: f64 },
}

fn compile(spec: &NetworkSpec, window: usize, features: usize) -> Result<(Vec<Op>, Vec<((usize, usize), Init)>)> {
    let err = |i: usize, what: String| Error::Config(format!("layer {i} ({}): {what}", spec.layers[i]));
    if spec.layers.last() != Some(&LayerSpec::Dense { units: 1, activation: Activation::Sigmoid }) {
        return Err(Error::Config("network must end with dense(1,sigmoid)".into()));
    }
    if window == 0 || features == 0 {
        return Err(Error::Config("input window and feature count must be >= 1".into()));
    }
    let mut shape = Shape::Seq(window, features);
    let mut ops = Vec::new();
    let mut params: Vec<((usize, usize), Init)> = Vec::new();
    let lstm = |params: &mut Vec<_>, f: usize, h: usize| {
        let p = params.len();
        params.push(((f, 4 * h), Init::Glorot { fan_in: f, fan_out: 4 * h }));
        params.push(((h, 4 * h), Init::Orthogonal));
        params.push(((1, 4 * h), Init::LstmBias));
        p
    };
    for (i, layer) in spec.layers.iter().enumerate() {
        shape = match (*layer, shape) {
            (LayerSpec::Lstm { units, seq }, Shape::Seq(t, f)) => {
                ops.push(Op::Lstm { p: lstm(&mut params, f, units), seq });
                if seq { Shape::Seq(t, units) } else { Shape::Flat(units) }
            }
            (LayerSpec::BiLstm { units, seq }, Shape::Seq(t, f)) => {
                let p = lstm(&mut params, f, units);
                lstm(&mut params, f, units);
                ops.push(Op::BiLstm { p, seq });
                if seq { Shape::Seq(t, 2 * units) } else { Shape::Flat(2 * units) }
            }
            (LayerSpec::Conv1d { filters, width }, Shape::Seq(t, c)) => {
                if width > t {
                    return Err(err(i, format!("kernel wider than the {t} steps available")));
                }
                let p = params.len();
                params.push(((width * c, filters), Init::Glorot { fan_in: width * c, fan_out: width * filters }));
                params.push(((1, filters), Init::Zeros));
                ops.push(Op::Conv { p, width });
                Shape::Seq(t + 1 - width, filters)
            }
            (LayerSpec::MaxPool { width }, Shape::Seq(t, c)) => {
                if width > t {
                    return Err(err(i, format!("pool wider than the {t} steps available")));
                }
                ops.push(Op::Pool { width });
                Shape::Seq(t / width, c)
            }
            (LayerSpec::Flatten, Shape::Seq(t, c)) => {
                ops.push(Op::Flatten);
                Shape::Flat(t * c)
            }
            (LayerSpec::Dense { units, activation }, Shape::Flat(d)) => {
                let p = params.len();
                params.push(((d, units), Init::Glorot { fan_in: d, fan_out: units }));
                params.push(((1, units), Init::Zeros));
                ops.push(Op::Dense { p, act: activation });
                Shape::Flat(units)
            }
            (LayerSpec::Dropout { rate }, s) => {
                if !(rate > 0.0 && rate < 1.0) {
                    return Err(err(i, format!("dropout rate {rate} not in (0, 1)")));
                }
                ops.push(Op::Dropout { rate });
                s
            }
            (_, s) => return Err(err(i, format!("incompatible input shape {s:?}"))),
        };
    }
    Ok((ops, params))
}

fn glorot<R: Rng>(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

/// Matrix with orthonormal rows (or columns when taller than wide), from
/// Gram–Schmidt on Gaussian vectors.
fn orthogonal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let (short, long) = (rows.min(cols), rows.max(cols));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(b).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-10 {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
        }
    }
    if rows <= cols {
        Array2::from_shape_fn((rows, cols), |(r, c)| basis[r][c])
    } else {
        Array2::from_shape_fn((rows, cols), |(r, c)| basis[c][r])
    }
}

#[derive(Debug, Clone)]
enum Tensor {
    Seq(Array3<f64>),
    Flat(Array2<f64>),
}

impl Tensor {
    fn all_finite(&self) -> bool {
        match self {
            Tensor::Seq(a) => a.iter().all(|v| v.is_finite()),
            Tensor::Flat(a) => a.iter().all(|v| v.is_finite()),
        }
    }

    fn seq(self) -> Array3<f64> {
        match self {
            Tensor::Seq(a) => a,
            Tensor::Flat(_) => unreachable!("shape checked at compile"),
        }
    }

    fn flat(self) -> Array2<f64> {
        match self {
            Tensor::Flat(a) => a,
            Tensor::Seq(_) => unreachable!("shape checked at compile"),
        }
    }
}

enum Cache {
    Lstm { cache: LstmCache, time: usize },
    BiLstm { fwd: LstmCache, bwd: LstmCache, time: usize },
    Conv(ConvCache),
    Pool { arg: Array3<usize>, time: usize },
    Flatten { time: usize, channels: usize },
    Dense { x: Array2<f64>, y: Array2<f64> },
    Dropout(Option<Vec<f64>>),
}

/// Training mode draws dropout masks from the given generator.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

#[derive(Debug, Clone)]
pub struct Network {
    pub spec: NetworkSpec,
    pub window: usize,
    pub features: usize,
    pub params: Vec<Array2<f64>>,
    ops: Vec<Op>,
}

impl Network {
    /// Fresh network with seeded initialization.
    pub fn new(spec: &NetworkSpec, window: usize, features: usize, seed: u64) -> Result<Self> {
        let (ops, shapes) = compile(spec, window, features)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = shapes
            .iter()
            .map(|&((r, c), init)| match init {
                Init::Glorot { fan_in, fan_out } => glorot(r, c, fan_in, fan_out, &mut rng),
                Init::Orthogonal => orthogonal(r, c, &mut rng),
                Init::LstmBias => {
                    let h = c / 4;
                    Array2::from_shape_fn((r, c), |(_, j)| if j / h == layers::FORGET { 1.0 } else { 0.0 })
                }
                Init::Zeros => Array2::zeros((r, c)),
            })
            .collect();
        Ok(Network {
            spec: spec.clone(),
            window,
            features,
            params,
            ops,
        })
    }

    /// Network with the given parameters; shapes must match the layer list.
    pub fn from_params(spec: &NetworkSpec, window: usize, features: usize, params: Vec<Array2<f64>>) -> Result<Self> {
        let (ops, shapes) = compile(spec, window, features)?;
        if shapes.len() != params.len() || shapes.iter().zip(&params).any(|((s, _), p)| *s != p.dim()) {
            return Err(Error::Shape("parameter shapes do not match the network spec".into()));
        }
        Ok(Network {
            spec: spec.clone(),
            window,
            features,
            params,
            ops,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, x: &ArrayView3<f64>) -> Result<()> {
        let (b, t, f) = x.dim();
        if b == 0 || t != self.window || f != self.features {
            return Err(Error::Shape(format!(
                "input {b}×{t}×{f}, network expects batch×{}×{}",
                self.window, self.features
            )));
        }
        Ok(())
    }

    fn forward_cached(&self, x: ArrayView3<f64>, mode: Mode<'_>) -> Result<(Vec<f64>, Vec<Cache>)> {
        let (out, caches) = self.run(x, mode, self.ops.len())?;
        Ok((out.flat().column(0).to_vec(), caches))
    }

    /// Runs the first `stop` layers.
    fn run(&self, x: ArrayView3<f64>, mut mode: Mode<'_>, stop: usize) -> Result<(Tensor, Vec<Cache>)> {
        self.check_input(&x)?;
        let mut act = Tensor::Seq(x.to_owned());
        let mut caches = Vec::with_capacity(self.ops.len());
        for (i, op) in self.ops.iter().enumerate().take(stop) {
            let (next, cache) = match *op {
                Op::Lstm { p, seq } => {
                    let input = act.seq();
                    let time = input.dim().1;
                    let (h, cache) =
                        layers::lstm_forward(&self.params[p], &self.params[p + 1], &self.params[p + 2], input.view());
                    let out = if seq { Tensor::Seq(h) } else { Tensor::Flat(h.index_axis(Axis(1), time - 1).to_owned()) };
                    (out, Cache::Lstm { cache, time })
                }
                Op::BiLstm { p, seq } => {
                    let input = act.seq();
                    let time = input.dim().1;
                    let (hf, fwd) =
                        layers::lstm_forward(&self.params[p], &self.params[p + 1], &self.params[p + 2], input.view());
                    let rev = layers::reverse_time(input.view());
                    let (hb, bwd) =
                        layers::lstm_forward(&self.params[p + 3], &self.params[p + 4], &self.params[p + 5], rev.view());
                    let out = if seq {
                        let aligned = layers::reverse_time(hb.view());
                        Tensor::Seq(ndarray::concatenate(Axis(2), &[hf.view(), aligned.view()]).expect("same shape"))
                    } else {
                        Tensor::Flat(
                            ndarray::concatenate(
                                Axis(1),
                                &[hf.index_axis(Axis(1), time - 1), hb.index_axis(Axis(1), time - 1)],
                            )
                            .expect("same shape"),
                        )
                    };
                    (out, Cache::BiLstm { fwd, bwd, time })
                }
                Op::Conv { p, width } => {
                    let input = act.seq();
                    let (out, cache) = layers::conv1d_forward(&self.params[p], &self.params[p + 1], input.view(), width);
                    (Tensor::Seq(out), Cache::Conv(cache))
                }
                Op::Pool { width } => {
                    let input = act.seq();
                    let time = input.dim().1;
                    let (out, arg) = layers::maxpool_forward(input.view(), width);
                    (Tensor::Seq(out), Cache::Pool { arg, time })
                }
                Op::Flatten => {
                    let input = act.seq();
                    let (b, t, c) = input.dim();
                    let flat = input.as_standard_layout().into_owned().into_shape_with_order((b, t * c)).map_err(|e| Error::Shape(e.to_string()))?;
                    (Tensor::Flat(flat), Cache::Flatten { time: t, channels: c })
                }
                Op::Dense { p, act: a } => {
                    let input = act.flat();
                    let y = layers::dense_forward(&self.params[p], &self.params[p + 1], input.view(), a);
                    (Tensor::Flat(y.clone()), Cache::Dense { x: input, y })
                }
                Op::Dropout { rate } => match &mut mode {
                    Mode::Eval => (act, Cache::Dropout(None)),
                    Mode::Train(rng) => {
                        let mut act = act;
                        let mask = match &mut act {
                            Tensor::Seq(a) => {
                                let m = layers::dropout_mask(a.len(), rate, *rng);
                                a.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                                m
                            }
                            Tensor::Flat(a) => {
                                let m = layers::dropout_mask(a.len(), rate, *rng);
                                a.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                                m
                            }
                        };
                        (act, Cache::Dropout(Some(mask)))
                    }
                },
            };
            if !next.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite activation after layer {i} ({})",
                    self.spec.layers[i]
                )));
            }
            act = next;
            caches.push(cache);
        }
        Ok((act, caches))
    }

    /// Probabilities for a batch.
    pub fn forward(&self, x: ArrayView3<f64>, mode: Mode<'_>) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x, mode)?.0)
    }

    /// Evaluation-mode probabilities, computed in chunks.
    pub fn predict(&self, x: ArrayView3<f64>) -> Result<Vec<f64>> {
        const CHUNK: usize = 256;
        let n = x.dim().0;
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            out.extend(self.forward(x.slice(s![start..end, .., ..]), Mode::Eval)?);
            start = end;
        }
        Ok(out)
    }

    /// Mean binary cross-entropy and its gradient for every parameter.
    pub fn loss_and_grad(&self, x: ArrayView3<f64>, labels: &[f64], mode: Mode<'_>) -> Result<(f64, Vec<f64>, Vec<Array2<f64>>)> {
        let (probs, caches) = self.forward_cached(x, mode)?;
        let loss = layers::bce_loss(&probs, labels)?;
        let mut grads: Vec<Array2<f64>> = self.params.iter().map(|p| Array2::zeros(p.dim())).collect();
        let dp = layers::bce_grad(&probs, labels);
        let mut d = Tensor::Flat(Array2::from_shape_vec((dp.len(), 1), dp).expect("column"));
        for (op, cache) in self.ops.iter().zip(caches.iter()).rev() {
            d = match (*op, cache) {
                (Op::Lstm { p, seq }, Cache::Lstm { cache, time }) => {
                    let d_out = if seq { d.seq() } else { spread_last(d.flat(), *time) };
                    let g = layers::lstm_backward(&self.params[p], &self.params[p + 1], cache, d_out.view());
                    grads[p] += &g.du;
                    grads[p + 1] += &g.dw;
                    grads[p + 2] += &g.db;
                    Tensor::Seq(g.dx)
                }
                (Op::BiLstm { p, seq }, Cache::BiLstm { fwd, bwd, time }) => {
                    let (df, db_rev) = if seq {
                        let d = d.seq();
                        let h = d.dim().2 / 2;
                        let df = d.slice(s![.., .., ..h]).to_owned();
                        let db = layers::reverse_time(d.slice(s![.., .., h..]));
                        (df, db)
                    } else {
                        let d = d.flat();
                        let h = d.ncols() / 2;
                        (
                            spread_last(d.slice(s![.., ..h]).to_owned(), *time),
                            spread_last(d.slice(s![.., h..]).to_owned(), *time),
                        )
                    };
                    let gf = layers::lstm_backward(&self.params[p], &self.params[p + 1], fwd, df.view());
                    let gb = layers::lstm_backward(&self.params[p + 3], &self.params[p + 4], bwd, db_rev.view());
                    for (k, g) in [gf.du, gf.dw, gf.db, gb.du, gb.dw, gb.db].into_iter().enumerate() {
                        grads[p + k] += &g;
                    }
                    Tensor::Seq(gf.dx + layers::reverse_time(gb.dx.view()))
                }
                (Op::Conv { p, width }, Cache::Conv(cache)) => {
                    let (dx, dk, db) = layers::conv1d_backward(&self.params[p], cache, d.seq().view(), width);
                    grads[p] += &dk;
                    grads[p + 1] += &db;
                    Tensor::Seq(dx)
                }
                (Op::Pool { .. }, Cache::Pool { arg, time }) => {
                    Tensor::Seq(layers::maxpool_backward(arg, d.seq().view(), *time))
                }
                (Op::Flatten, Cache::Flatten { time, channels }) => {
                    let d = d.flat();
                    let b = d.nrows();
                    Tensor::Seq(d.as_standard_layout().into_owned().into_shape_with_order((b, *time, *channels)).map_err(|e| Error::Shape(e.to_string()))?)
                }
                (Op::Dense { p, act }, Cache::Dense { x, y }) => {
                    let (dx, dw, db) = layers::dense_backward(&self.params[p], x.view(), y.view(), d.flat().view(), act);
                    grads[p] += &dw;
                    grads[p + 1] += &db;
                    Tensor::Flat(dx)
                }
                (Op::Dropout { .. }, Cache::Dropout(mask)) => match mask {
                    None => d,
                    Some(m) => {
                        let mut d = d;
                        match &mut d {
                            Tensor::Seq(a) => a.iter_mut().zip(m).for_each(|(v, k)| *v *= k),
                            Tensor::Flat(a) => a.iter_mut().zip(m).for_each(|(v, k)| *v *= k),
                        }
                        d
                    }
                },
                _ => unreachable!("cache follows op"),
            };
        }
        Ok((loss, probs, grads))
    }
}

/// Gradient of the final state placed at the last time step.
fn spread_last(d: Array2<f64>, time: usize) -> Array3<f64> {
    let (b, h) = d.dim();
    let mut out = Array3::zeros((b, time, h));
    out.index_axis_mut(Axis(1), time - 1).assign(&d);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_strings_round_trip() {
        for p in Preset::ALL {
            let spec = p.spec(0.3);
            let parsed = NetworkSpec::parse(&spec.layer_string()).unwrap();
            assert_eq!(parsed.layers, spec.layers);
        }
        assert!("lstm(0)".parse::<LayerSpec>().is_err());
        assert!("dense(3)".parse::<LayerSpec>().is_err());
        assert!("conv1d(3,2,1)".parse::<LayerSpec>().is_err());
        assert_eq!("maxpool(2)".parse::<LayerSpec>().unwrap(), LayerSpec::MaxPool { width: 2 });
    }

    #[test]
    fn shape_checks() {
        let bad_end = NetworkSpec::parse("lstm(4) dense(2,sigmoid)").unwrap();
        assert!(Network::new(&bad_end, 10, 3, 0).is_err());
        let dense_on_seq = NetworkSpec::parse("dense(4,relu) dense(1,sigmoid)").unwrap();
        assert!(Network::new(&dense_on_seq, 10, 3, 0).is_err());
        let wide_conv = NetworkSpec::parse("conv1d(4,11) flatten dense(1,sigmoid)").unwrap();
        assert!(Network::new(&wide_conv, 10, 3, 0).is_err());
        let bad_drop = Preset::D2.spec(1.0);
        assert!(Network::new(&bad_drop, 10, 3, 0).is_err());
        for p in Preset::ALL {
            let net = Network::new(&p.spec(0.5), 74, 5, 1).unwrap();
            let x = Array3::from_shape_fn((3, 74, 5), |(a, b, c)| ((a * 7 + b * 3 + c) as f64 * 0.1).sin());
            let probs = net.predict(x.view()).unwrap();
            assert_eq!(probs.len(), 3);
            assert!(probs.iter().all(|p| *p > 0.0 && *p < 1.0));
            assert!(net.predict(x.slice(s![.., ..73, ..])).is_err());
        }
    }

    #[test]
    fn parameter_counts_of_presets() {
        // LSTM: 4H(F + H + 1) per direction.
        let f = 5;
        let count = |p: Preset| Network::new(&p.spec(0.5), 74, f, 0).unwrap().parameter_count();
        assert_eq!(count(Preset::D2), 4 * 128 * (f + 128 + 1) + 128 + 1);
        assert_eq!(count(Preset::D4), 2 * 4 * 128 * (f + 128 + 1) + 256 + 1);
        // conv 74→72→36→34→17, flatten 17·32.
        let d5 = 3 * f * 64 + 64 + 3 * 64 * 32 + 32 + 17 * 32 * 64 + 64 + 64 + 1;
        assert_eq!(count(Preset::D5), d5);
    }

    #[test]
    fn orthogonal_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = orthogonal(8, 32, &mut rng);
        let g = w.dot(&w.t());
        for i in 0..8 {
            for j in 0..8 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - e).abs() < 1e-12);
            }
        }
        let tall = orthogonal(6, 3, &mut rng);
        let g = tall.t().dot(&tall);
        assert!((g[[1, 1]] - 1.0).abs() < 1e-12 && g[[0, 2]].abs() < 1e-12);
    }

    #[test]
    fn forget_bias_is_one() {
        let net = Network::new(&Preset::D2.spec(0.5), 5, 2, 0).unwrap();
        let b = &net.params[2];
        assert!(b.iter().take(128).all(|v| *v == 1.0));
        assert!(b.iter().skip(128).all(|v| *v == 0.0));
    }

    #[test]
    fn eval_mode_is_deterministic_and_dropout_inactive() {
        let net = Network::new(&Preset::D1.spec(0.7), 6, 2, 4).unwrap();
        let x = Array3::from_shape_fn((4, 6, 2), |(a, b, c)| (a + b) as f64 * 0.3 - c as f64);
        let a = net.predict(x.view()).unwrap();
        let b = net.predict(x.view()).unwrap();
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = net.forward(x.view(), Mode::Train(&mut rng)).unwrap();
        assert_ne!(a, t);
    }

    #[test]
    fn bidirectional_palindrome_is_mirror_symmetric() {
        let spec = NetworkSpec::parse("bilstm(3,seq) flatten dense(1,sigmoid)").unwrap();
        let mut net = Network::new(&spec, 5, 2, 9).unwrap();
        for k in 0..3 {
            net.params[3 + k] = net.params[k].clone();
        }
        let x = ndarray::array![[[0.1, -0.4], [0.7, 0.2], [-0.3, 0.9], [0.7, 0.2], [0.1, -0.4]]];
        let out = net.run(x.view(), Mode::Eval, 1).unwrap().0.seq();
        for t in 0..5 {
            for j in 0..3 {
                assert_eq!(out[[0, t, j]], out[[0, 4 - t, 3 + j]]);
            }
        }
    }
}
