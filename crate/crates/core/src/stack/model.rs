use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::mean_distance;
use crate::diff::{BoundParams, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::flow::{
    adaptive_mask, allocation_matrix, augment_features, embed_patches, fem_forward, flow_combine, flow_logits,
    od_vectors, partition_patches, unfold_heads, FemParams, FlowMode, ModelConfig, OdParams,
};
use crate::scalar::Scalar;

use super::head::projection_head;
use super::hyper::{hyper_apply, init_streams, merge_streams, HyperParams};
use super::mol::{mmlp_forward, MolParams};

/// How blocks are chained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Cascade {
    #[default]
    Hyper,
    /// `x + block(x)`; hyper-connection weights are ignored.
    Residual,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    pub cascade: Cascade,
    /// Use expert 0 as a plain affine map, ignoring the gates. Only valid with one expert.
    pub plain_mlp: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Xavier,
    Kaiming,
    Const(f64),
    Identity,
    /// `(1, 0, …, 0)`
    FirstBasis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Tape handles of the intermediate results of one FAM layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerTrace {
    pub phi_o: Var,
    pub phi_a: Var,
    /// `[B, h, P, N, N]`
    pub allocation: Var,
    /// Combined flow tokens `[B, h, N, P, d']`.
    pub combined: Var,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub radii: Var,
    pub mask: Var,
    pub support: Vec<bool>,
    pub layers: Vec<LayerTrace>,
    /// Merged tokens fed to the head, `[B, N, P, d]`.
    pub tokens: Var,
    /// `[B, N, τ]`
    pub prediction: Var,
}

/// Concrete values of the spatial and allocation internals for one batch.
#[derive(Debug, Clone)]
pub struct Inspection<T> {
    pub radii: Tensor<T>,
    pub mask: Tensor<T>,
    pub allocations: Vec<Tensor<T>>,
    pub prediction: Tensor<T>,
}

/// The full forecaster: configuration plus the fixed node geometry.
#[derive(Debug, Clone)]
pub struct FlowNet<T> {
    config: ModelConfig,
    mode: FlowMode,
    dist: Tensor<T>,
    mean_distance: f64,
}

fn fem_names(prefix: &str) -> [(String, &'static str); 7] {
    ["w_f", "b_f", "w_q", "w_k", "w_v", "w_out", "b_out"].map(|k| (format!("{prefix}.{k}"), k))
}

impl<T: Scalar> FlowNet<T> {
    /// `dist` is the `[N, N]` node distance matrix.
    pub fn new(config: ModelConfig, dist: &Tensor<f64>) -> Result<Self> {
        config.validate()?;
        let s = dist.shape();
        if s.len() != 2 || s[0] != s[1] || s[0] < 1 {
            return Err(Error::Shape(format!("distance matrix must be square, got {s:?}")));
        }
        let mode = config.mode()?;
        let mean_distance = if s[0] > 1 { mean_distance(dist) } else { 0.0 };
        Ok(Self { config, mode, dist: dist.cast(), mean_distance })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn nodes(&self) -> usize {
        self.dist.shape()[0]
    }

    pub fn distances(&self) -> &Tensor<T> {
        &self.dist
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let c = &self.config;
        let (n, d, h, dh, p, e, x) = (self.nodes(), c.d, c.heads, c.head_dim(), c.patches(), c.experts, c.expansion);
        let hid = c.hidden();
        let mut v = Vec::new();
        let mut add = |name: String, shape: &[usize], init: Init| v.push(ParamSpec { name, shape: shape.to_vec(), init });
        add("embed.w".into(), &[c.patch_len, d], Init::Xavier);
        add("embed.b".into(), &[d], Init::Const(0.0));
        add("embed.pos".into(), &[p, d], Init::Xavier);
        add("node_emb".into(), &[n, d], Init::Xavier);
        add("asm.w_h".into(), &[2 * d, 1], Init::Const(0.0));
        add("asm.b_r".into(), &[1], Init::Const(self.mean_distance));
        for l in 0..c.fam_layers {
            for fem in ["fem_o", "fem_a"] {
                let pre = format!("fam{l}.{fem}");
                add(format!("{pre}.w_f"), &[2 * d, d], Init::Xavier);
                add(format!("{pre}.b_f"), &[d], Init::Const(0.0));
                for k in ["w_q", "w_k", "w_v"] {
                    add(format!("{pre}.{k}"), &[h, dh, dh], Init::Xavier);
                }
                add(format!("{pre}.w_out"), &[d, d], Init::Xavier);
                add(format!("{pre}.b_out"), &[d], Init::Const(0.0));
            }
            let pre = format!("fam{l}.od");
            add(format!("{pre}.w_aff"), &[2 * d, d], Init::Xavier);
            add(format!("{pre}.b_aff"), &[d], Init::Const(0.0));
            add(format!("{pre}.ln_gain"), &[d], Init::Const(1.0));
            add(format!("{pre}.ln_bias"), &[d], Init::Const(0.0));
            for k in ["o", "d"] {
                add(format!("{pre}.w_{k}"), &[d, d], Init::Xavier);
                add(format!("{pre}.b_{k}"), &[d], Init::Const(0.0));
            }
            add(format!("{pre}.e_origin"), &[n, dh], Init::Xavier);
            add(format!("{pre}.e_dest"), &[n, dh], Init::Xavier);
            for (k, inp, out) in [("l1", d, hid), ("l2", hid, d)] {
                let pre = format!("mmlp{l}.{k}");
                add(format!("{pre}.w_g"), &[inp, e], Init::Kaiming);
                add(format!("{pre}.w"), &[e, inp, out], Init::Kaiming);
                add(format!("{pre}.b"), &[e, out], Init::Const(0.0));
            }
            for blk in ["fam", "mmlp"] {
                let pre = format!("{blk}{l}.hc");
                add(format!("{pre}.a"), &[x, x], Init::Identity);
                add(format!("{pre}.beta"), &[x], Init::FirstBasis);
                add(format!("{pre}.gamma"), &[x], Init::Const(1.0));
            }
        }
        add("head.w".into(), &[p * d, c.horizon], Init::Xavier);
        add("head.b".into(), &[c.horizon], Init::Const(0.0));
        v
    }

    /// Fresh parameters drawn from the configured seed.
    pub fn init_params(&self) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut store = ParamStore::new();
        for spec in self.param_specs() {
            let shape = &spec.shape;
            let r = shape.len();
            let (fan_in, fan_out) = if r >= 2 { (shape[r - 2], shape[r - 1]) } else { (shape[0], shape[0]) };
            let t = match spec.init {
                Init::Xavier | Init::Kaiming => {
                    let bound = match spec.init {
                        Init::Xavier => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                        _ => (6.0 / fan_in as f64).sqrt(),
                    };
                    let dist = Uniform::new_inclusive(-bound, bound);
                    Tensor::from_fn(shape, |_| T::lit(dist.sample(&mut rng)))
                }
                Init::Const(c) => Tensor::full(shape, T::lit(c)),
                Init::Identity => Tensor::from_fn(shape, |k| if k / shape[1] == k % shape[1] { T::one() } else { T::zero() }),
                Init::FirstBasis => Tensor::from_fn(shape, |k| if k == 0 { T::one() } else { T::zero() }),
            };
            store.insert(spec.name, t);
        }
        store
    }

    /// Verifies that `params` holds exactly the expected tensors.
    pub fn check_params(&self, params: &ParamStore<T>) -> Result<()> {
        let specs = self.param_specs();
        for s in &specs {
            let t = params.require(&s.name)?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Shape(format!("parameter `{}` has shape {:?}, expected {:?}", s.name, t.shape(), s.shape)));
            }
        }
        if params.len() != specs.len() {
            let extra = params.names().find(|n| !specs.iter().any(|s| s.name == *n)).unwrap_or("?");
            return Err(Error::Config(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.len() != 3 || s[1] != self.nodes() || s[2] != self.config.input_len {
            return Err(Error::Shape(format!(
                "input {s:?} does not match [B, {}, {}]",
                self.nodes(),
                self.config.input_len
            )));
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape<T>, prm: &BoundParams<'_, T>, x: &Tensor<T>, opts: ForwardOptions) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let c = &self.config;
        if opts.plain_mlp && c.experts != 1 {
            return Err(Error::Config("plain MLP mode requires a single expert".into()));
        }
        let p = |name: &str| prm.var(name);
        let dist = tape.constant(self.dist.clone());
        let patches = tape.constant(partition_patches(x, c.patch_len, c.stride)?);
        let tokens = embed_patches(tape, patches, p("embed.w")?, p("embed.b")?, p("embed.pos")?)?;
        let node_emb = p("node_emb")?;
        let aug0 = augment_features(tape, tokens, node_emb)?;
        let mb = adaptive_mask(tape, aug0, p("asm.w_h")?, p("asm.b_r")?, dist)?;
        let eps = T::lit(c.layer_norm_eps);

        let mut state = match opts.cascade {
            Cascade::Hyper => init_streams(tape, tokens, c.expansion)?,
            Cascade::Residual => tokens,
        };
        let mut layers = Vec::with_capacity(c.fam_layers);
        for l in 0..c.fam_layers {
            let fem = |which: &str| -> Result<FemParams> {
                let [w_f, b_f, w_q, w_k, w_v, w_out, b_out] = fem_names(&format!("fam{l}.{which}")).map(|(n, _)| n);
                Ok(FemParams { w_f: p(&w_f)?, b_f: p(&b_f)?, w_q: p(&w_q)?, w_k: p(&w_k)?, w_v: p(&w_v)?, w_out: p(&w_out)?, b_out: p(&b_out)? })
            };
            let (fem_o, fem_a) = (fem("fem_o")?, fem("fem_a")?);
            let od = |k: &str| p(&format!("fam{l}.od.{k}"));
            let odp = OdParams {
                w_aff: od("w_aff")?,
                b_aff: od("b_aff")?,
                ln_gain: od("ln_gain")?,
                ln_bias: od("ln_bias")?,
                w_o: od("w_o")?,
                b_o: od("b_o")?,
                w_d: od("w_d")?,
                b_d: od("b_d")?,
                e_origin: od("e_origin")?,
                e_dest: od("e_dest")?,
            };
            let mut trace = None;
            let fam = |tape: &mut Tape<T>, u: Var| -> Result<Var> {
                let aug = augment_features(tape, u, node_emb)?;
                let phi_o = fem_forward(tape, aug, &fem_o, c.heads)?;
                let phi_a = fem_forward(tape, aug, &fem_a, c.heads)?;
                let (o, d) = od_vectors(tape, aug, &odp, c.heads, eps)?;
                let q = flow_logits(tape, o, d, mb.mask)?;
                let allocation = allocation_matrix(tape, q, &mb.support)?;
                let combined = flow_combine(tape, phi_o, phi_a, allocation, self.mode)?;
                trace = Some(LayerTrace { phi_o, phi_a, allocation, combined });
                unfold_heads(tape, combined)
            };
            state = self.wrap(tape, prm, state, &format!("fam{l}.hc"), opts.cascade, fam)?;
            layers.push(trace.expect("block ran"));

            let mol = |k: &str| -> Result<MolParams> {
                let pre = format!("mmlp{l}.{k}");
                Ok(MolParams { w_g: p(&format!("{pre}.w_g"))?, w: p(&format!("{pre}.w"))?, b: p(&format!("{pre}.b"))? })
            };
            let (l1, l2) = (mol("l1")?, mol("l2")?);
            let mlp = |tape: &mut Tape<T>, u: Var| -> Result<Var> {
                if opts.plain_mlp {
                    let affine = |tape: &mut Tape<T>, x: Var, m: &MolParams| -> Result<Var> {
                        let ws = tape.shape(m.w).to_vec();
                        let w = tape.reshape(m.w, &ws[1..])?;
                        let b = tape.reshape(m.b, &ws[2..])?;
                        let y = tape.matmul(x, w)?;
                        tape.add(y, b)
                    };
                    let h = affine(tape, u, &l1)?;
                    let h = tape.gelu(h);
                    affine(tape, h, &l2)
                } else {
                    mmlp_forward(tape, u, &l1, &l2)
                }
            };
            state = self.wrap(tape, prm, state, &format!("mmlp{l}.hc"), opts.cascade, mlp)?;
        }
        let merged = match opts.cascade {
            Cascade::Hyper => merge_streams(tape, state)?,
            Cascade::Residual => state,
        };
        let prediction = projection_head(tape, merged, p("head.w")?, p("head.b")?)?;
        Ok(ForwardTrace { radii: mb.radii, mask: mb.mask, support: mb.support, layers, tokens: merged, prediction })
    }

    fn wrap<F>(&self, tape: &mut Tape<T>, prm: &BoundParams<'_, T>, state: Var, pre: &str, cascade: Cascade, block: F) -> Result<Var>
    where
        F: FnOnce(&mut Tape<T>, Var) -> Result<Var>,
    {
        match cascade {
            Cascade::Hyper => {
                let hp = HyperParams {
                    a: prm.var(&format!("{pre}.a"))?,
                    beta: prm.var(&format!("{pre}.beta"))?,
                    gamma: prm.var(&format!("{pre}.gamma"))?,
                };
                hyper_apply(tape, state, &hp, block)
            }
            Cascade::Residual => {
                let o = block(tape, state)?;
                tape.add(state, o)
            }
        }
    }

    /// Normalized-scale forecast `[B, N, τ]`.
    pub fn predict(&self, params: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = params.attach_frozen(&mut tape);
        let tr = self.forward(&mut tape, &bound, x, ForwardOptions::default())?;
        Ok(tape.value(tr.prediction).clone())
    }

    /// Mean absolute error against `y` and its gradient for every parameter,
    /// in store order.
    pub fn loss_and_grads(&self, params: &ParamStore<T>, x: &Tensor<T>, y: &Tensor<T>) -> Result<(T, Vec<Tensor<T>>)> {
        let mut tape = Tape::new();
        let bound = params.attach(&mut tape);
        let tr = self.forward(&mut tape, &bound, x, ForwardOptions::default())?;
        if tape.shape(tr.prediction) != y.shape() {
            return Err(Error::Shape(format!("target {:?} vs prediction {:?}", y.shape(), tape.shape(tr.prediction))));
        }
        let target = tape.constant(y.clone());
        let loss = tape.mae(tr.prediction, target)?;
        let value = tape.value(loss).item();
        let mut grads = tape.backward(loss)?;
        Ok((value, bound.collect(&mut grads)))
    }

    pub fn inspect(&self, params: &ParamStore<T>, x: &Tensor<T>) -> Result<Inspection<T>> {
        let mut tape = Tape::new();
        let bound = params.attach_frozen(&mut tape);
        let tr = self.forward(&mut tape, &bound, x, ForwardOptions::default())?;
        Ok(Inspection {
            radii: tape.value(tr.radii).clone(),
            mask: tape.value(tr.mask).clone(),
            allocations: tr.layers.iter().map(|l| tape.value(l.allocation).clone()).collect(),
            prediction: tape.value(tr.prediction).clone(),
        })
    }
}
