//! Slim conv heads, ICN/FG-FFN encoder, task-token decoder and tails.
//!
//! All layers are expressed on the [`Tape`], so every forward pass is
//! differentiable with respect to the trainable entries of the store.

use crate::augment::MaskPlan;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::ops::Padding;
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::config::ModelConfig;
use super::params::{Binder, ParamStore};
use super::task::TaskKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// Truncated-normal projections, zero biases and positions.
    Random,
    /// As `Random`, but every residual branch's output projection is zero,
    /// so encoder and decoder start as identities on the token stream.
    ZeroResidual,
}

/// Patch tokens with their learnable positions, `z0 = tokens + positions`.
#[derive(Clone, Copy, Debug)]
pub struct TokenSequence {
    pub z0: Var,
    pub tokens: Var,
    pub positions: Var,
    pub grid: (usize, usize),
}

/// Per-forward token context: grid geometry and the ICN foreground mask.
#[derive(Clone, Debug)]
pub struct TokenContext {
    pub grid: (usize, usize),
    /// One flag per token; ICN statistics are taken over flagged rows.
    pub foreground: Vec<bool>,
    embed_dim: usize,
}

impl TokenContext {
    pub fn new(grid: (usize, usize), foreground: Vec<bool>, embed_dim: usize) -> Result<Self> {
        if foreground.len() != grid.0 * grid.1 {
            return Err(Error::shape(format!(
                "{} foreground flags for a {}x{} grid",
                foreground.len(),
                grid.0,
                grid.1
            )));
        }
        Ok(TokenContext {
            grid,
            foreground,
            embed_dim,
        })
    }

    fn element_mask(&self) -> Vec<bool> {
        self.foreground
            .iter()
            .flat_map(|&f| std::iter::repeat_n(f, self.embed_dim))
            .collect()
    }
}

pub struct Forward {
    pub output: Var,
    pub encoded: Var,
    pub grid: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sspformer {
    config: ModelConfig,
    params: ParamStore,
}

fn conv_path(stage: &str, task: TaskKind, i: usize) -> String {
    format!("{stage}.{}.conv{i}", task.name())
}

impl Sspformer {
    pub fn new(
        config: ModelConfig,
        tasks: &[TaskKind],
        init: InitMode,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let d = config.embed_dim;
        let std = config.init_std;
        let c = config.channels;
        let pp = config.patch * config.patch;

        let linear = |store: &mut ParamStore,
                      path: &str,
                      fan_in: usize,
                      fan_out: usize,
                      zero: bool,
                      rng: &mut Rng| {
            let w = if zero {
                Tensor::zeros(&[fan_in, fan_out])
            } else {
                Tensor::from_fn(&[fan_in, fan_out], |_| rng.truncated_normal(std))
            };
            store.insert(format!("{path}.weight"), w, true)?;
            store.insert(format!("{path}.bias"), Tensor::zeros(&[fan_out]), true)
        };
        let conv =
            |store: &mut ParamStore, path: &str, c_in: usize, c_out: usize, rng: &mut Rng| {
                let s = (1.0 / (c_in * 9) as f64).sqrt();
                let w = Tensor::from_fn(&[c_out, c_in, 3, 3], |_| rng.truncated_normal(s));
                store.insert(format!("{path}.weight"), w, true)?;
                store.insert(format!("{path}.bias"), Tensor::zeros(&[c_out]), true)
            };
        let zero_out = init == InitMode::ZeroResidual;
        let attention = |store: &mut ParamStore, prefix: &str, rng: &mut Rng| -> Result<()> {
            for name in ["q", "k", "v"] {
                linear(store, &format!("{prefix}.{name}"), d, d, false, rng)?;
            }
            linear(store, &format!("{prefix}.o"), d, d, zero_out, rng)
        };
        let ffn = |store: &mut ParamStore, prefix: &str, rng: &mut Rng| -> Result<()> {
            linear(
                store,
                &format!("{prefix}.fc1"),
                d,
                config.ffn_hidden(),
                false,
                rng,
            )?;
            linear(
                store,
                &format!("{prefix}.fc2"),
                config.ffn_hidden(),
                d,
                zero_out,
                rng,
            )
        };

        for &task in tasks {
            for i in 0..config.conv_layers {
                let c_in = if i == 0 { config.in_channels } else { c };
                conv(&mut params, &conv_path("head", task, i), c_in, c, rng)?;
            }
        }

        linear(&mut params, "encoder.embed.proj", c * pp, d, false, rng)?;
        let n_max = config.max_grid() * config.max_grid();
        params.insert("encoder.embed.pos", Tensor::zeros(&[n_max, d]), true)?;
        params.insert(
            "encoder.embed.mask_token",
            Tensor::from_fn(&[d], |_| rng.truncated_normal(std)),
            true,
        )?;
        for l in 0..config.encoder_layers {
            attention(&mut params, &format!("encoder.layer{l:02}.attn"), rng)?;
            ffn(&mut params, &format!("encoder.layer{l:02}.ffn"), rng)?;
        }

        for l in 0..config.decoder_layers {
            attention(&mut params, &format!("decoder.layer{l:02}.self_attn"), rng)?;
            attention(&mut params, &format!("decoder.layer{l:02}.cross_attn"), rng)?;
            ffn(&mut params, &format!("decoder.layer{l:02}.ffn"), rng)?;
        }
        for &task in tasks {
            let token = Tensor::from_fn(&[d], |_| rng.truncated_normal(std));
            params.insert(format!("decoder.task.{}", task.name()), token, true)?;
        }
        linear(&mut params, "decoder.unembed", d, c * pp, false, rng)?;

        for &task in tasks {
            for i in 0..config.conv_layers {
                let last = i + 1 == config.conv_layers;
                let c_out = if last {
                    Self::tail_channels(&config, task)
                } else {
                    c
                };
                conv(&mut params, &conv_path("tail", task, i), c, c_out, rng)?;
            }
        }
        Ok(Sspformer { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let model = Sspformer { config, params };
        for path in [
            "encoder.embed.proj.weight",
            "encoder.embed.pos",
            "decoder.unembed.weight",
        ] {
            model.params.value(path)?;
        }
        Ok(model)
    }

    fn tail_channels(config: &ModelConfig, task: TaskKind) -> usize {
        match task {
            TaskKind::Segment => config.seg_classes,
            t => config.out_channels * t.scale() * t.scale(),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn has_task(&self, task: TaskKind) -> bool {
        self.params
            .get(&format!("decoder.task.{}", task.name()))
            .is_some()
    }

    pub fn tasks(&self) -> Vec<TaskKind> {
        TaskKind::ALL
            .into_iter()
            .filter(|&t| self.has_task(t))
            .collect()
    }

    fn require_task(&self, task: TaskKind) -> Result<()> {
        if self.has_task(task) {
            Ok(())
        } else {
            Err(Error::config(format!(
                "task `{task}` is not registered in this model"
            )))
        }
    }

    /// Per-token foreground flags: a token is foreground when any pixel of its
    /// patch exceeds `foreground_fraction` of the image maximum.
    pub fn foreground_tokens(&self, image: &Tensor) -> Result<Vec<bool>> {
        let [c, h, w] = image.dims3()?;
        let p = self.config.patch;
        if h % p != 0 || w % p != 0 {
            return Err(Error::shape(format!(
                "patch size {p} does not divide {h}x{w}"
            )));
        }
        let threshold = self.config.foreground_fraction * image.max();
        let (gh, gw) = (h / p, w / p);
        let mut flags = vec![false; gh * gw];
        let px = image.data();
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    if px[ch * h * w + i * w + j] > threshold {
                        flags[(i / p) * gw + j / p] = true;
                    }
                }
            }
        }
        Ok(flags)
    }

    pub fn head_forward(
        &self,
        tape: &mut Tape,
        b: &mut Binder,
        x: Var,
        task: TaskKind,
    ) -> Result<Var> {
        self.require_task(task)?;
        let c_in = tape.value(x).dims3()?[0];
        if c_in != self.config.in_channels {
            return Err(Error::shape(format!(
                "head expects {} input channels, got {c_in}",
                self.config.in_channels
            )));
        }
        self.conv_stack(tape, b, x, "head", task)
    }

    fn conv_stack(
        &self,
        tape: &mut Tape,
        b: &mut Binder,
        mut x: Var,
        stage: &str,
        task: TaskKind,
    ) -> Result<Var> {
        for i in 0..self.config.conv_layers {
            let path = conv_path(stage, task, i);
            let w = b.get(tape, &format!("{path}.weight"))?;
            let bias = b.get(tape, &format!("{path}.bias"))?;
            x = tape.conv2d(x, w, Padding::Same)?;
            x = tape.add_channel(x, bias)?;
            if i + 1 < self.config.conv_layers {
                x = tape.gelu(x);
            }
        }
        Ok(x)
    }

    fn linear(&self, tape: &mut Tape, b: &mut Binder, path: &str, x: Var) -> Result<Var> {
        let w = b.get(tape, &format!("{path}.weight"))?;
        let bias = b.get(tape, &format!("{path}.bias"))?;
        let y = tape.matmul(x, w)?;
        tape.add_row(y, bias)
    }

    /// Splits `f[C, H, W]` into `P x P` patches, projects them to `D`,
    /// substitutes the mask token for masked patches and adds positions.
    pub fn patch_embed(
        &self,
        tape: &mut Tape,
        b: &mut Binder,
        f: Var,
        plan: Option<&MaskPlan>,
    ) -> Result<TokenSequence> {
        let [_, h, w] = tape.value(f).dims3()?;
        let p = self.config.patch;
        if h % p != 0 || w % p != 0 {
            return Err(Error::shape(format!(
                "patch size {p} does not divide {h}x{w}"
            )));
        }
        let grid = (h / p, w / p);
        let g_max = self.config.max_grid();
        if grid.0 > g_max || grid.1 > g_max {
            return Err(Error::shape(format!(
                "{h}x{w} input exceeds the {0}x{0} position table of image_size {1}",
                g_max, self.config.image_size
            )));
        }
        let patches = tape.patchify(f, p)?;
        let mut tokens = self.linear(tape, b, "encoder.embed.proj", patches)?;
        if let Some(plan) = plan {
            if plan.grid != grid {
                return Err(Error::shape(format!(
                    "mask plan grid {:?} vs token grid {grid:?}",
                    plan.grid
                )));
            }
            let mask_token = b.get(tape, "encoder.embed.mask_token")?;
            tokens = tape.replace_rows(tokens, mask_token, &plan.decisions)?;
        }
        let table = b.get(tape, "encoder.embed.pos")?;
        let rows: Vec<usize> = (0..grid.0)
            .flat_map(|i| (0..grid.1).map(move |j| i * g_max + j))
            .collect();
        let positions = tape.select_rows(table, &rows)?;
        let z0 = tape.add(tokens, positions)?;
        Ok(TokenSequence {
            z0,
            tokens,
            positions,
            grid,
        })
    }

    pub fn icn(&self, tape: &mut Tape, x: Var, ctx: &TokenContext) -> Result<Var> {
        tape.icn(x, &ctx.element_mask(), self.config.icn_epsilon)
    }

    /// Multi-head scaled dot-product attention with output projection, no residual.
    pub fn attention(
        &self,
        tape: &mut Tape,
        b: &mut Binder,
        prefix: &str,
        query: Var,
        key: Var,
        value: Var,
    ) -> Result<Var> {
        let q = self.linear(tape, b, &format!("{prefix}.q"), query)?;
        let k = self.linear(tape, b, &format!("{prefix}.k"), key)?;
        let v = self.linear(tape, b, &format!("{prefix}.v"), value)?;
        let dk = self.config.head_dim;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = tape.slice_cols(q, h * dk, dk)?;
            let kh = tape.slice_cols(k, h * dk, dk)?;
            let vh = tape.slice_cols(v, h * dk, dk)?;
            let kt = tape.transpose(kh)?;
            let logits = tape.matmul(qh, kt)?;
            let logits = tape.scale(logits, scale);
            let weights = tape.softmax_rows(logits)?;
            heads.push(tape.matmul(weights, vh)?);
        }
        let merged = tape.concat_cols(&heads)?;
        self.linear(tape, b, &format!("{prefix}.o"), merged)
    }

    /// `z + MSA(ICN(z))`.
    pub fn msa_block(
        &self,
        tape: &mut Tape,
        b: &mut Binder,
        prefix: &str,
        z: Var,
        ctx: &TokenContext,
    ) -> Result<Var> {
        let d = tape.value(z).dims2()?[1];
        if d != self.config.heads * self.config.head_dim {
            return Err(Error::config(format!(
                "token width {d} does not split into {} heads of {}",
                self.config.heads, self.config.head_dim
            )));
        }
        let normed = self.icn(tape, z, ctx)?;
        let attended = self.attention(tape, b, prefix, normed, normed, normed)?;
        tape.add(z, attended)
    }

    pub fn ffn(&self, tape: &mut Tape, b: &mut Binder, prefix: &str, x: Var) -> Result<Var> {
        let hidden = self.linear(tape, b, &format!("{prefix}.fc1"), x)?;
        let hidden = tape.gelu(hidden);
        self.linear(tape, b, &format!("{prefix}.fc2"), hidden)
    }

    /// `FFN(x̂) ⊙ σ(Re F⁻¹(|F(x̂)|))` over the token grid; the caller adds the residual.
    pub fn fg_ffn(
        &self,
        tape: &mut Tape,
        b: &mut Binder,
        prefix: &str,
        x_hat: Var,
        grid: (usize, usize),
    ) -> Result<Var> {
        let gate = tape.freq_gate(x_hat, grid)?;
        let gate = tape.sigmoid(gate);
        let y = self.ffn(tape, b, prefix, x_hat)?;
        tape.mul(y, gate)
    }

    pub fn encoder_forward(
        &self,
        tape: &mut Tape,
        b: &mut Binder,
        z0: Var,
        ctx: &TokenContext,
    ) -> Result<Var> {
        let mut z = z0;
        for l in 0..self.config.encoder_layers {
            z = self.msa_block(tape, b, &format!("encoder.layer{l:02}.attn"), z, ctx)?;
            let x_hat = self.icn(tape, z, ctx)?;
            let y = self.fg_ffn(
                tape,
                b,
                &format!("encoder.layer{l:02}.ffn"),
                x_hat,
                ctx.grid,
            )?;
            z = tape.add(z, y)?;
        }
        Ok(z)
    }

    /// Decodes encoder tokens into a `[C, H, W]` feature map for `task`.
    pub fn decoder_forward(
        &self,
        tape: &mut Tape,
        b: &mut Binder,
        encoded: Var,
        task: TaskKind,
        ctx: &TokenContext,
    ) -> Result<Var> {
        self.require_task(task)?;
        let task_token = b.get(tape, &format!("decoder.task.{}", task.name()))?;
        let memory = self.icn(tape, encoded, ctx)?;
        let keys = tape.add_row(memory, task_token)?;
        let mut z = encoded;
        for l in 0..self.config.decoder_layers {
            z = self.msa_block(tape, b, &format!("decoder.layer{l:02}.self_attn"), z, ctx)?;
            let normed = self.icn(tape, z, ctx)?;
            let queries = tape.add_row(normed, task_token)?;
            let crossed = self.attention(
                tape,
                b,
                &format!("decoder.layer{l:02}.cross_attn"),
                queries,
                keys,
                memory,
            )?;
            z = tape.add(z, crossed)?;
            let normed = self.icn(tape, z, ctx)?;
            let y = self.ffn(tape, b, &format!("decoder.layer{l:02}.ffn"), normed)?;
            z = tape.add(z, y)?;
        }
        let pixels = self.linear(tape, b, "decoder.unembed", z)?;
        tape.unpatchify(pixels, self.config.channels, self.config.patch, ctx.grid)
    }

    pub fn tail_forward(
        &self,
        tape: &mut Tape,
        b: &mut Binder,
        f_d: Var,
        task: TaskKind,
    ) -> Result<Var> {
        self.require_task(task)?;
        let y = self.conv_stack(tape, b, f_d, "tail", task)?;
        match task.scale() {
            1 => Ok(y),
            r => tape.pixel_shuffle(y, r),
        }
    }

    /// Head, tokenizer and encoder; returns the encoded tokens and their context.
    pub fn encode(
        &self,
        tape: &mut Tape,
        b: &mut Binder,
        input: &Tensor,
        task: TaskKind,
        plan: Option<&MaskPlan>,
    ) -> Result<(Var, TokenContext)> {
        let foreground = self.foreground_tokens(input)?;
        let x = tape.constant(input.clone());
        let f_h = self.head_forward(tape, b, x, task)?;
        let seq = self.patch_embed(tape, b, f_h, plan)?;
        let ctx = TokenContext::new(seq.grid, foreground, self.config.embed_dim)?;
        let encoded = self.encoder_forward(tape, b, seq.z0, &ctx)?;
        Ok((encoded, ctx))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        b: &mut Binder,
        input: &Tensor,
        task: TaskKind,
        plan: Option<&MaskPlan>,
    ) -> Result<Forward> {
        let (encoded, ctx) = self.encode(tape, b, input, task, plan)?;
        let f_d = self.decoder_forward(tape, b, encoded, task, &ctx)?;
        let output = self.tail_forward(tape, b, f_d, task)?;
        Ok(Forward {
            output,
            encoded,
            grid: ctx.grid,
        })
    }

    /// Gradient-free forward returning the tail output.
    pub fn predict(&self, input: &Tensor, task: TaskKind) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut b = Binder::new(&self.params);
        let fwd = self.forward(&mut tape, &mut b, input, task, None)?;
        Ok(tape.value(fwd.output).clone())
    }
}
