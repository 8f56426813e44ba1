//! Differentiable Neural Computer cell: an LSTM controller coupled to an
//! `N x W` external memory through content, allocation and temporal-link
//! addressing.

pub mod addressing;
mod config;
pub mod interface;
pub mod ops;

pub use config::DncConfig;
pub use interface::{InterfaceLayout, InterfaceVector, READ_MODES};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{BoundParams, Graph, Parameters, Tensor, Var};

/// Prefix for every DNC parameter path.
pub const PARAM_PREFIX: &str = "dnc/";

/// Per-step switches used by ablation and tests.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepOptions {
    /// Feed zeros instead of the previous read vectors to the controller.
    /// Memory is still written and read.
    pub ablate_reads: bool,
    /// Replace the write gate with this constant.
    pub force_write_gate: Option<f64>,
}

/// Graph handles for the cell's parameters.
#[derive(Clone, Copy, Debug)]
pub struct DncVars {
    pub controller_w: Var,
    pub controller_b: Var,
    pub output_w: Var,
    pub output_b: Var,
    pub interface_w: Var,
    pub interface_b: Var,
    pub read_out_w: Var,
}

/// Recurrent state held as graph nodes, batch-major.
#[derive(Clone, Copy, Debug)]
pub struct DncStateVars {
    /// `[B, N, W]`
    pub memory: Var,
    /// `[B, N]`
    pub usage: Var,
    /// `[B, N]`
    pub precedence: Var,
    /// `[B, N, N]`
    pub link: Var,
    /// `[B, N]`
    pub write_weights: Var,
    /// `[B, R, N]`
    pub read_weights: Var,
    /// `[B, R, W]`
    pub read_vectors: Var,
    /// `[B, H]`
    pub hidden: Var,
    /// `[B, H]`
    pub cell: Var,
}

impl DncStateVars {
    fn fields(&self) -> [Var; 9] {
        [
            self.memory,
            self.usage,
            self.precedence,
            self.link,
            self.write_weights,
            self.read_weights,
            self.read_vectors,
            self.hidden,
            self.cell,
        ]
    }

    fn from_fields(f: [Var; 9]) -> Self {
        DncStateVars {
            memory: f[0],
            usage: f[1],
            precedence: f[2],
            link: f[3],
            write_weights: f[4],
            read_weights: f[5],
            read_vectors: f[6],
            hidden: f[7],
            cell: f[8],
        }
    }

    /// Per batch row: `new` where `mask` is set, otherwise `old`.
    pub fn select(
        g: &mut Graph,
        mask: &[bool],
        new: &DncStateVars,
        old: &DncStateVars,
    ) -> Result<Self> {
        let (a, b) = (new.fields(), old.fields());
        let mut out = a;
        for i in 0..9 {
            out[i] = g.select_rows(mask.to_vec(), a[i], b[i])?;
        }
        Ok(Self::from_fields(out))
    }

    pub fn snapshot(&self, g: &Graph) -> DncState {
        let f = self.fields().map(|v| g.tensor(v));
        let [memory, usage, precedence, link, write_weights, read_weights, read_vectors, hidden, cell] =
            f;
        DncState {
            memory,
            usage,
            precedence,
            link,
            write_weights,
            read_weights,
            read_vectors,
            hidden,
            cell,
        }
    }
}

/// Detached copy of [`DncStateVars`]; same shapes, batch-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DncState {
    pub memory: Tensor,
    pub usage: Tensor,
    pub precedence: Tensor,
    pub link: Tensor,
    pub write_weights: Tensor,
    pub read_weights: Tensor,
    pub read_vectors: Tensor,
    pub hidden: Tensor,
    pub cell: Tensor,
}

impl DncState {
    pub fn zeros(config: &DncConfig, batch: usize) -> Self {
        let (n, w, r, h) = (
            config.memory_size,
            config.word_size,
            config.read_heads,
            config.hidden_size,
        );
        DncState {
            memory: Tensor::zeros(&[batch, n, w]),
            usage: Tensor::zeros(&[batch, n]),
            precedence: Tensor::zeros(&[batch, n]),
            link: Tensor::zeros(&[batch, n, n]),
            write_weights: Tensor::zeros(&[batch, n]),
            read_weights: Tensor::zeros(&[batch, r, n]),
            read_vectors: Tensor::zeros(&[batch, r, w]),
            hidden: Tensor::zeros(&[batch, h]),
            cell: Tensor::zeros(&[batch, h]),
        }
    }

    /// Loads the state into `g` as constants.
    pub fn to_graph(&self, g: &mut Graph) -> DncStateVars {
        DncStateVars {
            memory: g.constant(self.memory.clone()),
            usage: g.constant(self.usage.clone()),
            precedence: g.constant(self.precedence.clone()),
            link: g.constant(self.link.clone()),
            write_weights: g.constant(self.write_weights.clone()),
            read_weights: g.constant(self.read_weights.clone()),
            read_vectors: g.constant(self.read_vectors.clone()),
            hidden: g.constant(self.hidden.clone()),
            cell: g.constant(self.cell.clone()),
        }
    }

    /// Checks the addressing invariants with slack `tol`, returning a
    /// description of the first violation.
    pub fn check_invariants(
        &self,
        config: &DncConfig,
        tol: f64,
    ) -> std::result::Result<(), String> {
        let n = config.memory_size;
        let in_unit = |name: &str, xs: &[f64]| -> std::result::Result<(), String> {
            match xs
                .iter()
                .position(|&x| !(-tol..=1.0 + tol).contains(&x) || x.is_nan())
            {
                Some(i) => Err(format!("{name}[{i}] = {} outside [0, 1]", xs[i])),
                None => Ok(()),
            }
        };
        let simplex = |name: &str, xs: &[f64]| -> std::result::Result<(), String> {
            for (k, row) in xs.chunks(n).enumerate() {
                if let Some(i) = row.iter().position(|&x| x < 0.0 || x.is_nan()) {
                    return Err(format!(
                        "{name} row {k}: entry {i} = {} is negative",
                        row[i]
                    ));
                }
                let s: f64 = row.iter().sum();
                if s > 1.0 + tol {
                    return Err(format!("{name} row {k} sums to {s}"));
                }
            }
            Ok(())
        };
        simplex("write_weights", self.write_weights.data())?;
        simplex("read_weights", self.read_weights.data())?;
        simplex("precedence", self.precedence.data())?;
        in_unit("usage", self.usage.data())?;
        in_unit("link", self.link.data())?;
        for (b, l) in self.link.data().chunks(n * n).enumerate() {
            for i in 0..n {
                if l[i * n + i] != 0.0 {
                    return Err(format!("link[{b}] diagonal {i} = {}", l[i * n + i]));
                }
                let row: f64 = l[i * n..(i + 1) * n].iter().sum();
                let col: f64 = (0..n).map(|j| l[j * n + i]).sum();
                if row > 1.0 + tol || col > 1.0 + tol {
                    return Err(format!("link[{b}] row/column {i} sums to {row}/{col}"));
                }
            }
        }
        Ok(())
    }
}

/// Glorot-uniform initialized `[fan_in, fan_out]` matrix.
pub fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape matches data")
}

struct InterfaceVars {
    read_keys: Var,
    read_strengths: Var,
    write_key: Var,
    write_strength: Var,
    erase: Var,
    write_vector: Var,
    free_gates: Var,
    allocation_gate: Var,
    write_gate: Var,
    read_modes: Var,
}

#[derive(Clone, Debug)]
pub struct Dnc {
    config: DncConfig,
    layout: InterfaceLayout,
}

impl Dnc {
    pub fn new(config: DncConfig) -> Result<Self> {
        config.validate()?;
        Ok(Dnc {
            layout: InterfaceLayout::new(&config),
            config,
        })
    }

    pub fn config(&self) -> &DncConfig {
        &self.config
    }

    fn path(name: &str) -> String {
        format!("{PARAM_PREFIX}{name}")
    }

    pub fn init_params<R: Rng>(&self, params: &mut Parameters, rng: &mut R) -> Result<()> {
        let c = &self.config;
        let h = c.hidden_size;
        let fan_in = c.controller_input_size() + h;
        params.insert(Self::path("controller/w"), glorot(rng, fan_in, 4 * h))?;
        // forget-gate bias starts at 1
        let mut bias = vec![0.0; 4 * h];
        bias[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
        params.insert(Self::path("controller/b"), Tensor::vector(bias))?;
        params.insert(Self::path("output/w"), glorot(rng, h, c.output_size))?;
        params.insert(Self::path("output/b"), Tensor::zeros(&[c.output_size]))?;
        params.insert(
            Self::path("interface/w"),
            glorot(rng, h, c.interface_size()),
        )?;
        params.insert(
            Self::path("interface/b"),
            Tensor::zeros(&[c.interface_size()]),
        )?;
        params.insert(
            Self::path("read_out/w"),
            glorot(rng, c.read_heads * c.word_size, c.output_size),
        )?;
        Ok(())
    }

    /// Every parameter set to zero.
    pub fn zero_params(&self, params: &mut Parameters) -> Result<()> {
        let mut tmp = Parameters::new();
        self.init_params(&mut tmp, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        for (path, e) in tmp.iter() {
            params.insert(path, Tensor::zeros(e.value.shape()))?;
        }
        Ok(())
    }

    pub fn bind(&self, bound: &BoundParams) -> Result<DncVars> {
        Ok(DncVars {
            controller_w: bound.get(&Self::path("controller/w"))?,
            controller_b: bound.get(&Self::path("controller/b"))?,
            output_w: bound.get(&Self::path("output/w"))?,
            output_b: bound.get(&Self::path("output/b"))?,
            interface_w: bound.get(&Self::path("interface/w"))?,
            interface_b: bound.get(&Self::path("interface/b"))?,
            read_out_w: bound.get(&Self::path("read_out/w"))?,
        })
    }

    pub fn initial_state(&self, g: &mut Graph, batch: usize) -> DncStateVars {
        DncState::zeros(&self.config, batch).to_graph(g)
    }

    fn parse_interface(&self, g: &mut Graph, raw: Var, batch: usize) -> Result<InterfaceVars> {
        let (w, r) = (self.config.word_size, self.config.read_heads);
        let l = &self.layout;
        let field = |g: &mut Graph, range: &std::ops::Range<usize>| {
            g.slice(raw, 1, range.start, range.len())
        };
        let read_keys = field(g, &l.read_keys)?;
        let read_keys = g.reshape(read_keys, &[batch, r, w])?;
        let read_strengths = field(g, &l.read_strengths)?;
        let read_strengths = g.oneplus(read_strengths);
        let write_key = field(g, &l.write_key)?;
        let write_key = g.reshape(write_key, &[batch, 1, w])?;
        let write_strength = field(g, &l.write_strength)?;
        let write_strength = g.oneplus(write_strength);
        let erase = field(g, &l.erase)?;
        let erase = g.sigmoid(erase);
        let write_vector = field(g, &l.write_vector)?;
        let free_gates = field(g, &l.free_gates)?;
        let free_gates = g.sigmoid(free_gates);
        let allocation_gate = field(g, &l.allocation_gate)?;
        let allocation_gate = g.sigmoid(allocation_gate);
        let write_gate = field(g, &l.write_gate)?;
        let write_gate = g.sigmoid(write_gate);
        let read_modes = field(g, &l.read_modes)?;
        let read_modes = g.reshape(read_modes, &[batch, r, READ_MODES])?;
        let read_modes = g.softmax(read_modes)?;
        Ok(InterfaceVars {
            read_keys,
            read_strengths,
            write_key,
            write_strength,
            erase,
            write_vector,
            free_gates,
            allocation_gate,
            write_gate,
            read_modes,
        })
    }

    /// `softmax(strength * cosine(memory, keys))`: keys `[B, H, W]`,
    /// strengths `[B, H]`, result `[B, H, N]`.
    fn content(
        &self,
        g: &mut Graph,
        memory: Var,
        keys: Var,
        strengths: Var,
        batch: usize,
        heads: usize,
    ) -> Result<Var> {
        let sim = g.cosine(memory, keys)?;
        let s = g.reshape(strengths, &[batch, heads, 1])?;
        let scaled = g.mul(sim, s)?;
        g.softmax(scaled)
    }

    /// One recurrent step on a `[B, X]` input. Returns the `[B, Y]` output and
    /// the new state.
    pub fn step(
        &self,
        g: &mut Graph,
        p: &DncVars,
        state: &DncStateVars,
        x: Var,
        opts: StepOptions,
    ) -> Result<(Var, DncStateVars)> {
        let c = &self.config;
        let xs = g.shape(x).to_vec();
        if xs.len() != 2 || xs[1] != c.input_size {
            return Err(Error::Shape {
                op: "dnc_step",
                lhs: vec![xs.first().copied().unwrap_or(0), c.input_size],
                rhs: xs,
            });
        }
        let batch = xs[0];
        if g.shape(state.memory)[0] != batch {
            return Err(Error::Shape {
                op: "dnc_step",
                lhs: g.shape(state.memory).to_vec(),
                rhs: xs,
            });
        }
        let (n, w, r, h) = (c.memory_size, c.word_size, c.read_heads, c.hidden_size);

        // controller
        let reads = if opts.ablate_reads {
            g.zeros(&[batch, r * w])
        } else {
            g.reshape(state.read_vectors, &[batch, r * w])?
        };
        let chi = g.concat(&[x, reads, state.hidden], 1)?;
        let gates = g.matmul(chi, p.controller_w)?;
        let gates = g.add(gates, p.controller_b)?;
        let gate = |g: &mut Graph, k: usize| g.slice(gates, 1, k * h, h);
        let input_gate = gate(g, 0)?;
        let input_gate = g.sigmoid(input_gate);
        let forget_gate = gate(g, 1)?;
        let forget_gate = g.sigmoid(forget_gate);
        let candidate = gate(g, 2)?;
        let candidate = g.tanh(candidate);
        let output_gate = gate(g, 3)?;
        let output_gate = g.sigmoid(output_gate);
        let kept = g.mul(forget_gate, state.cell)?;
        let added = g.mul(input_gate, candidate)?;
        let cell = g.add(kept, added)?;
        let cell_act = g.tanh(cell);
        let hidden = g.mul(output_gate, cell_act)?;

        let v = g.matmul(hidden, p.output_w)?;
        let v = g.add(v, p.output_b)?;
        let raw = g.matmul(hidden, p.interface_w)?;
        let raw = g.add(raw, p.interface_b)?;
        let iface = self.parse_interface(g, raw, batch)?;

        // write
        let usage = ops::usage_update(
            g,
            state.usage,
            state.write_weights,
            state.read_weights,
            iface.free_gates,
        )?;
        let write_content = self.content(
            g,
            state.memory,
            iface.write_key,
            iface.write_strength,
            batch,
            1,
        )?;
        let write_content = g.reshape(write_content, &[batch, n])?;
        let alloc = ops::allocation(g, usage)?;
        let from_alloc = g.mul(alloc, iface.allocation_gate)?;
        let content_share = g.one_minus(iface.allocation_gate);
        let from_content = g.mul(write_content, content_share)?;
        let mix = g.add(from_alloc, from_content)?;
        let write_gate = match opts.force_write_gate {
            Some(v) => g.constant(Tensor::filled(&[batch, 1], v)),
            None => iface.write_gate,
        };
        let write_weights = g.mul(mix, write_gate)?;
        let memory = ops::memory_write(
            g,
            state.memory,
            write_weights,
            iface.erase,
            iface.write_vector,
        )?;

        // temporal links
        let link = ops::link_update(g, state.link, state.precedence, write_weights)?;
        let written = g.sum(write_weights, 1)?;
        let written = g.reshape(written, &[batch, 1])?;
        let keep = g.one_minus(written);
        let decayed = g.mul(state.precedence, keep)?;
        let precedence = g.add(decayed, write_weights)?;

        // read
        let read_content =
            self.content(g, memory, iface.read_keys, iface.read_strengths, batch, r)?;
        let link_t = g.transpose(link)?;
        let forward = g.matmul(state.read_weights, link_t)?;
        let backward = g.matmul(state.read_weights, link)?;
        let mode = |g: &mut Graph, k: usize| g.slice(iface.read_modes, 2, k, 1);
        let pb = mode(g, 0)?;
        let pc = mode(g, 1)?;
        let pf = mode(g, 2)?;
        let rb = g.mul(backward, pb)?;
        let rc = g.mul(read_content, pc)?;
        let rf = g.mul(forward, pf)?;
        let read_weights = g.add(rb, rc)?;
        let read_weights = g.add(read_weights, rf)?;
        let read_vectors = g.matmul(read_weights, memory)?;

        let flat = g.reshape(read_vectors, &[batch, r * w])?;
        let from_memory = g.matmul(flat, p.read_out_w)?;
        let y = g.add(v, from_memory)?;

        Ok((
            y,
            DncStateVars {
                memory,
                usage,
                precedence,
                link,
                write_weights,
                read_weights,
                read_vectors,
                hidden,
                cell,
            },
        ))
    }

    /// Runs one step outside any caller graph and returns detached values.
    pub fn step_values(
        &self,
        params: &Parameters,
        state: &DncState,
        x: &Tensor,
        opts: StepOptions,
    ) -> Result<(Tensor, DncState)> {
        let mut g = Graph::new();
        let bound = params.bind_frozen(&mut g);
        let vars = self.bind(&bound)?;
        let s = state.to_graph(&mut g);
        let xv = g.constant(x.clone());
        let (y, next) = self.step(&mut g, &vars, &s, xv, opts)?;
        Ok((g.tensor(y), next.snapshot(&g)))
    }
}
