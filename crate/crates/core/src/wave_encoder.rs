//! Temporal channel: two stacked bidirectional LSTM layers over the
//! `(T, 400)` raw-sample sequence.
//!
//! Gate layout follows the Keras convention: one `(input, 4h)` kernel, one
//! `(h, 4h)` recurrent kernel and a `4h` bias, gates ordered `i, f, g, o`.

use rand::Rng;

use crate::error::{dim_err, Result};
use crate::tensor::{Elem, Init, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct LstmCell {
    pub kernel: ParamId,
    pub recurrent: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn register<F: Elem, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        prefix: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        let kernel = store.push(
            format!("{prefix}.kernel"),
            Init::GlorotUniform.build(&[input, 4 * hidden], rng)?,
            true,
        );
        let recurrent = store.push(
            format!("{prefix}.recurrent"),
            Init::Orthogonal.build(&[hidden, 4 * hidden], rng)?,
            true,
        );
        let bias = store.push(
            format!("{prefix}.bias"),
            Init::LstmBias(hidden).build(&[4 * hidden], rng)?,
            true,
        );
        Ok(LstmCell {
            kernel,
            recurrent,
            bias,
            hidden,
        })
    }

    pub fn param_ids(&self) -> [ParamId; 3] {
        [self.kernel, self.recurrent, self.bias]
    }
}

/// Cell parameters placed on a tape once per forward pass.
#[derive(Clone, Copy, Debug)]
pub struct CellVars {
    pub kernel: Var,
    pub recurrent: Var,
    pub bias: Var,
    pub hidden: usize,
}

impl LstmCell {
    pub fn on_tape<'p, F: Elem>(&self, tape: &mut Tape<'p, F>, store: &'p ParamStore<F>) -> CellVars {
        CellVars {
            kernel: tape.param(store, self.kernel),
            recurrent: tape.param(store, self.recurrent),
            bias: tape.param(store, self.bias),
            hidden: self.hidden,
        }
    }
}

/// One LSTM step given the input already multiplied by the kernel
/// (`x_proj = x · W`, shape `[1, 4h]`). Returns `(h, c)`.
pub fn lstm_step_projected<F: Elem>(
    tape: &mut Tape<'_, F>,
    cell: &CellVars,
    x_proj: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let h = cell.hidden;
    let rec = tape.matmul(h_prev, cell.recurrent)?;
    let z = tape.add(x_proj, rec)?;
    let z = tape.add_row(z, cell.bias)?;
    let i = tape.slice_cols(z, 0, h)?;
    let i = tape.sigmoid(i)?;
    let f = tape.slice_cols(z, h, 2 * h)?;
    let f = tape.sigmoid(f)?;
    let g = tape.slice_cols(z, 2 * h, 3 * h)?;
    let g = tape.tanh(g)?;
    let o = tape.slice_cols(z, 3 * h, 4 * h)?;
    let o = tape.sigmoid(o)?;
    let fc = tape.mul(f, c_prev)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let tc = tape.tanh(c)?;
    let h_new = tape.mul(o, tc)?;
    Ok((h_new, c))
}

/// One LSTM step from a raw `[1, input]` vector.
pub fn lstm_cell_step<F: Elem>(
    tape: &mut Tape<'_, F>,
    cell: &CellVars,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let hs = tape.shape(h_prev).to_vec();
    if hs != [1, cell.hidden] || tape.shape(c_prev) != [1, cell.hidden] {
        return dim_err(format!(
            "lstm state shape {hs:?} does not match hidden size {}",
            cell.hidden
        ));
    }
    let xp = tape.matmul(x, cell.kernel)?;
    lstm_step_projected(tape, cell, xp, h_prev, c_prev)
}

/// Runs one direction over all rows of `seq` (`[T, input]`). The returned
/// states are in time order regardless of direction.
fn run_direction<F: Elem>(tape: &mut Tape<'_, F>, cell: &CellVars, seq: Var, reverse: bool) -> Result<Vec<Var>> {
    let steps = tape.shape(seq)[0];
    let proj = tape.matmul(seq, cell.kernel)?;
    let zeros = crate::tensor::Tensor::zeros(&[1, cell.hidden]);
    let mut h = tape.constant(zeros.clone());
    let mut c = tape.constant(zeros);
    let mut out = vec![h; steps];
    for k in 0..steps {
        let t = if reverse { steps - 1 - k } else { k };
        let xp = tape.row(proj, t)?;
        let (h2, c2) = lstm_step_projected(tape, cell, xp, h, c)?;
        h = h2;
        c = c2;
        out[t] = h;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub struct BiLstmLayer {
    pub forward: LstmCell,
    pub backward: LstmCell,
    pub input: usize,
}

/// Output of one bidirectional layer.
pub struct BiOutput {
    /// `[T, 2h]`, row `t` = `[fwd_t ‖ bwd_t]`.
    pub states: Var,
    pub last_forward: Var,
    pub first_backward: Var,
}

impl BiLstmLayer {
    pub fn register<F: Elem, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        prefix: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(BiLstmLayer {
            forward: LstmCell::register(store, rng, &format!("{prefix}.fwd"), input, hidden)?,
            backward: LstmCell::register(store, rng, &format!("{prefix}.bwd"), input, hidden)?,
            input,
        })
    }

    pub fn run<'p, F: Elem>(&self, tape: &mut Tape<'p, F>, store: &'p ParamStore<F>, seq: Var) -> Result<BiOutput> {
        let (steps, width) = tape.value(seq).dims2()?;
        if width != self.input || steps == 0 {
            return dim_err(format!(
                "bi-lstm layer expects [T, {}] with T >= 1, got [{steps}, {width}]",
                self.input
            ));
        }
        let fc = self.forward.on_tape(tape, store);
        let bc = self.backward.on_tape(tape, store);
        let fwd = run_direction(tape, &fc, seq, false)?;
        let bwd = run_direction(tape, &bc, seq, true)?;
        let f = tape.stack_rows(&fwd)?;
        let b = tape.stack_rows(&bwd)?;
        let states = tape.concat(&[f, b])?;
        Ok(BiOutput {
            states,
            last_forward: fwd[steps - 1],
            first_backward: bwd[0],
        })
    }
}

/// Two stacked bidirectional layers.
#[derive(Clone, Debug)]
pub struct WaveEncoder {
    pub layers: [BiLstmLayer; 2],
    pub hidden: usize,
}

/// `H` (`[T, 2h]`) and the context vector `C_t` (`[1, 2h]`).
pub struct Encoded {
    pub hidden_states: Var,
    pub context: Var,
}

impl WaveEncoder {
    pub fn register<F: Elem, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        let l1 = BiLstmLayer::register(store, rng, "wave.l1", input, hidden)?;
        let l2 = BiLstmLayer::register(store, rng, "wave.l2", 2 * hidden, hidden)?;
        Ok(WaveEncoder {
            layers: [l1, l2],
            hidden,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| [l.forward.param_ids(), l.backward.param_ids()])
            .flatten()
            .collect()
    }

    /// `C_t` is the last forward state joined with the first-position backward
    /// state of the top layer, i.e. `[H[T-1][..h] ‖ H[0][h..]]`.
    pub fn encode<'p, F: Elem>(&self, tape: &mut Tape<'p, F>, store: &'p ParamStore<F>, seq: Var) -> Result<Encoded> {
        let o1 = self.layers[0].run(tape, store, seq)?;
        let o2 = self.layers[1].run(tape, store, o1.states)?;
        let context = tape.concat(&[o2.last_forward, o2.first_backward])?;
        Ok(Encoded {
            hidden_states: o2.states,
            context,
        })
    }
}

/// Parameters of one LSTM direction.
pub fn lstm_param_count(input: usize, hidden: usize) -> usize {
    4 * ((input + hidden) * hidden + hidden)
}

/// Parameters of the two-layer bidirectional encoder.
pub fn param_count(input: usize, hidden: usize) -> usize {
    2 * lstm_param_count(input, hidden) + 2 * lstm_param_count(2 * hidden, hidden)
}
