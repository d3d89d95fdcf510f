//! Bidirectional LSTM stack over the fused sequence and the two-layer
//! softmax head that turns its final output into a correct/overfitting
//! decision.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ingest::Label;
use crate::numerics::tape::{Tape, Var};
use crate::numerics::{Mode, ParamId, ParamSet, Scalar, Tensor};

const INIT_STD: f64 = 0.02;

/// Gate and projection weights for one direction of one layer.
#[derive(Clone, Copy, Debug)]
pub struct LstmDir {
    wix: ParamId,
    wih: ParamId,
    bi: ParamId,
    wfx: ParamId,
    wfh: ParamId,
    bf: ParamId,
    wgx: ParamId,
    wgh: ParamId,
    bg: ParamId,
    wox: ParamId,
    woh: ParamId,
    bo: ParamId,
    wzh: ParamId,
    bz: ParamId,
}

/// A stack of bidirectional LSTM layers. Layer inputs after the first
/// are the per-position concatenations of both directions' hidden
/// states; the stack's output is the concatenation of the final
/// layer's forward output at the last unmasked step and backward
/// output at step zero, each projected by the shared `W_zh`/`b_z`.
#[derive(Clone, Debug)]
pub struct Bilstm {
    layers: Vec<(LstmDir, LstmDir)>,
    pub in_width: usize,
    pub hidden: usize,
}

fn lstm_dir<S: Scalar, R: Rng>(
    params: &mut ParamSet<S>,
    prefix: &str,
    in_width: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<LstmDir> {
    let mut matrix = |name: &str, rows: usize, cols: usize, rng: &mut R| {
        params.add(
            format!("{prefix}.{name}"),
            Tensor::random_normal(vec![rows, cols], INIT_STD, rng),
        )
    };
    let wix = matrix("wix", in_width, hidden, rng)?;
    let wih = matrix("wih", hidden, hidden, rng)?;
    let wfx = matrix("wfx", in_width, hidden, rng)?;
    let wfh = matrix("wfh", hidden, hidden, rng)?;
    let wgx = matrix("wgx", in_width, hidden, rng)?;
    let wgh = matrix("wgh", hidden, hidden, rng)?;
    let wox = matrix("wox", in_width, hidden, rng)?;
    let woh = matrix("woh", hidden, hidden, rng)?;
    let wzh = matrix("wzh", hidden, hidden, rng)?;
    let bi = params.add(format!("{prefix}.bi"), Tensor::zeros(vec![hidden]))?;
    let bf = params.add(format!("{prefix}.bf"), Tensor::zeros(vec![hidden]))?;
    let bg = params.add(format!("{prefix}.bg"), Tensor::zeros(vec![hidden]))?;
    let bo = params.add(format!("{prefix}.bo"), Tensor::zeros(vec![hidden]))?;
    let bz = params.add(format!("{prefix}.bz"), Tensor::zeros(vec![hidden]))?;
    Ok(LstmDir {
        wix,
        wih,
        bi,
        wfx,
        wfh,
        bf,
        wgx,
        wgh,
        bg,
        wox,
        woh,
        bo,
        wzh,
        bz,
    })
}

impl Bilstm {
    pub fn init<S: Scalar, R: Rng>(
        params: &mut ParamSet<S>,
        in_width: usize,
        hidden: usize,
        num_layers: usize,
        rng: &mut R,
    ) -> Result<Bilstm> {
        if num_layers == 0 || hidden == 0 || in_width == 0 {
            return Err(Error::Config(
                "bilstm needs positive layer count, hidden size, and input width".into(),
            ));
        }
        let mut layers = Vec::with_capacity(num_layers);
        for i in 0..num_layers {
            let width = if i == 0 { in_width } else { 2 * hidden };
            let fwd = lstm_dir(params, &format!("lstm.layer{i}.fwd"), width, hidden, rng)?;
            let bwd = lstm_dir(params, &format!("lstm.layer{i}.bwd"), width, hidden, rng)?;
            layers.push((fwd, bwd));
        }
        Ok(Bilstm {
            layers,
            in_width,
            hidden,
        })
    }

    fn gate<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParamSet<S>,
        x_t: Var,
        h_prev: Var,
        wx: ParamId,
        wh: ParamId,
        b: ParamId,
    ) -> Result<Var> {
        let wx = tape.param(params, wx);
        let wh = tape.param(params, wh);
        let b = tape.param(params, b);
        let from_x = tape.matmul(x_t, wx)?;
        let from_h = tape.matmul(h_prev, wh)?;
        let summed = tape.add(from_x, from_h)?;
        tape.add_row(summed, b)
    }

    /// One gated step: Eqs 3 to 7.
    pub fn cell<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParamSet<S>,
        dir: &LstmDir,
        x_t: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var)> {
        let i_pre = self.gate(tape, params, x_t, h_prev, dir.wix, dir.wih, dir.bi)?;
        let i = tape.sigmoid(i_pre);
        let f_pre = self.gate(tape, params, x_t, h_prev, dir.wfx, dir.wfh, dir.bf)?;
        let f = tape.sigmoid(f_pre);
        let g_pre = self.gate(tape, params, x_t, h_prev, dir.wgx, dir.wgh, dir.bg)?;
        let g = tape.tanh(g_pre);
        let o_pre = self.gate(tape, params, x_t, h_prev, dir.wox, dir.woh, dir.bo)?;
        let o = tape.sigmoid(o_pre);

        let kept = tape.mul(f, c_prev)?;
        let written = tape.mul(i, g)?;
        let c = tape.add(kept, written)?;
        let c_act = tape.tanh(c);
        let h = tape.mul(o, c_act)?;
        Ok((h, c))
    }

    fn project<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParamSet<S>,
        h: Var,
        dir: &LstmDir,
    ) -> Result<Var> {
        let wzh = tape.param(params, dir.wzh);
        let bz = tape.param(params, dir.bz);
        let hw = tape.matmul(h, wzh)?;
        tape.add_row(hw, bz)
    }

    /// Runs the stack over the first `real_len` rows of `x` (the
    /// contiguous unmasked prefix) and returns `z_last`, width
    /// `2 * hidden`.
    pub fn run<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParamSet<S>,
        x: Var,
        mask: &[u8],
    ) -> Result<Var> {
        let rows = tape.shape(x)[0];
        if mask.len() != rows {
            return Err(Error::Data(format!(
                "mask length {} does not match {rows} sequence rows",
                mask.len()
            )));
        }
        let real_len = mask.iter().take_while(|&&m| m == 1).count();
        if real_len == 0 {
            return Err(Error::Data(
                "no unmasked positions for the recurrence".into(),
            ));
        }

        let mut input = x;
        for (li, (fwd, bwd)) in self.layers.iter().enumerate() {
            let zero = tape.constant(Tensor::zeros(vec![1, self.hidden]));

            let (mut h, mut c) = (zero, zero);
            let mut states_fwd = Vec::with_capacity(real_len);
            for t in 0..real_len {
                let x_t = tape.row(input, t)?;
                let (nh, nc) = self.cell(tape, params, fwd, x_t, h, c)?;
                h = nh;
                c = nc;
                states_fwd.push(h);
            }

            let (mut h, mut c) = (zero, zero);
            let mut states_bwd = vec![zero; real_len];
            for t in (0..real_len).rev() {
                let x_t = tape.row(input, t)?;
                let (nh, nc) = self.cell(tape, params, bwd, x_t, h, c)?;
                h = nh;
                c = nc;
                states_bwd[t] = h;
            }

            if li + 1 == self.layers.len() {
                let z_f = self.project(tape, params, states_fwd[real_len - 1], fwd)?;
                let z_b = self.project(tape, params, states_bwd[0], bwd)?;
                return tape.concat_cols(&[z_f, z_b]);
            }

            let mut joined = Vec::with_capacity(real_len);
            for t in 0..real_len {
                joined.push(tape.concat_cols(&[states_fwd[t], states_bwd[t]])?);
            }
            input = tape.concat_rows(&joined)?;
        }
        unreachable!("stack has at least one layer");
    }
}

/// The two fully connected layers and softmax of Eqs 9 and 10.
#[derive(Clone, Debug)]
pub struct Head {
    fc1_weight: ParamId,
    fc1_bias: ParamId,
    fc2_weight: ParamId,
    fc2_bias: ParamId,
    pub dropout: f64,
}

/// Class probabilities and the decided label. Index 0 is correct,
/// index 1 is overfitting, project-wide.
#[derive(Clone, Copy, Debug)]
pub struct Prediction {
    pub p_correct: f64,
    pub p_overfitting: f64,
    pub label: Label,
}

impl Head {
    pub fn init<S: Scalar, R: Rng>(
        params: &mut ParamSet<S>,
        in_width: usize,
        hidden_width: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Head> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout {dropout} outside [0, 1)")));
        }
        let fc1_weight = params.add(
            "head.fc1.weight",
            Tensor::random_normal(vec![in_width, hidden_width], INIT_STD, rng),
        )?;
        let fc1_bias = params.add("head.fc1.bias", Tensor::zeros(vec![hidden_width]))?;
        let fc2_weight = params.add(
            "head.fc2.weight",
            Tensor::random_normal(vec![hidden_width, 2], INIT_STD, rng),
        )?;
        let fc2_bias = params.add("head.fc2.bias", Tensor::zeros(vec![2]))?;
        Ok(Head {
            fc1_weight,
            fc1_bias,
            fc2_weight,
            fc2_bias,
            dropout,
        })
    }

    /// Probabilities over the two classes for one `z_last` row.
    /// Dropout applies to the input and to the first layer's output
    /// in train mode.
    pub fn probabilities<S: Scalar, R: Rng>(
        &self,
        tape: &mut Tape<S>,
        params: &ParamSet<S>,
        z_last: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let z = tape.dropout(z_last, self.dropout, mode, rng)?;
        let w1 = tape.param(params, self.fc1_weight);
        let b1 = tape.param(params, self.fc1_bias);
        let a = tape.matmul(z, w1)?;
        let a = tape.add_row(a, b1)?;
        let a = tape.relu(a);
        let a = tape.dropout(a, self.dropout, mode, rng)?;
        let w2 = tape.param(params, self.fc2_weight);
        let b2 = tape.param(params, self.fc2_bias);
        let y = tape.matmul(a, w2)?;
        let y = tape.add_row(y, b2)?;
        tape.softmax_rows(y)
    }

    /// Full decision: probabilities plus the label rule, where a tie
    /// goes to overfitting.
    pub fn classify<S: Scalar, R: Rng>(
        &self,
        tape: &mut Tape<S>,
        params: &ParamSet<S>,
        z_last: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, Prediction)> {
        let probs = self.probabilities(tape, params, z_last, mode, rng)?;
        Ok((probs, prediction_from(tape.value(probs))))
    }
}

/// Applies the decision rule to a `[1 x 2]` probability row.
pub fn prediction_from<S: Scalar>(probs: &Tensor<S>) -> Prediction {
    let p_correct = probs.data()[0].as_f64();
    let p_overfitting = probs.data()[1].as_f64();
    let label = if p_correct > p_overfitting {
        Label::Correct
    } else {
        Label::Overfitting
    };
    Prediction {
        p_correct,
        p_overfitting,
        label,
    }
}
