//! Fusion of buggy and patched hidden-state sequences into one
//! changed-code sequence, position-wise, by one of five operators.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::Scalar;

/// How the two sides are combined at every token position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    Con,
    Add,
    Sub,
    Pro,
    Mix,
}

impl FusionMode {
    pub const ALL: [FusionMode; 5] = [
        FusionMode::Con,
        FusionMode::Add,
        FusionMode::Sub,
        FusionMode::Pro,
        FusionMode::Mix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Con => "con",
            FusionMode::Add => "add",
            FusionMode::Sub => "sub",
            FusionMode::Pro => "pro",
            FusionMode::Mix => "mix",
        }
    }

    /// Output width for input width `n`.
    pub fn output_width(self, n: usize) -> usize {
        match self {
            FusionMode::Con => 2 * n,
            FusionMode::Add | FusionMode::Sub | FusionMode::Pro => n,
            FusionMode::Mix => 5 * n,
        }
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "con" => Ok(FusionMode::Con),
            "add" => Ok(FusionMode::Add),
            "sub" => Ok(FusionMode::Sub),
            "pro" => Ok(FusionMode::Pro),
            "mix" => Ok(FusionMode::Mix),
            other => Err(Error::Config(format!("unknown fusion mode: {other}"))),
        }
    }
}

/// Combines `[T x n]` buggy states with `[T x n]` patched states.
/// con concatenates, add sums, sub takes buggy minus patched, pro is
/// the Hadamard product, and mix concatenates all four results.
pub fn fuse<S: Scalar>(
    tape: &mut Tape<S>,
    buggy: Var,
    patched: Var,
    mode: FusionMode,
) -> Result<Var> {
    if tape.shape(buggy) != tape.shape(patched) {
        return Err(Error::Dimension {
            op: "fuse",
            lhs: tape.shape(buggy).to_vec(),
            rhs: tape.shape(patched).to_vec(),
        });
    }
    match mode {
        FusionMode::Con => tape.concat_cols(&[buggy, patched]),
        FusionMode::Add => tape.add(buggy, patched),
        FusionMode::Sub => tape.sub(buggy, patched),
        FusionMode::Pro => tape.mul(buggy, patched),
        FusionMode::Mix => {
            let added = tape.add(buggy, patched)?;
            let subbed = tape.sub(buggy, patched)?;
            let prod = tape.mul(buggy, patched)?;
            tape.concat_cols(&[buggy, patched, added, subbed, prod])
        }
    }
}
