//! Model-order labels: the `(n_S, n_M, n_P)` tuple space, its 18-class
//! scalar encoding, the five- and nine-class coarsenings and the overloaded
//! class.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: u8 = 18;
pub const OVERLOADED_CLASS: u8 = 19;

/// One row of the label table.
struct Row {
    five: u8,
    nine: u8,
    tuple: (u8, u8, u8),
    /// Paths per source, largest group first.
    groups: &'static [u8],
}

const TABLE: [Row; 18] = [
    Row { five: 1, nine: 1, tuple: (1, 1, 1), groups: &[1] },
    Row { five: 2, nine: 2, tuple: (1, 2, 2), groups: &[2] },
    Row { five: 2, nine: 3, tuple: (2, 2, 1), groups: &[1, 1] },
    Row { five: 3, nine: 4, tuple: (1, 3, 3), groups: &[3] },
    Row { five: 3, nine: 5, tuple: (2, 3, 2), groups: &[2, 1] },
    Row { five: 3, nine: 5, tuple: (3, 3, 1), groups: &[1, 1, 1] },
    Row { five: 4, nine: 6, tuple: (1, 4, 4), groups: &[4] },
    Row { five: 4, nine: 7, tuple: (2, 4, 3), groups: &[3, 1] },
    Row { five: 4, nine: 7, tuple: (2, 4, 2), groups: &[2, 2] },
    Row { five: 4, nine: 7, tuple: (3, 4, 2), groups: &[2, 1, 1] },
    Row { five: 4, nine: 7, tuple: (4, 4, 1), groups: &[1, 1, 1, 1] },
    Row { five: 5, nine: 8, tuple: (1, 5, 5), groups: &[5] },
    Row { five: 5, nine: 9, tuple: (2, 5, 4), groups: &[4, 1] },
    Row { five: 5, nine: 9, tuple: (2, 5, 3), groups: &[3, 2] },
    Row { five: 5, nine: 9, tuple: (3, 5, 3), groups: &[3, 1, 1] },
    Row { five: 5, nine: 9, tuple: (3, 5, 2), groups: &[2, 2, 1] },
    Row { five: 5, nine: 9, tuple: (4, 5, 2), groups: &[2, 1, 1, 1] },
    Row { five: 5, nine: 9, tuple: (5, 5, 1), groups: &[1, 1, 1, 1, 1] },
];

/// Classification granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    Five,
    Nine,
    Eighteen,
}

impl Task {
    /// Number of regular (non-overloaded) classes.
    pub fn classes(self) -> usize {
        match self {
            Task::Five => 5,
            Task::Nine => 9,
            Task::Eighteen => 18,
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "5" | "five" => Ok(Task::Five),
            "9" | "nine" => Ok(Task::Nine),
            "18" | "eighteen" | "19" => Ok(Task::Eighteen),
            other => Err(Error::OutOfRange {
                what: "task",
                value: other.to_string(),
            }),
        }
    }
}

fn check_class(class18: u8) -> Result<()> {
    if (1..=OVERLOADED_CLASS).contains(&class18) {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what: "class",
            value: class18.to_string(),
        })
    }
}

/// Scalar class (1..=18) of a valid tuple.
pub fn encode_label(n_s: u8, n_m: u8, n_p: u8) -> Result<u8> {
    TABLE
        .iter()
        .position(|r| r.tuple == (n_s, n_m, n_p))
        .map(|i| i as u8 + 1)
        .ok_or(Error::NotInLabelSpace((n_s, n_m, n_p)))
}

/// Tuple of a regular class (1..=18). The overloaded class has no fixed tuple.
pub fn decode_label(class18: u8) -> Result<(u8, u8, u8)> {
    check_class(class18)?;
    if class18 == OVERLOADED_CLASS {
        return Err(Error::OutOfRange {
            what: "class (overloaded has no tuple)",
            value: class18.to_string(),
        });
    }
    Ok(TABLE[class18 as usize - 1].tuple)
}

/// Coarsens an 18/19-class id to the five- or nine-class task.
/// The overloaded class maps to one past the last regular class.
pub fn coarsen_label(class18: u8, task: Task) -> Result<u8> {
    check_class(class18)?;
    if class18 == OVERLOADED_CLASS {
        return Ok(task.classes() as u8 + 1);
    }
    let row = &TABLE[class18 as usize - 1];
    Ok(match task {
        Task::Five => row.five,
        Task::Nine => row.nine,
        Task::Eighteen => class18,
    })
}

/// Per-source path counts of a regular class, largest group first.
pub fn path_groups(class18: u8) -> Result<&'static [u8]> {
    decode_label(class18)?;
    Ok(TABLE[class18 as usize - 1].groups)
}

/// `(n_M, n_P)` used when weighting losses. The overloaded class is placed
/// one step beyond the largest regular order.
pub fn loss_orders(class18: u8) -> Result<(u8, u8)> {
    check_class(class18)?;
    if class18 == OVERLOADED_CLASS {
        Ok((6, 6))
    } else {
        let (_, m, p) = TABLE[class18 as usize - 1].tuple;
        Ok((m, p))
    }
}

/// Ground-truth model order of one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOrderLabel {
    pub n_s: u8,
    pub n_m: u8,
    pub n_p: u8,
    pub class18: u8,
}

impl ModelOrderLabel {
    pub fn from_class(class18: u8) -> Result<Self> {
        let (n_s, n_m, n_p) = decode_label(class18)?;
        Ok(Self { n_s, n_m, n_p, class18 })
    }

    /// Label of an overloaded scenario with the given path groups.
    pub fn overloaded(groups: &[u8]) -> Result<Self> {
        let n_m: u32 = groups.iter().map(|&g| g as u32).sum();
        if !(6..=8).contains(&n_m) || groups.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "overloaded scenes need 6..=8 paths, got {groups:?}"
            )));
        }
        Ok(Self {
            n_s: groups.len() as u8,
            n_m: n_m as u8,
            n_p: *groups.iter().max().expect("nonempty"),
            class18: OVERLOADED_CLASS,
        })
    }

    pub fn is_overloaded(&self) -> bool {
        self.class18 == OVERLOADED_CLASS
    }

    pub fn class9(&self) -> u8 {
        coarsen_label(self.class18, Task::Nine).expect("valid label")
    }

    pub fn class5(&self) -> u8 {
        coarsen_label(self.class18, Task::Five).expect("valid label")
    }
}

impl fmt::Display for ModelOrderLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "class {} (n_S={}, n_M={}, n_P={})",
            self.class18, self.n_s, self.n_m, self.n_p
        )
    }
}
