use ndiff_core::DenseArray;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Joint action after clipping to the action box.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    /// The episode ended on its time limit rather than a true terminal.
    pub time_limit: bool,
}

impl Transition {
    /// Whether bootstrapping stops after this transition.
    pub fn terminal(&self) -> bool {
        self.done && !self.time_limit
    }
}

/// Fixed-capacity FIFO store with uniform sampling with replacement.
/// Rows live in flat column arrays so storing a transition allocates
/// nothing once the arrays have grown to capacity.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    len: usize,
    /// `(state, action)` widths, fixed by the first insertion.
    dims: Option<(usize, usize)>,
    states: Vec<f64>,
    actions: Vec<f64>,
    next_states: Vec<f64>,
    rewards: Vec<f64>,
    done: Vec<bool>,
    time_limit: Vec<bool>,
    /// Slot the next insertion overwrites once full.
    cursor: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            len: 0,
            dims: None,
            states: Vec::new(),
            actions: Vec::new(),
            next_states: Vec::new(),
            rewards: Vec::new(),
            done: Vec::new(),
            time_limit: Vec::new(),
            cursor: 0,
            inserted: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Total insertions, including evicted ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        let (ds, da) = *self.dims.get_or_insert((t.state.len(), t.action.len()));
        if t.state.len() != ds || t.next_state.len() != ds || t.action.len() != da {
            return Err(Error::Config(format!(
                "transition widths {}/{}/{} do not match the buffer's {ds}/{da}",
                t.state.len(),
                t.action.len(),
                t.next_state.len()
            )));
        }
        if self.len < self.capacity {
            self.states.extend_from_slice(&t.state);
            self.actions.extend_from_slice(&t.action);
            self.next_states.extend_from_slice(&t.next_state);
            self.rewards.push(t.reward);
            self.done.push(t.done);
            self.time_limit.push(t.time_limit);
            self.len += 1;
        } else {
            let i = self.cursor;
            self.states[i * ds..(i + 1) * ds].copy_from_slice(&t.state);
            self.actions[i * da..(i + 1) * da].copy_from_slice(&t.action);
            self.next_states[i * ds..(i + 1) * ds].copy_from_slice(&t.next_state);
            self.rewards[i] = t.reward;
            self.done[i] = t.done;
            self.time_limit[i] = t.time_limit;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
        self.inserted += 1;
        Ok(())
    }

    /// Stored transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = Transition> + '_ {
        (self.cursor..self.len).chain(0..self.cursor).map(|i| self.slot(i))
    }

    /// The transition in storage slot `i`.
    pub fn get(&self, i: usize) -> Option<Transition> {
        (i < self.len).then(|| self.slot(i))
    }

    fn slot(&self, i: usize) -> Transition {
        let (ds, da) = self.dims.unwrap_or((0, 0));
        Transition {
            state: self.states[i * ds..(i + 1) * ds].to_vec(),
            action: self.actions[i * da..(i + 1) * da].to_vec(),
            reward: self.rewards[i],
            next_state: self.next_states[i * ds..(i + 1) * ds].to_vec(),
            done: self.done[i],
            time_limit: self.time_limit[i],
        }
    }

    pub fn sample_indices(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if self.len == 0 {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..n).map(|_| rng.random_range(0..self.len)).collect())
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Batch> {
        let idx = self.sample_indices(n, rng)?;
        let (ds, da) = self.dims.unwrap_or((0, 0));
        let gather = |src: &[f64], w: usize| {
            let mut out = Vec::with_capacity(idx.len() * w);
            for &i in &idx {
                out.extend_from_slice(&src[i * w..(i + 1) * w]);
            }
            DenseArray::matrix(idx.len(), w, out)
        };
        Ok(Batch {
            states: gather(&self.states, ds),
            actions: gather(&self.actions, da),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_states: gather(&self.next_states, ds),
            terminals: idx.iter().map(|&i| self.done[i] && !self.time_limit[i]).collect(),
            indices: idx,
        })
    }
}

/// Column-stacked minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub states: DenseArray,
    pub actions: DenseArray,
    pub rewards: Vec<f64>,
    pub next_states: DenseArray,
    pub terminals: Vec<bool>,
    /// Buffer slots the rows came from, when sampled from a buffer.
    pub indices: Vec<usize>,
}

fn stack<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Result<DenseArray> {
    Ok(DenseArray::from_rows(&rows.collect::<Vec<_>>())?)
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition]) -> Result<Self> {
        if ts.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok(Self {
            states: stack(ts.iter().map(|t| t.state.as_slice()))?,
            actions: stack(ts.iter().map(|t| t.action.as_slice()))?,
            rewards: ts.iter().map(|t| t.reward).collect(),
            next_states: stack(ts.iter().map(|t| t.next_state.as_slice()))?,
            terminals: ts.iter().map(|t| t.terminal()).collect(),
            indices: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}
