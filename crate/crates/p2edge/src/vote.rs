//! Max voting over ensemble member predictions.
//!
//! Members vote with their argmax class (hard, one-hot votes); the class
//! with the most votes wins and ties break toward the lowest class index.
//! The hierarchical variant votes within each node first, then across the
//! node results with the same rule — for two or more nodes this can differ
//! from a flat vote over all members, which is expected.

use crate::error::{Error, Result};
use crate::nn::Model;
use crate::tensor::Tensor;

/// Index of the largest value; ties break toward the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// One vote per ensemble member, each a class index below `n_classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteBallot {
    pub n_classes: usize,
    pub votes: Vec<usize>,
}

impl VoteBallot {
    pub fn new(n_classes: usize, votes: Vec<usize>) -> Result<Self> {
        if let Some(&v) = votes.iter().find(|&&v| v >= n_classes) {
            return Err(Error::Parameter(format!(
                "vote {v} out of range for {n_classes} classes"
            )));
        }
        Ok(Self { n_classes, votes })
    }
}

/// Class receiving the maximum support.
pub fn max_vote(ballot: &VoteBallot) -> Result<usize> {
    if ballot.votes.is_empty() {
        return Err(Error::Parameter("empty ballot".into()));
    }
    let mut counts = vec![0usize; ballot.n_classes];
    for &v in &ballot.votes {
        counts[v] += 1;
    }
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate().skip(1) {
        if n > counts[best] {
            best = c;
        }
    }
    Ok(best)
}

/// Two-stage vote: max vote within each node ballot, then max vote over the
/// node-level results.
pub fn hierarchical_vote(node_ballots: &[VoteBallot]) -> Result<usize> {
    if node_ballots.is_empty() {
        return Err(Error::Parameter("no node ballots".into()));
    }
    let n_classes = node_ballots[0].n_classes;
    let node_votes = node_ballots
        .iter()
        .map(max_vote)
        .collect::<Result<Vec<_>>>()?;
    max_vote(&VoteBallot::new(n_classes, node_votes)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VoteMode {
    /// One-hot argmax votes (the default).
    #[default]
    Hard,
    /// Sum member probability vectors and take the argmax. Kept behind this
    /// flag for experimentation.
    Soft,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleEval {
    pub accuracy: f64,
    pub predictions: Vec<u16>,
}

/// Runs every member on the batch and combines per-sample votes.
pub fn evaluate_ensemble(
    models: &[&Model],
    features: &Tensor,
    labels: &[u16],
    mode: VoteMode,
) -> Result<EnsembleEval> {
    if models.is_empty() {
        return Err(Error::Parameter("empty ensemble".into()));
    }
    let (batch, _) = features.dims2()?;
    if batch != labels.len() {
        return Err(Error::Shape(format!(
            "{batch} samples but {} labels",
            labels.len()
        )));
    }
    if batch == 0 {
        return Err(Error::Parameter("empty evaluation split".into()));
    }
    let n_classes = models[0].n_classes();
    if models.iter().any(|m| m.n_classes() != n_classes) {
        return Err(Error::Shape("ensemble members disagree on class count".into()));
    }

    let outputs = models
        .iter()
        .map(|m| m.forward(features))
        .collect::<Result<Vec<_>>>()?;

    let mut predictions = Vec::with_capacity(batch);
    let mut correct = 0usize;
    for r in 0..batch {
        let class = match mode {
            VoteMode::Hard => {
                let votes = outputs.iter().map(|o| argmax(o.row(r))).collect();
                max_vote(&VoteBallot::new(n_classes, votes)?)?
            }
            VoteMode::Soft => {
                let mut sums = vec![0.0f64; n_classes];
                for o in &outputs {
                    for (s, &p) in sums.iter_mut().zip(o.row(r)) {
                        *s += p as f64;
                    }
                }
                let mut best = 0;
                for (c, s) in sums.iter().enumerate().skip(1) {
                    if *s > sums[best] {
                        best = c;
                    }
                }
                best
            }
        };
        if class == labels[r] as usize {
            correct += 1;
        }
        predictions.push(class as u16);
    }
    Ok(EnsembleEval {
        accuracy: correct as f64 / batch as f64,
        predictions,
    })
}
