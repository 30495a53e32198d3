//! Relevancy between object embedding bags and a text query.
//!
//! A single view embedding `o` scores against query `q` as
//!
//! ```text
//! rho(o, q) = min_k  exp(o.q) / (exp(o.q) + exp(o.c_k))
//!           = min_k  sigmoid(o.q - o.c_k)
//! ```
//!
//! where `c_k` are the canonical-phrase embeddings. An object's score is the
//! mean of its `k` best view scores (all of them when the bag is smaller).

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedder::{Embedder, Embedding};
use crate::embedding::{EmbeddingBag, EmbeddingBank};
use crate::error::{Error, Result};
use crate::scene::ObjectId;

/// Number of top view scores averaged per object.
pub const DEFAULT_TOP_K: usize = 5;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Relevancy from precomputed dot products: `query_dot = o.q`,
/// `canon_dots[k] = o.c_k`.
pub fn relevancy_from_dots(query_dot: f64, canon_dots: &[f64]) -> f64 {
    canon_dots
        .iter()
        .map(|&c| sigmoid(query_dot - c))
        .fold(f64::INFINITY, f64::min)
}

pub fn pairwise_relevancy(object: &Embedding, query: &Embedding, canonical: &[Embedding]) -> Result<f64> {
    if canonical.is_empty() {
        return Err(Error::InvalidArgument("canonical list is empty".into()));
    }
    let dim = object.dim();
    if query.dim() != dim || canonical.iter().any(|c| c.dim() != dim) {
        return Err(Error::Dimension(format!(
            "object dim {dim}, query dim {}, canonical dims {:?}",
            query.dim(),
            canonical.iter().map(Embedding::dim).collect::<Vec<_>>()
        )));
    }
    let canon_dots: Vec<f64> = canonical.iter().map(|c| object.dot(c)).collect();
    Ok(relevancy_from_dots(object.dot(query), &canon_dots))
}

/// Mean of the `min(k, len)` largest scores. `scores` is reordered.
pub fn top_k_mean(scores: &mut [f64], k: usize) -> f64 {
    let take = k.min(scores.len());
    scores.sort_unstable_by(|a, b| b.total_cmp(a));
    scores[..take].iter().sum::<f64>() / take as f64
}

pub fn object_relevancy(bag: &EmbeddingBag, query: &Embedding, canonical: &[Embedding], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if bag.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "object {} has an empty bag",
            bag.object_id
        )));
    }
    let mut scores = bag
        .embeddings()
        .map(|e| pairwise_relevancy(e, query, canonical))
        .collect::<Result<Vec<f64>>>()?;
    Ok(top_k_mean(&mut scores, k))
}

/// How a ranking turns into the set of object IDs passed downstream.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SelectionRule {
    #[default]
    Top1,
    TopN(usize),
    /// Every object scoring at least this value.
    Threshold(f64),
}

impl SelectionRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SelectionRule::TopN(0) => Err(Error::InvalidArgument("top_n needs n >= 1".into())),
            SelectionRule::Threshold(t) if !(t > 0.0 && t < 1.0) => {
                Err(Error::InvalidArgument(format!("threshold {t} outside (0, 1)")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for SelectionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionRule::Top1 => write!(f, "top1"),
            SelectionRule::TopN(n) => write!(f, "top_n:{n}"),
            SelectionRule::Threshold(t) => write!(f, "threshold:{t}"),
        }
    }
}

impl FromStr for SelectionRule {
    type Err = Error;

    /// Accepts `top1`, `top_n:N` / `top_n(N)` and `threshold:T` / `threshold(T)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidArgument(format!("unknown selection rule {s:?}"));
        if s == "top1" {
            return Ok(SelectionRule::Top1);
        }
        let (name, arg) = if let Some((name, rest)) = s.split_once('(') {
            (name, rest.strip_suffix(')').ok_or_else(bad)?)
        } else {
            s.split_once(':').ok_or_else(bad)?
        };
        let rule = match name.trim() {
            "top_n" => SelectionRule::TopN(arg.trim().parse().map_err(|_| bad())?),
            "threshold" => SelectionRule::Threshold(arg.trim().parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        rule.validate()?;
        Ok(rule)
    }
}

impl Serialize for SelectionRule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SelectionRule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedObject {
    pub object_id: ObjectId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: String,
    pub k: usize,
    pub rule: SelectionRule,
    /// Descending by score, ties by ascending object ID.
    pub ranked: Vec<RankedObject>,
    pub selected: Vec<ObjectId>,
}

impl QueryResult {
    pub fn selected_set(&self) -> std::collections::BTreeSet<ObjectId> {
        self.selected.iter().copied().collect()
    }
}

pub fn select_objects(ranked: &[RankedObject], rule: SelectionRule) -> Result<Vec<ObjectId>> {
    rule.validate()?;
    if ranked.is_empty() {
        return Err(Error::InvalidArgument("cannot select from an empty ranking".into()));
    }
    Ok(match rule {
        SelectionRule::Top1 => vec![ranked[0].object_id],
        SelectionRule::TopN(n) => ranked.iter().take(n).map(|r| r.object_id).collect(),
        SelectionRule::Threshold(t) => ranked.iter().filter(|r| r.score >= t).map(|r| r.object_id).collect(),
    })
}

/// Scores every bag against `query_text` and applies `rule`.
pub fn rank_objects(
    bank: &EmbeddingBank,
    query_text: &str,
    embedder: &dyn Embedder,
    k: usize,
    rule: SelectionRule,
) -> Result<QueryResult> {
    let query = embedder.embed_text(query_text).map_err(|e| Error::Embed {
        context: format!("query {query_text:?}"),
        message: e.to_string(),
    })?;
    rank_with_embedding(bank, query_text, &query, k, rule)
}

pub fn rank_with_embedding(
    bank: &EmbeddingBank,
    query_text: &str,
    query: &Embedding,
    k: usize,
    rule: SelectionRule,
) -> Result<QueryResult> {
    rule.validate()?;
    if bank.is_empty() {
        return Err(Error::InvalidArgument("embedding bank has no objects".into()));
    }
    if query.dim() != bank.dim() {
        return Err(Error::Dimension(format!(
            "query embedding dim {} does not match bank dim {}",
            query.dim(),
            bank.dim()
        )));
    }
    let canonical = bank.canonical_embeddings();
    let bags: Vec<&EmbeddingBag> = bank.bags().values().collect();
    let mut ranked = bags
        .par_iter()
        .map(|bag| {
            Ok(RankedObject {
                object_id: bag.object_id,
                score: object_relevancy(bag, query, &canonical, k)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_ranking(&mut ranked);
    let selected = select_objects(&ranked, rule)?;
    Ok(QueryResult {
        query: query_text.to_string(),
        k,
        rule,
        ranked,
        selected,
    })
}

pub fn sort_ranking(ranked: &mut [RankedObject]) {
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.object_id.cmp(&b.object_id)));
}
