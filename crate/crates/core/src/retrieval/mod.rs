//! Exact cosine kNN over an in-memory index and mAP evaluation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::datastore::{DatasetManifest, FeatureBank};
use crate::error::{Error, Result};
use crate::numkit::{dot, Matrix};

pub const DEFAULT_K: usize = 100;
pub const DEFAULT_PRECISION_K: usize = 5;

/// Unit-norm vectors with the class and vertical of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    vectors: Matrix,
    ids: Vec<String>,
    classes: Vec<String>,
    verticals: Vec<String>,
    positions: HashMap<String, usize>,
}

impl Index {
    /// Normalizes the rows of `vectors`.
    pub fn new(vectors: &Matrix, ids: Vec<String>, classes: Vec<String>, verticals: Vec<String>) -> Result<Self> {
        let n = vectors.rows();
        if ids.len() != n || classes.len() != n || verticals.len() != n {
            return Err(Error::shape(
                "Index",
                format!("{n} vectors, {} ids, {} classes, {} verticals", ids.len(), classes.len(), verticals.len()),
            ));
        }
        if n == 0 {
            return Err(Error::invalid("an index needs at least one vector"));
        }
        let mut positions = HashMap::with_capacity(n);
        for (i, id) in ids.iter().enumerate() {
            if positions.insert(id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate index id {id:?}")));
            }
        }
        Ok(Index { vectors: vectors.l2_normalize_rows()?, ids, classes, verticals, positions })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn verticals(&self) -> &[String] {
        &self.verticals
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    /// Class and vertical of `id`.
    pub fn labels(&self, id: &str) -> Option<(&str, &str)> {
        self.position(id).map(|i| (self.classes[i].as_str(), self.verticals[i].as_str()))
    }

    /// Number of rows of each class.
    pub fn class_counts(&self) -> HashMap<&str, usize> {
        let mut counts = HashMap::new();
        for c in &self.classes {
            *counts.entry(c.as_str()).or_insert(0) += 1;
        }
        counts
    }
}

/// Index over every bank record, labelled from the manifest. Manifest rows
/// absent from the bank are ignored; bank rows absent from the manifest are
/// an error.
pub fn build_index(bank: &FeatureBank, manifest: &DatasetManifest) -> Result<Index> {
    if bank.is_empty() {
        return Err(Error::Data("feature bank and manifest share no ids".into()));
    }
    let mut classes = Vec::with_capacity(bank.len());
    let mut verticals = Vec::with_capacity(bank.len());
    for id in bank.ids() {
        let e = manifest.get(id).ok_or_else(|| Error::Data(format!("bank id {id:?} has no manifest entry")))?;
        classes.push(e.class_label.clone());
        verticals.push(e.vertical.clone());
    }
    Index::new(&bank.to_matrix(), bank.ids().to_vec(), classes, verticals)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    /// Row of the index.
    pub pos: usize,
    pub score: f64,
}

/// Top-k neighbors of one query, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub query_id: String,
    pub neighbors: Vec<Neighbor>,
}

/// Higher score first, then lower row.
fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Exact top-`k` by cosine similarity. Ties go to the lower index row. With
/// `exclude_self`, an index row whose id equals the query id is skipped.
/// `k` larger than the candidate count is clipped.
pub fn knn(
    index: &Index,
    queries: &Matrix,
    query_ids: &[String],
    k: usize,
    exclude_self: bool,
) -> Result<Vec<Ranking>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if queries.cols() != index.dim() {
        return Err(Error::shape("knn", format!("queries have {} dims, index {}", queries.cols(), index.dim())));
    }
    if query_ids.len() != queries.rows() {
        return Err(Error::shape("knn", format!("{} queries but {} ids", queries.rows(), query_ids.len())));
    }
    let q = queries.l2_normalize_rows()?;
    let clipped = std::sync::atomic::AtomicBool::new(false);
    let rankings = (0..q.rows())
        .into_par_iter()
        .map(|r| {
            let skip = if exclude_self { index.position(&query_ids[r]) } else { None };
            let mut scored: Vec<(f64, usize)> = (0..index.len())
                .filter(|&i| Some(i) != skip)
                .map(|i| (dot(q.row(r), index.vectors.row(i)), i))
                .collect();
            let take = k.min(scored.len());
            if take < k {
                clipped.store(true, std::sync::atomic::Ordering::Relaxed);
            }
            if take < scored.len() {
                scored.select_nth_unstable_by(take, rank_order);
                scored.truncate(take);
            }
            scored.sort_by(rank_order);
            Ranking {
                query_id: query_ids[r].clone(),
                neighbors: scored.into_iter().map(|(score, pos)| Neighbor { pos, score }).collect(),
            }
        })
        .collect();
    if clipped.into_inner() {
        log::warn!("k = {k} exceeds the candidates available for some queries; clipped");
    }
    Ok(rankings)
}

/// `(1/total_relevant) · Σ_{hit at rank i} hits(≤ i) / i` over a ranking
/// given as hit flags.
pub fn average_precision_hits(hits: &[bool], total_relevant: usize) -> Result<f64> {
    if total_relevant == 0 {
        return Err(Error::invalid("average precision needs at least one relevant item"));
    }
    let mut found = 0usize;
    let mut sum = 0.0;
    for (i, &h) in hits.iter().enumerate() {
        if h {
            found += 1;
            sum += found as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / total_relevant as f64)
}

pub fn average_precision(
    ranking: &Ranking,
    index: &Index,
    relevant: &HashSet<&str>,
    total_relevant: usize,
) -> Result<f64> {
    let hits: Vec<bool> = ranking.neighbors.iter().map(|n| relevant.contains(index.ids[n.pos].as_str())).collect();
    average_precision_hits(&hits, total_relevant)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalConfig {
    /// Ranking depth; AP is truncated here.
    pub k: usize,
    pub precision_k: usize,
    /// Skip the index row carrying the query's own id.
    pub exclude_self: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { k: DEFAULT_K, precision_k: DEFAULT_PRECISION_K, exclude_self: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub id: String,
    pub class: String,
    pub vertical: String,
    pub ap: f64,
    pub precision: f64,
    pub total_relevant: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerticalResult {
    pub map: f64,
    pub n_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub k: usize,
    pub precision_k: usize,
    pub map: f64,
    pub precision_at_k: f64,
    pub per_vertical: BTreeMap<String, VerticalResult>,
    pub queries: Vec<QueryResult>,
    /// Queries with no relevant item in the index.
    pub skipped: Vec<String>,
}

/// Ranks every query of `queries` against `index`; relevance is an equal
/// class label. Queries without any relevant index row are skipped and
/// listed in the report.
pub fn evaluate(index: &Index, queries: &Index, cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.precision_k == 0 {
        return Err(Error::invalid("precision depth must be at least 1"));
    }
    let counts = index.class_counts();
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for (r, id) in queries.ids.iter().enumerate() {
        let class = queries.classes[r].as_str();
        let mut total = counts.get(class).copied().unwrap_or(0);
        if cfg.exclude_self && index.position(id).is_some_and(|p| index.classes[p] == class) {
            total -= 1;
        }
        if total == 0 {
            skipped.push(id.clone());
        } else {
            kept.push((r, total));
        }
    }
    if kept.is_empty() {
        return Err(Error::Data("no query has a relevant item in the index".into()));
    }
    if !skipped.is_empty() {
        log::warn!("{} queries have no relevant index item and were skipped", skipped.len());
    }
    let rows: Vec<usize> = kept.iter().map(|&(r, _)| r).collect();
    let ids: Vec<String> = rows.iter().map(|&r| queries.ids[r].clone()).collect();
    let rankings = knn(index, &queries.vectors.select_rows(&rows), &ids, cfg.k, cfg.exclude_self)?;

    let mut results = Vec::with_capacity(kept.len());
    for ((r, total), ranking) in kept.into_iter().zip(&rankings) {
        let class = &queries.classes[r];
        let hits: Vec<bool> = ranking.neighbors.iter().map(|n| &index.classes[n.pos] == class).collect();
        let top = hits.iter().take(cfg.precision_k).filter(|&&h| h).count();
        results.push(QueryResult {
            id: queries.ids[r].clone(),
            class: class.clone(),
            vertical: queries.verticals[r].clone(),
            ap: average_precision_hits(&hits, total)?,
            precision: top as f64 / cfg.precision_k as f64,
            total_relevant: total,
        });
    }

    let mut per_vertical: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for q in &results {
        let e = per_vertical.entry(q.vertical.clone()).or_insert((0.0, 0));
        e.0 += q.ap;
        e.1 += 1;
    }
    let n = results.len() as f64;
    Ok(EvalReport {
        k: cfg.k,
        precision_k: cfg.precision_k,
        map: results.iter().map(|q| q.ap).sum::<f64>() / n,
        precision_at_k: results.iter().map(|q| q.precision).sum::<f64>() / n,
        per_vertical: per_vertical
            .into_iter()
            .map(|(v, (sum, count))| (v, VerticalResult { map: sum / count as f64, n_queries: count }))
            .collect(),
        queries: results,
        skipped,
    })
}

impl EvalReport {
    /// `key,value` lines followed by one `vertical,<name>,<mAP>,<n_queries>`
    /// line per vertical. Numbers are printed at full precision.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("queries,{}\n", self.queries.len()));
        s.push_str(&format!("skipped,{}\n", self.skipped.len()));
        s.push_str(&format!("k,{}\n", self.k));
        s.push_str(&format!("map,{}\n", self.map));
        s.push_str(&format!("precision_at_{},{}\n", self.precision_k, self.precision_at_k));
        for (v, r) in &self.per_vertical {
            s.push_str(&format!("vertical,{v},{},{}\n", r.map, r.n_queries));
        }
        s
    }

    /// Header plus one `id,class,vertical,ap,precision_at_k,total_relevant`
    /// line per evaluated query.
    pub fn per_query_text(&self) -> String {
        let mut s = format!("id,class,vertical,ap,precision_at_{},total_relevant\n", self.precision_k);
        for q in &self.queries {
            s.push_str(&format!("{},{},{},{},{},{}\n", q.id, q.class, q.vertical, q.ap, q.precision, q.total_relevant));
        }
        s
    }
}
