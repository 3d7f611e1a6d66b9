//! Component reports and recovery metrics.
//!
//! Column `r` of U, L and T together form one rank-1 component: a topic
//! (term weights) tied to a spatial and a temporal pattern. Reports read
//! each column as a distribution after ℓ1 normalization, with the removed
//! scale carried in λ.

use serde::{Deserialize, Serialize};

use crate::assignment::max_weight_assignment;
use crate::error::{Error, Result};
use crate::ingest::{IndexMaps, Vocabulary};
use crate::io;
use crate::nmf::NmfModel;
use crate::tensor::{CpModel, FactorMatrix, Mode};

/// Minimum cosine for a recovered location or time profile to count as
/// reproducing a planted one.
pub const COUPLING_MIN_COSINE: f64 = 0.9;

const UNIT_L1_SLACK: f64 = 1e-12;

/// Rescales every factor column to unit ℓ1 norm, multiplying the removed
/// scales into λ. A component with any zero column gets λ = 0 and all of its
/// columns zeroed, which leaves its (zero) contribution unchanged.
pub fn normalize_components(model: &CpModel) -> CpModel {
    let mut out = model.clone();
    for r in 0..model.rank() {
        // Sums of already-unit columns land a few ulps off 1; leaving them
        // alone keeps normalization exactly idempotent.
        let norms = Mode::ALL.map(|m| {
            let n = model.factor(m).column_l1(r);
            if (n - 1.0).abs() <= UNIT_L1_SLACK {
                1.0
            } else {
                n
            }
        });
        if norms.contains(&0.0) {
            for mode in Mode::ALL {
                out.factor_mut(mode).scale_column(r, 0.0);
            }
            out.weights_mut()[r] = 0.0;
            continue;
        }
        for (mode, n) in Mode::ALL.into_iter().zip(norms) {
            if n != 1.0 {
                out.factor_mut(mode).scale_column(r, 1.0 / n);
            }
        }
        out.weights_mut()[r] = model.weights()[r] * norms[0] * norms[1] * norms[2];
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermWeight {
    pub term: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialWeight {
    pub location: String,
    pub lat: f64,
    pub lon: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalWeight {
    pub date: String,
    pub weight: f64,
}

/// One rank-1 component: its topic, spatial and temporal patterns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub component_id: usize,
    pub weight: f64,
    /// Set when the component has no mass in some mode.
    pub degenerate: bool,
    pub topic: Vec<TermWeight>,
    pub spatial: Vec<SpatialWeight>,
    pub temporal: Vec<TemporalWeight>,
}

impl ComponentReport {
    pub fn spatial_argmax(&self) -> Option<&SpatialWeight> {
        self.spatial
            .iter()
            .fold(None, |best: Option<&SpatialWeight>, s| match best {
                Some(b) if b.weight >= s.weight => Some(b),
                _ => Some(s),
            })
    }

    pub fn temporal_argmax(&self) -> Option<usize> {
        (0..self.temporal.len()).fold(None, |best, k| match best {
            Some(b) if self.temporal[b].weight >= self.temporal[k].weight => Some(b),
            _ => Some(k),
        })
    }
}

/// The `k` heaviest terms of column `r` of U, heaviest first, ties broken by
/// ascending term string.
pub fn top_terms(model: &CpModel, r: usize, k: usize, vocab: &Vocabulary) -> Result<Vec<TermWeight>> {
    if r >= model.rank() {
        return Err(Error::Index(format!("component {r} of rank {}", model.rank())));
    }
    if k == 0 {
        return Err(Error::Input("k must be at least 1".into()));
    }
    let u = model.u();
    if vocab.len() != u.rows() {
        return Err(Error::Shape(format!("{} terms for {} factor rows", vocab.len(), u.rows())));
    }
    let mut ranked: Vec<(usize, f64)> = (0..u.rows()).map(|i| (i, u.get(i, r))).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| vocab.term(a.0).cmp(vocab.term(b.0))));
    Ok(ranked
        .into_iter()
        .take(k)
        .map(|(i, w)| TermWeight {
            term: vocab.term(i).to_string(),
            weight: w,
        })
        .collect())
}

/// Report for component `r` of an already-normalized model.
pub fn component_report(model: &CpModel, r: usize, maps: &IndexMaps, k: usize) -> Result<ComponentReport> {
    if maps.dims() != model.dims() {
        return Err(Error::Shape(format!(
            "index maps cover {:?}, model is {:?}",
            maps.dims(),
            model.dims()
        )));
    }
    let topic = top_terms(model, r, k, &maps.vocab)?;
    let spatial = (0..model.l().rows())
        .map(|n| {
            let p = maps.locations.place(n);
            SpatialWeight {
                location: p.canonical.clone(),
                lat: p.lat,
                lon: p.lon,
                weight: model.l().get(n, r),
            }
        })
        .collect();
    let temporal = (0..model.t().rows())
        .map(|o| TemporalWeight {
            date: maps.time_axis.bin_start(o),
            weight: model.t().get(o, r),
        })
        .collect();
    let degenerate = Mode::ALL.iter().any(|m| model.factor(*m).column_l1(r) == 0.0);
    Ok(ComponentReport {
        component_id: r,
        weight: model.weights()[r],
        degenerate,
        topic,
        spatial,
        temporal,
    })
}

/// Normalizes `model` and reports every component, in component order.
pub fn extract_reports(model: &CpModel, maps: &IndexMaps, k: usize) -> Result<Vec<ComponentReport>> {
    let normalized = normalize_components(model);
    (0..model.rank())
        .map(|r| component_report(&normalized, r, maps, k))
        .collect()
}

/// Flat `component_id,rank,term,weight` table.
pub fn topics_csv(reports: &[ComponentReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["component_id", "rank", "term", "weight"])?;
    for rep in reports {
        for (i, t) in rep.topic.iter().enumerate() {
            w.write_record([
                rep.component_id.to_string(),
                (i + 1).to_string(),
                t.term.clone(),
                io::fmt_f64(t.weight),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn column_cosine(a: &FactorMatrix, ra: usize, b: &FactorMatrix, rb: usize) -> f64 {
    cosine(&a.column(ra), &b.column(rb))
}

fn congruence_matrix(a: &CpModel, b: &CpModel) -> Vec<Vec<f64>> {
    (0..a.rank())
        .map(|i| {
            (0..b.rank())
                .map(|j| {
                    Mode::ALL
                        .iter()
                        .map(|&m| column_cosine(a.factor(m), i, b.factor(m), j))
                        .product()
                })
                .collect()
        })
        .collect()
}

/// Component matching that maximizes total congruence; `result[i]` is the
/// component of `b` matched to component `i` of `a`.
pub fn match_components(a: &CpModel, b: &CpModel) -> Result<Vec<usize>> {
    if a.dims() != b.dims() || a.rank() != b.rank() {
        return Err(Error::Shape(format!(
            "models {:?} rank {} and {:?} rank {}",
            a.dims(),
            a.rank(),
            b.dims(),
            b.rank()
        )));
    }
    Ok(max_weight_assignment(&congruence_matrix(a, b)))
}

/// Factor match score: mean over optimally matched components of the
/// product of the three column cosines. 1 means identical up to
/// permutation and column scaling.
pub fn factor_match_score(a: &CpModel, b: &CpModel) -> Result<f64> {
    let assign = match_components(a, b)?;
    let score = congruence_matrix(a, b);
    let total: f64 = assign.iter().enumerate().map(|(i, &j)| score[i][j]).sum();
    Ok(total / a.rank() as f64)
}

/// Congruence of a two-factor model against the (term, `mode`) columns of
/// a CP model, maximized over matchings.
pub fn nmf_match_score(nmf: &NmfModel, planted: &CpModel, mode: Mode) -> Result<f64> {
    if nmf.rank() != planted.rank() {
        return Err(Error::Shape(format!("NMF rank {} vs planted rank {}", nmf.rank(), planted.rank())));
    }
    if nmf.w.rows() != planted.u().rows() || nmf.h.rows() != planted.factor(mode).rows() {
        return Err(Error::Shape("NMF factor rows do not match the planted model".into()));
    }
    let score: Vec<Vec<f64>> = (0..planted.rank())
        .map(|p| {
            (0..nmf.rank())
                .map(|j| {
                    column_cosine(planted.u(), p, &nmf.w, j) * column_cosine(planted.factor(mode), p, &nmf.h, j)
                })
                .collect()
        })
        .collect();
    let assign = max_weight_assignment(&score);
    Ok(assign.iter().enumerate().map(|(i, &j)| score[i][j]).sum::<f64>() / planted.rank() as f64)
}

/// Pairs components of the (term × time) and (term × location) NMF models
/// greedily by cosine of their term columns. Returns `(time, location,
/// cosine)` triples in the order chosen; ties go to the lowest indices.
pub fn greedy_term_pairing(nmf_time: &NmfModel, nmf_loc: &NmfModel) -> Result<Vec<(usize, usize, f64)>> {
    if nmf_time.rank() != nmf_loc.rank() {
        return Err(Error::Shape(format!(
            "NMF arms have ranks {} and {}",
            nmf_time.rank(),
            nmf_loc.rank()
        )));
    }
    if nmf_time.w.rows() != nmf_loc.w.rows() {
        return Err(Error::Shape("NMF arms cover different term counts".into()));
    }
    let rank = nmf_time.rank();
    let mut candidates: Vec<(usize, usize, f64)> = (0..rank)
        .flat_map(|i| (0..rank).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, column_cosine(&nmf_time.w, i, &nmf_loc.w, j)))
        .collect();
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let (mut used_t, mut used_l) = (vec![false; rank], vec![false; rank]);
    let mut pairs = Vec::with_capacity(rank);
    for (i, j, c) in candidates {
        if !used_t[i] && !used_l[j] {
            used_t[i] = true;
            used_l[j] = true;
            pairs.push((i, j, c));
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingVerdict {
    pub planted_component: usize,
    pub ntf_component: usize,
    pub ntf_location_cosine: f64,
    pub ntf_time_cosine: f64,
    /// "match" or "mismatch".
    pub ntf_verdict: String,
    pub nmf_time_component: usize,
    pub nmf_location_component: usize,
    pub nmf_location_cosine: f64,
    pub nmf_time_cosine: f64,
    pub nmf_verdict: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationReport {
    pub ntf_fms: f64,
    pub nmf_pairs: Vec<(usize, usize, f64)>,
    pub components: Vec<CouplingVerdict>,
}

impl AssociationReport {
    pub fn ntf_mismatches(&self) -> usize {
        self.components.iter().filter(|c| c.ntf_verdict != "match").count()
    }

    pub fn nmf_mismatches(&self) -> usize {
        self.components.iter().filter(|c| c.nmf_verdict != "match").count()
    }
}

fn verdict(loc: f64, time: f64) -> String {
    if loc >= COUPLING_MIN_COSINE && time >= COUPLING_MIN_COSINE {
        "match".into()
    } else {
        "mismatch".into()
    }
}

/// Checks, per planted component, whether each method reproduces its
/// (location, time) coupling.
///
/// The NTF component is the one matched by [`match_components`]. For NMF,
/// components of the two arms are paired by term similarity only, and each
/// planted component is credited with the pair that best reproduces it.
pub fn association_loss_report(
    ntf: &CpModel,
    nmf_time: &NmfModel,
    nmf_loc: &NmfModel,
    planted: &CpModel,
) -> Result<AssociationReport> {
    if ntf.rank() != planted.rank() || nmf_time.rank() != planted.rank() {
        return Err(Error::Shape(format!(
            "ranks differ: NTF {}, NMF {}/{}, planted {}",
            ntf.rank(),
            nmf_time.rank(),
            nmf_loc.rank(),
            planted.rank()
        )));
    }
    let [m, n, o] = planted.dims();
    if nmf_time.w.rows() != m || nmf_time.h.rows() != o || nmf_loc.h.rows() != n {
        return Err(Error::Shape("NMF arms do not match the planted dims".into()));
    }
    let ntf_fms = factor_match_score(planted, ntf)?;
    let assign = match_components(planted, ntf)?;
    let pairs = greedy_term_pairing(nmf_time, nmf_loc)?;

    let components = (0..planted.rank())
        .map(|p| {
            let q = assign[p];
            let ntf_loc = column_cosine(planted.l(), p, ntf.l(), q);
            let ntf_time = column_cosine(planted.t(), p, ntf.t(), q);
            let (ti, li, nmf_loc_cos, nmf_time_cos) = pairs
                .iter()
                .map(|&(ti, li, _)| {
                    (
                        ti,
                        li,
                        column_cosine(planted.l(), p, &nmf_loc.h, li),
                        column_cosine(planted.t(), p, &nmf_time.h, ti),
                    )
                })
                .fold(None, |best: Option<(usize, usize, f64, f64)>, cand| match best {
                    Some(b) if b.2 * b.3 >= cand.2 * cand.3 => Some(b),
                    _ => Some(cand),
                })
                .expect("rank is at least 1");
            CouplingVerdict {
                planted_component: p,
                ntf_component: q,
                ntf_location_cosine: ntf_loc,
                ntf_time_cosine: ntf_time,
                ntf_verdict: verdict(ntf_loc, ntf_time),
                nmf_time_component: ti,
                nmf_location_component: li,
                nmf_location_cosine: nmf_loc_cos,
                nmf_time_cosine: nmf_time_cos,
                nmf_verdict: verdict(nmf_loc_cos, nmf_time_cos),
            }
        })
        .collect();
    Ok(AssociationReport {
        ntf_fms,
        nmf_pairs: pairs,
        components,
    })
}
