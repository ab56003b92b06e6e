//! File formats: design JSON, outcome CSV, Q CSV and substitute-set JSON.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assignment::Assignment;
use crate::balance::MaxAsmd;
use crate::decomposition::QMatrix;
use crate::design::{Design, DesignOptions, Structure};
use crate::error::{Error, Result};
use crate::outcomes::{Covariates, ObservedData, PotentialOutcomes};

/// Design description. Unit indices in `pairs` are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DesignFile {
    Tagged(TaggedDesign),
    Explicit {
        #[serde(default)]
        n: Option<usize>,
        support: Vec<Assignment>,
        probs: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaggedDesign {
    Crd {
        n: usize,
        n_treated: usize,
    },
    MatchedPair {
        pairs: Vec<(usize, usize)>,
    },
    Explicit {
        support: Vec<Assignment>,
        probs: Vec<f64>,
    },
    Rerandomized {
        base: Box<DesignFile>,
        /// One row per unit.
        covariates: Vec<Vec<f64>>,
        #[serde(default = "default_criterion")]
        criterion: String,
        threshold: f64,
    },
}

fn default_criterion() -> String {
    "max_asmd".into()
}

impl DesignFile {
    pub fn build(&self, opts: &DesignOptions) -> Result<Design> {
        match self {
            DesignFile::Explicit { n, support, probs } => {
                if let (Some(n), Some(w)) = (n, support.first()) {
                    if w.n() != *n {
                        return Err(Error::invalid(format!("declared n = {n} but vectors have length {}", w.n())));
                    }
                }
                Design::explicit_with(support.clone(), probs.clone(), opts)
            }
            DesignFile::Tagged(TaggedDesign::Explicit { support, probs }) => {
                Design::explicit_with(support.clone(), probs.clone(), opts)
            }
            DesignFile::Tagged(TaggedDesign::Crd { n, n_treated }) => Design::crd_with(*n, *n_treated, opts),
            DesignFile::Tagged(TaggedDesign::MatchedPair { pairs }) => {
                let zero = pairs
                    .iter()
                    .map(|&(a, b)| {
                        if a == 0 || b == 0 {
                            Err(Error::invalid("pair indices are 1-based"))
                        } else {
                            Ok((a - 1, b - 1))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Design::matched_pair_with(&zero, opts)
            }
            DesignFile::Tagged(TaggedDesign::Rerandomized { base, covariates, criterion, threshold }) => {
                if criterion != "max_asmd" {
                    return Err(Error::invalid(format!("unknown balance criterion '{criterion}'")));
                }
                let base = base.build(opts)?;
                let cov = Covariates::from_rows(covariates)?;
                Design::rerandomized_with(&base, cov, Arc::new(MaxAsmd), *threshold, opts)
            }
        }
    }

    /// Description of an existing design; explicit supports are written out in full.
    pub fn describe(d: &Design) -> Result<Self> {
        Ok(match d.structure() {
            Structure::Crd { n_treated } => DesignFile::Tagged(TaggedDesign::Crd { n: d.n(), n_treated: *n_treated }),
            Structure::MatchedPair { pairs } => DesignFile::Tagged(TaggedDesign::MatchedPair {
                pairs: pairs.iter().map(|&(a, b)| (a + 1, b + 1)).collect(),
            }),
            Structure::Generic => {
                let (s, p) = d.support()?;
                DesignFile::Explicit { n: Some(d.n()), support: s.to_vec(), probs: p.to_vec() }
            }
        })
    }
}

pub fn read_design(path: &Path, opts: &DesignOptions) -> Result<Design> {
    let text = fs::read_to_string(path)?;
    let f: DesignFile = serde_json::from_str(&text)
        .map_err(|e| Error::invalid(format!("{}: not a recognized design description ({e})", path.display())))?;
    f.build(opts)
}

/// Either a full science table or observed data.
#[derive(Clone, Debug, PartialEq)]
pub enum OutcomeTable {
    Science(PotentialOutcomes),
    Observed(ObservedData),
}

impl OutcomeTable {
    pub fn n(&self) -> usize {
        match self {
            OutcomeTable::Science(p) => p.n(),
            OutcomeTable::Observed(o) => o.n(),
        }
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name))
}

fn parse_f64(s: &str, what: &str, row: usize) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("row {row}: bad {what} value '{s}'")))?;
    if !v.is_finite() {
        return Err(Error::invalid(format!("row {row}: {what} is not finite")));
    }
    Ok(v)
}

/// Reads `unit_id,y0,y1` or `unit_id,w,y_obs[,pair]`. Unit ids run from 1 to N in any order.
pub fn parse_outcomes<R: std::io::Read>(reader: R) -> Result<OutcomeTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let id = column(&headers, "unit_id").ok_or_else(|| Error::invalid("missing unit_id column"))?;
    let science = match (column(&headers, "y0"), column(&headers, "y1")) {
        (Some(a), Some(b)) => Some((a, b)),
        _ => None,
    };
    let observed = match (column(&headers, "w"), column(&headers, "y_obs")) {
        (Some(a), Some(b)) => Some((a, b)),
        _ => None,
    };
    let pair_col = column(&headers, "pair");
    let mut rows: Vec<(usize, f64, f64, Option<String>)> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 2;
        let uid: usize = rec[id]
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("row {row}: bad unit_id '{}'", &rec[id])))?;
        let (a, b) = match (science, observed) {
            (Some((c0, c1)), _) => (parse_f64(&rec[c0], "y0", row)?, parse_f64(&rec[c1], "y1", row)?),
            (None, Some((cw, cy))) => {
                let w = match rec[cw].trim() {
                    "0" => 0.0,
                    "1" => 1.0,
                    other => return Err(Error::invalid(format!("row {row}: w must be 0 or 1, got '{other}'"))),
                };
                (w, parse_f64(&rec[cy], "y_obs", row)?)
            }
            _ => return Err(Error::invalid("need columns y0,y1 or w,y_obs")),
        };
        rows.push((uid, a, b, pair_col.map(|c| rec[c].trim().to_string())));
    }
    rows.sort_by_key(|r| r.0);
    for (k, r) in rows.iter().enumerate() {
        if r.0 != k + 1 {
            return Err(Error::invalid(format!("unit ids must be 1..{} without gaps or repeats", rows.len())));
        }
    }
    if science.is_some() {
        return Ok(OutcomeTable::Science(PotentialOutcomes::new(
            rows.iter().map(|r| r.1).collect(),
            rows.iter().map(|r| r.2).collect(),
        )?));
    }
    let w = Assignment::from_bools(&rows.iter().map(|r| r.1 == 1.0).collect::<Vec<_>>())?;
    let mut obs = ObservedData::new(w, rows.iter().map(|r| r.2).collect())?;
    if pair_col.is_some() {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in rows.iter().enumerate() {
            groups.entry(r.3.as_deref().unwrap_or("")).or_default().push(i);
        }
        let pairs = groups
            .into_iter()
            .map(|(label, units)| match units[..] {
                [a, b] => Ok((a, b)),
                _ => Err(Error::invalid(format!("pair '{label}' has {} units", units.len()))),
            })
            .collect::<Result<Vec<_>>>()?;
        obs = obs.with_pairs(pairs);
    }
    Ok(obs.into())
}

impl From<ObservedData> for OutcomeTable {
    fn from(o: ObservedData) -> Self {
        OutcomeTable::Observed(o)
    }
}

pub fn read_outcomes(path: &Path) -> Result<OutcomeTable> {
    parse_outcomes(fs::File::open(path)?)
}

pub fn write_science_csv(po: &PotentialOutcomes, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["unit_id", "y0", "y1"])?;
    for i in 0..po.n() {
        w.write_record([(i + 1).to_string(), po.y0[i].to_string(), po.y1[i].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_observed_csv(obs: &ObservedData, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut pair_of = vec![None; obs.n()];
    if let Some(p) = &obs.pairs {
        for (k, &(a, b)) in p.iter().enumerate() {
            pair_of[a] = Some(k + 1);
            pair_of[b] = Some(k + 1);
        }
        w.write_record(["unit_id", "w", "y_obs", "pair"])?;
    } else {
        w.write_record(["unit_id", "w", "y_obs"])?;
    }
    for i in 0..obs.n() {
        let mut rec = vec![(i + 1).to_string(), (obs.w.get(i) as u8).to_string(), obs.y[i].to_string()];
        if obs.pairs.is_some() {
            rec.push(pair_of[i].map(|p| p.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Numeric rows without a header.
pub fn read_q(path: &Path) -> Result<QMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        rows.push(rec.iter().map(|s| parse_f64(s, "Q", k + 1)).collect::<Result<Vec<_>>>()?);
    }
    QMatrix::from_rows(&rows)
}

/// JSON object mapping each anchor to its substitutes.
pub fn read_substitutes(path: &Path) -> Result<HashMap<Assignment, Vec<Assignment>>> {
    let m: BTreeMap<String, Vec<Assignment>> = serde_json::from_str(&fs::read_to_string(path)?)?;
    m.into_iter().map(|(k, v)| Ok((k.parse()?, v))).collect()
}
