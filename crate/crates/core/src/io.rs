//! File formats: eco data CSV, design CSV, raw-sample CSV, mixture JSON and
//! the comment headers written ahead of every table.
//!
//! Every parser validates its input fully and returns `Error::Parse` rather
//! than panicking on malformed text.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cutcore::Mixture;
use crate::doe::{DesignMatrix, Provenance};
use crate::error::{Error, Result};
use crate::families::{FamilyParams, FamilyTag};
use crate::points::PointSet;
use crate::problems::{EcoData, ECO_K};

fn parse_err(e: impl std::fmt::Display) -> Error {
    Error::Parse(e.to_string())
}

/// Splits leading `#` comment lines from the table body.
pub fn split_comments(text: &str) -> (Vec<&str>, &str) {
    let mut comments = Vec::new();
    let mut rest = text;
    while rest.starts_with('#') {
        let end = rest.find('\n').map_or(rest.len(), |i| i + 1);
        comments.push(rest[1..end].trim());
        rest = &rest[end..];
    }
    (comments, rest)
}

/// Comment header: tool version, resolved config and master seed.
pub fn header(tool: &str, version: &str, config_json: &str, seed: u64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {tool} {version}");
    let _ = writeln!(s, "# config: {config_json}");
    let _ = writeln!(s, "# seed: {seed}");
    s
}

fn numeric_table(body: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let head: Vec<String> = rdr.headers().map_err(parse_err)?.iter().map(|h| h.trim().to_string()).collect();
    if head.is_empty() || head.iter().any(String::is_empty) {
        return Err(Error::Parse("empty column name".into()));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(parse_err)?;
        if rec.len() != head.len() {
            return Err(Error::Parse(format!("row has {} fields, expected {}", rec.len(), head.len())));
        }
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|_| Error::Parse(format!("not a number: {f:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse("non-finite value".into()));
        }
        rows.push(row);
    }
    Ok((head, rows))
}

fn write_table(out: &mut String, names: &[String], points: &PointSet) {
    let _ = writeln!(out, "{}", names.join(","));
    for r in points.rows() {
        let line: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", line.join(","));
    }
}

/// Parses the ecological data table (`Y,Z,N,T,C1..C5`).
pub fn parse_eco_csv(text: &str) -> Result<EcoData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let head: Vec<String> = rdr.headers().map_err(parse_err)?.iter().map(|h| h.trim().to_string()).collect();
    let expected = ["Y", "Z", "N", "T", "C1", "C2", "C3", "C4", "C5"];
    if head != expected {
        return Err(Error::Parse(format!("eco header must be {}", expected.join(","))));
    }
    let mut data = EcoData {
        y: vec![],
        z: vec![],
        n: vec![],
        t: vec![],
        c: vec![],
    };
    for rec in rdr.records() {
        let rec = rec.map_err(parse_err)?;
        if rec.len() != expected.len() {
            return Err(Error::Parse("eco row has the wrong number of fields".into()));
        }
        let int = |i: usize| rec[i].trim().parse::<u64>().map_err(|_| Error::Parse(format!("bad count {:?}", &rec[i])));
        let (y, z, n, t) = (int(0)?, int(1)?, int(2)?, int(3)?);
        if z > n {
            return Err(Error::Parse("Z exceeds N".into()));
        }
        let mut c = [0.0; ECO_K];
        for (k, slot) in c.iter_mut().enumerate() {
            let v: f64 = rec[4 + k].trim().parse().map_err(|_| Error::Parse(format!("bad covariate {:?}", &rec[4 + k])))?;
            if !v.is_finite() {
                return Err(Error::Parse("non-finite covariate".into()));
            }
            *slot = v;
        }
        data.y.push(y);
        data.z.push(z);
        data.n.push(n);
        data.t.push(t);
        data.c.push(c);
    }
    if data.is_empty() {
        return Err(Error::Parse("eco table has no rows".into()));
    }
    Ok(data)
}

#[derive(Serialize, Deserialize)]
struct DesignHeader {
    provenance: Provenance,
    target: String,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

/// Design CSV: one `# design: {json}` line, then columns `g1..gq`.
pub fn write_design_csv(design: &DesignMatrix) -> String {
    let h = DesignHeader {
        provenance: design.provenance.clone(),
        target: design.target.clone(),
        metadata: design.metadata.clone(),
    };
    let mut out = format!("# design: {}\n", serde_json::to_string(&h).expect("design header serializes"));
    let names: Vec<String> = (1..=design.points.dim()).map(|i| format!("g{i}")).collect();
    write_table(&mut out, &names, &design.points);
    out
}

pub fn parse_design_csv(text: &str) -> Result<DesignMatrix> {
    let (comments, body) = split_comments(text);
    let json = comments
        .iter()
        .find_map(|c| c.strip_prefix("design:"))
        .ok_or_else(|| Error::Parse("missing design header".into()))?;
    let h: DesignHeader = serde_json::from_str(json.trim()).map_err(parse_err)?;
    let (_, rows) = numeric_table(body)?;
    let points = PointSet::from_rows(&rows).map_err(parse_err)?;
    Ok(DesignMatrix {
        points,
        provenance: h.provenance,
        target: h.target,
        metadata: h.metadata,
    })
}

/// Raw draws: header `a1..ap`, one draw per row.
pub fn write_samples_csv(samples: &PointSet) -> String {
    let mut out = String::new();
    let names: Vec<String> = (1..=samples.dim()).map(|i| format!("a{i}")).collect();
    write_table(&mut out, &names, samples);
    out
}

pub fn parse_samples_csv(text: &str) -> Result<PointSet> {
    let (_, body) = split_comments(text);
    let (head, rows) = numeric_table(body)?;
    if rows.is_empty() {
        return Ok(PointSet::new(head.len()));
    }
    PointSet::from_rows(&rows).map_err(parse_err)
}

#[derive(Serialize, Deserialize)]
struct MixtureWire {
    family: FamilyTag,
    param_names: Vec<String>,
    components: Vec<Vec<f64>>,
}

/// Mixture JSON: the family tag, parameter names and one parameter vector per
/// component.
pub fn write_mixture_json(mixture: &Mixture) -> String {
    let wire = MixtureWire {
        family: mixture.family,
        param_names: mixture.family.param_names(),
        components: mixture.components.iter().map(|c| c.values().to_vec()).collect(),
    };
    serde_json::to_string_pretty(&wire).expect("mixture serializes")
}

pub fn parse_mixture_json(text: &str) -> Result<Mixture> {
    let wire: MixtureWire = serde_json::from_str(text).map_err(parse_err)?;
    if let FamilyTag::MultivariateNormal(p) = wire.family {
        if p == 0 || p > 64 {
            return Err(Error::Parse(format!("unsupported MVN dimension {p}")));
        }
    }
    if wire.param_names != wire.family.param_names() {
        return Err(Error::Parse("parameter names do not match the family".into()));
    }
    let comps = wire
        .components
        .into_iter()
        .map(|v| FamilyParams::new(wire.family, v).map_err(parse_err))
        .collect::<Result<Vec<_>>>()?;
    Mixture::new(comps).map_err(parse_err)
}

/// CSV with a header row from `names` and rows of display strings.
pub fn write_rows(names: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(names).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 fields")
}

/// Formats a float so that it parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn design_round_trip() {
        let d = DesignMatrix {
            points: PointSet::from_rows(&[vec![0.1, 0.2], vec![0.3, 1e-300]]).unwrap(),
            provenance: Provenance::Support,
            target: "prior".into(),
            metadata: BTreeMap::from([("L".into(), "2".into())]),
        };
        let back = parse_design_csv(&write_design_csv(&d)).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn mixture_round_trip() {
        let m = Mixture::new(vec![FamilyParams::normal(0.0, 1.0).unwrap(), FamilyParams::normal(1.5, 0.25).unwrap()]).unwrap();
        assert_eq!(parse_mixture_json(&write_mixture_json(&m)).unwrap(), m);
    }

    #[test]
    fn mixture_rejects_invalid_component() {
        let text = r#"{"family":"Normal","param_names":["mu","sigma"],"components":[[0.0,-1.0]]}"#;
        assert!(parse_mixture_json(text).is_err());
    }

    proptest! {
        #[test]
        fn parsers_never_panic(s in "\\PC{0,200}") {
            let _ = parse_eco_csv(&s);
            let _ = parse_design_csv(&s);
            let _ = parse_samples_csv(&s);
            let _ = parse_mixture_json(&s);
        }

        #[test]
        fn samples_round_trip(rows in proptest::collection::vec(proptest::collection::vec(-1e6f64..1e6, 3), 1..20)) {
            let p = PointSet::from_rows(&rows).unwrap();
            prop_assert_eq!(parse_samples_csv(&write_samples_csv(&p)).unwrap(), p);
        }
    }
}
