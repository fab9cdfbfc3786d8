//! Model files (TOML) and kernel files (sparse triplets plus a state map).
//!
//! A model file looks like
//!
//! ```toml
//! p = 1
//! q = 2
//!
//! [mating]
//! kind = "perfect_fidelity"
//!
//! [offspring.sex_split]
//! counts = ["1/2", "1/4", "1/4"]
//! female = "1/2"
//! ```
//!
//! General laws list one `[[offspring.types]]` block per couple type with
//! `outcomes = [{ children = [1, 0], prob = "3/10" }, …]`. Custom matings
//! give `kind = "custom_table"`, a `bound`, the complete list of
//! `entries = [{ w = [..], z = [..] }, …]` and optionally
//! `certificate = { alpha = [..], beta = [..] }`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::kernel::{BuildMode, StateIndex, TruncatedKernel};
use crate::model::{Certificate, MatingFunction, MatingTable, ModelSpec, OffspringLaw, Prob, StateVector};

/// A probability written either as text (`"1/8"`, `"0.125"`) or a number.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum ProbText {
    Text(String),
    Number(f64),
}

impl ProbText {
    pub fn to_prob(&self) -> Result<Prob> {
        match self {
            ProbText::Text(s) => Prob::parse(s),
            ProbText::Number(x) => Prob::from_f64(*x),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub p: usize,
    pub q: usize,
    pub mating: MatingSection,
    pub offspring: OffspringSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatingSection {
    pub kind: String,
    pub bound: Option<u64>,
    pub entries: Option<Vec<TableEntry>>,
    pub certificate: Option<CertificateSection>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub w: Vec<u64>,
    pub z: Vec<u64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSection {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffspringSection {
    pub sex_split: Option<SexSplit>,
    pub types: Option<Vec<TypeSection>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SexSplit {
    /// Law of the number of children, indexed from 0.
    pub counts: Vec<ProbText>,
    /// Probability that a child has the first type.
    pub female: ProbText,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeSection {
    pub outcomes: Vec<Outcome>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outcome {
    pub children: Vec<u64>,
    pub prob: ProbText,
}

impl ModelFile {
    pub fn into_spec(self) -> Result<ModelSpec> {
        let offspring = match (self.offspring.sex_split, self.offspring.types) {
            (Some(split), None) => {
                if self.p != 1 || self.q != 2 {
                    return Err(Error::Validation("sex_split offspring needs p = 1 and q = 2".into()));
                }
                let counts = split.counts.iter().map(ProbText::to_prob).collect::<Result<Vec<_>>>()?;
                OffspringLaw::sex_split(&counts, &split.female.to_prob()?)?
            }
            (None, Some(types)) => {
                let per_type = types
                    .into_iter()
                    .map(|t| {
                        t.outcomes
                            .into_iter()
                            .map(|o| Ok((o.children, o.prob.to_prob()?)))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                OffspringLaw::new(self.q, per_type)?
            }
            _ => {
                return Err(Error::Validation(
                    "offspring needs exactly one of `sex_split` or `types`".into(),
                ))
            }
        };
        if offspring.p() != self.p || offspring.q() != self.q {
            return Err(Error::Validation(format!(
                "offspring law has p = {}, q = {} but the file declares p = {}, q = {}",
                offspring.p(),
                offspring.q(),
                self.p,
                self.q
            )));
        }
        let certificate = self.mating.certificate.map(|c| Certificate {
            alpha: c.alpha,
            beta: c.beta,
        });
        let mating = match self.mating.kind.as_str() {
            "identity" => MatingFunction::identity(self.p),
            "perfect_fidelity" => MatingFunction::perfect_fidelity(),
            "promiscuous" => MatingFunction::promiscuous(),
            "custom_table" => {
                let bound = self
                    .mating
                    .bound
                    .ok_or_else(|| Error::Validation("custom_table needs `bound`".into()))?;
                let entries = self
                    .mating
                    .entries
                    .ok_or_else(|| Error::Validation("custom_table needs `entries`".into()))?
                    .into_iter()
                    .map(|e| (e.w, e.z))
                    .collect();
                let table = MatingTable::new(self.p, self.q, bound, entries)?;
                return ModelSpec::new(
                    MatingFunction::custom_table(self.p, self.q, table, certificate)?,
                    offspring,
                );
            }
            other => return Err(Error::Validation(format!("unknown mating kind `{other}`"))),
        };
        let mating = match certificate {
            Some(c) => mating.with_certificate(c)?,
            None => mating,
        };
        ModelSpec::new(mating, offspring)
    }
}

pub fn parse_model(text: &str) -> Result<ModelSpec> {
    let file: ModelFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    file.into_spec()
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_model(&text).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn sig17(x: f64) -> String {
    format!("{x:.16e}")
}

fn state_text(z: &StateVector) -> String {
    z.counts().iter().map(u64::to_string).collect::<Vec<_>>().join(",")
}

/// The sparse triplet text: a header followed by `i j probability` lines.
pub fn kernel_triplets(k: &TruncatedKernel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# radius {}", k.radius());
    let _ = writeln!(out, "# p {}", k.index().p());
    let _ = match k.mode() {
        BuildMode::Exact => writeln!(out, "# mode exact"),
        BuildMode::MonteCarlo { samples, seed } => writeln!(out, "# mode mc {samples} {seed}"),
        BuildMode::Synthetic => writeln!(out, "# mode synthetic"),
    };
    for i in 0..k.len() {
        for &(j, v) in k.row(i) {
            let _ = writeln!(out, "{i} {j} {}", sig17(v));
        }
    }
    out
}

/// The state map: `index absorbed escaped state`, tab separated.
pub fn kernel_state_map(k: &TruncatedKernel) -> String {
    let mut out = String::from("index\tabsorbed\tescaped\tstate\n");
    for (i, z) in k.index().states().iter().enumerate() {
        let _ = writeln!(
            out,
            "{i}\t{}\t{}\t{}",
            sig17(k.absorbed()[i]),
            sig17(k.escaped()[i]),
            state_text(z)
        );
    }
    out
}

pub fn write_kernel(k: &TruncatedKernel, triplets: impl AsRef<Path>, state_map: impl AsRef<Path>) -> Result<()> {
    fs::write(triplets, kernel_triplets(k))?;
    fs::write(state_map, kernel_state_map(k))?;
    Ok(())
}

fn parse_err(what: &str, line: usize, text: &str) -> Error {
    Error::Parse(format!("{what} line {}: `{text}`", line + 1))
}

pub fn parse_kernel(triplets: &str, state_map: &str) -> Result<TruncatedKernel> {
    let mut radius = None;
    let mut p = None;
    let mut mode = BuildMode::Exact;
    let mut entries = Vec::new();
    for (ln, line) in triplets.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            let parts: Vec<&str> = header.split_whitespace().collect();
            match parts.as_slice() {
                ["radius", r] => radius = Some(r.parse::<u64>().map_err(|_| parse_err("triplet", ln, line))?),
                ["p", v] => p = Some(v.parse::<usize>().map_err(|_| parse_err("triplet", ln, line))?),
                ["mode", "exact"] => mode = BuildMode::Exact,
                ["mode", "synthetic"] => mode = BuildMode::Synthetic,
                ["mode", "mc", s, seed] => {
                    mode = BuildMode::MonteCarlo {
                        samples: s.parse().map_err(|_| parse_err("triplet", ln, line))?,
                        seed: seed.parse().map_err(|_| parse_err("triplet", ln, line))?,
                    }
                }
                _ => {}
            }
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [i, j, v] = parts.as_slice() else {
            return Err(parse_err("triplet", ln, line));
        };
        let i: usize = i.parse().map_err(|_| parse_err("triplet", ln, line))?;
        let j: usize = j.parse().map_err(|_| parse_err("triplet", ln, line))?;
        let v: f64 = v.parse().map_err(|_| parse_err("triplet", ln, line))?;
        entries.push((i, j, v));
    }
    let radius = radius.ok_or_else(|| Error::Parse("triplet file lacks `# radius`".into()))?;
    let p = p.ok_or_else(|| Error::Parse("triplet file lacks `# p`".into()))?;

    let mut states = Vec::new();
    let mut absorbed = Vec::new();
    let mut escaped = Vec::new();
    for (ln, line) in state_map.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [idx, a, e, z] = cols.as_slice() else {
            return Err(parse_err("state map", ln, line));
        };
        if idx.parse::<usize>().ok() != Some(states.len()) {
            return Err(parse_err("state map", ln, line));
        }
        absorbed.push(a.parse::<f64>().map_err(|_| parse_err("state map", ln, line))?);
        escaped.push(e.parse::<f64>().map_err(|_| parse_err("state map", ln, line))?);
        let counts = z
            .split(',')
            .map(|c| c.trim().parse::<u64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| parse_err("state map", ln, line))?;
        states.push(StateVector::new(counts));
    }
    let index = StateIndex::from_states(p, states.clone())?;
    if index.states() != states.as_slice() {
        return Err(Error::Parse("state map is not in colexicographic order".into()));
    }
    let mut rows = vec![Vec::new(); states.len()];
    for (i, j, v) in entries {
        if i >= rows.len() {
            return Err(Error::Parse(format!("triplet row {i} beyond the state map")));
        }
        rows[i].push((j, v));
    }
    TruncatedKernel::from_parts(radius, index, rows, absorbed, escaped, mode)
}

pub fn read_kernel(triplets: impl AsRef<Path>, state_map: impl AsRef<Path>) -> Result<TruncatedKernel> {
    parse_kernel(&fs::read_to_string(triplets)?, &fs::read_to_string(state_map)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::build_kernel_exact;
    use crate::presets;

    const MODEL_A: &str = r#"
p = 1
q = 2

[mating]
kind = "perfect_fidelity"

[offspring.sex_split]
counts = ["1/2", "1/4", "1/4"]
female = "1/2"
"#;

    #[test]
    fn parses_model_a() {
        let spec = parse_model(MODEL_A).unwrap();
        assert_eq!(spec.digest(), presets::model_a().digest());
    }

    #[test]
    fn general_laws_and_numbers() {
        let text = r#"
p = 2
q = 2
[mating]
kind = "identity"
[[offspring.types]]
outcomes = [{ children = [0, 0], prob = 0.4 }, { children = [1, 0], prob = "0.3" }, { children = [0, 1], prob = "1/5" }, { children = [2, 0], prob = 0.1 }]
[[offspring.types]]
outcomes = [{ children = [0, 0], prob = 0.6 }, { children = [1, 0], prob = 0.1 }, { children = [0, 1], prob = 0.2 }, { children = [0, 2], prob = 0.1 }]
"#;
        let spec = parse_model(text).unwrap();
        assert_eq!(spec.digest(), presets::classical_two_type().digest());
    }

    #[test]
    fn custom_table_and_errors() {
        let mut entries = String::new();
        for x in 0..=2 {
            for y in 0..=2 {
                entries.push_str(&format!("{{ w = [{x}, {y}], z = [{}] }}, ", x.min(y)));
            }
        }
        let text = format!(
            "p = 1\nq = 2\n[mating]\nkind = \"custom_table\"\nbound = 2\nentries = [{entries}]\n\
             [offspring.sex_split]\ncounts = [\"1/2\", \"1/2\"]\nfemale = \"1/2\"\n"
        );
        let spec = parse_model(&text).unwrap();
        assert_eq!(spec.mating().apply(&[2, 1]).unwrap().counts(), &[1]);
        assert!(matches!(parse_model("p = 1"), Err(Error::Parse(_))));
        let bad = MODEL_A.replace("perfect_fidelity", "monogamy");
        assert!(matches!(parse_model(&bad), Err(Error::Validation(_))));
        let bad = MODEL_A.replace("\"1/4\", \"1/4\"", "\"1/4\", \"1/3\"");
        assert!(parse_model(&bad).is_err());
    }

    #[test]
    fn kernel_round_trip() {
        let k = build_kernel_exact(&presets::model_b(), 6, 100_000).unwrap();
        let back = parse_kernel(&kernel_triplets(&k), &kernel_state_map(&k)).unwrap();
        assert_eq!(back.len(), k.len());
        for i in 0..k.len() {
            assert_eq!(back.row(i), k.row(i));
            assert_eq!(back.absorbed()[i], k.absorbed()[i]);
            assert_eq!(back.escaped()[i], k.escaped()[i]);
        }
        assert_eq!(kernel_triplets(&back), kernel_triplets(&k));
    }

    #[test]
    fn sig17_round_trips() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 0.125, std::f64::consts::PI] {
            assert_eq!(sig17(x).parse::<f64>().unwrap(), x);
        }
    }
}
