use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cost::StageKind;
use crate::engine::InstanceType;

/// A partition of the cluster into typed instance groups, e.g. `1E3P4D`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DisaggregationMethod {
    groups: Vec<(InstanceType, usize)>,
}

impl DisaggregationMethod {
    /// Builds a method from `(type, count)` groups, merging repeated types.
    pub fn new(groups: impl IntoIterator<Item = (InstanceType, usize)>) -> Result<Self, String> {
        let mut merged: Vec<(InstanceType, usize)> = Vec::new();
        for (ty, n) in groups {
            if n == 0 {
                return Err(format!("instance count for {ty} must be at least 1"));
            }
            match merged.iter_mut().find(|(t, _)| *t == ty) {
                Some((_, c)) => *c += n,
                None => merged.push((ty, n)),
            }
        }
        for stage in StageKind::ALL {
            if !merged.iter().any(|(t, _)| t.has(stage)) {
                return Err(format!("no instance can run the {stage:?} stage"));
            }
        }
        Ok(Self { groups: merged })
    }

    /// `{E: e, P: p, D: d}`.
    pub fn epd(e: usize, p: usize, d: usize) -> Result<Self, String> {
        Self::new([(InstanceType::E, e), (InstanceType::P, p), (InstanceType::D, d)])
    }

    /// `{EP: ep, D: d}`.
    pub fn ep_d(ep: usize, d: usize) -> Result<Self, String> {
        Self::new([(InstanceType::EP, ep), (InstanceType::D, d)])
    }

    /// `{ED: ed, P: p}`.
    pub fn ed_p(ed: usize, p: usize) -> Result<Self, String> {
        Self::new([(InstanceType::ED, ed), (InstanceType::P, p)])
    }

    /// `{EPD: n}`.
    pub fn colocated(n: usize) -> Result<Self, String> {
        Self::new([(InstanceType::EPD, n)])
    }

    pub fn groups(&self) -> &[(InstanceType, usize)] {
        &self.groups
    }

    pub fn count(&self, ty: InstanceType) -> usize {
        self.groups.iter().find(|(t, _)| *t == ty).map_or(0, |&(_, n)| n)
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(|&(_, n)| n).sum()
    }

    /// Instance types in index order.
    pub fn instance_types(&self) -> Vec<InstanceType> {
        self.groups
            .iter()
            .flat_map(|&(t, n)| std::iter::repeat_n(t, n))
            .collect()
    }

    /// Family name, e.g. `E+P+D`.
    pub fn family(&self) -> String {
        self.groups
            .iter()
            .map(|(t, _)| t.as_str())
            .collect::<Vec<_>>()
            .join("+")
    }
}

impl fmt::Display for DisaggregationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (t, n) in &self.groups {
            write!(f, "{n}{t}")?;
        }
        Ok(())
    }
}

impl FromStr for DisaggregationMethod {
    type Err = String;

    /// Accepts `1E3P4D` or `E:1,P:3,D:4` (braces optional).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().trim_start_matches('{').trim_end_matches('}');
        let mut groups = Vec::new();
        if s.contains(':') {
            for part in s.split(',') {
                let (ty, n) = part
                    .split_once(':')
                    .ok_or_else(|| format!("expected TYPE:COUNT, got {part:?}"))?;
                let n = n
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| format!("bad count in {part:?}: {e}"))?;
                groups.push((ty.trim().parse::<InstanceType>()?, n));
            }
        } else {
            let mut rest = s;
            while !rest.is_empty() {
                let digits = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
                if digits == 0 {
                    return Err(format!("expected a count before {rest:?} in method {s:?}"));
                }
                let n = rest[..digits].parse::<usize>().map_err(|e| e.to_string())?;
                rest = &rest[digits..];
                let letters = rest.find(|c: char| c.is_ascii_digit()).unwrap_or(rest.len());
                if letters == 0 {
                    return Err(format!("missing instance type after count {n} in {s:?}"));
                }
                groups.push((rest[..letters].parse::<InstanceType>()?, n));
                rest = &rest[letters..];
            }
        }
        if groups.is_empty() {
            return Err("empty disaggregation method".into());
        }
        Self::new(groups)
    }
}

impl Serialize for DisaggregationMethod {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DisaggregationMethod {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        let m: DisaggregationMethod = "1E3P4D".parse().unwrap();
        assert_eq!(m.to_string(), "1E3P4D");
        assert_eq!(m.total(), 8);
        assert_eq!(m.family(), "E+P+D");
        assert_eq!("{E:1, P:3, D:4}".parse::<DisaggregationMethod>().unwrap(), m);
        assert_eq!(
            "4EP4D".parse::<DisaggregationMethod>().unwrap(),
            DisaggregationMethod::ep_d(4, 4).unwrap()
        );
        assert_eq!(
            "8EPD".parse::<DisaggregationMethod>().unwrap().instance_types().len(),
            8
        );
        let t = "5ED3P".parse::<DisaggregationMethod>().unwrap().instance_types();
        assert_eq!(t[4], InstanceType::ED);
        assert_eq!(t[5], InstanceType::P);
    }

    #[test]
    fn rejects_bad_methods() {
        assert!("4EP".parse::<DisaggregationMethod>().is_err());
        assert!("0E3P4D".parse::<DisaggregationMethod>().is_err());
        assert!("E3P".parse::<DisaggregationMethod>().is_err());
        assert!("3".parse::<DisaggregationMethod>().is_err());
        assert!("".parse::<DisaggregationMethod>().is_err());
    }
}
