//! Sensitive-attribute schemas and fairness group schemes.
//!
//! A [`Group`] fixes the values of a subset of attributes; the population group
//! fixes none. A [`GroupScheme`] is the ordered list of groups over which
//! fairness is enforced. Ordering is lexicographic over `(indices, values)` so
//! that constraint indices are reproducible across runs.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    cardinalities: Vec<usize>,
    names: Vec<String>,
}

impl AttributeSchema {
    pub fn new(cardinalities: Vec<usize>, names: Vec<String>) -> Result<Self> {
        if cardinalities.is_empty() {
            return Err(Error::Schema(
                "at least one sensitive attribute is required".into(),
            ));
        }
        check_len(cardinalities.len(), names.len(), "attribute names")?;
        if let Some(pos) = cardinalities.iter().position(|&c| c < 2) {
            return Err(Error::Schema(format!(
                "attribute `{}` has cardinality {} (< 2)",
                names[pos], cardinalities[pos]
            )));
        }
        Ok(Self {
            cardinalities,
            names,
        })
    }

    /// `m` binary attributes named `a1..am`.
    pub fn binary(m: usize) -> Result<Self> {
        Self::new(vec![2; m], (1..=m).map(|i| format!("a{i}")).collect())
    }

    pub fn num_attributes(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Number of distinct attribute vectors, `Π_m |A_m|`.
    pub fn num_cells(&self) -> usize {
        self.cardinalities.iter().product()
    }

    pub fn validate(&self, attributes: &[usize]) -> Result<()> {
        check_len(self.num_attributes(), attributes.len(), "attribute vector")?;
        for (m, (&value, &card)) in attributes.iter().zip(&self.cardinalities).enumerate() {
            if value >= card {
                return Err(Error::Schema(format!(
                    "attribute `{}` value {value} exceeds cardinality {card}",
                    self.names[m]
                )));
            }
        }
        Ok(())
    }

    /// All attribute vectors in lexicographic order.
    pub fn cells(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new()];
        for &card in &self.cardinalities {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (0..card).map(move |v| {
                        let mut next = prefix.clone();
                        next.push(v);
                        next
                    })
                })
                .collect();
        }
        out
    }
}

/// The set `{a : a_I = s}`; `I = ∅` is the full population.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Group {
    indices: Vec<usize>,
    values: Vec<usize>,
}

impl Group {
    pub fn population() -> Self {
        Self {
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a group from `(attribute index, required value)` pairs.
    pub fn new(schema: &AttributeSchema, mut pairs: Vec<(usize, usize)>) -> Result<Self> {
        pairs.sort_unstable();
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Schema(format!(
                    "attribute {} constrained twice",
                    w[0].0
                )));
            }
        }
        for &(index, value) in &pairs {
            let card = *schema.cardinalities.get(index).ok_or_else(|| {
                Error::Schema(format!(
                    "attribute index {index} out of range for {} attributes",
                    schema.num_attributes()
                ))
            })?;
            if value >= card {
                return Err(Error::Schema(format!(
                    "value {value} exceeds cardinality {card} of attribute {index}"
                )));
            }
        }
        let (indices, values) = pairs.into_iter().unzip();
        Ok(Self { indices, values })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    pub fn is_population(&self) -> bool {
        self.indices.is_empty()
    }

    /// Membership without dimension checks; `a` must cover every constrained index.
    #[inline]
    pub fn contains(&self, a: &[usize]) -> bool {
        self.indices
            .iter()
            .zip(&self.values)
            .all(|(&i, &v)| a[i] == v)
    }

    pub fn label(&self, schema: &AttributeSchema) -> String {
        if self.is_population() {
            return "all".to_string();
        }
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| format!("{}={v}", schema.names[i]))
            .collect::<Vec<_>>()
            .join("&")
    }
}

pub fn membership(schema: &AttributeSchema, group: &Group, a: &[usize]) -> Result<bool> {
    schema.validate(a)?;
    Ok(group.contains(a))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeKind {
    /// Groups defined by a single attribute; the others are ignored.
    Unrestricted(usize),
    Independent,
    Intersectional,
    Gerrymandering,
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeKind::Unrestricted(i) => write!(f, "unrestricted({i})"),
            SchemeKind::Independent => f.write_str("independent"),
            SchemeKind::Intersectional => f.write_str("intersectional"),
            SchemeKind::Gerrymandering => f.write_str("gerrymandering"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupScheme {
    kind: SchemeKind,
    schema: AttributeSchema,
    groups: Vec<Group>,
}

impl GroupScheme {
    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// True when every attribute vector lies in exactly one group.
    pub fn is_partition(&self) -> bool {
        matches!(
            self.kind,
            SchemeKind::Intersectional | SchemeKind::Unrestricted(_)
        )
    }

    /// Indices of the groups containing `a`.
    pub fn groups_containing(&self, a: &[usize]) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.contains(a))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.label(&self.schema)).collect()
    }
}

pub fn enumerate_groups(schema: &AttributeSchema, kind: SchemeKind) -> Result<GroupScheme> {
    let m = schema.num_attributes();
    let subsets: Vec<Vec<usize>> = match kind {
        SchemeKind::Unrestricted(i) => {
            if i >= m {
                return Err(Error::Schema(format!(
                    "unrestricted attribute index {i} out of range for {m} attributes"
                )));
            }
            vec![vec![i]]
        }
        SchemeKind::Independent => (0..m).map(|i| vec![i]).collect(),
        SchemeKind::Intersectional => vec![(0..m).collect()],
        SchemeKind::Gerrymandering => (0u64..(1u64 << m))
            .map(|mask| (0..m).filter(|i| mask & (1 << i) != 0).collect())
            .collect(),
    };

    let mut groups = Vec::new();
    for indices in subsets {
        let cards: Vec<usize> = indices.iter().map(|&i| schema.cardinalities[i]).collect();
        let sub = AttributeSchema {
            names: vec![String::new(); cards.len()],
            cardinalities: cards,
        };
        let assignments = if indices.is_empty() {
            vec![Vec::new()]
        } else {
            sub.cells()
        };
        for values in assignments {
            groups.push(Group {
                indices: indices.clone(),
                values,
            });
        }
    }
    groups.sort();
    Ok(GroupScheme {
        kind,
        schema: schema.clone(),
        groups,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupStat {
    pub count: usize,
    pub fraction: f64,
}

impl GroupStat {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Per-row group memberships, precomputed once for a dataset and a scheme.
#[derive(Debug, Clone)]
pub struct MembershipIndex {
    rows: Vec<Vec<u32>>,
    stats: Vec<GroupStat>,
}

impl MembershipIndex {
    pub fn build(scheme: &GroupScheme, attributes: &[Vec<usize>]) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::Data("no rows to index".into()));
        }
        let mut counts = vec![0usize; scheme.len()];
        let mut rows = Vec::with_capacity(attributes.len());
        // Rows sharing an attribute vector share a membership list.
        let mut cache: std::collections::HashMap<&[usize], Vec<u32>> = Default::default();
        for a in attributes {
            let list = match cache.get(a.as_slice()) {
                Some(list) => list.clone(),
                None => {
                    scheme.schema.validate(a)?;
                    let list: Vec<u32> = scheme
                        .groups_containing(a)
                        .into_iter()
                        .map(|g| g as u32)
                        .collect();
                    cache.insert(a.as_slice(), list.clone());
                    list
                }
            };
            for &g in &list {
                counts[g as usize] += 1;
            }
            rows.push(list);
        }
        let n = attributes.len() as f64;
        let stats = counts
            .into_iter()
            .map(|count| GroupStat {
                count,
                fraction: count as f64 / n,
            })
            .collect();
        Ok(Self { rows, stats })
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn groups_of(&self, row: usize) -> &[u32] {
        &self.rows[row]
    }

    pub fn stats(&self) -> &[GroupStat] {
        &self.stats
    }
}

/// Counts `n_g` and fractions `π̂_g = n_g / n`; empty groups have `count == 0`.
pub fn empirical_group_stats(
    attributes: &[Vec<usize>],
    scheme: &GroupScheme,
) -> Result<Vec<GroupStat>> {
    Ok(MembershipIndex::build(scheme, attributes)?.stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_counts_for_three_binary_attributes() {
        let schema = AttributeSchema::binary(3).unwrap();
        let count = |kind| enumerate_groups(&schema, kind).unwrap().len();
        assert_eq!(count(SchemeKind::Independent), 6);
        assert_eq!(count(SchemeKind::Intersectional), 8);
        assert_eq!(count(SchemeKind::Gerrymandering), 27);
        assert_eq!(count(SchemeKind::Unrestricted(2)), 2);
    }

    #[test]
    fn single_binary_attribute_degenerate_counts() {
        let schema = AttributeSchema::binary(1).unwrap();
        let count = |kind| enumerate_groups(&schema, kind).unwrap().len();
        assert_eq!(count(SchemeKind::Unrestricted(0)), 2);
        assert_eq!(count(SchemeKind::Independent), 2);
        assert_eq!(count(SchemeKind::Intersectional), 2);
        assert_eq!(count(SchemeKind::Gerrymandering), 3);
        let gerry = enumerate_groups(&schema, SchemeKind::Gerrymandering).unwrap();
        assert!(gerry.groups()[0].is_population());
    }

    #[test]
    fn unrestricted_index_out_of_range() {
        let schema = AttributeSchema::binary(2).unwrap();
        assert!(matches!(
            enumerate_groups(&schema, SchemeKind::Unrestricted(2)),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn mixed_cardinalities() {
        let schema = AttributeSchema::new(vec![2, 3], vec!["sex".into(), "race".into()]).unwrap();
        let count = |kind| enumerate_groups(&schema, kind).unwrap().len();
        assert_eq!(count(SchemeKind::Independent), 5);
        assert_eq!(count(SchemeKind::Intersectional), 6);
        assert_eq!(count(SchemeKind::Gerrymandering), 3 * 4);
        assert_eq!(count(SchemeKind::Unrestricted(1)), 3);
    }

    #[test]
    fn membership_examples() {
        let schema = AttributeSchema::binary(3).unwrap();
        // Attribute positions are 0-based here.
        let g1 = Group::new(&schema, vec![(0, 1)]).unwrap();
        assert!(membership(&schema, &g1, &[1, 0, 1]).unwrap());
        let g12 = Group::new(&schema, vec![(0, 1), (1, 1)]).unwrap();
        assert!(!membership(&schema, &g12, &[1, 0, 1]).unwrap());
        assert!(membership(&schema, &Group::population(), &[0, 1, 0]).unwrap());
        assert!(membership(&schema, &g1, &[1, 0]).is_err());
        assert!(membership(&schema, &g1, &[1, 0, 2]).is_err());
    }

    #[test]
    fn schema_validation() {
        assert!(AttributeSchema::new(vec![], vec![]).is_err());
        assert!(AttributeSchema::new(vec![1], vec!["x".into()]).is_err());
        assert!(AttributeSchema::new(vec![2], vec![]).is_err());
    }

    #[test]
    fn uniform_product_stats() {
        let schema = AttributeSchema::binary(2).unwrap();
        let scheme = enumerate_groups(&schema, SchemeKind::Independent).unwrap();
        let rows = vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]];
        for stat in empirical_group_stats(&rows, &scheme).unwrap() {
            assert_eq!(stat.count, 2);
            assert_eq!(stat.fraction, 0.5);
        }
    }

    #[test]
    fn degenerate_support_flags_empty_groups() {
        let schema = AttributeSchema::binary(2).unwrap();
        let scheme = enumerate_groups(&schema, SchemeKind::Intersectional).unwrap();
        let rows = vec![vec![1, 1]; 4];
        let stats = empirical_group_stats(&rows, &scheme).unwrap();
        for (group, stat) in scheme.groups().iter().zip(&stats) {
            if group.values() == [1, 1] {
                assert_eq!(stat.fraction, 1.0);
            } else {
                assert!(stat.is_empty());
                assert_eq!(stat.fraction, 0.0);
            }
        }
    }

    #[test]
    fn gerrymandering_stats_on_eight_uniform_cells() {
        let schema = AttributeSchema::binary(3).unwrap();
        let scheme = enumerate_groups(&schema, SchemeKind::Gerrymandering).unwrap();
        let rows = schema.cells();
        let stats = empirical_group_stats(&rows, &scheme).unwrap();
        assert_eq!(stats.len(), 27);
        for (group, stat) in scheme.groups().iter().zip(&stats) {
            // Brute force: count the cells agreeing on every constrained index.
            let brute = rows
                .iter()
                .filter(|a| {
                    group
                        .indices()
                        .iter()
                        .zip(group.values())
                        .all(|(&i, &v)| a[i] == v)
                })
                .count();
            assert_eq!(stat.count, brute);
            let expected = match group.indices().len() {
                0 => 1.0,
                1 => 0.5,
                2 => 0.25,
                _ => 0.125,
            };
            assert_eq!(stat.fraction, expected);
        }
    }

    #[test]
    fn lexicographic_ordering() {
        let schema = AttributeSchema::binary(2).unwrap();
        let scheme = enumerate_groups(&schema, SchemeKind::Gerrymandering).unwrap();
        let labels = scheme.labels();
        assert_eq!(
            labels,
            vec![
                "all",
                "a1=0",
                "a1=1",
                "a1=0&a2=0",
                "a1=0&a2=1",
                "a1=1&a2=0",
                "a1=1&a2=1",
                "a2=0",
                "a2=1"
            ]
        );
        let mut sorted = scheme.groups().to_vec();
        sorted.sort();
        assert_eq!(sorted, scheme.groups());
    }
}
