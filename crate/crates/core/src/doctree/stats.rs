use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::QASample;

/// Counts per integer bucket plus the median of the raw values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: BTreeMap<u32, usize>,
    pub total: usize,
    pub median: Option<f64>,
}

impl Histogram {
    pub fn from_values(values: impl IntoIterator<Item = u32>) -> Histogram {
        let mut v: Vec<u32> = values.into_iter().collect();
        v.sort_unstable();
        let mut counts = BTreeMap::new();
        for x in &v {
            *counts.entry(*x).or_insert(0) += 1;
        }
        Histogram {
            total: v.len(),
            median: median_sorted(&v),
            counts,
        }
    }

    /// `bucket,count` lines with a header.
    pub fn to_csv(&self, header: &str) -> String {
        let mut out = format!("{header},count\n");
        for (k, c) in &self.counts {
            out.push_str(&format!("{k},{c}\n"));
        }
        out
    }
}

/// Median of sorted integers; the mean of the two middle values for even lengths.
pub fn median_sorted(v: &[u32]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let n = v.len();
    Some(if n % 2 == 1 {
        f64::from(v[n / 2])
    } else {
        (f64::from(v[n / 2 - 1]) + f64::from(v[n / 2])) / 2.0
    })
}

/// FAO distribution over every (question, document) pair.
pub fn fao_histogram(samples: &[QASample]) -> Histogram {
    Histogram::from_values(
        samples
            .iter()
            .flat_map(|s| s.documents.iter().filter_map(|d| d.fao())),
    )
}
